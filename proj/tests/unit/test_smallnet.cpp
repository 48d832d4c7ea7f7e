#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "adanat/checkpoint.hpp"
#include "adanat/error.hpp"
#include "adanat/smallnet.hpp"
#include "unit/test_util.hpp"

using namespace adanat;

namespace {

SmallNet adaln_net(int in, int hidden, int out, int cond) {
  return SmallNet({{LayerKind::kAffine, in, hidden},
                   {LayerKind::kAdaLN, hidden, hidden},
                   {LayerKind::kActivation, hidden, hidden, Activation::kSilu},
                   {LayerKind::kAffine, hidden, hidden},
                   {LayerKind::kAdaLN, hidden, hidden},
                   {LayerKind::kActivation, hidden, hidden, Activation::kTanh},
                   {LayerKind::kAffine, hidden, out}},
                  cond);
}

// Weighted-sum loss so every output element contributes to the checked gradient.
void check_gradients(SmallNet net, int batch, int cond_dim, std::uint64_t seed) {
  Rng rng(seed);
  for (int trial = 0; trial < 10; ++trial) {
    net.set_params(testutil::random_vector(static_cast<Eigen::Index>(net.num_params()), rng, 0.5));
    const Matrix x = testutil::random_matrix(net.input_dim(), batch, rng);
    Matrix c;
    if (cond_dim > 0) c = testutil::random_matrix(cond_dim, batch, rng);
    const Matrix up = testutil::random_matrix(net.output_dim(), batch, rng);
    const Matrix* cp = cond_dim > 0 ? &c : nullptr;
    const Vector analytic = net.backward(net.forward_trace(x, cp), up);
    auto loss = [&](const Vector& p) {
      SmallNet copy = net;
      copy.set_params(p);
      return (copy.forward(x, cp).array() * up.array()).sum();
    };
    const Vector numeric = testutil::central_fd(loss, net.params());
    CHECK(testutil::max_rel_err(analytic, numeric) < 1e-4);

    Matrix gx;
    net.backward(net.forward_trace(x, cp), up, &gx);
    Vector xflat = Eigen::Map<const Vector>(x.data(), x.size());
    auto loss_x = [&](const Vector& v) {
      const Matrix xm = Eigen::Map<const Matrix>(v.data(), x.rows(), x.cols());
      return (net.forward(xm, cp).array() * up.array()).sum();
    };
    const Vector gx_num = testutil::central_fd(loss_x, xflat);
    CHECK(testutil::max_rel_err(Eigen::Map<const Vector>(gx.data(), gx.size()), gx_num) < 1e-4);
  }
}

}  // namespace

TEST_CASE("zero-initialised final layer outputs its bias") {
  SmallNet net = SmallNet::mlp(3, {5}, 2, Activation::kRelu, true);
  Rng rng(1);
  net.initialize(rng);
  Rng xr(2);
  const Matrix y = net.forward(testutil::random_matrix(3, 4, xr));
  CHECK(y.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("identity affine returns its input") {
  SmallNet net({{LayerKind::kAffine, 3, 3}});
  Vector p = Vector::Zero(12);
  for (int i = 0; i < 3; ++i) p[i * 3 + i] = 1.0;
  net.set_params(p);
  Matrix x(3, 2);
  x << 1, -2, 3, 4, -5, 6;
  CHECK((net.forward(x) - x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("two-layer forward matches a straight-line recomputation") {
  SmallNet net = SmallNet::mlp(2, {3}, 1, Activation::kTanh);
  Rng rng(4);
  net.initialize(rng);
  const Vector& p = net.params();
  // layout: W1 (3x2, column-major), b1 (3), W2 (1x3), b2 (1)
  const double x0 = 0.3, x1 = -1.1;
  double out = p[6 + 3 + 3];
  for (int r = 0; r < 3; ++r) {
    const double pre = p[r] * x0 + p[r + 3] * x1 + p[6 + r];
    out += p[9 + r] * std::tanh(pre);
  }
  Matrix x(2, 1);
  x << x0, x1;
  CHECK(net.forward(x)(0, 0) == doctest::Approx(out).epsilon(1e-15));
}

TEST_CASE("scalar affine gradient") {
  SmallNet net({{LayerKind::kAffine, 1, 1}});
  Vector p(2);
  p << 0.7, -0.2;
  net.set_params(p);
  Matrix x(1, 1);
  x << 2.0;
  const Vector g = net.backward(net.forward_trace(x), Matrix::Ones(1, 1));
  CHECK(g[0] == 2.0);
  CHECK(g[1] == 1.0);
}

TEST_CASE("constant-output net has zero weight gradient") {
  SmallNet net({{LayerKind::kAffine, 3, 2}});
  net.set_params(Vector::Zero(8));
  const Matrix x = Matrix::Zero(3, 5);
  const Vector g = net.backward(net.forward_trace(x), Matrix::Ones(2, 5));
  CHECK(g.head(6).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("backward without a trace is rejected") {
  SmallNet net = SmallNet::mlp(2, {2}, 1, Activation::kRelu);
  CHECK_THROWS_AS(net.backward(ForwardTrace{}, Matrix::Ones(1, 1)), std::logic_error);
  CHECK_THROWS_AS(net.forward(Matrix::Zero(3, 1)), ShapeError);
}

TEST_CASE("finite differences: every architecture in use") {
  check_gradients(SmallNet::mlp(6, {7, 5}, 3, Activation::kRelu), 4, 0, 11);
  check_gradients(SmallNet::mlp(6, {7, 5}, 1, Activation::kLeakyRelu), 4, 0, 12);
  check_gradients(SmallNet::mlp(5, {4}, 2, Activation::kSilu), 3, 0, 13);
  check_gradients(adaln_net(5, 6, 5, 3), 4, 3, 14);
}

TEST_CASE("forward and backward are deterministic") {
  SmallNet net = adaln_net(4, 5, 2, 2);
  Rng rng(3);
  net.set_params(testutil::random_vector(static_cast<Eigen::Index>(net.num_params()), rng));
  const Matrix x = testutil::random_matrix(4, 3, rng);
  const Matrix c = testutil::random_matrix(2, 3, rng);
  const Matrix up = testutil::random_matrix(2, 3, rng);
  CHECK(net.forward(x, &c) == net.forward(x, &c));
  CHECK(net.backward(net.forward_trace(x, &c), up) == net.backward(net.forward_trace(x, &c), up));
}

TEST_CASE("Adam: hand-computed three-step trace") {
  Adam opt(1, {0.1, 0.9, 0.999, 1e-8});
  Vector p(1);
  p << 1.0;
  const double expected[3] = {0.900000002, 0.9366103542405654, 0.8946447927181046};
  const double grads[3] = {0.5, -1.0, 2.0};
  for (int i = 0; i < 3; ++i) {
    Vector g(1);
    g << grads[i];
    opt.step(p, g);
    CHECK(p[0] == doctest::Approx(expected[i]).epsilon(1e-13));
  }
  CHECK(opt.step_count() == 3);
}

TEST_CASE("Adam: first step is -lr sign(g); zero gradient is a fixed point") {
  Adam opt(3, {1e-3, 0.9, 0.999, 1e-8});
  Vector p = Vector::Zero(3);
  Vector g(3);
  g << 1e-4, -250.0, 3.0;
  opt.step(p, g);
  CHECK(p[0] == doctest::Approx(-1e-3).epsilon(1e-3));
  CHECK(p[1] == doctest::Approx(1e-3).epsilon(1e-6));
  CHECK(p[2] == doctest::Approx(-1e-3).epsilon(1e-6));

  Adam fresh(2, {});
  Vector q(2);
  q << 0.5, -0.5;
  const Vector before = q;
  fresh.step(q, Vector::Zero(2));
  CHECK(q == before);

  const Vector m_before = opt.first_moment();
  const Vector p_before = p;
  opt.step(p, Vector::Zero(3));
  CHECK(opt.first_moment().cwiseAbs().sum() < m_before.cwiseAbs().sum());
}

TEST_CASE("Adam rejects non-finite gradients without side effects") {
  Adam opt(2, {});
  Vector p(2);
  p << 1.0, 2.0;
  Vector g(2);
  g << 1.0, std::nan("");
  CHECK_THROWS_AS(opt.step(p, g), NumericalError);
  CHECK(p[0] == 1.0);
  CHECK(opt.step_count() == 0);
  CHECK(opt.first_moment().cwiseAbs().sum() == 0.0);
}

TEST_CASE("checkpoint round trip is bit exact") {
  SmallNet a = adaln_net(4, 5, 3, 2);
  Rng rng(6);
  a.set_params(testutil::random_vector(static_cast<Eigen::Index>(a.num_params()), rng));
  Checkpoint ck;
  ck.meta["kind"] = "test";
  ck.meta["note"] = "x y";
  ck.nets = {a, SmallNet::mlp(2, {3}, 1, Activation::kRelu)};
  const auto bytes = serialize_checkpoint(ck);
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "ADANATCK");
  const Checkpoint back = deserialize_checkpoint(bytes);
  CHECK(back.meta == ck.meta);
  REQUIRE(back.nets.size() == 2);
  CHECK(back.nets[0].layers() == a.layers());
  CHECK(back.nets[0].cond_dim() == 2);
  for (Eigen::Index i = 0; i < a.params().size(); ++i) {
    REQUIRE(std::bit_cast<std::uint64_t>(back.nets[0].params()[i]) == std::bit_cast<std::uint64_t>(a.params()[i]));
  }
  CHECK(serialize_checkpoint(back) == bytes);

  const auto path = std::filesystem::temp_directory_path() / "adanat_ck_test.ckpt";
  save_checkpoint(path.string(), ck);
  CHECK(serialize_checkpoint(load_checkpoint(path.string())) == bytes);
  CHECK_THROWS_AS(load_checkpoint((path.string() + ".missing")), MissingArtifactError);
  auto broken = bytes;
  broken.resize(broken.size() - 3);
  CHECK_THROWS_AS(deserialize_checkpoint(broken), MissingArtifactError);
}
