#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "adanat/backbone.hpp"
#include "adanat/error.hpp"
#include "adanat/eval.hpp"
#include "adanat/policy.hpp"
#include "adanat/ppo.hpp"
#include "adanat/sampler.hpp"
#include "adanat/token_world.hpp"

namespace py = pybind11;
using namespace adanat;

namespace {

py::dict step_dict(const StepRecord& r) {
  py::dict d;
  d["t"] = r.t;
  d["m"] = r.action.m;
  d["tau1"] = r.action.tau1;
  d["tau2"] = r.action.tau2;
  d["w"] = r.action.w;
  d["masked_count"] = r.masked_count;
  d["logprob"] = r.logprob;
  d["value"] = r.value;
  return d;
}

// (tokens, steps) per sample
py::list run_generator(const MaskedPredictor& pred, const StepProvider& provider, int horizon, int n,
                       std::uint64_t seed, int workers) {
  const auto trajs = generate_parallel(pred, provider, horizon, n, seed, workers);
  py::list out;
  for (const auto& t : trajs) {
    py::list steps;
    for (const auto& r : t.steps) steps.append(step_dict(r));
    out.append(py::make_tuple(t.final_tokens.tokens, t.cls, steps));
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_adanat, m) {
  m.doc() = "Adaptive masked-token decoding policies on toy token worlds";

  // translators run newest first, so the base class goes first
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<MissingArtifactError>(m, "MissingArtifactError", PyExc_FileNotFoundError);

  py::class_<WorldSpec>(m, "WorldSpec")
      .def_readonly("n_tokens", &WorldSpec::n_tokens)
      .def_readonly("grid_height", &WorldSpec::grid_height)
      .def_readonly("grid_width", &WorldSpec::grid_width)
      .def_readonly("codebook_size", &WorldSpec::codebook_size)
      .def_readonly("n_classes", &WorldSpec::n_classes)
      .def("fingerprint", &WorldSpec::fingerprint)
      .def("to_yaml", &WorldSpec::to_yaml);
  m.def("default_toy_world", &default_toy_world);
  m.def("tiny_markov_world", &tiny_markov_world);
  m.def("load_world_spec", &load_world_spec, py::arg("path"));
  m.def("parse_world_spec", &parse_world_spec, py::arg("yaml_text"));

  m.def(
      "sample_world",
      [](const WorldSpec& w, int cls, std::uint64_t seed) {
        Rng rng(seed);
        return sample_world(w, cls, rng).tokens;
      },
      py::arg("world"), py::arg("cls"), py::arg("seed"));
  m.def(
      "decode_tokens",
      [](const WorldSpec& w, const std::vector<int>& tokens) {
        const Codebook cb = Codebook::make_default(w.codebook_size);
        const Image im = decode_tokens(TokenSequence(tokens, w.grid_height, w.grid_width), cb);
        py::array_t<double> a({im.height, im.width, im.channels});
        std::copy(im.pixels.begin(), im.pixels.end(), a.mutable_data());
        return a;
      },
      py::arg("world"), py::arg("tokens"), "H x W x C pixels in [0, 1]");
  m.def(
      "sequence_probability",
      [](const WorldSpec& w, int cls, const std::vector<int>& tokens) { return sequence_probability(w, cls, tokens); },
      py::arg("world"), py::arg("cls"), py::arg("tokens"));

  py::class_<MaskedPredictor>(m, "MaskedPredictor")
      .def_property_readonly("n_tokens", &MaskedPredictor::n_tokens)
      .def_property_readonly("codebook_size", &MaskedPredictor::codebook_size)
      .def(
          "predict_logits",
          [](const MaskedPredictor& p, const std::vector<int>& tokens, int cls) {
            return p.predict_logits(TokenSequence(tokens, p.grid_height(), p.grid_width()), cls);
          },
          py::arg("tokens"), py::arg("cls"), "N x K logits; use -1 for MASK and kNullClass for unconditional");
  py::class_<TabularPredictor, MaskedPredictor>(m, "TabularPredictor").def(py::init<WorldSpec>(), py::arg("world"));
  py::class_<NeuralPredictor, MaskedPredictor>(m, "NeuralPredictor")
      .def_static("load", &NeuralPredictor::load, py::arg("path"), py::arg("world"));
  m.attr("MASK") = kMask;
  m.attr("NULL_CLASS") = kNullClass;

  py::class_<PolicyStepParams>(m, "PolicyStepParams")
      .def(py::init<>())
      .def(py::init([](double mm, double t1, double t2, double w) { return PolicyStepParams{mm, t1, t2, w}; }),
           py::arg("m"), py::arg("tau1"), py::arg("tau2"), py::arg("w"))
      .def_readwrite("m", &PolicyStepParams::m)
      .def_readwrite("tau1", &PolicyStepParams::tau1)
      .def_readwrite("tau2", &PolicyStepParams::tau2)
      .def_readwrite("w", &PolicyStepParams::w)
      .def("__repr__", [](const PolicyStepParams& p) {
        return "PolicyStepParams(m=" + std::to_string(p.m) + ", tau1=" + std::to_string(p.tau1) +
               ", tau2=" + std::to_string(p.tau2) + ", w=" + std::to_string(p.w) + ")";
      });

  m.def(
      "static_schedule",
      [](int horizon, int t, double lam, double k) {
        ScheduleConfig c;
        c.horizon = horizon;
        c.tau2.scale = lam;
        c.w.scale = k;
        return static_schedule(c, t);
      },
      py::arg("horizon"), py::arg("t"), py::arg("lam") = 1.0, py::arg("k") = 3.0);
  m.def("remask_count", &remask_count, py::arg("m"), py::arg("n"));
  m.def(
      "squash",
      [](const std::array<double, 4>& raw) { return squash(raw); }, py::arg("raw"));
  m.def("gaussian_logprob", &gaussian_logprob, py::arg("raw"), py::arg("mean"), py::arg("sigma"));
  m.def("clipped_surrogate", &clipped_surrogate, py::arg("rho"), py::arg("adv"), py::arg("eps") = 0.2);

  m.def(
      "generate_static",
      [](const MaskedPredictor& pred, int horizon, int n, std::uint64_t seed, int workers) {
        ScheduleConfig c;
        c.horizon = horizon;
        const StaticScheduleProvider prov(c);
        return run_generator(pred, prov, horizon, n, seed, workers);
      },
      py::arg("predictor"), py::arg("horizon"), py::arg("n"), py::arg("seed"), py::arg("workers") = 1,
      "Cosine-schedule samples as (tokens, class, steps) tuples");
  m.def(
      "generate_policy",
      [](const MaskedPredictor& pred, const std::string& policy_path, int n, std::uint64_t seed, int workers) {
        const PolicyNet net = PolicyNet::load(policy_path);
        const PolicyProvider prov(net, false);
        return run_generator(pred, prov, net.horizon(), n, seed, workers);
      },
      py::arg("predictor"), py::arg("policy_path"), py::arg("n"), py::arg("seed"), py::arg("workers") = 1,
      "Samples under a trained policy checkpoint (deterministic actions)");

  py::class_<GaussianStats>(m, "GaussianStats")
      .def_readonly("mean", &GaussianStats::mean)
      .def_readonly("cov", &GaussianStats::cov)
      .def_readonly("count", &GaussianStats::count);
  m.def("fit_stats_features", &fit_stats_features, py::arg("features"), "features: D x n");
  m.def("frechet_distance", &frechet_distance, py::arg("a"), py::arg("b"));
  m.def("diversity_from_features", &diversity_from_features, py::arg("features"));
  m.def("load_stats", &load_stats, py::arg("path"));
}
