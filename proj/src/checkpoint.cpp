#include "adanat/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "adanat/error.hpp"

namespace adanat {

namespace {

class Writer {
 public:
  void u32(std::uint32_t v) { put_le(v, 4); }
  void u64(std::uint64_t v) { put_le(v, 8); }
  void f64(double v) { put_le(std::bit_cast<std::uint64_t>(v), 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  std::vector<std::uint8_t> bytes;

 private:
  void put_le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(get_le(4)); }
  std::uint64_t u64() { return get_le(8); }
  double f64() { return std::bit_cast<double>(get_le(8)); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  void raw(char* out, std::size_t n) {
    need(n);
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw MissingArtifactError("checkpoint: truncated file");
  }
  std::uint64_t get_le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes.insert(w.bytes.end(), kCheckpointMagic, kCheckpointMagic + 8);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(ckpt.meta.size()));
  for (const auto& [k, v] : ckpt.meta) {
    w.str(k);
    w.str(v);
  }
  w.u32(static_cast<std::uint32_t>(ckpt.nets.size()));
  for (const auto& net : ckpt.nets) {
    w.u32(static_cast<std::uint32_t>(net.cond_dim()));
    w.u32(static_cast<std::uint32_t>(net.layers().size()));
    for (const auto& l : net.layers()) {
      w.u32(static_cast<std::uint32_t>(l.kind));
      w.u32(static_cast<std::uint32_t>(l.in));
      w.u32(static_cast<std::uint32_t>(l.out));
      w.u32(static_cast<std::uint32_t>(l.act));
      w.u32(l.zero_init ? 1u : 0u);
    }
    w.u64(net.num_params());
    for (Eigen::Index i = 0; i < net.params().size(); ++i) w.f64(net.params()[i]);
  }
  return std::move(w.bytes);
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  char magic[8];
  r.raw(magic, 8);
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0) throw MissingArtifactError("checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw MissingArtifactError("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const std::uint32_t n_meta = r.u32();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.str();
    ckpt.meta[k] = r.str();
  }
  const std::uint32_t n_nets = r.u32();
  for (std::uint32_t n = 0; n < n_nets; ++n) {
    const auto cond_dim = static_cast<int>(r.u32());
    const std::uint32_t n_layers = r.u32();
    std::vector<LayerSpec> layers(n_layers);
    for (auto& l : layers) {
      l.kind = static_cast<LayerKind>(r.u32());
      l.in = static_cast<int>(r.u32());
      l.out = static_cast<int>(r.u32());
      l.act = static_cast<Activation>(r.u32());
      l.zero_init = r.u32() != 0;
    }
    SmallNet net(std::move(layers), cond_dim);
    const std::uint64_t n_params = r.u64();
    if (n_params != net.num_params()) throw MissingArtifactError("checkpoint: parameter count does not match layers");
    Vector p(static_cast<Eigen::Index>(n_params));
    for (std::uint64_t i = 0; i < n_params; ++i) p[static_cast<Eigen::Index>(i)] = r.f64();
    net.set_params(p);
    ckpt.nets.push_back(std::move(net));
  }
  if (!r.done()) throw MissingArtifactError("checkpoint: trailing bytes");
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("checkpoint not found: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize_checkpoint(bytes);
  } catch (const std::invalid_argument& e) {
    throw MissingArtifactError(std::string("checkpoint: malformed layers: ") + e.what());
  }
}

}  // namespace adanat
