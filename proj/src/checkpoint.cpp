#include "nechdr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <string>

#include "nechdr/image_io.hpp"

namespace nechdr {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'N', 'E', 'C', 'H', 'D', 'R', 'C', 'K'};

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void floats(std::span<const float> values) {
    for (float f : values) u32(std::bit_cast<std::uint32_t>(f));
  }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  std::vector<unsigned char> take() { return std::move(bytes_); }

 private:
  std::vector<unsigned char> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const unsigned char> bytes) : bytes_(bytes) {}

  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("checkpoint truncated in ") + what, pos_);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::string str(const char* what) {
    const std::uint32_t n = u32(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::vector<float> floats(std::size_t count, const char* what) {
    if (count > (bytes_.size() - pos_) / 4) need(count * 4, what);
    std::vector<float> out(count);
    for (auto& f : out) f = std::bit_cast<float>(u32(what));
    return out;
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }
  std::span<const unsigned char> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const unsigned char> bytes_;
  std::size_t pos_ = 0;
};

void write_shape(Writer& w, const Shape& s) {
  w.u32(static_cast<std::uint32_t>(s.n));
  w.u32(static_cast<std::uint32_t>(s.c));
  w.u32(static_cast<std::uint32_t>(s.h));
  w.u32(static_cast<std::uint32_t>(s.w));
}

Shape read_shape(Reader& r) {
  Shape s;
  s.n = static_cast<int>(r.u32("shape"));
  s.c = static_cast<int>(r.u32("shape"));
  s.h = static_cast<int>(r.u32("shape"));
  s.w = static_cast<int>(r.u32("shape"));
  return s;
}

}  // namespace

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.u32(kCheckpointVersion);
  w.u32(ckpt.arch.variant == Variant::kTwoExposure ? 2 : 3);
  for (int c : ckpt.arch.channels) w.u32(static_cast<std::uint32_t>(c));
  for (int c : ckpt.arch.blend_hidden) w.u32(static_cast<std::uint32_t>(c));
  w.u32(static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& [name, t] : ckpt.params) {
    w.str(name);
    write_shape(w, t.shape());
    w.floats(t.data());
  }
  w.u32(ckpt.optim ? 1 : 0);
  if (ckpt.optim) {
    const OptimState& o = *ckpt.optim;
    w.u64(static_cast<std::uint64_t>(o.step));
    w.f64(o.config.lr);
    w.f64(o.config.beta1);
    w.f64(o.config.beta2);
    w.f64(o.config.weight_decay);
    w.f64(o.config.eps);
    w.u32(static_cast<std::uint32_t>(o.m.size()));
    for (const auto& [name, m] : o.m) {
      const auto vit = o.v.find(name);
      if (vit == o.v.end() || vit->second.size() != m.size()) {
        throw CheckpointError("optimizer moments for " + name + " are inconsistent");
      }
      w.str(name);
      w.u64(m.size());
      w.floats(m);
      w.floats(vit->second);
    }
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const unsigned char> bytes) {
  Reader r(bytes);
  auto magic = r.take(sizeof(kMagic), "magic");
  if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("not a checkpoint file (bad magic)", 0);
  }
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) +
                          " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ckpt;
  const std::uint32_t z = r.u32("variant");
  if (z != 2 && z != 3) throw FormatError("bad variant field " + std::to_string(z), r.pos() - 4);
  ckpt.arch.variant = z == 2 ? Variant::kTwoExposure : Variant::kThreeExposure;
  for (int& c : ckpt.arch.channels) c = static_cast<int>(r.u32("architecture"));
  for (int& c : ckpt.arch.blend_hidden) c = static_cast<int>(r.u32("architecture"));
  const std::uint32_t count = r.u32("record count");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str("record name");
    const Shape s = read_shape(r);
    std::vector<float> values = r.floats(s.numel(), name.c_str());
    Tensor t(s, std::move(values));
    t.set_requires_grad(true);
    ckpt.params.set(name, std::move(t));
  }
  const std::uint32_t has_optim = r.u32("optimizer flag");
  if (has_optim) {
    OptimState o;
    o.step = static_cast<std::int64_t>(r.u64("optimizer"));
    o.config.lr = r.f64("optimizer");
    o.config.beta1 = r.f64("optimizer");
    o.config.beta2 = r.f64("optimizer");
    o.config.weight_decay = r.f64("optimizer");
    o.config.eps = r.f64("optimizer");
    const std::uint32_t n = r.u32("optimizer");
    for (std::uint32_t i = 0; i < n; ++i) {
      std::string name = r.str("optimizer record");
      const std::uint64_t len = r.u64("optimizer record");
      o.m[name] = r.floats(len, name.c_str());
      o.v[name] = r.floats(len, name.c_str());
    }
    ckpt.optim = std::move(o);
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint", r.pos());
  return ckpt;
}

void write_file_atomic(const fs::path& path, std::span<const unsigned char> bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw DataError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes);
}

void check_compatible(const Checkpoint& ckpt, const ArchConfig& expected) {
  if (ckpt.arch.variant != expected.variant) {
    throw CheckpointError("checkpoint is the " + to_string(ckpt.arch.variant) +
                          "-exposure variant but the configuration expects " +
                          to_string(expected.variant));
  }
  if (ckpt.arch.channels != expected.channels || ckpt.arch.blend_hidden != expected.blend_hidden) {
    throw CheckpointError("checkpoint channel widths differ from the configured architecture");
  }
  const ModelParams reference = init_params(expected, 0);
  std::set<std::string> seen;
  for (const auto& [name, t] : reference) {
    if (!ckpt.params.contains(name)) throw CheckpointError("checkpoint is missing layer " + name);
    const Shape& got = ckpt.params.at(name).shape();
    if (!(got == t.shape())) {
      throw CheckpointError("layer " + name + " has shape " + got.str() + ", expected " +
                            t.shape().str());
    }
    seen.insert(name);
  }
  for (const auto& [name, t] : ckpt.params) {
    if (!seen.count(name)) throw CheckpointError("checkpoint has unexpected layer " + name);
  }
}

Checkpoint load_checkpoint(const fs::path& path, const ArchConfig& expected) {
  Checkpoint ckpt = read_checkpoint(path);
  check_compatible(ckpt, expected);
  return ckpt;
}

}  // namespace nechdr
