#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nechdr/tensor.hpp"

namespace nechdr {

/// Malformed or truncated file contents. offset() is the byte position at
/// which parsing stopped.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// Missing files, gaps in numbered sequences, and other dataset problems.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Three-channel float image stored as planar RGB. The tag keeps LDR and HDR
/// buffers from being mixed up at call sites.
template <typename Tag>
class Image3 {
 public:
  static constexpr int kChannels = 3;

  Image3() = default;
  Image3(int height, int width, float fill = 0.0f)
      : height_(height), width_(width),
        values_(static_cast<std::size_t>(kChannels) * height * width, fill) {}

  int height() const { return height_; }
  int width() const { return width_; }
  bool empty() const { return values_.empty(); }

  float& at(int c, int y, int x) { return values_[index(c, y, x)]; }
  float at(int c, int y, int x) const { return values_[index(c, y, x)]; }

  std::span<float> values() { return values_; }
  std::span<const float> values() const { return values_; }

  friend bool operator==(const Image3&, const Image3&) = default;

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<float> values_;
};

struct LdrTag {};
struct HdrTag {};

/// Display-referred frame with values in [0,1].
using LdrImage = Image3<LdrTag>;
/// Linear radiance frame, values >= 0.
using HdrImage = Image3<HdrTag>;

template <typename Tag>
Tensor to_tensor(const Image3<Tag>& image) {
  const auto v = image.values();
  return Tensor({1, 3, image.height(), image.width()}, std::vector<float>(v.begin(), v.end()));
}

/// Stacks frames of equal size along the batch axis.
template <typename Tag>
Tensor to_batch(std::span<const Image3<Tag>> images);

/// Extracts one batch entry of a 3-channel tensor.
template <typename Tag>
Image3<Tag> image_from_tensor(const Tensor& t, int batch_index = 0);

HdrImage read_pfm(const std::filesystem::path& path);
void write_pfm(const HdrImage& image, const std::filesystem::path& path);

/// Decodes from an in-memory PFM payload; `source` names it in errors.
HdrImage decode_pfm(std::span<const unsigned char> bytes, const std::string& source = "pfm");
std::vector<unsigned char> encode_pfm(const HdrImage& image);

LdrImage read_png8(const std::filesystem::path& path);
/// Values are clamped to [0,1] and stored as round(v*255).
void write_png8(const LdrImage& image, const std::filesystem::path& path);

std::uint8_t quantize8(float v);
float dequantize8(std::uint8_t q);

/// Lists `<prefix><digits><suffix>` files in `directory` in temporal order,
/// where `pattern` is "<prefix>*<suffix>" (e.g. "f*.png"). Numbering must be
/// contiguous.
std::vector<std::filesystem::path> sequence_scan(const std::filesystem::path& directory,
                                                 const std::string& pattern);

}  // namespace nechdr
