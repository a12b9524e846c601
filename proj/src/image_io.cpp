#include "nechdr/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

namespace nechdr {

namespace fs = std::filesystem;

template <typename Tag>
Tensor to_batch(std::span<const Image3<Tag>> images) {
  if (images.empty()) throw ShapeError("to_batch: no images");
  const int h = images[0].height(), w = images[0].width();
  std::vector<float> values;
  values.reserve(images.size() * 3 * h * w);
  for (const auto& im : images) {
    if (im.height() != h || im.width() != w) {
      throw ShapeError("to_batch: image size " + std::to_string(im.height()) + "x" +
                       std::to_string(im.width()) + " differs from " + std::to_string(h) + "x" +
                       std::to_string(w));
    }
    values.insert(values.end(), im.values().begin(), im.values().end());
  }
  return Tensor({static_cast<int>(images.size()), 3, h, w}, std::move(values));
}

template <typename Tag>
Image3<Tag> image_from_tensor(const Tensor& t, int batch_index) {
  const Shape& s = t.shape();
  if (s.c != 3) throw ShapeError("image_from_tensor: channel count " + std::to_string(s.c));
  if (batch_index < 0 || batch_index >= s.n) {
    throw ShapeError("image_from_tensor: batch index " + std::to_string(batch_index) +
                     " out of range");
  }
  Image3<Tag> image(s.h, s.w);
  const std::size_t len = 3 * s.plane();
  auto src = t.data().subspan(static_cast<std::size_t>(batch_index) * len, len);
  std::copy(src.begin(), src.end(), image.values().begin());
  return image;
}

template Tensor to_batch<LdrTag>(std::span<const LdrImage>);
template Tensor to_batch<HdrTag>(std::span<const HdrImage>);
template LdrImage image_from_tensor<LdrTag>(const Tensor&, int);
template HdrImage image_from_tensor<HdrTag>(const Tensor&, int);

namespace {

std::vector<unsigned char> slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_all(const fs::path& path, std::span<const unsigned char> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to " + path.string());
}

// Whitespace-delimited header token reader that tracks its byte offset.
class HeaderReader {
 public:
  HeaderReader(std::span<const unsigned char> bytes, const std::string& source)
      : bytes_(bytes), source_(source) {}

  std::string token(const char* what) {
    while (pos_ < bytes_.size() && std::isspace(bytes_[pos_])) ++pos_;
    const std::size_t start = pos_;
    while (pos_ < bytes_.size() && !std::isspace(bytes_[pos_])) ++pos_;
    if (start == pos_) {
      throw FormatError(source_ + ": truncated header, missing " + what, pos_);
    }
    return {reinterpret_cast<const char*>(bytes_.data()) + start, pos_ - start};
  }

  // Exactly one whitespace byte separates the header from the payload.
  std::size_t end_of_header() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
      throw FormatError(source_ + ": truncated header", pos_);
    }
    return pos_ + 1;
  }

  std::size_t offset() const { return pos_; }

 private:
  std::span<const unsigned char> bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

int parse_extent(const std::string& tok, const std::string& source, std::size_t offset) {
  if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char c) { return std::isdigit(c); })) {
    throw FormatError(source + ": malformed dimension '" + tok + "'", offset);
  }
  const long v = std::stol(tok);
  if (v <= 0 || v > (1 << 20)) throw FormatError(source + ": bad dimension " + tok, offset);
  return static_cast<int>(v);
}

std::uint32_t byteswap32(std::uint32_t v) {
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

}  // namespace

HdrImage decode_pfm(std::span<const unsigned char> bytes, const std::string& source) {
  HeaderReader header(bytes, source);
  const std::string magic = header.token("magic");
  if (magic != "PF" && magic != "Pf") {
    throw FormatError(source + ": bad magic '" + magic + "'", 0);
  }
  const int channels = magic == "PF" ? 3 : 1;
  const int width = parse_extent(header.token("width"), source, header.offset());
  const int height = parse_extent(header.token("height"), source, header.offset());
  const std::string scale_tok = header.token("scale");
  double scale = 0;
  try {
    std::size_t used = 0;
    scale = std::stod(scale_tok, &used);
    if (used != scale_tok.size()) throw std::invalid_argument(scale_tok);
  } catch (const std::exception&) {
    throw FormatError(source + ": malformed scale '" + scale_tok + "'", header.offset());
  }
  if (scale == 0.0) throw FormatError(source + ": zero scale", header.offset());
  const bool little = scale < 0;
  const std::size_t start = header.end_of_header();
  const std::size_t need = static_cast<std::size_t>(width) * height * channels * 4;
  if (bytes.size() - start < need) {
    throw FormatError(source + ": truncated payload, " + std::to_string(bytes.size() - start) +
                          " of " + std::to_string(need) + " bytes",
                      bytes.size());
  }
  const bool swap = little != (std::endian::native == std::endian::little);
  HdrImage image(height, width);
  const unsigned char* p = bytes.data() + start;
  // Rows are stored bottom-up.
  for (int row = 0; row < height; ++row) {
    const int y = height - 1 - row;
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < channels; ++c) {
        std::uint32_t bits;
        std::memcpy(&bits, p, 4);
        p += 4;
        if (swap) bits = byteswap32(bits);
        const float v = std::bit_cast<float>(bits);
        if (channels == 3) {
          image.at(c, y, x) = v;
        } else {
          for (int k = 0; k < 3; ++k) image.at(k, y, x) = v;
        }
      }
    }
  }
  return image;
}

std::vector<unsigned char> encode_pfm(const HdrImage& image) {
  std::ostringstream head;
  head << "PF\n" << image.width() << ' ' << image.height() << "\n-1.0\n";
  const std::string h = head.str();
  std::vector<unsigned char> out(h.begin(), h.end());
  out.reserve(out.size() + static_cast<std::size_t>(image.width()) * image.height() * 12);
  const bool swap = std::endian::native != std::endian::little;
  for (int row = 0; row < image.height(); ++row) {
    const int y = image.height() - 1 - row;
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < 3; ++c) {
        std::uint32_t bits = std::bit_cast<std::uint32_t>(image.at(c, y, x));
        if (swap) bits = byteswap32(bits);
        unsigned char b[4];
        std::memcpy(b, &bits, 4);
        out.insert(out.end(), b, b + 4);
      }
    }
  }
  return out;
}

HdrImage read_pfm(const fs::path& path) {
  const auto bytes = slurp(path);
  return decode_pfm(bytes, path.string());
}

void write_pfm(const HdrImage& image, const fs::path& path) { write_all(path, encode_pfm(image)); }

std::uint8_t quantize8(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

float dequantize8(std::uint8_t q) { return static_cast<float>(q) / 255.0f; }

LdrImage read_png8(const fs::path& path) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.string().c_str())) {
    throw DataError(path.string() + ": " + png.message);
  }
  if (png.format & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&png);
    throw FormatError(path.string() + ": unsupported bit depth (16-bit PNG)", 0);
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw DataError(path.string() + ": " + msg);
  }
  const int h = static_cast<int>(png.height), w = static_cast<int>(png.width);
  LdrImage image(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        image.at(c, y, x) = dequantize8(buffer[(static_cast<std::size_t>(y) * w + x) * 3 + c]);
  return image;
}

void write_png8(const LdrImage& image, const fs::path& path) {
  const int h = image.height(), w = image.width();
  std::vector<std::uint8_t> buffer(static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        buffer[(static_cast<std::size_t>(y) * w + x) * 3 + c] = quantize8(image.at(c, y, x));
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(w);
  png.height = static_cast<png_uint_32>(h);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.string().c_str(), 0, buffer.data(), 0, nullptr)) {
    throw DataError(path.string() + ": " + png.message);
  }
}

std::vector<fs::path> sequence_scan(const fs::path& directory, const std::string& pattern) {
  const auto star = pattern.find('*');
  if (star == std::string::npos || pattern.find('*', star + 1) != std::string::npos) {
    throw std::invalid_argument("sequence pattern needs exactly one '*': " + pattern);
  }
  const std::string prefix = pattern.substr(0, star);
  const std::string suffix = pattern.substr(star + 1);
  if (!fs::is_directory(directory)) throw DataError("not a directory: " + directory.string());

  std::map<long, fs::path> frames;
  for (const auto& entry : fs::directory_iterator(directory)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (name.size() <= prefix.size() + suffix.size()) continue;
    if (name.compare(0, prefix.size(), prefix) != 0) continue;
    if (name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0) continue;
    const std::string digits =
        name.substr(prefix.size(), name.size() - prefix.size() - suffix.size());
    if (!std::all_of(digits.begin(), digits.end(), [](char c) { return std::isdigit(c); })) {
      continue;
    }
    frames.emplace(std::stol(digits), entry.path());
  }
  if (frames.empty()) {
    throw DataError("empty sequence: no files matching " + pattern + " in " + directory.string());
  }
  std::vector<fs::path> out;
  long expected = frames.begin()->first;
  for (const auto& [index, path] : frames) {
    if (index != expected) {
      throw DataError("gap in sequence " + directory.string() + ": missing index " +
                      std::to_string(expected));
    }
    out.push_back(path);
    ++expected;
  }
  return out;
}

}  // namespace nechdr
