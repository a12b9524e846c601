#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "nechdr/model.hpp"
#include "nechdr/optim.hpp"

namespace nechdr {

/// Version, architecture, or per-layer mismatch in a checkpoint.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  ArchConfig arch;
  ModelParams params;
  std::optional<OptimState> optim;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt);
/// Parses without checking against an architecture; truncation and bad magic
/// throw FormatError.
Checkpoint decode_checkpoint(std::span<const unsigned char> bytes);

/// Written to a temporary sibling and renamed into place.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Reads and validates against `expected`: the variant, channel widths, and
/// every layer's presence and shape must match.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ArchConfig& expected);
void check_compatible(const Checkpoint& ckpt, const ArchConfig& expected);

/// Writes `bytes` to a temporary file next to `path`, then renames it over.
void write_file_atomic(const std::filesystem::path& path, std::span<const unsigned char> bytes);

}  // namespace nechdr
