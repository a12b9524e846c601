#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nechdr/hdr_domain.hpp"
#include "nechdr/losses.hpp"
#include "nechdr/model.hpp"
#include "nechdr/optim.hpp"
#include "nechdr/trainer.hpp"

namespace nechdr {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Everything a CLI run needs. Loaded from `key = value` lines; later
/// assignments override earlier ones.
struct RunConfig {
  Variant variant = Variant::kTwoExposure;
  bool lightweight = false;
  std::optional<std::array<int, 4>> channels;
  std::optional<std::array<int, 2>> blend_hidden;

  std::optional<std::vector<double>> epsilons;
  double gamma = 2.2;
  double mu = 5000.0;
  double delta_low = 0.2;
  double delta_high = 0.8;

  AdamWConfig optim;
  LossWeights weights;
  int steps = 500;
  std::uint64_t seed = 0;
  int crop = 128;
  int stride = 1;
  bool augment = true;

  std::string dataset;
  std::string input;
  std::string output;
  std::string checkpoint;
  std::string rendered;
  std::string gt;
  int row = 0;

  std::string scene;
  int frames = 10;
  int height = 64;
  int width = 64;
  int start_phase = 0;
  bool quantize = true;
  std::optional<double> noise_sigma;

  /// Throws ConfigError for unknown keys or malformed values.
  void set(const std::string& key, const std::string& value);
  void load_file(const std::filesystem::path& path);

  ArchConfig arch() const;
  ExposureConfig exposure() const;
  TrainConfig train_config() const;

  /// Range checks on numbers and combinations; paths are checked by the
  /// subcommands that use them.
  void validate() const;
  /// Fully resolved `key = value` lines, defaults included.
  std::string dump() const;
};

}  // namespace nechdr
