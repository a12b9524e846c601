#include "nechdr/run_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "nechdr/image_io.hpp"

namespace nechdr {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* first = value.data();
  const char* last = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last) {
    throw ConfigError("bad value for " + key + ": '" + value + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("bad boolean for " + key + ": '" + value + "'");
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& value) {
  std::vector<T> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(key, trim(item)));
  if (out.empty()) throw ConfigError("empty list for " + key);
  return out;
}

template <std::size_t N>
std::array<int, N> parse_array(const std::string& key, const std::string& value) {
  const auto v = parse_list<int>(key, value);
  if (v.size() != N) {
    throw ConfigError(key + " needs " + std::to_string(N) + " values, got " + std::to_string(v.size()));
  }
  std::array<int, N> out{};
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

template <typename C>
std::string join(const C& values) {
  std::ostringstream os;
  os.precision(17);
  bool first = true;
  for (const auto& v : values) {
    if (!first) os << ',';
    os << v;
    first = false;
  }
  return os.str();
}

}  // namespace

void RunConfig::set(const std::string& raw_key, const std::string& raw_value) {
  const std::string key = trim(raw_key);
  const std::string value = trim(raw_value);
  try {
    if (key == "variant") variant = parse_variant(value);
    else if (key == "lightweight") lightweight = parse_bool(key, value);
    else if (key == "channels") channels = parse_array<4>(key, value);
    else if (key == "blend_hidden") blend_hidden = parse_array<2>(key, value);
    else if (key == "exposures") epsilons = parse_list<double>(key, value);
    else if (key == "gamma") gamma = parse_number<double>(key, value);
    else if (key == "mu") mu = parse_number<double>(key, value);
    else if (key == "delta_low") delta_low = parse_number<double>(key, value);
    else if (key == "delta_high") delta_high = parse_number<double>(key, value);
    else if (key == "lr") optim.lr = parse_number<double>(key, value);
    else if (key == "beta1") optim.beta1 = parse_number<double>(key, value);
    else if (key == "beta2") optim.beta2 = parse_number<double>(key, value);
    else if (key == "weight_decay") optim.weight_decay = parse_number<double>(key, value);
    else if (key == "eps") optim.eps = parse_number<double>(key, value);
    else if (key == "alpha") weights.alpha = parse_number<double>(key, value);
    else if (key == "beta") weights.beta = parse_number<double>(key, value);
    else if (key == "steps") steps = parse_number<int>(key, value);
    else if (key == "seed") seed = parse_number<std::uint64_t>(key, value);
    else if (key == "crop") crop = parse_number<int>(key, value);
    else if (key == "stride") stride = parse_number<int>(key, value);
    else if (key == "augment") augment = parse_bool(key, value);
    else if (key == "dataset") dataset = value;
    else if (key == "input") input = value;
    else if (key == "output") output = value;
    else if (key == "checkpoint") checkpoint = value;
    else if (key == "rendered") rendered = value;
    else if (key == "gt") gt = value;
    else if (key == "row") row = parse_number<int>(key, value);
    else if (key == "scene") scene = value;
    else if (key == "frames") frames = parse_number<int>(key, value);
    else if (key == "height") height = parse_number<int>(key, value);
    else if (key == "width") width = parse_number<int>(key, value);
    else if (key == "start_phase") start_phase = parse_number<int>(key, value);
    else if (key == "quantize") quantize = parse_bool(key, value);
    else if (key == "noise_sigma") {
      if (value == "none" || value.empty()) noise_sigma.reset();
      else noise_sigma = parse_number<double>(key, value);
    } else {
      throw ConfigError("unknown configuration key '" + key + "'");
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path.string());
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    }
    try {
      set(line.substr(0, eq), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

ArchConfig RunConfig::arch() const {
  ArchConfig a = lightweight ? ArchConfig::lightweight(variant) : ArchConfig::standard(variant);
  if (channels) a.channels = *channels;
  if (blend_hidden) a.blend_hidden = *blend_hidden;
  return a;
}

ExposureConfig RunConfig::exposure() const {
  ExposureConfig e = ExposureConfig::for_count(variant == Variant::kTwoExposure ? 2 : 3);
  if (epsilons) e.epsilons = *epsilons;
  e.gamma = gamma;
  e.mu = mu;
  e.delta_low = delta_low;
  e.delta_high = delta_high;
  return e;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.arch = arch();
  t.exposure = exposure();
  t.optim = optim;
  t.weights = weights;
  t.steps = steps;
  t.seed = seed;
  t.augment = augment;
  return t;
}

void RunConfig::validate() const {
  try {
    arch().validate();
    exposure().validate();
    optim.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (weights.alpha < 0 || weights.beta < 0) throw ConfigError("loss weights must be >= 0");
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (crop < 0 || crop % 16 != 0 || (crop > 0 && crop < 32)) {
    throw ConfigError("crop must be 0 or a multiple of 16 no smaller than 32");
  }
  if (stride < 1) throw ConfigError("stride must be >= 1");
  if (row < 0) throw ConfigError("row must be >= 0");
  if (frames < 5) throw ConfigError("frames must be >= 5");
  if (height < 1 || width < 1) throw ConfigError("height and width must be positive");
  if (start_phase < 0) throw ConfigError("start_phase must be >= 0");
  if (noise_sigma && *noise_sigma < 0) throw ConfigError("noise_sigma must be >= 0");
}

std::string RunConfig::dump() const {
  const ArchConfig a = arch();
  const ExposureConfig e = exposure();
  std::ostringstream os;
  os.precision(17);
  os << "variant = " << to_string(variant) << "\n"
     << "lightweight = " << (lightweight ? "true" : "false") << "\n"
     << "channels = " << join(a.channels) << "\n"
     << "blend_hidden = " << join(a.blend_hidden) << "\n"
     << "exposures = " << join(e.epsilons) << "\n"
     << "gamma = " << gamma << "\n"
     << "mu = " << mu << "\n"
     << "delta_low = " << delta_low << "\n"
     << "delta_high = " << delta_high << "\n"
     << "lr = " << optim.lr << "\n"
     << "beta1 = " << optim.beta1 << "\n"
     << "beta2 = " << optim.beta2 << "\n"
     << "weight_decay = " << optim.weight_decay << "\n"
     << "eps = " << optim.eps << "\n"
     << "alpha = " << weights.alpha << "\n"
     << "beta = " << weights.beta << "\n"
     << "steps = " << steps << "\n"
     << "seed = " << seed << "\n"
     << "crop = " << crop << "\n"
     << "stride = " << stride << "\n"
     << "augment = " << (augment ? "true" : "false") << "\n"
     << "dataset = " << dataset << "\n"
     << "input = " << input << "\n"
     << "output = " << output << "\n"
     << "checkpoint = " << checkpoint << "\n"
     << "rendered = " << rendered << "\n"
     << "gt = " << gt << "\n"
     << "row = " << row << "\n"
     << "scene = " << scene << "\n"
     << "frames = " << frames << "\n"
     << "height = " << height << "\n"
     << "width = " << width << "\n"
     << "start_phase = " << start_phase << "\n"
     << "quantize = " << (quantize ? "true" : "false") << "\n"
     << "noise_sigma = " << (noise_sigma ? std::to_string(*noise_sigma) : std::string("none")) << "\n";
  return os.str();
}

}  // namespace nechdr
