#include "dpsr/config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace dpsr {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, int line, const char* expected) {
  std::string where = line > 0 ? "line " + std::to_string(line) + ": " : "";
  throw ConfigError(where + "key '" + key + "': '" + value + "' is not " + expected, key, line);
}

template <typename U>
U parse_uint(const std::string& key, const std::string& v, int line) {
  U out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size() || v.empty()) bad_value(key, v, line, "an unsigned integer");
  return out;
}

double parse_double(const std::string& key, const std::string& v, int line) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) bad_value(key, v, line, "a number");
    return d;
  } catch (const std::logic_error&) {
    bad_value(key, v, line, "a number");
  }
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "bands", "features", "expansion", "state_size", "conv_kernel", "up_features", "scale", "n_clff",
      "memory_kind", "lr", "alpha_s", "alpha_g", "batch", "max_epochs", "max_steps", "patch", "seed",
      "eval_every", "patience", "budget_ms"};
  return keys;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value, int line) {
  auto u32 = [&] { return parse_uint<std::uint32_t>(key, value, line); };
  auto f64 = [&] { return parse_double(key, value, line); };
  DpsrConfig& m = cfg.model;
  TrainConfig& t = cfg.train;
  if (key == "bands") m.bands = u32();
  else if (key == "features") m.features = u32();
  else if (key == "expansion") m.expansion = u32();
  else if (key == "state_size") m.state_size = u32();
  else if (key == "conv_kernel") m.conv_kernel = u32();
  else if (key == "up_features") m.up_features = u32();
  else if (key == "scale") m.scale = u32();
  else if (key == "n_clff") m.n_clff = u32();
  else if (key == "memory_kind") {
    try {
      m.memory_kind = memory_kind_from_string(value);
    } catch (const ContractError&) {
      bad_value(key, value, line, "'mamba' or 'causalconv'");
    }
  } else if (key == "lr") t.lr = f64();
  else if (key == "alpha_s") t.alpha_s = f64();
  else if (key == "alpha_g") t.alpha_g = f64();
  else if (key == "batch") t.batch = u32();
  else if (key == "max_epochs") t.max_epochs = u32();
  else if (key == "max_steps") t.max_steps = u32();
  else if (key == "patch") t.patch = u32();
  else if (key == "seed") t.seed = parse_uint<std::uint64_t>(key, value, line);
  else if (key == "eval_every") t.eval_every = u32();
  else if (key == "patience") t.patience = u32();
  else if (key == "budget_ms") cfg.budget_ms = f64();
  else {
    std::string where = line > 0 ? "line " + std::to_string(line) + ": " : "";
    throw ConfigError(where + "unknown key '" + key + "'", key, line);
  }
}

RunConfig parse_config(const std::string& text, RunConfig cfg) {
  std::istringstream in(text);
  std::string raw;
  std::set<std::string> seen;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    if (const auto hash = raw.find('#'); hash != std::string::npos) raw.resize(hash);
    const std::string s = trim(raw);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value', got '" + s + "'", "", lineno);
    }
    const std::string key = trim(s.substr(0, eq)), value = trim(s.substr(eq + 1));
    if (!seen.insert(key).second) {
      throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'", key, lineno);
    }
    set_config_value(cfg, key, value, lineno);
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::string config_to_text(const RunConfig& cfg) {
  const DpsrConfig& m = cfg.model;
  const TrainConfig& t = cfg.train;
  std::ostringstream os;
  os.precision(17);
  os << "bands = " << m.bands << "\nfeatures = " << m.features << "\nexpansion = " << m.expansion
     << "\nstate_size = " << m.state_size << "\nconv_kernel = " << m.conv_kernel << "\nup_features = " << m.up_features
     << "\nscale = " << m.scale << "\nn_clff = " << m.n_clff << "\nmemory_kind = " << to_string(m.memory_kind)
     << "\nlr = " << t.lr << "\nalpha_s = " << t.alpha_s << "\nalpha_g = " << t.alpha_g << "\nbatch = " << t.batch
     << "\nmax_epochs = " << t.max_epochs << "\nmax_steps = " << t.max_steps << "\npatch = " << t.patch
     << "\nseed = " << t.seed << "\neval_every = " << t.eval_every << "\npatience = " << t.patience
     << "\nbudget_ms = " << cfg.budget_ms << "\n";
  return os.str();
}

}  // namespace dpsr
