#include "dunet/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace dunet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void type_error(const std::string& where, const std::string& key, const std::string& expected,
                             const std::string& value) {
  throw ConfigError(where + ": key '" + key + "': expected " + expected + ", got '" + value + "'");
}

template <typename Int>
Int parse_int(const std::string& where, const std::string& key, const std::string& value) {
  Int out{};
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) type_error(where, key, "an integer", value);
  return out;
}

double parse_real(const std::string& where, const std::string& key, const std::string& value) {
  double out = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) type_error(where, key, "a real number", value);
  return out;
}

bool parse_bool(const std::string& where, const std::string& key, const std::string& value) {
  if (value == "true" || value == "on" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "off" || value == "0" || value == "no") return false;
  type_error(where, key, "a boolean (true|false|on|off)", value);
}

template <typename Fn>
auto parse_enum(const std::string& where, const std::string& key, const std::string& value, Fn&& fn) {
  try {
    return fn(value);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": key '" + key + "': " + e.what());
  }
}

struct KeyHandler {
  std::function<void(TrainConfig&, const std::string& where, const std::string& value)> set;
  std::function<std::string(const TrainConfig&)> get;
};

const std::vector<std::pair<std::string, KeyHandler>>& handlers() {
  static const std::vector<std::pair<std::string, KeyHandler>> table = [] {
    std::vector<std::pair<std::string, KeyHandler>> t;
    auto integer = [&t](const std::string& key, auto member) {
      t.push_back({key,
                   {[key, member](TrainConfig& c, const std::string& w, const std::string& v) {
                      c.*member = parse_int<std::remove_reference_t<decltype(c.*member)>>(w, key, v);
                    },
                    [member](const TrainConfig& c) { return std::to_string(c.*member); }}});
    };
    auto real = [&t](const std::string& key, double TrainConfig::*member) {
      t.push_back({key,
                   {[key, member](TrainConfig& c, const std::string& w, const std::string& v) {
                      c.*member = parse_real(w, key, v);
                    },
                    [member](const TrainConfig& c) { return format_double(c.*member); }}});
    };
    auto boolean = [&t](const std::string& key, bool TrainConfig::*member) {
      t.push_back({key,
                   {[key, member](TrainConfig& c, const std::string& w, const std::string& v) {
                      c.*member = parse_bool(w, key, v);
                    },
                    [member](const TrainConfig& c) { return std::string(c.*member ? "true" : "false"); }}});
    };
    auto text = [&t](const std::string& key, std::string TrainConfig::*member) {
      t.push_back({key,
                   {[member](TrainConfig& c, const std::string&, const std::string& v) { c.*member = v; },
                    [member](const TrainConfig& c) { return c.*member; }}});
    };
    t.push_back({"model",
                 {[](TrainConfig& c, const std::string& w, const std::string& v) {
                    if (v != "doubleunet" && v != "unet") {
                      throw ConfigError(w + ": key 'model': '" + v + "' is not one of doubleunet|unet");
                    }
                    c.model = v;
                  },
                  [](const TrainConfig& c) { return c.model; }}});
    integer("input_height", &TrainConfig::input_height);
    integer("input_width", &TrainConfig::input_width);
    integer("batch_size", &TrainConfig::batch_size);
    real("lr", &TrainConfig::lr);
    t.push_back({"optimizer",
                 {[](TrainConfig& c, const std::string& w, const std::string& v) {
                    c.optimizer = parse_enum(w, "optimizer", v, parse_optimizer);
                  },
                  [](const TrainConfig& c) { return std::string(to_string(c.optimizer)); }}});
    t.push_back({"loss",
                 {[](TrainConfig& c, const std::string& w, const std::string& v) {
                    c.loss = parse_enum(w, "loss", v, parse_loss);
                  },
                  [](const TrainConfig& c) { return std::string(to_string(c.loss)); }}});
    integer("epochs", &TrainConfig::epochs);
    integer("seed", &TrainConfig::seed);
    real("width_multiplier", &TrainConfig::width_multiplier);
    integer("se_ratio", &TrainConfig::se_ratio);
    boolean("augmentation", &TrainConfig::augmentation);
    boolean("augment_all_splits", &TrainConfig::augment_all_splits);
    text("data", &TrainConfig::data);
    text("out", &TrainConfig::out);
    real("threshold", &TrainConfig::threshold);
    boolean("deterministic", &TrainConfig::deterministic);
    real("plateau_factor", &TrainConfig::plateau_factor);
    integer("plateau_patience", &TrainConfig::plateau_patience);
    real("min_delta", &TrainConfig::min_delta);
    real("min_lr", &TrainConfig::min_lr);
    integer("early_stop_patience", &TrainConfig::early_stop_patience);
    integer("max_steps", &TrainConfig::max_steps);
    return t;
  }();
  return table;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must lie in (0, 1)");
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) throw ConfigError("plateau_factor must lie in (0, 1)");
  try {
    model_config().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

ModelConfig TrainConfig::model_config() const {
  ModelConfig m;
  m.input_h = input_height;
  m.input_w = input_width;
  m.width_multiplier = width_multiplier;
  m.se_ratio = se_ratio;
  return m;
}

std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& origin) {
  std::map<std::string, std::string> out;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (!out.emplace(key, trim(line.substr(eq + 1))).second) {
      throw ConfigError(where + ": duplicate key '" + key + "'");
    }
  }
  return out;
}

void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value, const std::string& where) {
  for (const auto& [name, handler] : handlers()) {
    if (name == key) {
      handler.set(cfg, where, value);
      return;
    }
  }
  throw ConfigError(where + ": unknown key '" + key + "'");
}

TrainConfig parse_config_text(const std::string& text, const std::string& origin) {
  TrainConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  std::map<std::string, int> seen;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (!seen.emplace(key, lineno).second) throw ConfigError(where + ": duplicate key '" + key + "'");
    set_config_value(cfg, key, trim(line.substr(eq + 1)), where);
  }
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return cfg;
}

TrainConfig parse_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

std::string to_config_text(const TrainConfig& cfg) {
  std::string out;
  for (const auto& [name, handler] : handlers()) out += name + " = " + handler.get(cfg) + "\n";
  return out;
}

}  // namespace dunet
