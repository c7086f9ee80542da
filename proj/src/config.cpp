#include "dvlo/config.hpp"

#include <fmt/format.h>

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace dvlo {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

int to_int(const std::string& key, const std::string& v) {
  int out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": not an integer: " + v);
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const char* first = v.data();
  if (!v.empty() && v.front() == '+') ++first;
  auto [p, ec] = std::from_chars(first, v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": not a number: " + v);
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": not a boolean: " + v);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : v) {
    if (c == ',' || c == '/' || c == ' ') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt::format("{}", v[i]);
  return s;
}

struct Entry {
  std::function<void(Config&, const std::string&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

#define DVLO_INT(key, field)                                                                  \
  {key, {[](Config& c, const std::string& k, const std::string& v) { c.field = to_int(k, v); }, \
         [](const Config& c) { return fmt::format("{}", c.field); }}}
#define DVLO_DOUBLE(key, field)                                                                  \
  {key, {[](Config& c, const std::string& k, const std::string& v) { c.field = to_double(k, v); }, \
         [](const Config& c) { return fmt::format("{}", c.field); }}}
#define DVLO_BOOL(key, field)                                                                  \
  {key, {[](Config& c, const std::string& k, const std::string& v) { c.field = to_bool(k, v); }, \
         [](const Config& c) { return std::string(c.field ? "true" : "false"); }}}

const std::map<std::string, Entry>& registry() {
  static const std::map<std::string, Entry> table = {
      DVLO_INT("encoder.channels", encoder.channels),
      DVLO_INT("encoder.levels", encoder.levels),
      {"encoder.query_counts",
       {[](Config& c, const std::string& k, const std::string& v) {
          c.encoder.query_counts.clear();
          for (const auto& t : split_list(v)) c.encoder.query_counts.push_back(to_int(k, t));
        },
        [](const Config& c) { return join(c.encoder.query_counts); }}},
      DVLO_INT("pseudo_image.h", pseudo_image.h),
      DVLO_INT("pseudo_image.w", pseudo_image.w),
      DVLO_DOUBLE("pseudo_image.delta_theta", pseudo_image.delta_theta),
      DVLO_DOUBLE("pseudo_image.delta_phi", pseudo_image.delta_phi),
      DVLO_INT("fusion.samples_per_query", fusion.samples_per_query),
      DVLO_INT("fusion.heads", fusion.heads),
      DVLO_INT("fusion.cameras", fusion.cameras),
      DVLO_BOOL("fusion.enable_global", fusion.enable_global),
      DVLO_INT("pose.knn", pose.knn),
      DVLO_INT("pose.levels", pose.levels),
      DVLO_INT("temporal.t_h", temporal.t_h),
      DVLO_INT("temporal.ego_dim", temporal.ego_dim),
      DVLO_INT("temporal.heads", temporal.heads),
      DVLO_BOOL("temporal.enabled", temporal.enabled),
      DVLO_DOUBLE("train.lr", train.lr),
      DVLO_INT("train.epochs", train.epochs),
      DVLO_INT("train.t_c", train.t_c),
      DVLO_INT("train.t_s", train.t_s),
      {"train.alpha",
       {[](Config& c, const std::string& k, const std::string& v) {
          c.train.alpha.clear();
          for (const auto& t : split_list(v)) c.train.alpha.push_back(to_double(k, t));
        },
        [](const Config& c) { return join(c.train.alpha); }}},
      DVLO_DOUBLE("train.beta", train.beta),
      DVLO_DOUBLE("train.k_t0", train.k_t0),
      DVLO_DOUBLE("train.k_q0", train.k_q0),
      DVLO_DOUBLE("train.beta1", train.beta1),
      DVLO_DOUBLE("train.beta2", train.beta2),
      DVLO_DOUBLE("train.eps", train.eps),
      DVLO_DOUBLE("train.lr_decay", train.lr_decay),
      DVLO_INT("train.decay_every", train.decay_every),
      DVLO_DOUBLE("train.lr_floor", train.lr_floor),
      {"data.camera",
       {[](Config& c, const std::string&, const std::string& v) { c.data.camera = v; },
        [](const Config& c) { return c.data.camera; }}},
  };
  return table;
}

#undef DVLO_INT
#undef DVLO_DOUBLE
#undef DVLO_BOOL

}  // namespace

void Config::set(const std::string& key, const std::string& value) {
  const auto& reg = registry();
  auto it = reg.find(key);
  if (it == reg.end()) throw ConfigError("unknown config key: " + key);
  it->second.set(*this, key, trim(value));
}

void Config::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override must be key=value: " + assignment);
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

void Config::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    try {
      apply_override(line);
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void Config::validate() const {
  if (encoder.channels < 1) throw ConfigError("encoder.channels must be >= 1");
  if (encoder.levels < 1) throw ConfigError("encoder.levels must be >= 1");
  if (static_cast<int>(encoder.query_counts.size()) != encoder.levels) {
    throw ConfigError("encoder.query_counts needs one entry per level");
  }
  for (int n : encoder.query_counts)
    if (n < 1) throw ConfigError("encoder.query_counts entries must be >= 1");
  if (pose.levels != encoder.levels) throw ConfigError("pose.levels must equal encoder.levels");
  if (pose.knn < 1) throw ConfigError("pose.knn must be >= 1");
  pseudo_image.params().validate();
  if (fusion.samples_per_query < 1 || fusion.cameras < 1) throw ConfigError("fusion counts must be >= 1");
  if (fusion.heads < 1 || encoder.channels % fusion.heads != 0) {
    throw ConfigError("fusion.heads must divide encoder.channels");
  }
  if (temporal.t_h < 1) throw ConfigError("temporal.t_h must be >= 1");
  if (temporal.heads < 1 || temporal.ego_dim % temporal.heads != 0) {
    throw ConfigError("temporal.heads must divide temporal.ego_dim");
  }
  if (static_cast<int>(train.alpha.size()) != encoder.levels) {
    throw ConfigError("train.alpha needs one weight per level");
  }
  if (train.t_s < 1 || train.t_c < 1) throw ConfigError("train.t_c and train.t_s must be >= 1");
  if (train.t_s > train.t_c) throw ConfigError("train.t_s must not exceed train.t_c");
  if (train.epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (train.decay_every < 1) throw ConfigError("train.decay_every must be >= 1");
  if (data.camera.size() != 2 || data.camera[0] != 'P' || data.camera[1] < '0' || data.camera[1] > '3') {
    throw ConfigError("data.camera must be one of P0..P3");
  }
}

std::string Config::dump() const {
  std::string out;
  for (const auto& [key, entry] : registry()) out += key + " = " + entry.get(*this) + "\n";
  return out;
}

std::vector<std::string> Config::keys() {
  std::vector<std::string> out;
  for (const auto& kv : registry()) out.push_back(kv.first);
  return out;
}

}  // namespace dvlo
