#include "mofit/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "mofit/errors.hpp"

namespace mofit {

namespace {

struct SchemaEntry {
  const char* key;      // section.name
  const char* value;    // default
  const char* comment;  // trailing comment in the generated default config
};

// Defaults follow the source publication where one exists; entries marked
// desk-scale are sized for a workstation run.
const SchemaEntry kSchema[] = {
    {"task.name", "hmd", "body2d | hmd | face"},
    {"task.visibility", "half", "full | half (hmd only)"},
    {"model.tree", "body", "body | face | chain"},
    {"model.seed", "1", ""},
    {"model.vertices", "800", "desk-scale"},
    {"model.shape_dims", "8", "desk-scale"},
    {"model.expr_dims", "16", "desk-scale (face)"},
    {"model.landmarks", "64", "desk-scale (face)"},
    {"model.chain_joints", "4", "chain tree only"},
    {"data.count", "20000", "desk-scale"},
    {"data.train_frac", "0.8", ""},
    {"data.val_frac", "0.1", ""},
    {"data.noise_2d", "1.0", "pixels, desk-scale"},
    {"data.noise_position", "0.005", "meters, desk-scale"},
    {"data.noise_rotation", "0.01", "radians, desk-scale"},
    {"data.keypoint_dropout", "0.05", "desk-scale"},
    {"data.pose_angle_limit", "0.4", "radians, desk-scale"},
    {"data.root_xz_range", "0.5", "meters"},
    {"data.ground_clearance", "0.02", "meters"},
    {"data.shape_std", "0.5", ""},
    {"data.expr_std", "0.7", ""},
    {"data.seed", "1234", ""},
    {"fitter.update_rule", "lm-like", "lm-like | convex | normalized | network-only"},
    {"fitter.weights_mode", "shared", "shared | per-step"},
    {"fitter.net_type", "gru", "gru | resmlp"},
    {"fitter.gru_units", "1024", ""},
    {"fitter.gru_layers", "2", ""},
    {"fitter.mlp_hidden", "256", ""},
    {"fitter.mlp_depth", "2", ""},
    {"fitter.iterations", "5", ""},
    {"fitter.lambda_gamma", "vector", "vector | scalar"},
    {"fitter.shared_lambda_gamma", "true", ""},
    {"fitter.layer_norm", "true", "replaces batch norm in the initializers"},
    {"fitter.dropout", "0.5", "on GRU hidden states"},
    {"fitter.gamma_bias", "-4.0", "initial softplus argument, desk-scale"},
    {"fitter.seed", "7", "weight initialization"},
    {"train.epochs", "300", "desk-scale"},
    {"train.batch_size", "64", "desk-scale"},
    {"train.lr", "1e-4", ""},
    {"train.anneal_epoch", "200", "desk-scale"},
    {"train.anneal_factor", "0.1", ""},
    {"train.seed", "99", "shuffling and dropout"},
    {"train.workers", "1", ""},
    {"loss.mesh", "1000", ""},
    {"loss.edge", "1000", ""},
    {"loss.transform", "100", ""},
    {"loss.rotation", "1", ""},
    {"loss.translation", "100", ""},
    {"baseline.max_iters", "100", ""},
    {"baseline.initial_damping", "1e-3", ""},
    {"baseline.damping_up", "10", ""},
    {"baseline.damping_down", "10", ""},
    {"baseline.min_diag", "1e-8", ""},
    {"baseline.diag_floor_rel", "1e-2", "relative damping diagonal clamp"},
    {"baseline.convergence_tol", "1e-10", ""},
    {"baseline.weight_gravity", "1.0", ""},
    {"baseline.weight_gmm", "0.1", ""},
    {"baseline.gmm_components", "4", "desk-scale"},
    {"baseline.gmm_samples", "2000", "train-split poses used for the prior"},
    {"baseline.gmm_iterations", "20", ""},
    {"baseline.face_reg", "1e-4", "quadratic regularization weight (face)"},
    {"baseline.gd_step", "1e-7", "gradient-descent solver step size"},
    {"baseline.gd_iters", "200", ""},
    {"eval.workers", "1", ""},
};

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

Config::Config() {
  for (const auto& entry : kSchema) values_[entry.key] = entry.value;
}

void Config::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash_at = line.find('#');
    if (hash_at != std::string::npos) line = line.substr(0, hash_at);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') {
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw BadConfig("config line " + std::to_string(line_no) +
                      " is not key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty()) throw BadConfig("config key outside a [section]");
    set(section + "." + key, value);
  }
}

void Config::apply_override(const std::string& dotted_key, const std::string& value) {
  set(dotted_key, value);
}

void Config::set(const std::string& key, const std::string& value) {
  const auto it = values_.find(key);
  if (it == values_.end()) throw BadConfig("unknown config key: " + key);
  it->second = value;
}

std::string Config::get_string(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw BadConfig("unknown config key: " + key);
  return it->second;
}

int Config::get_int(const std::string& key) const {
  const std::string v = get_string(key);
  try {
    std::size_t used = 0;
    const int out = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw BadConfig("config key " + key + " is not an integer: " + v);
  }
}

double Config::get_double(const std::string& key) const {
  const std::string v = get_string(key);
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw BadConfig("config key " + key + " is not a number: " + v);
  }
}

bool Config::get_bool(const std::string& key) const {
  const std::string v = get_string(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw BadConfig("config key " + key + " is not a boolean: " + v);
}

std::uint64_t Config::get_u64(const std::string& key) const {
  const std::string v = get_string(key);
  try {
    std::size_t used = 0;
    const unsigned long long out = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return static_cast<std::uint64_t>(out);
  } catch (const std::exception&) {
    throw BadConfig("config key " + key + " is not an unsigned integer: " + v);
  }
}

namespace {

std::uint64_t fnv_mix(std::uint64_t h, const std::string& s) {
  for (const char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::uint64_t Config::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& entry : kSchema) {
    h = fnv_mix(h, entry.key);
    h = fnv_mix(h, "=");
    h = fnv_mix(h, values_.at(entry.key));
    h = fnv_mix(h, "\n");
  }
  return h;
}

std::uint64_t Config::hash_sections(const std::vector<std::string>& sections) const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& entry : kSchema) {
    const std::string key = entry.key;
    const std::string section = key.substr(0, key.find('.'));
    bool wanted = false;
    for (const auto& s : sections) wanted = wanted || s == section;
    if (!wanted) continue;
    h = fnv_mix(h, entry.key);
    h = fnv_mix(h, "=");
    h = fnv_mix(h, values_.at(entry.key));
    h = fnv_mix(h, "\n");
  }
  return h;
}

std::string Config::default_text() {
  std::ostringstream out;
  out << "# Generated default configuration. Values follow the published\n"
         "# defaults where available; desk-scale entries are sized for a\n"
         "# workstation run.\n";
  std::string section;
  for (const auto& entry : kSchema) {
    const std::string key = entry.key;
    const auto dot = key.find('.');
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      out << "\n[" << sec << "]\n";
      section = sec;
    }
    out << key.substr(dot + 1) << " = " << entry.value;
    if (entry.comment[0] != '\0') out << "  # " << entry.comment;
    out << "\n";
  }
  return out.str();
}

std::string Config::render() const {
  std::ostringstream out;
  std::string section;
  for (const auto& entry : kSchema) {
    const std::string key = entry.key;
    const auto dot = key.find('.');
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      out << "[" << sec << "]\n";
      section = sec;
    }
    out << key.substr(dot + 1) << " = " << values_.at(key) << "\n";
  }
  return out.str();
}

}  // namespace mofit
