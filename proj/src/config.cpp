#include "apnt/config.hpp"

#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "apnt/error.hpp"

namespace apnt {

namespace {

void check_keys(const Json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw InputError("config section '" + where + "' must be an object");
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw InputError("unknown config key '" + where + "." + k + "'");
}

template <typename T>
void read(const Json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw InputError("config key '" + where + "." + key + "' has the wrong type");
  }
}

}  // namespace

Json to_json(const DomainParams& d) {
  return Json{{"gamma", d.gamma}, {"mu", d.mu}, {"eps_sat", d.eps_sat},
              {"sat_threshold", d.sat_threshold}};
}

Json to_json(const WindowSpec& w) {
  return Json{{"radius", w.radius},
              {"patch", w.patch},
              {"stride", w.stride},
              {"normalization", to_string(w.normalization)}};
}

Json to_json(const AblationFlags& a) {
  Json j = Json::object();
  for (const auto& name : ablation_variant_names()) j[name] = get_ablation(a, name);
  return j;
}

Json to_json(const NetConfig& n) {
  return Json{{"base_channels", n.base_channels},
              {"cab_count_mef", n.cab_count_mef},
              {"cab_count_codec", n.cab_count_codec},
              {"cab_reduction", n.cab_reduction},
              {"attention_conv_layers", n.attention_conv_layers},
              {"window", to_json(n.window)},
              {"ablation", to_json(n.ablation)}};
}

Json to_json(const TrainConfig& t) {
  return Json{{"learning_rate", t.learning_rate}, {"batch_size", t.batch_size},
              {"crop", t.crop},                   {"max_steps", t.max_steps},
              {"seed", t.seed},                   {"checkpoint_every", t.checkpoint_every},
              {"mu", t.mu},                       {"beta1", t.beta1},
              {"beta2", t.beta2},                 {"epsilon", t.epsilon}};
}

void from_json(const Json& j, DomainParams& out, const std::string& where) {
  check_keys(j, where, {"gamma", "mu", "eps_sat", "sat_threshold"});
  read(j, "gamma", out.gamma, where);
  read(j, "mu", out.mu, where);
  read(j, "eps_sat", out.eps_sat, where);
  read(j, "sat_threshold", out.sat_threshold, where);
}

void from_json(const Json& j, WindowSpec& out, const std::string& where) {
  check_keys(j, where, {"radius", "patch", "stride", "normalization"});
  read(j, "radius", out.radius, where);
  read(j, "patch", out.patch, where);
  read(j, "stride", out.stride, where);
  if (j.contains("normalization")) {
    std::string s;
    read(j, "normalization", s, where);
    out.normalization = parse_normalization(s);
  }
}

void from_json(const Json& j, AblationFlags& out, const std::string& where) {
  if (!j.is_object()) throw InputError("config section '" + where + "' must be an object");
  for (const auto& [k, v] : j.items()) {
    const auto& names = ablation_variant_names();
    if (std::find(names.begin(), names.end(), k) == names.end())
      throw InputError("unknown config key '" + where + "." + k + "'");
    if (!v.is_boolean()) throw InputError("config key '" + where + "." + k + "' must be boolean");
    set_ablation(out, k, v.get<bool>());
  }
}

void from_json(const Json& j, NetConfig& out, const std::string& where) {
  check_keys(j, where,
             {"base_channels", "cab_count_mef", "cab_count_codec", "cab_reduction",
              "attention_conv_layers", "window", "ablation"});
  read(j, "base_channels", out.base_channels, where);
  read(j, "cab_count_mef", out.cab_count_mef, where);
  read(j, "cab_count_codec", out.cab_count_codec, where);
  read(j, "cab_reduction", out.cab_reduction, where);
  read(j, "attention_conv_layers", out.attention_conv_layers, where);
  if (j.contains("window")) from_json(j.at("window"), out.window, where + ".window");
  if (j.contains("ablation")) from_json(j.at("ablation"), out.ablation, where + ".ablation");
}

void from_json(const Json& j, TrainConfig& out, const std::string& where) {
  check_keys(j, where,
             {"learning_rate", "batch_size", "crop", "max_steps", "seed", "checkpoint_every", "mu",
              "beta1", "beta2", "epsilon"});
  read(j, "learning_rate", out.learning_rate, where);
  read(j, "batch_size", out.batch_size, where);
  read(j, "crop", out.crop, where);
  read(j, "max_steps", out.max_steps, where);
  read(j, "seed", out.seed, where);
  read(j, "checkpoint_every", out.checkpoint_every, where);
  read(j, "mu", out.mu, where);
  read(j, "beta1", out.beta1, where);
  read(j, "beta2", out.beta2, where);
  read(j, "epsilon", out.epsilon, where);
}

void RunConfig::validate() const {
  domain.validate();
  network.validate();
  training.validate();
  if (features != "backbone" && features != "handcrafted")
    throw InputError("features must be 'backbone' or 'handcrafted', got '" + features + "'");
  for (int d : eval.deltas)
    if (d < 0) throw InputError("translation deltas must be non-negative");
  for (const auto& v : eval.variants) {
    AblationFlags probe;
    set_ablation(probe, v);
  }
}

Json to_json(const RunConfig& r) {
  return Json{{"domain", to_json(r.domain)},
              {"network", to_json(r.network)},
              {"training", to_json(r.training)},
              {"features", r.features},
              {"paths",
               {{"manifest", r.paths.manifest},
                {"backbone", r.paths.backbone},
                {"checkpoint", r.paths.checkpoint},
                {"out_dir", r.paths.out_dir}}},
              {"eval",
               {{"deltas", r.eval.deltas},
                {"variants", r.eval.variants},
                {"scene", r.eval.scene},
                {"patches_per_scene", r.eval.patches_per_scene}}}};
}

RunConfig run_config_from_json(const Json& j) {
  RunConfig r;
  check_keys(j, "config", {"domain", "network", "training", "features", "paths", "eval"});
  if (j.contains("domain")) from_json(j.at("domain"), r.domain, "domain");
  if (j.contains("network")) from_json(j.at("network"), r.network, "network");
  if (j.contains("training")) from_json(j.at("training"), r.training, "training");
  read(j, "features", r.features, "config");
  if (j.contains("paths")) {
    const Json& p = j.at("paths");
    check_keys(p, "paths", {"manifest", "backbone", "checkpoint", "out_dir"});
    read(p, "manifest", r.paths.manifest, "paths");
    read(p, "backbone", r.paths.backbone, "paths");
    read(p, "checkpoint", r.paths.checkpoint, "paths");
    read(p, "out_dir", r.paths.out_dir, "paths");
  }
  if (j.contains("eval")) {
    const Json& e = j.at("eval");
    check_keys(e, "eval", {"deltas", "variants", "scene", "patches_per_scene"});
    read(e, "deltas", r.eval.deltas, "eval");
    read(e, "variants", r.eval.variants, "eval");
    read(e, "scene", r.eval.scene, "eval");
    read(e, "patches_per_scene", r.eval.patches_per_scene, "eval");
  }
  return r;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open config " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("config " + path.string() + ": " + e.what());
  }
  RunConfig r = run_config_from_json(j);
  r.validate();
  return r;
}

void save_run_config(const std::filesystem::path& path, const RunConfig& r) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write " + path.string());
  out << std::setw(2) << to_json(r) << "\n";
}

std::string fingerprint(const Json& j) {
  const std::string s = j.dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace apnt
