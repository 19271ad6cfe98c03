#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "apnt/network.hpp"
#include "apnt/training.hpp"

namespace apnt {

using Json = nlohmann::ordered_json;

Json to_json(const DomainParams& d);
Json to_json(const WindowSpec& w);
Json to_json(const AblationFlags& a);
Json to_json(const NetConfig& n);
Json to_json(const TrainConfig& t);

// Readers start from the current contents of `out`, so missing keys keep
// their defaults. Unknown keys raise InputError naming the full key path.
void from_json(const Json& j, DomainParams& out, const std::string& where = "domain");
void from_json(const Json& j, WindowSpec& out, const std::string& where = "window");
void from_json(const Json& j, AblationFlags& out, const std::string& where = "ablation");
void from_json(const Json& j, NetConfig& out, const std::string& where = "network");
void from_json(const Json& j, TrainConfig& out, const std::string& where = "training");

struct PathConfig {
  std::string manifest;
  std::string backbone;
  std::string checkpoint;
  std::string out_dir = "out";
};

struct EvalOptions {
  std::vector<int> deltas{0, 5, 10, 20};
  std::vector<std::string> variants = ablation_variant_names();
  std::string scene;                  // match-debug target
  int patches_per_scene = 0;          // 0: whole scenes
};

/// Everything one command needs.
struct RunConfig {
  DomainParams domain;
  NetConfig network;
  TrainConfig training;
  PathConfig paths;
  EvalOptions eval;
  std::string features = "backbone";  // matching features: backbone | handcrafted

  void validate() const;
};

Json to_json(const RunConfig& r);
RunConfig run_config_from_json(const Json& j);
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& r);

/// FNV-1a of the canonical JSON dump.
std::string fingerprint(const Json& j);

}  // namespace apnt
