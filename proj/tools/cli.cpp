#include "cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "apnt/config.hpp"
#include "apnt/error.hpp"
#include "apnt/evaluation.hpp"
#include "apnt/rgbe.hpp"
#include "apnt/training.hpp"

namespace apnt {

namespace fs = std::filesystem;

namespace {

const char* kUsage =
    "usage: apnt <command> --config FILE [options]\n"
    "commands: train, infer, eval, sweep-translation, ablate, match-debug\n";

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string checkpoint, manifest, out, delta_list, variants, scene;
  std::map<std::string, bool> ablation;
};

template <typename T>
std::vector<T> split_list(const std::string& s, const char* what) {
  std::vector<T> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    if constexpr (std::is_same_v<T, int>) {
      try {
        std::size_t used = 0;
        out.push_back(std::stoi(item, &used));
        if (used != item.size()) throw std::invalid_argument(item);
      } catch (const std::exception&) {
        throw InputError(std::string("bad ") + what + " entry '" + item + "'");
      }
    } else {
      out.push_back(item);
    }
  }
  return out;
}

RunConfig effective_config(const Flags& f) {
  RunConfig r = load_run_config(f.config);
  if (f.seed) r.training.seed = *f.seed;
  if (!f.checkpoint.empty()) r.paths.checkpoint = f.checkpoint;
  if (!f.manifest.empty()) r.paths.manifest = f.manifest;
  if (!f.out.empty()) r.paths.out_dir = f.out;
  if (!f.delta_list.empty()) r.eval.deltas = split_list<int>(f.delta_list, "delta");
  if (!f.variants.empty()) r.eval.variants = split_list<std::string>(f.variants, "variant");
  if (!f.scene.empty()) r.eval.scene = f.scene;
  for (const auto& [name, on] : f.ablation)
    if (on) set_ablation(r.network.ablation, name, true);
  r.validate();
  return r;
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw InputError(std::string(what) + " path is not set");
  if (!fs::exists(path)) throw LoadError(std::string(what) + " not found: " + path);
}

FeatureExtractor make_extractor(const std::string& source, const RunConfig& r,
                                const std::string& command) {
  if (source == "handcrafted") return FeatureExtractor::handcrafted();
  if (r.paths.backbone.empty())
    throw InputError("command '" + command +
                     "' needs backbone weights: set paths.backbone or features=\"handcrafted\"");
  require_file(r.paths.backbone, "backbone weights");
  return FeatureExtractor::backbone(
      std::make_shared<const BackboneWeights>(load_backbone(r.paths.backbone)));
}

std::vector<SceneRecord> load_scenes(const std::vector<fs::path>& dirs) {
  std::vector<SceneRecord> out;
  for (const auto& d : dirs) out.push_back(load_scene(d));
  return out;
}

Manifest manifest_of(const RunConfig& r) {
  require_file(r.paths.manifest, "manifest");
  return read_manifest(r.paths.manifest);
}

struct LoadedModel {
  Checkpoint ckpt;
  std::unique_ptr<Network> net;
};

LoadedModel load_model(const RunConfig& r, const std::string& command) {
  require_file(r.paths.checkpoint, "checkpoint");
  LoadedModel m;
  m.ckpt = load_checkpoint(r.paths.checkpoint);
  if (m.ckpt.net.ablation != r.network.ablation)
    log_warning("ablation flags come from the checkpoint; config flags are ignored");
  m.net = std::make_unique<Network>(m.ckpt.net, make_extractor(m.ckpt.feature_source, r, command),
                                    m.ckpt.domain);
  return m;
}

void write_effective(const RunConfig& r) {
  save_run_config(fs::path(r.paths.out_dir) / "effective_config.json", r);
}

TrainLoopResult train_model(const RunConfig& r, const NetConfig& net_cfg, const fs::path& out,
                            const std::vector<SceneRecord>& scenes, const std::string& command,
                            std::unique_ptr<Network>& net_out) {
  net_out = std::make_unique<Network>(net_cfg, make_extractor(r.features, r, command), r.domain);
  TrainLoopOptions opt;
  opt.out_dir = out;
  opt.feature_source = r.features;
  if (command == "train" && !r.paths.checkpoint.empty()) {
    require_file(r.paths.checkpoint, "checkpoint");
    opt.resume_from = r.paths.checkpoint;
  }
  BatchProvider batches = random_crop_batches(*net_out, scenes, r.training);
  return train_loop(*net_out, init_params(net_cfg, r.training.seed), r.training, batches, opt);
}

int cmd_train(const RunConfig& r) {
  const Manifest m = manifest_of(r);
  write_effective(r);
  std::unique_ptr<Network> net;
  const TrainLoopResult res = train_model(r, r.network, r.paths.out_dir, load_scenes(m.train),
                                          "train", net);
  std::cout << "trained to step " << res.adam.step << "; "
            << res.checkpoints.size() << " checkpoint(s) in " << r.paths.out_dir << "\n";
  return 0;
}

LdrImage preview(const Tensor& radiance, double mu) {
  LdrImage img;
  img.pixels = mu_law(radiance, mu, true);
  img.bit_depth_origin = 8;
  return img;
}

int cmd_infer(const RunConfig& r) {
  const Manifest m = manifest_of(r);
  LoadedModel model = load_model(r, "infer");
  write_effective(r);
  const fs::path out = r.paths.out_dir;
  for (const auto& dir : m.test) {
    const SceneRecord s = load_scene(dir);
    const Tensor h = model.net->infer(model.ckpt.params, prepare_input(s, model.ckpt.domain));
    write_hdr(out / (s.scene_id + ".hdr"), RadianceMap{h, 1.0});
    write_ldr(out / (s.scene_id + "_preview.png"), preview(h, model.ckpt.domain.mu));
    std::cout << "wrote " << (out / (s.scene_id + ".hdr")).string() << "\n";
  }
  return 0;
}

int cmd_eval(const RunConfig& r) {
  const Manifest m = manifest_of(r);
  LoadedModel model = load_model(r, "eval");
  write_effective(r);
  MetricsReport rep = evaluate_dataset(load_scenes(m.test),
                                       network_predictor(*model.net, model.ckpt.params),
                                       model.ckpt.domain, 0, MetricDomain{model.ckpt.domain.mu});
  rep.config_fingerprint = fingerprint(to_json(r));
  rep.write_csv(fs::path(r.paths.out_dir) / "metrics.csv");
  rep.write_json(fs::path(r.paths.out_dir) / "metrics.json");
  std::cout << "PSNR-mu " << rep.aggregate.psnr_mu << " dB, PSNR-L " << rep.aggregate.psnr_l
            << " dB over " << rep.scenes.size() << " scene(s)\n";
  return 0;
}

int cmd_sweep(const RunConfig& r) {
  const Manifest m = manifest_of(r);
  LoadedModel model = load_model(r, "sweep-translation");
  write_effective(r);
  const auto rows = translation_sweep(load_scenes(m.test),
                                      network_predictor(*model.net, model.ckpt.params),
                                      model.ckpt.domain, r.eval.deltas,
                                      MetricDomain{model.ckpt.domain.mu});
  write_sweep_csv(fs::path(r.paths.out_dir) / "translation_sweep.csv", rows);
  for (const auto& row : rows) std::cout << row.delta << "," << row.psnr_mu << "\n";
  return 0;
}

int cmd_ablate(const RunConfig& r) {
  const Manifest m = manifest_of(r);
  write_effective(r);
  const std::vector<SceneRecord> train = load_scenes(m.train);
  const std::vector<SceneRecord> test = load_scenes(m.test);
  auto run = [&](const NetConfig& cfg) {
    std::string name = "full";
    for (const auto& v : ablation_variant_names())
      if (get_ablation(cfg.ablation, v)) name = v;
    const fs::path dir = fs::path(r.paths.out_dir) / "variants" / name;
    std::unique_ptr<Network> net;
    const TrainLoopResult res = train_model(r, cfg, dir, train, "ablate", net);
    MetricsReport rep = evaluate_dataset(test, network_predictor(*net, res.params), r.domain, 0,
                                         MetricDomain{r.domain.mu});
    RunConfig variant = r;
    variant.network = cfg;
    rep.config_fingerprint = fingerprint(to_json(variant));
    rep.write_csv(dir / "metrics.csv");
    rep.write_json(dir / "metrics.json");
    return rep;
  };
  NetConfig base = r.network;
  base.ablation = AblationFlags{};
  const AblationReport rep = ablation_suite(base, r.eval.variants, run);
  rep.write_csv(fs::path(r.paths.out_dir) / "ablation.csv");
  rep.write_json(fs::path(r.paths.out_dir) / "ablation.json");
  for (const auto& row : rep.rows)
    std::cout << row.variant << " PSNR-mu " << row.metrics.psnr_mu << " (delta "
              << row.delta_psnr_mu << ", published " << row.reference_delta_psnr_mu << ")\n";
  return 0;
}

fs::path find_scene(const RunConfig& r) {
  if (r.eval.scene.empty()) throw InputError("match-debug needs --scene");
  if (fs::is_directory(r.eval.scene)) return r.eval.scene;
  const Manifest m = manifest_of(r);
  for (const auto* list : {&m.test, &m.train})
    for (const auto& d : *list)
      if (d.filename() == r.eval.scene) return d;
  throw InputError("scene '" + r.eval.scene + "' is neither a directory nor in the manifest");
}

int cmd_match_debug(const RunConfig& r) {
  const SceneRecord s = load_scene(find_scene(r));
  if (r.network.ablation.no_nft)
    throw InputError("match-debug has nothing to dump with no_nft set");
  write_effective(r);
  Network net(r.network, make_extractor(r.features, r, "match-debug"), r.domain);
  const ModelInput in = prepare_input(s, r.domain);
  const fs::path out = fs::path(r.paths.out_dir);
  MatchField field;
  if (net.matches_are_static()) {
    field = net.match_input(in);
  } else {
    require_file(r.paths.checkpoint, "checkpoint");
    const Checkpoint c = load_checkpoint(r.paths.checkpoint);
    BoundParams p(c.params, false);
    field = *net.forward(p, in, nullptr, true).trace.matches;
  }
  const auto& w = r.network.window;
  std::map<std::string, std::string> meta{
      {"scene", s.scene_id},
      {"matching_domain", net.matching_domain()},
      {"source_image", r.network.ablation.no_ms_hdr ? "H_s" : "masked_H_s"},
      {"features", net.matches_are_static() ? r.features : "encoder"},
      {"normalization", to_string(w.normalization)},
      {"radius", std::to_string(w.radius[0]) + "," + std::to_string(w.radius[1]) + "," +
                     std::to_string(w.radius[2])},
      {"single_scale", r.network.ablation.single_scale_vgg ? "true" : "false"},
      {"clip_level", std::to_string(in.clip_level)},
  };
  write_match_csv(out / (s.scene_id + "_matches.csv"), field, meta);
  write_hdr(out / (s.scene_id + "_ms_hdr.hdr"), in.short_masked);
  write_ldr(out / (s.scene_id + "_ms_hdr_preview.png"), preview(in.short_masked.pixels, r.domain.mu));
  std::cout << "wrote " << (out / (s.scene_id + "_matches.csv")).string() << "\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  if (argc < 2) {
    std::cerr << kUsage;
    return 2;
  }
  const std::string command = argv[1];
  static const std::map<std::string, int (*)(const RunConfig&)> commands{
      {"train", cmd_train},       {"infer", cmd_infer},
      {"eval", cmd_eval},         {"sweep-translation", cmd_sweep},
      {"ablate", cmd_ablate},     {"match-debug", cmd_match_debug},
  };
  auto it = commands.find(command);
  if (it == commands.end()) {
    if (command != "-h" && command != "--help") std::cerr << "unknown command '" << command << "'\n";
    std::cerr << kUsage;
    return command == "-h" || command == "--help" ? 0 : 2;
  }

  CLI::App app{"apnt " + command};
  Flags f;
  app.add_option("--config", f.config, "JSON run configuration")->required();
  app.add_option("--seed", f.seed, "training seed");
  app.add_option("--checkpoint", f.checkpoint, "checkpoint file");
  app.add_option("--manifest", f.manifest, "dataset manifest");
  app.add_option("--out", f.out, "output directory");
  app.add_option("--delta-list", f.delta_list, "comma-separated translations");
  app.add_option("--variants", f.variants, "comma-separated ablation variants");
  app.add_option("--scene", f.scene, "scene directory or id (match-debug)");
  const std::pair<const char*, const char*> switches[] = {
      {"--no-ms-hdr", "no_ms_hdr"},
      {"--no-nft", "no_nft"},
      {"--single-scale-vgg", "single_scale_vgg"},
      {"--match-with-encoder", "match_with_encoder_features"},
      {"--no-motion-att", "no_motion_attention"},
      {"--no-scale-att", "no_scale_attention"},
  };
  for (const auto& [flag, name] : switches) app.add_flag(flag, f.ablation[name]);

  std::vector<std::string> args(argv + 2, argv + argc);
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    return it->second(effective_config(f));
  } catch (const Error& e) {
    std::cerr << "apnt " << command << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "apnt " << command << ": " << e.what() << "\n";
    return 1;
  }
}

}  // namespace apnt
