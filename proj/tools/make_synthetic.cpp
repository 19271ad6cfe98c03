// Writes a synthetic scene dataset, its manifest and optionally a stand-in
// backbone archive.
#include <CLI11.hpp>

#include <iostream>

#include "apnt/dataset.hpp"
#include "apnt/error.hpp"
#include "apnt/features.hpp"

int main(int argc, char** argv) {
  CLI::App app{"apnt_synth"};
  std::string out = "synthetic";
  int train = 2, test = 1, size = 64, motion = 0;
  std::uint64_t seed = 0;
  bool backbone = false;
  app.add_option("--out", out, "dataset directory");
  app.add_option("--train", train, "training scenes");
  app.add_option("--test", test, "test scenes");
  app.add_option("--size", size, "scene height and width");
  app.add_option("--seed", seed, "first scene seed");
  app.add_option("--motion", motion, "camera shift of the short/long captures");
  app.add_flag("--standin-backbone", backbone, "also write backbone.apnt");
  CLI11_PARSE(app, argc, argv);
  try {
    const std::filesystem::path root(out);
    apnt::Manifest manifest;
    for (int i = 0; i < train + test; ++i) {
      apnt::SyntheticSceneOptions o;
      o.height = o.width = size;
      o.seed = seed + static_cast<std::uint64_t>(i);
      o.motion_dy = o.motion_dx = motion;
      const std::string name = (i < train ? "train_" : "test_") + std::to_string(i);
      apnt::save_scene(apnt::synthesize_scene(o), root / name);
      (i < train ? manifest.train : manifest.test).push_back(name);
    }
    apnt::write_manifest(root / "manifest.txt", manifest);
    if (backbone) apnt::save_backbone(root / "backbone.apnt", apnt::make_standin_backbone(seed));
    std::cout << "wrote " << train + test << " scenes to " << out << "\n";
  } catch (const apnt::Error& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
  return 0;
}
