#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "apnt/imaging.hpp"

namespace apnt {

/// Three captures of one scene, ordered short/medium/long by exposure bias.
/// Ground truth, when present, is in the short-exposure-normalised radiance
/// domain, clamped to [0,1].
struct SceneRecord {
  std::array<LdrImage, 3> ldr;
  std::array<double, 3> biases{};
  std::optional<RadianceMap> gt_hdr;
  std::string scene_id;

  int height() const { return ldr[1].pixels.height(); }
  int width() const { return ldr[1].pixels.width(); }
  void validate() const;
};

/// Everything the network consumes for one scene or crop.
struct ModelInput {
  std::array<RadianceMap, 3> radiance;  // H_s, H_m, H_l
  RadianceMap short_masked;             // masked-saturated short capture
  SaturationMask mask_medium;           // binary LDR saturation of the medium capture
  SaturationMask mask_short;            // saturation of the masked short capture at clip level
  double clip_level = 1.0;

  int height() const { return radiance[1].pixels.height(); }
  int width() const { return radiance[1].pixels.width(); }
};

ModelInput prepare_input(const SceneRecord& record, const DomainParams& params);
ModelInput crop_input(const ModelInput& in, int y0, int x0, int height, int width);

struct PatchSample {
  ModelInput input;
  Tensor gt;  // empty when the record has no ground truth
  int y0 = 0;
  int x0 = 0;
  int size = 0;
};

// ---- LDR codec (8/16-bit lossless containers) ----
LdrImage read_ldr(const std::filesystem::path& path);
void write_ldr(const std::filesystem::path& path, const LdrImage& img);

// ---- scene directories ----
/// Reads a directory holding three LDR captures, `exposure.txt` (one bias per
/// line, listed in file-name order of the captures) and optionally one
/// ground-truth `.hdr`.
SceneRecord load_scene(const std::filesystem::path& dir);
/// Writes the layout load_scene reads back.
void save_scene(const SceneRecord& record, const std::filesystem::path& dir);

std::vector<double> read_exposure_file(const std::filesystem::path& path);

struct Manifest {
  std::vector<std::filesystem::path> train;
  std::vector<std::filesystem::path> test;
};

/// Plain text: `[train]` and `[test]` section headers, one scene directory per
/// line (relative paths resolve against the manifest's directory), `#` comments.
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

// ---- sampling and perturbation ----
std::vector<PatchSample> sample_patches(const SceneRecord& record, int size, int count,
                                        std::uint64_t seed, const DomainParams& params);

/// Shifts the short and long captures by (delta, delta) relative to the
/// medium one, replicating edges: out(y, x) = in(y - delta, x - delta).
SceneRecord apply_translation(const SceneRecord& record, int delta);
Tensor shift_image(const Tensor& img, int dy, int dx);

inline constexpr std::array<int, 4> kStandardTranslationSweep{0, 5, 10, 20};

// ---- synthetic scenes ----
struct SyntheticSceneOptions {
  int height = 64;
  int width = 64;
  std::array<double, 3> biases{-2.0, 0.0, 2.0};
  double gamma = 2.2;
  std::uint64_t seed = 0;
  bool quantize16 = true;
  // Radiance levels within this distance of a capture's clip point are
  // nudged away so clipping is unambiguous.
  double clip_guard = 0.0;
  // Camera motion of the short/long captures relative to the medium one.
  int motion_dy = 0;
  int motion_dx = 0;
  int bright_blobs = 3;
};

/// Latent radiance (short-exposure units, [0,1]) with texture and bright
/// highlights that clip the medium and long captures.
Tensor synthesize_radiance(const SyntheticSceneOptions& opts);
/// Renders the three captures of a latent radiance field; the latent is the
/// ground truth.
SceneRecord render_scene(const Tensor& latent, const SyntheticSceneOptions& opts);
SceneRecord synthesize_scene(const SyntheticSceneOptions& opts);

}  // namespace apnt
