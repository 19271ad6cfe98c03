#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include "apnt/archive.hpp"
#include "apnt/imaging.hpp"

namespace apnt {

enum class FeatureSource { backbone, handcrafted, encoder };

const char* to_string(FeatureSource s);

/// Three dyadic levels: level l is (C_l, H / 2^l, W / 2^l).
struct FeaturePyramid {
  std::array<Tensor, 3> levels;
  FeatureSource source = FeatureSource::handcrafted;

  void validate() const;
};

/// Frozen convolution weights of a 19-layer VGG classifier up to relu3_1,
/// keyed by the torchvision `features.N` names.
struct BackboneWeights {
  struct Layer {
    std::string name;  // e.g. "features.0"
    Tensor weight;     // (Cout, Cin, 3, 3)
    Tensor bias;       // (Cout)
  };
  std::array<Layer, 5> layers;  // conv1_1, conv1_2, conv2_1, conv2_2, conv3_1
  bool frozen = true;

  /// FNV-1a over names, shapes and values.
  std::uint64_t fingerprint() const;
};

/// Layer names and kernel shapes the loader insists on.
struct BackboneLayerSpec {
  const char* name;
  int cout;
  int cin;
};
inline constexpr std::array<BackboneLayerSpec, 5> kBackboneLayers{{
    {"features.0", 64, 3},
    {"features.2", 64, 64},
    {"features.5", 128, 64},
    {"features.7", 128, 128},
    {"features.10", 256, 128},
}};

BackboneWeights load_backbone(const std::filesystem::path& path);
BackboneWeights backbone_from_archive(const TensorArchive& archive);
void save_backbone(const std::filesystem::path& path, const BackboneWeights& weights);

/// Deterministic He-initialised weights with the backbone's names and
/// shapes, for running without a pretrained archive. Values are exactly
/// representable in single precision.
BackboneWeights make_standin_backbone(std::uint64_t seed);

/// relu1_1 / relu2_1 / relu3_1 activations of a display-range image
/// (3, H, W), H and W divisible by 4. ImageNet mean/std normalisation is
/// applied internally; convolutions replicate-pad.
FeaturePyramid extract_pyramid(const Tensor& image, const BackboneWeights& weights);

/// Fixed filter bank on channel-mean intensity: intensity, x/y central
/// gradients and four oriented Sobel responses, at three dyadic scales
/// (2x2 averaging between scales).
FeaturePyramid handcrafted_pyramid(const Tensor& image);

inline constexpr int kHandcraftedChannels = 7;

/// Matching-feature front end. Radiance is mu-law tone-mapped before it is
/// handed to the backbone or the handcrafted bank.
class FeatureExtractor {
 public:
  static FeatureExtractor handcrafted();
  static FeatureExtractor backbone(std::shared_ptr<const BackboneWeights> weights);

  FeaturePyramid operator()(const Tensor& radiance, double mu) const;
  FeatureSource source() const;
  const BackboneWeights* weights() const { return weights_.get(); }

 private:
  std::shared_ptr<const BackboneWeights> weights_;
};

}  // namespace apnt
