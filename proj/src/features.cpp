#include "apnt/features.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "apnt/error.hpp"
#include "apnt/kernels.hpp"

namespace apnt {

using kernels::Padding;

const char* to_string(FeatureSource s) {
  switch (s) {
    case FeatureSource::backbone: return "backbone";
    case FeatureSource::handcrafted: return "handcrafted";
    case FeatureSource::encoder: return "encoder";
  }
  return "unknown";
}

void FeaturePyramid::validate() const {
  for (int l = 0; l < 3; ++l) {
    const Tensor& t = levels[l];
    if (t.rank() != 3) throw StructuralError("pyramid level is not (C, H, W)");
    if (l > 0 && (t.height() * 2 != levels[l - 1].height() || t.width() * 2 != levels[l - 1].width()))
      throw StructuralError("pyramid levels do not halve in size");
    if (!all_finite(t)) throw StructuralError("pyramid contains non-finite values");
  }
}

std::uint64_t BackboneWeights::fingerprint() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& l : layers) {
    mix(l.name.data(), l.name.size());
    for (const Tensor* t : {&l.weight, &l.bias}) {
      mix(t->shape().data(), t->shape().size() * sizeof(int));
      mix(t->data(), t->size() * sizeof(double));
    }
  }
  return h;
}

BackboneWeights backbone_from_archive(const TensorArchive& archive) {
  std::vector<std::string> missing;
  for (const auto& spec : kBackboneLayers)
    for (const char* suffix : {".weight", ".bias"})
      if (!archive.contains(std::string(spec.name) + suffix))
        missing.push_back(std::string(spec.name) + suffix);
  if (!missing.empty()) {
    std::ostringstream os;
    os << "backbone archive is missing:";
    for (const auto& m : missing) os << ' ' << m;
    throw LoadError(os.str());
  }
  BackboneWeights w;
  for (std::size_t i = 0; i < kBackboneLayers.size(); ++i) {
    const auto& spec = kBackboneLayers[i];
    const std::string name(spec.name);
    const Tensor& wt = archive.at(name + ".weight");
    const Tensor& bt = archive.at(name + ".bias");
    const Shape want_w{spec.cout, spec.cin, 3, 3};
    if (wt.shape() != want_w)
      throw LoadError(name + ".weight has shape " + shape_string(wt.shape()) + ", expected " +
                      shape_string(want_w));
    if (bt.shape() != Shape{spec.cout})
      throw LoadError(name + ".bias has shape " + shape_string(bt.shape()) + ", expected (" +
                      std::to_string(spec.cout) + ")");
    w.layers[i] = {name, wt, bt};
  }
  w.frozen = true;
  return w;
}

BackboneWeights load_backbone(const std::filesystem::path& path) {
  return backbone_from_archive(TensorArchive::load(path));
}

void save_backbone(const std::filesystem::path& path, const BackboneWeights& weights) {
  TensorArchive ar;
  for (const auto& l : weights.layers) {
    ar.put(l.name + ".weight", l.weight, StorageType::f32);
    ar.put(l.name + ".bias", l.bias, StorageType::f32);
  }
  ar.put_text("kind", "vgg19-features-relu3_1");
  ar.save(path);
}

BackboneWeights make_standin_backbone(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  BackboneWeights w;
  for (std::size_t i = 0; i < kBackboneLayers.size(); ++i) {
    const auto& spec = kBackboneLayers[i];
    std::normal_distribution<double> n(0.0, std::sqrt(2.0 / (spec.cin * 9.0)));
    Tensor wt(Shape{spec.cout, spec.cin, 3, 3});
    for (double& v : wt.values()) v = static_cast<float>(n(rng));
    w.layers[i] = {spec.name, std::move(wt), Tensor(Shape{spec.cout}, 0.0)};
  }
  return w;
}

namespace {

Tensor conv_relu(const Tensor& x, const BackboneWeights::Layer& l) {
  Tensor y = kernels::conv2d(x, l.weight, &l.bias, Padding::replicate);
  for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
  return y;
}

void check_image(const Tensor& image) {
  if (image.rank() != 3 || image.channels() != 3)
    throw InputError("feature extraction expects a 3-channel image, got " +
                     shape_string(image.shape()));
  if (image.height() % 4 || image.width() % 4 || image.height() < 4 || image.width() < 4)
    throw InputError("feature extraction needs spatial size divisible by 4, got " +
                     shape_string(image.shape()));
}

}  // namespace

FeaturePyramid extract_pyramid(const Tensor& image, const BackboneWeights& weights) {
  check_image(image);
  static constexpr double kMean[3] = {0.485, 0.456, 0.406};
  static constexpr double kStd[3] = {0.229, 0.224, 0.225};
  Tensor x(image.shape());
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < image.plane(); ++i)
      x.channel_data(c)[i] = (image.channel_data(c)[i] - kMean[c]) / kStd[c];

  FeaturePyramid pyr;
  pyr.source = FeatureSource::backbone;
  pyr.levels[0] = conv_relu(x, weights.layers[0]);
  Tensor t = conv_relu(pyr.levels[0], weights.layers[1]);
  pyr.levels[1] = conv_relu(kernels::max_pool2(t), weights.layers[2]);
  t = conv_relu(pyr.levels[1], weights.layers[3]);
  pyr.levels[2] = conv_relu(kernels::max_pool2(t), weights.layers[4]);
  return pyr;
}

namespace {

// 3x3 taps applied to intensity: identity, x/y central differences, four
// oriented Sobel kernels. Rows 1..6 are antisymmetric (k[8 - i] = -k[i]).
constexpr double kBank[kHandcraftedChannels][9] = {
    {0, 0, 0, 0, 1, 0, 0, 0, 0},
    {0, 0, 0, -0.5, 0, 0.5, 0, 0, 0},
    {0, -0.5, 0, 0, 0, 0, 0, 0.5, 0},
    {-0.125, 0, 0.125, -0.25, 0, 0.25, -0.125, 0, 0.125},
    {0, 0.125, 0.25, -0.125, 0, 0.125, -0.25, -0.125, 0},
    {-0.125, -0.25, -0.125, 0, 0, 0, 0.125, 0.25, 0.125},
    {-0.25, -0.125, 0, -0.125, 0, 0.125, 0, 0.125, 0.25},
};

// Pairs opposite taps so flat regions give exact zeros.
Tensor apply_bank(const Tensor& lum) {
  const int h = lum.height(), w = lum.width();
  Tensor out(kHandcraftedChannels, h, w);
  double p[9];
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      for (int i = 0; i < 9; ++i)
        p[i] = lum(0, std::clamp(y + i / 3 - 1, 0, h - 1), std::clamp(x + i % 3 - 1, 0, w - 1));
      out(0, y, x) = p[4];
      for (int c = 1; c < kHandcraftedChannels; ++c) {
        double s = 0.0;
        for (int i = 0; i < 4; ++i) s += kBank[c][i] * (p[i] - p[8 - i]);
        out(c, y, x) = s;
      }
    }
  return out;
}

Tensor intensity(const Tensor& image) {
  Tensor out(1, image.height(), image.width());
  for (std::size_t i = 0; i < image.plane(); ++i)
    out[i] = (image.channel_data(0)[i] + image.channel_data(1)[i] + image.channel_data(2)[i]) / 3.0;
  return out;
}

}  // namespace

FeaturePyramid handcrafted_pyramid(const Tensor& image) {
  check_image(image);
  FeaturePyramid pyr;
  pyr.source = FeatureSource::handcrafted;
  Tensor lum = intensity(image);
  for (int l = 0; l < 3; ++l) {
    if (l > 0) lum = kernels::downsample2(lum);
    pyr.levels[l] = apply_bank(lum);
  }
  return pyr;
}

FeatureExtractor FeatureExtractor::handcrafted() { return FeatureExtractor{}; }

FeatureExtractor FeatureExtractor::backbone(std::shared_ptr<const BackboneWeights> weights) {
  if (!weights) throw InputError("backbone extractor needs weights");
  FeatureExtractor f;
  f.weights_ = std::move(weights);
  return f;
}

FeatureSource FeatureExtractor::source() const {
  return weights_ ? FeatureSource::backbone : FeatureSource::handcrafted;
}

FeaturePyramid FeatureExtractor::operator()(const Tensor& radiance, double mu) const {
  const Tensor display = mu_law(radiance, mu, /*clamp=*/true);
  return weights_ ? extract_pyramid(display, *weights_) : handcrafted_pyramid(display);
}

}  // namespace apnt
