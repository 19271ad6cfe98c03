#include "apnt/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "apnt/error.hpp"

namespace apnt {

void LdrImage::validate() const {
  if (pixels.rank() != 3 || pixels.channels() != 3 || pixels.height() < 1 || pixels.width() < 1)
    throw InputError("LDR image must be (3, H, W) with H, W >= 1, got " +
                     shape_string(pixels.shape()));
  for (double v : pixels.values())
    if (!(v >= 0.0 && v <= 1.0)) throw InputError("LDR pixel value outside [0,1]");
}

void DomainParams::validate() const {
  if (!(gamma > 0.0)) throw InputError("gamma must be > 0");
  if (!(mu > 0.0)) throw InputError("mu must be > 0");
  if (!(eps_sat > 0.0 && eps_sat <= 1.0)) throw InputError("eps_sat must lie in (0,1]");
  if (!(sat_threshold > 0.0 && sat_threshold < eps_sat))
    throw InputError("sat_threshold must lie in (0, eps_sat)");
}

std::array<double, 3> exposure_ratios(std::span<const double> biases) {
  if (biases.size() != 3) throw InputError("expected exactly three exposure biases");
  for (double b : biases)
    if (!std::isfinite(b)) throw InputError("non-finite exposure bias");
  if (!(biases[0] <= biases[1] && biases[1] <= biases[2])) {
    std::ostringstream os;
    os << "exposure biases not ordered short->long: " << biases[0] << ", " << biases[1] << ", "
       << biases[2];
    log_warning(os.str());
  }
  const double lo = *std::min_element(biases.begin(), biases.end());
  return {std::exp2(biases[0] - lo), std::exp2(biases[1] - lo), std::exp2(biases[2] - lo)};
}

RadianceMap to_radiance(const LdrImage& img, double exposure, const DomainParams& params) {
  if (!(exposure > 0.0) || !std::isfinite(exposure))
    throw InputError("relative exposure must be > 0");
  params.validate();
  RadianceMap out{Tensor(img.pixels.shape()), exposure};
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    out.pixels[i] = std::pow(img.pixels[i], params.gamma) / exposure;
  return out;
}

SaturationMask saturation_mask(const Tensor& img, double threshold) {
  if (img.rank() != 3 || img.channels() < 1)
    throw InputError("saturation_mask expects a (C, H, W) image");
  if (!std::isfinite(threshold)) throw InputError("saturation threshold must be finite");
  SaturationMask out{Tensor(1, img.height(), img.width())};
  const std::size_t plane = img.plane();
  for (std::size_t p = 0; p < plane; ++p) {
    double m = img.data()[p];
    for (int c = 1; c < img.channels(); ++c) m = std::max(m, img.data()[c * plane + p]);
    out.mask[p] = m >= threshold ? 1.0 : 0.0;
  }
  return out;
}

SaturationMask saturation_mask(const LdrImage& img, double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0))
    throw InputError("LDR saturation threshold must lie in (0,1]");
  return saturation_mask(img.pixels, threshold);
}

SaturationMask saturation_mask(const RadianceMap& img, double threshold) {
  return saturation_mask(img.pixels, threshold);
}

double ms_hdr_clip_level(double t_m, const DomainParams& params) {
  if (!(t_m > 0.0)) throw InputError("medium exposure must be > 0");
  return params.eps_sat / t_m;
}

RadianceMap ms_hdr_transform(const RadianceMap& h_s, double t_s, double t_m,
                             const DomainParams& params) {
  if (!(t_s > 0.0)) throw InputError("short exposure must be > 0");
  if (!(t_s < t_m)) throw InputError("ms_hdr_transform requires t_s < t_m");
  const double clip = ms_hdr_clip_level(t_m, params);
  RadianceMap out = h_s;
  for (double& v : out.pixels.values())
    if (v >= clip) v = clip;
  return out;
}

double mu_law(double h, double mu) { return std::log1p(mu * h) / std::log1p(mu); }

Tensor mu_law(const Tensor& h, double mu, bool clamp) {
  if (!(mu > 0.0)) throw InputError("mu must be > 0");
  Tensor out(h.shape());
  const double denom = std::log1p(mu);
  for (std::size_t i = 0; i < h.size(); ++i) {
    double v = h[i];
    if (!(v >= 0.0 && v <= 1.0)) {
      if (!clamp) throw InputError("mu_law input outside [0,1]");
      v = std::clamp(std::isnan(v) ? 0.0 : v, 0.0, 1.0);
    }
    out[i] = std::log1p(mu * v) / denom;
  }
  return out;
}

RadianceMap weighted_fusion(std::span<const RadianceMap, 3> stack,
                            std::span<const Tensor, 3> weights) {
  const Tensor& ref = stack[1].pixels;
  if (ref.rank() != 3) throw InputError("weighted_fusion expects (C, H, W) radiance maps");
  for (int k = 0; k < 3; ++k) {
    require_same_shape(stack[k].pixels, ref, "weighted_fusion radiance");
    if (weights[k].shape() != Shape{1, ref.height(), ref.width()})
      throw InputError("weight map must be (1, H, W)");
  }
  const std::size_t plane = ref.plane();
  for (std::size_t p = 0; p < plane; ++p) {
    double sum = 0.0;
    for (int k = 0; k < 3; ++k) {
      if (!(weights[k][p] >= 0.0)) throw InputError("negative fusion weight");
      sum += weights[k][p];
    }
    if (std::abs(sum - 1.0) > 1e-6) throw InputError("fusion weights do not sum to 1");
  }
  RadianceMap out{Tensor(ref.shape()), stack[1].exposure_scale};
  for (int c = 0; c < ref.channels(); ++c)
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t i = c * plane + p;
      out.pixels[i] = weights[0][p] * stack[0].pixels[i] + weights[1][p] * stack[1].pixels[i] +
                      weights[2][p] * stack[2].pixels[i];
    }
  return out;
}

std::array<Tensor, 3> triangle_weights(std::span<const LdrImage, 3> ldr) {
  const Tensor& ref = ldr[1].pixels;
  std::array<Tensor, 3> w;
  for (auto& t : w) t = Tensor(1, ref.height(), ref.width());
  const std::size_t plane = ref.plane();
  for (std::size_t p = 0; p < plane; ++p) {
    double sum = 0.0;
    for (int k = 0; k < 3; ++k) {
      const Tensor& img = ldr[k].pixels;
      const double mean = (img[p] + img[plane + p] + img[2 * plane + p]) / 3.0;
      w[k][p] = std::max(0.0, 1.0 - std::abs(2.0 * mean - 1.0));
      sum += w[k][p];
    }
    if (sum <= 0.0) {
      w[0][p] = 0.0;
      w[1][p] = 1.0;
      w[2][p] = 0.0;
    } else {
      for (int k = 0; k < 3; ++k) w[k][p] /= sum;
    }
  }
  return w;
}

}  // namespace apnt
