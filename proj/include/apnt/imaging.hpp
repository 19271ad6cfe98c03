#pragma once

#include <array>
#include <span>

#include "apnt/tensor.hpp"

namespace apnt {

/// Display-referred capture with values in [0,1], shape (3, H, W).
struct LdrImage {
  Tensor pixels;
  int bit_depth_origin = 16;  // provenance only

  void validate() const;
};

/// Linear-light image normalised by its relative exposure.
struct RadianceMap {
  Tensor pixels;
  double exposure_scale = 1.0;
};

/// Binary map, shape (1, H, W), values exactly 0 or 1.
struct SaturationMask {
  Tensor mask;
};

struct DomainParams {
  double gamma = 2.2;
  double mu = 5000.0;
  double eps_sat = 1.0;         // normalised sensor saturation level
  double sat_threshold = 0.98;  // LDR intensity for the binary mask

  void validate() const;
};

/// Relative exposures t_k = 2^(bias_k - min bias); the shortest capture maps to 1.
std::array<double, 3> exposure_ratios(std::span<const double> biases);

/// H = I^gamma / t.
RadianceMap to_radiance(const LdrImage& img, double exposure, const DomainParams& params);

/// mask(x) = 1 iff the largest channel at x reaches `threshold`.
SaturationMask saturation_mask(const Tensor& img, double threshold);
SaturationMask saturation_mask(const LdrImage& img, double threshold);
SaturationMask saturation_mask(const RadianceMap& img, double threshold);

/// Radiance at which the medium capture clips: eps_sat / t_m.
double ms_hdr_clip_level(double t_m, const DomainParams& params);

/// Masked-saturated transform of the short capture: every pixel at or above
/// the medium clip level is pinned to it, so both captures saturate alike.
RadianceMap ms_hdr_transform(const RadianceMap& h_s, double t_s, double t_m,
                             const DomainParams& params);

double mu_law(double h, double mu);
/// log(1 + mu H) / log(1 + mu), elementwise. Values outside [0,1] are an
/// InputError unless `clamp` is set.
Tensor mu_law(const Tensor& h, double mu, bool clamp = false);

/// Per-pixel convex combination of three exposure-normalised maps. Weight
/// maps are (1, H, W) and must sum to one at every pixel.
RadianceMap weighted_fusion(std::span<const RadianceMap, 3> stack,
                            std::span<const Tensor, 3> weights);

/// Triangle-hat weights on LDR intensity (channel mean), normalised per
/// pixel; pixels where every capture has zero hat weight fall back to the
/// medium capture.
std::array<Tensor, 3> triangle_weights(std::span<const LdrImage, 3> ldr);

}  // namespace apnt
