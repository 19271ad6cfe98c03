#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "apnt/dataset.hpp"
#include "apnt/network.hpp"

namespace apnt {

inline constexpr double kPsnrCap = 100.0;

/// Tone curve used by the "mu" metrics. `identity` replaces the mu-law
/// (testing hook).
struct MetricDomain {
  double mu = 5000.0;
  bool identity = false;
};

double psnr_from_mse(double mse);
double psnr_linear(const Tensor& out, const Tensor& gt);
double psnr_mu(const Tensor& out, const Tensor& gt, double mu);
double psnr_mu(const Tensor& out, const Tensor& gt, const MetricDomain& domain);

enum class SsimDomain { linear, mu };
/// Gaussian-window SSIM (11x11, sigma 1.5, K1 0.01, K2 0.03, L 1) over
/// valid window positions, averaged per channel.
double ssim(const Tensor& out, const Tensor& gt, SsimDomain domain, double mu = 5000.0);
double ssim(const Tensor& out, const Tensor& gt, SsimDomain domain, const MetricDomain& md);

struct SceneMetrics {
  std::string scene_id;
  double psnr_l = 0.0;
  double psnr_mu = 0.0;
  double ssim_l = 0.0;
  double ssim_mu = 0.0;
};

SceneMetrics compute_metrics(const std::string& id, const Tensor& out, const Tensor& gt,
                             const MetricDomain& domain);

struct ReferenceMetrics {
  double psnr_mu = 43.96;
  double psnr_l = 41.69;
  double ssim_mu = 0.9957;
  double ssim_l = 0.9914;
};

struct MetricsReport {
  std::vector<SceneMetrics> scenes;
  SceneMetrics aggregate{"mean"};
  std::vector<std::string> skipped;  // scenes without ground truth
  std::string config_fingerprint;
  ReferenceMetrics reference;

  void recompute_aggregate();
  void write_csv(const std::filesystem::path& path) const;
  void write_json(const std::filesystem::path& path) const;
  static std::vector<SceneMetrics> read_csv(const std::filesystem::path& path);
};

/// Restored radiance for a prepared scene.
using Predictor = std::function<Tensor(const ModelInput&)>;

Predictor network_predictor(const Network& net, const ParamStore& params);

/// Metrics over every scene with ground truth; `margin` pixels are trimmed
/// from each border before scoring (the prediction still sees the whole
/// scene).
MetricsReport evaluate_dataset(const std::vector<SceneRecord>& scenes, const Predictor& predict,
                               const DomainParams& params, int margin = 0,
                               const MetricDomain& metric = {});

struct SweepRow {
  int delta = 0;
  double psnr_mu = 0.0;
};

/// PSNR-mu per translation, scored on the interior (margin = largest delta).
std::vector<SweepRow> translation_sweep(const std::vector<SceneRecord>& scenes,
                                        const Predictor& predict, const DomainParams& params,
                                        const std::vector<int>& deltas,
                                        const MetricDomain& metric = {});
void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows);

/// Published PSNR-mu change of each variant against the full model.
const std::map<std::string, double>& reference_ablation_deltas();

struct AblationRow {
  std::string variant;  // "full" for the reference model
  SceneMetrics metrics;
  double delta_psnr_mu = 0.0;
  double reference_delta_psnr_mu = 0.0;  // reference only, 0 for "full"
};

struct AblationReport {
  std::vector<AblationRow> rows;

  void write_csv(const std::filesystem::path& path) const;
  void write_json(const std::filesystem::path& path) const;
};

/// Trains and evaluates the full model and each variant through the same
/// callback (identical seeds and budgets are the callback's job).
AblationReport ablation_suite(const NetConfig& base, const std::vector<std::string>& variants,
                              const std::function<MetricsReport(const NetConfig&)>& run);

}  // namespace apnt
