#include "apnt/evaluation.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "apnt/config.hpp"
#include "apnt/error.hpp"

namespace apnt {

namespace fs = std::filesystem;

namespace {

Tensor tone(const Tensor& t, const MetricDomain& d) {
  if (d.identity) return t;
  return mu_law(t, d.mu, true);
}

std::array<double, 11> gaussian_window() {
  std::array<double, 11> w{};
  double s = 0.0;
  for (int i = 0; i < 11; ++i) {
    const double x = i - 5;
    w[static_cast<std::size_t>(i)] = std::exp(-x * x / (2.0 * 1.5 * 1.5));
    s += w[static_cast<std::size_t>(i)];
  }
  for (double& v : w) v /= s;
  return w;
}

// Separable valid-mode filtering of one plane.
std::vector<double> filter_valid(const std::vector<double>& in, int h, int w) {
  static const auto g = gaussian_window();
  const int oh = h - 10, ow = w - 10;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < 11; ++k)
        s += g[static_cast<std::size_t>(k)] * in[static_cast<std::size_t>(y) * w + x + k];
      tmp[static_cast<std::size_t>(y) * ow + x] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < 11; ++k)
        s += g[static_cast<std::size_t>(k)] * tmp[static_cast<std::size_t>(y + k) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

double psnr_from_mse(double mse) {
  if (!(mse >= 0.0)) throw InputError("MSE must be non-negative");
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

double psnr_linear(const Tensor& out, const Tensor& gt) {
  require_same_shape(out, gt, "psnr");
  if (out.empty()) throw InputError("psnr of empty images");
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double d = out[i] - gt[i];
    s += d * d;
  }
  return psnr_from_mse(s / static_cast<double>(out.size()));
}

double psnr_mu(const Tensor& out, const Tensor& gt, double mu) {
  return psnr_mu(out, gt, MetricDomain{mu, false});
}

double psnr_mu(const Tensor& out, const Tensor& gt, const MetricDomain& d) {
  require_same_shape(out, gt, "psnr_mu");
  return psnr_linear(tone(out, d), tone(gt, d));
}

double ssim(const Tensor& out, const Tensor& gt, SsimDomain domain, double mu) {
  return ssim(out, gt, domain, MetricDomain{mu, false});
}

double ssim(const Tensor& out, const Tensor& gt, SsimDomain domain, const MetricDomain& md) {
  require_same_shape(out, gt, "ssim");
  if (out.rank() != 3 || out.height() < 11 || out.width() < 11)
    throw InputError("ssim needs images of at least 11x11, got " + shape_string(out.shape()));
  const Tensor a = domain == SsimDomain::mu ? tone(out, md) : out;
  const Tensor b = domain == SsimDomain::mu ? tone(gt, md) : gt;
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const int h = a.height(), w = a.width();
  const std::size_t n = a.plane();
  double total = 0.0;
  for (int c = 0; c < a.channels(); ++c) {
    std::vector<double> x(a.channel_data(c), a.channel_data(c) + n);
    std::vector<double> y(b.channel_data(c), b.channel_data(c) + n);
    std::vector<double> xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, h, w), my = filter_valid(y, h, w);
    const auto exx = filter_valid(xx, h, w), eyy = filter_valid(yy, h, w),
               exy = filter_valid(xy, h, w);
    double s = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double sx = exx[i] - mx[i] * mx[i];
      const double sy = eyy[i] - my[i] * my[i];
      const double sxy = exy[i] - mx[i] * my[i];
      s += ((2.0 * mx[i] * my[i] + c1) * (2.0 * sxy + c2)) /
           ((mx[i] * mx[i] + my[i] * my[i] + c1) * (sx + sy + c2));
    }
    total += s / static_cast<double>(mx.size());
  }
  return total / a.channels();
}

SceneMetrics compute_metrics(const std::string& id, const Tensor& out, const Tensor& gt,
                             const MetricDomain& d) {
  SceneMetrics m;
  m.scene_id = id;
  m.psnr_l = psnr_linear(out, gt);
  m.psnr_mu = psnr_mu(out, gt, d);
  m.ssim_l = ssim(out, gt, SsimDomain::linear, d);
  m.ssim_mu = ssim(out, gt, SsimDomain::mu, d);
  return m;
}

void MetricsReport::recompute_aggregate() {
  aggregate = SceneMetrics{"mean"};
  if (scenes.empty()) return;
  for (const auto& s : scenes) {
    aggregate.psnr_l += s.psnr_l;
    aggregate.psnr_mu += s.psnr_mu;
    aggregate.ssim_l += s.ssim_l;
    aggregate.ssim_mu += s.ssim_mu;
  }
  const double n = static_cast<double>(scenes.size());
  aggregate.psnr_l /= n;
  aggregate.psnr_mu /= n;
  aggregate.ssim_l /= n;
  aggregate.ssim_mu /= n;
}

void MetricsReport::write_csv(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write " + path.string());
  out << "scene_id,psnr_l,psnr_mu,ssim_l,ssim_mu\n";
  for (const auto& s : scenes)
    out << s.scene_id << "," << fmt(s.psnr_l) << "," << fmt(s.psnr_mu) << "," << fmt(s.ssim_l)
        << "," << fmt(s.ssim_mu) << "\n";
}

std::vector<SceneMetrics> MetricsReport::read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<SceneMetrics> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    SceneMetrics m;
    std::string cell;
    std::getline(ss, m.scene_id, ',');
    double* fields[] = {&m.psnr_l, &m.psnr_mu, &m.ssim_l, &m.ssim_mu};
    for (double* f : fields) {
      if (!std::getline(ss, cell, ',')) throw FormatError(path.string() + ": short row");
      *f = std::stod(cell);
    }
    rows.push_back(m);
  }
  return rows;
}

namespace {

Json metrics_json(const SceneMetrics& m) {
  return Json{{"scene_id", m.scene_id},
              {"psnr_l", m.psnr_l},
              {"psnr_mu", m.psnr_mu},
              {"ssim_l", m.ssim_l},
              {"ssim_mu", m.ssim_mu}};
}

}  // namespace

void MetricsReport::write_json(const fs::path& path) const {
  Json j;
  j["aggregate"] = metrics_json(aggregate);
  j["scene_count"] = scenes.size();
  j["scenes"] = Json::array();
  for (const auto& s : scenes) j["scenes"].push_back(metrics_json(s));
  j["skipped"] = skipped;
  j["config_fingerprint"] = config_fingerprint;
  j["reference"] = {{"psnr_mu", reference.psnr_mu},
                          {"psnr_l", reference.psnr_l},
                          {"ssim_mu", reference.ssim_mu},
                          {"ssim_l", reference.ssim_l},
                          {"binding", false}};
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write " + path.string());
  out << std::setw(2) << j << "\n";
}

Predictor network_predictor(const Network& net, const ParamStore& params) {
  return [&net, params](const ModelInput& in) { return net.infer(params, in); };
}

MetricsReport evaluate_dataset(const std::vector<SceneRecord>& scenes, const Predictor& predict,
                               const DomainParams& params, int margin,
                               const MetricDomain& metric) {
  if (margin < 0) throw InputError("margin must be non-negative");
  MetricsReport rep;
  for (const auto& s : scenes) {
    if (!s.gt_hdr) {
      log_warning("scene '" + s.scene_id + "' has no ground truth; skipped");
      rep.skipped.push_back(s.scene_id);
      continue;
    }
    const ModelInput in = prepare_input(s, params);
    const Tensor out = predict(in);
    const Tensor& gt = s.gt_hdr->pixels;
    require_same_shape(out, gt, "prediction of '" + s.scene_id + "'");
    const int h = gt.height() - 2 * margin, w = gt.width() - 2 * margin;
    if (h < 11 || w < 11)
      throw InputError("scene '" + s.scene_id + "' is too small for margin " +
                       std::to_string(margin));
    rep.scenes.push_back(compute_metrics(s.scene_id, crop(out, margin, margin, h, w),
                                         crop(gt, margin, margin, h, w), metric));
  }
  rep.recompute_aggregate();
  return rep;
}

std::vector<SweepRow> translation_sweep(const std::vector<SceneRecord>& scenes,
                                        const Predictor& predict, const DomainParams& params,
                                        const std::vector<int>& deltas,
                                        const MetricDomain& metric) {
  int margin = 0;
  for (int d : deltas) {
    if (d < 0) throw InputError("translation deltas must be non-negative");
    margin = std::max(margin, d);
  }
  std::vector<SweepRow> rows;
  for (int d : deltas) {
    std::vector<SceneRecord> shifted;
    shifted.reserve(scenes.size());
    for (const auto& s : scenes) shifted.push_back(apply_translation(s, d));
    const MetricsReport r = evaluate_dataset(shifted, predict, params, margin, metric);
    rows.push_back({d, r.aggregate.psnr_mu});
  }
  return rows;
}

void write_sweep_csv(const fs::path& path, const std::vector<SweepRow>& rows) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write " + path.string());
  out << "delta,psnr_mu\n";
  for (const auto& r : rows) out << r.delta << "," << fmt(r.psnr_mu) << "\n";
}

const std::map<std::string, double>& reference_ablation_deltas() {
  static const std::map<std::string, double> d{
      {"no_ms_hdr", -0.85},
      {"no_nft", -1.59},
      {"single_scale_vgg", -0.28},
      {"match_with_encoder_features", -0.39},
      {"no_motion_attention", -2.23},
      {"no_scale_attention", -0.61},
  };
  return d;
}

void AblationReport::write_csv(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write " + path.string());
  out << "variant,psnr_l,psnr_mu,ssim_l,ssim_mu,delta_psnr_mu,reference_delta_psnr_mu\n";
  for (const auto& r : rows)
    out << r.variant << "," << fmt(r.metrics.psnr_l) << "," << fmt(r.metrics.psnr_mu) << ","
        << fmt(r.metrics.ssim_l) << "," << fmt(r.metrics.ssim_mu) << "," << fmt(r.delta_psnr_mu)
        << "," << fmt(r.reference_delta_psnr_mu) << "\n";
}

void AblationReport::write_json(const fs::path& path) const {
  Json j = Json::array();
  for (const auto& r : rows)
    j.push_back({{"variant", r.variant},
                 {"metrics", metrics_json(r.metrics)},
                 {"delta_psnr_mu", r.delta_psnr_mu},
                 {"reference_delta_psnr_mu", r.reference_delta_psnr_mu},
                 {"reference_binding", false}});
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write " + path.string());
  out << std::setw(2) << Json{{"rows", j}} << "\n";
}

AblationReport ablation_suite(const NetConfig& base, const std::vector<std::string>& variants,
                              const std::function<MetricsReport(const NetConfig&)>& run) {
  AblationReport rep;
  const MetricsReport full = run(base);
  rep.rows.push_back({"full", full.aggregate, 0.0, 0.0});
  for (const auto& v : variants) {
    NetConfig cfg = base;
    set_ablation(cfg.ablation, v, true);
    const MetricsReport r = run(cfg);
    const auto& ref = reference_ablation_deltas();
    auto it = ref.find(v);
    rep.rows.push_back({v, r.aggregate, r.aggregate.psnr_mu - full.aggregate.psnr_mu,
                        it == ref.end() ? 0.0 : it->second});
  }
  return rep;
}

}  // namespace apnt
