#include "apnt/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "apnt/config.hpp"
#include "apnt/error.hpp"

namespace apnt {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw InputError("learning_rate must be positive");
  if (batch_size < 1) throw InputError("batch_size must be at least 1");
  if (crop < 4 || crop % 4 != 0) throw InputError("crop must be a positive multiple of 4");
  if (max_steps < 0) throw InputError("max_steps must be non-negative");
  if (checkpoint_every < 1) throw InputError("checkpoint_every must be positive");
  if (!(mu > 0.0)) throw InputError("mu must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
    throw InputError("Adam betas must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw InputError("epsilon must be positive");
}

double loss_value(const Tensor& h_out, const Tensor& h_gt, double mu) {
  require_same_shape(h_out, h_gt, "loss");
  double s = 0.0;
  for (std::size_t i = 0; i < h_out.size(); ++i)
    s += std::abs(mu_law(h_out[i], mu) - mu_law(h_gt[i], mu));
  return s / static_cast<double>(h_out.size());
}

ad::Var loss(const ad::Var& h_out, const ad::Var& h_gt, double mu) {
  require_same_shape(h_out->value, h_gt->value, "loss");
  return ad::l1_mean(ad::mu_law(h_out, mu), ad::mu_law(h_gt, mu));
}

void adam_update(ParamStore& params, const std::map<std::string, Tensor>& grads,
                 AdamState& state, const TrainConfig& cfg) {
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [name, p] : params.tensors()) {
    auto g_it = grads.find(name);
    Tensor& m = state.m[name];
    Tensor& v = state.v[name];
    if (m.empty()) m = Tensor(p.shape(), 0.0);
    if (v.empty()) v = Tensor(p.shape(), 0.0);
    const bool has_grad = g_it != grads.end() && !g_it->second.empty();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = has_grad ? g_it->second[i] : 0.0;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double mh = m[i] / c1;
      const double vh = v[i] / c2;
      p[i] -= cfg.learning_rate * mh / (std::sqrt(vh) + cfg.epsilon);
    }
  }
}

void attach_matches(const Network& net, TrainingSample& sample) {
  if (net.matches_are_static() && !sample.matches) sample.matches = net.match_input(sample.input);
}

namespace {

void dump_trace(const fs::path& dir, std::int64_t step, const ForwardTrace& t) {
  fs::create_directories(dir);
  TensorArchive a;
  auto put = [&](const std::string& n, const Tensor& x) {
    if (!x.empty()) a.put(n, x);
  };
  put("motion_short", t.motion_short);
  put("motion_long", t.motion_long);
  put("sat_short", t.sat_short);
  put("sat_medium", t.sat_medium);
  put("mef_input", t.mef_input);
  put("mef_features", t.mef_features);
  put("nft_input", t.nft_input);
  for (int l = 0; l < 3; ++l) {
    const auto i = static_cast<std::size_t>(l);
    const std::string s = std::to_string(l);
    put("scale_attention" + s, t.scale_attention[i]);
    put("swapped" + s, t.swapped[i]);
    put("decoded" + s, t.decoded[i]);
  }
  put("h_mef", t.h_mef);
  put("fusion_weights", t.fusion_weights);
  a.save(dir / ("nonfinite_step" + std::to_string(step) + ".apnt"));
}

std::string trace_summary(const ForwardTrace& t) {
  std::ostringstream os;
  auto item = [&](const char* n, const Tensor& x) {
    if (x.empty()) return;
    os << " " << n << (all_finite(x) ? "=finite" : "=NONFINITE");
  };
  item("mef_features", t.mef_features);
  item("decoded0", t.decoded[0]);
  item("h_mef", t.h_mef);
  item("fusion_weights", t.fusion_weights);
  return os.str();
}

}  // namespace

double train_step(const Network& net, ParamStore& params, AdamState& state,
                  const TrainConfig& cfg, std::span<const TrainingSample> batch,
                  const fs::path& dump_dir) {
  if (batch.empty()) throw InputError("empty training batch");
  std::map<std::string, Tensor> grads;
  double total = 0.0;
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const auto& sample : batch) {
    if (sample.gt.empty()) throw InputError("training sample '" + sample.label + "' has no ground truth");
    BoundParams p(params, true);
    const MatchField* cached = sample.matches ? &*sample.matches : nullptr;
    ForwardResult fr = net.forward(p, sample.input, cached, false);
    ad::Var l = loss(fr.output, ad::constant(sample.gt), cfg.mu);
    const double value = l->value[0];
    if (!std::isfinite(value)) {
      ForwardResult traced = net.forward(BoundParams(params, false), sample.input, cached, true);
      if (!dump_dir.empty()) dump_trace(dump_dir, state.step + 1, traced.trace);
      throw TrainingError("non-finite loss at step " + std::to_string(state.step + 1) +
                          " on sample '" + sample.label + "':" + trace_summary(traced.trace));
    }
    total += value * scale;
    ad::Var scaled = ad::mul(l, ad::constant(Tensor(1, 1, 1, scale)));
    ad::backward(scaled);
    for (const auto& [name, var] : p.vars()) {
      if (var->grad.empty()) continue;
      Tensor& g = grads[name];
      if (g.empty()) {
        g = var->grad;
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += var->grad[i];
      }
    }
  }
  adam_update(params, grads, state, cfg);
  return total;
}

double evaluate_loss(const Network& net, const ParamStore& params, const TrainingSample& sample,
                     double mu) {
  const MatchField* cached = sample.matches ? &*sample.matches : nullptr;
  BoundParams p(params, false);
  return loss_value(net.forward(p, sample.input, cached, false).output->value, sample.gt, mu);
}

// ---- checkpoints ----

void save_checkpoint(const fs::path& path, const Checkpoint& c) {
  TensorArchive a;
  for (const auto& [n, t] : c.params.tensors()) a.put("param/" + n, t);
  for (const auto& [n, t] : c.adam.m) a.put("adam.m/" + n, t);
  for (const auto& [n, t] : c.adam.v) a.put("adam.v/" + n, t);
  a.put_text("format", "apnt-checkpoint-1");
  a.put_text("step", std::to_string(c.adam.step));
  a.put_text("net_config", to_json(c.net).dump());
  a.put_text("train_config", to_json(c.train).dump());
  a.put_text("domain", to_json(c.domain).dump());
  a.put_text("feature_source", c.feature_source);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  a.save(path);
}

Checkpoint load_checkpoint(const fs::path& path) {
  TensorArchive a = TensorArchive::load(path);
  if (!a.contains_text("format") || a.text("format") != "apnt-checkpoint-1")
    throw FormatError(path.string() + " is not a checkpoint");
  Checkpoint c;
  try {
    from_json(Json::parse(a.text("net_config")), c.net);
    from_json(Json::parse(a.text("train_config")), c.train);
    from_json(Json::parse(a.text("domain")), c.domain);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": bad embedded config: " + e.what());
  }
  c.adam.step = std::stoll(a.text("step"));
  if (a.contains_text("feature_source")) c.feature_source = a.text("feature_source");
  for (const auto& name : a.names()) {
    auto strip = [&](const std::string& prefix) { return name.substr(prefix.size()); };
    if (name.rfind("param/", 0) == 0) c.params.add(strip("param/"), a.at(name));
    else if (name.rfind("adam.m/", 0) == 0) c.adam.m[strip("adam.m/")] = a.at(name);
    else if (name.rfind("adam.v/", 0) == 0) c.adam.v[strip("adam.v/")] = a.at(name);
  }
  const auto expected = parameter_shapes(c.net);
  for (const auto& [n, shape] : expected) {
    if (!c.params.contains(n)) throw LoadError(path.string() + ": missing parameter '" + n + "'");
    if (c.params.at(n).shape() != shape)
      throw LoadError(path.string() + ": parameter '" + n + "' has shape " +
                      shape_string(c.params.at(n).shape()) + ", expected " + shape_string(shape));
  }
  if (c.params.size() != expected.size())
    throw LoadError(path.string() + ": unexpected extra parameters");
  return c;
}

std::string checkpoint_name(std::int64_t step) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "ckpt_step%08lld.apnt", static_cast<long long>(step));
  return buf;
}

std::optional<fs::path> latest_checkpoint(const fs::path& dir) {
  std::optional<fs::path> best;
  if (!fs::is_directory(dir)) return best;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string n = e.path().filename().string();
    if (n.rfind("ckpt_step", 0) == 0 && e.path().extension() == ".apnt")
      if (!best || n > best->filename().string()) best = e.path();
  }
  return best;
}

// ---- batches ----

BatchProvider fixed_batches(std::vector<TrainingSample> samples, int batch_size) {
  if (samples.empty()) throw InputError("fixed_batches needs at least one sample");
  auto shared = std::make_shared<std::vector<TrainingSample>>(std::move(samples));
  return [shared, batch_size](std::int64_t step) {
    std::vector<TrainingSample> out;
    const auto n = static_cast<std::int64_t>(shared->size());
    for (int i = 0; i < batch_size; ++i)
      out.push_back((*shared)[static_cast<std::size_t>((step * batch_size + i) % n)]);
    return out;
  };
}

BatchProvider random_crop_batches(const Network& net, std::vector<SceneRecord> scenes,
                                  const TrainConfig& cfg) {
  if (scenes.empty()) throw InputError("no training scenes");
  struct Prepared {
    ModelInput input;
    Tensor gt;
    std::string id;
  };
  auto prepared = std::make_shared<std::vector<Prepared>>();
  for (const auto& s : scenes) {
    if (!s.gt_hdr) throw InputError("training scene '" + s.scene_id + "' has no ground truth");
    if (s.height() < cfg.crop || s.width() < cfg.crop)
      throw InputError("training scene '" + s.scene_id + "' is smaller than the crop");
    prepared->push_back({prepare_input(s, net.domain()), s.gt_hdr->pixels, s.scene_id});
  }
  const Network* np = &net;
  return [prepared, np, cfg](std::int64_t step) {
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32)};
    std::mt19937_64 rng(seq);
    std::vector<TrainingSample> out;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto& sc = (*prepared)[std::uniform_int_distribution<std::size_t>(
          0, prepared->size() - 1)(rng)];
      const int y0 = std::uniform_int_distribution<int>(0, sc.input.height() - cfg.crop)(rng);
      const int x0 = std::uniform_int_distribution<int>(0, sc.input.width() - cfg.crop)(rng);
      TrainingSample s;
      s.input = crop_input(sc.input, y0, x0, cfg.crop, cfg.crop);
      s.gt = crop(sc.gt, y0, x0, cfg.crop, cfg.crop);
      s.label = sc.id + "@" + std::to_string(y0) + "," + std::to_string(x0);
      attach_matches(*np, s);
      out.push_back(std::move(s));
    }
    return out;
  };
}

// ---- loop ----

TrainLoopResult train_loop(const Network& net, ParamStore initial, const TrainConfig& cfg,
                           const BatchProvider& batches, const TrainLoopOptions& opt) {
  cfg.validate();
  fs::create_directories(opt.out_dir);
  TrainLoopResult r;
  Checkpoint ck;
  ck.net = net.config();
  ck.train = cfg;
  ck.domain = net.domain();
  ck.feature_source = opt.feature_source;
  const fs::path log_path = opt.out_dir / "loss_log.csv";
  std::ofstream log;
  if (opt.resume_from) {
    Checkpoint loaded = load_checkpoint(*opt.resume_from);
    r.params = std::move(loaded.params);
    r.adam = std::move(loaded.adam);
    log.open(log_path, std::ios::app);
  } else {
    r.params = std::move(initial);
    log.open(log_path, std::ios::trunc);
    log << "step,loss,wall_time\n";
    ck.params = r.params;
    ck.adam = r.adam;
    const fs::path p = opt.out_dir / checkpoint_name(0);
    save_checkpoint(p, ck);
    r.checkpoints.push_back(p);
  }
  if (!log) throw LoadError("cannot write " + log_path.string());
  log << std::setprecision(17);
  const auto t0 = std::chrono::steady_clock::now();
  while (r.adam.step < cfg.max_steps) {
    if (opt.stop_after && r.adam.step >= *opt.stop_after) break;
    const std::vector<TrainingSample> batch = batches(r.adam.step);
    const double l = train_step(net, r.params, r.adam, cfg, batch, opt.out_dir);
    r.losses.push_back(l);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log << r.adam.step << "," << l << "," << wall << "\n";
    log.flush();
    const bool last = r.adam.step == cfg.max_steps ||
                      (opt.stop_after && r.adam.step == *opt.stop_after);
    if (r.adam.step % cfg.checkpoint_every == 0 || last) {
      ck.params = r.params;
      ck.adam = r.adam;
      const fs::path p = opt.out_dir / checkpoint_name(r.adam.step);
      save_checkpoint(p, ck);
      r.checkpoints.push_back(p);
    }
  }
  return r;
}

// ---- gradient audit ----

AuditReport gradient_audit(const Network& net, const ParamStore& params,
                           const TrainingSample& sample, const AuditOptions& options) {
  const int count = options.count;
  const double h = options.h;
  TrainingSample s = sample;
  attach_matches(net, s);
  const double mu = net.domain().mu;
  BoundParams p(params, true);
  const MatchField* cached = s.matches ? &*s.matches : nullptr;
  ad::GatePattern pattern(ad::GatePattern::Mode::record);
  {
    std::optional<ad::GateScope> scope;
    if (options.freeze_gates) scope.emplace(pattern);
    ForwardResult fr = net.forward(p, s.input, cached, false);
    ad::backward(loss(fr.output, ad::constant(s.gt), mu));
  }
  pattern.set_mode(ad::GatePattern::Mode::replay);
  auto eval = [&](const ParamStore& w) {
    if (!options.freeze_gates) return evaluate_loss(net, w, s, mu);
    pattern.set_mode(ad::GatePattern::Mode::replay);
    ad::GateScope scope(pattern);
    BoundParams bw(w, false);
    return loss(net.forward(bw, s.input, cached, false).output, ad::constant(s.gt), mu)->value[0];
  };
  std::mt19937_64 rng(options.seed);

  std::vector<std::string> names = params.names();
  std::vector<std::size_t> offsets{0};
  for (const auto& n : names) offsets.push_back(offsets.back() + params.at(n).size());
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  std::vector<std::size_t> order(names.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t t : order) {
    if (!options.stratified || static_cast<int>(coords.size()) >= count) break;
    coords.emplace_back(t, std::uniform_int_distribution<std::size_t>(
                               0, params.at(names[t]).size() - 1)(rng));
  }
  std::uniform_int_distribution<std::size_t> any(0, offsets.back() - 1);
  while (static_cast<int>(coords.size()) < count) {
    const std::size_t g = any(rng);
    const auto t = static_cast<std::size_t>(
        std::upper_bound(offsets.begin(), offsets.end(), g) - offsets.begin() - 1);
    coords.emplace_back(t, g - offsets[t]);
  }

  AuditReport rep;
  rep.options = options;
  ParamStore work = params;
  std::vector<double> errs;
  for (const auto& [t, i] : coords) {
    AuditEntry e;
    e.name = names[t];
    e.index = i;
    const Tensor& g = p(e.name)->grad;
    e.analytic = g.empty() ? 0.0 : g[i];
    double& slot = work.at(e.name)[i];
    const double orig = slot;
    slot = orig + h;
    const double lp = eval(work);
    slot = orig - h;
    const double lm = eval(work);
    slot = orig;
    e.numeric = (lp - lm) / (2.0 * h);
    const double denom = std::max(std::abs(e.analytic), std::abs(e.numeric));
    e.relative_error = denom == 0.0 ? 0.0 : std::abs(e.analytic - e.numeric) / denom;
    e.agrees = e.relative_error < options.tolerance ||
               (e.analytic == 0.0 && std::abs(e.numeric) < 1e-8);
    errs.push_back(e.relative_error);
    rep.entries.push_back(e);
  }
  if (!errs.empty()) {
    rep.max_relative_error = *std::max_element(errs.begin(), errs.end());
    std::vector<double> sorted = errs;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    rep.median_relative_error =
        n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    const auto ok = std::count_if(rep.entries.begin(), rep.entries.end(),
                                  [](const AuditEntry& e) { return e.agrees; });
    rep.fraction_agreeing = static_cast<double>(ok) / static_cast<double>(n);
  }
  return rep;
}

}  // namespace apnt
