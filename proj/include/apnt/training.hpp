#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "apnt/network.hpp"

namespace apnt {

struct TrainConfig {
  double learning_rate = 1e-5;
  int batch_size = 1;
  int crop = 256;
  int max_steps = 1000;
  std::uint64_t seed = 0;
  int checkpoint_every = 100;
  double mu = 5000.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

/// Mean absolute difference of the mu-law tone-mapped images.
double loss_value(const Tensor& h_out, const Tensor& h_gt, double mu);
ad::Var loss(const ad::Var& h_out, const ad::Var& h_gt, double mu);

struct AdamState {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  std::int64_t step = 0;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

void adam_update(ParamStore& params, const std::map<std::string, Tensor>& grads,
                 AdamState& state, const TrainConfig& config);

struct TrainingSample {
  ModelInput input;
  Tensor gt;
  std::optional<MatchField> matches;  // precomputed extractor matches
  std::string label;
};

/// Attaches extractor matches when the network's configuration allows it.
void attach_matches(const Network& net, TrainingSample& sample);

/// One optimizer step over a batch; returns the batch loss before the update.
/// A non-finite loss raises TrainingError; when `dump_dir` is set the trace of
/// the offending sample is written there first.
double train_step(const Network& net, ParamStore& params, AdamState& state,
                  const TrainConfig& config, std::span<const TrainingSample> batch,
                  const std::filesystem::path& dump_dir = {});

double evaluate_loss(const Network& net, const ParamStore& params, const TrainingSample& sample,
                     double mu);

// ---- checkpoints ----

struct Checkpoint {
  ParamStore params;
  AdamState adam;
  NetConfig net;
  TrainConfig train;
  DomainParams domain;
  std::string feature_source;  // "handcrafted" or "backbone"
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::string checkpoint_name(std::int64_t step);
/// Highest-step checkpoint in a directory, if any.
std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& dir);

// ---- loop ----

/// Batch for a step; must depend only on the step index (and fixed state).
using BatchProvider = std::function<std::vector<TrainingSample>(std::int64_t step)>;

/// Cycles through a fixed list of samples.
BatchProvider fixed_batches(std::vector<TrainingSample> samples, int batch_size);
/// Random crops drawn from an rng seeded by (seed, step).
BatchProvider random_crop_batches(const Network& net, std::vector<SceneRecord> scenes,
                                  const TrainConfig& config);

struct TrainLoopOptions {
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume_from;
  std::string feature_source = "handcrafted";
  // Stop after this step even if max_steps is larger (simulated interruption).
  std::optional<std::int64_t> stop_after;
};

struct TrainLoopResult {
  ParamStore params;
  AdamState adam;
  std::vector<double> losses;  // losses of the steps run in this call
  std::vector<std::filesystem::path> checkpoints;
};

/// Writes `ckpt_stepNNNNNNNN.apnt` files and appends `loss_log.csv`
/// (step, loss, wall_time). A fresh run checkpoints its initial state.
TrainLoopResult train_loop(const Network& net, ParamStore initial, const TrainConfig& config,
                           const BatchProvider& batches, const TrainLoopOptions& options);

// ---- gradient audit ----

struct AuditEntry {
  std::string name;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double relative_error = 0.0;
  bool agrees = false;
};

struct AuditOptions {
  int count = 200;
  std::uint64_t seed = 0;
  double h = 1e-4;
  double tolerance = 1e-3;
  // Evaluate the perturbed losses with the relu / clamp / abs active sets of
  // the unperturbed pass. Without it, steps that cross a kink compare the
  // one-piece gradient against a two-piece secant.
  bool freeze_gates = true;
  // Draw one coordinate from every tensor before sampling uniformly.
  bool stratified = false;
};

struct AuditReport {
  std::vector<AuditEntry> entries;
  double max_relative_error = 0.0;
  double median_relative_error = 0.0;
  double fraction_agreeing = 0.0;
  AuditOptions options;
};

/// Central differences on `count` parameter coordinates drawn uniformly over
/// all scalars.
AuditReport gradient_audit(const Network& net, const ParamStore& params,
                           const TrainingSample& sample, const AuditOptions& options = {});

}  // namespace apnt
