#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "apnt/kernels.hpp"
#include "apnt/matcher.hpp"
#include "apnt/tensor.hpp"

/// Minimal reverse-mode differentiation over rank-3 tensors. A node keeps
/// its parents only while some ancestor requires a gradient, so inference
/// graphs release intermediates as soon as they go out of scope.
namespace apnt::ad {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backward;

  Tensor& grad_buffer();
};

/// Records the active set of every piecewise op (relu, clamp01, l1_mean)
/// during one forward pass, then replays it on later passes so that
/// perturbed evaluations stay on the same smooth piece.
class GatePattern {
 public:
  enum class Mode { record, replay };
  explicit GatePattern(Mode mode) : mode_(mode) {}
  Mode mode() const { return mode_; }
  void set_mode(Mode m) {
    mode_ = m;
    cursor_ = 0;
  }
  std::vector<signed char>& next(std::size_t size);
  std::size_t size() const { return gates_.size(); }

 private:
  Mode mode_;
  std::vector<std::vector<signed char>> gates_;
  std::size_t cursor_ = 0;
};

/// Makes `pattern` current for the calling thread while alive.
class GateScope {
 public:
  explicit GateScope(GatePattern& pattern);
  ~GateScope();
  GateScope(const GateScope&) = delete;
  GateScope& operator=(const GateScope&) = delete;

 private:
  GatePattern* previous_;
};

Var constant(Tensor value);
Var parameter(Tensor value);

/// Seeds d(root)/d(root) = 1 for a single-element root and propagates.
void backward(const Var& root);

Var conv2d(const Var& x, const Var& weight, const Var& bias,
           kernels::Padding pad = kernels::Padding::zero);
Var conv_transpose(const Var& x, const Var& weight, const Var& bias);
Var relu(const Var& x);
Var sigmoid(const Var& x);
Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
/// x (C, H, W) scaled per channel by s (C, 1, 1).
Var channel_scale(const Var& x, const Var& s);
Var one_minus(const Var& x);
Var concat(const std::vector<Var>& parts);
Var downsample2(const Var& x);
Var global_avg_pool(const Var& x);
Var clamp01(const Var& x);
Var mu_law(const Var& x, double mu);
/// Mean absolute difference, a scalar (1, 1, 1).
Var l1_mean(const Var& a, const Var& b);
Var swap_level(const Var& target, const Var& source, const MatchLevel& matches, int patch,
               int stride);

}  // namespace apnt::ad
