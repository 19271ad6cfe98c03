#include "apnt/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "apnt/error.hpp"

namespace apnt::ad {

Tensor& Node::grad_buffer() {
  if (grad.empty() && !value.empty()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

namespace {

Var make(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = std::any_of(parents.begin(), parents.end(),
                                 [](const Var& p) { return p && p->requires_grad; });
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward = std::move(fn);
  }
  return n;
}

bool wants(const Var& v) { return v && v->requires_grad; }

thread_local GatePattern* current_pattern = nullptr;

// Gate values: -1 below, 0 inside / inactive, 1 above / active. Returns
// nullptr when no pattern is current.
std::vector<signed char>* gates(std::size_t size) {
  return current_pattern ? &current_pattern->next(size) : nullptr;
}

bool replaying() {
  return current_pattern && current_pattern->mode() == GatePattern::Mode::replay;
}

}  // namespace

std::vector<signed char>& GatePattern::next(std::size_t size) {
  if (mode_ == Mode::record) {
    gates_.emplace_back(size, 0);
    return gates_.back();
  }
  if (cursor_ >= gates_.size() || gates_[cursor_].size() != size)
    throw StructuralError("gate pattern replay does not follow the recorded graph");
  return gates_[cursor_++];
}

GateScope::GateScope(GatePattern& pattern) : previous_(current_pattern) {
  current_pattern = &pattern;
}

GateScope::~GateScope() { current_pattern = previous_; }

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return n;
}

Var parameter(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return n;
}

void backward(const Var& root) {
  if (root->value.size() != 1) throw StructuralError("backward needs a scalar root");
  if (!root->requires_grad) return;
  // Post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p && p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, kernels::Padding pad) {
  Tensor y = kernels::conv2d(x->value, weight->value, bias ? &bias->value : nullptr, pad);
  return make(std::move(y), {x, weight, bias}, [pad](Node& self) {
    const Var& x = self.parents[0];
    const Var& w = self.parents[1];
    const Var& b = self.parents[2];
    kernels::conv2d_backward(x->value, w->value, pad, self.grad,
                             wants(x) ? &x->grad_buffer() : nullptr,
                             wants(w) ? &w->grad_buffer() : nullptr,
                             wants(b) ? &b->grad_buffer() : nullptr);
  });
}

Var conv_transpose(const Var& x, const Var& weight, const Var& bias) {
  Tensor y = kernels::conv_transpose(x->value, weight->value, bias ? &bias->value : nullptr);
  return make(std::move(y), {x, weight, bias}, [](Node& self) {
    const Var& x = self.parents[0];
    const Var& w = self.parents[1];
    const Var& b = self.parents[2];
    kernels::conv_transpose_backward(x->value, w->value, self.grad,
                                     wants(x) ? &x->grad_buffer() : nullptr,
                                     wants(w) ? &w->grad_buffer() : nullptr,
                                     wants(b) ? &b->grad_buffer() : nullptr);
  });
}

Var relu(const Var& x) {
  Tensor y = x->value;
  std::vector<signed char> active(y.size());
  std::vector<signed char>* pattern = gates(y.size());
  const bool replay = replaying();
  for (std::size_t i = 0; i < y.size(); ++i) {
    active[i] = replay ? (*pattern)[i] : (y[i] > 0.0 ? 1 : 0);
    if (!active[i]) y[i] = 0.0;
  }
  if (pattern && !replay) *pattern = active;
  return make(std::move(y), {x}, [active = std::move(active)](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (active[i]) g[i] += self.grad[i];
  });
}

Var sigmoid(const Var& x) {
  Tensor y = x->value;
  for (double& v : y.values()) v = 1.0 / (1.0 + std::exp(-v));
  return make(std::move(y), {x}, [](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = self.value[i];
      g[i] += self.grad[i] * s * (1.0 - s);
    }
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "add");
  Tensor y = a->value;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b->value[i];
  return make(std::move(y), {a, b}, [](Node& self) {
    for (const Var& p : self.parents)
      if (wants(p)) {
        Tensor& g = p->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "mul");
  Tensor y = a->value;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b->value[i];
  return make(std::move(y), {a, b}, [](Node& self) {
    const Var& a = self.parents[0];
    const Var& b = self.parents[1];
    if (wants(a)) {
      Tensor& g = a->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * b->value[i];
    }
    if (wants(b)) {
      Tensor& g = b->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * a->value[i];
    }
  });
}

Var channel_scale(const Var& x, const Var& s) {
  const Tensor& xv = x->value;
  if (s->value.shape() != Shape{xv.channels(), 1, 1})
    throw StructuralError("channel_scale: scale " + shape_string(s->value.shape()) +
                          " does not fit " + shape_string(xv.shape()));
  Tensor y = xv;
  for (int c = 0; c < xv.channels(); ++c) {
    double* d = y.channel_data(c);
    const double k = s->value[static_cast<std::size_t>(c)];
    for (std::size_t i = 0; i < y.plane(); ++i) d[i] *= k;
  }
  return make(std::move(y), {x, s}, [](Node& self) {
    const Var& x = self.parents[0];
    const Var& s = self.parents[1];
    const std::size_t plane = x->value.plane();
    for (int c = 0; c < x->value.channels(); ++c) {
      const double* g = self.grad.channel_data(c);
      if (wants(x)) {
        double* gx = x->grad_buffer().channel_data(c);
        const double k = s->value[static_cast<std::size_t>(c)];
        for (std::size_t i = 0; i < plane; ++i) gx[i] += g[i] * k;
      }
      if (wants(s)) {
        const double* xv = x->value.channel_data(c);
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += g[i] * xv[i];
        s->grad_buffer()[static_cast<std::size_t>(c)] += acc;
      }
    }
  });
}

Var one_minus(const Var& x) {
  Tensor y = x->value;
  for (double& v : y.values()) v = 1.0 - v;
  return make(std::move(y), {x}, [](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
  });
}

Var concat(const std::vector<Var>& parts) {
  std::vector<Tensor> values;
  values.reserve(parts.size());
  for (const auto& p : parts) values.push_back(p->value);
  Tensor y = concat_channels(values);
  return make(std::move(y), parts, [](Node& self) {
    std::size_t offset = 0;
    for (const Var& p : self.parents) {
      const std::size_t n = p->value.size();
      if (wants(p)) {
        Tensor& g = p->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
      }
      offset += n;
    }
  });
}

Var downsample2(const Var& x) {
  return make(kernels::downsample2(x->value), {x}, [](Node& self) {
    kernels::downsample2_backward(self.grad, self.parents[0]->grad_buffer());
  });
}

Var global_avg_pool(const Var& x) {
  const Tensor& xv = x->value;
  Tensor y(xv.channels(), 1, 1);
  for (int c = 0; c < xv.channels(); ++c) {
    const double* d = xv.channel_data(c);
    double s = 0.0;
    for (std::size_t i = 0; i < xv.plane(); ++i) s += d[i];
    y[static_cast<std::size_t>(c)] = s / static_cast<double>(xv.plane());
  }
  return make(std::move(y), {x}, [](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    const std::size_t plane = g.plane();
    for (int c = 0; c < g.channels(); ++c) {
      const double v = self.grad[static_cast<std::size_t>(c)] / static_cast<double>(plane);
      double* d = g.channel_data(c);
      for (std::size_t i = 0; i < plane; ++i) d[i] += v;
    }
  });
}

Var clamp01(const Var& x) {
  Tensor y = x->value;
  std::vector<signed char> state(y.size());
  std::vector<signed char>* pattern = gates(y.size());
  const bool replay = replaying();
  for (std::size_t i = 0; i < y.size(); ++i) {
    state[i] = replay ? (*pattern)[i] : (y[i] < 0.0 ? -1 : (y[i] > 1.0 ? 1 : 0));
    if (state[i] < 0) y[i] = 0.0;
    if (state[i] > 0) y[i] = 1.0;
  }
  if (pattern && !replay) *pattern = state;
  return make(std::move(y), {x}, [state = std::move(state)](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (state[i] == 0) g[i] += self.grad[i];
  });
}

Var mu_law(const Var& x, double mu) {
  const double denom = std::log1p(mu);
  Tensor y = x->value;
  for (double& v : y.values()) v = std::log1p(mu * v) / denom;
  return make(std::move(y), {x}, [mu, denom](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    const Tensor& in = self.parents[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += self.grad[i] * mu / ((1.0 + mu * in[i]) * denom);
  });
}

Var l1_mean(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "l1_mean");
  const std::size_t n = a->value.size();
  std::vector<signed char> sign(n);
  std::vector<signed char>* pattern = gates(n);
  const bool replay = replaying();
  // Neumaier-compensated sum.
  double s = 0.0, comp = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a->value[i] - b->value[i];
    sign[i] = replay ? (*pattern)[i] : (d > 0.0 ? 1 : (d < 0.0 ? -1 : 0));
    const double v = sign[i] * d;
    const double t = s + v;
    comp += std::abs(s) >= std::abs(v) ? (s - t) + v : (v - t) + s;
    s = t;
  }
  s += comp;
  if (pattern && !replay) *pattern = sign;
  Tensor y(1, 1, 1, s / static_cast<double>(n));
  return make(std::move(y), {a, b}, [sign = std::move(sign)](Node& self) {
    const Var& a = self.parents[0];
    const Var& b = self.parents[1];
    const std::size_t n = a->value.size();
    const double g = self.grad[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double sg = sign[i] * g;
      if (wants(a)) a->grad_buffer()[i] += sg;
      if (wants(b)) b->grad_buffer()[i] -= sg;
    }
  });
}

Var swap_level(const Var& target, const Var& source, const MatchLevel& matches, int patch,
               int stride) {
  Tensor y = apnt::swap_level(target->value, source->value, matches, patch, stride);
  return make(std::move(y), {target, source}, [matches, patch, stride](Node& self) {
    const Var& t = self.parents[0];
    const Var& s = self.parents[1];
    Tensor gt_scratch, gs_scratch;
    Tensor& gt = wants(t) ? t->grad_buffer() : (gt_scratch = Tensor(t->value.shape()));
    Tensor& gs = wants(s) ? s->grad_buffer() : (gs_scratch = Tensor(s->value.shape()));
    swap_level_backward(self.grad, matches, patch, stride, gt, gs);
  });
}

}  // namespace apnt::ad
