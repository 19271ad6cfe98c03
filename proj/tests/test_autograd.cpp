#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "apnt/autograd.hpp"
#include "apnt/error.hpp"
#include "apnt/kernels.hpp"

using namespace apnt;
using ad::Var;

namespace {

Tensor rnd(Shape s, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(s));
  for (double& v : t.values()) v = u(rng);
  return t;
}

// Reduces y to a scalar via a fixed random projection.
Var project(const Var& y, std::uint64_t seed) {
  const Tensor& v = y->value;
  Var r = ad::constant(rnd(v.shape(), seed));
  Var pooled = ad::global_avg_pool(ad::mul(y, r));
  return ad::conv2d(pooled, ad::constant(Tensor(Shape{1, v.channels(), 1, 1}, 1.0)),
                    ad::constant(Tensor(Shape{1}, 0.0)));
}

using Builder = std::function<Var(const std::vector<Var>&)>;

void check_gradients(const Builder& f, std::vector<Tensor> inputs, double tol = 1e-7) {
  std::vector<Var> leaves;
  for (const auto& t : inputs) leaves.push_back(ad::parameter(t));
  Var out = project(f(leaves), 99);
  ad::backward(out);
  const double h = 1e-6;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor analytic = leaves[i]->grad.empty() ? Tensor(inputs[i].shape()) : leaves[i]->grad;
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      auto eval = [&](double delta) {
        std::vector<Var> vs;
        for (std::size_t k = 0; k < inputs.size(); ++k) {
          Tensor t = inputs[k];
          if (k == i) t[j] += delta;
          vs.push_back(ad::constant(t));
        }
        return project(f(vs), 99)->value[0];
      };
      const double numeric = (eval(h) - eval(-h)) / (2 * h);
      EXPECT_NEAR(analytic[j], numeric, tol * std::max(1.0, std::abs(numeric)))
          << "input " << i << " element " << j;
    }
  }
}

Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& b) {
  const int co = w.dim(0), ci = w.dim(1), k = w.dim(2), r = k / 2;
  Tensor y(co, x.height(), x.width());
  for (int o = 0; o < co; ++o)
    for (int yy = 0; yy < x.height(); ++yy)
      for (int xx = 0; xx < x.width(); ++xx) {
        double s = b[o];
        for (int i = 0; i < ci; ++i)
          for (int dy = 0; dy < k; ++dy)
            for (int dx = 0; dx < k; ++dx) {
              const int sy = yy + dy - r, sx = xx + dx - r;
              if (sy < 0 || sx < 0 || sy >= x.height() || sx >= x.width()) continue;
              s += w[((static_cast<std::size_t>(o) * ci + i) * k + dy) * k + dx] * x(i, sy, sx);
            }
        y(o, yy, xx) = s;
      }
  return y;
}

}  // namespace

TEST(Kernels, ConvMatchesNaiveLoops) {
  const Tensor x = rnd({3, 6, 5}, 1), w = rnd({4, 3, 3, 3}, 2), b = rnd({4}, 3);
  EXPECT_LE(max_abs_diff(kernels::conv2d(x, w, &b, kernels::Padding::zero), naive_conv(x, w, b)),
            1e-13);
  const Tensor w1 = rnd({2, 3, 1, 1}, 4), b1 = rnd({2}, 5);
  EXPECT_LE(max_abs_diff(kernels::conv2d(x, w1, &b1, kernels::Padding::zero), naive_conv(x, w1, b1)),
            1e-13);
}

TEST(Kernels, TransposeAndDownsample) {
  const Tensor x = rnd({2, 3, 2}, 1), w = rnd({2, 3, 2, 2}, 2), b = rnd({3}, 3);
  const Tensor y = kernels::conv_transpose(x, w, &b);
  ASSERT_EQ(y.shape(), (Shape{3, 6, 4}));
  for (int o = 0; o < 3; ++o)
    for (int r = 0; r < 6; ++r)
      for (int c = 0; c < 4; ++c) {
        double s = b[o];
        for (int i = 0; i < 2; ++i)
          s += x(i, r / 2, c / 2) * w[((static_cast<std::size_t>(i) * 3 + o) * 2 + r % 2) * 2 + c % 2];
        EXPECT_NEAR(y(o, r, c), s, 1e-14);
      }
  const Tensor d = kernels::downsample2(Tensor(2, 8, 8, 0.37));
  for (double v : d.values()) EXPECT_EQ(v, 0.37);
  const Tensor r = rnd({1, 4, 4}, 7);
  const Tensor dr = kernels::downsample2(r);
  EXPECT_NEAR(dr(0, 1, 0), (r(0, 2, 0) + r(0, 2, 1) + r(0, 3, 0) + r(0, 3, 1)) / 4, 1e-15);
}

TEST(Autograd, Conv2d) {
  for (auto pad : {kernels::Padding::zero, kernels::Padding::replicate})
    check_gradients(
        [pad](const std::vector<Var>& v) { return ad::conv2d(v[0], v[1], v[2], pad); },
        {rnd({2, 4, 5}, 1), rnd({3, 2, 3, 3}, 2), rnd({3}, 3)});
}

TEST(Autograd, ConvTranspose) {
  check_gradients([](const std::vector<Var>& v) { return ad::conv_transpose(v[0], v[1], v[2]); },
                  {rnd({2, 3, 3}, 1), rnd({2, 3, 2, 2}, 2), rnd({3}, 3)});
}

TEST(Autograd, Pointwise) {
  const Tensor a = rnd({2, 3, 3}, 11), b = rnd({2, 3, 3}, 12);
  check_gradients([](const std::vector<Var>& v) { return ad::sigmoid(v[0]); }, {a});
  check_gradients([](const std::vector<Var>& v) { return ad::relu(v[0]); }, {a});
  check_gradients([](const std::vector<Var>& v) { return ad::add(v[0], v[1]); }, {a, b});
  check_gradients([](const std::vector<Var>& v) { return ad::mul(v[0], v[1]); }, {a, b});
  check_gradients([](const std::vector<Var>& v) { return ad::one_minus(v[0]); }, {a});
  check_gradients([](const std::vector<Var>& v) { return ad::clamp01(v[0]); }, {a});
  check_gradients([](const std::vector<Var>& v) { return ad::mu_law(v[0], 5000); },
                  {rnd({2, 3, 3}, 13, 0.01, 1)}, 1e-5);
}

TEST(Autograd, Structural) {
  check_gradients([](const std::vector<Var>& v) { return ad::concat({v[0], v[1]}); },
                  {rnd({1, 2, 2}, 1), rnd({2, 2, 2}, 2)});
  check_gradients([](const std::vector<Var>& v) { return ad::downsample2(v[0]); },
                  {rnd({2, 4, 6}, 3)});
  check_gradients([](const std::vector<Var>& v) { return ad::global_avg_pool(v[0]); },
                  {rnd({3, 4, 4}, 4)});
  check_gradients([](const std::vector<Var>& v) { return ad::channel_scale(v[0], v[1]); },
                  {rnd({3, 4, 4}, 5), rnd({3, 1, 1}, 6)});
}

TEST(Autograd, L1Mean) {
  Var a = ad::parameter(Tensor(1, 1, 4, 0.0));
  Tensor bt(1, 1, 4);
  bt[0] = 1;
  bt[1] = -2;
  bt[2] = 0.5;
  bt[3] = 0.0;
  Var l = ad::l1_mean(a, ad::constant(bt));
  EXPECT_EQ(l->value[0], 3.5 / 4);
  ad::backward(l);
  EXPECT_EQ(a->grad[0], -0.25);
  EXPECT_EQ(a->grad[1], 0.25);
  EXPECT_EQ(a->grad[2], -0.25);
  EXPECT_EQ(a->grad[3], 0.0);
}

TEST(Autograd, SwapLevel) {
  MatchLevel m;
  m.height = 4;
  m.width = 4;
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> d(0, 3);
  for (int i = 0; i < 16; ++i) m.match.push_back({d(rng), d(rng)});
  m.score.assign(16, 0.0);
  for (int stride : {1, 2})
    check_gradients(
        [&](const std::vector<Var>& v) { return ad::swap_level(v[0], v[1], m, 3, stride); },
        {rnd({2, 4, 4}, 1), rnd({2, 4, 4}, 2)});
}

TEST(Autograd, SharedSubexpressionAccumulates) {
  Var x = ad::parameter(Tensor(1, 1, 1, 3.0));
  Var y = ad::mul(x, x);
  Var z = ad::add(y, x);
  ad::backward(z);
  EXPECT_EQ(x->grad[0], 7.0);
}

TEST(Autograd, ConstantsCarryNoGraph) {
  Var a = ad::constant(Tensor(1, 2, 2, 1.0));
  Var b = ad::relu(ad::add(a, a));
  EXPECT_FALSE(b->requires_grad);
  EXPECT_TRUE(b->parents.empty());
}

TEST(Autograd, GatePatternReplay) {
  ad::GatePattern pattern(ad::GatePattern::Mode::record);
  Tensor t(1, 1, 2);
  t[0] = 1e-9;
  t[1] = -1e-9;
  {
    ad::GateScope scope(pattern);
    Var y = ad::relu(ad::constant(t));
    EXPECT_EQ(y->value[0], 1e-9);
    EXPECT_EQ(y->value[1], 0.0);
  }
  EXPECT_EQ(pattern.size(), 1u);
  pattern.set_mode(ad::GatePattern::Mode::replay);
  Tensor flipped(1, 1, 2);
  flipped[0] = -2e-9;
  flipped[1] = 2e-9;
  {
    ad::GateScope scope(pattern);
    Var y = ad::relu(ad::constant(flipped));
    EXPECT_EQ(y->value[0], -2e-9);
    EXPECT_EQ(y->value[1], 0.0);
  }
  Var y = ad::relu(ad::constant(flipped));
  EXPECT_EQ(y->value[0], 0.0);
}

TEST(Autograd, BackwardNeedsScalar) {
  Var x = ad::parameter(Tensor(1, 2, 2, 1.0));
  EXPECT_THROW(ad::backward(x), Error);
}
