#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "apnt/dataset.hpp"
#include "apnt/error.hpp"
#include "apnt/network.hpp"

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

NetConfig tiny() {
  NetConfig c;
  c.base_channels = 8;
  c.cab_count_mef = 1;
  c.cab_count_codec = 1;
  c.cab_reduction = 4;
  return c;
}

ModelInput scene_input(int size, std::uint64_t seed, int motion = 0) {
  SyntheticSceneOptions o;
  o.height = o.width = size;
  o.seed = seed;
  o.motion_dy = o.motion_dx = motion;
  return prepare_input(synthesize_scene(o), DomainParams{});
}

void randomize_biases(ParamStore& p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  for (auto& [name, t] : p.tensors())
    if (t.rank() == 1)
      for (double& v : t.values()) v = u(rng);
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

Tensor naive_relu(Tensor t) {
  for (double& v : t.values()) v = std::max(v, 0.0);
  return t;
}

Tensor naive_sigmoid(Tensor t) {
  for (double& v : t.values()) v = 1.0 / (1.0 + std::exp(-v));
  return t;
}

Tensor naive_cab(const ParamStore& p, const std::string& n, const Tensor& x) {
  const Tensor h0 = naive_relu(naive_conv(x, p.at(n + ".conv0.w"), p.at(n + ".conv0.b")));
  const Tensor h = naive_conv(h0, p.at(n + ".conv1.w"), p.at(n + ".conv1.b"));
  Tensor pooled(h.channels(), 1, 1);
  for (int c = 0; c < h.channels(); ++c) {
    double s = 0;
    for (int y = 0; y < h.height(); ++y)
      for (int q = 0; q < h.width(); ++q) s += h(c, y, q);
    pooled[static_cast<std::size_t>(c)] = s / static_cast<double>(h.plane());
  }
  const Tensor d = naive_relu(naive_conv(pooled, p.at(n + ".ca_down.w"), p.at(n + ".ca_down.b")));
  const Tensor a = naive_sigmoid(naive_conv(d, p.at(n + ".ca_up.w"), p.at(n + ".ca_up.b")));
  Tensor out = x;
  for (int c = 0; c < h.channels(); ++c)
    for (int y = 0; y < h.height(); ++y)
      for (int q = 0; q < h.width(); ++q) out(c, y, q) += h(c, y, q) * a[static_cast<std::size_t>(c)];
  return out;
}

Tensor naive_concat(const std::vector<Tensor>& parts) {
  return concat_channels(parts);
}

void expect_open_unit(const Tensor& t, const char* what) {
  for (double v : t.values()) {
    ASSERT_GT(v, 0.0) << what;
    ASSERT_LT(v, 1.0) << what;
  }
}

}  // namespace

// ---------- parameters ----------

TEST(Params, DeterministicXavierZeroBias) {
  const NetConfig cfg;
  const ParamStore a = init_params(cfg, 7), b = init_params(cfg, 7), c = init_params(cfg, 8);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == c);
  const Tensor& w = a.at("ex.conv1.w");
  ASSERT_EQ(w.shape(), (Shape{64, 64, 3, 3}));
  double mean = 0, var = 0;
  for (double v : w.values()) mean += v;
  mean /= static_cast<double>(w.size());
  for (double v : w.values()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(w.size());
  const double expected = 2.0 / (64 * 9 + 64 * 9);
  EXPECT_NEAR(var, expected, 0.1 * expected);
  for (const auto& [name, t] : a.tensors())
    if (name.ends_with(".b"))
      for (double v : t.values()) EXPECT_EQ(v, 0.0) << name;
}

TEST(Params, ShapesCoverEveryName) {
  NetConfig cfg = tiny();
  const auto shapes = parameter_shapes(cfg);
  const ParamStore p = init_params(cfg, 1);
  EXPECT_EQ(p.size(), shapes.size());
  for (const auto& [name, shape] : shapes) EXPECT_EQ(p.at(name).shape(), shape) << name;
  EXPECT_EQ(shapes.at("mef.entry.w"), (Shape{8, 24, 3, 3}));
  EXPECT_EQ(shapes.at("mef.cab0.ca_down.w"), (Shape{2, 8, 1, 1}));
  EXPECT_EQ(shapes.at("head.conv1.w"), (Shape{3, 8, 3, 3}));
  EXPECT_TRUE(shapes.count("mef.cab0.conv0.w"));
  EXPECT_FALSE(shapes.count("mef.cab1.conv0.w"));
  EXPECT_THROW(p.at("nope"), StructuralError);
}

TEST(Params, ConfigValidation) {
  NetConfig c;
  c.base_channels = 4;
  EXPECT_THROW(c.validate(), InputError);
  c = NetConfig{};
  c.cab_count_mef = 0;
  EXPECT_THROW(c.validate(), InputError);
  AblationFlags f;
  set_ablation(f, "no_nft");
  EXPECT_TRUE(f.no_nft);
  EXPECT_TRUE(get_ablation(f, "no_nft"));
  EXPECT_THROW(set_ablation(f, "no_everything"), InputError);
  EXPECT_EQ(ablation_variant_names().size(), 6u);
}

// ---------- blocks ----------

TEST(Blocks, FeatureExtractShapesAndZeroOracle) {
  ParamStore ps = init_params(NetConfig{}, 3);
  randomize_biases(ps, 4);
  BoundParams p(ps, false);
  const Tensor img = rnd({3, 8, 8}, 1, 0, 1);
  const Tensor a = feature_extract(p, ad::constant(img))->value;
  const Tensor b = feature_extract(p, ad::constant(img))->value;
  EXPECT_EQ(a.shape(), (Shape{64, 8, 8}));
  EXPECT_TRUE(a == b);
  const Tensor zero(3, 8, 8, 0.0);
  const Tensor z = feature_extract(p, ad::constant(zero))->value;
  const Tensor h0 = naive_relu(naive_conv(zero, ps.at("ex.conv0.w"), ps.at("ex.conv0.b")));
  const Tensor h1 = naive_relu(naive_conv(h0, ps.at("ex.conv1.w"), ps.at("ex.conv1.b")));
  EXPECT_LE(max_abs_diff(z, h1), 1e-13);
  EXPECT_THROW(feature_extract(p, ad::constant(Tensor(1, 8, 8))), StructuralError);
}

TEST(Blocks, MotionAttentionCodomainAndDamping) {
  const NetConfig cfg = tiny();
  ParamStore ps = init_params(cfg, 5);
  randomize_biases(ps, 6);
  BoundParams p(ps, false);
  for (std::uint64_t s = 0; s < 3; ++s) {
    const Tensor fk = rnd({8, 8, 8}, 10 + s, -3, 3), fm = rnd({8, 8, 8}, 20 + s, -3, 3);
    const Tensor a = motion_attention(p, cfg, "mt_s", ad::constant(fk), ad::constant(fm))->value;
    EXPECT_EQ(a.shape(), fk.shape());
    expect_open_unit(a, "A_mt");
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LE(std::abs(fk[i] * a[i]), std::abs(fk[i]));
  }
  EXPECT_THROW(motion_attention(p, cfg, "mt_s", ad::constant(Tensor(8, 4, 4)),
                                ad::constant(Tensor(8, 8, 8))),
               StructuralError);
}

TEST(Blocks, MefInputConcatenation) {
  const Tensor fm = rnd({64, 4, 4}, 1), fs = rnd({64, 4, 4}, 2), fl = rnd({64, 4, 4}, 3);
  const Var ones = ad::constant(Tensor(fm.shape(), 1.0));
  const Var zeros = ad::constant(Tensor(fm.shape(), 0.0));
  const Tensor plain = build_mef_input(ad::constant(fm), ad::constant(fs), ad::constant(fl), ones,
                                       ones)->value;
  EXPECT_EQ(plain.channels(), 192);
  EXPECT_TRUE(plain == concat_channels(std::vector<Tensor>{fm, fs, fl}));
  const Tensor killed = build_mef_input(ad::constant(fm), ad::constant(fs), ad::constant(fl),
                                        zeros, ones)->value;
  EXPECT_TRUE(slice_channels(killed, 64, 64) == Tensor(fm.shape(), 0.0));
  EXPECT_TRUE(slice_channels(killed, 128, 64) == fl);
}

TEST(Blocks, CabIdentityWhenSecondConvZero) {
  const NetConfig cfg = tiny();
  ParamStore ps = init_params(cfg, 2);
  ps.at("mef.cab0.conv1.w").fill(0.0);
  ps.at("mef.cab0.conv1.b").fill(0.0);
  BoundParams p(ps, false);
  const Tensor x = rnd({8, 4, 4}, 9);
  EXPECT_TRUE(channel_attention_block(p, "mef.cab0", ad::constant(x))->value == x);
}

TEST(Blocks, CabAndMefStreamOracle) {
  const NetConfig cfg = tiny();
  ParamStore ps = init_params(cfg, 11);
  randomize_biases(ps, 12);
  BoundParams p(ps, false);
  const Tensor x = rnd({8, 4, 4}, 13);
  EXPECT_LE(max_abs_diff(channel_attention_block(p, "mef.cab0", ad::constant(x))->value,
                         naive_cab(ps, "mef.cab0", x)),
            1e-13);
  const Tensor fmef = rnd({24, 4, 4}, 14);
  const Tensor out = mef_stream(p, cfg, ad::constant(fmef))->value;
  const Tensor expect =
      naive_cab(ps, "mef.cab0", naive_conv(fmef, ps.at("mef.entry.w"), ps.at("mef.entry.b")));
  EXPECT_EQ(out.shape(), (Shape{8, 4, 4}));
  EXPECT_LE(max_abs_diff(out, expect), 1e-13);
}

TEST(Blocks, SaturationAttention) {
  const NetConfig cfg = tiny();
  BoundParams p(init_params(cfg, 1), false);
  const Var zero = ad::constant(Tensor(1, 8, 8, 0.0));
  const Var one = ad::constant(Tensor(1, 8, 8, 1.0));
  const Tensor a0 = saturation_attention(p, cfg, zero)->value;
  const Tensor a1 = saturation_attention(p, cfg, one)->value;
  EXPECT_EQ(a0.shape(), (Shape{8, 8, 8}));
  expect_open_unit(a0, "A_sat");
  expect_open_unit(a1, "A_sat");
  EXPECT_TRUE(a0 == saturation_attention(p, cfg, zero)->value);
  EXPECT_GT(max_abs_diff(a0, a1), 1e-6);
}

TEST(Blocks, NftGate) {
  const Tensor fs = rnd({8, 4, 4}, 3, -5, 5);
  const Var z = ad::constant(Tensor(fs.shape(), 0.0));
  const Tensor half = build_nft_input(ad::constant(fs), z, z)->value;
  for (std::size_t i = 0; i < fs.size(); ++i) EXPECT_EQ(half[i], 0.5 * fs[i]);

  Tensor f(1, 2, 2), am(1, 2, 2), as(1, 2, 2);
  const double fv[4] = {1, -2, 3, 4}, mv[4] = {0.2, 0.9, 0.5, 0.1}, sv[4] = {0.7, 0.3, 0.5, 0.0};
  for (int i = 0; i < 4; ++i) f[i] = fv[i], am[i] = mv[i], as[i] = sv[i];
  const Tensor out = build_nft_input(ad::constant(f), ad::constant(am), ad::constant(as))->value;
  // sigmoid(0.9) = 0.7109495026250039, sigmoid(1.2) = 0.7685247834990175,
  // sigmoid(1.0) = 0.7310585786300049, sigmoid(0.1) = 0.52497918747894
  EXPECT_NEAR(out[0], 0.7109495026250039, 1e-15);
  EXPECT_NEAR(out[1], -2 * 0.7685247834990175, 1e-15);
  EXPECT_NEAR(out[2], 3 * 0.7310585786300049, 1e-15);
  EXPECT_NEAR(out[3], 4 * 0.52497918747894, 1e-14);
}

TEST(Blocks, EncoderShapesAndDownsampler) {
  const NetConfig cfg;
  BoundParams p(init_params(cfg, 1), false);
  const Tensor f = rnd({64, 16, 16}, 2);
  const auto a = encode(p, cfg, ad::constant(f));
  const auto b = encode(p, cfg, ad::constant(f));
  EXPECT_EQ(a[0]->value.shape(), (Shape{64, 16, 16}));
  EXPECT_EQ(a[1]->value.shape(), (Shape{128, 8, 8}));
  EXPECT_EQ(a[2]->value.shape(), (Shape{256, 4, 4}));
  for (int l = 0; l < 3; ++l) EXPECT_TRUE(a[l]->value == b[l]->value);
  const Tensor d = ad::downsample2(ad::constant(Tensor(4, 8, 8, 0.3)))->value;
  for (double v : d.values()) EXPECT_EQ(v, 0.3);
  EXPECT_THROW(encode(p, cfg, ad::constant(Tensor(64, 10, 8))), InputError);
  EXPECT_THROW(encode(p, cfg, ad::constant(Tensor(32, 8, 8))), StructuralError);
}

TEST(Blocks, DecoderOracleWithoutCabs) {
  NetConfig cfg = tiny();
  cfg.cab_count_codec = 0;
  ParamStore ps = init_params(cfg, 4);
  randomize_biases(ps, 5);
  BoundParams p(ps, false);
  const std::array<Tensor, 3> sw{rnd({8, 8, 8}, 1), rnd({16, 4, 4}, 2), rnd({32, 2, 2}, 3)};
  const auto dec = decode(p, cfg, {ad::constant(sw[0]), ad::constant(sw[1]), ad::constant(sw[2])});
  const Tensor d2 = naive_conv(sw[2], ps.at("dec.l2.entry.w"), ps.at("dec.l2.entry.b"));
  const Tensor up1 = kernels::conv_transpose(d2, ps.at("dec.l1.up.w"), &ps.at("dec.l1.up.b"));
  const Tensor d1 = naive_conv(naive_concat({up1, sw[1]}), ps.at("dec.l1.entry.w"),
                               ps.at("dec.l1.entry.b"));
  const Tensor up0 = kernels::conv_transpose(d1, ps.at("dec.l0.up.w"), &ps.at("dec.l0.up.b"));
  const Tensor d0 = naive_conv(naive_concat({up0, sw[0]}), ps.at("dec.l0.entry.w"),
                               ps.at("dec.l0.entry.b"));
  EXPECT_LE(max_abs_diff(dec[2]->value, d2), 1e-13);
  EXPECT_LE(max_abs_diff(dec[1]->value, d1), 1e-13);
  EXPECT_LE(max_abs_diff(dec[0]->value, d0), 1e-13);
  EXPECT_THROW(decode(p, cfg, {ad::constant(sw[0]), ad::constant(sw[1]), ad::constant(sw[1])}),
               StructuralError);
}

TEST(Blocks, ScaleAttention) {
  NetConfig cfg = tiny();
  BoundParams p(init_params(cfg, 6), false);
  const std::array<Var, 3> dec{ad::constant(rnd({8, 8, 8}, 1)), ad::constant(rnd({16, 4, 4}, 2)),
                               ad::constant(rnd({32, 2, 2}, 3))};
  const Var sat = ad::constant(rnd({8, 8, 8}, 4, 0.1, 0.9));
  const ScaleAttention s = scale_attention(p, cfg, dec, sat);
  EXPECT_EQ(s.maps[2], sat);
  EXPECT_TRUE(s.maps[2]->value == sat->value);
  expect_open_unit(s.maps[0]->value, "A_sc0");
  expect_open_unit(s.maps[1]->value, "A_sc1");
  for (int l = 0; l < 3; ++l) EXPECT_EQ(s.upsampled[l]->value.shape(), (Shape{8, 8, 8}));
  cfg.ablation.no_scale_attention = true;
  const ScaleAttention off = scale_attention(p, cfg, dec, sat);
  EXPECT_TRUE(off.maps[0]->value == Tensor(Shape{8, 8, 8}, 1.0));
  EXPECT_TRUE(off.maps[1]->value == Tensor(Shape{8, 8, 8}, 1.0));
  EXPECT_TRUE(off.maps[2]->value == sat->value);
}

TEST(Blocks, BlendAndFuse) {
  const NetConfig cfg = tiny();
  ParamStore ps = init_params(cfg, 8);
  randomize_biases(ps, 9);
  BoundParams p(ps, false);
  const Tensor mef = rnd({8, 4, 4}, 1);
  ScaleAttention s;
  for (int l = 0; l < 3; ++l) {
    s.maps[l] = ad::constant(rnd({8, 4, 4}, 10 + l, 0, 1));
    s.upsampled[l] = ad::constant(rnd({8, 4, 4}, 20 + l));
  }
  const Tensor out = blend_and_fuse(p, ad::constant(mef), s)->value;
  std::vector<Tensor> parts;
  for (int l = 2; l >= 0; --l) {
    Tensor t = s.upsampled[l]->value;
    for (std::size_t i = 0; i < t.size(); ++i) t[i] *= s.maps[l]->value[i];
    parts.push_back(t);
  }
  parts.push_back(mef);
  const Tensor h = naive_relu(naive_conv(naive_concat(parts), ps.at("head.conv0.w"),
                                         ps.at("head.conv0.b")));
  const Tensor expect = naive_sigmoid(naive_conv(h, ps.at("head.conv1.w"), ps.at("head.conv1.b")));
  EXPECT_EQ(out.shape(), (Shape{3, 4, 4}));
  EXPECT_LE(max_abs_diff(out, expect), 1e-13);
  expect_open_unit(out, "H_mef");

  // Zero attention annihilates the decoder paths.
  ScaleAttention z = s, z2 = s;
  for (int l = 0; l < 3; ++l) {
    z.maps[l] = z2.maps[l] = ad::constant(Tensor(Shape{8, 4, 4}, 0.0));
    z2.upsampled[l] = ad::constant(rnd({8, 4, 4}, 40 + l, -9, 9));
  }
  EXPECT_TRUE(blend_and_fuse(p, ad::constant(mef), z)->value ==
              blend_and_fuse(p, ad::constant(mef), z2)->value);
}

TEST(Blocks, ComposeOutput) {
  NetConfig cfg = tiny();
  cfg.attention_conv_layers = 1;
  ParamStore ps = init_params(cfg, 1);
  BoundParams p(ps, false);
  ps.at("wgt.conv0.w").fill(0.0);
  const Var hm = ad::constant(Tensor(3, 2, 2, 0.8));
  const Var hmef = ad::constant(Tensor(3, 2, 2, 0.1));
  const Var sat = ad::constant(Tensor(8, 2, 2, 0.5));

  ps.at("wgt.conv0.b").fill(std::log(1.0 / 3.0));  // sigmoid -> 0.25
  Composition c = compose_output(BoundParams(ps, false), cfg, hm, hmef, sat);
  for (double v : c.weights->value.values()) EXPECT_NEAR(v, 0.25, 1e-15);
  for (double v : c.output->value.values()) EXPECT_NEAR(v, 0.7, 1e-15);

  ps.at("wgt.conv0.b").fill(800.0);
  const Var big = ad::constant(rnd({3, 2, 2}, 3, -0.5, 1.5));
  c = compose_output(BoundParams(ps, false), cfg, hm, big, sat);
  for (std::size_t i = 0; i < 12; ++i)
    EXPECT_EQ(c.output->value[i], std::clamp(big->value[i], 0.0, 1.0));

  ps.at("wgt.conv0.b").fill(-800.0);
  c = compose_output(BoundParams(ps, false), cfg, hm, ad::constant(Tensor(3, 2, 2, 0.0)), sat);
  EXPECT_TRUE(c.output->value == hm->value);
  (void)p;
}

// ---------- full graph ----------

class Forward : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { input_ = new ModelInput(scene_input(16, 3, 1)); }
  static void TearDownTestSuite() { delete input_; }

  ForwardTrace run(const AblationFlags& flags, Tensor* out = nullptr) {
    NetConfig cfg = tiny();
    cfg.ablation = flags;
    Network net(cfg, FeatureExtractor::handcrafted(), DomainParams{});
    BoundParams p(init_params(cfg, 17), false);
    ForwardResult r = net.forward(p, *input_, nullptr, true);
    if (out) *out = r.output->value;
    return r.trace;
  }

  static ModelInput* input_;
};
ModelInput* Forward::input_ = nullptr;

TEST_F(Forward, ContractAndDeterminism) {
  Tensor a, b;
  const ForwardTrace t = run({}, &a);
  run({}, &b);
  EXPECT_TRUE(a == b);
  EXPECT_EQ(a.shape(), (Shape{3, 16, 16}));
  for (double v : a.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  for (const Tensor* m : {&t.motion_short, &t.motion_long, &t.sat_short, &t.sat_medium,
                          &t.scale_attention[0], &t.scale_attention[1], &t.fusion_weights})
    expect_open_unit(*m, "attention");
  EXPECT_TRUE(t.scale_attention[2] == t.sat_medium);
  EXPECT_TRUE(t.matches.has_value());
  EXPECT_TRUE(t.swap_applied);
  EXPECT_EQ(t.matching_domain, "ms_hdr");
  EXPECT_EQ(t.mef_input.channels(), 24);
  EXPECT_EQ(t.encoder_reference[2].shape(), (Shape{32, 4, 4}));
  EXPECT_FALSE(t.nft_input.empty());
}

TEST_F(Forward, NoNft) {
  AblationFlags f;
  f.no_nft = true;
  const ForwardTrace t = run(f);
  EXPECT_FALSE(t.matches.has_value());
  EXPECT_FALSE(t.swap_applied);
  EXPECT_TRUE(t.nft_input.empty());
  EXPECT_EQ(t.matching_domain, "none");
  for (int l = 0; l < 3; ++l) {
    EXPECT_TRUE(t.swapped[l] == t.encoder_reference[l]);
    EXPECT_TRUE(t.encoder_clue[l].empty());
  }
}

TEST_F(Forward, NoMotionAttention) {
  AblationFlags f;
  f.no_motion_attention = true;
  const ForwardTrace t = run(f);
  EXPECT_TRUE(t.motion_short == Tensor(t.motion_short.shape(), 1.0));
  EXPECT_TRUE(t.motion_long == Tensor(t.motion_long.shape(), 1.0));
}

TEST_F(Forward, NoScaleAttention) {
  AblationFlags f;
  f.no_scale_attention = true;
  const ForwardTrace t = run(f);
  EXPECT_TRUE(t.scale_attention[0] == Tensor(t.scale_attention[0].shape(), 1.0));
  EXPECT_TRUE(t.scale_attention[1] == Tensor(t.scale_attention[1].shape(), 1.0));
  EXPECT_TRUE(t.scale_attention[2] == t.sat_medium);
}

TEST_F(Forward, NoMsHdrMatchesUnmaskedShort) {
  AblationFlags f;
  f.no_ms_hdr = true;
  const ForwardTrace t = run(f);
  EXPECT_EQ(t.matching_domain, "short_unmasked");
  const auto target = handcrafted_pyramid(mu_law(input_->radiance[1].pixels, 5000, true));
  const auto source = handcrafted_pyramid(mu_law(input_->radiance[0].pixels, 5000, true));
  const MatchField expect = progressive_match(source, target, tiny().window);
  for (int l = 0; l < 3; ++l) EXPECT_EQ(t.matches->levels[l], expect.levels[l]);
}

TEST_F(Forward, MsHdrMatchesMaskedShort) {
  const ForwardTrace t = run({});
  const auto target = handcrafted_pyramid(mu_law(input_->radiance[1].pixels, 5000, true));
  const auto source = handcrafted_pyramid(mu_law(input_->short_masked.pixels, 5000, true));
  const MatchField expect = progressive_match(source, target, tiny().window);
  for (int l = 0; l < 3; ++l) EXPECT_EQ(t.matches->levels[l], expect.levels[l]);
}

TEST_F(Forward, SingleScale) {
  AblationFlags f;
  f.single_scale_vgg = true;
  const ForwardTrace t = run(f);
  for (int l = 1; l < 3; ++l) {
    const MatchLevel& m = t.matches->levels[l];
    for (int y = 0; y < m.height; ++y)
      for (int x = 0; x < m.width; ++x) EXPECT_EQ(m.at(y, x), (Position{y, x}));
  }
}

TEST_F(Forward, MatchWithEncoderFeatures) {
  AblationFlags f;
  f.match_with_encoder_features = true;
  const ForwardTrace t = run(f);
  EXPECT_EQ(t.matching_domain, "encoder");
  FeaturePyramid target, source;
  for (int l = 0; l < 3; ++l) {
    target.levels[l] = t.encoder_reference[l];
    source.levels[l] = t.encoder_clue[l];
  }
  const MatchField expect = progressive_match(source, target, tiny().window);
  for (int l = 0; l < 3; ++l) EXPECT_EQ(t.matches->levels[l], expect.levels[l]);
}

TEST_F(Forward, CachedMatchesGiveSameOutput) {
  const NetConfig cfg = tiny();
  Network net(cfg, FeatureExtractor::handcrafted(), DomainParams{});
  BoundParams p(init_params(cfg, 17), false);
  const MatchField m = net.match_input(*input_);
  EXPECT_TRUE(net.forward(p, *input_, &m, false).output->value ==
              net.forward(p, *input_, nullptr, false).output->value);
  EXPECT_TRUE(net.infer(init_params(cfg, 17), *input_) ==
              net.forward(p, *input_, nullptr, false).output->value);
}

TEST(ForwardErrors, SizeNotDivisibleByFour) {
  const NetConfig cfg = tiny();
  Network net(cfg, FeatureExtractor::handcrafted(), DomainParams{});
  ModelInput in = scene_input(16, 1);
  in = crop_input(in, 0, 0, 14, 16);
  EXPECT_THROW(net.infer(init_params(cfg, 1), in), InputError);
}

TEST(ForwardRandom, AttentionCodomainAcrossSeeds) {
  const NetConfig cfg = tiny();
  Network net(cfg, FeatureExtractor::handcrafted(), DomainParams{});
  for (std::uint64_t s = 0; s < 3; ++s) {
    ParamStore ps = init_params(cfg, 100 + s);
    randomize_biases(ps, 200 + s);
    BoundParams p(ps, false);
    const ModelInput in = scene_input(16, 300 + s, static_cast<int>(s));
    const ForwardResult r = net.forward(p, in, nullptr, true);
    for (const Tensor* m : {&r.trace.motion_short, &r.trace.motion_long, &r.trace.sat_short,
                            &r.trace.sat_medium, &r.trace.scale_attention[0],
                            &r.trace.scale_attention[1], &r.trace.fusion_weights})
      expect_open_unit(*m, "attention");
    for (double v : r.output->value.values()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}
