#include "apnt/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "apnt/error.hpp"

namespace apnt {

namespace {

const std::vector<std::string> kVariants{
    "no_ms_hdr",           "no_nft",
    "single_scale_vgg",    "match_with_encoder_features",
    "no_motion_attention", "no_scale_attention",
};

bool* flag_ptr(AblationFlags& f, const std::string& name) {
  if (name == "no_ms_hdr") return &f.no_ms_hdr;
  if (name == "no_nft") return &f.no_nft;
  if (name == "single_scale_vgg") return &f.single_scale_vgg;
  if (name == "match_with_encoder_features") return &f.match_with_encoder_features;
  if (name == "no_motion_attention") return &f.no_motion_attention;
  if (name == "no_scale_attention") return &f.no_scale_attention;
  throw InputError("unknown ablation variant '" + name + "'");
}

std::string idx(const std::string& prefix, int i) { return prefix + std::to_string(i); }

void add_conv(std::map<std::string, Shape>& out, const std::string& name, int cout, int cin,
              int k) {
  out[name + ".w"] = {cout, cin, k, k};
  out[name + ".b"] = {cout};
}

void add_transpose(std::map<std::string, Shape>& out, const std::string& name, int cin, int cout,
                   int f) {
  out[name + ".w"] = {cin, cout, f, f};
  out[name + ".b"] = {cout};
}

void add_cab(std::map<std::string, Shape>& out, const NetConfig& cfg, const std::string& name,
             int c) {
  const int r = cfg.reduced_channels(c);
  add_conv(out, name + ".conv0", c, c, 3);
  add_conv(out, name + ".conv1", c, c, 3);
  add_conv(out, name + ".ca_down", r, c, 1);
  add_conv(out, name + ".ca_up", c, r, 1);
}

void add_attention(std::map<std::string, Shape>& out, const NetConfig& cfg,
                   const std::string& name, int cin, int cout) {
  const int c = cfg.base_channels;
  const int n = cfg.attention_conv_layers;
  for (int i = 0; i < n; ++i) {
    const int in = i == 0 ? cin : c;
    const int o = i == n - 1 ? cout : c;
    add_conv(out, idx(name + ".conv", i), o, in, 3);
  }
}

ad::Var ones_like(const Tensor& t) { return ad::constant(Tensor(t.shape(), 1.0)); }

}  // namespace

const std::vector<std::string>& ablation_variant_names() { return kVariants; }

void set_ablation(AblationFlags& flags, const std::string& name, bool value) {
  *flag_ptr(flags, name) = value;
}

bool get_ablation(const AblationFlags& flags, const std::string& name) {
  AblationFlags copy = flags;
  return *flag_ptr(copy, name);
}

void NetConfig::validate() const {
  if (base_channels < 8) throw InputError("base_channels must be at least 8");
  if (cab_count_mef < 1) throw InputError("cab_count_mef must be at least 1");
  if (cab_count_codec < 0) throw InputError("cab_count_codec must be non-negative");
  if (cab_reduction < 1) throw InputError("cab_reduction must be positive");
  if (attention_conv_layers < 1) throw InputError("attention_conv_layers must be positive");
  window.validate();
}

int NetConfig::reduced_channels(int channels) const {
  return std::max(1, channels / cab_reduction);
}

void ParamStore::add(const std::string& name, Tensor value) {
  if (!tensors_.emplace(name, std::move(value)).second)
    throw StructuralError("duplicate parameter '" + name + "'");
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw StructuralError("missing parameter '" + name + "'");
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw StructuralError("missing parameter '" + name + "'");
  return it->second;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : tensors_) out.push_back(k);
  return out;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [k, v] : tensors_) n += v.size();
  return n;
}

std::map<std::string, Shape> parameter_shapes(const NetConfig& cfg) {
  cfg.validate();
  const int c = cfg.base_channels;
  std::map<std::string, Shape> s;
  add_conv(s, "ex.conv0", c, 3, 3);
  add_conv(s, "ex.conv1", c, c, 3);
  add_attention(s, cfg, "mt_s", 2 * c, c);
  add_attention(s, cfg, "mt_l", 2 * c, c);
  add_attention(s, cfg, "sat", 1, c);
  add_attention(s, cfg, "sc0", 2 * c, c);
  add_attention(s, cfg, "sc1", 2 * c, c);
  add_attention(s, cfg, "wgt", c, 3);
  add_conv(s, "mef.entry", c, 3 * c, 3);
  for (int i = 0; i < cfg.cab_count_mef; ++i) add_cab(s, cfg, idx("mef.cab", i), c);
  for (int i = 0; i < cfg.cab_count_codec; ++i) add_cab(s, cfg, idx("enc.l0.cab", i), c);
  add_conv(s, "enc.l1.entry", 2 * c, c, 3);
  for (int i = 0; i < cfg.cab_count_codec; ++i) add_cab(s, cfg, idx("enc.l1.cab", i), 2 * c);
  add_conv(s, "enc.l2.entry", 4 * c, 2 * c, 3);
  for (int i = 0; i < cfg.cab_count_codec; ++i) add_cab(s, cfg, idx("enc.l2.cab", i), 4 * c);
  add_conv(s, "dec.l2.entry", 4 * c, 4 * c, 3);
  for (int i = 0; i < cfg.cab_count_codec; ++i) add_cab(s, cfg, idx("dec.l2.cab", i), 4 * c);
  add_transpose(s, "dec.l1.up", 4 * c, 2 * c, 2);
  add_conv(s, "dec.l1.entry", 2 * c, 4 * c, 3);
  for (int i = 0; i < cfg.cab_count_codec; ++i) add_cab(s, cfg, idx("dec.l1.cab", i), 2 * c);
  add_transpose(s, "dec.l0.up", 2 * c, c, 2);
  add_conv(s, "dec.l0.entry", c, 2 * c, 3);
  for (int i = 0; i < cfg.cab_count_codec; ++i) add_cab(s, cfg, idx("dec.l0.cab", i), c);
  add_transpose(s, "sc.up4", 4 * c, c, 4);
  add_transpose(s, "sc.up2", 2 * c, c, 2);
  add_conv(s, "head.conv0", c, 4 * c, 3);
  add_conv(s, "head.conv1", 3, c, 3);
  return s;
}

ParamStore init_params(const NetConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParamStore store;
  for (const auto& [name, shape] : parameter_shapes(config)) {
    Tensor t(shape, 0.0);
    if (shape.size() == 4) {
      const double field = static_cast<double>(shape[2]) * shape[3];
      const double fan_in = shape[1] * field;
      const double fan_out = shape[0] * field;
      const double a = std::sqrt(6.0 / (fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-a, a);
      for (double& v : t.values()) v = dist(rng);
    }
    store.add(name, std::move(t));
  }
  return store;
}

BoundParams::BoundParams(const ParamStore& store, bool trainable) {
  for (const auto& [name, t] : store.tensors())
    vars_.emplace(name, trainable ? ad::parameter(t) : ad::constant(t));
}

const ad::Var& BoundParams::operator()(const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw StructuralError("missing parameter '" + name + "'");
  return it->second;
}

ad::Var conv_layer(const BoundParams& p, const std::string& name, const ad::Var& x) {
  return ad::conv2d(x, p(name + ".w"), p(name + ".b"));
}

ad::Var channel_attention_block(const BoundParams& p, const std::string& name, const ad::Var& x) {
  ad::Var h = ad::relu(conv_layer(p, name + ".conv0", x));
  h = conv_layer(p, name + ".conv1", h);
  ad::Var s = ad::global_avg_pool(h);
  s = ad::relu(conv_layer(p, name + ".ca_down", s));
  s = ad::sigmoid(conv_layer(p, name + ".ca_up", s));
  return ad::add(x, ad::channel_scale(h, s));
}

ad::Var attention_module(const BoundParams& p, const NetConfig& config, const std::string& name,
                         const ad::Var& x) {
  ad::Var h = x;
  for (int i = 0; i < config.attention_conv_layers; ++i) {
    h = conv_layer(p, idx(name + ".conv", i), h);
    if (i + 1 < config.attention_conv_layers) h = ad::relu(h);
  }
  return ad::sigmoid(h);
}

ad::Var feature_extract(const BoundParams& p, const ad::Var& radiance) {
  if (radiance->value.rank() != 3 || radiance->value.channels() != 3)
    throw StructuralError("feature_extract expects (3, H, W), got " +
                          shape_string(radiance->value.shape()));
  ad::Var h = ad::relu(conv_layer(p, "ex.conv0", radiance));
  return ad::relu(conv_layer(p, "ex.conv1", h));
}

ad::Var motion_attention(const BoundParams& p, const NetConfig& config, const std::string& name,
                         const ad::Var& f_k, const ad::Var& f_m) {
  require_same_shape(f_k->value, f_m->value, "motion_attention");
  return attention_module(p, config, name, ad::concat({f_k, f_m}));
}

ad::Var build_mef_input(const ad::Var& f_m, const ad::Var& f_s, const ad::Var& f_l,
                        const ad::Var& a_s, const ad::Var& a_l) {
  require_same_shape(f_m->value, f_s->value, "build_mef_input");
  require_same_shape(f_m->value, f_l->value, "build_mef_input");
  return ad::concat({f_m, ad::mul(f_s, a_s), ad::mul(f_l, a_l)});
}

ad::Var mef_stream(const BoundParams& p, const NetConfig& config, const ad::Var& f_mef) {
  ad::Var h = conv_layer(p, "mef.entry", f_mef);
  for (int i = 0; i < config.cab_count_mef; ++i)
    h = channel_attention_block(p, idx("mef.cab", i), h);
  return h;
}

ad::Var saturation_attention(const BoundParams& p, const NetConfig& config, const ad::Var& mask) {
  if (mask->value.rank() != 3 || mask->value.channels() != 1)
    throw StructuralError("saturation_attention expects a (1, H, W) mask");
  return attention_module(p, config, "sat", mask);
}

ad::Var build_nft_input(const ad::Var& f_s, const ad::Var& a_mt_s, const ad::Var& a_sat_s) {
  require_same_shape(f_s->value, a_mt_s->value, "build_nft_input");
  require_same_shape(f_s->value, a_sat_s->value, "build_nft_input");
  return ad::mul(f_s, ad::sigmoid(ad::add(a_mt_s, a_sat_s)));
}

std::array<ad::Var, 3> encode(const BoundParams& p, const NetConfig& config, const ad::Var& f) {
  const Tensor& v = f->value;
  if (v.channels() != config.base_channels)
    throw StructuralError("encode expects " + std::to_string(config.base_channels) +
                          " channels, got " + shape_string(v.shape()));
  if (v.height() % 4 != 0 || v.width() % 4 != 0)
    throw InputError("encoder input " + shape_string(v.shape()) + " is not divisible by 4");
  std::array<ad::Var, 3> out;
  ad::Var h = f;
  for (int i = 0; i < config.cab_count_codec; ++i)
    h = channel_attention_block(p, idx("enc.l0.cab", i), h);
  out[0] = h;
  for (int l = 1; l < 3; ++l) {
    const std::string pre = "enc.l" + std::to_string(l);
    h = conv_layer(p, pre + ".entry", ad::downsample2(h));
    for (int i = 0; i < config.cab_count_codec; ++i)
      h = channel_attention_block(p, idx(pre + ".cab", i), h);
    out[static_cast<std::size_t>(l)] = h;
  }
  return out;
}

std::array<ad::Var, 3> decode(const BoundParams& p, const NetConfig& config,
                              const std::array<ad::Var, 3>& swapped) {
  const int c = config.base_channels;
  for (int l = 0; l < 3; ++l) {
    const Tensor& t = swapped[static_cast<std::size_t>(l)]->value;
    const Tensor& base = swapped[0]->value;
    if (t.channels() != c << l || t.height() * (1 << l) != base.height() ||
        t.width() * (1 << l) != base.width())
      throw StructuralError("decoder level " + std::to_string(l) + " has shape " +
                            shape_string(t.shape()));
  }
  std::array<ad::Var, 3> out;
  ad::Var h = conv_layer(p, "dec.l2.entry", swapped[2]);
  for (int i = 0; i < config.cab_count_codec; ++i)
    h = channel_attention_block(p, idx("dec.l2.cab", i), h);
  out[2] = h;
  for (int l = 1; l >= 0; --l) {
    const std::string pre = "dec.l" + std::to_string(l);
    ad::Var up = ad::conv_transpose(h, p(pre + ".up.w"), p(pre + ".up.b"));
    h = conv_layer(p, pre + ".entry", ad::concat({up, swapped[static_cast<std::size_t>(l)]}));
    for (int i = 0; i < config.cab_count_codec; ++i)
      h = channel_attention_block(p, idx(pre + ".cab", i), h);
    out[static_cast<std::size_t>(l)] = h;
  }
  return out;
}

ScaleAttention scale_attention(const BoundParams& p, const NetConfig& config,
                               const std::array<ad::Var, 3>& decoded, const ad::Var& a_sat_m) {
  ScaleAttention s;
  s.upsampled[0] = decoded[0];
  s.upsampled[1] = ad::conv_transpose(decoded[1], p("sc.up2.w"), p("sc.up2.b"));
  s.upsampled[2] = ad::conv_transpose(decoded[2], p("sc.up4.w"), p("sc.up4.b"));
  require_same_shape(s.upsampled[2]->value, a_sat_m->value, "scale_attention");
  if (config.ablation.no_scale_attention) {
    s.maps[0] = ones_like(decoded[0]->value);
    s.maps[1] = ones_like(decoded[0]->value);
  } else {
    s.maps[1] = attention_module(p, config, "sc1", ad::concat({s.upsampled[2], s.upsampled[1]}));
    s.maps[0] = attention_module(p, config, "sc0", ad::concat({s.upsampled[1], s.upsampled[0]}));
  }
  s.maps[2] = a_sat_m;
  return s;
}

ad::Var blend_and_fuse(const BoundParams& p, const ad::Var& mef_features,
                       const ScaleAttention& attention) {
  for (int l = 0; l < 3; ++l) {
    const auto i = static_cast<std::size_t>(l);
    require_same_shape(attention.maps[i]->value, attention.upsampled[i]->value, "blend_and_fuse");
    require_same_shape(attention.upsampled[i]->value, mef_features->value, "blend_and_fuse");
  }
  ad::Var cat = ad::concat({ad::mul(attention.maps[2], attention.upsampled[2]),
                            ad::mul(attention.maps[1], attention.upsampled[1]),
                            ad::mul(attention.maps[0], attention.upsampled[0]), mef_features});
  ad::Var h = ad::relu(conv_layer(p, "head.conv0", cat));
  return ad::sigmoid(conv_layer(p, "head.conv1", h));
}

Composition compose_output(const BoundParams& p, const NetConfig& config, const ad::Var& h_m,
                           const ad::Var& h_mef, const ad::Var& a_sat_m) {
  require_same_shape(h_m->value, h_mef->value, "compose_output");
  Composition c;
  c.weights = attention_module(p, config, "wgt", a_sat_m);
  c.output = ad::clamp01(ad::add(ad::mul(h_m, ad::one_minus(c.weights)), h_mef));
  return c;
}

Network::Network(NetConfig config, FeatureExtractor extractor, DomainParams domain)
    : config_(std::move(config)), extractor_(std::move(extractor)), domain_(domain) {
  config_.validate();
  domain_.validate();
}

bool Network::matches_are_static() const {
  return !config_.ablation.no_nft && !config_.ablation.match_with_encoder_features;
}

std::string Network::matching_domain() const {
  if (config_.ablation.no_nft) return "none";
  if (config_.ablation.match_with_encoder_features) return "encoder";
  return config_.ablation.no_ms_hdr ? "short_unmasked" : "ms_hdr";
}

std::pair<FeaturePyramid, FeaturePyramid> Network::matching_pyramids(
    const ModelInput& input) const {
  const Tensor& src = config_.ablation.no_ms_hdr ? input.radiance[0].pixels
                                                 : input.short_masked.pixels;
  return {extractor_(input.radiance[1].pixels, domain_.mu), extractor_(src, domain_.mu)};
}

MatchField Network::match_input(const ModelInput& input) const {
  if (!matches_are_static())
    throw StructuralError("configuration '" + matching_domain() +
                          "' does not match on extractor features");
  auto [target, source] = matching_pyramids(input);
  MatchOptions opts;
  opts.single_scale = config_.ablation.single_scale_vgg;
  return progressive_match(source, target, config_.window, opts);
}

ForwardResult Network::forward(const BoundParams& p, const ModelInput& input,
                               const MatchField* cached, bool keep_trace) const {
  const AblationFlags& ab = config_.ablation;
  if (input.height() % 4 != 0 || input.width() % 4 != 0)
    throw InputError("input size " + std::to_string(input.height()) + "x" +
                     std::to_string(input.width()) + " is not divisible by 4");
  ForwardResult r;
  ForwardTrace& t = r.trace;
  t.matching_domain = matching_domain();

  ad::Var h_s = ad::constant(input.radiance[0].pixels);
  ad::Var h_m = ad::constant(input.radiance[1].pixels);
  ad::Var h_l = ad::constant(input.radiance[2].pixels);
  ad::Var f_s = feature_extract(p, h_s);
  ad::Var f_m = feature_extract(p, h_m);
  ad::Var f_l = feature_extract(p, h_l);

  ad::Var a_s, a_l;
  if (ab.no_motion_attention) {
    a_s = ones_like(f_s->value);
    a_l = ones_like(f_l->value);
  } else {
    a_s = motion_attention(p, config_, "mt_s", f_s, f_m);
    a_l = motion_attention(p, config_, "mt_l", f_l, f_m);
  }
  ad::Var f_mef = build_mef_input(f_m, f_s, f_l, a_s, a_l);
  ad::Var mef = mef_stream(p, config_, f_mef);

  ad::Var sat_m = saturation_attention(p, config_, ad::constant(input.mask_medium.mask));
  ad::Var sat_s = saturation_attention(p, config_, ad::constant(input.mask_short.mask));

  std::array<ad::Var, 3> reference = encode(p, config_, f_m);
  std::array<ad::Var, 3> swapped = reference;
  ad::Var f_nft;
  std::array<ad::Var, 3> clue;
  if (!ab.no_nft) {
    f_nft = build_nft_input(f_s, a_s, sat_s);
    clue = encode(p, config_, f_nft);
    MatchField field;
    if (ab.match_with_encoder_features) {
      FeaturePyramid target, source;
      target.source = source.source = FeatureSource::encoder;
      for (std::size_t l = 0; l < 3; ++l) {
        target.levels[l] = reference[l]->value;
        source.levels[l] = clue[l]->value;
      }
      MatchOptions opts;
      opts.single_scale = ab.single_scale_vgg;
      field = progressive_match(source, target, config_.window, opts);
    } else {
      field = cached ? *cached : match_input(input);
    }
    for (std::size_t l = 0; l < 3; ++l) {
      const MatchLevel& ml = field.levels[l];
      if (ml.height != reference[l]->value.height() || ml.width != reference[l]->value.width())
        throw StructuralError("match field level " + std::to_string(l) +
                              " does not fit the encoder grid");
      swapped[l] = ad::swap_level(reference[l], clue[l], ml, config_.window.patch[l],
                                  config_.window.stride);
    }
    if (keep_trace) t.matches = std::move(field);
    t.swap_applied = true;
  }

  std::array<ad::Var, 3> decoded = decode(p, config_, swapped);
  ScaleAttention sc = scale_attention(p, config_, decoded, sat_m);
  ad::Var h_mef = blend_and_fuse(p, mef, sc);
  Composition comp = compose_output(p, config_, h_m, h_mef, sat_m);
  r.output = comp.output;

  if (keep_trace) {
    t.motion_short = a_s->value;
    t.motion_long = a_l->value;
    t.sat_short = sat_s->value;
    t.sat_medium = sat_m->value;
    for (std::size_t l = 0; l < 3; ++l) {
      t.scale_attention[l] = sc.maps[l]->value;
      t.encoder_reference[l] = reference[l]->value;
      if (clue[l]) t.encoder_clue[l] = clue[l]->value;
      t.swapped[l] = swapped[l]->value;
      t.decoded[l] = decoded[l]->value;
    }
    t.mef_input = f_mef->value;
    t.mef_features = mef->value;
    if (f_nft) t.nft_input = f_nft->value;
    t.h_mef = h_mef->value;
    t.fusion_weights = comp.weights->value;
  }
  return r;
}

Tensor Network::infer(const ParamStore& params, const ModelInput& input) const {
  BoundParams p(params, false);
  return forward(p, input, nullptr, false).output->value;
}

}  // namespace apnt
