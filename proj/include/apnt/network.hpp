#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "apnt/autograd.hpp"
#include "apnt/dataset.hpp"
#include "apnt/features.hpp"
#include "apnt/matcher.hpp"

namespace apnt {

struct AblationFlags {
  bool no_ms_hdr = false;
  bool no_nft = false;
  bool single_scale_vgg = false;
  bool match_with_encoder_features = false;
  bool no_motion_attention = false;
  bool no_scale_attention = false;

  friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

/// Variant names in table order.
const std::vector<std::string>& ablation_variant_names();
/// Sets the flag called `name`; unknown names are an InputError.
void set_ablation(AblationFlags& flags, const std::string& name, bool value = true);
bool get_ablation(const AblationFlags& flags, const std::string& name);

struct NetConfig {
  int base_channels = 64;
  int cab_count_mef = 6;
  int cab_count_codec = 2;  // CABs per encoder / decoder scale
  int cab_reduction = 16;
  int attention_conv_layers = 2;
  WindowSpec window;
  AblationFlags ablation;

  void validate() const;
  int reduced_channels(int channels) const;
};

/// Named learnable tensors. Iteration order is the lexicographic name order.
class ParamStore {
 public:
  void add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  std::vector<std::string> names() const;
  std::size_t size() const { return tensors_.size(); }
  std::size_t scalar_count() const;
  std::map<std::string, Tensor>& tensors() { return tensors_; }
  const std::map<std::string, Tensor>& tensors() const { return tensors_; }

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    return a.tensors_ == b.tensors_;
  }

 private:
  std::map<std::string, Tensor> tensors_;
};

/// Every parameter name and shape a configuration needs.
std::map<std::string, Shape> parameter_shapes(const NetConfig& config);

/// Xavier-uniform kernels, zero biases.
ParamStore init_params(const NetConfig& config, std::uint64_t seed);

/// Parameters wrapped as graph leaves for one forward pass.
class BoundParams {
 public:
  BoundParams(const ParamStore& store, bool trainable);
  const ad::Var& operator()(const std::string& name) const;
  const std::map<std::string, ad::Var>& vars() const { return vars_; }

 private:
  std::map<std::string, ad::Var> vars_;
};

// ---- blocks ----

ad::Var conv_layer(const BoundParams& p, const std::string& name, const ad::Var& x);
ad::Var channel_attention_block(const BoundParams& p, const std::string& name, const ad::Var& x);
/// Convolutions with rectifiers, ending in a sigmoid.
ad::Var attention_module(const BoundParams& p, const NetConfig& config, const std::string& name,
                         const ad::Var& x);

ad::Var feature_extract(const BoundParams& p, const ad::Var& radiance);
ad::Var motion_attention(const BoundParams& p, const NetConfig& config, const std::string& name,
                         const ad::Var& f_k, const ad::Var& f_m);
ad::Var build_mef_input(const ad::Var& f_m, const ad::Var& f_s, const ad::Var& f_l,
                        const ad::Var& a_s, const ad::Var& a_l);
ad::Var mef_stream(const BoundParams& p, const NetConfig& config, const ad::Var& f_mef);
ad::Var saturation_attention(const BoundParams& p, const NetConfig& config, const ad::Var& mask);
ad::Var build_nft_input(const ad::Var& f_s, const ad::Var& a_mt_s, const ad::Var& a_sat_s);
std::array<ad::Var, 3> encode(const BoundParams& p, const NetConfig& config, const ad::Var& f);
std::array<ad::Var, 3> decode(const BoundParams& p, const NetConfig& config,
                              const std::array<ad::Var, 3>& swapped);

struct ScaleAttention {
  std::array<ad::Var, 3> maps;      // A_sc^0, A_sc^1, A_sc^2
  std::array<ad::Var, 3> upsampled;  // F_dec^0, (F_dec^1) up 2, (F_dec^2) up 4
};
ScaleAttention scale_attention(const BoundParams& p, const NetConfig& config,
                               const std::array<ad::Var, 3>& decoded, const ad::Var& a_sat_m);
ad::Var blend_and_fuse(const BoundParams& p, const ad::Var& mef_features,
                       const ScaleAttention& attention);

struct Composition {
  ad::Var output;
  ad::Var weights;  // F_wgt[A_sat^m]
};
Composition compose_output(const BoundParams& p, const NetConfig& config, const ad::Var& h_m,
                           const ad::Var& h_mef, const ad::Var& a_sat_m);

// ---- full graph ----

struct ForwardTrace {
  Tensor motion_short, motion_long;  // A_mt^s, A_mt^l
  Tensor sat_short, sat_medium;      // A_sat^s, A_sat^m
  std::array<Tensor, 3> scale_attention;
  Tensor mef_input;
  Tensor mef_features;
  Tensor nft_input;  // empty under no_nft
  std::optional<MatchField> matches;
  std::array<Tensor, 3> encoder_reference;  // Phi(F_m)
  std::array<Tensor, 3> encoder_clue;       // Phi(F_nft), empty under no_nft
  std::array<Tensor, 3> swapped;
  bool swap_applied = false;
  std::array<Tensor, 3> decoded;
  Tensor h_mef;
  Tensor fusion_weights;
  // "ms_hdr", "short_unmasked", "encoder" or "none"
  std::string matching_domain;
};

struct ForwardResult {
  ad::Var output;
  ForwardTrace trace;
};

class Network {
 public:
  Network(NetConfig config, FeatureExtractor extractor, DomainParams domain);

  const NetConfig& config() const { return config_; }
  const DomainParams& domain() const { return domain_; }
  const FeatureExtractor& extractor() const { return extractor_; }

  /// True when matches come from the frozen extractor and can be cached.
  bool matches_are_static() const;
  std::string matching_domain() const;
  /// Target (medium) and source pyramids used for matching.
  std::pair<FeaturePyramid, FeaturePyramid> matching_pyramids(const ModelInput& input) const;
  MatchField match_input(const ModelInput& input) const;

  /// `cached` replaces the extractor matching when matches are static.
  ForwardResult forward(const BoundParams& params, const ModelInput& input,
                        const MatchField* cached = nullptr, bool keep_trace = true) const;
  Tensor infer(const ParamStore& params, const ModelInput& input) const;

 private:
  NetConfig config_;
  FeatureExtractor extractor_;
  DomainParams domain_;
};

}  // namespace apnt
