#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cip/tensor.hpp"

namespace cip {

enum class Scheme { Scheme1, Scheme2 };
enum class Phase { Train, Inference };

std::string scheme_name(Scheme s);
std::string phase_name(Phase p);
Scheme scheme_from_name(const std::string &name);
Phase phase_from_name(const std::string &name);

struct VariantFlags {
  bool baseline_nonlinear_luma = false; // "[4] with multi-model" ablation
  bool single_layer_luma = false;       // single 5x5 luma branch in both phases
  bool sparsity_enabled = true;         // scheme2 sparsity term
};

struct SchemeId {
  Scheme scheme = Scheme::Scheme1;
  Phase phase = Phase::Train;
  VariantFlags variants;
};

// Declarative three-branch architecture. The cross-component (cc) chain
// ends in the content features fed to the attention-weighted sum; the
// attention logits are taken from the last cc layer whose output width
// matches attn_f's input width (the pre-encoder features for scheme 2).
struct NetworkSpec {
  Scheme scheme = Scheme::Scheme1;
  Phase phase = Phase::Train;
  VariantFlags variants;
  std::vector<ConvLayer> cc;
  std::optional<ConvLayer> ae_decoder; // scheme2 train only
  std::vector<ConvLayer> luma;
  ConvLayer attn_f, attn_g, attn_xbar; // 1x1 projections, no activation
  std::vector<ConvLayer> head;
  double temperature = 0.5;
};

struct ModelWeights {
  NetworkSpec spec;
  std::uint64_t seed = 0;
  std::uint64_t training_steps = 0;
};

struct BlockInput {
  Tensor x0; // 1 x N x N normalized luma
  Tensor s0; // 3 x b boundary volume, b = 4N + 1
  std::size_t n = 0;
};

struct AttentionMap {
  Tensor a; // N^2 x b row-stochastic probabilities
};

struct ForwardResult {
  Tensor prediction; // 2 x N x N, clipped to [0,1]
  AttentionMap attention;
};

// Every intermediate needed by the analytic backward pass. The recorded
// prediction is pre-clipping; the public forward clips.
struct ForwardTrace {
  std::size_t n = 0, b = 0;
  Tensor x_padded;
  std::vector<Tensor> cc_pre, cc_out;
  std::vector<Tensor> luma_pre, luma_out;
  std::size_t logits_src_index = 0;
  Tensor xj;            // C x N^2
  Tensor f, g, xbar;    // projections
  Tensor m, a;          // logits and attention
  Tensor att, o;        // D' x N^2
  Tensor o_padded;
  std::vector<Tensor> head_pre, head_out;
  Tensor s1_rec;        // decoder output (scheme2 train), else empty
  Tensor prediction;    // 2 x N x N, unclipped
};

struct LayerRef {
  std::string name;
  std::string branch;
  ConvLayer *layer = nullptr;
};
struct ConstLayerRef {
  std::string name;
  std::string branch;
  const ConvLayer *layer = nullptr;
};

// Layers in declaration order: cc..., ae_decoder, luma..., attn_f,
// attn_g, attn_xbar, head... This order fixes weight-init draws and the
// gradient/optimizer array layout.
std::vector<LayerRef> layer_list(NetworkSpec &spec);
std::vector<ConstLayerRef> layer_list(const NetworkSpec &spec);

NetworkSpec build_spec(const SchemeId &id);

// Index of the cc output feeding the attention logits.
std::size_t logits_source_index(const NetworkSpec &spec);

// Total receptive radius of a valid-convolution chain.
std::size_t branch_radius(const std::vector<ConvLayer> &layers);

ForwardTrace forward_trace(const ModelWeights &w, const BlockInput &in);
ForwardResult forward(const ModelWeights &w, const BlockInput &in);

// Fuses the luma and head chains of a train-phase model into the
// inference-phase architecture. Weights are carried over.
ModelWeights fuse_model(const ModelWeights &w);

std::size_t count_params(const NetworkSpec &spec);

struct FlopCount {
  std::uint64_t total = 0;
  std::string convention;
};
FlopCount count_flops(const NetworkSpec &spec, std::size_t n);

struct NeighborAvailability {
  bool left = true;
  bool above = true;
};

struct ReferenceArray {
  Tensor s0;                        // 3 x b
  std::vector<std::uint8_t> available; // per-position flags, length b
};

// Builds the 3 x (4N+1) boundary volume from the downsampled-luma and two
// chroma planes (rank-2, identical resolution). Ordering: left column
// bottom-most first (incl. below-left extension), corner, top row
// left-most first (incl. above-right extension). Unavailable positions
// are filled with 0.5.
ReferenceArray extract_reference_array(const Tensor &luma_plane,
                                       const Tensor &cb_plane,
                                       const Tensor &cr_plane,
                                       std::size_t origin_x,
                                       std::size_t origin_y, std::size_t n,
                                       NeighborAvailability avail);

} // namespace cip
