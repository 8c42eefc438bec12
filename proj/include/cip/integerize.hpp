#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cip/model.hpp"

namespace cip {

// Dense integer tensor mirroring Tensor; activations are stored as
// 32-bit signed values, accumulation happens in 64 bits.
struct IntTensor {
  std::vector<std::size_t> shape;
  std::vector<std::int32_t> data;

  IntTensor() = default;
  explicit IntTensor(std::vector<std::size_t> s, std::int32_t fill = 0);

  std::size_t size() const { return data.size(); }
  std::int32_t &operator()(std::size_t r, std::size_t c) {
    return data[r * shape[1] + c];
  }
  std::int32_t operator()(std::size_t r, std::size_t c) const {
    return data[r * shape[1] + c];
  }
  std::int32_t &operator()(std::size_t ch, std::size_t y, std::size_t x) {
    return data[(ch * shape[1] + y) * shape[2] + x];
  }
  std::int32_t operator()(std::size_t ch, std::size_t y, std::size_t x) const {
    return data[(ch * shape[1] + y) * shape[2] + x];
  }
};

struct IntLayer {
  std::string name;
  std::size_t in_channels = 0, out_channels = 0, kernel = 1;
  std::vector<std::int32_t> weights; // scale 2^o_l
  std::vector<std::int32_t> bias;    // accumulator scale 2^(in_scale + o_l)
  Activation activation = Activation::None;
  int o_l = 0;       // weight quantization offset
  int o_y = 0;       // output shift
  int in_scale = 0;  // input fixed-point exponent
  int out_scale = 0; // output fixed-point exponent
};

struct QuantizeConfig {
  int o_x = 16;  // internal offset
  int o_e = 16;  // LUT-EXP scale exponent
  int o_s = 20;  // LUT-SUM scale exponent
  int v_e = -15; // exponent clamp
  int q = 1024;  // LUT-SUM quantization step
  int input_bitdepth = 8;
};

struct IntegerModel {
  Scheme scheme = Scheme::Scheme1;
  VariantFlags variants;
  double temperature = 0.5; // must be 0.5 (division folded into a doubling)
  QuantizeConfig cfg;
  int b_max = 65; // largest boundary length (16x16 blocks)

  std::vector<IntLayer> cc, luma, head;
  IntLayer attn_f, attn_g, attn_xbar;
  std::size_t logits_src_index = 0;

  std::vector<std::int32_t> lut_exp; // N_e = |V_e|+1 entries
  // Stored with `sum_guard_bits` extra precision (scale 2^(o_s+guard));
  // the softmax product shifts the guard back out, so outputs stay at
  // 2^o_s while the divisor floor keeps ~2^-8 relative resolution even
  // for near-uniform rows (a plain 2^o_s table would floor to zero).
  std::vector<std::int32_t> lut_sum; // N_s = ceil((V_s+1)/Q) entries
  int sum_guard_bits = 8;

  int o_m = 0;          // logit fixed-point exponent (scale_F + scale_G)
  int content_scale = 0;
  int att_out_scale = 0;
  int o_scale = 0;      // scale of the head input after the xbar product
  int out_scale = 0;    // scale of the final prediction
};

// LUT-EXP(k) = floor(2^o_e * e^(v_e + k)), k in [0, |v_e|].
std::vector<std::int32_t> build_lut_exp(int v_e, int o_e);

// LUT-SUM(l) = floor(2^o_s / (l*Q)); entry 0 duplicates l = 1 so that
// a quantized denominator of zero clamps instead of dividing by zero.
std::vector<std::int32_t> build_lut_sum(std::int64_t v_s, int q, int o_s);

std::int32_t int_activation(std::int32_t x, Activation kind);

// One shift-compensated layer step; 64-bit accumulation, 32-bit output.
IntTensor int_layer_forward(const IntTensor &x, const IntLayer &layer);

// Integer temperature softmax for one logit row at scale 2^o_m.
// Output entries are at scale 2^o_s.
std::vector<std::int32_t> int_softmax_row(const std::vector<std::int64_t> &logits,
                                          int o_m, const IntegerModel &m);

IntegerModel quantize_model(const ModelWeights &w, const QuantizeConfig &cfg);

struct IntBlockInput {
  IntTensor x0; // 1 x N x N at scale 2^in_scale
  IntTensor s0; // 3 x b
  std::size_t n = 0;
};
IntBlockInput to_int_input(const BlockInput &in, const IntegerModel &m);

struct IntForwardResult {
  IntTensor prediction;                  // 2 x N x N at 2^out_scale
  std::vector<std::uint16_t> samples;    // de-scaled to bitdepth range
  IntTensor attention;                   // N^2 x b at 2^o_s
};
IntForwardResult int_forward(const IntegerModel &m, const IntBlockInput &in);

// Converts the de-scaled integer prediction back to normalized floats.
Tensor int_prediction_to_float(const IntForwardResult &res, std::size_t n,
                               int bitdepth);

struct AuditEntry {
  std::string name;
  std::int64_t worst_accumulator = 0;
  std::int64_t output_bound = 0;
  std::int64_t limit = 0;
  bool ok = true;
};
struct AuditReport {
  std::vector<AuditEntry> entries;
  bool ok = true;
};
// Analytic worst-case bound propagation over the whole pipeline.
AuditReport audit_overflow(const IntegerModel &m);

std::string serialize_integer_model(const IntegerModel &m);
IntegerModel parse_integer_model(const std::string &text);
void write_integer_model(const std::filesystem::path &path,
                         const IntegerModel &m);
IntegerModel read_integer_model(const std::filesystem::path &path);

} // namespace cip
