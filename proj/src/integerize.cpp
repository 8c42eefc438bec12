#include "cip/integerize.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "cip/model_io.hpp"

namespace cip {

using nlohmann::json;

namespace {

constexpr std::int64_t kInt32Limit = std::int64_t{1} << 31;
constexpr std::int64_t kAccLimit = std::int64_t{1} << 62;

std::int64_t round_shift(std::int64_t v, int s) {
  if (s <= 0)
    return v;
  return (v + (std::int64_t{1} << (s - 1))) >> s;
}

std::int32_t narrow32(std::int64_t v, const std::string &context) {
  if (v >= kInt32Limit || v < -kInt32Limit)
    throw std::runtime_error("integer overflow in " + context);
  return static_cast<std::int32_t>(v);
}

IntLayer quantize_layer(const ConvLayer &l, const std::string &name,
                        int in_scale, int o_x) {
  IntLayer q;
  q.name = name;
  q.in_channels = l.in_channels;
  q.out_channels = l.out_channels;
  q.kernel = l.kernel;
  q.activation = l.activation;
  q.in_scale = in_scale;
  q.o_l = o_x - in_scale;
  if (q.o_l < 1 || q.o_l > 30)
    throw std::runtime_error("quantize: offset chain out of range at " + name);
  q.o_y = o_x - q.o_l; // == in_scale
  q.out_scale = o_x - q.o_y;
  q.weights.resize(l.weights.size());
  for (std::size_t i = 0; i < l.weights.size(); ++i)
    q.weights[i] = narrow32(
        static_cast<std::int64_t>(
            std::floor(l.weights[i] * std::ldexp(1.0, q.o_l))),
        name + " weights");
  // biases live at the accumulator scale 2^(in_scale + o_l) = 2^o_x
  q.bias.resize(l.bias.size());
  for (std::size_t i = 0; i < l.bias.size(); ++i)
    q.bias[i] = narrow32(static_cast<std::int64_t>(
                             std::floor(l.bias[i] * std::ldexp(1.0, o_x))),
                         name + " bias");
  return q;
}

std::size_t int_branch_radius(const std::vector<IntLayer> &layers) {
  std::size_t r = 0;
  for (const auto &l : layers)
    r += (l.kernel - 1) / 2;
  return r;
}

IntTensor int_pad_replicate(const IntTensor &x, std::size_t radius) {
  if (radius == 0)
    return x;
  const std::size_t c = x.shape[0], h = x.shape[1], w = x.shape[2];
  IntTensor out({c, h + 2 * radius, w + 2 * radius});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h + 2 * radius; ++y)
      for (std::size_t xx = 0; xx < w + 2 * radius; ++xx) {
        const std::size_t sy = static_cast<std::size_t>(std::clamp<long>(
            static_cast<long>(y) - static_cast<long>(radius), 0,
            static_cast<long>(h) - 1));
        const std::size_t sx = static_cast<std::size_t>(std::clamp<long>(
            static_cast<long>(xx) - static_cast<long>(radius), 0,
            static_cast<long>(w) - 1));
        out(ch, y, xx) = x(ch, sy, sx);
      }
  return out;
}

IntTensor run_int_chain(const std::vector<IntLayer> &layers, IntTensor cur) {
  for (const auto &l : layers)
    cur = int_layer_forward(cur, l);
  return cur;
}

json int_layer_to_json(const IntLayer &l) {
  json j;
  j["name"] = l.name;
  j["k"] = l.kernel;
  j["in_ch"] = l.in_channels;
  j["out_ch"] = l.out_channels;
  j["activation"] = activation_name(l.activation);
  j["o_l"] = l.o_l;
  j["o_y"] = l.o_y;
  j["in_scale"] = l.in_scale;
  j["out_scale"] = l.out_scale;
  j["weights"] = l.weights;
  j["bias"] = l.bias;
  return j;
}

IntLayer int_layer_from_json(const json &j) {
  IntLayer l;
  l.name = j.at("name").get<std::string>();
  l.kernel = j.at("k").get<std::size_t>();
  l.in_channels = j.at("in_ch").get<std::size_t>();
  l.out_channels = j.at("out_ch").get<std::size_t>();
  l.activation = activation_from_name(j.at("activation").get<std::string>());
  l.o_l = j.at("o_l").get<int>();
  l.o_y = j.at("o_y").get<int>();
  l.in_scale = j.at("in_scale").get<int>();
  l.out_scale = j.at("out_scale").get<int>();
  l.weights = j.at("weights").get<std::vector<std::int32_t>>();
  l.bias = j.at("bias").get<std::vector<std::int32_t>>();
  return l;
}

} // namespace

IntTensor::IntTensor(std::vector<std::size_t> s, std::int32_t fill)
    : shape(std::move(s)) {
  std::size_t n = 1;
  for (std::size_t d : shape)
    n *= d;
  data.assign(n, fill);
}

std::vector<std::int32_t> build_lut_exp(int v_e, int o_e) {
  if (v_e >= 0)
    throw std::invalid_argument("build_lut_exp: v_e must be negative");
  const std::size_t n_e = static_cast<std::size_t>(-v_e) + 1;
  std::vector<std::int32_t> lut(n_e);
  const double k_e = std::ldexp(1.0, o_e);
  for (std::size_t k = 0; k < n_e; ++k) {
    const double s_k = static_cast<double>(v_e) + static_cast<double>(k);
    lut[k] = static_cast<std::int32_t>(std::floor(k_e * std::exp(s_k)));
  }
  return lut;
}

std::vector<std::int32_t> build_lut_sum(std::int64_t v_s, int q, int o_s) {
  if (q <= 0 || v_s <= 0)
    throw std::invalid_argument("build_lut_sum: invalid parameters");
  const std::size_t n_s = static_cast<std::size_t>((v_s + 1 + q - 1) / q);
  std::vector<std::int32_t> lut(n_s);
  const std::int64_t k_s = std::int64_t{1} << o_s;
  for (std::size_t l = 0; l < n_s; ++l) {
    const std::int64_t li = l == 0 ? 1 : static_cast<std::int64_t>(l);
    lut[l] = static_cast<std::int32_t>(k_s / (li * q));
  }
  return lut;
}

std::int32_t int_activation(std::int32_t x, Activation kind) {
  switch (kind) {
  case Activation::None:
    return x;
  case Activation::Relu:
    return x > 0 ? x : 0;
  case Activation::LeakyRelu:
    // 26/128 = 0.203125, approximating the 0.2 slope
    return x >= 0 ? x : static_cast<std::int32_t>(
                            (std::int64_t{26} * x) >> 7);
  }
  return x;
}

IntTensor int_layer_forward(const IntTensor &x, const IntLayer &layer) {
  std::size_t cin, h, w;
  if (x.shape.size() == 2) {
    cin = x.shape[0];
    h = 1;
    w = x.shape[1];
  } else {
    cin = x.shape[0];
    h = x.shape[1];
    w = x.shape[2];
  }
  if (cin != layer.in_channels)
    throw std::invalid_argument("int_layer_forward: channel mismatch in " +
                                layer.name);
  const std::size_t k = layer.kernel;
  if (h < k || w < k)
    throw std::invalid_argument("int_layer_forward: input smaller than kernel");
  const std::size_t oh = h - k + 1, ow = w - k + 1;
  IntTensor out(x.shape.size() == 2
                    ? std::vector<std::size_t>{layer.out_channels, ow}
                    : std::vector<std::size_t>{layer.out_channels, oh, ow});
  const std::int64_t rnd =
      layer.o_y > 0 ? (std::int64_t{1} << (layer.o_y - 1)) : 0;
  for (std::size_t co = 0; co < layer.out_channels; ++co) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        std::int64_t acc = layer.bias[co];
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const std::int32_t *wrow = &layer.weights[(co * cin + ci) * k * k];
          const std::int32_t *irow = &x.data[(ci * h + y) * w + xx];
          for (std::size_t u = 0; u < k; ++u)
            for (std::size_t v = 0; v < k; ++v)
              acc += static_cast<std::int64_t>(wrow[u * k + v]) *
                     irow[u * w + v];
        }
        const std::int64_t shifted = (acc + rnd) >> layer.o_y;
        out.data[(co * oh + y) * ow + xx] =
            int_activation(narrow32(shifted, layer.name), layer.activation);
      }
    }
  }
  return out;
}

std::vector<std::int32_t> int_softmax_row(const std::vector<std::int64_t> &logits,
                                          int o_m, const IntegerModel &m) {
  const std::size_t b = logits.size();
  // T = 0.5: division by the temperature is a doubling
  std::int64_t mx = std::numeric_limits<std::int64_t>::min();
  for (std::int64_t v : logits)
    mx = std::max(mx, 2 * v);
  std::vector<std::int32_t> num(b);
  std::int64_t denom = 0;
  for (std::size_t i = 0; i < b; ++i) {
    std::int64_t e = (2 * logits[i] - mx) >> o_m; // unit-exponent integers
    e = std::max<std::int64_t>(e, m.cfg.v_e);
    const std::size_t k = static_cast<std::size_t>(e - m.cfg.v_e);
    num[i] = m.lut_exp[k];
    denom += num[i];
  }
  std::size_t l = static_cast<std::size_t>(denom / m.cfg.q);
  l = std::min(l, m.lut_sum.size() - 1); // index 0 already clamps l=0 to l=1
  const std::int32_t mult = m.lut_sum[l];
  std::vector<std::int32_t> out(b);
  for (std::size_t i = 0; i < b; ++i)
    out[i] = narrow32(
        (static_cast<std::int64_t>(num[i]) * mult) >> m.sum_guard_bits,
        "int_softmax");
  return out;
}

IntegerModel quantize_model(const ModelWeights &w, const QuantizeConfig &cfg) {
  const NetworkSpec &spec = w.spec;
  if (spec.phase != Phase::Inference)
    throw std::invalid_argument("quantize_model: expected an inference-phase "
                                "model (fuse the train model first)");
  if (spec.temperature != 0.5)
    throw std::invalid_argument(
        "quantize_model: integer path requires temperature 0.5");

  IntegerModel m;
  m.scheme = spec.scheme;
  m.variants = spec.variants;
  m.temperature = spec.temperature;
  m.cfg = cfg;
  m.b_max = 65;
  m.logits_src_index = logits_source_index(spec);

  const int in_scale = cfg.input_bitdepth;
  int s = in_scale;
  for (std::size_t i = 0; i < spec.cc.size(); ++i) {
    m.cc.push_back(quantize_layer(spec.cc[i], "cc" + std::to_string(i + 1), s,
                                  cfg.o_x));
    m.cc.back().name = "cc" + std::to_string(i + 1);
    s = m.cc.back().out_scale;
  }
  m.content_scale = m.cc.back().out_scale;

  s = in_scale;
  for (std::size_t i = 0; i < spec.luma.size(); ++i) {
    m.luma.push_back(quantize_layer(spec.luma[i],
                                    "luma" + std::to_string(i + 1), s,
                                    cfg.o_x));
    s = m.luma.back().out_scale;
  }
  const int luma_scale = m.luma.back().out_scale;

  const int logits_src_scale = m.cc[m.logits_src_index].out_scale;
  m.attn_f = quantize_layer(spec.attn_f, "attn_f", logits_src_scale, cfg.o_x);
  m.attn_g = quantize_layer(spec.attn_g, "attn_g", luma_scale, cfg.o_x);
  m.attn_xbar =
      quantize_layer(spec.attn_xbar, "attn_xbar", luma_scale, cfg.o_x);
  m.o_m = m.attn_f.out_scale + m.attn_g.out_scale;
  m.att_out_scale = m.content_scale;
  m.o_scale = m.attn_xbar.out_scale;

  s = m.o_scale;
  for (std::size_t i = 0; i < spec.head.size(); ++i) {
    m.head.push_back(quantize_layer(spec.head[i],
                                    "head" + std::to_string(i + 1), s,
                                    cfg.o_x));
    s = m.head.back().out_scale;
  }
  m.out_scale = m.head.back().out_scale;

  m.lut_exp = build_lut_exp(cfg.v_e, cfg.o_e);
  const std::int64_t v_s =
      static_cast<std::int64_t>(m.b_max) * (std::int64_t{1} << cfg.o_e);
  m.lut_sum = build_lut_sum(v_s, cfg.q, cfg.o_s + m.sum_guard_bits);

  AuditReport report = audit_overflow(m);
  if (!report.ok) {
    for (const auto &e : report.entries)
      if (!e.ok)
        throw std::runtime_error(
            "quantize_model: overflow audit failed at " + e.name +
            " (worst-case accumulator " + std::to_string(e.worst_accumulator) +
            " >= " + std::to_string(e.limit) + ")");
  }
  return m;
}

IntBlockInput to_int_input(const BlockInput &in, const IntegerModel &m) {
  IntBlockInput out;
  out.n = in.n;
  const double scale = std::ldexp(1.0, m.cfg.input_bitdepth);
  out.x0 = IntTensor(in.x0.shape);
  for (std::size_t i = 0; i < in.x0.data.size(); ++i)
    out.x0.data[i] = static_cast<std::int32_t>(std::lround(in.x0.data[i] * scale));
  out.s0 = IntTensor(in.s0.shape);
  for (std::size_t i = 0; i < in.s0.data.size(); ++i)
    out.s0.data[i] = static_cast<std::int32_t>(std::lround(in.s0.data[i] * scale));
  return out;
}

IntForwardResult int_forward(const IntegerModel &m, const IntBlockInput &in) {
  const std::size_t n = in.n;
  const std::size_t b = 4 * n + 1;
  if (in.s0.shape.size() != 2 || in.s0.shape[1] != b)
    throw std::invalid_argument("int_forward: boundary shape mismatch");

  // boundary branch
  std::vector<IntTensor> cc_outs;
  IntTensor cur = in.s0;
  for (const auto &l : m.cc) {
    cur = int_layer_forward(cur, l);
    cc_outs.push_back(cur);
  }
  const IntTensor &logits_src = cc_outs[m.logits_src_index];
  const IntTensor &content = cc_outs.back();

  // luma branch
  IntTensor lcur = int_pad_replicate(in.x0, int_branch_radius(m.luma));
  lcur = run_int_chain(m.luma, lcur);
  IntTensor xj;
  xj.shape = {lcur.shape[0], n * n};
  xj.data = lcur.data;

  const IntTensor f = int_layer_forward(logits_src, m.attn_f); // h x b
  const IntTensor g = int_layer_forward(xj, m.attn_g);         // h x n^2
  const IntTensor xbar = int_layer_forward(xj, m.attn_xbar);   // D' x n^2

  const std::size_t h = f.shape[0];
  IntForwardResult res;
  res.attention = IntTensor({n * n, b});
  const std::size_t dprime = content.shape[0];
  IntTensor att({dprime, n * n});
  std::vector<std::int64_t> logits(b);
  for (std::size_t j = 0; j < n * n; ++j) {
    for (std::size_t i = 0; i < b; ++i) {
      std::int64_t acc = 0;
      for (std::size_t hh = 0; hh < h; ++hh)
        acc += static_cast<std::int64_t>(g(hh, j)) * f(hh, i);
      logits[i] = acc;
    }
    const std::vector<std::int32_t> alpha = int_softmax_row(logits, m.o_m, m);
    for (std::size_t i = 0; i < b; ++i)
      res.attention(j, i) = alpha[i];
    for (std::size_t d = 0; d < dprime; ++d) {
      std::int64_t acc = 0;
      for (std::size_t i = 0; i < b; ++i)
        acc += static_cast<std::int64_t>(content(d, i)) * alpha[i];
      att(d, j) = narrow32(round_shift(acc, m.cfg.o_s), "attention sum");
    }
  }

  IntTensor o({dprime, n, n});
  for (std::size_t i = 0; i < o.data.size(); ++i) {
    const std::int64_t prod =
        static_cast<std::int64_t>(xbar.data[i]) * att.data[i];
    o.data[i] = narrow32(round_shift(prod, m.content_scale), "xbar product");
  }

  IntTensor hcur = int_pad_replicate(o, int_branch_radius(m.head));
  hcur = run_int_chain(m.head, hcur);
  res.prediction = hcur;

  const std::int64_t maxval = (std::int64_t{1} << m.cfg.input_bitdepth) - 1;
  res.samples.resize(hcur.data.size());
  for (std::size_t i = 0; i < hcur.data.size(); ++i) {
    const std::int64_t v =
        round_shift(static_cast<std::int64_t>(hcur.data[i]) * maxval,
                    m.out_scale);
    res.samples[i] =
        static_cast<std::uint16_t>(std::clamp<std::int64_t>(v, 0, maxval));
  }
  return res;
}

Tensor int_prediction_to_float(const IntForwardResult &res, std::size_t n,
                               int bitdepth) {
  Tensor out({2, n, n});
  const double maxval = static_cast<double>((1 << bitdepth) - 1);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = res.samples[i] / maxval;
  return out;
}

namespace {

struct Interval {
  std::int64_t lo = 0, hi = 0;
  std::int64_t mag() const { return std::max(std::abs(lo), std::abs(hi)); }
};

std::int64_t shift_floor(std::int64_t v, int s) { return v >> s; }

// Per-channel interval propagation through a layer chain. Intervals keep
// weight signs, so the bound stays sound but far tighter than a plain
// sum-of-magnitudes estimate.
std::vector<Interval> audit_chain(const std::vector<IntLayer> &layers,
                                  std::vector<Interval> in, AuditReport &report) {
  for (const auto &l : layers) {
    const std::size_t k2 = l.kernel * l.kernel;
    std::vector<Interval> out(l.out_channels);
    AuditEntry entry;
    entry.name = l.name;
    entry.limit = kInt32Limit;
    const std::int64_t rnd =
        l.o_y > 0 ? (std::int64_t{1} << (l.o_y - 1)) : 0;
    for (std::size_t co = 0; co < l.out_channels; ++co) {
      std::int64_t hi = l.bias[co], lo = l.bias[co];
      for (std::size_t ci = 0; ci < l.in_channels; ++ci)
        for (std::size_t t = 0; t < k2; ++t) {
          const std::int64_t w =
              l.weights[(co * l.in_channels + ci) * k2 + t];
          hi += std::max(w * in[ci].lo, w * in[ci].hi);
          lo += std::min(w * in[ci].lo, w * in[ci].hi);
        }
      entry.worst_accumulator =
          std::max(entry.worst_accumulator,
                   std::max(std::abs(hi), std::abs(lo)) + rnd);
      Interval y{shift_floor(lo + rnd, l.o_y), shift_floor(hi + rnd, l.o_y)};
      switch (l.activation) {
      case Activation::None:
        break;
      case Activation::Relu:
        y.lo = std::max<std::int64_t>(y.lo, 0);
        y.hi = std::max<std::int64_t>(y.hi, 0);
        break;
      case Activation::LeakyRelu:
        if (y.lo < 0)
          y.lo = (26 * y.lo) >> 7;
        if (y.hi < 0)
          y.hi = (26 * y.hi) >> 7;
        break;
      }
      out[co] = y;
      entry.output_bound = std::max(entry.output_bound, y.mag());
    }
    entry.ok = entry.worst_accumulator < entry.limit;
    report.ok = report.ok && entry.ok;
    report.entries.push_back(entry);
    in = std::move(out);
  }
  return in;
}

std::int64_t max_mag(const std::vector<Interval> &v) {
  std::int64_t m = 0;
  for (const Interval &iv : v)
    m = std::max(m, iv.mag());
  return m;
}

} // namespace

AuditReport audit_overflow(const IntegerModel &m) {
  AuditReport report;
  // normalized data inputs live in [0, 2^bitdepth]
  const Interval input{0, std::int64_t{1} << m.cfg.input_bitdepth};

  std::vector<Interval> bounds(m.cc.front().in_channels, input);
  std::vector<Interval> logits_src_bounds;
  for (std::size_t i = 0; i < m.cc.size(); ++i) {
    bounds = audit_chain({m.cc[i]}, bounds, report);
    if (i == m.logits_src_index)
      logits_src_bounds = bounds;
  }
  const std::vector<Interval> content_bounds = bounds;

  std::vector<Interval> luma_in(m.luma.front().in_channels, input);
  const std::vector<Interval> luma_bounds =
      audit_chain(m.luma, luma_in, report);

  const std::vector<Interval> f_bounds =
      audit_chain({m.attn_f}, logits_src_bounds, report);
  const std::vector<Interval> g_bounds =
      audit_chain({m.attn_g}, luma_bounds, report);
  const std::vector<Interval> xbar_bounds =
      audit_chain({m.attn_xbar}, luma_bounds, report);

  AuditEntry logit_entry;
  logit_entry.name = "attention logits (64-bit)";
  logit_entry.limit = kAccLimit;
  logit_entry.worst_accumulator = 2 * static_cast<std::int64_t>(f_bounds.size()) *
                                  max_mag(f_bounds) * max_mag(g_bounds);
  logit_entry.output_bound = logit_entry.worst_accumulator;
  logit_entry.ok = logit_entry.worst_accumulator < logit_entry.limit;
  report.ok = report.ok && logit_entry.ok;
  report.entries.push_back(logit_entry);

  // The row maximum always hits LUT_EXP's last entry (K_e), so the
  // quantized denominator is at least K_e/Q and each weight is bounded by
  // K_e * LUT_SUM(K_e/Q); the weight sum is bounded by
  // D * K_s/((D-Q)) <= K_s * K_e/(K_e - Q).
  const std::int64_t k_e = std::int64_t{1} << m.cfg.o_e;
  const std::int64_t k_s = std::int64_t{1} << m.cfg.o_s;
  const std::size_t min_l = static_cast<std::size_t>(k_e / m.cfg.q);
  const std::int64_t alpha_bound =
      (k_e * m.lut_sum[std::min(min_l, m.lut_sum.size() - 1)]) >>
      m.sum_guard_bits;
  const std::int64_t alpha_sum_bound =
      (k_s * k_e + (k_e - m.cfg.q) - 1) / (k_e - m.cfg.q);
  AuditEntry alpha_entry;
  alpha_entry.name = "softmax table product";
  alpha_entry.limit = kInt32Limit;
  alpha_entry.worst_accumulator = alpha_bound;
  alpha_entry.output_bound = alpha_bound;
  alpha_entry.ok = alpha_bound < kInt32Limit;
  report.ok = report.ok && alpha_entry.ok;
  report.entries.push_back(alpha_entry);

  // attention weights are non-negative with a bounded sum, so the
  // attended feature stays inside the (scaled) content interval
  std::vector<Interval> att_bounds(content_bounds.size());
  AuditEntry att_entry;
  att_entry.name = "attention-weighted sum (64-bit)";
  att_entry.limit = kAccLimit;
  for (std::size_t d = 0; d < content_bounds.size(); ++d) {
    const std::int64_t hi =
        std::max<std::int64_t>(content_bounds[d].hi, 0) * alpha_sum_bound;
    const std::int64_t lo =
        std::min<std::int64_t>(content_bounds[d].lo, 0) * alpha_sum_bound;
    att_entry.worst_accumulator =
        std::max(att_entry.worst_accumulator,
                 std::max(std::abs(hi), std::abs(lo)));
    att_bounds[d] = Interval{shift_floor(lo, m.cfg.o_s) - 1,
                             shift_floor(hi, m.cfg.o_s) + 1};
  }
  att_entry.output_bound = max_mag(att_bounds);
  att_entry.ok = att_entry.worst_accumulator < att_entry.limit &&
                 att_entry.output_bound < kInt32Limit;
  report.ok = report.ok && att_entry.ok;
  report.entries.push_back(att_entry);

  AuditEntry o_entry;
  o_entry.name = "xbar elementwise product (64-bit)";
  o_entry.limit = kAccLimit;
  std::vector<Interval> o_bounds(att_bounds.size());
  for (std::size_t d = 0; d < att_bounds.size(); ++d) {
    const Interval &x = xbar_bounds[d];
    const Interval &a = att_bounds[d];
    const std::int64_t p[4] = {x.lo * a.lo, x.lo * a.hi, x.hi * a.lo,
                               x.hi * a.hi};
    const std::int64_t hi = *std::max_element(p, p + 4);
    const std::int64_t lo = *std::min_element(p, p + 4);
    o_entry.worst_accumulator =
        std::max(o_entry.worst_accumulator,
                 std::max(std::abs(hi), std::abs(lo)));
    o_bounds[d] = Interval{shift_floor(lo, m.content_scale),
                           shift_floor(hi, m.content_scale) + 1};
  }
  o_entry.output_bound = max_mag(o_bounds);
  o_entry.ok = o_entry.worst_accumulator < o_entry.limit &&
               o_entry.output_bound < kInt32Limit;
  report.ok = report.ok && o_entry.ok;
  report.entries.push_back(o_entry);

  audit_chain(m.head, o_bounds, report);
  return report;
}

std::string serialize_integer_model(const IntegerModel &m) {
  json j;
  j["format_version"] = kModelFormatVersion;
  j["model_type"] = "integer";
  j["scheme"] = scheme_name(m.scheme);
  j["variants"] = {
      {"baseline_nonlinear_luma", m.variants.baseline_nonlinear_luma},
      {"single_layer_luma", m.variants.single_layer_luma},
      {"sparsity_enabled", m.variants.sparsity_enabled}};
  j["temperature"] = m.temperature;
  j["quantize"] = {{"o_x", m.cfg.o_x},   {"o_e", m.cfg.o_e},
                   {"o_s", m.cfg.o_s},   {"v_e", m.cfg.v_e},
                   {"q", m.cfg.q},       {"input_bitdepth", m.cfg.input_bitdepth}};
  j["b_max"] = m.b_max;
  j["scales"] = {{"o_m", m.o_m},
                 {"content_scale", m.content_scale},
                 {"att_out_scale", m.att_out_scale},
                 {"o_scale", m.o_scale},
                 {"out_scale", m.out_scale}};
  j["logits_src_index"] = m.logits_src_index;
  j["lut_exp"] = m.lut_exp;
  j["lut_sum"] = m.lut_sum;
  j["sum_guard_bits"] = m.sum_guard_bits;
  auto group = [](const std::vector<IntLayer> &layers) {
    json arr = json::array();
    for (const auto &l : layers)
      arr.push_back(int_layer_to_json(l));
    return arr;
  };
  j["cc"] = group(m.cc);
  j["luma"] = group(m.luma);
  j["head"] = group(m.head);
  j["attn_f"] = int_layer_to_json(m.attn_f);
  j["attn_g"] = int_layer_to_json(m.attn_g);
  j["attn_xbar"] = int_layer_to_json(m.attn_xbar);
  return j.dump(2) + "\n";
}

IntegerModel parse_integer_model(const std::string &text) {
  json j = json::parse(text);
  const int version = j.at("format_version").get<int>();
  if (version != kModelFormatVersion)
    throw std::runtime_error("integer model: format version mismatch (got " +
                             std::to_string(version) + ", expected " +
                             std::to_string(kModelFormatVersion) + ")");
  if (j.value("model_type", "") != "integer")
    throw std::runtime_error("model file: not an integer model");
  IntegerModel m;
  m.scheme = scheme_from_name(j.at("scheme").get<std::string>());
  const json &v = j.at("variants");
  m.variants.baseline_nonlinear_luma =
      v.at("baseline_nonlinear_luma").get<bool>();
  m.variants.single_layer_luma = v.at("single_layer_luma").get<bool>();
  m.variants.sparsity_enabled = v.at("sparsity_enabled").get<bool>();
  m.temperature = j.at("temperature").get<double>();
  const json &qc = j.at("quantize");
  m.cfg.o_x = qc.at("o_x").get<int>();
  m.cfg.o_e = qc.at("o_e").get<int>();
  m.cfg.o_s = qc.at("o_s").get<int>();
  m.cfg.v_e = qc.at("v_e").get<int>();
  m.cfg.q = qc.at("q").get<int>();
  m.cfg.input_bitdepth = qc.at("input_bitdepth").get<int>();
  m.b_max = j.at("b_max").get<int>();
  const json &sc = j.at("scales");
  m.o_m = sc.at("o_m").get<int>();
  m.content_scale = sc.at("content_scale").get<int>();
  m.att_out_scale = sc.at("att_out_scale").get<int>();
  m.o_scale = sc.at("o_scale").get<int>();
  m.out_scale = sc.at("out_scale").get<int>();
  m.logits_src_index = j.at("logits_src_index").get<std::size_t>();
  m.lut_exp = j.at("lut_exp").get<std::vector<std::int32_t>>();
  m.lut_sum = j.at("lut_sum").get<std::vector<std::int32_t>>();
  m.sum_guard_bits = j.at("sum_guard_bits").get<int>();
  for (const json &lj : j.at("cc"))
    m.cc.push_back(int_layer_from_json(lj));
  for (const json &lj : j.at("luma"))
    m.luma.push_back(int_layer_from_json(lj));
  for (const json &lj : j.at("head"))
    m.head.push_back(int_layer_from_json(lj));
  m.attn_f = int_layer_from_json(j.at("attn_f"));
  m.attn_g = int_layer_from_json(j.at("attn_g"));
  m.attn_xbar = int_layer_from_json(j.at("attn_xbar"));
  return m;
}

void write_integer_model(const std::filesystem::path &path,
                         const IntegerModel &m) {
  atomic_write_file(path, serialize_integer_model(m));
}

IntegerModel read_integer_model(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::runtime_error("missing file: " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return parse_integer_model(text);
}

} // namespace cip
