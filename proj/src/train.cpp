#include "cip/train.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "cip/eval.hpp"
#include "cip/rng.hpp"

namespace cip {

double mse_loss(const Tensor &pred, const Tensor &gt) {
  if (pred.shape != gt.shape || pred.data.empty())
    throw std::invalid_argument("mse_loss: shape mismatch");
  double sum = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double d = gt.data[i] - pred.data[i];
    sum += d * d;
  }
  return sum / static_cast<double>(pred.data.size());
}

double ae_loss(const Tensor &s1, const Tensor &s1_rec, const Tensor &s2,
               double lambda_r, double lambda_s) {
  if (s1.shape != s1_rec.shape)
    throw std::invalid_argument("ae_loss: reconstruction shape mismatch");
  const double b = static_cast<double>(s1.dim(1));
  const double d = static_cast<double>(s1.dim(0));
  double rec = 0;
  for (std::size_t i = 0; i < s1.data.size(); ++i) {
    const double e = s1.data[i] - s1_rec.data[i];
    rec += e * e;
  }
  double l1 = 0;
  for (double v : s2.data)
    l1 += std::abs(v);
  return lambda_r / (d * b) * rec +
         lambda_s / (static_cast<double>(s2.dim(0)) * b) * l1;
}

double total_loss(double reg, double ae, const TrainConfig &cfg) {
  return cfg.lambda_reg * reg + cfg.lambda_ae * ae;
}

Gradients zero_gradients(const NetworkSpec &spec) {
  Gradients g;
  for (const auto &ref : layer_list(spec)) {
    g.weights.emplace_back(ref.layer->weight_count(), 0.0);
    g.bias.emplace_back(ref.layer->out_channels, 0.0);
  }
  return g;
}

namespace {

double act_derivative(double pre, Activation kind, double alpha) {
  switch (kind) {
  case Activation::None:
    return 1.0;
  case Activation::Relu:
    return pre > 0 ? 1.0 : 0.0;
  case Activation::LeakyRelu:
    return pre > 0 ? 1.0 : alpha;
  }
  return 1.0;
}

Tensor scale_by_derivative(const Tensor &dout, const Tensor &pre,
                           const ConvLayer &l) {
  Tensor d = dout;
  for (std::size_t i = 0; i < d.data.size(); ++i)
    d.data[i] *= act_derivative(pre.data[i], l.activation, l.alpha);
  return d;
}

// Accumulates conv-layer gradients and returns the input gradient.
Tensor conv_backward(const ConvLayer &l, const Tensor &input,
                     const Tensor &dpre, std::vector<double> &dw,
                     std::vector<double> &db) {
  const std::size_t k = l.kernel;
  const std::size_t oh = dpre.dim(1), ow = dpre.dim(2);
  Tensor din(input.shape, 0.0);
  for (std::size_t co = 0; co < l.out_channels; ++co) {
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        const double d = dpre(co, y, x);
        if (d == 0)
          continue;
        db[co] += d;
        for (std::size_t ci = 0; ci < l.in_channels; ++ci)
          for (std::size_t u = 0; u < k; ++u)
            for (std::size_t v = 0; v < k; ++v) {
              const std::size_t wi =
                  ((co * l.in_channels + ci) * k + u) * k + v;
              dw[wi] += d * input(ci, y + u, x + v);
              din(ci, y + u, x + v) += d * l.weights[wi];
            }
      }
  }
  return din;
}

// 1x1 layer over rank-2 activations (C x L).
Tensor linear_backward(const ConvLayer &l, const Tensor &input,
                       const Tensor &dpre, std::vector<double> &dw,
                       std::vector<double> &db) {
  const std::size_t cols = input.dim(1);
  Tensor din(input.shape, 0.0);
  for (std::size_t co = 0; co < l.out_channels; ++co)
    for (std::size_t j = 0; j < cols; ++j) {
      const double d = dpre(co, j);
      if (d == 0)
        continue;
      db[co] += d;
      for (std::size_t ci = 0; ci < l.in_channels; ++ci) {
        dw[co * l.in_channels + ci] += d * input(ci, j);
        din(ci, j) += d * l.weights[co * l.in_channels + ci];
      }
    }
  return din;
}

// Scatter-adds gradients of a replicate-padded tensor back to the source.
Tensor pad_backward_replicate(const Tensor &dpadded, std::size_t radius,
                              std::size_t h, std::size_t w) {
  Tensor out({dpadded.dim(0), h, w}, 0.0);
  for (std::size_t c = 0; c < dpadded.dim(0); ++c)
    for (std::size_t y = 0; y < dpadded.dim(1); ++y)
      for (std::size_t x = 0; x < dpadded.dim(2); ++x) {
        const std::size_t sy = static_cast<std::size_t>(std::clamp<long>(
            static_cast<long>(y) - static_cast<long>(radius), 0,
            static_cast<long>(h) - 1));
        const std::size_t sx = static_cast<std::size_t>(std::clamp<long>(
            static_cast<long>(x) - static_cast<long>(radius), 0,
            static_cast<long>(w) - 1));
        out(c, sy, sx) += dpadded(c, y, x);
      }
  return out;
}

struct GradLayout {
  std::size_t cc_start = 0, ae_decoder = 0, luma_start = 0;
  std::size_t attn_f = 0, attn_g = 0, attn_xbar = 0, head_start = 0;
  bool has_decoder = false;
};

GradLayout make_layout(const NetworkSpec &spec) {
  GradLayout lo;
  lo.cc_start = 0;
  lo.has_decoder = spec.ae_decoder.has_value();
  lo.ae_decoder = spec.cc.size();
  lo.luma_start = spec.cc.size() + (lo.has_decoder ? 1 : 0);
  lo.attn_f = lo.luma_start + spec.luma.size();
  lo.attn_g = lo.attn_f + 1;
  lo.attn_xbar = lo.attn_g + 1;
  lo.head_start = lo.attn_xbar + 1;
  return lo;
}

void backward_sample(const ModelWeights &w, const BlockSample &s,
                     const TrainConfig &cfg, const GradLayout &lo,
                     Gradients &g, LossParts &loss) {
  const NetworkSpec &spec = w.spec;
  BlockInput in;
  in.n = s.n;
  in.x0 = s.x0;
  in.s0 = s.s0;
  const ForwardTrace tr = forward_trace(w, in);
  const std::size_t n = tr.n;

  const double reg = mse_loss(tr.prediction, s.z);
  const Tensor &content = tr.cc_out.back();
  const bool has_ae = spec.ae_decoder.has_value();
  const double lambda_s_eff =
      spec.variants.sparsity_enabled ? cfg.lambda_s : 0.0;
  double ae = 0;
  if (has_ae)
    ae = ae_loss(tr.cc_out[tr.logits_src_index], tr.s1_rec, content,
                 cfg.lambda_r, lambda_s_eff);
  loss.reg += reg;
  loss.ae += ae;
  const double total = total_loss(reg, ae, cfg);
  loss.total += total;
  if (!std::isfinite(total))
    throw std::runtime_error("backward: non-finite loss");

  // regression term: d/dy (1/(2N^2)) sum (z-y)^2 = (y-z)/N^2
  Tensor dcur(tr.prediction.shape, 0.0);
  const double mse_scale =
      cfg.lambda_reg / static_cast<double>(n * n);
  for (std::size_t i = 0; i < dcur.data.size(); ++i)
    dcur.data[i] =
        mse_scale * (tr.prediction.data[i] - s.z.data[i]);

  // prediction head
  for (std::size_t i = spec.head.size(); i-- > 0;) {
    const ConvLayer &l = spec.head[i];
    const Tensor dpre = scale_by_derivative(dcur, tr.head_pre[i], l);
    const Tensor &input = i == 0 ? tr.o_padded : tr.head_out[i - 1];
    dcur = conv_backward(l, input, dpre, g.weights[lo.head_start + i],
                         g.bias[lo.head_start + i]);
  }
  Tensor do3 = pad_backward_replicate(dcur, branch_radius(spec.head), n, n);
  Tensor dO;
  dO.shape = {do3.dim(0), n * n};
  dO.data = std::move(do3.data);

  // O = att (.) xbar
  Tensor datt = dO, dxbar = dO;
  for (std::size_t i = 0; i < dO.data.size(); ++i) {
    datt.data[i] = dO.data[i] * tr.xbar.data[i];
    dxbar.data[i] = dO.data[i] * tr.att.data[i];
  }

  Tensor dxj = linear_backward(spec.attn_xbar, tr.xj, dxbar,
                               g.weights[lo.attn_xbar], g.bias[lo.attn_xbar]);

  // att = content * A^T
  Tensor dcontent = matmul(datt, tr.a);                  // D' x b
  Tensor da = matmul(transpose2d(datt), content);        // n^2 x b

  // temperature softmax backward, row-wise
  Tensor dm(tr.m.shape, 0.0);
  const std::size_t b = tr.b;
  for (std::size_t j = 0; j < n * n; ++j) {
    double dot = 0;
    for (std::size_t i = 0; i < b; ++i)
      dot += da(j, i) * tr.a(j, i);
    for (std::size_t i = 0; i < b; ++i)
      dm(j, i) = tr.a(j, i) * (da(j, i) - dot) / spec.temperature;
  }

  // M = G^T F
  const Tensor dg = matmul(tr.f, transpose2d(dm)); // h x n^2
  const Tensor df = matmul(tr.g, dm);              // h x b

  {
    Tensor din = linear_backward(spec.attn_g, tr.xj, dg, g.weights[lo.attn_g],
                                 g.bias[lo.attn_g]);
    for (std::size_t i = 0; i < dxj.data.size(); ++i)
      dxj.data[i] += din.data[i];
  }

  // per-cc-output gradient accumulators
  std::vector<Tensor> dcc(spec.cc.size());
  for (std::size_t i = 0; i < spec.cc.size(); ++i)
    dcc[i] = Tensor(tr.cc_out[i].shape, 0.0);
  {
    const Tensor &logits_src = tr.cc_out[tr.logits_src_index];
    Tensor din = linear_backward(spec.attn_f, logits_src, df,
                                 g.weights[lo.attn_f], g.bias[lo.attn_f]);
    for (std::size_t i = 0; i < din.data.size(); ++i)
      dcc[tr.logits_src_index].data[i] += din.data[i];
  }
  for (std::size_t i = 0; i < dcontent.data.size(); ++i)
    dcc.back().data[i] += dcontent.data[i];

  if (has_ae) {
    const Tensor &s1 = tr.cc_out[tr.logits_src_index];
    const double rec_scale =
        2.0 * cfg.lambda_ae * cfg.lambda_r /
        (static_cast<double>(s1.dim(0)) * static_cast<double>(s1.dim(1)));
    Tensor ds1_rec(tr.s1_rec.shape, 0.0);
    for (std::size_t i = 0; i < ds1_rec.data.size(); ++i)
      ds1_rec.data[i] = rec_scale * (tr.s1_rec.data[i] - s1.data[i]);
    Tensor din = linear_backward(*spec.ae_decoder, content, ds1_rec,
                                 g.weights[lo.ae_decoder],
                                 g.bias[lo.ae_decoder]);
    for (std::size_t i = 0; i < din.data.size(); ++i)
      dcc.back().data[i] += din.data[i];
    for (std::size_t i = 0; i < s1.data.size(); ++i)
      dcc[tr.logits_src_index].data[i] +=
          rec_scale * (s1.data[i] - tr.s1_rec.data[i]);
    if (lambda_s_eff > 0) {
      const double l1_scale =
          cfg.lambda_ae * lambda_s_eff /
          (static_cast<double>(content.dim(0)) *
           static_cast<double>(content.dim(1)));
      for (std::size_t i = 0; i < content.data.size(); ++i) {
        const double v = content.data[i];
        if (v != 0)
          dcc.back().data[i] += v > 0 ? l1_scale : -l1_scale;
      }
    }
  }

  // luma branch
  Tensor dluma;
  dluma.shape = {dxj.dim(0), n, n};
  dluma.data = std::move(dxj.data);
  for (std::size_t i = spec.luma.size(); i-- > 0;) {
    const ConvLayer &l = spec.luma[i];
    const Tensor dpre = scale_by_derivative(dluma, tr.luma_pre[i], l);
    const Tensor &input = i == 0 ? tr.x_padded : tr.luma_out[i - 1];
    dluma = conv_backward(l, input, dpre, g.weights[lo.luma_start + i],
                          g.bias[lo.luma_start + i]);
  }

  // cross-component chain
  for (std::size_t i = spec.cc.size(); i-- > 0;) {
    const ConvLayer &l = spec.cc[i];
    const Tensor dpre = scale_by_derivative(dcc[i], tr.cc_pre[i], l);
    const Tensor &input = i == 0 ? in.s0 : tr.cc_out[i - 1];
    Tensor din = linear_backward(l, input, dpre, g.weights[lo.cc_start + i],
                                 g.bias[lo.cc_start + i]);
    if (i > 0)
      for (std::size_t k = 0; k < din.data.size(); ++k)
        dcc[i - 1].data[k] += din.data[k];
  }
}

} // namespace

BackwardResult backward(const ModelWeights &w,
                        const std::vector<BlockSample> &batch,
                        const TrainConfig &cfg) {
  if (batch.empty())
    throw std::invalid_argument("backward: empty batch");
  for (const auto &s : batch)
    if (s.n != batch.front().n)
      throw std::invalid_argument("backward: batch mixes block sizes");

  BackwardResult res;
  res.grads = zero_gradients(w.spec);
  const GradLayout lo = make_layout(w.spec);
  for (const auto &s : batch)
    backward_sample(w, s, cfg, lo, res.grads, res.loss);

  const double inv = 1.0 / static_cast<double>(batch.size());
  for (auto &arr : res.grads.weights)
    for (double &v : arr)
      v *= inv;
  for (auto &arr : res.grads.bias)
    for (double &v : arr)
      v *= inv;
  res.loss.reg *= inv;
  res.loss.ae *= inv;
  res.loss.total *= inv;
  return res;
}

AdamState make_adam_state(const NetworkSpec &spec) {
  AdamState st;
  for (const auto &ref : layer_list(spec)) {
    st.m_w.emplace_back(ref.layer->weight_count(), 0.0);
    st.v_w.emplace_back(ref.layer->weight_count(), 0.0);
    st.m_b.emplace_back(ref.layer->out_channels, 0.0);
    st.v_b.emplace_back(ref.layer->out_channels, 0.0);
  }
  return st;
}

namespace {

void adam_update(std::vector<double> &param, const std::vector<double> &grad,
                 std::vector<double> &m, std::vector<double> &v,
                 const TrainConfig &cfg, double bc1, double bc2) {
  for (std::size_t i = 0; i < param.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * grad[i];
    v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * grad[i] * grad[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    param[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
  }
}

} // namespace

void adam_step(ModelWeights &w, const Gradients &g, AdamState &state,
               const TrainConfig &cfg) {
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  auto refs = layer_list(w.spec);
  for (std::size_t i = 0; i < refs.size(); ++i) {
    adam_update(refs[i].layer->weights, g.weights[i], state.m_w[i],
                state.v_w[i], cfg, bc1, bc2);
    adam_update(refs[i].layer->bias, g.bias[i], state.m_b[i], state.v_b[i],
                cfg, bc1, bc2);
  }
}

void init_weights(ModelWeights &w, std::uint64_t seed) {
  Rng rng(seed);
  for (auto &ref : layer_list(w.spec)) {
    ConvLayer &l = *ref.layer;
    const double fan_in =
        static_cast<double>(l.kernel * l.kernel * l.in_channels);
    const double fan_out =
        static_cast<double>(l.kernel * l.kernel * l.out_channels);
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (double &v : l.weights)
      v = (2.0 * rng.uniform() - 1.0) * bound;
    std::fill(l.bias.begin(), l.bias.end(), 0.0);
  }
  w.seed = seed;
  w.training_steps = 0;
}

double validation_mse(const ModelWeights &w,
                      const std::vector<BlockSample> &blocks) {
  if (blocks.empty())
    throw std::invalid_argument("validation_mse: empty block set");
  double sum = 0;
  for (const auto &s : blocks) {
    BlockInput in;
    in.n = s.n;
    in.x0 = s.x0;
    in.s0 = s.s0;
    sum += mse_loss(forward(w, in).prediction, s.z);
  }
  return sum / static_cast<double>(blocks.size());
}

ModelWeights train_multimodel(const std::vector<BlockSample> &samples,
                              const TrainConfig &cfg, const SchemeId &id,
                              std::ostream *log) {
  if (samples.empty())
    throw std::invalid_argument("train: empty dataset");
  if (cfg.sizes.empty())
    throw std::invalid_argument("train: no block sizes configured");

  ModelWeights w;
  w.spec = build_spec(id);
  init_weights(w, cfg.seed);
  AdamState state = make_adam_state(w.spec);

  // per-size train/validation split, deterministic by container order
  std::map<std::size_t, std::vector<std::size_t>> train_idx;
  std::map<std::size_t, std::vector<std::size_t>> val_idx;
  for (std::size_t n : cfg.sizes)
    train_idx[n];
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto it = train_idx.find(samples[i].n);
    if (it != train_idx.end())
      it->second.push_back(i);
  }
  for (auto &[n, idx] : train_idx) {
    if (idx.empty())
      throw std::invalid_argument("train: no samples of size " +
                                  std::to_string(n));
    std::size_t vcount = static_cast<std::size_t>(
        std::llround(cfg.val_fraction * static_cast<double>(idx.size())));
    vcount = std::min(vcount, idx.size() - 1);
    val_idx[n].assign(idx.end() - static_cast<long>(vcount), idx.end());
    idx.resize(idx.size() - vcount);
  }

  std::vector<BlockSample> val_blocks;
  std::map<std::size_t, std::vector<BlockSample>> val_by_size;
  for (const auto &[n, idx] : val_idx)
    for (std::size_t i : idx) {
      val_blocks.push_back(samples[i]);
      val_by_size[n].push_back(samples[i]);
    }

  if (log)
    *log << "epoch,step,size,loss_reg,loss_ae,loss_total,val_psnr_4,"
            "val_psnr_8,val_psnr_16\n";

  ModelWeights last_good = w;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(cfg.seed, epoch + 1));
    std::map<std::size_t, std::vector<std::size_t>> order;
    std::size_t max_batches = 0;
    for (const auto &[n, idx] : train_idx) {
      std::vector<std::size_t> o = idx;
      for (std::size_t i = o.size(); i > 1; --i)
        std::swap(o[i - 1], o[shuffle_rng.below(i)]);
      order[n] = std::move(o);
      max_batches = std::max(
          max_batches, (idx.size() + cfg.batch_size - 1) / cfg.batch_size);
    }

    std::map<std::size_t, LossParts> epoch_loss;
    std::map<std::size_t, std::size_t> epoch_steps;
    bool diverged = false;
    for (std::size_t m = 0; m < max_batches && !diverged; ++m) {
      for (const auto &[n, o] : order) {
        const std::size_t begin = m * cfg.batch_size;
        if (begin >= o.size())
          continue;
        const std::size_t end = std::min(begin + cfg.batch_size, o.size());
        std::vector<BlockSample> batch;
        batch.reserve(end - begin);
        for (std::size_t i = begin; i < end; ++i)
          batch.push_back(samples[o[i]]);
        BackwardResult res;
        try {
          res = backward(w, batch, cfg);
        } catch (const std::runtime_error &) {
          diverged = true;
          break;
        }
        if (!std::isfinite(res.loss.total)) {
          diverged = true;
          break;
        }
        adam_step(w, res.grads, state, cfg);
        auto &acc = epoch_loss[n];
        acc.reg += res.loss.reg;
        acc.ae += res.loss.ae;
        acc.total += res.loss.total;
        ++epoch_steps[n];
      }
    }
    if (diverged) {
      if (log)
        *log << "# divergence detected, restoring last checkpoint\n";
      return last_good;
    }

    std::map<std::size_t, double> val_psnr;
    for (const auto &[n, blocks] : val_by_size) {
      double sum = 0;
      for (const auto &s : blocks) {
        BlockInput in;
        in.n = s.n;
        in.x0 = s.x0;
        in.s0 = s.s0;
        sum += psnr(forward(w, in).prediction, s.z);
      }
      val_psnr[n] =
          blocks.empty() ? 0.0 : sum / static_cast<double>(blocks.size());
    }
    if (log) {
      for (const auto &[n, acc] : epoch_loss) {
        const double steps = static_cast<double>(epoch_steps[n]);
        *log << epoch + 1 << ',' << state.t << ',' << n << ','
             << acc.reg / steps << ',' << acc.ae / steps << ','
             << acc.total / steps << ',' << val_psnr[4] << ','
             << val_psnr[8] << ',' << val_psnr[16] << '\n';
      }
    }
    last_good = w;
    last_good.training_steps = state.t;
  }
  w.training_steps = state.t;
  return w;
}

} // namespace cip
