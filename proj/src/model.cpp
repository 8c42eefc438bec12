#include "cip/model.hpp"

#include <algorithm>
#include <stdexcept>

namespace cip {

namespace {

ConvLayer make_layer(std::size_t cin, std::size_t cout, std::size_t k,
                     Activation act, double alpha = 0.2) {
  ConvLayer l;
  l.in_channels = cin;
  l.out_channels = cout;
  l.kernel = k;
  l.activation = act;
  l.alpha = alpha;
  l.weights.assign(l.weight_count(), 0.0);
  l.bias.assign(cout, 0.0);
  return l;
}

Tensor reshape(const Tensor &t, std::vector<std::size_t> shape) {
  Tensor out;
  out.shape = std::move(shape);
  out.data = t.data;
  std::size_t n = 1;
  for (std::size_t d : out.shape)
    n *= d;
  if (n != out.data.size())
    throw std::invalid_argument("reshape: element count mismatch");
  return out;
}

// Forward through a 1x1 layer keeping the pre-activation values.
void linear_step(const ConvLayer &l, const Tensor &in, Tensor &pre,
                 Tensor &out) {
  ConvLayer lin = l;
  lin.activation = Activation::None;
  pre = linear_forward(lin, in);
  out = apply_activation(pre, l.activation, l.alpha);
}

void conv_step(const ConvLayer &l, const Tensor &in, Tensor &pre,
               Tensor &out) {
  ConvLayer lin = l;
  lin.activation = Activation::None;
  pre = conv2d_valid(in, lin);
  out = apply_activation(pre, l.activation, l.alpha);
}

} // namespace

std::string scheme_name(Scheme s) {
  return s == Scheme::Scheme1 ? "scheme1" : "scheme2";
}
std::string phase_name(Phase p) {
  return p == Phase::Train ? "train" : "inference";
}
Scheme scheme_from_name(const std::string &name) {
  if (name == "scheme1")
    return Scheme::Scheme1;
  if (name == "scheme2")
    return Scheme::Scheme2;
  throw std::invalid_argument("unknown scheme: " + name);
}
Phase phase_from_name(const std::string &name) {
  if (name == "train")
    return Phase::Train;
  if (name == "inference")
    return Phase::Inference;
  throw std::invalid_argument("unknown phase: " + name);
}

std::vector<LayerRef> layer_list(NetworkSpec &spec) {
  std::vector<LayerRef> refs;
  for (std::size_t i = 0; i < spec.cc.size(); ++i)
    refs.push_back({"cc" + std::to_string(i + 1), "cc", &spec.cc[i]});
  if (spec.ae_decoder)
    refs.push_back({"ae_decoder", "ae_decoder", &*spec.ae_decoder});
  for (std::size_t i = 0; i < spec.luma.size(); ++i)
    refs.push_back({"luma" + std::to_string(i + 1), "luma", &spec.luma[i]});
  refs.push_back({"attn_f", "attention", &spec.attn_f});
  refs.push_back({"attn_g", "attention", &spec.attn_g});
  refs.push_back({"attn_xbar", "attention", &spec.attn_xbar});
  for (std::size_t i = 0; i < spec.head.size(); ++i)
    refs.push_back({"head" + std::to_string(i + 1), "head", &spec.head[i]});
  return refs;
}

std::vector<ConstLayerRef> layer_list(const NetworkSpec &spec) {
  auto refs = layer_list(const_cast<NetworkSpec &>(spec));
  std::vector<ConstLayerRef> out;
  out.reserve(refs.size());
  for (const auto &r : refs)
    out.push_back({r.name, r.branch, r.layer});
  return out;
}

NetworkSpec build_spec(const SchemeId &id) {
  NetworkSpec spec;
  spec.scheme = id.scheme;
  spec.phase = id.phase;
  spec.variants = id.variants;
  spec.temperature = 0.5;

  const bool train = id.phase == Phase::Train;
  const bool baseline = id.variants.baseline_nonlinear_luma;
  const bool single = id.variants.single_layer_luma;
  if (baseline && !train)
    throw std::invalid_argument(
        "build_spec: baseline-nonlinear variant has no inference phase "
        "(fusion requires linear layers)");
  const Activation branch_act = baseline ? Activation::Relu : Activation::None;

  if (single) {
    spec.luma.push_back(make_layer(1, 64, 5, Activation::None));
  } else if (train) {
    spec.luma.push_back(make_layer(1, 64, 3, branch_act));
    spec.luma.push_back(make_layer(64, 64, 3, branch_act));
  } else {
    spec.luma.push_back(make_layer(1, 64, 5, Activation::None));
  }

  if (id.scheme == Scheme::Scheme1) {
    spec.cc.push_back(make_layer(3, 32, 1, Activation::Relu));
    spec.cc.push_back(make_layer(32, 32, 1, Activation::Relu));
    spec.attn_f = make_layer(32, 16, 1, Activation::None);
    spec.attn_g = make_layer(64, 16, 1, Activation::None);
    spec.attn_xbar = make_layer(64, 32, 1, Activation::None);
    if (train) {
      spec.head.push_back(make_layer(32, 32, 3, branch_act));
      spec.head.push_back(make_layer(32, 2, 1, Activation::None));
    } else {
      spec.head.push_back(make_layer(32, 2, 3, Activation::None));
    }
  } else {
    spec.cc.push_back(make_layer(3, 32, 1, Activation::LeakyRelu));
    spec.cc.push_back(make_layer(32, 3, 1, Activation::LeakyRelu));
    if (train)
      spec.ae_decoder = make_layer(3, 32, 1, Activation::None);
    spec.attn_f = make_layer(32, 16, 1, Activation::None);
    spec.attn_g = make_layer(64, 16, 1, Activation::None);
    spec.attn_xbar = make_layer(64, 3, 1, Activation::None);
    if (train) {
      spec.head.push_back(make_layer(3, 3, 3, branch_act));
      spec.head.push_back(make_layer(3, 2, 1, Activation::None));
    } else {
      spec.head.push_back(make_layer(3, 2, 3, Activation::None));
    }
  }
  return spec;
}

std::size_t logits_source_index(const NetworkSpec &spec) {
  const std::size_t want = spec.attn_f.in_channels;
  for (std::size_t i = spec.cc.size(); i-- > 0;) {
    if (spec.cc[i].out_channels == want)
      return i;
  }
  throw std::invalid_argument(
      "no cc layer output matches attention input width");
}

std::size_t branch_radius(const std::vector<ConvLayer> &layers) {
  std::size_t r = 0;
  for (const auto &l : layers)
    r += (l.kernel - 1) / 2;
  return r;
}

ForwardTrace forward_trace(const ModelWeights &w, const BlockInput &in) {
  const NetworkSpec &spec = w.spec;
  const std::size_t n = in.n;
  if (in.x0.rank() != 3 || in.x0.dim(1) != n || in.x0.dim(2) != n)
    throw std::invalid_argument("forward: luma block shape mismatch");
  const std::size_t b = 4 * n + 1;
  if (in.s0.rank() != 2 || in.s0.dim(0) != 3 || in.s0.dim(1) != b)
    throw std::invalid_argument("forward: boundary volume shape mismatch");

  ForwardTrace tr;
  tr.n = n;
  tr.b = b;

  // cross-component boundary branch
  Tensor cur = in.s0;
  tr.cc_pre.resize(spec.cc.size());
  tr.cc_out.resize(spec.cc.size());
  for (std::size_t i = 0; i < spec.cc.size(); ++i) {
    linear_step(spec.cc[i], cur, tr.cc_pre[i], tr.cc_out[i]);
    cur = tr.cc_out[i];
  }
  tr.logits_src_index = logits_source_index(spec);
  const Tensor &logits_src = tr.cc_out[tr.logits_src_index];
  const Tensor &content = tr.cc_out.back();

  // luma convolutional branch, padded once by the total receptive radius
  tr.x_padded = pad(in.x0, branch_radius(spec.luma), PadMode::Replicate);
  Tensor lcur = tr.x_padded;
  tr.luma_pre.resize(spec.luma.size());
  tr.luma_out.resize(spec.luma.size());
  for (std::size_t i = 0; i < spec.luma.size(); ++i) {
    conv_step(spec.luma[i], lcur, tr.luma_pre[i], tr.luma_out[i]);
    lcur = tr.luma_out[i];
  }
  if (lcur.dim(1) != n || lcur.dim(2) != n)
    throw std::invalid_argument("forward: luma branch output size mismatch");
  tr.xj = reshape(lcur, {lcur.dim(0), n * n});

  // attention
  tr.f = linear_forward(spec.attn_f, logits_src);       // h x b
  tr.g = linear_forward(spec.attn_g, tr.xj);            // h x n^2
  tr.xbar = linear_forward(spec.attn_xbar, tr.xj);      // D' x n^2
  tr.m = matmul(transpose2d(tr.g), tr.f);               // n^2 x b
  tr.a = softmax_rows(tr.m, spec.temperature);
  tr.att = matmul(content, transpose2d(tr.a));          // D' x n^2
  if (tr.att.dim(0) != tr.xbar.dim(0))
    throw std::invalid_argument(
        "forward: content width does not match xbar projection");
  tr.o = tr.att;
  for (std::size_t i = 0; i < tr.o.data.size(); ++i)
    tr.o.data[i] *= tr.xbar.data[i];

  // prediction head
  Tensor o3 = reshape(tr.o, {tr.o.dim(0), n, n});
  tr.o_padded = pad(o3, branch_radius(spec.head), PadMode::Replicate);
  Tensor hcur = tr.o_padded;
  tr.head_pre.resize(spec.head.size());
  tr.head_out.resize(spec.head.size());
  for (std::size_t i = 0; i < spec.head.size(); ++i) {
    conv_step(spec.head[i], hcur, tr.head_pre[i], tr.head_out[i]);
    hcur = tr.head_out[i];
  }
  if (hcur.dim(0) != 2 || hcur.dim(1) != n || hcur.dim(2) != n)
    throw std::invalid_argument("forward: head output shape mismatch");
  tr.prediction = hcur;

  if (spec.ae_decoder)
    tr.s1_rec = linear_forward(*spec.ae_decoder, content);

  return tr;
}

ForwardResult forward(const ModelWeights &w, const BlockInput &in) {
  ForwardTrace tr = forward_trace(w, in);
  ForwardResult res;
  res.prediction = tr.prediction;
  for (double &v : res.prediction.data)
    v = std::clamp(v, 0.0, 1.0);
  res.attention.a = tr.a;
  return res;
}

ModelWeights fuse_model(const ModelWeights &w) {
  if (w.spec.phase != Phase::Train)
    throw std::invalid_argument("fuse_model: expected a train-phase model");
  ModelWeights out = w;
  NetworkSpec &spec = out.spec;
  spec.phase = Phase::Inference;
  spec.ae_decoder.reset();

  auto fuse_chain = [](std::vector<ConvLayer> &layers) {
    while (layers.size() > 1) {
      ConvLayer fused = fuse_linear_pair(layers[0], layers[1]);
      layers.erase(layers.begin());
      layers[0] = fused;
    }
  };
  fuse_chain(spec.luma);
  fuse_chain(spec.head);
  return out;
}

std::size_t count_params(const NetworkSpec &spec) {
  std::size_t total = 0;
  for (const auto &ref : layer_list(spec))
    total += ref.layer->weight_count() + ref.layer->out_channels;
  return total;
}

FlopCount count_flops(const NetworkSpec &spec, std::size_t n) {
  const std::uint64_t b = 4 * n + 1;
  const std::uint64_t n2 = n * n;
  std::uint64_t total = 0;
  auto conv_flops = [](const ConvLayer &l, std::uint64_t positions) {
    return 2ull * l.kernel * l.kernel * l.in_channels * l.out_channels *
           positions;
  };
  for (const auto &l : spec.cc)
    total += conv_flops(l, b);
  if (spec.ae_decoder)
    total += conv_flops(*spec.ae_decoder, b);
  std::uint64_t s = n + 2 * branch_radius(spec.luma);
  for (const auto &l : spec.luma) {
    s = s - l.kernel + 1;
    total += conv_flops(l, s * s);
  }
  total += conv_flops(spec.attn_f, b);
  total += conv_flops(spec.attn_g, n2);
  total += conv_flops(spec.attn_xbar, n2);
  const std::uint64_t h = spec.attn_f.out_channels;
  const std::uint64_t dprime = spec.attn_xbar.out_channels;
  total += 2 * h * n2 * b;      // logits G^T F
  total += 5 * n2 * b;          // softmax
  total += 2 * n2 * b * dprime; // attention-weighted content sum
  std::uint64_t hs = n + 2 * branch_radius(spec.head);
  for (const auto &l : spec.head) {
    hs = hs - l.kernel + 1;
    total += conv_flops(l, hs * hs);
  }
  FlopCount fc;
  fc.total = total;
  fc.convention =
      "2*K^2*Cin*Cout*positions per conv layer (pad-once valid positions; "
      "boundary layers over b=4N+1), plus 2*h*N^2*b for the logit product, "
      "2*N^2*b*D' for the attention-weighted sum and 5*N^2*b for softmax";
  return fc;
}

ReferenceArray extract_reference_array(const Tensor &luma_plane,
                                       const Tensor &cb_plane,
                                       const Tensor &cr_plane,
                                       std::size_t origin_x,
                                       std::size_t origin_y, std::size_t n,
                                       NeighborAvailability avail) {
  const Tensor *planes[3] = {&luma_plane, &cb_plane, &cr_plane};
  for (const Tensor *p : planes) {
    if (p->rank() != 2 || p->shape != luma_plane.shape)
      throw std::invalid_argument(
          "extract_reference_array: planes must be rank-2 with equal shape");
  }
  const std::size_t h = luma_plane.dim(0), w = luma_plane.dim(1);
  if (origin_x + n > w || origin_y + n > h)
    throw std::invalid_argument("extract_reference_array: block outside plane");

  const std::size_t b = 4 * n + 1;
  ReferenceArray out;
  out.s0 = Tensor({3, b}, 0.5);
  out.available.assign(b, 0);

  const long ox = static_cast<long>(origin_x);
  const long oy = static_cast<long>(origin_y);
  // positions as (x, y); index order fixed by the boundary scan
  for (std::size_t i = 0; i < b; ++i) {
    long px, py;
    bool ok;
    if (i < 2 * n) {
      // left column, bottom-most first (incl. below-left extension)
      px = ox - 1;
      py = oy + 2 * static_cast<long>(n) - 1 - static_cast<long>(i);
      ok = avail.left;
    } else if (i == 2 * n) {
      px = ox - 1;
      py = oy - 1;
      ok = avail.left && avail.above;
    } else {
      // top row, left-most first (incl. above-right extension)
      px = ox + static_cast<long>(i - 2 * n - 1);
      py = oy - 1;
      ok = avail.above;
    }
    ok = ok && px >= 0 && py >= 0 && px < static_cast<long>(w) &&
         py < static_cast<long>(h);
    if (ok) {
      out.available[i] = 1;
      for (std::size_t c = 0; c < 3; ++c)
        out.s0(c, i) = (*planes[c])(static_cast<std::size_t>(py),
                                    static_cast<std::size_t>(px));
    }
  }
  return out;
}

} // namespace cip
