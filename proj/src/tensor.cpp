#include "cip/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace cip {

std::string activation_name(Activation a) {
  switch (a) {
  case Activation::None:
    return "none";
  case Activation::Relu:
    return "relu";
  case Activation::LeakyRelu:
    return "leaky_relu";
  }
  return "none";
}

Activation activation_from_name(const std::string &name) {
  if (name == "none")
    return Activation::None;
  if (name == "relu")
    return Activation::Relu;
  if (name == "leaky_relu")
    return Activation::LeakyRelu;
  throw std::invalid_argument("unknown activation: " + name);
}

Tensor::Tensor(std::vector<std::size_t> s, double fill) : shape(std::move(s)) {
  std::size_t n = 1;
  for (std::size_t d : shape)
    n *= d;
  data.assign(n, fill);
}

void check_finite(const Tensor &t, const std::string &context) {
  for (double v : t.data) {
    if (!std::isfinite(v))
      throw std::runtime_error("non-finite value in " + context);
  }
}

Tensor pad(const Tensor &x, std::size_t radius, PadMode mode) {
  if (x.rank() != 3)
    throw std::invalid_argument("pad: expected rank-3 tensor");
  if (radius == 0)
    return x;
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor out({c, h + 2 * radius, w + 2 * radius});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h + 2 * radius; ++y) {
      for (std::size_t xx = 0; xx < w + 2 * radius; ++xx) {
        const long sy = static_cast<long>(y) - static_cast<long>(radius);
        const long sx = static_cast<long>(xx) - static_cast<long>(radius);
        if (mode == PadMode::Zero) {
          if (sy < 0 || sx < 0 || sy >= static_cast<long>(h) ||
              sx >= static_cast<long>(w))
            out(ch, y, xx) = 0.0;
          else
            out(ch, y, xx) = x(ch, static_cast<std::size_t>(sy),
                               static_cast<std::size_t>(sx));
        } else {
          const std::size_t cy = static_cast<std::size_t>(
              std::clamp<long>(sy, 0, static_cast<long>(h) - 1));
          const std::size_t cx = static_cast<std::size_t>(
              std::clamp<long>(sx, 0, static_cast<long>(w) - 1));
          out(ch, y, xx) = x(ch, cy, cx);
        }
      }
    }
  }
  return out;
}

double activation_scalar(double v, Activation kind, double alpha) {
  switch (kind) {
  case Activation::None:
    return v;
  case Activation::Relu:
    return v > 0.0 ? v : 0.0;
  case Activation::LeakyRelu:
    return v >= 0.0 ? v : alpha * v;
  }
  return v;
}

Tensor apply_activation(const Tensor &x, Activation kind, double alpha) {
  Tensor out = x;
  for (double &v : out.data)
    v = activation_scalar(v, kind, alpha);
  return out;
}

Tensor conv2d_valid(const Tensor &x, const ConvLayer &layer) {
  if (x.rank() != 3)
    throw std::invalid_argument("conv2d_valid: expected rank-3 input");
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t k = layer.kernel;
  if (cin != layer.in_channels)
    throw std::invalid_argument(
        "conv2d_valid: input channels " + std::to_string(cin) +
        " do not match layer in_channels " +
        std::to_string(layer.in_channels));
  if (h < k || w < k)
    throw std::invalid_argument("conv2d_valid: spatial size " +
                                std::to_string(h) + "x" + std::to_string(w) +
                                " smaller than kernel " + std::to_string(k));
  if (layer.weights.size() != layer.weight_count())
    throw std::invalid_argument("conv2d_valid: weight array length mismatch");
  const std::size_t oh = h - k + 1, ow = w - k + 1;
  Tensor out({layer.out_channels, oh, ow});
  for (std::size_t co = 0; co < layer.out_channels; ++co) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        double acc = layer.bias[co];
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const double *wrow =
              &layer.weights[(co * cin + ci) * k * k];
          const double *irow = &x.data[(ci * h + y) * w + xx];
          for (std::size_t u = 0; u < k; ++u) {
            const double *wr = wrow + u * k;
            const double *ir = irow + u * w;
            for (std::size_t v = 0; v < k; ++v)
              acc += wr[v] * ir[v];
          }
        }
        out(co, y, xx) = activation_scalar(acc, layer.activation, layer.alpha);
      }
    }
  }
  check_finite(out, "conv2d_valid output");
  return out;
}

Tensor softmax_rows(const Tensor &m, double temperature) {
  if (m.rank() != 2)
    throw std::invalid_argument("softmax_rows: expected rank-2 input");
  if (!(temperature > 0.0 && temperature <= 1.0))
    throw std::invalid_argument("softmax_rows: temperature out of (0,1]");
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  Tensor out({rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = m(r, 0) / temperature;
    for (std::size_t c = 1; c < cols; ++c)
      mx = std::max(mx, m(r, c) / temperature);
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double e = std::exp(m(r, c) / temperature - mx);
      out(r, c) = e;
      sum += e;
    }
    for (std::size_t c = 0; c < cols; ++c)
      out(r, c) /= sum;
  }
  check_finite(out, "softmax_rows output");
  return out;
}

ConvLayer fuse_linear_pair(const ConvLayer &l1, const ConvLayer &l2) {
  if (l1.activation != Activation::None || l2.activation != Activation::None)
    throw std::invalid_argument("fusion requires linear layers");
  if (l1.out_channels != l2.in_channels)
    throw std::invalid_argument("fuse_linear_pair: channel mismatch");
  const std::size_t k1 = l1.kernel, k2 = l2.kernel;
  ConvLayer fused;
  fused.in_channels = l1.in_channels;
  fused.out_channels = l2.out_channels;
  fused.kernel = k1 + k2 - 1;
  fused.activation = Activation::None;
  fused.weights.assign(fused.weight_count(), 0.0);
  fused.bias.assign(fused.out_channels, 0.0);
  for (std::size_t c2 = 0; c2 < l2.out_channels; ++c2) {
    for (std::size_t c1 = 0; c1 < l1.out_channels; ++c1) {
      for (std::size_t u2 = 0; u2 < k2; ++u2) {
        for (std::size_t v2 = 0; v2 < k2; ++v2) {
          const double w2 = l2.weight(c2, c1, u2, v2);
          for (std::size_t c0 = 0; c0 < l1.in_channels; ++c0) {
            for (std::size_t u1 = 0; u1 < k1; ++u1) {
              for (std::size_t v1 = 0; v1 < k1; ++v1) {
                fused.weight(c2, c0, u2 + u1, v2 + v1) +=
                    w2 * l1.weight(c1, c0, u1, v1);
              }
            }
          }
        }
      }
      double wsum = 0.0;
      for (std::size_t u = 0; u < k2; ++u)
        for (std::size_t v = 0; v < k2; ++v)
          wsum += l2.weight(c2, c1, u, v);
      fused.bias[c2] += l1.bias[c1] * wsum;
    }
    fused.bias[c2] += l2.bias[c2];
  }
  return fused;
}

Tensor matmul(const Tensor &a, const Tensor &b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: shape mismatch");
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a(i, p);
      if (av == 0.0)
        continue;
      const double *brow = &b.data[p * m];
      double *orow = &out.data[i * m];
      for (std::size_t j = 0; j < m; ++j)
        orow[j] += av * brow[j];
    }
  }
  return out;
}

Tensor transpose2d(const Tensor &a) {
  if (a.rank() != 2)
    throw std::invalid_argument("transpose2d: expected rank-2 input");
  Tensor out({a.dim(1), a.dim(0)});
  for (std::size_t r = 0; r < a.dim(0); ++r)
    for (std::size_t c = 0; c < a.dim(1); ++c)
      out(c, r) = a(r, c);
  return out;
}

Tensor linear_forward(const ConvLayer &layer, const Tensor &in) {
  if (layer.kernel != 1)
    throw std::invalid_argument("linear_forward: layer must be 1x1");
  if (in.rank() != 2 || in.dim(0) != layer.in_channels)
    throw std::invalid_argument("linear_forward: input channel mismatch");
  const std::size_t l = in.dim(1);
  Tensor out({layer.out_channels, l});
  for (std::size_t co = 0; co < layer.out_channels; ++co) {
    double *orow = &out.data[co * l];
    for (std::size_t i = 0; i < l; ++i)
      orow[i] = layer.bias[co];
    for (std::size_t ci = 0; ci < layer.in_channels; ++ci) {
      const double w = layer.weights[co * layer.in_channels + ci];
      const double *irow = &in.data[ci * l];
      for (std::size_t i = 0; i < l; ++i)
        orow[i] += w * irow[i];
    }
    for (std::size_t i = 0; i < l; ++i)
      orow[i] = activation_scalar(orow[i], layer.activation, layer.alpha);
  }
  return out;
}

} // namespace cip
