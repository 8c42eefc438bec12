#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace cip {

enum class Activation { None, Relu, LeakyRelu };
enum class PadMode { Replicate, Zero };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string &name);

// Dense rank<=4 array of doubles in row-major order.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s, double fill = 0.0);

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape[i]; }

  // rank-2 access (rows x cols)
  double &operator()(std::size_t r, std::size_t c) {
    return data[r * shape[1] + c];
  }
  double operator()(std::size_t r, std::size_t c) const {
    return data[r * shape[1] + c];
  }
  // rank-3 access (channels x rows x cols)
  double &operator()(std::size_t ch, std::size_t y, std::size_t x) {
    return data[(ch * shape[1] + y) * shape[2] + x];
  }
  double operator()(std::size_t ch, std::size_t y, std::size_t x) const {
    return data[(ch * shape[1] + y) * shape[2] + x];
  }
};

// 2-D convolution layer. Kernels are applied as cross-correlation (no
// kernel flip); this orientation is fixed project-wide.
struct ConvLayer {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 1;
  std::vector<double> weights; // out x in x k x k, row-major
  std::vector<double> bias;    // out
  Activation activation = Activation::None;
  double alpha = 0.2; // slope for LeakyRelu

  std::size_t weight_count() const {
    return out_channels * in_channels * kernel * kernel;
  }
  double weight(std::size_t co, std::size_t ci, std::size_t u,
                std::size_t v) const {
    return weights[((co * in_channels + ci) * kernel + u) * kernel + v];
  }
  double &weight(std::size_t co, std::size_t ci, std::size_t u,
                 std::size_t v) {
    return weights[((co * in_channels + ci) * kernel + u) * kernel + v];
  }
};

// Pads a C x H x W tensor by `radius` on all four spatial sides.
Tensor pad(const Tensor &x, std::size_t radius, PadMode mode);

// Valid convolution of a C_in x H x W tensor, followed by the layer's
// activation. Output is C_out x (H-K+1) x (W-K+1).
Tensor conv2d_valid(const Tensor &x, const ConvLayer &layer);

Tensor apply_activation(const Tensor &x, Activation kind, double alpha = 0.2);
double activation_scalar(double v, Activation kind, double alpha);

// Row-wise temperature softmax with row-max subtraction. Input R x B.
Tensor softmax_rows(const Tensor &m, double temperature);

// Merges two stacked linear convolutions into one of size K1+K2-1.
// Both layers must have activation None.
ConvLayer fuse_linear_pair(const ConvLayer &l1, const ConvLayer &l2);

// rank-2 helpers
Tensor matmul(const Tensor &a, const Tensor &b);
Tensor transpose2d(const Tensor &a);

// out = W*in + bias columnwise, then activation; `layer` must be 1x1,
// `in` is C_in x L.
Tensor linear_forward(const ConvLayer &layer, const Tensor &in);

void check_finite(const Tensor &t, const std::string &context);

} // namespace cip
