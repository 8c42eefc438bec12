#pragma once

#include <cstdint>
#include <ostream>
#include <vector>

#include "cip/dataset.hpp"
#include "cip/model.hpp"

namespace cip {

struct TrainConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
  std::size_t batch_size = 32; // blocks per size per optimizer step
  std::size_t epochs = 1;
  std::vector<std::size_t> sizes{4, 8, 16};
  double lambda_reg = 1.0, lambda_ae = 1.0, lambda_r = 1.0, lambda_s = 0.01;
  std::uint64_t seed = 0;
  double val_fraction = 0.1;
};

// (1/(2N^2)) * sum (z - y)^2 over both chroma planes.
double mse_loss(const Tensor &pred, const Tensor &gt);

// lambda_r/(D*b) * ||S1 - S1_rec||^2 + lambda_s/(3b) * ||S2||_1.
double ae_loss(const Tensor &s1, const Tensor &s1_rec, const Tensor &s2,
               double lambda_r, double lambda_s);

double total_loss(double reg, double ae, const TrainConfig &cfg);

// One flat array per trainable layer, declaration order (layer_list).
struct Gradients {
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> bias;
};
Gradients zero_gradients(const NetworkSpec &spec);

struct LossParts {
  double reg = 0, ae = 0, total = 0;
};

struct BackwardResult {
  LossParts loss;
  Gradients grads;
};

// Analytic gradients of total_loss averaged over a size-homogeneous batch.
// The loss is evaluated on the unclipped prediction.
BackwardResult backward(const ModelWeights &w,
                        const std::vector<BlockSample> &batch,
                        const TrainConfig &cfg);

struct AdamState {
  std::uint64_t t = 0;
  std::vector<std::vector<double>> m_w, v_w, m_b, v_b;
};
AdamState make_adam_state(const NetworkSpec &spec);
void adam_step(ModelWeights &w, const Gradients &g, AdamState &state,
               const TrainConfig &cfg);

// Glorot-uniform, bound sqrt(6/(fan_in+fan_out)) with fan = K^2 * C,
// biases zero; draws follow layer declaration order.
void init_weights(ModelWeights &w, std::uint64_t seed);

double validation_mse(const ModelWeights &w,
                      const std::vector<BlockSample> &blocks);

// Multi-model loop: per batch index, one optimizer step per size in
// ascending order. Log lines: epoch,step,size,loss_reg,loss_ae,
// loss_total,val_psnr_4,val_psnr_8,val_psnr_16 (one per size per epoch).
ModelWeights train_multimodel(const std::vector<BlockSample> &samples,
                              const TrainConfig &cfg, const SchemeId &id,
                              std::ostream *log = nullptr);

} // namespace cip
