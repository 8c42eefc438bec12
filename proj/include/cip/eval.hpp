#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cip/dataset.hpp"
#include "cip/integerize.hpp"
#include "cip/model.hpp"

namespace cip {

struct Histogram {
  std::vector<std::uint64_t> counts; // raw; exports apply log10(1+count)
  std::string component;
};

// 10*log10(peak^2 / MSE), MSE over all entries jointly; exact match
// saturates at 99 dB.
double psnr(const Tensor &pred, const Tensor &gt, double peak = 1.0);

// Gini(H) = 1 - sum_b (H(b)/sum H)^2.
double gini(const Histogram &h);

// B equal-width bins over [0,1]; out-of-range samples clamp to the edge bins.
Histogram log_histogram(const std::vector<double> &samples, std::size_t bins,
                        std::string component = "");

std::vector<double> histogram_log_counts(const Histogram &h);

struct EvalRow {
  std::size_t size = 0;
  std::size_t n_blocks = 0;
  double psnr_db = 0;
  std::size_t params = 0;
  std::uint64_t flops = 0;
};

struct EvalReport {
  std::string model;
  Scheme scheme = Scheme::Scheme1;
  Phase phase = Phase::Inference;
  std::vector<EvalRow> rows; // ascending block size
  double gini_cb = 0, gini_cr = 0;
};

EvalReport evaluate_model(const ModelWeights &w,
                          const std::vector<BlockSample> &blocks,
                          const std::string &model_name,
                          std::size_t histogram_bins = 64);

EvalReport evaluate_model(const IntegerModel &m,
                          const std::vector<BlockSample> &blocks,
                          const std::string &model_name,
                          std::size_t histogram_bins = 64);

// Columns: model,scheme,phase,size,n_blocks,psnr_db,params,flops,gini_cb,gini_cr
std::string report_to_csv(const EvalReport &report);
EvalReport report_from_csv(const std::string &text);

} // namespace cip
