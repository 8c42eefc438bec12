#include "cip/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

namespace cip {

double psnr(const Tensor &pred, const Tensor &gt, double peak) {
  if (pred.data.size() != gt.data.size() || pred.data.empty())
    throw std::invalid_argument("psnr: shape mismatch");
  double mse = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double d = pred.data[i] - gt.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(pred.data.size());
  if (mse == 0)
    return 99.0;
  return std::min(99.0, 10.0 * std::log10(peak * peak / mse));
}

double gini(const Histogram &h) {
  std::uint64_t total = 0;
  for (std::uint64_t c : h.counts)
    total += c;
  if (total == 0)
    throw std::invalid_argument("gini: empty histogram");
  double sumsq = 0;
  for (std::uint64_t c : h.counts) {
    const double p = static_cast<double>(c) / static_cast<double>(total);
    sumsq += p * p;
  }
  return 1.0 - sumsq;
}

Histogram log_histogram(const std::vector<double> &samples, std::size_t bins,
                        std::string component) {
  if (bins == 0)
    throw std::invalid_argument("log_histogram: bins must be positive");
  Histogram h;
  h.component = std::move(component);
  h.counts.assign(bins, 0);
  for (double v : samples) {
    long idx = static_cast<long>(std::floor(v * static_cast<double>(bins)));
    idx = std::clamp<long>(idx, 0, static_cast<long>(bins) - 1);
    ++h.counts[static_cast<std::size_t>(idx)];
  }
  return h;
}

std::vector<double> histogram_log_counts(const Histogram &h) {
  std::vector<double> out(h.counts.size());
  for (std::size_t i = 0; i < h.counts.size(); ++i)
    out[i] = std::log10(1.0 + static_cast<double>(h.counts[i]));
  return out;
}

namespace {

BlockInput to_block_input(const BlockSample &s) {
  BlockInput in;
  in.n = s.n;
  in.x0 = s.x0;
  in.s0 = s.s0;
  return in;
}

template <typename Predict>
EvalReport evaluate_generic(Predict &&predict, Scheme scheme, Phase phase,
                            const std::vector<BlockSample> &blocks,
                            const std::string &model_name,
                            std::size_t histogram_bins,
                            const NetworkSpec &complexity_spec) {
  EvalReport report;
  report.model = model_name;
  report.scheme = scheme;
  report.phase = phase;

  std::map<std::size_t, std::pair<double, std::size_t>> per_size;
  std::vector<double> cb_samples, cr_samples;
  for (const BlockSample &s : blocks) {
    const Tensor pred = predict(s);
    auto &[sum, count] = per_size[s.n];
    sum += psnr(pred, s.z);
    ++count;
    const std::size_t plane = s.n * s.n;
    for (std::size_t i = 0; i < plane; ++i) {
      cb_samples.push_back(s.z.data[i]);
      cr_samples.push_back(s.z.data[plane + i]);
    }
  }
  if (!cb_samples.empty()) {
    report.gini_cb = gini(log_histogram(cb_samples, histogram_bins, "cb"));
    report.gini_cr = gini(log_histogram(cr_samples, histogram_bins, "cr"));
  }
  for (const auto &[n, acc] : per_size) {
    EvalRow row;
    row.size = n;
    row.n_blocks = acc.second;
    row.psnr_db = acc.first / static_cast<double>(acc.second);
    row.params = count_params(complexity_spec);
    row.flops = count_flops(complexity_spec, n).total;
    report.rows.push_back(row);
  }
  return report;
}

// Dimension-only skeleton so the integer path reuses the float
// complexity counters.
NetworkSpec spec_skeleton(const IntegerModel &m) {
  NetworkSpec spec;
  spec.scheme = m.scheme;
  spec.phase = Phase::Inference;
  spec.variants = m.variants;
  spec.temperature = m.temperature;
  auto conv = [](const IntLayer &l) {
    ConvLayer c;
    c.in_channels = l.in_channels;
    c.out_channels = l.out_channels;
    c.kernel = l.kernel;
    c.activation = l.activation;
    c.weights.assign(c.weight_count(), 0.0);
    c.bias.assign(c.out_channels, 0.0);
    return c;
  };
  for (const auto &l : m.cc)
    spec.cc.push_back(conv(l));
  for (const auto &l : m.luma)
    spec.luma.push_back(conv(l));
  for (const auto &l : m.head)
    spec.head.push_back(conv(l));
  spec.attn_f = conv(m.attn_f);
  spec.attn_g = conv(m.attn_g);
  spec.attn_xbar = conv(m.attn_xbar);
  return spec;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v); // lossless double round-trip
  return buf;
}

} // namespace

EvalReport evaluate_model(const ModelWeights &w,
                          const std::vector<BlockSample> &blocks,
                          const std::string &model_name,
                          std::size_t histogram_bins) {
  auto predict = [&](const BlockSample &s) {
    return forward(w, to_block_input(s)).prediction;
  };
  return evaluate_generic(predict, w.spec.scheme, w.spec.phase, blocks,
                          model_name, histogram_bins, w.spec);
}

EvalReport evaluate_model(const IntegerModel &m,
                          const std::vector<BlockSample> &blocks,
                          const std::string &model_name,
                          std::size_t histogram_bins) {
  const NetworkSpec skeleton = spec_skeleton(m);
  auto predict = [&](const BlockSample &s) {
    const IntForwardResult res = int_forward(m, to_int_input(to_block_input(s), m));
    return int_prediction_to_float(res, s.n, m.cfg.input_bitdepth);
  };
  return evaluate_generic(predict, m.scheme, Phase::Inference, blocks,
                          model_name, histogram_bins, skeleton);
}

std::string report_to_csv(const EvalReport &report) {
  std::ostringstream out;
  out << "model,scheme,phase,size,n_blocks,psnr_db,params,flops,gini_cb,gini_cr\n";
  for (const EvalRow &row : report.rows) {
    out << report.model << ',' << scheme_name(report.scheme) << ','
        << phase_name(report.phase) << ',' << row.size << ',' << row.n_blocks
        << ',' << format_double(row.psnr_db) << ',' << row.params << ','
        << row.flops << ',' << format_double(report.gini_cb) << ','
        << format_double(report.gini_cr) << '\n';
  }
  return out.str();
}

EvalReport report_from_csv(const std::string &text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("report csv: empty file");
  const std::string expected =
      "model,scheme,phase,size,n_blocks,psnr_db,params,flops,gini_cb,gini_cr";
  if (line != expected)
    throw std::runtime_error("report csv: unexpected header");
  EvalReport report;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty())
      continue;
    std::istringstream ls(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ls, field, ','))
      fields.push_back(field);
    if (fields.size() != 10)
      throw std::runtime_error("report csv: malformed row");
    if (first) {
      report.model = fields[0];
      report.scheme = scheme_from_name(fields[1]);
      report.phase = phase_from_name(fields[2]);
      report.gini_cb = std::stod(fields[8]);
      report.gini_cr = std::stod(fields[9]);
      first = false;
    }
    EvalRow row;
    row.size = std::stoul(fields[3]);
    row.n_blocks = std::stoul(fields[4]);
    row.psnr_db = std::stod(fields[5]);
    row.params = std::stoul(fields[6]);
    row.flops = std::stoull(fields[7]);
    report.rows.push_back(row);
  }
  return report;
}

} // namespace cip
