#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cip/dataset.hpp"
#include "cip/eval.hpp"
#include "cip/integerize.hpp"
#include "cip/model.hpp"
#include "cip/model_io.hpp"
#include "cip/train.hpp"

namespace {

using namespace cip;

VariantFlags variant_from_name(const std::string &name) {
  VariantFlags v;
  if (name == "default")
    return v;
  if (name == "baseline-nonlinear") {
    v.baseline_nonlinear_luma = true;
    return v;
  }
  if (name == "single-layer") {
    v.single_layer_luma = true;
    return v;
  }
  if (name == "no-sparsity") {
    v.sparsity_enabled = false;
    return v;
  }
  throw CLI::ValidationError("--variant", "unknown variant: " + name);
}

BlockInput to_input(const BlockSample &s) {
  BlockInput in;
  in.n = s.n;
  in.x0 = s.x0;
  in.s0 = s.s0;
  return in;
}

int run_extract(const std::string &dir, const std::string &out,
                std::size_t per_image, const std::vector<std::size_t> &sizes,
                std::uint64_t seed) {
  CorpusConfig cfg;
  cfg.image_dir = dir;
  cfg.per_image = per_image;
  cfg.sizes = sizes;
  cfg.seed = seed;
  const auto blocks = extract_corpus(cfg, &std::cerr);
  write_container(out, blocks);
  std::cout << "extracted " << blocks.size() << " blocks -> " << out << "\n";
  return 0;
}

int run_train(const std::string &blocks_path, int scheme,
              const std::string &variant, std::size_t epochs, double lr,
              std::size_t batch, std::uint64_t seed,
              const std::string &log_path, const std::string &out) {
  SchemeId id;
  id.scheme = scheme == 2 ? Scheme::Scheme2 : Scheme::Scheme1;
  id.phase = Phase::Train;
  id.variants = variant_from_name(variant);

  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.learning_rate = lr;
  cfg.batch_size = batch;
  cfg.seed = seed;

  const auto samples = read_container(blocks_path);
  std::ofstream log_file;
  std::ostream *log = nullptr;
  if (!log_path.empty()) {
    log_file.open(log_path, std::ios::app);
    if (!log_file)
      throw std::runtime_error("cannot open log file: " + log_path);
    log = &log_file;
  }
  const ModelWeights w = train_multimodel(samples, cfg, id, log);
  write_model(out, w);
  std::cout << "trained " << scheme_name(id.scheme) << " ("
            << w.training_steps << " steps) -> " << out << "\n";
  return 0;
}

int run_fuse(const std::string &in, const std::string &out) {
  const ModelWeights fused = fuse_model(read_model(in));
  write_model(out, fused);
  std::cout << "fused model (" << count_params(fused.spec) << " params) -> "
            << out << "\n";
  return 0;
}

int run_quantize(const std::string &in, const std::string &out,
                 const QuantizeConfig &qc) {
  const IntegerModel m = quantize_model(read_model(in), qc);
  write_integer_model(out, m);
  std::cout << "quantized model -> " << out << "\n";
  return 0;
}

int run_predict(const std::string &model_path, const std::string &blocks_path,
                const std::string &out) {
  const auto blocks = read_container(blocks_path);
  std::vector<PredictionRecord> records;
  int bitdepth = 8;
  if (model_file_type(model_path) == "integer") {
    const IntegerModel m = read_integer_model(model_path);
    bitdepth = m.cfg.input_bitdepth;
    for (const auto &s : blocks) {
      const IntForwardResult res = int_forward(m, to_int_input(to_input(s), m));
      records.push_back({s.n, res.samples});
    }
  } else {
    const ModelWeights w = read_model(model_path);
    const double maxval = 255.0;
    for (const auto &s : blocks) {
      const Tensor pred = forward(w, to_input(s)).prediction;
      PredictionRecord rec;
      rec.n = s.n;
      rec.samples.resize(pred.data.size());
      for (std::size_t i = 0; i < pred.data.size(); ++i)
        rec.samples[i] =
            static_cast<std::uint16_t>(std::lround(pred.data[i] * maxval));
      records.push_back(std::move(rec));
    }
  }
  write_predictions(out, records, bitdepth);
  std::cout << "predicted " << records.size() << " blocks -> " << out << "\n";
  return 0;
}

int run_eval(const std::string &model_path, const std::string &blocks_path,
             const std::string &report_path) {
  const auto blocks = read_container(blocks_path);
  const std::string name =
      std::filesystem::path(model_path).stem().string();
  EvalReport report;
  if (model_file_type(model_path) == "integer")
    report = evaluate_model(read_integer_model(model_path), blocks, name);
  else
    report = evaluate_model(read_model(model_path), blocks, name);
  atomic_write_file(report_path, report_to_csv(report));
  std::cout << report_to_csv(report);
  return 0;
}

int run_inspect(const std::string &model_path) {
  if (model_file_type(model_path) == "integer") {
    const IntegerModel m = read_integer_model(model_path);
    std::size_t params = 0;
    auto add = [&](const IntLayer &l) {
      params += l.weights.size() + l.bias.size();
    };
    for (const auto &l : m.cc)
      add(l);
    for (const auto &l : m.luma)
      add(l);
    for (const auto &l : m.head)
      add(l);
    add(m.attn_f);
    add(m.attn_g);
    add(m.attn_xbar);
    std::cout << "type: integer\nscheme: " << scheme_name(m.scheme)
              << "\nphase: inference\nparams: " << params << "\n";
    return 0;
  }
  const ModelWeights w = read_model(model_path);
  std::cout << "type: float\nscheme: " << scheme_name(w.spec.scheme)
            << "\nphase: " << phase_name(w.spec.phase)
            << "\nparams: " << count_params(w.spec) << "\n";
  for (std::size_t n : {4u, 8u, 16u})
    std::cout << "flops_" << n << "x" << n << ": "
              << count_flops(w.spec, n).total << "\n";
  return 0;
}

int run_gini(const std::string &image_path, std::size_t bins) {
  const Image img = read_ppm(image_path);
  const YcbcrPlanes planes = to_ycbcr_planes(img, ColorMatrix::Bt601);
  const Histogram hb = log_histogram(planes.cb.data, bins, "cb");
  const Histogram hr = log_histogram(planes.cr.data, bins, "cr");
  std::cout << "gini_cb: " << gini(hb) << "\ngini_cr: " << gini(hr) << "\n";
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Chroma intra-prediction toolkit"};
  app.set_config("--config");
  app.require_subcommand(1);

  // extract
  auto *extract = app.add_subcommand("extract", "Extract a block corpus");
  std::string corpus_dir, out_path;
  std::size_t per_image = 4;
  std::vector<std::size_t> sizes{4, 8, 16};
  std::uint64_t seed = 0;
  extract->add_option("--corpus", corpus_dir, "Image directory (PPM files)")
      ->required();
  extract->add_option("--out", out_path, "Output block container")->required();
  extract->add_option("--per-image", per_image, "Blocks per size per image");
  extract->add_option("--sizes", sizes, "Block sizes")->delimiter(',');
  extract->add_option("--seed", seed, "Extraction seed");

  // train
  auto *train = app.add_subcommand("train", "Train a multi-model");
  std::string blocks_path, variant = "default", log_path, model_out;
  int scheme = 1;
  std::size_t epochs = 1, batch = 32;
  double lr = 1e-4;
  std::uint64_t train_seed = 0;
  train->add_option("--blocks", blocks_path, "Block container")->required();
  train->add_option("--scheme", scheme, "Scheme (1 or 2)")
      ->check(CLI::IsMember({1, 2}));
  train->add_option("--variant", variant,
                    "default|baseline-nonlinear|single-layer|no-sparsity");
  train->add_option("--epochs", epochs, "Training epochs");
  train->add_option("--lr", lr, "Learning rate");
  train->add_option("--batch", batch, "Batch size per block size");
  train->add_option("--seed", train_seed, "Init/shuffle seed");
  train->add_option("--log", log_path, "Training log CSV (appended)");
  train->add_option("--out", model_out, "Output model file")->required();

  // fuse
  auto *fuse = app.add_subcommand("fuse", "Fuse a train model for inference");
  std::string fuse_in, fuse_out;
  fuse->add_option("--in", fuse_in, "Train-phase model")->required();
  fuse->add_option("--out", fuse_out, "Fused model")->required();

  // quantize
  auto *quantize = app.add_subcommand("quantize", "Fixed-point conversion");
  std::string q_in, q_out;
  QuantizeConfig qc;
  quantize->add_option("--in", q_in, "Inference-phase float model")->required();
  quantize->add_option("--out", q_out, "Integer model")->required();
  quantize->add_option("--ox", qc.o_x, "Internal offset O_x");
  quantize->add_option("--oe", qc.o_e, "Exponential LUT scale");
  quantize->add_option("--os", qc.o_s, "Sum LUT scale");
  quantize->add_option("--ve", qc.v_e, "Exponent clamp V_e");
  quantize->add_option("--q", qc.q, "Denominator quantization step");

  // predict
  auto *predict = app.add_subcommand("predict", "Predict blocks");
  std::string p_model, p_blocks, p_out;
  predict->add_option("--model", p_model, "Model file (float or integer)")
      ->required();
  predict->add_option("--blocks", p_blocks, "Block container")->required();
  predict->add_option("--out", p_out, "Prediction container")->required();

  // eval
  auto *eval = app.add_subcommand("eval", "Evaluate a model");
  std::string e_model, e_blocks, e_report;
  eval->add_option("--model", e_model, "Model file")->required();
  eval->add_option("--blocks", e_blocks, "Block container")->required();
  eval->add_option("--report", e_report, "Report CSV")->required();

  // inspect
  auto *inspect = app.add_subcommand("inspect", "Print model summary");
  std::string i_model;
  inspect->add_option("--model", i_model, "Model file")->required();

  // gini
  auto *gini_cmd = app.add_subcommand("gini", "Chroma histogram width");
  std::string g_image;
  std::size_t g_bins = 64;
  gini_cmd->add_option("--image", g_image, "PPM image")->required();
  gini_cmd->add_option("--bins", g_bins, "Histogram bins");

  if (argc <= 1) {
    std::cout << app.help();
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    return app.exit(e);
  }

  try {
    if (*extract)
      return run_extract(corpus_dir, out_path, per_image, sizes, seed);
    if (*train)
      return run_train(blocks_path, scheme, variant, epochs, lr, batch,
                       train_seed, log_path, model_out);
    if (*fuse)
      return run_fuse(fuse_in, fuse_out);
    if (*quantize)
      return run_quantize(q_in, q_out, qc);
    if (*predict)
      return run_predict(p_model, p_blocks, p_out);
    if (*eval)
      return run_eval(e_model, e_blocks, e_report);
    if (*inspect)
      return run_inspect(i_model);
    if (*gini_cmd)
      return run_gini(g_image, g_bins);
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
