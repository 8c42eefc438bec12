#include "cip/model_io.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace cip {

using nlohmann::json;

namespace {

json layer_to_json(const ConstLayerRef &ref) {
  const ConvLayer &l = *ref.layer;
  json j;
  j["name"] = ref.name;
  j["branch"] = ref.branch;
  j["k"] = l.kernel;
  j["in_ch"] = l.in_channels;
  j["out_ch"] = l.out_channels;
  j["activation"] = activation_name(l.activation);
  if (l.activation == Activation::LeakyRelu)
    j["alpha"] = l.alpha;
  j["weights"] = l.weights;
  j["bias"] = l.bias;
  return j;
}

ConvLayer layer_from_json(const json &j) {
  ConvLayer l;
  l.kernel = j.at("k").get<std::size_t>();
  l.in_channels = j.at("in_ch").get<std::size_t>();
  l.out_channels = j.at("out_ch").get<std::size_t>();
  l.activation = activation_from_name(j.at("activation").get<std::string>());
  if (j.contains("alpha"))
    l.alpha = j.at("alpha").get<double>();
  l.weights = j.at("weights").get<std::vector<double>>();
  l.bias = j.at("bias").get<std::vector<double>>();
  if (l.weights.size() != l.weight_count())
    throw std::runtime_error("model file: weight array length mismatch in " +
                             j.at("name").get<std::string>());
  if (l.bias.size() != l.out_channels)
    throw std::runtime_error("model file: bias array length mismatch in " +
                             j.at("name").get<std::string>());
  return l;
}

} // namespace

std::string serialize_model(const ModelWeights &w) {
  json j;
  j["format_version"] = kModelFormatVersion;
  j["model_type"] = "float";
  j["scheme"] = scheme_name(w.spec.scheme);
  j["phase"] = phase_name(w.spec.phase);
  j["variants"] = {
      {"baseline_nonlinear_luma", w.spec.variants.baseline_nonlinear_luma},
      {"single_layer_luma", w.spec.variants.single_layer_luma},
      {"sparsity_enabled", w.spec.variants.sparsity_enabled}};
  j["temperature"] = w.spec.temperature;
  j["layers"] = json::array();
  for (const auto &ref : layer_list(w.spec))
    j["layers"].push_back(layer_to_json(ref));
  j["metadata"] = {{"seed", w.seed}, {"training_steps", w.training_steps}};
  return j.dump(2) + "\n";
}

ModelWeights parse_model(const std::string &text) {
  json j = json::parse(text);
  const int version = j.at("format_version").get<int>();
  if (version != kModelFormatVersion)
    throw std::runtime_error("model file: format version mismatch (got " +
                             std::to_string(version) + ", expected " +
                             std::to_string(kModelFormatVersion) + ")");
  if (j.value("model_type", "float") != "float")
    throw std::runtime_error("model file: not a float model");

  ModelWeights w;
  NetworkSpec &spec = w.spec;
  spec.scheme = scheme_from_name(j.at("scheme").get<std::string>());
  spec.phase = phase_from_name(j.at("phase").get<std::string>());
  const json &v = j.at("variants");
  spec.variants.baseline_nonlinear_luma =
      v.at("baseline_nonlinear_luma").get<bool>();
  spec.variants.single_layer_luma = v.at("single_layer_luma").get<bool>();
  spec.variants.sparsity_enabled = v.at("sparsity_enabled").get<bool>();
  spec.temperature = j.at("temperature").get<double>();

  for (const json &lj : j.at("layers")) {
    const std::string branch = lj.at("branch").get<std::string>();
    ConvLayer l = layer_from_json(lj);
    if (branch == "cc")
      spec.cc.push_back(std::move(l));
    else if (branch == "ae_decoder")
      spec.ae_decoder = std::move(l);
    else if (branch == "luma")
      spec.luma.push_back(std::move(l));
    else if (branch == "head")
      spec.head.push_back(std::move(l));
    else if (branch == "attention") {
      const std::string name = lj.at("name").get<std::string>();
      if (name == "attn_f")
        spec.attn_f = std::move(l);
      else if (name == "attn_g")
        spec.attn_g = std::move(l);
      else if (name == "attn_xbar")
        spec.attn_xbar = std::move(l);
      else
        throw std::runtime_error("model file: unknown attention layer " + name);
    } else {
      throw std::runtime_error("model file: unknown branch " + branch);
    }
  }
  if (spec.cc.empty() || spec.luma.empty() || spec.head.empty())
    throw std::runtime_error("model file: missing branch layers");

  const json &meta = j.at("metadata");
  w.seed = meta.at("seed").get<std::uint64_t>();
  w.training_steps = meta.at("training_steps").get<std::uint64_t>();
  return w;
}

void atomic_write_file(const std::filesystem::path &path,
                       const std::string &content) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw std::runtime_error("cannot open for writing: " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out)
      throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_model(const std::filesystem::path &path, const ModelWeights &w) {
  atomic_write_file(path, serialize_model(w));
}

ModelWeights read_model(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::runtime_error("missing file: " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return parse_model(text);
}

std::string model_file_type(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::runtime_error("missing file: " + path.string());
  json j = json::parse(in);
  return j.value("model_type", "float");
}

} // namespace cip
