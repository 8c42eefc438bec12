#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>

#include <nlohmann/json.hpp>

#include "cip/integerize.hpp"
#include "cip/model.hpp"
#include "cip/rng.hpp"
#include "cip/train.hpp"

using namespace cip;

namespace {

ModelWeights fused_model(Scheme s, std::uint64_t seed) {
  ModelWeights w;
  w.spec = build_spec({s, Phase::Train, {}});
  init_weights(w, seed);
  return fuse_model(w);
}

BlockInput random_input(Rng &rng, std::size_t n) {
  BlockInput in;
  in.n = n;
  in.x0 = Tensor({1, n, n});
  in.s0 = Tensor({3, 4 * n + 1});
  for (double &v : in.x0.data)
    v = rng.uniform();
  for (double &v : in.s0.data)
    v = rng.uniform();
  return in;
}

// A model carrying only what int_softmax_row reads.
IntegerModel softmax_fixture() {
  IntegerModel m;
  m.cfg = QuantizeConfig{};
  m.lut_exp = build_lut_exp(m.cfg.v_e, m.cfg.o_e);
  const std::int64_t v_s =
      65 * (std::int64_t{1} << m.cfg.o_e); // largest row sum (b = 65)
  m.lut_sum = build_lut_sum(v_s, m.cfg.q, m.cfg.o_s + m.sum_guard_bits);
  m.o_m = 16;
  return m;
}

} // namespace

TEST_CASE("LUT-EXP matches the closed form") {
  std::vector<std::int32_t> lut = build_lut_exp(-15, 16);
  REQUIRE(lut.size() == 16);
  CHECK(lut[15] == 65536); // e^0
  CHECK(lut[14] == 24109); // floor(2^16 e^-1)
  CHECK(lut[0] == 0);      // floor(2^16 e^-15)
  for (std::size_t k = 0; k < lut.size(); ++k) {
    CHECK(lut[k] ==
          static_cast<std::int32_t>(std::floor(65536.0 * std::exp(-15.0 + k))));
    if (k > 0)
      CHECK(lut[k] >= lut[k - 1]);
  }
  CHECK_THROWS_AS((void)build_lut_exp(0, 16), std::invalid_argument);
}

TEST_CASE("LUT-SUM matches the closed form and clamps the zero index") {
  const std::int64_t v_s = 65ll << 16;
  std::vector<std::int32_t> lut = build_lut_sum(v_s, 1024, 20);
  REQUIRE(lut.size() == 4161); // ceil((V_s + 1) / Q)
  CHECK(lut[0] == lut[1]);     // l = 0 reuses the l = 1 divisor
  CHECK(lut[1] == 1024);       // floor(2^20 / 1024)
  CHECK(lut[2] == 512);
  CHECK(lut[4160] == 0); // floor(2^20 / (4160 * 1024))
  for (std::size_t l = 2; l < lut.size(); ++l) {
    CHECK(lut[l] <= lut[l - 1]);
    CHECK(lut[l] == static_cast<std::int32_t>((1ll << 20) / (1024ll * l)));
  }
  CHECK_THROWS_AS((void)build_lut_sum(0, 1024, 20), std::invalid_argument);
  CHECK_THROWS_AS((void)build_lut_sum(v_s, 0, 20), std::invalid_argument);
}

TEST_CASE("integer leaky ReLU uses the 26/128 slope") {
  CHECK(int_activation(100, Activation::LeakyRelu) == 100);
  CHECK(int_activation(0, Activation::LeakyRelu) == 0);
  CHECK(int_activation(-128, Activation::LeakyRelu) == -26);
  CHECK(int_activation(-1, Activation::LeakyRelu) == -1); // floor(-26/128)
  CHECK(int_activation(-640, Activation::LeakyRelu) == -130);
  CHECK(int_activation(-5, Activation::Relu) == 0);
  CHECK(int_activation(7, Activation::Relu) == 7);
  CHECK(int_activation(-5, Activation::None) == -5);
}

TEST_CASE("weight quantization floors at the offset scale") {
  ModelWeights fused = fused_model(Scheme::Scheme1, 3);
  // 8-bit input -> cc weights quantize at 2^(16-8) = 2^8
  auto layers = layer_list(fused.spec);
  layers[0].layer->weights[0] = 0.5;
  layers[0].layer->weights[1] = -0.3;
  layers[0].layer->bias[0] = 0.25;
  IntegerModel im = quantize_model(fused, {});
  CHECK(im.cc[0].o_l == 8);
  CHECK(im.cc[0].weights[0] == 128);
  CHECK(im.cc[0].weights[1] == -77); // floor(-0.3 * 256)
  CHECK(im.cc[0].bias[0] == 16384);  // biases live at 2^o_x
  const double step = std::ldexp(1.0, -im.cc[0].o_l);
  for (std::size_t i = 0; i < im.cc[0].weights.size(); ++i) {
    double back = std::ldexp(static_cast<double>(im.cc[0].weights[i]),
                             -im.cc[0].o_l);
    CHECK(std::fabs(back - layers[0].layer->weights[i]) < step);
  }
}

TEST_CASE("quantization rejects unfused models and other temperatures") {
  ModelWeights train;
  train.spec = build_spec({Scheme::Scheme1, Phase::Train, {}});
  init_weights(train, 4);
  CHECK_THROWS_AS((void)quantize_model(train, {}), std::invalid_argument);

  ModelWeights fused = fused_model(Scheme::Scheme1, 4);
  fused.spec.temperature = 1.0;
  CHECK_THROWS_AS((void)quantize_model(fused, {}), std::invalid_argument);
}

TEST_CASE("integer layer step compensates the weight scale by shifting") {
  IntLayer layer;
  layer.name = "t";
  layer.in_channels = 1;
  layer.out_channels = 1;
  layer.kernel = 1;
  layer.weights = {256}; // 1.0 at o_l = 8
  layer.bias = {0};
  layer.o_l = 8;
  layer.o_y = 8;
  layer.in_scale = 8;
  layer.out_scale = 8;

  IntTensor x({1, 1, 1});
  x.data = {256};
  IntTensor y = int_layer_forward(x, layer);
  CHECK(y.data[0] == 256); // (256 * 256) >> 8

  layer.bias = {512};
  x.data = {0};
  y = int_layer_forward(x, layer);
  CHECK(y.data[0] == 2); // round_shift(512, 8)

  layer.weights = {-256};
  layer.activation = Activation::Relu;
  layer.bias = {0};
  x.data = {100};
  y = int_layer_forward(x, layer);
  CHECK(y.data[0] == 0);
}

TEST_CASE("integer softmax splits a uniform row evenly") {
  IntegerModel m = softmax_fixture();
  for (std::size_t b : {17u, 33u, 65u}) {
    std::vector<std::int64_t> logits(b, 12345);
    std::vector<std::int32_t> out = int_softmax_row(logits, m.o_m, m);
    const double ideal = std::ldexp(1.0, m.cfg.o_s) / static_cast<double>(b);
    for (std::int32_t v : out) {
      CHECK(v == out[0]);
      CHECK(std::fabs(v - ideal) / ideal < 0.02);
    }
  }
}

TEST_CASE("integer softmax saturates for a dominant logit") {
  IntegerModel m = softmax_fixture();
  std::vector<std::int64_t> logits(17, 0);
  logits[5] = 20ll << m.o_m; // gap far beyond the exponent clamp
  std::vector<std::int32_t> out = int_softmax_row(logits, m.o_m, m);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (i == 5)
      CHECK(std::fabs(out[i] - std::ldexp(1.0, m.cfg.o_s)) <
            0.02 * std::ldexp(1.0, m.cfg.o_s));
    else
      CHECK(out[i] == 0);
  }
}

TEST_CASE("integer softmax tracks the real softmax on unit-exponent rows") {
  // Rows whose rescaled exponents are exact integers isolate the table
  // error from the truncation of fractional exponents.
  IntegerModel m = softmax_fixture();
  Rng rng(41);
  double max_err = 0, max_norm_rel = 0;
  for (int trial = 0; trial < 400; ++trial) {
    const std::size_t b = (trial % 3 == 0) ? 17 : (trial % 3 == 1 ? 33 : 65);
    std::vector<std::int64_t> logits(b);
    Tensor row({1, b});
    for (std::size_t i = 0; i < b; ++i) {
      // 2*m - max lands on a multiple of 2^o_m
      const std::int64_t k = static_cast<std::int64_t>(rng.next() % 21);
      logits[i] = -k << (m.o_m - 1);
      row.data[i] = std::ldexp(static_cast<double>(logits[i]), -m.o_m);
    }
    Tensor ref = softmax_rows(row, 0.5);
    std::vector<std::int32_t> out = int_softmax_row(logits, m.o_m, m);
    double sum = 0;
    for (std::size_t i = 0; i < b; ++i) {
      const double approx = std::ldexp(static_cast<double>(out[i]), -m.cfg.o_s);
      max_err = std::max(max_err, std::fabs(approx - ref.data[i]));
      sum += approx;
    }
    max_norm_rel = std::max(max_norm_rel, std::fabs(sum - 1.0));
  }
  CHECK(max_err <= 0.02);
  CHECK(max_norm_rel <= 0.05);
}

TEST_CASE("block input conversion scales to the bit depth") {
  IntegerModel im = quantize_model(fused_model(Scheme::Scheme1, 5), {});
  Rng rng(6);
  BlockInput in = random_input(rng, 4);
  in.x0.data[0] = 1.0;
  in.s0.data[0] = 0.5;
  IntBlockInput q = to_int_input(in, im);
  CHECK(q.x0.data[0] == 256);
  CHECK(q.s0.data[0] == 128);
  CHECK(q.n == 4);
}

TEST_CASE("integer forward stays close to the float pipeline") {
  Rng rng(77);
  for (Scheme s : {Scheme::Scheme1, Scheme::Scheme2}) {
    ModelWeights fused = fused_model(s, 7);
    IntegerModel im = quantize_model(fused, {});
    double sum_err = 0;
    std::size_t count = 0;
    for (int t = 0; t < 60; ++t) {
      const std::size_t n = (t % 3 == 0) ? 4 : (t % 3 == 1 ? 8 : 16);
      BlockInput in = random_input(rng, n);
      ForwardResult fr = forward(fused, in);
      IntForwardResult ir = int_forward(im, to_int_input(in, im));
      REQUIRE(ir.samples.size() == 2 * n * n);
      for (std::size_t i = 0; i < ir.samples.size(); ++i) {
        sum_err += std::fabs(fr.prediction.data[i] * 255.0 - ir.samples[i]);
        ++count;
      }
      // attention rows normalize to ~2^o_s
      for (std::size_t j = 0; j < n * n; ++j) {
        double rs = 0;
        for (std::size_t i = 0; i < 4 * n + 1; ++i)
          rs += ir.attention(j, i);
        CHECK(std::fabs(rs / std::ldexp(1.0, im.cfg.o_s) - 1.0) <= 0.05);
      }
    }
    CHECK(sum_err / static_cast<double>(count) <= 2.0);
  }
}

TEST_CASE("integer forward is bit-exact across reruns") {
  ModelWeights fused = fused_model(Scheme::Scheme2, 8);
  IntegerModel im = quantize_model(fused, {});
  Rng rng(9);
  BlockInput in = random_input(rng, 8);
  IntBlockInput q = to_int_input(in, im);
  IntForwardResult a = int_forward(im, q);
  IntForwardResult b = int_forward(im, q);
  CHECK(a.samples == b.samples);
  CHECK(a.prediction.data == b.prediction.data);
  CHECK(a.attention.data == b.attention.data);

  Tensor back = int_prediction_to_float(a, 8, im.cfg.input_bitdepth);
  REQUIRE(back.data.size() == a.samples.size());
  for (std::size_t i = 0; i < back.data.size(); ++i)
    CHECK(back.data[i] == doctest::Approx(a.samples[i] / 255.0).epsilon(1e-12));
}

TEST_CASE("overflow audit names every stage and passes the default chain") {
  IntegerModel im = quantize_model(fused_model(Scheme::Scheme1, 10), {});
  AuditReport report = audit_overflow(im);
  CHECK(report.ok);
  REQUIRE(!report.entries.empty());
  bool saw_head = false, saw_softmax = false;
  for (const AuditEntry &e : report.entries) {
    CHECK(!e.name.empty());
    CHECK(e.ok);
    CHECK(e.worst_accumulator < e.limit);
    if (e.name.find("head") != std::string::npos)
      saw_head = true;
    if (e.name.find("softmax") != std::string::npos)
      saw_softmax = true;
  }
  CHECK(saw_head);
  CHECK(saw_softmax);
}

TEST_CASE("integer model JSON round-trips bit-exactly") {
  ModelWeights fused = fused_model(Scheme::Scheme2, 11);
  IntegerModel im = quantize_model(fused, {});
  std::string text = serialize_integer_model(im);
  IntegerModel copy = parse_integer_model(text);
  CHECK(serialize_integer_model(copy) == text);
  CHECK(copy.sum_guard_bits == im.sum_guard_bits);
  CHECK(copy.lut_sum == im.lut_sum);

  Rng rng(12);
  BlockInput in = random_input(rng, 16);
  IntForwardResult a = int_forward(im, to_int_input(in, im));
  IntForwardResult b = int_forward(copy, to_int_input(in, copy));
  CHECK(a.samples == b.samples);
  CHECK(a.attention.data == b.attention.data);
}

TEST_CASE("integer model loader rejects foreign versions and types") {
  IntegerModel im = quantize_model(fused_model(Scheme::Scheme1, 13), {});
  nlohmann::json j = nlohmann::json::parse(serialize_integer_model(im));
  j["format_version"] = 999;
  CHECK_THROWS_AS((void)parse_integer_model(j.dump()), std::runtime_error);
  j = nlohmann::json::parse(serialize_integer_model(im));
  j["model_type"] = "float";
  CHECK_THROWS_AS((void)parse_integer_model(j.dump()), std::runtime_error);
}
