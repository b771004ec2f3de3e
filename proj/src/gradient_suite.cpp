#include "constyle/gradient_suite.hpp"

#include <functional>

#include "constyle/autograd.hpp"
#include "constyle/encoder.hpp"
#include "constyle/errors.hpp"
#include "constyle/losses.hpp"
#include "constyle/ops.hpp"
#include "constyle/restoration_net.hpp"

namespace constyle {
namespace {

constexpr double kOpTolerance = 1e-4;
constexpr double kEndToEndTolerance = 1e-3;

Tensor64 random64(const Shape& shape, std::uint64_t seed, double stddev = 1.0) {
  Rng rng(seed);
  return Tensor64::randn(shape, rng, stddev);
}

Tensor64 weighted_sum(const Tensor64& y, std::uint64_t seed) { return sum(mul(y, random64(y.shape(), seed))); }

// Fills every parameter whose name contains `part`.
void randomize(ParameterSet<double>& params, const std::string& part, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> dist(0.0, 0.1);
  for (auto& [name, p] : params)
    if (name.find(part) != std::string::npos)
      for (auto& v : p.mutable_data()) v = dist(rng);
}

struct Check {
  double tolerance;
  std::function<GradCheckReport()> run;
};

GradCheckReport conv_check(std::size_t stride) {
  return grad_check(
      [&](const std::vector<Tensor64>& in) {
        return weighted_sum(conv2d(in[0], in[1], std::optional{in[2]}, stride, 1), 11);
      },
      {random64({2, 3, 6, 5}, 8), random64({4, 3, 3, 3}, 9), random64({4}, 10)});
}

GradCheckReport info_nce_check(InfoNceConvention convention) {
  const Tensor64 negatives = normalize_rows(random64({7, 6}, 10)).detach();
  return grad_check(
      [&](const std::vector<Tensor64>& in) {
        return info_nce(normalize_rows(in[0]), normalize_rows(in[1]), negatives, Temperature(0.5), convention);
      },
      {random64({3, 6}, 11), random64({3, 6}, 12)});
}

GradCheckReport affine_inject_check() {
  Rng rng(1);
  ParameterSet<double> params;
  auto inj = AffineInjector<double>::make(params, "inject", 4, 6, rng);
  randomize(params, "inject", 2);
  return grad_check(
      [&](const std::vector<Tensor64>& in) {
        const AffineInjector<double> a{Conv2d<double>{in[2], in[3], 1, 0}, Conv2d<double>{in[4], in[5], 1, 0}};
        return weighted_sum(a(in[0], in[1]), 3);
      },
      {random64({2, 6, 4, 4}, 4), random64({2, 4, 4, 4}, 5), inj.gamma.weight, inj.gamma.bias, inj.beta.weight,
       inj.beta.bias});
}

GradCheckReport encoder_check() {
  Rng rng(8);
  EncoderConfig cfg;
  cfg.width = 2;
  cfg.latent_dim = 4;
  cfg.stages = 3;
  ConStyleEncoder<double> enc(cfg, rng);
  return grad_check(
      [&](const std::vector<Tensor64>& in) {
        const auto b = enc.encode(in[0]);
        return add(weighted_sum(b.code, 1), weighted_sum(b.feature_maps[1], 2));
      },
      {random64({1, 3, 8, 8}, 9)});
}

GradCheckReport end_to_end_check() {
  Rng rng(1);
  EncoderConfig enc_cfg;
  enc_cfg.width = 2;
  enc_cfg.latent_dim = 4;
  enc_cfg.stages = 2;
  NetConfig cfg;
  cfg.width = 4;
  cfg.levels = 2;
  cfg.blocks_left = {1, 1};
  cfg.blocks_bottom = 1;
  cfg.blocks_right = {1, 1};
  cfg.feature_width = 2;
  cfg.latent_dim = 4;
  cfg.zero_init_tail = false;
  ConStyleEncoder<double> enc(enc_cfg, rng);
  RestorationNet<double> net(cfg, rng);
  randomize(net.parameters(), "inject", 3);
  randomize(net.parameters(), "code_fuse", 4);
  randomize(net.parameters(), ".conv1.", 7);
  const Tensor64 clean = random64({1, 3, 8, 8}, 5);
  return grad_check(
      [&](const std::vector<Tensor64>& in) {
        const auto bundle = enc.encode(in[0]);
        return l1_loss(net.forward(in[0], &bundle, true), clean);
      },
      {random64({1, 3, 8, 8}, 6)});
}

const std::vector<std::pair<std::string, Check>>& registry() {
  static const std::vector<std::pair<std::string, Check>> checks = {
      {"conv2d", {kOpTolerance, [] { return conv_check(1); }}},
      {"conv2d_stride2", {kOpTolerance, [] { return conv_check(2); }}},
      {"linear",
       {kOpTolerance,
        [] {
          return grad_check(
              [](const std::vector<Tensor64>& in) { return weighted_sum(linear(in[0], in[1], in[2]), 19); },
              {random64({3, 4}, 20), random64({2, 4}, 21), random64({2}, 22)});
        }}},
      {"pixel_shuffle_pair",
       {kOpTolerance,
        [] {
          return grad_check(
              [](const std::vector<Tensor64>& in) {
                return add(weighted_sum(pixel_shuffle(in[0], 2), 23), weighted_sum(pixel_unshuffle(in[0], 2), 24));
              },
              {random64({2, 4, 4, 6}, 25)});
        }}},
      {"leaky_relu",
       {kOpTolerance,
        [] {
          return grad_check([](const std::vector<Tensor64>& in) { return weighted_sum(leaky_relu(in[0], 0.2), 26); },
                            {random64({4, 5}, 27)});
        }}},
      {"normalize_rows",
       {kOpTolerance,
        [] {
          return grad_check([](const std::vector<Tensor64>& in) { return weighted_sum(normalize_rows(in[0]), 28); },
                            {random64({4, 5}, 29)});
        }}},
      {"l1_loss",
       {kOpTolerance,
        [] {
          return grad_check([](const std::vector<Tensor64>& in) { return l1_loss(in[0], in[1]); },
                            {random64({3, 5}, 30), random64({3, 5}, 31)});
        }}},
      {"content_loss",
       {kOpTolerance,
        [] {
          const Tensor64 k = random64({3, 5}, 18);
          return grad_check([&](const std::vector<Tensor64>& in) { return content_loss(in[0], k); },
                            {random64({3, 5}, 21)});
        }}},
      {"style_loss",
       {kOpTolerance,
        [] {
          const Tensor64 q1 = random64({3, 5}, 19), q2 = random64({2, 5}, 20);
          return grad_check(
              [&](const std::vector<Tensor64>& in) {
                return style_loss<double>(in[0], q1, q2, GramDistance::frobenius).value;
              },
              {random64({3, 5}, 22)});
        }}},
      {"info_nce", {kOpTolerance, [] { return info_nce_check(InfoNceConvention::moco); }}},
      {"info_nce_literal", {kOpTolerance, [] { return info_nce_check(InfoNceConvention::literal); }}},
      {"affine_inject", {kOpTolerance, affine_inject_check}},
      {"encoder", {kOpTolerance, encoder_check}},
      {"end_to_end", {kEndToEndTolerance, end_to_end_check}},
  };
  return checks;
}

}  // namespace

nlohmann::json GradientCheckResult::to_json() const {
  return {{"op", op},
          {"max_rel_error", max_rel_error},
          {"tolerance", tolerance},
          {"elements", elements},
          {"passed", passed}};
}

std::vector<std::string> gradient_suite_ops() {
  std::vector<std::string> names;
  for (const auto& [name, check] : registry()) names.push_back(name);
  return names;
}

GradientCheckResult run_gradient_check(const std::string& op) {
  for (const auto& [name, check] : registry()) {
    if (name != op) continue;
    const GradCheckReport report = check.run();
    return {name, report.max_rel_error, check.tolerance, report.elements, report.max_rel_error < check.tolerance};
  }
  std::string known;
  for (const auto& name : gradient_suite_ops()) known += (known.empty() ? "" : ", ") + name;
  throw ConfigError("op: unknown gradient check '" + op + "' (known: " + known + ")");
}

std::vector<GradientCheckResult> run_gradient_suite() {
  std::vector<GradientCheckResult> results;
  for (const auto& name : gradient_suite_ops()) results.push_back(run_gradient_check(name));
  return results;
}

}  // namespace constyle
