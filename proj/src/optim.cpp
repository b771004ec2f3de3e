#include "constyle/optim.hpp"

#include <cmath>
#include <numbers>

#include "constyle/errors.hpp"

namespace constyle {

double cosine_lr(std::size_t iter, std::size_t total_iters, double lr_init, double lr_final) {
  if (total_iters == 0 || iter > total_iters) {
    throw ContractError("cosine_lr: iteration " + std::to_string(iter) + " outside [0, " +
                        std::to_string(total_iters) + "]");
  }
  if (iter == 0) return lr_init;
  if (iter == total_iters) return lr_final;
  const double phase = std::numbers::pi * static_cast<double>(iter) / static_cast<double>(total_iters);
  return lr_final + 0.5 * (lr_init - lr_final) * (1.0 + std::cos(phase));
}

AdamW::AdamW(AdamWConfig config) : config_(config) {}

void AdamW::step(const std::vector<Group>& groups, double lr) {
  for (const auto& g : groups) {
    for (const auto& [name, p] : *g.params) {
      if (!p.has_grad()) continue;
      for (float x : p.grad()) {
        if (!std::isfinite(x)) throw TrainingError("non-finite gradient in parameter " + g.prefix + "." + name);
      }
    }
  }
  double clip_scale = 1.0;
  if (config_.clip_norm) {
    double sq = 0.0;
    for (const auto& g : groups)
      for (const auto& [_, p] : *g.params)
        if (p.has_grad())
          for (float x : p.grad()) sq += double(x) * x;
    const double norm = std::sqrt(sq);
    if (norm > *config_.clip_norm) clip_scale = *config_.clip_norm / norm;
  }

  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  for (const auto& g : groups) {
    for (auto& [name, p] : *g.params) {
      if (!p.requires_grad() || !p.has_grad()) continue;
      const std::string key = g.prefix + "." + name;
      auto it = moments_.find(key);
      if (it == moments_.end()) {
        it = moments_.emplace(key, Moments{Tensor::zeros(p.shape()), Tensor::zeros(p.shape())}).first;
      } else if (it->second.m.shape() != p.shape()) {
        throw ModelError("optimizer moments for " + key + " have shape " + shape_str(it->second.m.shape()));
      }
      auto values = p.mutable_data();
      const auto grad = p.grad();
      auto m = it->second.m.mutable_data();
      auto v = it->second.v.mutable_data();
      for (std::size_t i = 0; i < values.size(); ++i) {
        const double gi = clip_scale * grad[i];
        const double mi = config_.beta1 * m[i] + (1.0 - config_.beta1) * gi;
        const double vi = config_.beta2 * v[i] + (1.0 - config_.beta2) * gi * gi;
        m[i] = static_cast<float>(mi);
        v[i] = static_cast<float>(vi);
        double pi = values[i];
        pi -= lr * config_.weight_decay * pi;
        pi -= lr * (mi / c1) / (std::sqrt(vi / c2) + config_.eps);
        values[i] = static_cast<float>(pi);
      }
    }
  }
}

void AdamW::restore(std::uint64_t steps, std::map<std::string, Moments> moments) {
  steps_ = steps;
  moments_ = std::move(moments);
}

}  // namespace constyle
