#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "constyle/nn.hpp"

namespace constyle {

/// lr_final + ½(lr_init − lr_final)(1 + cos(π·iter/total)). ContractError outside [0, total].
double cosine_lr(std::size_t iter, std::size_t total_iters, double lr_init, double lr_final);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  // Global-norm gradient clipping threshold; off when unset.
  std::optional<double> clip_norm;
};

/// AdamW with decoupled weight decay (p ← p − lr·wd·p, then the Adam step) and
/// bias correction. Parameters are addressed as "<group>.<name>"; moments are
/// created lazily on the first step that sees a gradient.
class AdamW {
 public:
  struct Group {
    std::string prefix;
    ParameterSet<float>* params;
  };
  struct Moments {
    Tensor m;
    Tensor v;
  };

  explicit AdamW(AdamWConfig config = {});

  /// One update of every trainable parameter that holds a gradient. Throws
  /// TrainingError naming the parameter if a gradient is not finite.
  void step(const std::vector<Group>& groups, double lr);

  std::uint64_t steps() const { return steps_; }
  const AdamWConfig& config() const { return config_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }
  /// Checkpoint restore.
  void restore(std::uint64_t steps, std::map<std::string, Moments> moments);

 private:
  AdamWConfig config_;
  std::uint64_t steps_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace constyle
