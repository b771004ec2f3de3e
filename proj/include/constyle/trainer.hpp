#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "constyle/config.hpp"
#include "constyle/degradations.hpp"
#include "constyle/encoder.hpp"
#include "constyle/metrics.hpp"
#include "constyle/optim.hpp"
#include "constyle/queue.hpp"
#include "constyle/restoration_net.hpp"

namespace constyle {

/// splitmix64 of (a, b); used to derive per-iteration and per-image seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

/// Encoder, momentum encoder, restoration net and negative queue.
struct Model {
  ConStyleEncoder<float> encoder;
  MomentumEncoder<float> momentum;
  RestorationNet<float> net;
  NegativeQueue queue;
  bool inject = true;

  explicit Model(const TrainConfig& config);

  /// Restored image from the encoder and net only; no gradients are recorded.
  Tensor infer(const Tensor& degraded) const;

  /// {"encoder": n, "momentum_encoder": n, "restoration_net": n, "injectors": n, "total_trainable": n}
  nlohmann::json parameter_counts() const;

 private:
  Model(const TrainConfig& config, Rng&& rng);
};

struct LossBreakdown {
  double l1 = 0;
  double infonce = 0;
  double content = 0;
  double style = 0;
  double total = 0;  // weighted sum of the four components
  bool style_active = false;
  double lr = 0;
  std::size_t iteration = 0;  // the iteration this step completed (1-based)

  nlohmann::json to_json() const;
};

class Trainer {
 public:
  explicit Trainer(const TrainConfig& config);

  /// One optimisation step on an aligned (B,3,P,P) pair of batches.
  LossBreakdown train_step(const Tensor& clean, const Tensor& degraded);

  /// The batch for the current iteration; depends only on the seed and the iteration.
  std::pair<Tensor, Tensor> batch_for_iteration(PatchSampler& sampler) const;

  /// Trains until `until` (default total_iters). `on_step` sees every step.
  void run(PatchSampler& sampler, std::size_t until = 0,
           const std::function<void(const LossBreakdown&)>& on_step = nullptr);

  const TrainConfig& config() const { return config_; }
  Model& model() { return model_; }
  const Model& model() const { return model_; }
  AdamW& optimizer() { return optimizer_; }
  const AdamW& optimizer() const { return optimizer_; }
  std::size_t iteration() const { return iteration_; }
  void set_iteration(std::size_t iteration) { iteration_ = iteration; }

 private:
  TrainConfig config_;
  DegradationSpec degradation_;
  Model model_;
  AdamW optimizer_;
  std::size_t iteration_ = 0;
};

struct EvaluationResult {
  MetricReport report;
  std::vector<std::string> failures;  // "<path>: <reason>"
};

/// Per-image PSNR/SSIM of the (clamped) restoration against the clean image.
/// Images are cropped to a multiple of `multiple`; each image gets its own
/// degradation seed derived from `seed`. A null model evaluates the degraded
/// input itself. Unreadable images are logged through `log` and skipped.
EvaluationResult evaluate(const Model* model, const std::vector<std::filesystem::path>& images,
                          const DegradationSpec& spec, std::uint64_t seed, std::size_t multiple,
                          const std::string& name = "eval",
                          const std::function<void(const std::string&)>& log = nullptr);

/// Restores one (3,H,W) image of any size: edge-replicates to a multiple of
/// 2^levels, runs infer, clamps to [0,1] and crops back to (3,H,W).
Tensor restore_image(const Model& model, const Tensor& image);

struct AblationResult {
  std::vector<MetricReport> reports;  // baseline first, then g1, g2, g3
  MetricReport noisy_input;
  bool baseline_best = false;

  nlohmann::json to_json() const;
};

/// Trains the base config and each single-guideline variant under the same
/// seed and evaluates all of them on the config's eval manifest.
AblationResult run_ablation(const TrainConfig& base, const std::function<void(const std::string&)>& log = nullptr);

/// Variant of `base` with exactly one ablation flag set ("baseline" clears all).
TrainConfig ablation_variant(const TrainConfig& base, const std::string& name);

}  // namespace constyle
