#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"

#include "constyle/degradations.hpp"
#include "constyle/encoder.hpp"
#include "constyle/losses.hpp"
#include "constyle/optim.hpp"
#include "constyle/restoration_net.hpp"

namespace constyle {

struct LossWeights {
  double style = 1.0;
  double content = 1.0;
  double infonce = 1.0;
  double l1 = 1.0;
};

struct AblationFlags {
  bool g1_small_queue = false;
  bool g2_no_feature_maps = false;
  bool g3_queue_behind_momentum = false;
};

struct DataConfig {
  std::string train_manifest;
  std::string eval_manifest;
  std::string degradation = "noise:0:50";
  bool augment = true;
};

struct OutputConfig {
  std::string dir = "run";
  std::size_t checkpoint_every = 0;  // 0: only at the end
  std::size_t log_every = 1;
};

struct TrainConfig {
  double lr_init = 3e-4;
  double lr_final = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 1e-4;
  double adam_eps = 1e-8;
  std::optional<double> grad_clip;
  std::size_t patch = 128;
  std::size_t batch = 4;
  std::size_t total_iters = 1000;
  std::size_t queue_capacity = kDefaultQueueCapacity;
  double temperature = 0.07;
  double ema_momentum = 0.999;
  LossWeights loss_weights;
  AblationFlags ablation;
  InfoNceConvention info_nce = InfoNceConvention::moco;
  GramDistance gram_distance = GramDistance::mse;
  std::optional<double> style_clamp;
  std::uint64_t seed = 0;
  EncoderConfig encoder;
  NetConfig net;  // feature_width and latent_dim follow the encoder
  DataConfig data;
  OutputConfig output;

  /// Throws ConfigError whose message starts with the offending field path.
  void validate() const;

  /// Queue capacity after the small-queue ablation is applied.
  std::size_t effective_queue_capacity() const;
  DegradationSpec degradation() const;
  AdamWConfig adamw() const;
};

/// Unknown keys are rejected. Missing keys keep their defaults.
TrainConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& config);
/// ConfigError naming the path if the file is missing or malformed. Relative
/// manifest paths are resolved against the config file's directory.
TrainConfig load_config(const std::filesystem::path& path);

}  // namespace constyle
