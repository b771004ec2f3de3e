#pragma once

#include <vector>

#include "constyle/nn.hpp"
#include "constyle/tensor.hpp"

namespace constyle {

struct EncoderConfig {
  std::size_t width = 16;       // channels of the first stage; stage s has width·2^s
  std::size_t latent_dim = 128;
  std::size_t stages = 3;       // stride-2 stages, one feature map each

  // Channels of the two 3×3 convolutions that follow the last stage, and the
  // hidden width of the projection MLP. Both scale with `width`.
  std::size_t head_width() const { return 16 * width; }
  std::size_t mlp_hidden() const { return 64 * width; }

  void validate() const;
};

/// Encoder output: unit-norm latent codes and the per-stage feature maps,
/// finest first (1/2, 1/4, ... of the input resolution).
template <typename T>
struct LatentBundle {
  BasicTensor<T> code;
  std::vector<BasicTensor<T>> feature_maps;
};

template <typename T>
class ConStyleEncoder {
 public:
  ConStyleEncoder(const EncoderConfig& config, Rng& rng);

  ConStyleEncoder(ConStyleEncoder&&) noexcept = default;
  ConStyleEncoder& operator=(ConStyleEncoder&&) noexcept = default;
  ConStyleEncoder(const ConStyleEncoder&) = delete;
  ConStyleEncoder& operator=(const ConStyleEncoder&) = delete;

  /// images: (B,3,H,W) with H and W divisible by 2^stages.
  LatentBundle<T> encode(const BasicTensor<T>& images) const;

  const EncoderConfig& config() const { return config_; }
  ParameterSet<T>& parameters() { return params_; }
  const ParameterSet<T>& parameters() const { return params_; }

 private:
  struct Stage {
    Conv2d<T> down;
    Conv2d<T> refine;
  };

  EncoderConfig config_;
  ParameterSet<T> params_;
  std::vector<Stage> stages_;
  Conv2d<T> head0_, head1_;
  Linear<T> mlp0_, mlp1_;
};

/// Shadow copy of an encoder that only ever changes through ema_update.
template <typename T>
class MomentumEncoder {
 public:
  /// Same architecture and parameter names as `source`, initialized to its values.
  explicit MomentumEncoder(const ConStyleEncoder<T>& source);

  /// Encodes without recording gradients.
  LatentBundle<T> encode(const BasicTensor<T>& images) const;

  ParameterSet<T>& parameters() { return net_.parameters(); }
  const ParameterSet<T>& parameters() const { return net_.parameters(); }

 private:
  ConStyleEncoder<T> net_;
};

/// θ_momentum ← m·θ_momentum + (1−m)·θ_encoder for every same-named parameter pair.
/// Arithmetic is carried out in double and rounded once to T.
template <typename T>
void ema_update(ParameterSet<T>& momentum, const ParameterSet<T>& encoder, double m);

template <typename T>
void ema_update(MomentumEncoder<T>& momentum, const ConStyleEncoder<T>& encoder, double m) {
  ema_update(momentum.parameters(), encoder.parameters(), m);
}

extern template class ConStyleEncoder<float>;
extern template class ConStyleEncoder<double>;
extern template class MomentumEncoder<float>;
extern template class MomentumEncoder<double>;

}  // namespace constyle
