#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "constyle/encoder.hpp"
#include "constyle/nn.hpp"

namespace constyle {

struct NetConfig {
  std::size_t width = 16;
  std::size_t levels = 3;
  std::vector<std::size_t> blocks_left{2, 2, 2};
  std::size_t blocks_bottom = 2;
  // Listed from the deepest decoder level to the shallowest.
  std::vector<std::size_t> blocks_right{2, 2, 2};
  std::string block_kind = "residual";
  // Channel layout of the encoder whose latent features get injected.
  std::size_t feature_width = 16;
  std::size_t latent_dim = 128;
  // Zero the final 3×3 convolution so the untrained net is an exact identity map.
  bool zero_init_tail = true;

  void validate() const;
  /// Reference configuration of the full-size network (width 48, [7,8,9] / 9 / [9,8,7]).
  static NetConfig reference();
};

/// A Process-slot operator. Must preserve its input shape.
template <typename T>
class ProcessBlock {
 public:
  virtual ~ProcessBlock() = default;
  virtual BasicTensor<T> operator()(const BasicTensor<T>& x) const = 0;
};

template <typename T>
using BlockFactory =
    std::function<std::unique_ptr<ProcessBlock<T>>(ParameterSet<T>&, const std::string& name, std::size_t channels, Rng&)>;

/// Factory for a registered block kind ("residual", "conv"). Throws ConfigError otherwise.
template <typename T>
BlockFactory<T> block_factory(const std::string& kind);

/// 1×1 conv to out/4 channels, then pixel_unshuffle(2).
template <typename T>
struct Downsample {
  Conv2d<T> conv;
  static Downsample make(ParameterSet<T>& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng);
  BasicTensor<T> operator()(const BasicTensor<T>& x) const;
};

/// 1×1 conv to 4·out channels, then pixel_shuffle(2).
template <typename T>
struct Upsample {
  Conv2d<T> conv;
  static Upsample make(ParameterSet<T>& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng);
  BasicTensor<T> operator()(const BasicTensor<T>& x) const;
};

/// F' = (1 + γ(M)) ⊙ F + β(M), γ and β being zero-initialized 1×1 convolutions of M.
template <typename T>
struct AffineInjector {
  Conv2d<T> gamma;
  Conv2d<T> beta;
  static AffineInjector make(ParameterSet<T>& params, const std::string& name, std::size_t feature_channels,
                             std::size_t target_channels, Rng& rng);
  BasicTensor<T> operator()(const BasicTensor<T>& features, const BasicTensor<T>& latent_map) const;
};

template <typename T>
class RestorationNet {
 public:
  RestorationNet(const NetConfig& config, Rng& rng);

  RestorationNet(RestorationNet&&) noexcept = default;
  RestorationNet& operator=(RestorationNet&&) noexcept = default;

  /// degraded: (N,3,H,W), H and W divisible by 2^levels. With inject=false the
  /// bundle is ignored entirely and may be null.
  BasicTensor<T> forward(const BasicTensor<T>& degraded, const LatentBundle<T>* bundle, bool inject) const;

  const NetConfig& config() const { return config_; }
  ParameterSet<T>& parameters() { return params_; }
  const ParameterSet<T>& parameters() const { return params_; }
  /// Scalar count of the injection parameters (affine injectors and code fusion).
  std::size_t injector_parameter_count() const;

 private:
  using Blocks = std::vector<std::unique_ptr<ProcessBlock<T>>>;

  NetConfig config_;
  ParameterSet<T> params_;
  Conv2d<T> preprocess_;
  std::vector<Blocks> encoder_blocks_;
  std::vector<Downsample<T>> down_;
  Blocks bottom_blocks_;
  std::vector<Upsample<T>> up_;
  std::vector<Conv2d<T>> reduce_;
  std::vector<Blocks> decoder_blocks_;  // indexed by level, shallowest first
  // injectors_[l] modulates level l+1 (levels 1..L-1 in the decoder, L = bottom).
  std::vector<AffineInjector<T>> injectors_;
  Conv2d<T> code_fuse_;
  Conv2d<T> finetune_;
};

extern template class RestorationNet<float>;
extern template class RestorationNet<double>;

}  // namespace constyle
