#include "constyle/restoration_net.hpp"

#include <algorithm>

#include "constyle/errors.hpp"

namespace constyle {

void NetConfig::validate() const {
  if (levels == 0) throw ConfigError("net.levels must be positive");
  if (width == 0 || width % 2 != 0) throw ConfigError("net.width must be a positive even number");
  if (blocks_left.size() != levels) throw ConfigError("net.blocks_left must list one count per level");
  if (blocks_right.size() != levels) throw ConfigError("net.blocks_right must list one count per level");
  if (feature_width == 0 || latent_dim == 0) throw ConfigError("net feature_width and latent_dim must be positive");
  block_factory<float>(block_kind);
}

NetConfig NetConfig::reference() {
  NetConfig c;
  c.width = 48;
  c.levels = 3;
  c.blocks_left = {7, 8, 9};
  c.blocks_bottom = 9;
  c.blocks_right = {9, 8, 7};
  return c;
}

namespace {

template <typename T>
class ResidualBlock final : public ProcessBlock<T> {
 public:
  ResidualBlock(ParameterSet<T>& params, const std::string& name, std::size_t channels, Rng& rng)
      : conv0_(Conv2d<T>::make(params, name + ".conv0", channels, channels, 3, 1, rng)),
        conv1_(Conv2d<T>::make(params, name + ".conv1", channels, channels, 3, 1, rng, Init::zeros)) {}

  BasicTensor<T> operator()(const BasicTensor<T>& x) const override {
    return add(x, conv1_(activate(conv0_(x))));
  }

 private:
  Conv2d<T> conv0_, conv1_;
};

template <typename T>
class ConvBlock final : public ProcessBlock<T> {
 public:
  ConvBlock(ParameterSet<T>& params, const std::string& name, std::size_t channels, Rng& rng)
      : conv_(Conv2d<T>::make(params, name + ".conv", channels, channels, 3, 1, rng)) {}

  BasicTensor<T> operator()(const BasicTensor<T>& x) const override { return activate(conv_(x)); }

 private:
  Conv2d<T> conv_;
};

}  // namespace

template <typename T>
BlockFactory<T> block_factory(const std::string& kind) {
  if (kind == "residual") {
    return [](ParameterSet<T>& p, const std::string& name, std::size_t c, Rng& rng) {
      return std::unique_ptr<ProcessBlock<T>>(new ResidualBlock<T>(p, name, c, rng));
    };
  }
  if (kind == "conv") {
    return [](ParameterSet<T>& p, const std::string& name, std::size_t c, Rng& rng) {
      return std::unique_ptr<ProcessBlock<T>>(new ConvBlock<T>(p, name, c, rng));
    };
  }
  throw ConfigError("unknown block_kind '" + kind + "' (expected residual or conv)");
}

template <typename T>
Downsample<T> Downsample<T>::make(ParameterSet<T>& params, const std::string& name, std::size_t in, std::size_t out,
                                  Rng& rng) {
  if (out % 4 != 0) throw ConfigError("downsample output channels must be divisible by 4, got " + std::to_string(out));
  return {Conv2d<T>::make(params, name + ".conv", in, out / 4, 1, 1, rng)};
}

template <typename T>
BasicTensor<T> Downsample<T>::operator()(const BasicTensor<T>& x) const {
  if (x.rank() != 4 || x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0) {
    throw DimensionError("downsample needs even spatial dims, got " + shape_str(x.shape()));
  }
  return pixel_unshuffle(conv(x), 2);
}

template <typename T>
Upsample<T> Upsample<T>::make(ParameterSet<T>& params, const std::string& name, std::size_t in, std::size_t out,
                              Rng& rng) {
  return {Conv2d<T>::make(params, name + ".conv", in, out * 4, 1, 1, rng)};
}

template <typename T>
BasicTensor<T> Upsample<T>::operator()(const BasicTensor<T>& x) const {
  return pixel_shuffle(conv(x), 2);
}

template <typename T>
AffineInjector<T> AffineInjector<T>::make(ParameterSet<T>& params, const std::string& name,
                                          std::size_t feature_channels, std::size_t target_channels, Rng& rng) {
  return {Conv2d<T>::make(params, name + ".gamma", feature_channels, target_channels, 1, 1, rng, Init::zeros),
          Conv2d<T>::make(params, name + ".beta", feature_channels, target_channels, 1, 1, rng, Init::zeros)};
}

template <typename T>
BasicTensor<T> AffineInjector<T>::operator()(const BasicTensor<T>& features, const BasicTensor<T>& latent_map) const {
  if (features.rank() != 4 || latent_map.rank() != 4 || features.dim(0) != latent_map.dim(0) ||
      features.dim(2) != latent_map.dim(2) || features.dim(3) != latent_map.dim(3)) {
    throw DimensionError("affine injection: latent map " + shape_str(latent_map.shape()) +
                         " does not match feature scale " + shape_str(features.shape()));
  }
  const BasicTensor<T> g = gamma(latent_map);
  const BasicTensor<T> b = beta(latent_map);
  if (g.shape() != features.shape()) {
    throw DimensionError("affine injection: modulation " + shape_str(g.shape()) + " vs features " +
                         shape_str(features.shape()));
  }
  return add(add(features, mul(g, features)), b);
}

template <typename T>
RestorationNet<T>::RestorationNet(const NetConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const auto make_block = block_factory<T>(config_.block_kind);
  const std::size_t L = config_.levels;
  auto channels = [&](std::size_t level) { return config_.width << level; };
  auto make_blocks = [&](const std::string& prefix, std::size_t count, std::size_t c) {
    Blocks blocks;
    for (std::size_t b = 0; b < count; ++b) blocks.push_back(make_block(params_, prefix + ".block" + std::to_string(b), c, rng));
    return blocks;
  };

  preprocess_ = Conv2d<T>::make(params_, "preprocess", 3, config_.width, 3, 1, rng);
  for (std::size_t l = 0; l < L; ++l) {
    encoder_blocks_.push_back(make_blocks("enc" + std::to_string(l), config_.blocks_left[l], channels(l)));
    down_.push_back(Downsample<T>::make(params_, "down" + std::to_string(l), channels(l), channels(l + 1), rng));
  }
  bottom_blocks_ = make_blocks("bottom", config_.blocks_bottom, channels(L));
  decoder_blocks_.resize(L);
  for (std::size_t l = L; l-- > 0;) {
    up_.push_back(Upsample<T>::make(params_, "up" + std::to_string(l), channels(l + 1), channels(l), rng));
    reduce_.push_back(Conv2d<T>::make(params_, "reduce" + std::to_string(l), 2 * channels(l), channels(l), 1, 1, rng));
    decoder_blocks_[l] = make_blocks("dec" + std::to_string(l), config_.blocks_right[L - 1 - l], channels(l));
  }
  // up_/reduce_ were built deepest first; store them by level.
  std::reverse(up_.begin(), up_.end());
  std::reverse(reduce_.begin(), reduce_.end());

  for (std::size_t s = 0; s < L; ++s) {
    injectors_.push_back(AffineInjector<T>::make(params_, "inject" + std::to_string(s + 1), config_.feature_width << s,
                                                 channels(s + 1), rng));
  }
  code_fuse_ = Conv2d<T>::make(params_, "code_fuse", config_.latent_dim, channels(L), 1, 1, rng, Init::zeros);
  finetune_ = Conv2d<T>::make(params_, "finetune", config_.width, 3, 3, 1, rng,
                              config_.zero_init_tail ? Init::zeros : Init::kaiming);
}

template <typename T>
std::size_t RestorationNet<T>::injector_parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) {
    if (name.rfind("inject", 0) == 0 || name.rfind("code_fuse", 0) == 0) n += t.numel();
  }
  return n;
}

template <typename T>
BasicTensor<T> RestorationNet<T>::forward(const BasicTensor<T>& degraded, const LatentBundle<T>* bundle,
                                          bool inject) const {
  const std::size_t L = config_.levels;
  if (degraded.rank() != 4 || degraded.dim(1) != 3) {
    throw DimensionError("restoration net expects (N,3,H,W), got " + shape_str(degraded.shape()));
  }
  const std::size_t factor = std::size_t{1} << L;
  if (degraded.dim(2) % factor != 0 || degraded.dim(3) % factor != 0) {
    throw DimensionError("restoration net: spatial size of " + shape_str(degraded.shape()) +
                         " not divisible by " + std::to_string(factor));
  }
  if (inject) {
    if (!bundle) throw ContractError("injection requested without a latent bundle");
    if (bundle->feature_maps.size() != L) {
      throw DimensionError("latent bundle has " + std::to_string(bundle->feature_maps.size()) +
                           " feature maps, net has " + std::to_string(L) + " injection levels");
    }
  }
  auto run = [](const Blocks& blocks, BasicTensor<T> h) {
    for (const auto& b : blocks) h = (*b)(h);
    return h;
  };

  std::vector<BasicTensor<T>> skips;
  BasicTensor<T> h = preprocess_(degraded);
  for (std::size_t l = 0; l < L; ++l) {
    h = run(encoder_blocks_[l], h);
    skips.push_back(h);
    h = down_[l](h);
  }
  if (inject) {
    h = injectors_[L - 1](h, bundle->feature_maps[L - 1]);
    const auto& code = bundle->code;
    if (code.rank() != 2 || code.dim(0) != h.dim(0) || code.dim(1) != config_.latent_dim) {
      throw DimensionError("latent code " + shape_str(code.shape()) + " does not fit the bottom level " +
                           shape_str(h.shape()));
    }
    h = add(h, code_fuse_(broadcast_spatial(code, h.dim(2), h.dim(3))));
  }
  h = run(bottom_blocks_, h);
  for (std::size_t l = L; l-- > 0;) {
    h = up_[l](h);
    h = reduce_[l](concat<T>({h, skips[l]}, 1));
    if (inject && l >= 1) h = injectors_[l - 1](h, bundle->feature_maps[l - 1]);
    h = run(decoder_blocks_[l], h);
  }
  return add(finetune_(h), degraded);
}

template class RestorationNet<float>;
template class RestorationNet<double>;
template struct Downsample<float>;
template struct Downsample<double>;
template struct Upsample<float>;
template struct Upsample<double>;
template struct AffineInjector<float>;
template struct AffineInjector<double>;
template BlockFactory<float> block_factory<float>(const std::string&);
template BlockFactory<double> block_factory<double>(const std::string&);

}  // namespace constyle
