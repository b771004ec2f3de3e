#include "constyle/encoder.hpp"

#include "constyle/errors.hpp"

namespace constyle {

void EncoderConfig::validate() const {
  if (width == 0) throw ConfigError("encoder.width must be positive");
  if (latent_dim == 0) throw ConfigError("encoder.latent_dim must be positive");
  if (stages == 0) throw ConfigError("encoder.stages must be positive");
}

template <typename T>
ConStyleEncoder<T>::ConStyleEncoder(const EncoderConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  std::size_t in = 3;
  for (std::size_t s = 0; s < config_.stages; ++s) {
    const std::size_t out = config_.width << s;
    const std::string name = "stage" + std::to_string(s);
    Stage stage{Conv2d<T>::make(params_, name + ".down", in, out, 3, 2, rng),
                Conv2d<T>::make(params_, name + ".refine", out, out, 3, 1, rng)};
    stages_.push_back(std::move(stage));
    in = out;
  }
  head0_ = Conv2d<T>::make(params_, "head0", in, config_.head_width(), 3, 1, rng);
  head1_ = Conv2d<T>::make(params_, "head1", config_.head_width(), config_.head_width(), 3, 1, rng);
  mlp0_ = Linear<T>::make(params_, "mlp0", config_.head_width(), config_.mlp_hidden(), rng);
  mlp1_ = Linear<T>::make(params_, "mlp1", config_.mlp_hidden(), config_.latent_dim, rng);
}

template <typename T>
LatentBundle<T> ConStyleEncoder<T>::encode(const BasicTensor<T>& images) const {
  if (images.rank() != 4 || images.dim(1) != 3) {
    throw DimensionError("encode expects (B,3,H,W) images, got " + shape_str(images.shape()));
  }
  const std::size_t factor = std::size_t{1} << config_.stages;
  if (images.dim(2) % factor != 0 || images.dim(3) % factor != 0) {
    throw DimensionError("encode: spatial size of " + shape_str(images.shape()) + " not divisible by " +
                         std::to_string(factor));
  }
  LatentBundle<T> bundle;
  BasicTensor<T> x = images;
  for (const auto& stage : stages_) {
    x = activate(stage.down(x));
    x = activate(stage.refine(x));
    bundle.feature_maps.push_back(x);
  }
  x = activate(head0_(x));
  x = activate(head1_(x));
  BasicTensor<T> v = global_avg_pool(x);
  v = mlp1_(activate(mlp0_(v)));
  bundle.code = normalize_rows(v);
  return bundle;
}

namespace {
Rng& scratch_rng() {
  static thread_local Rng rng(0);
  return rng;
}
}  // namespace

template <typename T>
MomentumEncoder<T>::MomentumEncoder(const ConStyleEncoder<T>& source)
    : net_(source.config(), scratch_rng()) {
  copy_parameters(net_.parameters(), source.parameters());
  net_.parameters().set_trainable(false);
}

template <typename T>
LatentBundle<T> MomentumEncoder<T>::encode(const BasicTensor<T>& images) const {
  NoGradGuard no_grad;
  return net_.encode(images);
}

template <typename T>
void ema_update(ParameterSet<T>& momentum, const ParameterSet<T>& encoder, double m) {
  if (!(m >= 0.0 && m < 1.0)) throw ContractError("ema momentum must lie in [0,1), got " + std::to_string(m));
  if (momentum.size() != encoder.size()) {
    throw ModelError("ema_update: momentum encoder has " + std::to_string(momentum.size()) +
                     " parameters, encoder has " + std::to_string(encoder.size()));
  }
  for (auto& [name, target] : momentum) {
    if (!encoder.contains(name)) throw ModelError("ema_update: encoder lacks parameter '" + name + "'");
    const auto& source = encoder.get(name);
    if (source.shape() != target.shape()) {
      throw ModelError("ema_update: parameter '" + name + "' shape " + shape_str(target.shape()) + " vs " +
                       shape_str(source.shape()));
    }
    auto dst = target.mutable_data();
    const auto src = source.data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      dst[i] = static_cast<T>(m * static_cast<double>(dst[i]) + (1.0 - m) * static_cast<double>(src[i]));
    }
  }
}

template class ConStyleEncoder<float>;
template class ConStyleEncoder<double>;
template class MomentumEncoder<float>;
template class MomentumEncoder<double>;
template void ema_update(ParameterSet<float>&, const ParameterSet<float>&, double);
template void ema_update(ParameterSet<double>&, const ParameterSet<double>&, double);

}  // namespace constyle
