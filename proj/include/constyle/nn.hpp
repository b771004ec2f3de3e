#pragma once

#include <cmath>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "constyle/errors.hpp"
#include "constyle/ops.hpp"
#include "constyle/tensor.hpp"

namespace constyle {

/// Default activation slope used by every sub-network.
inline constexpr double kLeakySlope = 0.2;

/// Ordered collection of named parameter leaves. Names are unique.
template <typename T>
class ParameterSet {
 public:
  using Entry = std::pair<std::string, BasicTensor<T>>;

  BasicTensor<T> add(std::string name, BasicTensor<T> value, bool trainable = true) {
    if (index_.count(name)) throw ModelError("duplicate parameter name '" + name + "'");
    value.set_requires_grad(trainable);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), value);
    return value;
  }

  bool contains(std::string_view name) const { return index_.count(std::string(name)) != 0; }

  const BasicTensor<T>& get(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ModelError("no parameter named '" + std::string(name) + "'");
    return entries_[it->second].second;
  }
  BasicTensor<T>& get(std::string_view name) {
    return const_cast<BasicTensor<T>&>(std::as_const(*this).get(name));
  }

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : entries_) t.zero_grad();
  }
  void set_trainable(bool on) {
    for (auto& [_, t] : entries_) t.set_requires_grad(on);
  }

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Copies values of every parameter of `from` into the same-named parameter of `to`.
template <typename T>
void copy_parameters(ParameterSet<T>& to, const ParameterSet<T>& from) {
  if (to.size() != from.size()) throw ModelError("parameter sets differ in size");
  for (auto& [name, dst] : to) {
    const auto& src = from.get(name);
    if (src.shape() != dst.shape()) {
      throw ModelError("parameter '" + name + "' shape " + shape_str(dst.shape()) + " vs " + shape_str(src.shape()));
    }
    std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin());
  }
}

enum class Init { kaiming, zeros };

namespace detail {

// He-uniform bound for a leaky-ReLU network.
template <typename T>
BasicTensor<T> init_weight(const Shape& shape, std::size_t fan_in, Rng& rng, Init init) {
  if (init == Init::zeros) return BasicTensor<T>::zeros(shape);
  const double bound = std::sqrt(6.0 / ((1.0 + kLeakySlope * kLeakySlope) * static_cast<double>(fan_in)));
  return BasicTensor<T>::uniform(shape, rng, T(-bound), T(bound));
}

}  // namespace detail

template <typename T>
struct Conv2d {
  BasicTensor<T> weight;
  BasicTensor<T> bias;
  std::size_t stride = 1;
  std::size_t padding = 0;

  /// Same-padding convolution (padding = kernel / 2).
  static Conv2d make(ParameterSet<T>& params, const std::string& name, std::size_t in, std::size_t out,
                     std::size_t kernel, std::size_t stride, Rng& rng, Init init = Init::kaiming) {
    Conv2d c;
    c.weight = params.add(name + ".weight",
                          detail::init_weight<T>(Shape{out, in, kernel, kernel}, in * kernel * kernel, rng, init));
    c.bias = params.add(name + ".bias", BasicTensor<T>::zeros(Shape{out}));
    c.stride = stride;
    c.padding = kernel / 2;
    return c;
  }

  std::size_t out_channels() const { return weight.dim(0); }

  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return conv2d(x, weight, std::optional{bias}, stride, padding); }
};

template <typename T>
struct Linear {
  BasicTensor<T> weight;
  BasicTensor<T> bias;

  static Linear make(ParameterSet<T>& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                     Init init = Init::kaiming) {
    Linear l;
    l.weight = params.add(name + ".weight", detail::init_weight<T>(Shape{out, in}, in, rng, init));
    l.bias = params.add(name + ".bias", BasicTensor<T>::zeros(Shape{out}));
    return l;
  }

  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return linear(x, weight, bias); }
};

template <typename T>
BasicTensor<T> activate(const BasicTensor<T>& x) {
  return leaky_relu(x, T(kLeakySlope));
}

}  // namespace constyle
