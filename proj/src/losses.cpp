#include "constyle/losses.hpp"

#include "constyle/errors.hpp"
#include "constyle/ops.hpp"

namespace constyle {

InfoNceConvention parse_info_nce_convention(const std::string& name) {
  if (name == "moco") return InfoNceConvention::moco;
  if (name == "literal") return InfoNceConvention::literal;
  if (name == "dasr") return InfoNceConvention::dasr;
  throw ConfigError("unknown InfoNCE convention '" + name + "' (expected moco, literal or dasr)");
}

std::string to_string(InfoNceConvention convention) {
  switch (convention) {
    case InfoNceConvention::moco: return "moco";
    case InfoNceConvention::literal: return "literal";
    case InfoNceConvention::dasr: return "dasr";
  }
  return "moco";
}

GramDistance parse_gram_distance(const std::string& name) {
  if (name == "mse") return GramDistance::mse;
  if (name == "frobenius") return GramDistance::frobenius;
  throw ConfigError("unknown gram distance '" + name + "' (expected mse or frobenius)");
}

std::string to_string(GramDistance distance) {
  return distance == GramDistance::mse ? "mse" : "frobenius";
}

Temperature::Temperature(double t) : t_(t) {
  if (!(t > 0.0)) throw ConfigError("temperature must be positive, got " + std::to_string(t));
}

template <typename T>
BasicTensor<T> gram(const BasicTensor<T>& x) {
  if (x.rank() != 2 || x.dim(0) == 0) throw DimensionError("gram expects a non-empty (B,d) tensor, got " + shape_str(x.shape()));
  return scale(matmul(transpose(x), x), T(1) / static_cast<T>(x.dim(0)));
}

template <typename T>
BasicTensor<T> gram_distance(const BasicTensor<T>& a, const BasicTensor<T>& b, GramDistance distance) {
  if (distance == GramDistance::mse) return mse_loss(a, b);
  return frobenius_norm(sub(a, b));
}

template <typename T>
BasicTensor<T> info_nce(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& negatives,
                        const Temperature& t, InfoNceConvention convention) {
  if (q.rank() != 2 || q.shape() != k.shape()) {
    throw DimensionError("info_nce: query " + shape_str(q.shape()) + " and key " + shape_str(k.shape()) +
                         " must both be (B,d)");
  }
  if (negatives.rank() != 2 || negatives.dim(1) != q.dim(1)) {
    throw DimensionError("info_nce: negatives " + shape_str(negatives.shape()) + " do not match query " +
                         shape_str(q.shape()));
  }
  if (negatives.dim(0) == 0) throw StateError("info_nce: no negatives");
  const T inv_t = static_cast<T>(1.0 / t.value());
  const std::size_t batch = q.dim(0);
  BasicTensor<T> positive = scale(row_dot(q, k), inv_t);                    // (B)
  BasicTensor<T> negative = scale(matmul(q, transpose(negatives)), inv_t);  // (B,N)
  BasicTensor<T> denominator;
  if (convention == InfoNceConvention::literal) {
    denominator = logsumexp_rows(negative);
  } else {
    denominator = logsumexp_rows(concat<T>({reshape(positive, Shape{batch, 1}), negative}, 1));
  }
  return mean(sub(denominator, positive));
}

template <typename T>
BasicTensor<T> info_nce(const BasicTensor<T>& q, const BasicTensor<T>& k, const NegativeQueue& queue,
                        const Temperature& t, InfoNceConvention convention) {
  if (queue.empty()) throw StateError("info_nce: negative queue is empty");
  return info_nce(q, k, queue.snapshot().template cast<T>(), t, convention);
}

template <typename T>
BasicTensor<T> content_loss(const BasicTensor<T>& q, const BasicTensor<T>& k, GramDistance distance) {
  if (q.shape() != k.shape()) {
    throw DimensionError("content_loss: shape mismatch " + shape_str(q.shape()) + " vs " + shape_str(k.shape()));
  }
  return gram_distance(gram(k), gram(q), distance);
}

template <typename T>
StyleLoss<T> style_loss(const BasicTensor<T>& q, const std::optional<BasicTensor<T>>& q1,
                        const std::optional<BasicTensor<T>>& q2, GramDistance distance, std::optional<double> clamp) {
  if (!q1 || !q2) return {BasicTensor<T>::scalar(T(0)), false};
  for (const auto* other : {&*q1, &*q2}) {
    if (other->rank() != 2 || q.rank() != 2 || other->dim(1) != q.dim(1)) {
      throw DimensionError("style_loss: code shapes " + shape_str(q.shape()) + " and " + shape_str(other->shape()) +
                           " disagree");
    }
  }
  const BasicTensor<T> gq = gram(q);
  BasicTensor<T> value = neg(add(gram_distance(gram(*q1), gq, distance), gram_distance(gram(*q2), gq, distance)));
  if (clamp) value = clamp_min(value, static_cast<T>(-*clamp));
  return {value, true};
}

#define CONSTYLE_INSTANTIATE_LOSSES(T)                                                                          \
  template BasicTensor<T> gram(const BasicTensor<T>&);                                                          \
  template BasicTensor<T> gram_distance(const BasicTensor<T>&, const BasicTensor<T>&, GramDistance);            \
  template BasicTensor<T> info_nce(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,         \
                                   const Temperature&, InfoNceConvention);                                      \
  template BasicTensor<T> info_nce(const BasicTensor<T>&, const BasicTensor<T>&, const NegativeQueue&,          \
                                   const Temperature&, InfoNceConvention);                                      \
  template BasicTensor<T> content_loss(const BasicTensor<T>&, const BasicTensor<T>&, GramDistance);             \
  template StyleLoss<T> style_loss(const BasicTensor<T>&, const std::optional<BasicTensor<T>>&,                 \
                                   const std::optional<BasicTensor<T>>&, GramDistance, std::optional<double>);

CONSTYLE_INSTANTIATE_LOSSES(float)
CONSTYLE_INSTANTIATE_LOSSES(double)

}  // namespace constyle
