#pragma once

#include <optional>
#include <string>

#include "constyle/queue.hpp"
#include "constyle/tensor.hpp"

namespace constyle {

/// Which denominator / positive the contrastive loss uses.
///   moco    - positive logit included in the denominator (default)
///   literal - denominator sums over queue entries only
///   dasr    - moco arithmetic; the caller passes the momentum encoding of the
///             degraded image as the positive
enum class InfoNceConvention { moco, literal, dasr };

/// Distance between gram matrices: mean squared entry difference, or Frobenius norm.
enum class GramDistance { mse, frobenius };

InfoNceConvention parse_info_nce_convention(const std::string& name);
std::string to_string(InfoNceConvention convention);
GramDistance parse_gram_distance(const std::string& name);
std::string to_string(GramDistance distance);

class Temperature {
 public:
  explicit Temperature(double t = 0.07);
  double value() const { return t_; }

 private:
  double t_;
};

/// Batch-averaged gram matrix xᵀx / rows(x) of a (B,d) tensor -> (d,d).
template <typename T>
BasicTensor<T> gram(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> gram_distance(const BasicTensor<T>& a, const BasicTensor<T>& b, GramDistance distance);

/// q, k: (B,d) row-aligned codes; negatives: (N,d). Returns the batch mean.
template <typename T>
BasicTensor<T> info_nce(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& negatives,
                        const Temperature& t, InfoNceConvention convention = InfoNceConvention::moco);

/// Uses the resident queue contents as negatives. Throws StateError on an empty queue.
template <typename T>
BasicTensor<T> info_nce(const BasicTensor<T>& q, const BasicTensor<T>& k, const NegativeQueue& queue,
                        const Temperature& t, InfoNceConvention convention = InfoNceConvention::moco);

/// Distance between G(k) and G(q).
template <typename T>
BasicTensor<T> content_loss(const BasicTensor<T>& q, const BasicTensor<T>& k,
                            GramDistance distance = GramDistance::mse);

template <typename T>
struct StyleLoss {
  BasicTensor<T> value;
  bool active = false;  // false when the queue could not supply q1/q2 yet
};

/// −(dist(G(q1),G(q)) + dist(G(q2),G(q))), optionally clamped below at −clamp.
/// q1/q2 may have fewer rows than q; the gram is averaged over each operand's own rows.
template <typename T>
StyleLoss<T> style_loss(const BasicTensor<T>& q, const std::optional<BasicTensor<T>>& q1,
                        const std::optional<BasicTensor<T>>& q2, GramDistance distance = GramDistance::mse,
                        std::optional<double> clamp = std::nullopt);

}  // namespace constyle
