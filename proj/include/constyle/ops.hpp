#pragma once

#include <optional>
#include <type_traits>
#include <vector>

#include "constyle/tensor.hpp"

// Differentiable operators. No broadcasting: operands must agree in shape
// exactly unless an operator states otherwise. Every result is checked for
// NaN/Inf and a DomainError is raised instead of returning it.
namespace constyle {

template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> scale(const BasicTensor<T>& a, T factor);
template <typename T> BasicTensor<T> add_scalar(const BasicTensor<T>& a, T offset);
template <typename T> BasicTensor<T> neg(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> leaky_relu(const BasicTensor<T>& x, T negative_slope);
template <typename T> BasicTensor<T> exp(const BasicTensor<T>& x);
/// Throws DomainError on any non-positive entry.
template <typename T> BasicTensor<T> log(const BasicTensor<T>& x);
/// Elementwise max(x, lo); gradient passes where x > lo.
template <typename T> BasicTensor<T> clamp_min(const BasicTensor<T>& x, T lo);

template <typename T> BasicTensor<T> sum(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> mean(const BasicTensor<T>& x);
/// (N,C,H,W) -> (N,C)
template <typename T> BasicTensor<T> global_avg_pool(const BasicTensor<T>& x);
/// (N,C) -> (N,C,H,W), each channel value repeated over the plane.
template <typename T> BasicTensor<T> broadcast_spatial(const BasicTensor<T>& x, std::size_t height, std::size_t width);
template <typename T> BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, std::size_t axis);
template <typename T> BasicTensor<T> reshape(const BasicTensor<T>& x, const Shape& shape);

/// (d)·(d) -> scalar
template <typename T> BasicTensor<T> dot(const BasicTensor<T>& q, const BasicTensor<T>& k);
/// (m,k)×(k,n) -> (m,n)
template <typename T> BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);
/// (m,n) -> (n,m)
template <typename T> BasicTensor<T> transpose(const BasicTensor<T>& a);
/// Row-wise inner products of two (m,n) tensors -> (m)
template <typename T> BasicTensor<T> row_dot(const BasicTensor<T>& a, const BasicTensor<T>& b);
/// Stable log Σ_j exp(a_ij) per row -> (m)
template <typename T> BasicTensor<T> logsumexp_rows(const BasicTensor<T>& a);
/// Scales each row of an (m,n) tensor to unit L2 norm.
template <typename T> BasicTensor<T> normalize_rows(const BasicTensor<T>& a, T eps = T(1e-12));

/// Mean absolute difference over all elements -> scalar
template <typename T> BasicTensor<T> l1_loss(const BasicTensor<T>& a, const BasicTensor<T>& b);
/// Mean squared difference over all elements -> scalar
template <typename T> BasicTensor<T> mse_loss(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> frobenius_norm(const BasicTensor<T>& x);

/// NCHW input, OIHW weight, optional (O) bias. Square stride and zero padding.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const std::type_identity_t<std::optional<BasicTensor<T>>>& bias, std::size_t stride,
                      std::size_t padding);

/// (N, C·r², H, W) -> (N, C, H·r, W·r)
template <typename T> BasicTensor<T> pixel_shuffle(const BasicTensor<T>& x, std::size_t r);
/// (N, C, H·r, W·r) -> (N, C·r², H, W); out channel c·r²+i·r+j holds spatial offset (i,j).
template <typename T> BasicTensor<T> pixel_unshuffle(const BasicTensor<T>& x, std::size_t r);

/// x (B,in) · Wᵀ (in,out) + b (out)
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias);

}  // namespace constyle
