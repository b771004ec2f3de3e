#include "constyle/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "constyle/errors.hpp"

namespace constyle {

namespace {

template <typename T>
using Node = detail::Node<T>;
template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

template <typename T>
BasicTensor<T> make_result(const char* op, Shape shape, std::vector<T> values,
                           const std::vector<BasicTensor<T>>& inputs,
                           std::function<void(Node<T>&)> backward_fn) {
  for (const T v : values) {
    if (!std::isfinite(v)) throw DomainError(std::string(op) + " produced a non-finite value");
  }
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->op = op;
  if (GradMode::enabled()) {
    bool any = std::any_of(inputs.begin(), inputs.end(), [](const auto& t) { return t.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      for (const auto& in : inputs) node->parents.push_back(in.node());
      node->backward_fn = std::move(backward_fn);
    }
  }
  return BasicTensor<T>::from_node(std::move(node));
}

template <typename T>
BasicTensor<T> make_result(const char* op, Shape shape, std::vector<T> values,
                           std::initializer_list<const BasicTensor<T>*> inputs,
                           std::function<void(Node<T>&)> backward_fn) {
  std::vector<BasicTensor<T>> list;
  list.reserve(inputs.size());
  for (const auto* in : inputs) list.push_back(*in);
  return make_result<T>(op, std::move(shape), std::move(values), list, std::move(backward_fn));
}

template <typename T>
void require_same_shape(const char* op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <typename T>
void require_rank(const char* op, const BasicTensor<T>& a, std::size_t rank) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_str(a.shape()));
  }
}

}  // namespace

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("add", a, b);
  const auto as = a.data(), bs = b.data();
  std::vector<T> out(as.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] + bs[i];
  return make_result<T>("add", a.shape(), std::move(out), {&a, &b}, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (T* g = p->grad_sink()) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("sub", a, b);
  const auto as = a.data(), bs = b.data();
  std::vector<T> out(as.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] - bs[i];
  return make_result<T>("sub", a.shape(), std::move(out), {&a, &b}, [](Node<T>& self) {
    if (T* g = self.parents[0]->grad_sink()) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (T* g = self.parents[1]->grad_sink()) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("mul", a, b);
  const auto as = a.data(), bs = b.data();
  std::vector<T> out(as.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] * bs[i];
  return make_result<T>("mul", a.shape(), std::move(out), {&a, &b}, [](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (T* g = self.parents[0]->grad_sink()) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (T* g = self.parents[1]->grad_sink()) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  const auto as = a.data();
  std::vector<T> out(as.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] * factor;
  return make_result<T>("scale", a.shape(), std::move(out), {&a}, [factor](Node<T>& self) {
    if (T* g = self.parents[0]->grad_sink()) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * factor;
    }
  });
}

template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& a, T offset) {
  const auto as = a.data();
  std::vector<T> out(as.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] + offset;
  return make_result<T>("add_scalar", a.shape(), std::move(out), {&a}, [](Node<T>& self) {
    if (T* g = self.parents[0]->grad_sink()) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> neg(const BasicTensor<T>& a) {
  return scale(a, T(-1));
}

template <typename T>
BasicTensor<T> leaky_relu(const BasicTensor<T>& x, T negative_slope) {
  const auto xs = x.data();
  std::vector<T> out(xs.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xs[i] > T(0) ? xs[i] : xs[i] * negative_slope;
  return make_result<T>("leaky_relu", x.shape(), std::move(out), {&x}, [negative_slope](Node<T>& self) {
    const auto& xv = self.parents[0]->value;
    if (T* g = self.parents[0]->grad_sink()) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        g[i] += xv[i] > T(0) ? self.grad[i] : self.grad[i] * negative_slope;
      }
    }
  });
}

template <typename T>
BasicTensor<T> exp(const BasicTensor<T>& x) {
  const auto xs = x.data();
  std::vector<T> out(xs.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(xs[i]);
  return make_result<T>("exp", x.shape(), std::move(out), {&x}, [](Node<T>& self) {
    if (T* g = self.parents[0]->grad_sink()) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * self.value[i];
    }
  });
}

template <typename T>
BasicTensor<T> log(const BasicTensor<T>& x) {
  const auto xs = x.data();
  std::vector<T> out(xs.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(xs[i] > T(0))) throw DomainError("log of non-positive value " + std::to_string(xs[i]));
    out[i] = std::log(xs[i]);
  }
  return make_result<T>("log", x.shape(), std::move(out), {&x}, [](Node<T>& self) {
    const auto& xv = self.parents[0]->value;
    if (T* g = self.parents[0]->grad_sink()) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] / xv[i];
    }
  });
}

template <typename T>
BasicTensor<T> clamp_min(const BasicTensor<T>& x, T lo) {
  const auto xs = x.data();
  std::vector<T> out(xs.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(xs[i], lo);
  return make_result<T>("clamp_min", x.shape(), std::move(out), {&x}, [lo](Node<T>& self) {
    const auto& xv = self.parents[0]->value;
    if (T* g = self.parents[0]->grad_sink()) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        if (xv[i] > lo) g[i] += self.grad[i];
      }
    }
  });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  const auto xs = x.data();
  const T total = std::accumulate(xs.begin(), xs.end(), T(0));
  return make_result<T>("sum", Shape{}, {total}, {&x}, [](Node<T>& self) {
    if (T* g = self.parents[0]->grad_sink()) {
      const std::size_t n = self.parents[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  const auto xs = x.data();
  if (xs.empty()) throw DimensionError("mean of empty tensor");
  const T n = static_cast<T>(xs.size());
  const T total = std::accumulate(xs.begin(), xs.end(), T(0));
  return make_result<T>("mean", Shape{}, {total / n}, {&x}, [n](Node<T>& self) {
    if (T* g = self.parents[0]->grad_sink()) {
      const std::size_t count = self.parents[0]->value.size();
      const T gi = self.grad[0] / n;
      for (std::size_t i = 0; i < count; ++i) g[i] += gi;
    }
  });
}

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x) {
  require_rank("global_avg_pool", x, 4);
  const std::size_t nc = x.dim(0) * x.dim(1);
  const std::size_t plane = x.dim(2) * x.dim(3);
  const auto xs = x.data();
  std::vector<T> out(nc);
  for (std::size_t i = 0; i < nc; ++i) {
    T acc = 0;
    for (std::size_t p = 0; p < plane; ++p) acc += xs[i * plane + p];
    out[i] = acc / static_cast<T>(plane);
  }
  return make_result<T>("global_avg_pool", Shape{x.dim(0), x.dim(1)}, std::move(out), {&x},
                        [nc, plane](Node<T>& self) {
                          if (T* g = self.parents[0]->grad_sink()) {
                            for (std::size_t i = 0; i < nc; ++i) {
                              const T gi = self.grad[i] / static_cast<T>(plane);
                              for (std::size_t p = 0; p < plane; ++p) g[i * plane + p] += gi;
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> broadcast_spatial(const BasicTensor<T>& x, std::size_t height, std::size_t width) {
  require_rank("broadcast_spatial", x, 2);
  const std::size_t nc = x.dim(0) * x.dim(1);
  const std::size_t plane = height * width;
  const auto xs = x.data();
  std::vector<T> out(nc * plane);
  for (std::size_t i = 0; i < nc; ++i) std::fill_n(out.begin() + i * plane, plane, xs[i]);
  return make_result<T>("broadcast_spatial", Shape{x.dim(0), x.dim(1), height, width}, std::move(out), {&x},
                        [nc, plane](Node<T>& self) {
                          if (T* g = self.parents[0]->grad_sink()) {
                            for (std::size_t i = 0; i < nc; ++i) {
                              T acc = 0;
                              for (std::size_t p = 0; p < plane; ++p) acc += self.grad[i * plane + p];
                              g[i] += acc;
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw DimensionError("concat axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) throw DimensionError("concat: shape mismatch " + shape_str(first) + " vs " + shape_str(s));
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];

  std::vector<std::size_t> chunk(parts.size());
  for (std::size_t i = 0; i < parts.size(); ++i) chunk[i] = parts[i].dim(axis) * inner;
  const std::size_t row = out_shape[axis] * inner;

  std::vector<T> out(shape_numel(out_shape));
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t offset = o * row;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const auto ps = parts[i].data();
      std::copy_n(ps.begin() + o * chunk[i], chunk[i], out.begin() + offset);
      offset += chunk[i];
    }
  }
  return make_result<T>("concat", out_shape, std::move(out), parts, [outer, chunk, row](Node<T>& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      T* g = self.parents[i]->grad_sink();
      if (!g) continue;
      std::size_t start = 0;
      for (std::size_t j = 0; j < i; ++j) start += chunk[j];
      for (std::size_t o = 0; o < outer; ++o) {
        const T* src = self.grad.data() + o * row + start;
        T* dst = g + o * chunk[i];
        for (std::size_t e = 0; e < chunk[i]; ++e) dst[e] += src[e];
      }
    }
  });
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, const Shape& shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  const auto xs = x.data();
  return make_result<T>("reshape", shape, std::vector<T>(xs.begin(), xs.end()), {&x}, [](Node<T>& self) {
    if (T* g = self.parents[0]->grad_sink()) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> dot(const BasicTensor<T>& q, const BasicTensor<T>& k) {
  require_rank("dot", q, 1);
  require_same_shape("dot", q, k);
  const auto qs = q.data(), ks = k.data();
  const T value = std::inner_product(qs.begin(), qs.end(), ks.begin(), T(0));
  return make_result<T>("dot", Shape{}, {value}, {&q, &k}, [](Node<T>& self) {
    const auto& qv = self.parents[0]->value;
    const auto& kv = self.parents[1]->value;
    const T g0 = self.grad[0];
    if (T* g = self.parents[0]->grad_sink()) {
      for (std::size_t i = 0; i < qv.size(); ++i) g[i] += g0 * kv[i];
    }
    if (T* g = self.parents[1]->grad_sink()) {
      for (std::size_t i = 0; i < kv.size(); ++i) g[i] += g0 * qv[i];
    }
  });
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n);
  MapR<T>(out.data(), m, n).noalias() = CMapR<T>(a.data().data(), m, k) * CMapR<T>(b.data().data(), k, n);
  return make_result<T>("matmul", Shape{m, n}, std::move(out), {&a, &b}, [m, k, n](Node<T>& self) {
    CMapR<T> gc(self.grad.data(), m, n);
    if (T* g = self.parents[0]->grad_sink()) {
      MapR<T>(g, m, k).noalias() += gc * CMapR<T>(self.parents[1]->value.data(), k, n).transpose();
    }
    if (T* g = self.parents[1]->grad_sink()) {
      MapR<T>(g, k, n).noalias() += CMapR<T>(self.parents[0]->value.data(), m, k).transpose() * gc;
    }
  });
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
  require_rank("transpose", a, 2);
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<T> out(m * n);
  MapR<T>(out.data(), n, m) = CMapR<T>(a.data().data(), m, n).transpose();
  return make_result<T>("transpose", Shape{n, m}, std::move(out), {&a}, [m, n](Node<T>& self) {
    if (T* g = self.parents[0]->grad_sink()) {
      MapR<T>(g, m, n) += CMapR<T>(self.grad.data(), n, m).transpose();
    }
  });
}

template <typename T>
BasicTensor<T> row_dot(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank("row_dot", a, 2);
  require_same_shape("row_dot", a, b);
  const std::size_t m = a.dim(0), n = a.dim(1);
  const auto as = a.data(), bs = b.data();
  std::vector<T> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    T acc = 0;
    for (std::size_t j = 0; j < n; ++j) acc += as[i * n + j] * bs[i * n + j];
    out[i] = acc;
  }
  return make_result<T>("row_dot", Shape{m}, std::move(out), {&a, &b}, [m, n](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (T* g = self.parents[0]->grad_sink()) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i] * bv[i * n + j];
    }
    if (T* g = self.parents[1]->grad_sink()) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i] * av[i * n + j];
    }
  });
}

template <typename T>
BasicTensor<T> logsumexp_rows(const BasicTensor<T>& a) {
  require_rank("logsumexp_rows", a, 2);
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (n == 0) throw DimensionError("logsumexp_rows over zero columns");
  const auto as = a.data();
  std::vector<T> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = as.data() + i * n;
    const T hi = *std::max_element(row, row + n);
    T acc = 0;
    for (std::size_t j = 0; j < n; ++j) acc += std::exp(row[j] - hi);
    out[i] = hi + std::log(acc);
  }
  return make_result<T>("logsumexp_rows", Shape{m}, std::move(out), {&a}, [m, n](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    if (T* g = self.parents[0]->grad_sink()) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          g[i * n + j] += self.grad[i] * std::exp(av[i * n + j] - self.value[i]);
        }
      }
    }
  });
}

template <typename T>
BasicTensor<T> normalize_rows(const BasicTensor<T>& a, T eps) {
  require_rank("normalize_rows", a, 2);
  const std::size_t m = a.dim(0), n = a.dim(1);
  const auto as = a.data();
  std::vector<T> out(m * n);
  std::vector<T> norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    T sq = 0;
    for (std::size_t j = 0; j < n; ++j) sq += as[i * n + j] * as[i * n + j];
    norms[i] = std::max(std::sqrt(sq), eps);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = as[i * n + j] / norms[i];
  }
  return make_result<T>("normalize_rows", Shape{m, n}, std::move(out), {&a},
                        [m, n, norms = std::move(norms)](Node<T>& self) {
                          T* g = self.parents[0]->grad_sink();
                          if (!g) return;
                          for (std::size_t i = 0; i < m; ++i) {
                            const T* y = self.value.data() + i * n;
                            const T* gy = self.grad.data() + i * n;
                            T proj = 0;
                            for (std::size_t j = 0; j < n; ++j) proj += y[j] * gy[j];
                            for (std::size_t j = 0; j < n; ++j) g[i * n + j] += (gy[j] - y[j] * proj) / norms[i];
                          }
                        });
}

template <typename T>
BasicTensor<T> l1_loss(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("l1_loss", a, b);
  const auto as = a.data(), bs = b.data();
  if (as.empty()) throw DimensionError("l1_loss of empty tensors");
  T acc = 0;
  for (std::size_t i = 0; i < as.size(); ++i) acc += std::abs(as[i] - bs[i]);
  const T n = static_cast<T>(as.size());
  return make_result<T>("l1_loss", Shape{}, {acc / n}, {&a, &b}, [n](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    const T g0 = self.grad[0] / n;
    T* ga = self.parents[0]->grad_sink();
    T* gb = self.parents[1]->grad_sink();
    for (std::size_t i = 0; i < av.size(); ++i) {
      const T d = av[i] - bv[i];
      const T s = d > T(0) ? g0 : (d < T(0) ? -g0 : T(0));
      if (ga) ga[i] += s;
      if (gb) gb[i] -= s;
    }
  });
}

template <typename T>
BasicTensor<T> mse_loss(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("mse_loss", a, b);
  const auto as = a.data(), bs = b.data();
  if (as.empty()) throw DimensionError("mse_loss of empty tensors");
  T acc = 0;
  for (std::size_t i = 0; i < as.size(); ++i) acc += (as[i] - bs[i]) * (as[i] - bs[i]);
  const T n = static_cast<T>(as.size());
  return make_result<T>("mse_loss", Shape{}, {acc / n}, {&a, &b}, [n](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    const T g0 = T(2) * self.grad[0] / n;
    T* ga = self.parents[0]->grad_sink();
    T* gb = self.parents[1]->grad_sink();
    for (std::size_t i = 0; i < av.size(); ++i) {
      const T d = (av[i] - bv[i]) * g0;
      if (ga) ga[i] += d;
      if (gb) gb[i] -= d;
    }
  });
}

template <typename T>
BasicTensor<T> frobenius_norm(const BasicTensor<T>& x) {
  const auto xs = x.data();
  T sq = 0;
  for (const T v : xs) sq += v * v;
  const T norm = std::sqrt(sq);
  return make_result<T>("frobenius_norm", Shape{}, {norm}, {&x}, [norm](Node<T>& self) {
    if (norm == T(0)) return;
    const auto& xv = self.parents[0]->value;
    if (T* g = self.parents[0]->grad_sink()) {
      for (std::size_t i = 0; i < xv.size(); ++i) g[i] += self.grad[0] * xv[i] / norm;
    }
  });
}

namespace {

struct ConvGeometry {
  std::size_t n, c, h, w, o, k, stride, pad, ho, wo;
  std::size_t col_rows() const { return c * k * k; }
  std::size_t col_cols() const { return ho * wo; }
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

// Output columns [lo, hi) whose input column ow*stride + kj - pad falls inside [0, w).
struct ColumnRange {
  std::size_t lo, hi;
};

inline ColumnRange valid_columns(const ConvGeometry& g, std::size_t kj) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(g.pad) - static_cast<std::ptrdiff_t>(kj);
  const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(g.stride);
  std::ptrdiff_t lo = pad > 0 ? (pad + s - 1) / s : 0;
  // largest ow with ow*s - pad <= w-1
  std::ptrdiff_t hi = (static_cast<std::ptrdiff_t>(g.w) - 1 + pad) / s + 1;
  hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(g.wo));
  if (hi < lo) hi = lo;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        T* dst = col + ((c * g.k + ki) * g.k + kj) * g.col_cols();
        const ColumnRange r = valid_columns(g, kj);
        const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kj) - static_cast<std::ptrdiff_t>(g.pad);
        for (std::size_t oh = 0; oh < g.ho; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          T* out_row = dst + oh * g.wo;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill_n(out_row, g.wo, T(0));
            continue;
          }
          const T* in_row = x + (c * g.h + static_cast<std::size_t>(ih)) * g.w;
          std::fill_n(out_row, r.lo, T(0));
          if (g.stride == 1) {
            std::copy_n(in_row + (static_cast<std::ptrdiff_t>(r.lo) + shift), r.hi - r.lo, out_row + r.lo);
          } else {
            for (std::size_t ow = r.lo; ow < r.hi; ++ow) out_row[ow] = in_row[static_cast<std::ptrdiff_t>(ow * g.stride) + shift];
          }
          std::fill(out_row + r.hi, out_row + g.wo, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* x) {
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const T* src = col + ((c * g.k + ki) * g.k + kj) * g.col_cols();
        const ColumnRange r = valid_columns(g, kj);
        const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kj) - static_cast<std::ptrdiff_t>(g.pad);
        for (std::size_t oh = 0; oh < g.ho; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) continue;
          T* in_row = x + (c * g.h + static_cast<std::size_t>(ih)) * g.w;
          const T* col_row = src + oh * g.wo;
          for (std::size_t ow = r.lo; ow < r.hi; ++ow) in_row[static_cast<std::ptrdiff_t>(ow * g.stride) + shift] += col_row[ow];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const std::type_identity_t<std::optional<BasicTensor<T>>>& bias, std::size_t stride,
                      std::size_t padding) {
  require_rank("conv2d input", input, 4);
  require_rank("conv2d weight", weight, 4);
  if (stride < 1) throw ContractError("conv2d: stride must be >= 1");
  if (input.dim(1) != weight.dim(1)) {
    throw DimensionError("conv2d: input " + shape_str(input.shape()) + " has " + std::to_string(input.dim(1)) +
                         " channels but weight " + shape_str(weight.shape()) + " expects " +
                         std::to_string(weight.dim(1)));
  }
  if (weight.dim(2) != weight.dim(3)) {
    throw DimensionError("conv2d: non-square kernel " + shape_str(weight.shape()));
  }
  ConvGeometry g{};
  g.n = input.dim(0);
  g.c = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.o = weight.dim(0);
  g.k = weight.dim(2);
  g.stride = stride;
  g.pad = padding;
  if (g.h + 2 * padding < g.k || g.w + 2 * padding < g.k) {
    throw DimensionError("conv2d: kernel " + shape_str(weight.shape()) + " larger than padded input " +
                         shape_str(input.shape()));
  }
  g.ho = (g.h + 2 * padding - g.k) / stride + 1;
  g.wo = (g.w + 2 * padding - g.k) / stride + 1;
  if (bias && bias->shape() != Shape{g.o}) {
    throw DimensionError("conv2d: bias " + shape_str(bias->shape()) + " does not match weight " +
                         shape_str(weight.shape()));
  }

  const std::size_t in_plane = g.c * g.h * g.w;
  const std::size_t out_plane = g.o * g.ho * g.wo;
  std::vector<T> out(g.n * out_plane);
  std::vector<T> col(g.pointwise() ? 0 : g.col_rows() * g.col_cols());
  CMapR<T> wmat(weight.data().data(), g.o, g.col_rows());
  const T* xs = input.data().data();
  for (std::size_t n = 0; n < g.n; ++n) {
    const T* colp = xs + n * in_plane;
    if (!g.pointwise()) {
      im2col(colp, g, col.data());
      colp = col.data();
    }
    MapR<T> y(out.data() + n * out_plane, g.o, g.col_cols());
    y.noalias() = wmat * CMapR<T>(colp, g.col_rows(), g.col_cols());
    if (bias) {
      const auto bs = bias->data();
      for (std::size_t o = 0; o < g.o; ++o) y.row(o).array() += bs[o];
    }
  }

  auto backward_fn = [g, in_plane, out_plane](Node<T>& self) {
    const auto& xv = self.parents[0]->value;
    const auto& wv = self.parents[1]->value;
    T* gx = self.parents[0]->grad_sink();
    T* gw = self.parents[1]->grad_sink();
    T* gb = self.parents.size() > 2 ? self.parents[2]->grad_sink() : nullptr;
    std::vector<T> col(g.pointwise() || !gw ? 0 : g.col_rows() * g.col_cols());
    std::vector<T> gcol(g.pointwise() || !gx ? 0 : g.col_rows() * g.col_cols());
    CMapR<T> wmat(wv.data(), g.o, g.col_rows());
    for (std::size_t n = 0; n < g.n; ++n) {
      CMapR<T> gy(self.grad.data() + n * out_plane, g.o, g.col_cols());
      if (gb) {
        // Plain loop: Eigen's vectorized sum order depends on buffer alignment.
        const T* gyp = self.grad.data() + n * out_plane;
        for (std::size_t o = 0; o < g.o; ++o) {
          T acc = 0;
          for (std::size_t i = 0; i < g.col_cols(); ++i) acc += gyp[o * g.col_cols() + i];
          gb[o] += acc;
        }
      }
      if (gw) {
        const T* colp = xv.data() + n * in_plane;
        if (!g.pointwise()) {
          im2col(colp, g, col.data());
          colp = col.data();
        }
        MapR<T>(gw, g.o, g.col_rows()).noalias() += gy * CMapR<T>(colp, g.col_rows(), g.col_cols()).transpose();
      }
      if (gx) {
        if (g.pointwise()) {
          MapR<T>(gx + n * in_plane, g.col_rows(), g.col_cols()).noalias() += wmat.transpose() * gy;
        } else {
          MapR<T>(gcol.data(), g.col_rows(), g.col_cols()).noalias() = wmat.transpose() * gy;
          col2im_add(gcol.data(), g, gx + n * in_plane);
        }
      }
    }
  };
  Shape out_shape{g.n, g.o, g.ho, g.wo};
  if (bias) {
    return make_result<T>("conv2d", out_shape, std::move(out), {&input, &weight, &*bias}, backward_fn);
  }
  return make_result<T>("conv2d", out_shape, std::move(out), {&input, &weight}, backward_fn);
}

template <typename T>
BasicTensor<T> pixel_shuffle(const BasicTensor<T>& x, std::size_t r) {
  require_rank("pixel_shuffle", x, 4);
  if (r == 0 || x.dim(1) % (r * r) != 0) {
    throw DimensionError("pixel_shuffle: channels of " + shape_str(x.shape()) + " not divisible by r^2=" +
                         std::to_string(r * r));
  }
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t c = cin / (r * r);
  // index[dst] = src
  std::vector<std::size_t> index(x.numel());
  std::size_t dst = 0;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t oh = 0; oh < h * r; ++oh)
        for (std::size_t ow = 0; ow < w * r; ++ow) {
          const std::size_t sc = ch * r * r + (oh % r) * r + (ow % r);
          index[dst++] = ((b * cin + sc) * h + oh / r) * w + ow / r;
        }
  const auto xs = x.data();
  std::vector<T> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) out[i] = xs[index[i]];
  return make_result<T>("pixel_shuffle", Shape{n, c, h * r, w * r}, std::move(out), {&x},
                        [index = std::move(index)](Node<T>& self) {
                          if (T* g = self.parents[0]->grad_sink()) {
                            for (std::size_t i = 0; i < index.size(); ++i) g[index[i]] += self.grad[i];
                          }
                        });
}

template <typename T>
BasicTensor<T> pixel_unshuffle(const BasicTensor<T>& x, std::size_t r) {
  require_rank("pixel_unshuffle", x, 4);
  if (r == 0 || x.dim(2) % r != 0 || x.dim(3) % r != 0) {
    throw DimensionError("pixel_unshuffle: spatial dims of " + shape_str(x.shape()) + " not divisible by r=" +
                         std::to_string(r));
  }
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2) / r, w = x.dim(3) / r;
  const std::size_t cout = c * r * r;
  std::vector<std::size_t> index(x.numel());
  std::size_t dst = 0;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oc = 0; oc < cout; ++oc) {
      const std::size_t ch = oc / (r * r), i = (oc / r) % r, j = oc % r;
      for (std::size_t oh = 0; oh < h; ++oh)
        for (std::size_t ow = 0; ow < w; ++ow) {
          index[dst++] = ((b * c + ch) * (h * r) + oh * r + i) * (w * r) + ow * r + j;
        }
    }
  const auto xs = x.data();
  std::vector<T> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) out[i] = xs[index[i]];
  return make_result<T>("pixel_unshuffle", Shape{n, cout, h, w}, std::move(out), {&x},
                        [index = std::move(index)](Node<T>& self) {
                          if (T* g = self.parents[0]->grad_sink()) {
                            for (std::size_t i = 0; i < index.size(); ++i) g[index[i]] += self.grad[i];
                          }
                        });
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias) {
  require_rank("linear input", x, 2);
  require_rank("linear weight", weight, 2);
  if (x.dim(1) != weight.dim(1) || bias.shape() != Shape{weight.dim(0)}) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + ", weight " + shape_str(weight.shape()) +
                         ", bias " + shape_str(bias.shape()) + " do not agree");
  }
  const std::size_t b = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  std::vector<T> out(b * out_dim);
  MapR<T> y(out.data(), b, out_dim);
  y.noalias() = CMapR<T>(x.data().data(), b, in) * CMapR<T>(weight.data().data(), out_dim, in).transpose();
  const auto bs = bias.data();
  for (std::size_t r = 0; r < b; ++r)
    for (std::size_t o = 0; o < out_dim; ++o) y(r, o) += bs[o];
  return make_result<T>("linear", Shape{b, out_dim}, std::move(out), {&x, &weight, &bias},
                        [b, in, out_dim](Node<T>& self) {
                          CMapR<T> gy(self.grad.data(), b, out_dim);
                          if (T* g = self.parents[0]->grad_sink()) {
                            MapR<T>(g, b, in).noalias() += gy * CMapR<T>(self.parents[1]->value.data(), out_dim, in);
                          }
                          if (T* g = self.parents[1]->grad_sink()) {
                            MapR<T>(g, out_dim, in).noalias() +=
                                gy.transpose() * CMapR<T>(self.parents[0]->value.data(), b, in);
                          }
                          if (T* g = self.parents[2]->grad_sink()) {
                            for (std::size_t r = 0; r < b; ++r)
                              for (std::size_t o = 0; o < out_dim; ++o) g[o] += gy(r, o);
                          }
                        });
}

#define CONSTYLE_INSTANTIATE_OPS(T)                                                                       \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                              \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                              \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                              \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                                \
  template BasicTensor<T> add_scalar(const BasicTensor<T>&, T);                                           \
  template BasicTensor<T> neg(const BasicTensor<T>&);                                                     \
  template BasicTensor<T> leaky_relu(const BasicTensor<T>&, T);                                           \
  template BasicTensor<T> exp(const BasicTensor<T>&);                                                     \
  template BasicTensor<T> log(const BasicTensor<T>&);                                                     \
  template BasicTensor<T> clamp_min(const BasicTensor<T>&, T);                                            \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                                     \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                                    \
  template BasicTensor<T> global_avg_pool(const BasicTensor<T>&);                                         \
  template BasicTensor<T> broadcast_spatial(const BasicTensor<T>&, std::size_t, std::size_t);             \
  template BasicTensor<T> concat(const std::vector<BasicTensor<T>>&, std::size_t);                        \
  template BasicTensor<T> reshape(const BasicTensor<T>&, const Shape&);                                   \
  template BasicTensor<T> dot(const BasicTensor<T>&, const BasicTensor<T>&);                              \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                           \
  template BasicTensor<T> transpose(const BasicTensor<T>&);                                               \
  template BasicTensor<T> row_dot(const BasicTensor<T>&, const BasicTensor<T>&);                          \
  template BasicTensor<T> logsumexp_rows(const BasicTensor<T>&);                                          \
  template BasicTensor<T> normalize_rows(const BasicTensor<T>&, T);                                       \
  template BasicTensor<T> l1_loss(const BasicTensor<T>&, const BasicTensor<T>&);                          \
  template BasicTensor<T> mse_loss(const BasicTensor<T>&, const BasicTensor<T>&);                         \
  template BasicTensor<T> frobenius_norm(const BasicTensor<T>&);                                          \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&,                            \
                                 const std::optional<BasicTensor<T>>&, std::size_t, std::size_t);         \
  template BasicTensor<T> pixel_shuffle(const BasicTensor<T>&, std::size_t);                              \
  template BasicTensor<T> pixel_unshuffle(const BasicTensor<T>&, std::size_t);                            \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);

CONSTYLE_INSTANTIATE_OPS(float)
CONSTYLE_INSTANTIATE_OPS(double)

#undef CONSTYLE_INSTANTIATE_OPS

}  // namespace constyle
