#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "constyle/tensor.hpp"

namespace constyle {

/// Queue sizes of the full configuration and of the small-queue ablation.
inline constexpr std::size_t kDefaultQueueCapacity = 65760;
inline constexpr std::size_t kSmallQueueCapacity = 16;

/// Batches exposed by a push. `outgoing` (q1) holds the codes evicted by this push;
/// `next_outgoing` (q2) holds the oldest batch-sized block still resident afterwards.
/// Both are absent unless the push evicted something and at least two batches
/// remain resident.
struct PushOutcome {
  std::optional<Tensor64> outgoing;
  std::optional<Tensor64> next_outgoing;
  bool active() const { return outgoing.has_value() && next_outgoing.has_value(); }
};

/// Fixed-capacity FIFO of unit-norm latent codes backed by a ring buffer.
class NegativeQueue {
 public:
  NegativeQueue(std::size_t capacity, std::size_t dim);

  std::size_t capacity() const { return capacity_; }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }
  std::uint64_t total_pushed() const { return total_pushed_; }

  /// Appends the rows of `codes` (B,d), evicting the oldest when full. Rows are
  /// re-normalized in double precision; a row whose norm is off by more than
  /// 1e-3 is rejected.
  template <typename T>
  PushOutcome push(const BasicTensor<T>& codes) {
    check_codes(codes.shape());
    return push_rows(std::vector<double>(codes.data().begin(), codes.data().end()), codes.dim(0));
  }

  /// What a push of `batch` rows would expose, without changing the queue.
  PushOutcome peek_push(std::size_t batch) const;

  /// Resident codes, oldest first, as (size, d).
  Tensor64 snapshot() const;
  /// Resident codes, oldest first, row-major.
  std::vector<double> contents() const;
  /// Replaces the contents (oldest first) and push counter; used by checkpoint restore.
  void restore(const std::vector<double>& rows, std::uint64_t total_pushed);

 private:
  void check_codes(const Shape& shape) const;
  PushOutcome push_rows(std::vector<double> rows, std::size_t batch);
  std::vector<double> rows_at(std::size_t first, std::size_t count) const;  // FIFO-relative

  std::size_t capacity_;
  std::size_t dim_;
  std::vector<double> storage_;
  std::size_t head_ = 0;  // slot of the oldest code
  std::size_t size_ = 0;
  std::uint64_t total_pushed_ = 0;
};

}  // namespace constyle
