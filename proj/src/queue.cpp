#include "constyle/queue.hpp"

#include <algorithm>
#include <cmath>

#include "constyle/errors.hpp"

namespace constyle {

NegativeQueue::NegativeQueue(std::size_t capacity, std::size_t dim) : capacity_(capacity), dim_(dim) {
  if (capacity == 0 || dim == 0) throw ConfigError("queue capacity and code dimension must be positive");
  storage_.assign(capacity_ * dim_, 0.0);
}

void NegativeQueue::check_codes(const Shape& shape) const {
  if (shape.size() != 2 || shape[1] != dim_) {
    throw DimensionError("queue holds codes of dimension " + std::to_string(dim_) + ", got " + shape_str(shape));
  }
  if (shape[0] == 0 || shape[0] > capacity_) {
    throw ContractError("push of " + std::to_string(shape[0]) + " codes into a queue of capacity " +
                        std::to_string(capacity_));
  }
}

std::vector<double> NegativeQueue::rows_at(std::size_t first, std::size_t count) const {
  std::vector<double> out(count * dim_);
  for (std::size_t r = 0; r < count; ++r) {
    const std::size_t slot = (head_ + first + r) % capacity_;
    std::copy_n(storage_.begin() + slot * dim_, dim_, out.begin() + r * dim_);
  }
  return out;
}

PushOutcome NegativeQueue::peek_push(std::size_t batch) const {
  PushOutcome outcome;
  if (batch == 0 || batch > capacity_) return outcome;
  const std::size_t evicted = size_ + batch > capacity_ ? size_ + batch - capacity_ : 0;
  const std::size_t resident_after = std::min(capacity_, size_ + batch);
  if (evicted == 0 || resident_after < 2 * batch) return outcome;
  outcome.outgoing = Tensor64(Shape{evicted, dim_}, rows_at(0, evicted));
  outcome.next_outgoing = Tensor64(Shape{batch, dim_}, rows_at(evicted, batch));
  return outcome;
}

PushOutcome NegativeQueue::push_rows(std::vector<double> rows, std::size_t batch) {
  for (std::size_t r = 0; r < batch; ++r) {
    double* row = rows.data() + r * dim_;
    double sq = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) sq += row[j] * row[j];
    const double norm = std::sqrt(sq);
    if (!(std::abs(norm - 1.0) <= 1e-3)) {
      throw ContractError("queue codes must be unit-norm, row " + std::to_string(r) + " has norm " +
                          std::to_string(norm));
    }
    for (std::size_t j = 0; j < dim_; ++j) row[j] /= norm;
  }

  PushOutcome outcome = peek_push(batch);
  for (std::size_t r = 0; r < batch; ++r) {
    if (size_ == capacity_) {
      head_ = (head_ + 1) % capacity_;
      --size_;
    }
    const std::size_t slot = (head_ + size_) % capacity_;
    std::copy_n(rows.begin() + r * dim_, dim_, storage_.begin() + slot * dim_);
    ++size_;
  }
  total_pushed_ += batch;
  return outcome;
}

Tensor64 NegativeQueue::snapshot() const {
  return Tensor64(Shape{size_, dim_}, rows_at(0, size_));
}

std::vector<double> NegativeQueue::contents() const {
  return rows_at(0, size_);
}

void NegativeQueue::restore(const std::vector<double>& rows, std::uint64_t total_pushed) {
  if (rows.size() % dim_ != 0 || rows.size() / dim_ > capacity_) {
    throw DimensionError("queue restore: " + std::to_string(rows.size()) + " values do not fit capacity " +
                         std::to_string(capacity_) + " x dim " + std::to_string(dim_));
  }
  std::fill(storage_.begin(), storage_.end(), 0.0);
  std::copy(rows.begin(), rows.end(), storage_.begin());
  head_ = 0;
  size_ = rows.size() / dim_;
  total_pushed_ = total_pushed;
}

}  // namespace constyle
