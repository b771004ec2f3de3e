#pragma once

#include <limits>
#include <string>

#include "json.hpp"

#include "constyle/tensor.hpp"

namespace constyle {

inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

/// 10·log10(1/MSE) over all elements of two same-shape images in [0,1].
/// Identical inputs give kPsnrIdentical.
double psnr(const Tensor& a, const Tensor& b);

/// Mean local SSIM of the channel-mean luma of (C,H,W) images: 11×11 Gaussian
/// window with σ=1.5, K1=0.01, K2=0.03, L=1, averaged over window positions
/// that fit entirely inside the image.
double ssim(const Tensor& a, const Tensor& b);

struct MetricReport {
  std::string name;
  double psnr_db = 0.0;
  double ssim = 0.0;
  std::size_t count = 0;
};

/// Per-image arithmetic means.
class MetricAccumulator {
 public:
  void add(double psnr_db, double ssim_value);
  MetricReport report(const std::string& name) const;
  std::size_t count() const { return count_; }

 private:
  double psnr_sum_ = 0.0;
  double ssim_sum_ = 0.0;
  std::size_t count_ = 0;
};

/// Infinite PSNR is written as the string "inf".
nlohmann::json to_json(const MetricReport& report);
nlohmann::json psnr_json(double psnr_db);

}  // namespace constyle
