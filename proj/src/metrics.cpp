#include "constyle/metrics.hpp"

#include <cmath>

#include "constyle/errors.hpp"

namespace constyle {
namespace {

constexpr std::size_t kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

void check_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

std::vector<double> luma(const Tensor& x, std::size_t& h, std::size_t& w) {
  if (x.rank() != 3) throw DimensionError("ssim expects (C,H,W), got " + shape_str(x.shape()));
  const std::size_t c = x.dim(0);
  h = x.dim(1);
  w = x.dim(2);
  std::vector<double> out(h * w, 0.0);
  const auto d = x.data();
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < h * w; ++i) out[i] += d[k * h * w + i];
  for (auto& v : out) v /= static_cast<double>(c);
  return out;
}

// Separable filtering over positions where the whole window fits.
std::vector<double> filter_valid(const std::vector<double>& img, std::size_t h, std::size_t w,
                                 const std::vector<double>& k) {
  const std::size_t n = k.size(), oh = h - n + 1, ow = w - n + 1;
  std::vector<double> rows(h * ow);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0;
      for (std::size_t t = 0; t < n; ++t) acc += k[t] * img[y * w + x + t];
      rows[y * ow + x] = acc;
    }
  std::vector<double> out(oh * ow);
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0;
      for (std::size_t t = 0; t < n; ++t) acc += k[t] * rows[(y + t) * ow + x];
      out[y * ow + x] = acc;
    }
  return out;
}

std::vector<double> window() {
  std::vector<double> k(kWindow);
  double total = 0;
  for (std::size_t i = 0; i < kWindow; ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(kWindow / 2);
    k[i] = std::exp(-0.5 * d * d / (kSigma * kSigma));
    total += k[i];
  }
  for (auto& v : k) v /= total;
  return k;
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b) {
  check_same(a, b, "psnr");
  if (a.numel() == 0) throw DimensionError("psnr of empty images");
  double se = 0;
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - y[i];
    se += d * d;
  }
  if (se == 0.0) return kPsnrIdentical;
  return 10.0 * std::log10(static_cast<double>(x.size()) / se);
}

double ssim(const Tensor& a, const Tensor& b) {
  check_same(a, b, "ssim");
  std::size_t h = 0, w = 0;
  const auto x = luma(a, h, w);
  const auto y = luma(b, h, w);
  if (h < kWindow || w < kWindow) {
    throw DimensionError("ssim needs images of at least " + std::to_string(kWindow) + "x" +
                         std::to_string(kWindow) + ", got " + shape_str(a.shape()));
  }
  const auto k = window();
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = filter_valid(x, h, w, k), my = filter_valid(y, h, w, k);
  const auto mxx = filter_valid(xx, h, w, k), myy = filter_valid(yy, h, w, k), mxy = filter_valid(xy, h, w, k);
  double total = 0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = mxx[i] - mx[i] * mx[i];
    const double vy = myy[i] - my[i] * my[i];
    const double cxy = mxy[i] - mx[i] * my[i];
    const double num = (2 * mx[i] * my[i] + kC1) * (2 * cxy + kC2);
    const double den = (mx[i] * mx[i] + my[i] * my[i] + kC1) * (vx + vy + kC2);
    total += num / den;
  }
  return total / static_cast<double>(mx.size());
}

void MetricAccumulator::add(double psnr_db, double ssim_value) {
  psnr_sum_ += psnr_db;
  ssim_sum_ += ssim_value;
  ++count_;
}

MetricReport MetricAccumulator::report(const std::string& name) const {
  MetricReport r;
  r.name = name;
  r.count = count_;
  if (count_ > 0) {
    r.psnr_db = psnr_sum_ / static_cast<double>(count_);
    r.ssim = ssim_sum_ / static_cast<double>(count_);
  }
  return r;
}

nlohmann::json psnr_json(double psnr_db) {
  if (std::isinf(psnr_db)) return psnr_db > 0 ? "inf" : "-inf";
  return psnr_db;
}

nlohmann::json to_json(const MetricReport& report) {
  return {{"name", report.name}, {"psnr_db", psnr_json(report.psnr_db)}, {"ssim", report.ssim}, {"count", report.count}};
}

}  // namespace constyle
