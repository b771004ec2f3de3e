#include "constyle/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "constyle/errors.hpp"
#include "constyle/image_io.hpp"

namespace constyle {
namespace {

double smoothstep(double edge, double x) {
  const double t = std::clamp(0.5 - x / edge, 0.0, 1.0);
  return t * t * (3 - 2 * t);
}

}  // namespace

Tensor synthetic_image(std::size_t height, std::size_t width, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double H = static_cast<double>(height), W = static_cast<double>(width);

  std::vector<double> img(3 * height * width);
  double base[3], gx[3], gy[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = 0.2 + 0.6 * u(rng);
    gx[c] = 0.4 * (u(rng) - 0.5);
    gy[c] = 0.4 * (u(rng) - 0.5);
  }
  const double fx = 2 + 4 * u(rng), fy = 2 + 4 * u(rng), phase = 6.28 * u(rng), amp = 0.05 + 0.05 * u(rng);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const double ny = y / H, nx = x / W;
      const double ripple = amp * std::sin(6.2832 * (fx * nx + fy * ny) + phase);
      for (int c = 0; c < 3; ++c) img[(c * height + y) * width + x] = base[c] + gx[c] * (nx - 0.5) + gy[c] * (ny - 0.5) + ripple;
    }

  const int shapes = 4 + static_cast<int>(rng() % 5);
  for (int s = 0; s < shapes; ++s) {
    const bool disc = rng() & 1;
    const double cy = u(rng) * H, cx = u(rng) * W;
    const double ry = (0.08 + 0.2 * u(rng)) * H, rx = (0.08 + 0.2 * u(rng)) * W;
    const double edge = 1.0 + 3.0 * u(rng);
    double colour[3];
    for (double& v : colour) v = u(rng);
    const double alpha = 0.5 + 0.5 * u(rng);
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        const double dy = (y - cy) / ry, dx = (x - cx) / rx;
        // signed distance in pixels, roughly
        const double d = disc ? (std::sqrt(dx * dx + dy * dy) - 1.0) * std::min(rx, ry)
                              : std::max(std::abs(dx) - 1.0, std::abs(dy) - 1.0) * std::min(rx, ry);
        const double cover = alpha * smoothstep(edge, d);
        if (cover <= 0) continue;
        for (int c = 0; c < 3; ++c) {
          double& p = img[(c * height + y) * width + x];
          p = (1 - cover) * p + cover * colour[c];
        }
      }
  }
  std::vector<float> out(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = static_cast<float>(std::clamp(img[i], 0.0, 1.0));
  return Tensor(Shape{3, height, width}, std::move(out));
}

std::filesystem::path write_synthetic_corpus(const std::filesystem::path& dir, std::size_t count, std::size_t height,
                                             std::size_t width, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  const auto manifest = dir / "manifest.txt";
  std::ofstream list(manifest);
  if (!list) throw IoError("cannot write " + manifest.string());
  for (std::size_t i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "img_%03zu.png", i);
    write_png(dir / name, synthetic_image(height, width, seed + i));
    list << name << "\n";
  }
  return manifest;
}

}  // namespace constyle
