#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "constyle/tensor.hpp"

namespace constyle {

/// Additive Gaussian noise, σ in 8-bit units. lo == hi is a fixed level;
/// otherwise σ is drawn uniformly per image from [lo, hi].
struct GaussianNoise {
  double sigma_lo = 25.0;
  double sigma_hi = 25.0;
};

struct GaussianBlur {
  std::size_t kernel = 5;
  double sigma = 1.0;
};

class DegradationSpec {
 public:
  using Stage = std::variant<GaussianNoise, GaussianBlur>;

  DegradationSpec() = default;
  explicit DegradationSpec(std::vector<Stage> stages);

  static DegradationSpec noise(double sigma);
  static DegradationSpec noise_range(double lo, double hi);
  static DegradationSpec blur(std::size_t kernel, double sigma);
  static DegradationSpec compose(const std::vector<DegradationSpec>& parts);

  /// Accepts "25", "0:50", "noise:25", "noise:0:50", "blur:5:1.2", and
  /// '+'-joined sequences of those, applied left to right.
  static DegradationSpec parse(const std::string& text);
  std::string to_string() const;

  const std::vector<Stage>& stages() const { return stages_; }

 private:
  std::vector<Stage> stages_;
};

/// Gaussian kernel of odd size, normalized to sum 1.
std::vector<double> gaussian_kernel(std::size_t size, double sigma);

/// clean: (N,3,H,W) or (3,H,W) in [0,1]. The result is fully determined by seed.
Tensor apply(const DegradationSpec& spec, const Tensor& clean, std::uint64_t seed);
/// Same draws as apply() but without the final clamp, so noise statistics can be measured.
Tensor apply_unclamped(const DegradationSpec& spec, const Tensor& clean, std::uint64_t seed);

struct SamplerConfig {
  std::size_t patch = 128;
  bool augment = true;
  std::uint64_t seed = 0;
};

/// Reads a manifest of image paths (one per line, relative to the manifest's
/// directory; blank lines and lines starting with '#' are skipped).
std::vector<std::filesystem::path> read_manifest(const std::filesystem::path& manifest);

/// Number of worker threads for pair generation: CONSTYLE_THREADS if set, else 1.
std::size_t worker_threads();

class PatchSampler {
 public:
  /// Loads every source eagerly. DataError naming the file if one is smaller than the patch.
  PatchSampler(std::vector<std::filesystem::path> sources, SamplerConfig config);
  PatchSampler(std::vector<Tensor> images, std::vector<std::string> names, SamplerConfig config);

  /// (clean, degraded), each (3,P,P).
  std::pair<Tensor, Tensor> sample_pair(const DegradationSpec& spec);
  /// (clean, degraded), each (B,3,P,P). Identical to B sequential sample_pair calls.
  std::pair<Tensor, Tensor> sample_batch(const DegradationSpec& spec, std::size_t batch);

  /// Restarts the stream at a new seed.
  void reseed(std::uint64_t seed);
  const SamplerConfig& config() const { return config_; }
  std::size_t size() const { return images_.size(); }

 private:
  struct Draw {
    std::size_t image, top, left;
    bool hflip, vflip;
    std::uint64_t degrade_seed;
  };
  Draw next_draw();
  std::pair<Tensor, Tensor> realize(const Draw& draw, const DegradationSpec& spec) const;
  void check_sizes() const;

  SamplerConfig config_;
  std::vector<Tensor> images_;
  std::vector<std::string> names_;
  Rng rng_;
};

}  // namespace constyle
