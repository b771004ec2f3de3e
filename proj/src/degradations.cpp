#include "constyle/degradations.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "constyle/errors.hpp"
#include "constyle/image_io.hpp"

namespace constyle {
namespace {

void check_sigma(double sigma) {
  if (!(sigma >= 0.0 && sigma <= 50.0)) {
    throw ConfigError("noise sigma must lie in [0,50], got " + std::to_string(sigma));
  }
}

void check_stage(const DegradationSpec::Stage& stage) {
  if (const auto* n = std::get_if<GaussianNoise>(&stage)) {
    check_sigma(n->sigma_lo);
    check_sigma(n->sigma_hi);
    if (n->sigma_lo > n->sigma_hi) throw ConfigError("noise sigma range is reversed");
  } else {
    const auto& b = std::get<GaussianBlur>(stage);
    if (b.kernel < 3 || b.kernel % 2 == 0) {
      throw ConfigError("blur kernel must be odd and >= 3, got " + std::to_string(b.kernel));
    }
    if (!(b.sigma > 0.0)) throw ConfigError("blur sigma must be positive");
  }
}

double parse_number(const std::string& s, const std::string& whole) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::logic_error&) {
    throw ConfigError("cannot parse degradation '" + whole + "'");
  }
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, sep)) parts.push_back(item);
  return parts;
}

std::string format_number(double v) {
  std::ostringstream out;
  out << v;
  return out.str();
}

// numpy/PyTorch "reflect": the edge sample is not repeated.
std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const std::ptrdiff_t period = 2 * static_cast<std::ptrdiff_t>(n) - 2;
  i = ((i % period) + period) % period;
  return static_cast<std::size_t>(i < static_cast<std::ptrdiff_t>(n) ? i : period - i);
}

void blur_plane(double* plane, std::size_t h, std::size_t w, const std::vector<double>& k) {
  const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(k.size() / 2);
  std::vector<double> tmp(h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0;
      for (std::ptrdiff_t t = -r; t <= r; ++t) acc += k[t + r] * plane[y * w + reflect(std::ptrdiff_t(x) + t, w)];
      tmp[y * w + x] = acc;
    }
  }
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0;
      for (std::ptrdiff_t t = -r; t <= r; ++t) acc += k[t + r] * tmp[reflect(std::ptrdiff_t(y) + t, h) * w + x];
      plane[y * w + x] = acc;
    }
  }
}

Tensor degrade(const DegradationSpec& spec, const Tensor& clean, std::uint64_t seed, bool clamp) {
  const bool batched = clean.rank() == 4;
  if (!(batched || clean.rank() == 3) || clean.dim(batched ? 1 : 0) != 3) {
    throw DimensionError("degradation expects (N,3,H,W) or (3,H,W), got " + shape_str(clean.shape()));
  }
  const std::size_t n = batched ? clean.dim(0) : 1;
  const std::size_t h = clean.dim(batched ? 2 : 1), w = clean.dim(batched ? 3 : 2);
  const std::size_t image = 3 * h * w;
  for (float v : clean.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw DomainError("clean image values must lie in [0,1]");
  }
  std::vector<double> work(clean.data().begin(), clean.data().end());
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const auto& stage : spec.stages()) {
    if (const auto* noise = std::get_if<GaussianNoise>(&stage)) {
      for (std::size_t i = 0; i < n; ++i) {
        double sigma = noise->sigma_lo;
        if (noise->sigma_hi > noise->sigma_lo) {
          sigma = std::uniform_real_distribution<double>(noise->sigma_lo, noise->sigma_hi)(rng);
        }
        if (sigma == 0.0) continue;
        const double s = sigma / 255.0;
        for (std::size_t j = 0; j < image; ++j) work[i * image + j] += s * normal(rng);
      }
    } else {
      const auto& blur = std::get<GaussianBlur>(stage);
      const auto k = gaussian_kernel(blur.kernel, blur.sigma);
      for (std::size_t p = 0; p < 3 * n; ++p) blur_plane(work.data() + p * h * w, h, w, k);
    }
  }
  std::vector<float> out(work.size());
  for (std::size_t i = 0; i < work.size(); ++i) {
    const double v = clamp ? std::clamp(work[i], 0.0, 1.0) : work[i];
    out[i] = static_cast<float>(v);
  }
  return Tensor(clean.shape(), std::move(out));
}

}  // namespace

DegradationSpec::DegradationSpec(std::vector<Stage> stages) : stages_(std::move(stages)) {
  for (const auto& s : stages_) check_stage(s);
}

DegradationSpec DegradationSpec::noise(double sigma) { return DegradationSpec({GaussianNoise{sigma, sigma}}); }

DegradationSpec DegradationSpec::noise_range(double lo, double hi) { return DegradationSpec({GaussianNoise{lo, hi}}); }

DegradationSpec DegradationSpec::blur(std::size_t kernel, double sigma) {
  return DegradationSpec({GaussianBlur{kernel, sigma}});
}

DegradationSpec DegradationSpec::compose(const std::vector<DegradationSpec>& parts) {
  std::vector<Stage> stages;
  for (const auto& p : parts) stages.insert(stages.end(), p.stages_.begin(), p.stages_.end());
  return DegradationSpec(std::move(stages));
}

DegradationSpec DegradationSpec::parse(const std::string& text) {
  std::vector<Stage> stages;
  for (const auto& part : split(text, '+')) {
    auto fields = split(part, ':');
    if (fields.empty()) throw ConfigError("empty degradation in '" + text + "'");
    std::string kind = "noise";
    if (fields[0] == "noise" || fields[0] == "blur") {
      kind = fields[0];
      fields.erase(fields.begin());
    }
    if (kind == "noise") {
      if (fields.size() == 1) {
        const double s = parse_number(fields[0], text);
        stages.push_back(GaussianNoise{s, s});
      } else if (fields.size() == 2) {
        stages.push_back(GaussianNoise{parse_number(fields[0], text), parse_number(fields[1], text)});
      } else {
        throw ConfigError("noise takes sigma or lo:hi, got '" + part + "'");
      }
    } else {
      if (fields.size() != 2) throw ConfigError("blur takes kernel:sigma, got '" + part + "'");
      const double k = parse_number(fields[0], text);
      if (k < 0 || k != std::floor(k)) throw ConfigError("blur kernel must be an integer, got '" + fields[0] + "'");
      stages.push_back(GaussianBlur{static_cast<std::size_t>(k), parse_number(fields[1], text)});
    }
  }
  if (stages.empty()) throw ConfigError("empty degradation spec");
  return DegradationSpec(std::move(stages));
}

std::string DegradationSpec::to_string() const {
  std::string out;
  for (const auto& stage : stages_) {
    if (!out.empty()) out += "+";
    if (const auto* n = std::get_if<GaussianNoise>(&stage)) {
      out += "noise:" + format_number(n->sigma_lo);
      if (n->sigma_hi != n->sigma_lo) out += ":" + format_number(n->sigma_hi);
    } else {
      const auto& b = std::get<GaussianBlur>(stage);
      out += "blur:" + std::to_string(b.kernel) + ":" + format_number(b.sigma);
    }
  }
  return out;
}

std::vector<double> gaussian_kernel(std::size_t size, double sigma) {
  check_stage(GaussianBlur{size, sigma});
  std::vector<double> k(size);
  const double c = static_cast<double>(size / 2);
  double total = 0;
  for (std::size_t i = 0; i < size; ++i) {
    const double d = static_cast<double>(i) - c;
    k[i] = std::exp(-d * d / (2 * sigma * sigma));
    total += k[i];
  }
  for (auto& v : k) v /= total;
  return k;
}

Tensor apply(const DegradationSpec& spec, const Tensor& clean, std::uint64_t seed) {
  return degrade(spec, clean, seed, true);
}

Tensor apply_unclamped(const DegradationSpec& spec, const Tensor& clean, std::uint64_t seed) {
  return degrade(spec, clean, seed, false);
}

std::vector<std::filesystem::path> read_manifest(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open manifest " + manifest.string());
  std::vector<std::filesystem::path> paths;
  std::string line;
  const auto base = manifest.parent_path();
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const std::filesystem::path p(line);
    paths.push_back(p.is_absolute() ? p : base / p);
  }
  if (paths.empty()) throw DataError("manifest " + manifest.string() + " lists no images");
  return paths;
}

std::size_t worker_threads() {
  if (const char* env = std::getenv("CONSTYLE_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n >= 1) return static_cast<std::size_t>(n);
  }
  return 1;
}

PatchSampler::PatchSampler(std::vector<std::filesystem::path> sources, SamplerConfig config)
    : config_(config), rng_(config.seed) {
  if (sources.empty()) throw DataError("patch sampler needs at least one source image");
  for (const auto& path : sources) {
    images_.push_back(read_png(path));
    names_.push_back(path.string());
  }
  check_sizes();
}

PatchSampler::PatchSampler(std::vector<Tensor> images, std::vector<std::string> names, SamplerConfig config)
    : config_(config), images_(std::move(images)), names_(std::move(names)), rng_(config.seed) {
  if (images_.empty() || images_.size() != names_.size()) {
    throw DataError("patch sampler needs one name per source image");
  }
  check_sizes();
}

void PatchSampler::check_sizes() const {
  if (config_.patch == 0) throw ConfigError("patch size must be positive");
  for (std::size_t i = 0; i < images_.size(); ++i) {
    const auto& img = images_[i];
    if (img.rank() != 3 || img.dim(0) != 3) throw DataError(names_[i] + ": expected a (3,H,W) image");
    if (img.dim(1) < config_.patch || img.dim(2) < config_.patch) {
      throw DataError(names_[i] + " is " + std::to_string(img.dim(2)) + "x" + std::to_string(img.dim(1)) +
                      ", smaller than the " + std::to_string(config_.patch) + "px patch");
    }
  }
}

void PatchSampler::reseed(std::uint64_t seed) {
  config_.seed = seed;
  rng_.seed(seed);
}

PatchSampler::Draw PatchSampler::next_draw() {
  Draw d{};
  d.image = std::uniform_int_distribution<std::size_t>(0, images_.size() - 1)(rng_);
  const auto& img = images_[d.image];
  if (config_.augment) {
    d.top = std::uniform_int_distribution<std::size_t>(0, img.dim(1) - config_.patch)(rng_);
    d.left = std::uniform_int_distribution<std::size_t>(0, img.dim(2) - config_.patch)(rng_);
    d.hflip = rng_() & 1;
    d.vflip = rng_() & 1;
  }
  d.degrade_seed = rng_();
  return d;
}

std::pair<Tensor, Tensor> PatchSampler::realize(const Draw& d, const DegradationSpec& spec) const {
  const auto& img = images_[d.image];
  const std::size_t p = config_.patch, h = img.dim(1), w = img.dim(2);
  const auto src = img.data();
  std::vector<float> patch(3 * p * p);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < p; ++y) {
      const std::size_t sy = d.top + (d.vflip ? p - 1 - y : y);
      for (std::size_t x = 0; x < p; ++x) {
        const std::size_t sx = d.left + (d.hflip ? p - 1 - x : x);
        patch[(c * p + y) * p + x] = src[(c * h + sy) * w + sx];
      }
    }
  }
  Tensor clean(Shape{3, p, p}, std::move(patch));
  Tensor degraded = apply(spec, clean, d.degrade_seed);
  return {std::move(clean), std::move(degraded)};
}

std::pair<Tensor, Tensor> PatchSampler::sample_pair(const DegradationSpec& spec) {
  return realize(next_draw(), spec);
}

std::pair<Tensor, Tensor> PatchSampler::sample_batch(const DegradationSpec& spec, std::size_t batch) {
  if (batch == 0) throw ConfigError("batch must be positive");
  std::vector<Draw> draws;
  for (std::size_t i = 0; i < batch; ++i) draws.push_back(next_draw());
  std::vector<std::pair<Tensor, Tensor>> pairs(batch);
  const std::size_t threads = std::min(worker_threads(), batch);
  if (threads <= 1) {
    for (std::size_t i = 0; i < batch; ++i) pairs[i] = realize(draws[i], spec);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i = t; i < batch; i += threads) pairs[i] = realize(draws[i], spec);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  const std::size_t p = config_.patch, image = 3 * p * p;
  std::vector<float> clean(batch * image), degraded(batch * image);
  for (std::size_t i = 0; i < batch; ++i) {
    std::copy_n(pairs[i].first.data().begin(), image, clean.begin() + i * image);
    std::copy_n(pairs[i].second.data().begin(), image, degraded.begin() + i * image);
  }
  return {Tensor(Shape{batch, 3, p, p}, std::move(clean)), Tensor(Shape{batch, 3, p, p}, std::move(degraded))};
}

}  // namespace constyle
