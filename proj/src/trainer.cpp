#include "constyle/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "constyle/errors.hpp"
#include "constyle/image_io.hpp"
#include "constyle/losses.hpp"

namespace constyle {
namespace {

// Stream tags for mix_seed.
constexpr std::uint64_t kModelStream = 1;
constexpr std::uint64_t kQueueStream = 2;
constexpr std::uint64_t kDataStream = 3;
constexpr std::uint64_t kEvalStream = 4;

const TrainConfig& validated(const TrainConfig& config) {
  config.validate();
  return config;
}

Tensor clamp01(const Tensor& x) {
  std::vector<float> v(x.data().begin(), x.data().end());
  for (auto& e : v) e = std::clamp(e, 0.0f, 1.0f);
  return Tensor(x.shape(), std::move(v));
}

Tensor crop_to_multiple(const Tensor& img, std::size_t multiple) {
  const std::size_t h = img.dim(1) / multiple * multiple, w = img.dim(2) / multiple * multiple;
  if (h == 0 || w == 0) {
    throw DataError("image " + shape_str(img.shape()) + " is smaller than " + std::to_string(multiple) + "px");
  }
  if (h == img.dim(1) && w == img.dim(2)) return img;
  std::vector<float> out(3 * h * w);
  const auto src = img.data();
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      std::copy_n(src.begin() + (c * img.dim(1) + y) * img.dim(2), w, out.begin() + (c * h + y) * w);
  return Tensor(Shape{3, h, w}, std::move(out));
}

void emit(const std::function<void(const std::string&)>& log, const std::string& line) {
  if (log) log(line);
}

std::optional<Tensor> as_float(const std::optional<Tensor64>& x) {
  if (!x) return std::nullopt;
  return x->cast<float>();
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------- model

Model::Model(const TrainConfig& config) : Model(validated(config), Rng(mix_seed(config.seed, kModelStream))) {}

Model::Model(const TrainConfig& config, Rng&& rng)
    : encoder(config.encoder, rng),
      momentum(encoder),
      net(config.net, rng),
      queue(config.effective_queue_capacity(), config.encoder.latent_dim),
      inject(!config.ablation.g2_no_feature_maps) {
  // One batch of random unit codes so the contrastive loss has negatives from the first step.
  Rng qrng(mix_seed(config.seed, kQueueStream));
  NoGradGuard guard;
  queue.push(normalize_rows(Tensor64::randn({config.batch, config.encoder.latent_dim}, qrng)));
}

Tensor Model::infer(const Tensor& degraded) const {
  NoGradGuard guard;
  if (!inject) return net.forward(degraded, nullptr, false);
  const auto bundle = encoder.encode(degraded);
  return net.forward(degraded, &bundle, true);
}

nlohmann::json Model::parameter_counts() const {
  const std::size_t enc = encoder.parameters().scalar_count();
  const std::size_t restore = net.parameters().scalar_count();
  const std::size_t inj = net.injector_parameter_count();
  return {{"encoder", enc},
          {"momentum_encoder", momentum.parameters().scalar_count()},
          {"restoration_net", restore - inj},
          {"injectors", inj},
          {"constyle_total", enc + inj},
          {"total_trainable", enc + restore}};
}

// ---------------------------------------------------------------- training

nlohmann::json LossBreakdown::to_json() const {
  return {{"iteration", iteration}, {"lr", lr},           {"l1", l1},
          {"infonce", infonce},     {"content", content}, {"style", style},
          {"style_active", style_active}, {"total", total}};
}

Trainer::Trainer(const TrainConfig& config)
    : config_(validated(config)), degradation_(config.degradation()), model_(config), optimizer_(config.adamw()) {}

std::pair<Tensor, Tensor> Trainer::batch_for_iteration(PatchSampler& sampler) const {
  sampler.reseed(mix_seed(mix_seed(config_.seed, kDataStream), iteration_));
  return sampler.sample_batch(degradation_, config_.batch);
}

LossBreakdown Trainer::train_step(const Tensor& clean, const Tensor& degraded) {
  if (clean.shape() != degraded.shape() || clean.rank() != 4 || clean.dim(0) == 0) {
    throw DimensionError("train_step: clean " + shape_str(clean.shape()) + " and degraded " +
                         shape_str(degraded.shape()) + " must be matching (B,3,P,P) batches");
  }
  if (iteration_ >= config_.total_iters) {
    throw StateError("training already reached total_iters = " + std::to_string(config_.total_iters));
  }
  const auto& w = config_.loss_weights;
  const bool g3 = config_.ablation.g3_queue_behind_momentum;
  const InfoNceConvention convention = g3 ? InfoNceConvention::dasr : config_.info_nce;
  const std::size_t batch = clean.dim(0);

  LossBreakdown out;
  out.iteration = iteration_ + 1;
  out.lr = cosine_lr(iteration_, config_.total_iters, config_.lr_init, config_.lr_final);

  model_.encoder.parameters().zero_grad();
  model_.net.parameters().zero_grad();

  Tensor total, key, query;
  try {
    const auto bundle = model_.encoder.encode(degraded);
    const Tensor& q = bundle.code;
    query = q;
    key = model_.momentum.encode(g3 ? degraded : clean).code;
    const Tensor restored = model_.net.forward(degraded, &bundle, model_.inject);

    const Tensor l1 = l1_loss(restored, clean);
    const Tensor nce = info_nce(q, key, model_.queue, Temperature(config_.temperature), convention);
    const Tensor content = content_loss(q, key, config_.gram_distance);
    const PushOutcome exposed = model_.queue.peek_push(batch);
    const auto style = style_loss<float>(q, as_float(exposed.outgoing), as_float(exposed.next_outgoing),
                                         config_.gram_distance, config_.style_clamp);
    out.l1 = l1.item();
    out.infonce = nce.item();
    out.content = content.item();
    out.style = style.value.item();
    out.style_active = style.active;
    out.total = w.style * out.style + w.content * out.content + w.infonce * out.infonce + w.l1 * out.l1;

    std::vector<std::pair<double, Tensor>> terms{{w.style, style.value}, {w.content, content}, {w.infonce, nce}, {w.l1, l1}};
    for (const auto& [weight, term] : terms) {
      if (weight == 0.0 || !term.requires_grad()) continue;
      const Tensor scaled = scale(term, static_cast<float>(weight));
      total = total.defined() ? add(total, scaled) : scaled;
    }
  } catch (const DomainError& e) {
    throw TrainingError("non-finite value at iteration " + std::to_string(out.iteration) + " (" + e.what() +
                        "); losses so far " + out.to_json().dump());
  }
  if (!std::isfinite(out.total)) {
    throw TrainingError("non-finite loss at iteration " + std::to_string(out.iteration) + ": " + out.to_json().dump());
  }

  if (total.defined()) {
    total.backward();
    optimizer_.step({{"encoder", &model_.encoder.parameters()}, {"net", &model_.net.parameters()}}, out.lr);
  }
  model_.encoder.parameters().zero_grad();
  model_.net.parameters().zero_grad();
  ema_update(model_.momentum, model_.encoder, config_.ema_momentum);
  model_.queue.push(g3 ? key : query);
  iteration_ = out.iteration;
  return out;
}

void Trainer::run(PatchSampler& sampler, std::size_t until, const std::function<void(const LossBreakdown&)>& on_step) {
  if (until == 0 || until > config_.total_iters) until = config_.total_iters;
  while (iteration_ < until) {
    const auto [clean, degraded] = batch_for_iteration(sampler);
    const LossBreakdown b = train_step(clean, degraded);
    if (on_step) on_step(b);
  }
}

// ---------------------------------------------------------------- evaluation

EvaluationResult evaluate(const Model* model, const std::vector<std::filesystem::path>& images,
                          const DegradationSpec& spec, std::uint64_t seed, std::size_t multiple,
                          const std::string& name, const std::function<void(const std::string&)>& log) {
  if (multiple == 0) throw ContractError("evaluate: crop multiple must be positive");
  EvaluationResult result;
  MetricAccumulator acc;
  for (std::size_t i = 0; i < images.size(); ++i) {
    try {
      const Tensor clean = crop_to_multiple(read_png(images[i]), multiple);
      const Shape batched{1, 3, clean.dim(1), clean.dim(2)};
      const Tensor clean4 = reshape(clean, batched);
      const Tensor degraded = apply(spec, clean4, mix_seed(mix_seed(seed, kEvalStream), i));
      const Tensor restored = model ? clamp01(model->infer(degraded)) : degraded;
      const Shape plain{3, clean.dim(1), clean.dim(2)};
      acc.add(psnr(reshape(restored, plain), clean), ssim(reshape(restored, plain), clean));
    } catch (const Error& e) {
      result.failures.push_back(images[i].string() + ": " + e.what());
      emit(log, "skipping " + images[i].string() + ": " + e.what());
    }
  }
  result.report = acc.report(name);
  return result;
}

Tensor restore_image(const Model& model, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw DimensionError("restore_image: expected a (3,H,W) image, got " + shape_str(image.shape()));
  }
  const std::size_t multiple = std::size_t{1} << model.net.config().levels;
  const std::size_t h = image.dim(1), w = image.dim(2);
  const std::size_t ph = (h + multiple - 1) / multiple * multiple, pw = (w + multiple - 1) / multiple * multiple;
  std::vector<float> padded(3 * ph * pw);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < ph; ++y)
      for (std::size_t x = 0; x < pw; ++x)
        padded[(c * ph + y) * pw + x] = image.data()[(c * h + std::min(y, h - 1)) * w + std::min(x, w - 1)];
  const Tensor restored = clamp01(model.infer(Tensor(Shape{1, 3, ph, pw}, std::move(padded))));
  std::vector<float> out(3 * h * w);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out[(c * h + y) * w + x] = restored.data()[(c * ph + y) * pw + x];
  return Tensor(Shape{3, h, w}, std::move(out));
}

// ---------------------------------------------------------------- ablation

TrainConfig ablation_variant(const TrainConfig& base, const std::string& name) {
  TrainConfig c = base;
  c.ablation = {};
  if (name == "g1_small_queue") {
    c.ablation.g1_small_queue = true;
  } else if (name == "g2_no_feature_maps") {
    c.ablation.g2_no_feature_maps = true;
  } else if (name == "g3_queue_behind_momentum") {
    c.ablation.g3_queue_behind_momentum = true;
  } else if (name != "baseline") {
    throw ConfigError("unknown ablation variant '" + name + "'");
  }
  c.validate();
  return c;
}

nlohmann::json AblationResult::to_json() const {
  nlohmann::json variants = nlohmann::json::array();
  for (const auto& r : reports) variants.push_back(constyle::to_json(r));
  return {{"noisy_input", constyle::to_json(noisy_input)},
          {"variants", variants},
          {"baseline_best", baseline_best}};
}

AblationResult run_ablation(const TrainConfig& base, const std::function<void(const std::string&)>& log) {
  base.validate();
  if (base.data.train_manifest.empty() || base.data.eval_manifest.empty()) {
    throw ConfigError("data.train_manifest and data.eval_manifest are required for an ablation run");
  }
  const auto train_files = read_manifest(base.data.train_manifest);
  const auto eval_files = read_manifest(base.data.eval_manifest);
  PatchSampler sampler(train_files, {base.patch, base.data.augment, base.seed});
  const DegradationSpec spec = base.degradation();
  const std::size_t multiple = std::size_t{1} << base.net.levels;

  AblationResult result;
  result.noisy_input = evaluate(nullptr, eval_files, spec, base.seed, multiple, "noisy_input", log).report;
  for (const std::string name : {"baseline", "g1_small_queue", "g2_no_feature_maps", "g3_queue_behind_momentum"}) {
    emit(log, "training variant " + name);
    Trainer trainer(ablation_variant(base, name));
    trainer.run(sampler);
    result.reports.push_back(evaluate(&trainer.model(), eval_files, spec, base.seed, multiple, name, log).report);
  }
  result.baseline_best = std::all_of(result.reports.begin() + 1, result.reports.end(), [&](const MetricReport& r) {
    return result.reports.front().psnr_db >= r.psnr_db;
  });
  return result;
}

}  // namespace constyle
