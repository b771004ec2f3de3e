#include "constyle/config.hpp"

#include <fstream>
#include <set>

#include "constyle/errors.hpp"

namespace constyle {
namespace {

using nlohmann::json;

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail("", "must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) fail(key, "must be a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer() || (v.is_number_integer() && v.get<long long>() < 0)) {
          fail(key, "must be a non-negative integer");
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) fail(key, "must be a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) fail(key, "must be a string");
      }
      out = v.get<T>();
    } catch (const json::exception& e) {
      fail(key, e.what());
    }
  }

  void get_optional(const char* key, std::optional<double>& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    double v = 0;
    get(key, v);
    out = v;
  }

  void get_sizes(const char* key, std::vector<std::size_t>& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    if (!v.is_array()) fail(key, "must be an array of non-negative integers");
    out.clear();
    for (const auto& e : v) {
      if (!e.is_number_integer() || e.get<long long>() < 0) fail(key, "must be an array of non-negative integers");
      out.push_back(e.get<std::size_t>());
    }
  }

  Reader child(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Reader(j_.contains(key) ? j_.at(key) : empty, join(key));
  }

  bool has(const char* key) const { return j_.contains(key); }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) fail(key.c_str(), "is not a recognised field");
    }
  }

  [[noreturn]] void fail(const std::string& key, const std::string& why) const {
    throw ConfigError(join(key) + " " + why);
  }

  std::string join(const std::string& key) const {
    if (path_.empty()) return key;
    if (key.empty()) return path_;
    return path_ + "." + key;
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

[[noreturn]] void invalid(const std::string& field, const std::string& why) { throw ConfigError(field + " " + why); }

}  // namespace

void TrainConfig::validate() const {
  if (!(lr_init > 0)) invalid("lr_init", "must be positive");
  if (!(lr_final >= 0 && lr_final < lr_init)) invalid("lr_final", "must satisfy 0 <= lr_final < lr_init");
  if (!(beta1 >= 0 && beta1 < 1)) invalid("betas[0]", "must lie in [0,1)");
  if (!(beta2 >= 0 && beta2 < 1)) invalid("betas[1]", "must lie in [0,1)");
  if (!(weight_decay >= 0)) invalid("weight_decay", "must be non-negative");
  if (!(adam_eps > 0)) invalid("adam_eps", "must be positive");
  if (grad_clip && !(*grad_clip > 0)) invalid("grad_clip", "must be positive when set");
  if (batch < 1) invalid("batch", "must be at least 1");
  if (total_iters < 1) invalid("total_iters", "must be at least 1");
  if (queue_capacity < 1) invalid("queue_capacity", "must be at least 1");
  if (batch > effective_queue_capacity()) {
    invalid("batch", "must not exceed the queue capacity (" + std::to_string(effective_queue_capacity()) + ")");
  }
  if (!(temperature > 0)) invalid("temperature", "must be positive");
  if (!(ema_momentum >= 0 && ema_momentum < 1)) invalid("ema_momentum", "must lie in [0,1)");
  for (auto [name, w] : {std::pair{"style", loss_weights.style}, {"content", loss_weights.content},
                         {"infonce", loss_weights.infonce}, {"l1", loss_weights.l1}}) {
    if (!(w >= 0) || !std::isfinite(w)) invalid(std::string("loss_weights.") + name, "must be a finite value >= 0");
  }
  if (loss_weights.style + loss_weights.content + loss_weights.infonce + loss_weights.l1 <= 0) {
    invalid("loss_weights", "must contain at least one positive weight");
  }
  if (style_clamp && !(*style_clamp > 0)) invalid("style_clamp", "must be positive when set");
  try {
    encoder.validate();
  } catch (const ConfigError& e) {
    invalid("encoder", e.what());
  }
  try {
    net.validate();
  } catch (const ConfigError& e) {
    invalid("net", e.what());
  }
  if (net.levels != encoder.stages) invalid("net.levels", "must equal encoder.stages (one feature map per level)");
  if (net.feature_width != encoder.width) invalid("net.feature_width", "must equal encoder.width");
  if (net.latent_dim != encoder.latent_dim) invalid("net.latent_dim", "must equal encoder.latent_dim");
  const std::size_t factor = std::size_t{1} << net.levels;
  if (patch == 0 || patch % factor != 0) invalid("patch", "must be a positive multiple of " + std::to_string(factor));
  try {
    DegradationSpec::parse(data.degradation);
  } catch (const ConfigError& e) {
    invalid("data.degradation", e.what());
  }
  if (output.log_every < 1) invalid("output.log_every", "must be at least 1");
}

std::size_t TrainConfig::effective_queue_capacity() const {
  return ablation.g1_small_queue ? kSmallQueueCapacity : queue_capacity;
}

DegradationSpec TrainConfig::degradation() const { return DegradationSpec::parse(data.degradation); }

AdamWConfig TrainConfig::adamw() const { return {beta1, beta2, adam_eps, weight_decay, grad_clip}; }

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  Reader r(j, "");
  r.get("lr_init", c.lr_init);
  r.get("lr_final", c.lr_final);
  if (r.has("betas")) {
    std::vector<double> betas;
    r.get("betas", betas);
    if (betas.size() != 2) r.fail("betas", "must hold two numbers");
    c.beta1 = betas[0];
    c.beta2 = betas[1];
  } else {
    r.get("betas", c.beta1);  // marks the key as known
  }
  r.get("weight_decay", c.weight_decay);
  r.get("adam_eps", c.adam_eps);
  r.get_optional("grad_clip", c.grad_clip);
  r.get("patch", c.patch);
  r.get("batch", c.batch);
  r.get("total_iters", c.total_iters);
  r.get("queue_capacity", c.queue_capacity);
  r.get("temperature", c.temperature);
  r.get("ema_momentum", c.ema_momentum);
  r.get("seed", c.seed);
  r.get_optional("style_clamp", c.style_clamp);
  std::string convention = to_string(c.info_nce), distance = to_string(c.gram_distance);
  r.get("info_nce", convention);
  r.get("gram_distance", distance);
  try {
    c.info_nce = parse_info_nce_convention(convention);
  } catch (const ConfigError& e) {
    r.fail("info_nce", e.what());
  }
  try {
    c.gram_distance = parse_gram_distance(distance);
  } catch (const ConfigError& e) {
    r.fail("gram_distance", e.what());
  }

  auto w = r.child("loss_weights");
  w.get("style", c.loss_weights.style);
  w.get("content", c.loss_weights.content);
  w.get("infonce", c.loss_weights.infonce);
  w.get("l1", c.loss_weights.l1);
  w.finish();

  auto a = r.child("ablation");
  a.get("g1_small_queue", c.ablation.g1_small_queue);
  a.get("g2_no_feature_maps", c.ablation.g2_no_feature_maps);
  a.get("g3_queue_behind_momentum", c.ablation.g3_queue_behind_momentum);
  a.finish();

  auto e = r.child("encoder");
  e.get("width", c.encoder.width);
  e.get("latent_dim", c.encoder.latent_dim);
  e.get("stages", c.encoder.stages);
  e.finish();

  auto n = r.child("net");
  n.get("width", c.net.width);
  n.get("levels", c.net.levels);
  n.get_sizes("blocks_left", c.net.blocks_left);
  n.get("blocks_bottom", c.net.blocks_bottom);
  n.get_sizes("blocks_right", c.net.blocks_right);
  n.get("block_kind", c.net.block_kind);
  n.get("zero_init_tail", c.net.zero_init_tail);
  n.finish();
  c.net.feature_width = c.encoder.width;
  c.net.latent_dim = c.encoder.latent_dim;

  auto d = r.child("data");
  d.get("train_manifest", c.data.train_manifest);
  d.get("eval_manifest", c.data.eval_manifest);
  d.get("degradation", c.data.degradation);
  d.get("augment", c.data.augment);
  d.finish();

  auto o = r.child("output");
  o.get("dir", c.output.dir);
  o.get("checkpoint_every", c.output.checkpoint_every);
  o.get("log_every", c.output.log_every);
  o.finish();

  r.finish();
  c.validate();
  return c;
}

json to_json(const TrainConfig& c) {
  json j;
  j["lr_init"] = c.lr_init;
  j["lr_final"] = c.lr_final;
  j["betas"] = {c.beta1, c.beta2};
  j["weight_decay"] = c.weight_decay;
  j["adam_eps"] = c.adam_eps;
  j["grad_clip"] = c.grad_clip ? json(*c.grad_clip) : json(nullptr);
  j["patch"] = c.patch;
  j["batch"] = c.batch;
  j["total_iters"] = c.total_iters;
  j["queue_capacity"] = c.queue_capacity;
  j["temperature"] = c.temperature;
  j["ema_momentum"] = c.ema_momentum;
  j["seed"] = c.seed;
  j["style_clamp"] = c.style_clamp ? json(*c.style_clamp) : json(nullptr);
  j["info_nce"] = to_string(c.info_nce);
  j["gram_distance"] = to_string(c.gram_distance);
  j["loss_weights"] = {{"style", c.loss_weights.style},
                       {"content", c.loss_weights.content},
                       {"infonce", c.loss_weights.infonce},
                       {"l1", c.loss_weights.l1}};
  j["ablation"] = {{"g1_small_queue", c.ablation.g1_small_queue},
                   {"g2_no_feature_maps", c.ablation.g2_no_feature_maps},
                   {"g3_queue_behind_momentum", c.ablation.g3_queue_behind_momentum}};
  j["encoder"] = {{"width", c.encoder.width}, {"latent_dim", c.encoder.latent_dim}, {"stages", c.encoder.stages}};
  j["net"] = {{"width", c.net.width},
              {"levels", c.net.levels},
              {"blocks_left", c.net.blocks_left},
              {"blocks_bottom", c.net.blocks_bottom},
              {"blocks_right", c.net.blocks_right},
              {"block_kind", c.net.block_kind},
              {"zero_init_tail", c.net.zero_init_tail}};
  j["data"] = {{"train_manifest", c.data.train_manifest},
               {"eval_manifest", c.data.eval_manifest},
               {"degradation", c.data.degradation},
               {"augment", c.data.augment}};
  j["output"] = {{"dir", c.output.dir},
                 {"checkpoint_every", c.output.checkpoint_every},
                 {"log_every", c.output.log_every}};
  return j;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file " + path.string() + " cannot be opened");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  TrainConfig c = config_from_json(j);
  const auto base = path.parent_path();
  auto resolve = [&](std::string& p) {
    if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base / p).lexically_normal().string();
  };
  resolve(c.data.train_manifest);
  resolve(c.data.eval_manifest);
  resolve(c.output.dir);
  return c;
}

}  // namespace constyle
