#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "constyle/checkpoint.hpp"
#include "constyle/config.hpp"
#include "constyle/corpus.hpp"
#include "constyle/degradations.hpp"
#include "constyle/errors.hpp"
#include "constyle/gradient_suite.hpp"
#include "constyle/image_io.hpp"
#include "constyle/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace constyle {
namespace {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfig = 2,
  kIo = 3,
  kCheckpointVersion = 4,
  kImageFormat = 5,
};

void log_line(const std::string& message) { std::cerr << message << '\n'; }

void print_json(const json& j) { std::cout << j.dump() << std::endl; }

int fail(const std::string& kind, const std::string& message, int code) {
  std::cerr << json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << std::endl;
  return code;
}

TrainConfig config_with_seed(const std::string& path, const std::optional<std::uint64_t>& seed) {
  TrainConfig config = load_config(path);
  if (seed) config.seed = *seed;
  config.validate();
  return config;
}

int cmd_train(const std::string& config_path, const std::string& resume, const std::optional<std::uint64_t>& seed) {
  const TrainConfig config = config_with_seed(config_path, seed);
  if (config.data.train_manifest.empty()) throw ConfigError("data.train_manifest: required for training");

  Trainer trainer(config);
  if (!resume.empty()) {
    restore_trainer(trainer, read_checkpoint(resume));
    log_line("resumed from " + resume + " at iteration " + std::to_string(trainer.iteration()));
  }
  PatchSampler sampler(read_manifest(config.data.train_manifest), {config.patch, config.data.augment, config.seed});

  const fs::path out_dir = config.output.dir;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir.string() + ": " + ec.message());
  const fs::path log_path = out_dir / "loss.jsonl";
  std::ofstream loss_log(log_path, std::ios::app);
  if (!loss_log) throw IoError("cannot open loss log " + log_path.string());

  std::vector<std::string> written;
  auto checkpoint = [&](const fs::path& path) {
    save_checkpoint(path, trainer);
    written.push_back(path.string());
    log_line("wrote " + path.string());
  };
  const std::size_t log_every = std::max<std::size_t>(config.output.log_every, 1);
  LossBreakdown last;
  trainer.run(sampler, 0, [&](const LossBreakdown& b) {
    last = b;
    if (b.iteration % log_every == 0 || b.iteration == config.total_iters) {
      loss_log << b.to_json().dump() << '\n';
      loss_log.flush();
      if (!loss_log) throw IoError("cannot write loss log " + log_path.string());
      log_line("iter " + std::to_string(b.iteration) + " total " + std::to_string(b.total) + " l1 " +
               std::to_string(b.l1));
    }
    if (config.output.checkpoint_every > 0 && b.iteration % config.output.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "ckpt_%06zu.bin", b.iteration);
      checkpoint(out_dir / name);
    }
  });
  const fs::path final_path = out_dir / "final.bin";
  checkpoint(final_path);
  print_json({{"iteration", trainer.iteration()},
              {"final_checkpoint", final_path.string()},
              {"checkpoints", written},
              {"loss_log", log_path.string()},
              {"last", last.iteration > 0 ? last.to_json() : json(nullptr)}});
  return kOk;
}

int cmd_eval(const std::string& ckpt, const std::string& manifest, const std::string& sigma, std::uint64_t seed) {
  const DegradationSpec spec = DegradationSpec::parse(sigma);
  const auto images = read_manifest(manifest);
  std::optional<Trainer> trainer;
  std::size_t multiple = 1;
  if (ckpt != "none") {
    trainer.emplace(load_trainer(ckpt));
    multiple = std::size_t{1} << trainer->config().net.levels;
  }
  const EvaluationResult result = evaluate(trainer ? &trainer->model() : nullptr, images, spec, seed, multiple,
                                           ckpt == "none" ? "degraded_input" : "model", log_line);
  json out = to_json(result.report);
  out["degradation"] = spec.to_string();
  out["seed"] = seed;
  out["failures"] = result.failures;
  print_json(out);
  return kOk;
}

int cmd_infer(const std::string& ckpt, const std::string& in, const std::string& out) {
  const Trainer trainer = load_trainer(ckpt);
  const Tensor image = read_png(in);
  write_png(out, restore_image(trainer.model(), image));
  print_json({{"input", in}, {"output", out}, {"height", image.dim(1)}, {"width", image.dim(2)}});
  return kOk;
}

int cmd_ablate(const std::string& config_path, const std::optional<std::uint64_t>& seed) {
  const AblationResult result = run_ablation(config_with_seed(config_path, seed), log_line);
  print_json(result.to_json());
  return kOk;
}

int cmd_gradcheck(const std::string& op) {
  const auto results = op.empty() ? run_gradient_suite() : std::vector{run_gradient_check(op)};
  bool passed = true;
  json items = json::array();
  for (const auto& r : results) {
    passed = passed && r.passed;
    items.push_back(r.to_json());
    log_line(r.op + ": max rel err " + std::to_string(r.max_rel_error) + (r.passed ? " ok" : " FAILED"));
  }
  print_json({{"passed", passed}, {"checks", items}});
  return passed ? kOk : kFailure;
}

int cmd_params(const std::string& config_path) {
  const TrainConfig config = load_config(config_path);
  config.validate();
  print_json(Model(config).parameter_counts());
  return kOk;
}

int cmd_make_corpus(const std::string& dir, std::size_t count, std::size_t size, std::uint64_t seed) {
  const fs::path manifest = write_synthetic_corpus(dir, count, size, size, seed);
  print_json({{"manifest", manifest.string()}, {"count", count}, {"size", size}});
  return kOk;
}

int run(int argc, char** argv) {
  CLI::App app{"Contrastive style-guided image restoration"};
  app.require_subcommand(1);
  app.allow_extras(false);

  std::string config_path, resume, ckpt, manifest, sigma = "25", in, out, op, dir;
  std::optional<std::uint64_t> seed;
  std::uint64_t eval_seed = 0, corpus_seed = 0;
  std::size_t count = 12, size = 96;

  auto* train = app.add_subcommand("train", "Train a model from a JSON config");
  train->add_option("--config", config_path, "Config file")->required();
  train->add_option("--resume", resume, "Checkpoint to continue from");
  train->add_option("--seed", seed, "Override the config seed");

  auto* eval = app.add_subcommand("eval", "Report PSNR/SSIM over a manifest");
  eval->add_option("--ckpt", ckpt, "Checkpoint, or 'none' to score the degraded input")->required();
  eval->add_option("--manifest", manifest, "Image manifest")->required();
  eval->add_option("--sigma", sigma, "Noise level v, range lo:hi, or a degradation spec");
  eval->add_option("--seed", eval_seed, "Degradation seed");

  auto* infer = app.add_subcommand("infer", "Restore one PNG");
  infer->add_option("--ckpt", ckpt, "Checkpoint")->required();
  infer->add_option("--in", in, "Input PNG")->required();
  infer->add_option("--out", out, "Output PNG")->required();

  auto* ablate = app.add_subcommand("ablate", "Train baseline and single-guideline ablations");
  ablate->add_option("--config", config_path, "Config file")->required();
  ablate->add_option("--seed", seed, "Override the config seed");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gradcheck->add_option("--op", op, "Single op to check");

  auto* params = app.add_subcommand("params", "Per-module parameter counts");
  params->add_option("--config", config_path, "Config file")->required();

  auto* corpus = app.add_subcommand("make-corpus", "Write a synthetic PNG corpus and manifest");
  corpus->add_option("--dir", dir, "Output directory")->required();
  corpus->add_option("--count", count, "Number of images");
  corpus->add_option("--size", size, "Image side length");
  corpus->add_option("--seed", corpus_seed, "Generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), kConfig);
  }

  try {
    if (*train) return cmd_train(config_path, resume, seed);
    if (*eval) return cmd_eval(ckpt, manifest, sigma, eval_seed);
    if (*infer) return cmd_infer(ckpt, in, out);
    if (*ablate) return cmd_ablate(config_path, seed);
    if (*gradcheck) return cmd_gradcheck(op);
    if (*params) return cmd_params(config_path);
    if (*corpus) return cmd_make_corpus(dir, count, size, corpus_seed);
  } catch (const ConfigError& e) {
    return fail("config", e.what(), kConfig);
  } catch (const IoError& e) {
    return fail("io", e.what(), kIo);
  } catch (const CheckpointVersionError& e) {
    return fail("checkpoint_version", e.what(), kCheckpointVersion);
  } catch (const ImageFormatError& e) {
    return fail("image_format", e.what(), kImageFormat);
  } catch (const CheckpointError& e) {
    return fail("checkpoint", e.what(), kFailure);
  } catch (const DataError& e) {
    return fail("data", e.what(), kFailure);
  } catch (const TrainingError& e) {
    return fail("training", e.what(), kFailure);
  } catch (const Error& e) {
    return fail("error", e.what(), kFailure);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), kFailure);
  }
  return kFailure;
}

}  // namespace
}  // namespace constyle

int main(int argc, char** argv) { return constyle::run(argc, argv); }
