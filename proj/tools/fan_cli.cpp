// Command-line front end: dataset synthesis, staged training, evaluation,
// face normalization, and the gradient-check release gate.
//
// Exit codes: 0 success, 1 argument parsing, 2 validation error,
// 3 missing prerequisite / configuration error, 4 training divergence,
// 5 file I/O error.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "fan/fan.hpp"

namespace fs = std::filesystem;
using Real = float;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitConfig = 3;
constexpr int kExitDivergence = 4;
constexpr int kExitIo = 5;

fan::RunConfig load_or_default(const std::string& config_path) {
  if (config_path.empty()) return fan::RunConfig{};
  return fan::load_config(config_path);
}

/// Run directories resolve under $FAN_RUN_ROOT when it is set and the
/// configured path is relative.
void resolve_run_root(fan::RunConfig& cfg) {
  const char* root = std::getenv("FAN_RUN_ROOT");
  if (root != nullptr && *root != '\0' && fs::path(cfg.paths.run_dir).is_relative()) {
    cfg.paths.run_dir = (fs::path(root) / cfg.paths.run_dir).string();
  }
}

/// Exclusive lock on the run directory for the duration of a training command.
class RunLock {
 public:
  explicit RunLock(const fs::path& run_dir) : path_(run_dir / ".lock") {
    fs::create_directories(run_dir);
    if (fs::exists(path_)) {
      throw fan::ConfigError("run directory is locked by another training run: " +
                             path_.string());
    }
    std::ofstream out(path_);
    out << "locked\n";
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }

 private:
  fs::path path_;
};

fan::train::StageId parse_stage(const std::string& s) {
  if (s == "1.1") return fan::train::StageId::k1_1;
  if (s == "1.2") return fan::train::StageId::k1_2;
  if (s == "2") return fan::train::StageId::k2;
  if (s == "finetune") return fan::train::StageId::kFinetune;
  throw fan::ValidationError("unknown stage '" + s + "' (use 1.1, 1.2, 2, finetune)");
}

int run_gradcheck(std::uint64_t seed) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  bool all_pass = true;
  auto print_rows = [&](const char* label, const auto& rows) {
    for (const auto& row : rows) {
      std::printf("%-6s %-18s rel_err %.3e  threshold %.0e  %s\n", label,
                  row.name.c_str(), row.rel_err, row.threshold,
                  row.pass ? "PASS" : "FAIL");
      all_pass = all_pass && row.pass;
    }
  };
  print_rows("f64", fan::gradcheck_suite<double>(seed));
  print_rows("f32", fan::gradcheck_suite<float>(seed));
  const double secs =
      std::chrono::duration<double>(clock::now() - t0).count();
  std::printf("gradcheck %s in %.1f s\n", all_pass ? "PASSED" : "FAILED", secs);
  return all_pass ? 0 : kExitValidation;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fan: disentangled identity features with low-resolution adaptation"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "JSON config file (defaults when omitted)");
  bool print_config = false;
  app.add_flag("--print-config", print_config, "print the effective config and exit");

  // gen-data
  auto* cmd_gen = app.add_subcommand("gen-data", "render the synthetic dataset");
  std::string gen_out;
  cmd_gen->add_option("--out", gen_out, "dataset directory (overrides config)");

  // train
  auto* cmd_train = app.add_subcommand("train", "run one training stage");
  std::string stage_str = "1.1";
  cmd_train->add_option("--stage", stage_str, "1.1 | 1.2 | 2 | finetune")->required();
  std::string ablate_str;
  cmd_train->add_option("--ablate", ablate_str,
                        "no-rsa | no-dec | paired-only | unpaired-only | mixed");
  bool resume = false;
  cmd_train->add_flag("--resume", resume, "continue from this stage's checkpoint");
  std::string run_dir_override, data_dir_override;
  std::uint64_t seed_override = 0;
  bool seed_given = false;
  cmd_train->add_option("--run-dir", run_dir_override, "run directory override");
  cmd_train->add_option("--data", data_dir_override, "dataset directory override");
  cmd_train->add_option("--seed", seed_override, "seed override")
      ->each([&](const std::string&) { seed_given = true; });

  // eval
  auto* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ckpt_path, protocol, encoder_name, report_out;
  cmd_eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  cmd_eval
      ->add_option("--protocol", protocol,
                   "verify-rsa | verify-fixed8x | identify | probe | "
                   "psnr-baseline | feature-distance")
      ->required();
  cmd_eval->add_option("--encoder", encoder_name, "enc_l (default) or enc_h");
  cmd_eval->add_option("--out", report_out, "report file (default: stdout)");
  cmd_eval->add_option("--data", data_dir_override, "dataset directory override");

  // normalize
  auto* cmd_norm = app.add_subcommand("normalize", "normalize one image");
  std::string norm_in, norm_out;
  cmd_norm->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  cmd_norm->add_option("--input", norm_in, "input image (16-bit PGM)")->required();
  cmd_norm->add_option("--output", norm_out, "output image path")->required();

  // gradcheck
  auto* cmd_grad = app.add_subcommand("gradcheck", "finite-difference release gate");
  std::uint64_t grad_seed = 2024;
  cmd_grad->add_option("--seed", grad_seed, "suite seed");

  // report
  auto* cmd_report = app.add_subcommand("report", "summarize a run directory");
  cmd_report->add_option("--run-dir", run_dir_override, "run directory override");

  CLI11_PARSE(app, argc, argv);

  try {
    fan::RunConfig cfg = load_or_default(config_path);
    if (!run_dir_override.empty()) cfg.paths.run_dir = run_dir_override;
    if (!data_dir_override.empty()) cfg.paths.dataset_dir = data_dir_override;
    if (seed_given) cfg.seed = seed_override;
    resolve_run_root(cfg);
    cfg.validate();

    if (print_config) {
      std::cout << fan::config_to_string(cfg);
      return 0;
    }

    if (cmd_gen->parsed()) {
      if (!gen_out.empty()) cfg.paths.dataset_dir = gen_out;
      const fs::path manifest = fan::pipeline::gen_data<Real>(cfg);
      std::cout << "wrote " << manifest.string() << "\n";
      return 0;
    }

    if (cmd_train->parsed()) {
      const auto stage = parse_stage(stage_str);
      const auto ablation = fan::pipeline::parse_ablation(ablate_str);
      RunLock lock{fs::path(cfg.paths.run_dir)};
      auto outcome =
          fan::pipeline::train_stage_cmd<Real>(cfg, stage, ablation, resume);
      std::cout << "stage " << fan::train::stage_tag(stage) << " done: "
                << outcome.steps << " steps, checkpoint "
                << outcome.checkpoint.string() << "\n";
      return 0;
    }

    if (cmd_eval->parsed()) {
      fan::eval::EvalReport report =
          fan::pipeline::eval_cmd<Real>(cfg, ckpt_path, protocol, encoder_name);
      if (report_out.empty()) {
        std::cout << "# protocol=" << report.protocol << "\n";
        for (const auto& [k, v] : report.metrics) {
          std::printf("%s\t%.17g\n", k.c_str(), v);
        }
      } else {
        fan::eval::save_report(report, report_out);
        std::cout << "wrote " << report_out << "\n";
      }
      return 0;
    }

    if (cmd_norm->parsed()) {
      fan::pipeline::normalize_cmd<Real>(cfg, ckpt_path, norm_in, norm_out);
      std::cout << "wrote " << norm_out << "\n";
      return 0;
    }

    if (cmd_grad->parsed()) {
      return run_gradcheck(grad_seed);
    }

    if (cmd_report->parsed()) {
      std::cout << fan::pipeline::report_summary(cfg);
      return 0;
    }
  } catch (const fan::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const fan::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const fan::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fan::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return 0;
}
