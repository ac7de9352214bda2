// Command-line driver: train, compare, diagnose.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numeric>

#include <CLI11.hpp>

#include "cbn/checkpoint.hpp"
#include "cbn/compare.hpp"
#include "cbn/config.hpp"
#include "cbn/dataset.hpp"
#include "cbn/errors.hpp"
#include "cbn/oracles.hpp"
#include "cbn/suites.hpp"
#include "cbn/trainer.hpp"

namespace fs = std::filesystem;

namespace {

int run_train(const fs::path& config_path, std::optional<std::uint64_t> seed, std::optional<std::string> out,
              std::optional<fs::path> resume, std::optional<std::uint64_t> stop_after, bool quiet) {
  cbn::TrainOptions opts;
  opts.verbose = !quiet;
  opts.stop_after_steps = stop_after;
  cbn::TrainConfig config;
  if (resume) {
    opts.resume = resume;
    config = cbn::parse_config(cbn::load_checkpoint(*resume).config_json);
    if (!config_path.empty() || seed || out) {
      std::cerr << "note: --resume takes the config stored in the checkpoint; --config/--seed/--out are ignored\n";
    }
  } else {
    config = cbn::load_config(config_path);
    if (seed) config.seed = *seed;
    if (out) config.output_dir = *out;
  }
  const auto result = cbn::train(config, opts);
  std::printf("%s: %s after %llu steps, wrote %s\n", config.name.c_str(), result.completed ? "finished" : "stopped",
              static_cast<unsigned long long>(result.steps), result.output_dir.string().c_str());
  for (auto it = result.rows.rbegin(); it != result.rows.rend(); ++it) {
    if (it->split != "eval") continue;
    std::printf("epoch %zu eval loss %.4f top1 %.2f%%\n", it->epoch, it->loss, 100.0 * it->top1);
    break;
  }
  return 0;
}

int run_compare(const std::vector<std::string>& dirs, const std::string& csv_path) {
  std::vector<cbn::RunCurve> runs;
  for (const auto& d : dirs) runs.push_back(cbn::read_run(d));
  const auto summary = cbn::summarize(runs);
  std::cout << cbn::summary_text(summary);
  if (!csv_path.empty()) cbn::write_text(csv_path, cbn::summary_csv(summary));
  return 0;
}

int run_diagnose(const fs::path& config_path, std::size_t instances, std::size_t trials, std::uint64_t seed) {
  const auto config = cbn::load_config(config_path);
  bool ok = true;

  const auto sg = cbn::suites::stat_grad_suite(instances, seed);
  std::printf("stat-grad: %zu layers, max rel diff vs naive diag mu %.3g nu %.3g, vs finite diff %.3g, "
              "non-zero off-diagonal entries %zu (%.2fs)\n",
              sg.instances, sg.max_rel_diag_mu, sg.max_rel_diag_nu, sg.max_rel_fd, sg.offdiag_nonzero, sg.seconds);
  ok = ok && sg.pass();

  const auto ty = cbn::suites::taylor_suite(seed);
  std::printf("taylor: log-log slopes mean compensated %.3f stale %.3f, mean-square compensated %.3f stale %.3f; "
              "max compensated mean error %.3g (%zu exact zeros)\n",
              ty.slope_mu_comp, ty.slope_mu_stale, ty.slope_nu_comp, ty.slope_nu_stale, ty.max_mu_comp_error,
              ty.zero_mu_comp);

  const auto cl = cbn::suites::clamp_fuzz(trials, seed);
  std::printf("clamp: %zu aggregations, %zu clamped terms, violations nu %zu var %zu (%.2fs)\n", cl.trials,
              cl.clamped_terms, cl.nu_violations, cl.var_violations, cl.seconds);
  ok = ok && cl.nu_violations == 0 && cl.var_violations == 0;

  auto [train_set, eval_set] = cbn::load_dataset(config.dataset);
  cbn::Rng rng(config.seed);
  const std::uint64_t ipe = std::max<std::uint64_t>(1, train_set.size() / config.batch_size);
  auto graph = cbn::build_model(config, train_set.image_shape, train_set.classes, ipe, rng);
  const fs::path ckpt_path = fs::path(config.output_dir) / "checkpoint.bin";
  std::string source = "untrained";
  if (fs::exists(ckpt_path)) {
    auto sgd = cbn::make_sgd_state(graph);
    cbn::restore_checkpoint(cbn::load_checkpoint(ckpt_path), graph, sgd);
    source = ckpt_path.string();
  }
  const std::size_t count = std::min(config.diagnostics.batch_size, eval_set.size());
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const auto batch = cbn::make_batch(eval_set, idx, config.dataset, false, rng);
  const auto report = cbn::oracles::grad_ratio_all(graph, batch, 0);
  std::printf("grad ratios (%s network, %zu examples):\n", source.c_str(), count);
  for (const auto& r : report.rows) {
    std::printf("  normalizer %zu: mu prev1 %.4f nu prev1 %.4f", r.ordinal, r.mu_prev1, r.nu_prev1);
    if (r.mu_prev2) std::printf(" mu prev2 %.4f nu prev2 %.4f", *r.mu_prev2, *r.nu_prev2);
    std::printf("\n");
  }
  std::printf("  unweighted mean prev1: mu %.4f nu %.4f\n", report.mean_mu_prev1(), report.mean_nu_prev1());
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Normalization experiments with cross-iteration batch statistics"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "Train one configuration");
  std::string config_path;
  std::optional<std::uint64_t> seed, stop_after;
  std::optional<std::string> out;
  std::optional<std::string> resume;
  bool quiet = false;
  train->add_option("--config", config_path, "JSON config file");
  train->add_option("--seed", seed, "Override the config seed");
  train->add_option("--out", out, "Override the output directory");
  train->add_option("--resume", resume, "Continue from a checkpoint file");
  train->add_option("--stop-after", stop_after, "Checkpoint and exit after this many optimizer steps");
  train->add_flag("--quiet", quiet, "No per-epoch progress on stderr");

  auto* compare = app.add_subcommand("compare", "Summarize finished runs (mean and std per method)");
  std::vector<std::string> run_dirs;
  std::string csv_path;
  compare->add_option("runs", run_dirs, "Run directories")->required();
  compare->add_option("--csv", csv_path, "Also write the per-epoch summary here");

  auto* diagnose = app.add_subcommand("diagnose", "Run the gradient, Taylor and clamp suites and gradient ratios");
  std::string diag_config;
  std::size_t instances = 200, trials = 100000;
  std::uint64_t diag_seed = 1;
  diagnose->add_option("--config", diag_config, "JSON config file")->required();
  diagnose->add_option("--layers", instances, "Random layers for the gradient check");
  diagnose->add_option("--trials", trials, "Fuzzed aggregations");
  diagnose->add_option("--seed", diag_seed, "Suite seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      if (config_path.empty() && !resume) throw cbn::ArgumentError("train needs --config or --resume");
      std::optional<fs::path> resume_path;
      if (resume) resume_path = *resume;
      return run_train(config_path, seed, out, resume_path, stop_after, quiet);
    }
    if (*compare) return run_compare(run_dirs, csv_path);
    if (*diagnose) return run_diagnose(diag_config, instances, trials, diag_seed);
  } catch (const cbn::ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const cbn::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
