#include "cbn/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <numeric>

#include <json.hpp>

#include "cbn/checkpoint.hpp"
#include "cbn/compensation.hpp"
#include "cbn/errors.hpp"
#include "cbn/oracles.hpp"
#include "cbn/schedule.hpp"

namespace cbn {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::uint64_t iterations_per_epoch(const TrainConfig& config, const Dataset& train_set) {
  const std::uint64_t n = train_set.size() / config.batch_size;
  if (n == 0) {
    throw ArgumentError("batch_size " + std::to_string(config.batch_size) + " exceeds the training set (" +
                        std::to_string(train_set.size()) + " examples)");
  }
  return n;
}

std::size_t first_effective_window(const NetworkGraph& graph) {
  for (const auto& n : graph.norms) {
    if (n) return effective_window(n->iteration, n->window, n->burn_in_iterations, n->records.size());
  }
  return 1;
}

std::vector<std::pair<std::string, double>> diag_columns(const NetworkGraph& graph, const Dataset& eval_set,
                                                        const TrainConfig& config, std::size_t epoch) {
  const std::size_t count = std::min(config.diagnostics.batch_size, eval_set.size());
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng unused(0);
  const Tensor batch = make_batch(eval_set, idx, config.dataset, false, unused);
  const auto report = oracles::grad_ratio_all(graph, batch, epoch);

  std::vector<std::pair<std::string, double>> cols;
  for (const auto& r : report.rows) {
    const std::string l = "_l" + std::to_string(r.ordinal);
    cols.emplace_back("diag_mu" + l + "_prev1", r.mu_prev1);
    cols.emplace_back("diag_nu" + l + "_prev1", r.nu_prev1);
    if (r.mu_prev2) cols.emplace_back("diag_mu" + l + "_prev2", *r.mu_prev2);
    if (r.nu_prev2) cols.emplace_back("diag_nu" + l + "_prev2", *r.nu_prev2);
  }
  return cols;
}

void write_outputs(const std::filesystem::path& dir, const TrainConfig& config, const std::vector<MetricsRow>& rows,
                   const TrainResult& result) {
  write_text(dir / "metrics.csv", metrics_csv(rows));
  write_text(dir / "timing.csv", timing_csv(rows));

  nlohmann::ordered_json run;
  run["name"] = config.name;
  run["seed"] = config.seed;
  run["normalizer"] = to_string(config.normalizer.kind);
  run["batch_size"] = config.batch_size;
  run["epochs"] = config.epochs;
  run["completed"] = result.completed;
  run["steps"] = result.steps;
  run["train_step_seconds"] = result.train_step_seconds;
  run["eval_seconds"] = result.eval_seconds;
  for (auto it = rows.rbegin(); it != rows.rend(); ++it) {
    if (it->split == "eval") {
      run["final_eval_top1"] = it->top1;
      run["final_eval_loss"] = it->loss;
      break;
    }
  }
  write_text(dir / "run.json", run.dump(2) + "\n");
}

}  // namespace

NetworkGraph build_model(const TrainConfig& config, const Shape& image_shape, std::size_t classes,
                         std::uint64_t iters_per_epoch, Rng& rng) {
  const auto& nc = config.normalizer;
  NormSpec norm;
  norm.kind = nc.kind;
  norm.window = nc.kind == NormKind::bn ? 1
                : nc.window == 0        ? suggested_window(static_cast<std::int64_t>(config.batch_size))
                                        : nc.window;
  norm.burn_in_iterations = static_cast<std::uint64_t>(std::llround(nc.burn_in_epochs * double(iters_per_epoch)));
  norm.config = BnConfig{nc.epsilon, nc.decay};
  norm.taylor_backprop = nc.taylor_backprop;

  std::vector<LayerSpec> layers;
  if (config.model == "desk4") {
    layers = desk_cnn_layers(image_shape, norm, classes);
  } else if (config.model == "tiny") {
    layers = tiny_cnn_layers(norm, classes);
  } else {
    throw ArgumentError("unknown model preset '" + config.model + "' (expected desk4 or tiny)");
  }
  return build_network(image_shape, std::move(layers), rng);
}

EvalResult evaluate_dataset(const NetworkGraph& graph, const Dataset& data, std::size_t batch_size) {
  EvalResult r;
  if (data.size() == 0) return r;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  Rng unused(0);
  DatasetSpec plain;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor logits = evaluate(graph, make_batch(data, idx, plain, false, unused));
    const auto loss = softmax_cross_entropy(logits, batch_labels(data, idx));
    loss_sum += loss.loss * double(idx.size());
    correct += loss.correct;
  }
  r.loss = loss_sum / double(data.size());
  r.top1 = double(correct) / double(data.size());
  return r;
}

TrainResult train(const TrainConfig& config, const TrainOptions& options) {
  validate(config);
  const auto [train_set, eval_set] = load_dataset(config.dataset);
  return train(config, train_set, eval_set, options);
}

TrainResult train(const TrainConfig& config_in, const Dataset& train_set, const Dataset& eval_set,
                  const TrainOptions& options) {
  std::optional<Checkpoint> ckpt;
  TrainConfig config = config_in;
  if (options.resume) {
    ckpt = load_checkpoint(*options.resume);
    config = parse_config(ckpt->config_json);
  }
  validate(config);
  const std::string config_json = config_to_json(config);

  const std::uint64_t ipe = iterations_per_epoch(config, train_set);
  const std::uint64_t total_steps = ipe * config.epochs;
  std::vector<std::uint64_t> milestones;
  for (auto e : config.lr_milestones) milestones.push_back(e * ipe);
  const LrSchedule schedule = parse_lr_schedule(config.lr_schedule);

  Rng rng(config.seed);
  NetworkGraph graph = build_model(config, train_set.image_shape, train_set.classes, ipe, rng);
  SgdState sgd = make_sgd_state(graph);
  TrainProgress progress;
  std::vector<MetricsRow> rows;
  if (ckpt) {
    restore_checkpoint(*ckpt, graph, sgd);
    rng.restore(ckpt->rng);
    progress = ckpt->progress;
    rows = ckpt->rows;
  }

  const std::filesystem::path out_dir = config.output_dir;
  if (options.write_outputs) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw std::runtime_error("cannot create output directory " + out_dir.string() + ": " + ec.message());
    write_text(out_dir / "config.json", config_json + "\n");
  }

  TrainResult result;
  result.output_dir = out_dir;
  const SgdParams base{0.0, config.momentum, config.weight_decay};
  const auto run_start = Clock::now() - std::chrono::duration_cast<Clock::duration>(
                                            std::chrono::duration<double>(progress.elapsed));
  double step_time = 0.0, eval_time = 0.0;
  std::uint64_t steps_here = 0, evals_here = 0;

  auto finish = [&](bool completed) {
    result.completed = completed;
    result.rows = rows;
    result.steps = progress.global_step;
    result.train_step_seconds = steps_here ? step_time / double(steps_here) : 0.0;
    result.eval_seconds = evals_here ? eval_time / double(evals_here) : 0.0;
    if (options.write_outputs) {
      progress.elapsed = seconds_since(run_start);
      save_checkpoint(out_dir / "checkpoint.bin", capture_checkpoint(config_json, graph, sgd, rng, progress, rows));
      write_outputs(out_dir, config, rows, result);
    }
    return result;
  };

  std::vector<std::size_t> idx(config.batch_size);
  for (; progress.epoch < config.epochs; ++progress.epoch) {
    if (progress.iter_in_epoch == 0) {
      const auto perm = rng.permutation(train_set.size());
      progress.permutation.assign(perm.begin(), perm.end());
      progress.loss_sum = 0.0;
      progress.correct = 0;
      progress.seen = 0;
    }
    for (; progress.iter_in_epoch < ipe; ++progress.iter_in_epoch) {
      if (options.stop_after_steps && progress.global_step >= *options.stop_after_steps) return finish(false);

      const auto t0 = Clock::now();
      for (std::size_t b = 0; b < config.batch_size; ++b) {
        idx[b] = static_cast<std::size_t>(progress.permutation[progress.iter_in_epoch * config.batch_size + b]);
      }
      const Tensor batch = make_batch(train_set, idx, config.dataset, true, rng);
      auto fr = forward(graph, batch, Mode::train);
      const auto loss = softmax_cross_entropy(fr.logits, batch_labels(train_set, idx));
      const Gradients grads = backward(graph, fr.trace, loss.grad);
      SgdParams p = base;
      p.lr = lr_at(schedule, config.base_lr, config.batch_size, progress.global_step, total_steps, milestones);
      sgd_step(graph, grads, sgd, p);
      step_time += seconds_since(t0);
      ++steps_here;

      if (!std::isfinite(loss.loss)) {
        throw std::runtime_error("training diverged at step " + std::to_string(progress.global_step));
      }
      progress.loss_sum += loss.loss * double(config.batch_size);
      progress.correct += loss.correct;
      progress.seen += config.batch_size;
      ++progress.global_step;
    }

    const std::size_t epoch_no = progress.epoch + 1;
    MetricsRow tr;
    tr.epoch = epoch_no;
    tr.iteration = progress.global_step;
    tr.split = "train";
    tr.loss = progress.loss_sum / double(progress.seen);
    tr.top1 = double(progress.correct) / double(progress.seen);
    tr.wall_time = seconds_since(run_start);
    tr.effective_window = first_effective_window(graph);
    rows.push_back(tr);

    const auto t0 = Clock::now();
    const EvalResult ev = evaluate_dataset(graph, eval_set, config.eval_batch_size);
    eval_time += seconds_since(t0);
    ++evals_here;
    MetricsRow er = tr;
    er.split = "eval";
    er.loss = ev.loss;
    er.top1 = ev.top1;
    if (config.diagnostics.enabled && epoch_no % config.diagnostics.every_epochs == 0) {
      er.diag = diag_columns(graph, eval_set, config, epoch_no);
    }
    er.wall_time = seconds_since(run_start);
    rows.push_back(er);

    if (options.verbose) {
      std::cerr << config.name << " seed " << config.seed << " epoch " << epoch_no << "/" << config.epochs
                << " train_loss " << format_double(tr.loss) << " eval_top1 " << format_double(ev.top1) << "\n";
    }
    progress.iter_in_epoch = 0;
  }
  return finish(true);
}

}  // namespace cbn
