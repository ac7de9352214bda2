#pragma once

// Batch normalization and its cross-iteration variants. All three kinds share
// one state type and one backward routine; BN is the window-1 case.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <memory>
#include <string>
#include <vector>

#include "cbn/compensation.hpp"
#include "cbn/ops.hpp"
#include "cbn/tensor.hpp"

namespace cbn {

enum class NormKind { bn, naive_cbn, cbn };

std::string to_string(NormKind kind);
NormKind parse_norm_kind(const std::string& name);

struct BnConfig {
  double epsilon = 1e-5;
  double decay = 0.9;  // running = decay * running + (1 - decay) * batch
};

struct AffineParams {
  Tensor gamma;  // {C}, initialized to 1
  Tensor beta;   // {C}, initialized to 0
};

/// Per-layer normalizer state.
///
/// `records` holds at most `window - 1` entries, most recent first, so
/// records[tau - 1] was taken tau optimizer steps before the current one.
/// `iteration` counts committed training steps and drives the burn-in.
struct CbnState {
  NormKind kind = NormKind::bn;
  std::size_t window = 1;
  std::uint64_t burn_in_iterations = 0;
  bool taylor_backprop = true;
  BnConfig config;

  std::uint64_t iteration = 0;
  std::deque<std::shared_ptr<const IterationRecord>> records;
  AffineParams affine;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  bool has_running_stats = false;

  std::size_t channels() const { return affine.gamma.size(); }
};

CbnState make_norm_state(NormKind kind, std::size_t channels, std::size_t window = 1,
                         std::uint64_t burn_in_iterations = 0, BnConfig config = {});

/// Whether a training forward pass advances the state (push record, update
/// running statistics, bump the iteration) or leaves it untouched.
enum class StateUpdate { commit, frozen };

/// Everything backward needs from one training forward pass.
struct NormCache {
  NormKind kind = NormKind::bn;
  Shape shape;
  std::size_t batch = 0;
  std::size_t channels = 0;
  std::size_t spatial = 0;
  Tensor input;
  Tensor normalized;  // x-hat
  std::vector<double> inv_std;
  std::vector<double> gamma;
  ChannelStats current;
  std::vector<ChannelStats> past;  // compensated (cbn) or stale (naive) terms used
  std::vector<std::shared_ptr<const IterationRecord>> used_records;
  AggregatedStats aggregated;
  bool taylor_backprop = false;
};

struct NormForward {
  Tensor output;
  NormCache cache;
};

struct NormGrads {
  Tensor input;
  Tensor weight_extra;  // gradient w.r.t. the bound layer's weight through the Taylor terms; empty if none
  Tensor gamma;
  Tensor beta;
};

NormForward bn_train_forward(const Tensor& x, CbnState& state, StateUpdate update = StateUpdate::commit);

/// Cross-iteration normalization of `x`, the output of the bound layer with
/// weight `weight` applied to `layer_input` under `geometry`.
NormForward cbn_train_forward(const Tensor& x, const Tensor& weight, const Tensor& layer_input,
                              ConvGeometry geometry, CbnState& state, StateUpdate update = StateUpdate::commit);

/// Cross-iteration normalization using stale past statistics without compensation.
NormForward naive_cbn_train_forward(const Tensor& x, CbnState& state, StateUpdate update = StateUpdate::commit);

NormGrads bn_backward(const NormCache& cache, const Tensor& grad_output);
NormGrads cbn_backward(const NormCache& cache, const Tensor& grad_output);

/// Normalization with the recorded running statistics. Does not touch state.
Tensor eval_forward(const Tensor& x, const CbnState& state);

}  // namespace cbn
