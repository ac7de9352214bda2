#pragma once

// Closed-form statistic gradients for a conv (or fully-connected) layer,
// first-order compensation of stale statistics, and clamped aggregation
// across the temporal window.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cbn/ops.hpp"
#include "cbn/tensor.hpp"

namespace cbn {

/// Per-channel first and second moments of one activation.
struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> mean_sq;

  std::size_t channels() const { return mean.size(); }
};

/// Snapshot kept for one past iteration of a normalizer.
///
/// `grad_mean` holds the shared diagonal block of d(mean)/d(weight) as a
/// C_in x K_h x K_w tensor: the block is the same for every output channel and
/// all off-diagonal blocks are zero. `grad_mean_sq` holds the diagonal blocks
/// of d(mean_sq)/d(weight) as C_out x C_in x K_h x K_w. Records built for the
/// uncompensated variant leave both gradients and the weight snapshot empty.
struct IterationRecord {
  std::uint64_t iteration = 0;  // optimizer step at which the record was taken
  ChannelStats stats;
  Tensor grad_mean;
  Tensor grad_mean_sq;
  Tensor weight_snapshot;

  bool has_gradients() const { return !grad_mean_sq.empty(); }
};

struct AggregatedStats {
  std::vector<double> mean;      // mu-bar
  std::vector<double> mean_sq;   // nu-bar
  std::vector<double> variance;  // sigma-bar^2 = nu-bar - mu-bar^2
  std::vector<double> stddev;
  // clamped[term * C + c] is 1 when max(nu, mu^2) picked mu^2 for that term.
  // Term 0 is the current iteration, term tau is the record of age tau.
  std::vector<std::uint8_t> clamped;
  std::size_t window = 1;

  bool is_clamped(std::size_t term, std::size_t channel) const { return clamped[term * mean.size() + channel] != 0; }
};

/// Views a rank-2 N x C activation or C_out x C_in weight as rank 4 with unit spatial extent.
Tensor as_spatial(const Tensor& t);

/// Shared diagonal block of d(mean)/d(weight) for a layer fed `layer_input`.
Tensor stat_grad_mu(const Tensor& layer_input, const Shape& weight_shape, ConvGeometry geometry);

/// Diagonal blocks of d(mean_sq)/d(weight): (2/m) sum_i x[i,j] * y[i+offset(eta), p].
/// `layer_output` is the (pre-normalization) output of the layer under `weight`.
Tensor stat_grad_nu(const Tensor& layer_input, const Tensor& weight, ConvGeometry geometry,
                    const Tensor& layer_output);

/// First-order estimate of a record's statistics under `current_weight`.
ChannelStats compensate(const IterationRecord& record, const Tensor& current_weight);

/// Averages the current statistics with compensated (or stale) past ones,
/// clamping each term's second moment to at least its squared mean.
AggregatedStats aggregate(const ChannelStats& current, std::span<const ChannelStats> past);

/// Window actually used at optimizer step `iteration`.
std::size_t effective_window(std::uint64_t iteration, std::size_t window, std::uint64_t burn_in_iterations,
                             std::size_t stored_records);

/// min(ceil(16 / batch_size), 8).
std::size_t suggested_window(std::int64_t batch_size_per_device);

}  // namespace cbn
