#pragma once

// Brute-force references. Nothing in here calls the optimized kernels: the
// loops are written out directly so they can check those kernels.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "cbn/compensation.hpp"
#include "cbn/network.hpp"
#include "cbn/ops.hpp"
#include "cbn/tensor.hpp"

namespace cbn::oracles {

/// A past batch kept verbatim so its statistics can be recomputed exactly.
struct ReplayBundle {
  Tensor layer_input;
  ConvGeometry geometry;
  Tensor weight_snapshot;
  std::uint64_t content_hash = 0;
};

std::uint64_t content_hash(const Tensor& t);
ReplayBundle make_replay_bundle(const Tensor& layer_input, ConvGeometry geometry, const Tensor& weight);

/// Mean and mean of squares of the layer output for the stored batch under `weight`.
ChannelStats replay_exact_stats(const ReplayBundle& bundle, const Tensor& weight);

/// Naive cross-correlation (rank-2 operands are treated as 1x1 spatial).
Tensor naive_conv(const Tensor& input, const Tensor& weight, ConvGeometry geometry);

struct FullStatJacobian {
  Tensor d_mean;     // C_out x C_out x C_in x K_h x K_w, [j, q, p, kh, kw]
  Tensor d_mean_sq;  // same layout
};

/// Full Jacobians of per-channel mean / mean_sq of `layer_output` w.r.t. the
/// layer weight, built entry by entry. Throws ArgumentError above 1e6 entries.
FullStatJacobian naive_stat_jacobian(const Tensor& layer_input, const Tensor& weight, const Tensor& layer_output,
                                     ConvGeometry geometry);

using VectorMap = std::function<std::vector<double>(const Tensor&)>;

/// Central differences; result is outputs x size(theta).
Tensor finite_diff(const VectorMap& f, const Tensor& theta, double h);

/// Ratios of statistic-gradient norms of one normalizer.
struct GradRatioRow {
  std::size_t epoch = 0;
  std::size_t layer = 0;    // normalizer's index in the graph
  std::size_t ordinal = 0;  // 1-based position among normalizers
  double mu_self = 0.0;     // ||d mu^l / d theta^l||_F
  double nu_self = 0.0;
  double mu_prev1 = 0.0;    // ||d mu^l / d theta^{l-1}||_F / mu_self
  double nu_prev1 = 0.0;
  std::optional<double> mu_prev2;
  std::optional<double> nu_prev2;
};

struct GradRatioReport {
  std::vector<GradRatioRow> rows;

  /// Unweighted mean of one ratio column over rows that have it.
  double mean_mu_prev1() const;
  double mean_nu_prev1() const;
};

/// Gradient-norm ratios for the normalizer at graph index `norm_layer`.
/// Prefix normalizers use the batch's own statistics; nothing in `graph`
/// changes. Requires at least one parameterized layer before the bound one.
GradRatioRow grad_ratio_diagnostic(const NetworkGraph& graph, const Tensor& batch, std::size_t norm_layer);

/// Rows for every normalizer deep enough to have a previous parameterized layer.
GradRatioReport grad_ratio_all(const NetworkGraph& graph, const Tensor& batch, std::size_t epoch);

}  // namespace cbn::oracles
