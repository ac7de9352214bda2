#include "cbn/compensation.hpp"

#include <algorithm>
#include <cmath>

#include "cbn/errors.hpp"

namespace cbn {

Tensor as_spatial(const Tensor& t) {
  if (t.rank() == 4) return t;
  if (t.rank() == 2) return t.reshaped({t.dim(0), t.dim(1), 1, 1});
  throw ShapeError("expected rank 2 or 4, got " + shape_string(t.shape()));
}

namespace {

Shape spatial_shape(const Shape& s) {
  if (s.size() == 4) return s;
  if (s.size() == 2) return {s[0], s[1], 1, 1};
  throw ShapeError("expected rank 2 or 4 weight, got " + shape_string(s));
}

}  // namespace

Tensor stat_grad_mu(const Tensor& layer_input, const Shape& weight_shape, ConvGeometry geometry) {
  const Tensor input = as_spatial(layer_input);
  const Shape w = spatial_shape(weight_shape);
  const auto d = conv_dims(input.shape(), w, geometry);
  Tensor out({d.in_channels, d.kernel_h, d.kernel_w});
  kernels::conv2d_patch_mean(d, input.data(), out.data());
  return out;
}

Tensor stat_grad_nu(const Tensor& layer_input, const Tensor& weight, ConvGeometry geometry,
                    const Tensor& layer_output) {
  const Tensor input = as_spatial(layer_input);
  const Tensor output = as_spatial(layer_output);
  const Shape w = spatial_shape(weight.shape());
  const auto d = conv_dims(input.shape(), w, geometry);
  const Shape expected{d.batch, d.out_channels, d.out_h(), d.out_w()};
  if (output.shape() != expected) {
    throw ShapeError("layer output " + shape_string(output.shape()) + " does not match expected " +
                     shape_string(expected));
  }
  Tensor out(w);
  kernels::conv2d_backward_weight(d, input.data(), output.data(), out.data());
  const double scale = 2.0 / static_cast<double>(d.positions());
  for (double& v : out.data()) v *= scale;
  return out;
}

ChannelStats compensate(const IterationRecord& record, const Tensor& current_weight) {
  if (!record.has_gradients()) throw StateError("record carries no statistic gradients");
  if (current_weight.shape() != record.weight_snapshot.shape()) {
    throw StateError("weight shape " + shape_string(current_weight.shape()) + " differs from recorded " +
                     shape_string(record.weight_snapshot.shape()) + "; normalizer was rebound");
  }
  const std::size_t c_out = record.stats.channels();
  const std::size_t block = record.grad_mean.size();
  if (current_weight.size() != c_out * block || record.grad_mean_sq.size() != c_out * block) {
    throw StateError("record gradient shapes are inconsistent with its weight snapshot");
  }
  ChannelStats out = record.stats;
  const auto g_mu = record.grad_mean.data();
  const auto g_nu = record.grad_mean_sq.data();
  const auto now = current_weight.data();
  const auto then = record.weight_snapshot.data();
  for (std::size_t j = 0; j < c_out; ++j) {
    double d_mu = 0.0, d_nu = 0.0;
    for (std::size_t e = 0; e < block; ++e) {
      const double delta = now[j * block + e] - then[j * block + e];
      d_mu += g_mu[e] * delta;
      d_nu += g_nu[j * block + e] * delta;
    }
    out.mean[j] += d_mu;
    out.mean_sq[j] += d_nu;
  }
  return out;
}

AggregatedStats aggregate(const ChannelStats& current, std::span<const ChannelStats> past) {
  const std::size_t c = current.channels();
  if (current.mean_sq.size() != c) throw ShapeError("current mean and mean_sq extents differ");
  for (const auto& p : past) {
    if (p.mean.size() != c || p.mean_sq.size() != c) throw ShapeError("past statistics channel extent differs");
  }
  const std::size_t k = past.size() + 1;
  AggregatedStats out;
  out.window = k;
  out.mean.assign(c, 0.0);
  out.mean_sq.assign(c, 0.0);
  out.variance.assign(c, 0.0);
  out.stddev.assign(c, 0.0);
  out.clamped.assign(k * c, 0);

  auto term = [&](std::size_t t) -> const ChannelStats& { return t == 0 ? current : past[t - 1]; };
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s_mu = 0.0, s_nu = 0.0;
    for (std::size_t t = 0; t < k; ++t) {
      const double mu = term(t).mean[ch];
      const double nu = term(t).mean_sq[ch];
      const double mu2 = mu * mu;
      s_mu += mu;
      // Ties keep the nu branch.
      if (nu < mu2) {
        s_nu += mu2;
        out.clamped[t * c + ch] = 1;
      } else {
        s_nu += nu;
      }
    }
    const double mean = s_mu / static_cast<double>(k);
    // Jensen gives mean_sq >= mean^2 in exact arithmetic; the outer max
    // removes the few-ulp rounding residue so the invariant holds in floats.
    const double mean_sq = std::max(s_nu / static_cast<double>(k), mean * mean);
    const double var = mean_sq - mean * mean;
    out.mean[ch] = mean;
    out.mean_sq[ch] = mean_sq;
    out.variance[ch] = var;
    out.stddev[ch] = std::sqrt(var);
  }
  return out;
}

std::size_t effective_window(std::uint64_t iteration, std::size_t window, std::uint64_t burn_in_iterations,
                             std::size_t stored_records) {
  if (iteration < burn_in_iterations) return 1;
  return std::min(std::max<std::size_t>(window, 1), 1 + stored_records);
}

std::size_t suggested_window(std::int64_t batch_size_per_device) {
  if (batch_size_per_device < 1) throw ArgumentError("batch size must be at least 1");
  const auto bs = static_cast<std::size_t>(batch_size_per_device);
  return std::min<std::size_t>((16 + bs - 1) / bs, 8);
}

}  // namespace cbn
