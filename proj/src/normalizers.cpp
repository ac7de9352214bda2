#include "cbn/normalizers.hpp"

#include <cmath>

#include "cbn/errors.hpp"
#include "cbn/kernels.hpp"

namespace cbn {

std::string to_string(NormKind kind) {
  switch (kind) {
    case NormKind::bn: return "bn";
    case NormKind::naive_cbn: return "naive-cbn";
    case NormKind::cbn: return "cbn";
  }
  return "?";
}

NormKind parse_norm_kind(const std::string& name) {
  if (name == "bn") return NormKind::bn;
  if (name == "naive-cbn") return NormKind::naive_cbn;
  if (name == "cbn") return NormKind::cbn;
  throw ArgumentError("unknown normalizer kind '" + name + "' (expected bn, naive-cbn or cbn)");
}

CbnState make_norm_state(NormKind kind, std::size_t channels, std::size_t window, std::uint64_t burn_in_iterations,
                         BnConfig config) {
  if (channels == 0) throw ArgumentError("normalizer needs at least one channel");
  if (window == 0) throw ArgumentError("window must be positive");
  if (!(config.epsilon > 0.0)) throw ArgumentError("epsilon must be positive");
  if (!(config.decay > 0.0 && config.decay < 1.0)) throw ArgumentError("decay must lie in (0, 1)");
  CbnState s;
  s.kind = kind;
  s.window = kind == NormKind::bn ? 1 : window;
  s.burn_in_iterations = burn_in_iterations;
  s.config = config;
  s.affine.gamma = Tensor({channels}, 1.0);
  s.affine.beta = Tensor({channels}, 0.0);
  s.running_mean.assign(channels, 0.0);
  s.running_var.assign(channels, 1.0);
  return s;
}

namespace {

struct Layout {
  std::size_t batch, channels, spatial;
};

Layout layout_of(const Tensor& x, const CbnState& state) {
  if (x.rank() != 2 && x.rank() != 4) throw ShapeError("normalizer expects N x C or N x C x H x W, got " + shape_string(x.shape()));
  const std::size_t spatial = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  if (x.dim(1) != state.channels()) {
    throw ShapeError("normalizer has " + std::to_string(state.channels()) + " channels, input " + shape_string(x.shape()));
  }
  if (x.dim(0) * spatial == 0) throw ShapeError("normalizer input has no positions per channel");
  return {x.dim(0), x.dim(1), spatial};
}

ChannelStats moments(const Tensor& x, const Layout& l) {
  ChannelStats s;
  s.mean.resize(l.channels);
  s.mean_sq.resize(l.channels);
  kernels::channel_moments(l.batch, l.channels, l.spatial, x.data(), s.mean, s.mean_sq);
  return s;
}

NormForward normalize(const Tensor& x, const Layout& l, ChannelStats current, std::vector<ChannelStats> past,
                      const CbnState& state) {
  NormForward f;
  NormCache& c = f.cache;
  c.kind = state.kind;
  c.shape = x.shape();
  c.batch = l.batch;
  c.channels = l.channels;
  c.spatial = l.spatial;
  c.input = x;
  c.aggregated = aggregate(current, past);
  c.current = std::move(current);
  c.past = std::move(past);
  c.gamma = state.affine.gamma.values();
  c.inv_std.resize(l.channels);
  for (std::size_t ch = 0; ch < l.channels; ++ch) {
    c.inv_std[ch] = 1.0 / std::sqrt(c.aggregated.variance[ch] + state.config.epsilon);
  }
  c.normalized = Tensor(x.shape());
  f.output = Tensor(x.shape());
  const auto xs = x.data();
  auto xh = c.normalized.data();
  auto y = f.output.data();
  const auto beta = state.affine.beta.data();
  for (std::size_t n = 0; n < l.batch; ++n) {
    for (std::size_t ch = 0; ch < l.channels; ++ch) {
      const double mu = c.aggregated.mean[ch], s = c.inv_std[ch], g = c.gamma[ch], b = beta[ch];
      const std::size_t base = (n * l.channels + ch) * l.spatial;
      for (std::size_t i = 0; i < l.spatial; ++i) {
        const double v = (xs[base + i] - mu) * s;
        xh[base + i] = v;
        y[base + i] = g * v + b;
      }
    }
  }
  return f;
}

void update_running(CbnState& state, const AggregatedStats& agg) {
  const double rho = state.config.decay;
  for (std::size_t ch = 0; ch < state.channels(); ++ch) {
    state.running_mean[ch] = rho * state.running_mean[ch] + (1.0 - rho) * agg.mean[ch];
    state.running_var[ch] = rho * state.running_var[ch] + (1.0 - rho) * agg.variance[ch];
  }
  state.has_running_stats = true;
}

void push_record(CbnState& state, std::shared_ptr<const IterationRecord> record) {
  state.records.push_front(std::move(record));
  while (state.records.size() > state.window - 1) state.records.pop_back();
}

void require_kind(const CbnState& state, NormKind kind) {
  if (state.kind != kind) {
    throw StateError("normalizer state is " + to_string(state.kind) + ", called as " + to_string(kind));
  }
}

}  // namespace

NormForward bn_train_forward(const Tensor& x, CbnState& state, StateUpdate update) {
  const Layout l = layout_of(x, state);
  NormForward f = normalize(x, l, moments(x, l), {}, state);
  f.cache.kind = NormKind::bn;
  if (update == StateUpdate::commit) {
    update_running(state, f.cache.aggregated);
    ++state.iteration;
  }
  return f;
}

NormForward cbn_train_forward(const Tensor& x, const Tensor& weight, const Tensor& layer_input,
                              ConvGeometry geometry, CbnState& state, StateUpdate update) {
  require_kind(state, NormKind::cbn);
  const Layout l = layout_of(x, state);
  if (weight.dim(0) != l.channels) {
    throw StateError("bound weight " + shape_string(weight.shape()) + " does not produce " +
                     std::to_string(l.channels) + " channels");
  }
  for (const auto& r : state.records) {
    if (r->weight_snapshot.shape() != weight.shape()) {
      throw StateError("stored record weight " + shape_string(r->weight_snapshot.shape()) + " differs from " +
                       shape_string(weight.shape()) + "; normalizer was rebound");
    }
  }
  const std::size_t k =
      effective_window(state.iteration, state.window, state.burn_in_iterations, state.records.size());
  std::vector<ChannelStats> past;
  std::vector<std::shared_ptr<const IterationRecord>> used;
  for (std::size_t tau = 1; tau < k; ++tau) {
    used.push_back(state.records[tau - 1]);
    past.push_back(compensate(*used.back(), weight));
  }
  ChannelStats current = moments(x, l);
  NormForward f = normalize(x, l, current, std::move(past), state);
  f.cache.used_records = std::move(used);
  f.cache.taylor_backprop = state.taylor_backprop;

  if (update == StateUpdate::commit) {
    if (state.window > 1) {
      auto rec = std::make_shared<IterationRecord>();
      rec->iteration = state.iteration;
      rec->stats = std::move(current);
      rec->grad_mean = stat_grad_mu(layer_input, weight.shape(), geometry);
      rec->grad_mean_sq = stat_grad_nu(layer_input, weight, geometry, x);
      rec->weight_snapshot = weight;
      push_record(state, std::move(rec));
    }
    update_running(state, f.cache.aggregated);
    ++state.iteration;
  }
  return f;
}

NormForward naive_cbn_train_forward(const Tensor& x, CbnState& state, StateUpdate update) {
  require_kind(state, NormKind::naive_cbn);
  const Layout l = layout_of(x, state);
  const std::size_t k =
      effective_window(state.iteration, state.window, state.burn_in_iterations, state.records.size());
  std::vector<ChannelStats> past;
  for (std::size_t tau = 1; tau < k; ++tau) {
    const auto& r = *state.records[tau - 1];
    if (r.stats.channels() != l.channels) throw StateError("stored record channel extent differs from input");
    past.push_back(r.stats);
  }
  ChannelStats current = moments(x, l);
  NormForward f = normalize(x, l, current, std::move(past), state);

  if (update == StateUpdate::commit) {
    if (state.window > 1) {
      auto rec = std::make_shared<IterationRecord>();
      rec->iteration = state.iteration;
      rec->stats = std::move(current);
      push_record(state, std::move(rec));
    }
    update_running(state, f.cache.aggregated);
    ++state.iteration;
  }
  return f;
}

NormGrads cbn_backward(const NormCache& c, const Tensor& grad_output) {
  if (grad_output.shape() != c.shape) {
    throw ShapeError("gradient " + shape_string(grad_output.shape()) + " does not match normalizer output " +
                     shape_string(c.shape));
  }
  const std::size_t C = c.channels;
  const std::size_t k = c.aggregated.window;
  const double inv_k = 1.0 / static_cast<double>(k);
  const double inv_m = 1.0 / static_cast<double>(c.batch * c.spatial);

  NormGrads g;
  g.input = Tensor(c.shape);
  g.gamma = Tensor({C});
  g.beta = Tensor({C});
  const auto dy = grad_output.data();
  const auto xs = c.input.data();
  const auto xh = c.normalized.data();
  auto dx = g.input.data();

  // Gradients w.r.t. the aggregated mean and second moment, per channel.
  std::vector<double> d_mean(C), d_mean_sq(C);
  for (std::size_t ch = 0; ch < C; ++ch) {
    const double mu = c.aggregated.mean[ch];
    const double s = c.inv_std[ch];
    const double gam = c.gamma[ch];
    double sum_dy = 0.0, sum_dy_xh = 0.0, a = 0.0, b = 0.0;
    for (std::size_t n = 0; n < c.batch; ++n) {
      const std::size_t base = (n * C + ch) * c.spatial;
      for (std::size_t i = 0; i < c.spatial; ++i) {
        const double d = dy[base + i];
        const double dxh = d * gam;
        sum_dy += d;
        sum_dy_xh += d * xh[base + i];
        a += dxh;
        b += dxh * (xs[base + i] - mu);
      }
    }
    g.beta[ch] = sum_dy;
    g.gamma[ch] = sum_dy_xh;
    const double d_var = -0.5 * s * s * s * b;
    d_mean[ch] = -s * a - 2.0 * mu * d_var;
    d_mean_sq[ch] = d_var;

    // Current-iteration term: x enters through its own mean and mean_sq.
    double d_mu0 = d_mean[ch] * inv_k;
    double d_nu0 = 0.0;
    if (c.aggregated.is_clamped(0, ch)) {
      d_mu0 += d_mean_sq[ch] * inv_k * 2.0 * c.current.mean[ch];
    } else {
      d_nu0 = d_mean_sq[ch] * inv_k;
    }
    for (std::size_t n = 0; n < c.batch; ++n) {
      const std::size_t base = (n * C + ch) * c.spatial;
      for (std::size_t i = 0; i < c.spatial; ++i) {
        dx[base + i] = s * gam * dy[base + i] + d_mu0 * inv_m + d_nu0 * 2.0 * xs[base + i] * inv_m;
      }
    }
  }

  // Past statistics are constants; with compensation they still depend
  // linearly on the bound layer's current weight.
  if (c.kind == NormKind::cbn && c.taylor_backprop && !c.used_records.empty()) {
    const auto& first = *c.used_records.front();
    g.weight_extra = Tensor(first.weight_snapshot.shape());
    auto gw = g.weight_extra.data();
    const std::size_t block = first.grad_mean.size();
    for (std::size_t tau = 1; tau < k; ++tau) {
      const IterationRecord& rec = *c.used_records[tau - 1];
      const ChannelStats& comp = c.past[tau - 1];
      const auto g_mu = rec.grad_mean.data();
      const auto g_nu = rec.grad_mean_sq.data();
      for (std::size_t ch = 0; ch < C; ++ch) {
        double d_mu = d_mean[ch] * inv_k;
        double d_nu = 0.0;
        if (c.aggregated.is_clamped(tau, ch)) {
          d_mu += d_mean_sq[ch] * inv_k * 2.0 * comp.mean[ch];
        } else {
          d_nu = d_mean_sq[ch] * inv_k;
        }
        for (std::size_t e = 0; e < block; ++e) {
          gw[ch * block + e] += d_mu * g_mu[e] + d_nu * g_nu[ch * block + e];
        }
      }
    }
  }
  return g;
}

NormGrads bn_backward(const NormCache& cache, const Tensor& grad_output) { return cbn_backward(cache, grad_output); }

Tensor eval_forward(const Tensor& x, const CbnState& state) {
  if (!state.has_running_stats) throw StateError("eval_forward called before any training step");
  const Layout l = layout_of(x, state);
  Tensor y(x.shape());
  const auto xs = x.data();
  auto out = y.data();
  for (std::size_t n = 0; n < l.batch; ++n) {
    for (std::size_t ch = 0; ch < l.channels; ++ch) {
      const double mu = state.running_mean[ch];
      const double s = 1.0 / std::sqrt(state.running_var[ch] + state.config.epsilon);
      const double g = state.affine.gamma[ch], b = state.affine.beta[ch];
      const std::size_t base = (n * l.channels + ch) * l.spatial;
      for (std::size_t i = 0; i < l.spatial; ++i) out[base + i] = g * ((xs[base + i] - mu) * s) + b;
    }
  }
  return y;
}

}  // namespace cbn
