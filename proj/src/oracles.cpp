#include "cbn/oracles.hpp"

#include <cmath>

#include "cbn/errors.hpp"

namespace cbn::oracles {

std::uint64_t content_hash(const Tensor& t) {
  // FNV-1a over the shape words and raw value bytes.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (std::size_t d : t.shape()) {
    const std::uint64_t v = d;
    mix(&v, sizeof v);
  }
  mix(t.data().data(), t.size() * sizeof(double));
  return h;
}

ReplayBundle make_replay_bundle(const Tensor& layer_input, ConvGeometry geometry, const Tensor& weight) {
  return {layer_input, geometry, weight, content_hash(layer_input)};
}

namespace {

Tensor to4(const Tensor& t) {
  if (t.rank() == 4) return t;
  if (t.rank() == 2) return t.reshaped({t.dim(0), t.dim(1), 1, 1});
  throw ShapeError("oracle expects rank 2 or 4, got " + shape_string(t.shape()));
}

struct Dims {
  std::size_t n, ci, h, w, co, kh, kw, oh, ow, stride, pad;
};

Dims dims_of(const Tensor& in, const Tensor& wt, ConvGeometry g) {
  if (in.dim(1) != wt.dim(1)) throw ShapeError("oracle channel mismatch");
  Dims d{in.dim(0), in.dim(1), in.dim(2), in.dim(3), wt.dim(0), wt.dim(2), wt.dim(3), 0, 0, g.stride, g.padding};
  if (g.stride == 0 || d.h + 2 * d.pad < d.kh || d.w + 2 * d.pad < d.kw) throw ShapeError("oracle geometry invalid");
  d.oh = (d.h + 2 * d.pad - d.kh) / d.stride + 1;
  d.ow = (d.w + 2 * d.pad - d.kw) / d.stride + 1;
  return d;
}

// Input value at output position (b, oh, ow) under kernel tap (kh, kw) of channel p; zero in the padding.
double tap_value(const Tensor& in, const Dims& d, std::size_t b, std::size_t p, std::size_t oh, std::size_t ow,
                 std::size_t kh, std::size_t kw) {
  const long ih = static_cast<long>(oh * d.stride + kh) - static_cast<long>(d.pad);
  const long iw = static_cast<long>(ow * d.stride + kw) - static_cast<long>(d.pad);
  if (ih < 0 || iw < 0 || ih >= static_cast<long>(d.h) || iw >= static_cast<long>(d.w)) return 0.0;
  return in[((b * d.ci + p) * d.h + static_cast<std::size_t>(ih)) * d.w + static_cast<std::size_t>(iw)];
}

}  // namespace

Tensor naive_conv(const Tensor& input, const Tensor& weight, ConvGeometry geometry) {
  const Tensor in = to4(input), wt = to4(weight);
  const Dims d = dims_of(in, wt, geometry);
  Tensor out({d.n, d.co, d.oh, d.ow});
  for (std::size_t b = 0; b < d.n; ++b)
    for (std::size_t j = 0; j < d.co; ++j)
      for (std::size_t oh = 0; oh < d.oh; ++oh)
        for (std::size_t ow = 0; ow < d.ow; ++ow) {
          double acc = 0.0;
          for (std::size_t p = 0; p < d.ci; ++p)
            for (std::size_t kh = 0; kh < d.kh; ++kh)
              for (std::size_t kw = 0; kw < d.kw; ++kw) {
                acc += wt[((j * d.ci + p) * d.kh + kh) * d.kw + kw] * tap_value(in, d, b, p, oh, ow, kh, kw);
              }
          out[((b * d.co + j) * d.oh + oh) * d.ow + ow] = acc;
        }
  return out;
}

ChannelStats replay_exact_stats(const ReplayBundle& bundle, const Tensor& weight) {
  if (content_hash(bundle.layer_input) != bundle.content_hash) {
    throw IntegrityError("replay batch content hash does not match the recorded one");
  }
  if (weight.shape() != bundle.weight_snapshot.shape()) {
    throw ShapeError("replay weight " + shape_string(weight.shape()) + " differs from recorded " +
                     shape_string(bundle.weight_snapshot.shape()));
  }
  const Tensor x = naive_conv(bundle.layer_input, weight, bundle.geometry);
  const std::size_t n = x.dim(0), c = x.dim(1), sp = x.dim(2) * x.dim(3);
  ChannelStats s;
  s.mean.assign(c, 0.0);
  s.mean_sq.assign(c, 0.0);
  const double inv_m = 1.0 / static_cast<double>(n * sp);
  for (std::size_t j = 0; j < c; ++j) {
    double a = 0.0, q = 0.0;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = 0; i < sp; ++i) {
        const double v = x[(b * c + j) * sp + i];
        a += v;
        q += v * v;
      }
    s.mean[j] = a * inv_m;
    s.mean_sq[j] = q * inv_m;
  }
  return s;
}

FullStatJacobian naive_stat_jacobian(const Tensor& layer_input, const Tensor& weight, const Tensor& layer_output,
                                     ConvGeometry geometry) {
  const Tensor in = to4(layer_input), wt = to4(weight), x = to4(layer_output);
  const Dims d = dims_of(in, wt, geometry);
  if (x.shape() != Shape{d.n, d.co, d.oh, d.ow}) throw ShapeError("oracle layer output shape mismatch");
  const std::size_t entries = d.co * d.co * d.ci * d.kh * d.kw;
  if (entries > 1000000) throw ArgumentError("naive Jacobian would have " + std::to_string(entries) + " entries");

  FullStatJacobian jac{Tensor({d.co, d.co, d.ci, d.kh, d.kw}), Tensor({d.co, d.co, d.ci, d.kh, d.kw})};
  const double inv_m = 1.0 / static_cast<double>(d.n * d.oh * d.ow);
  for (std::size_t j = 0; j < d.co; ++j)
    for (std::size_t q = 0; q < d.co; ++q)
      for (std::size_t p = 0; p < d.ci; ++p)
        for (std::size_t kh = 0; kh < d.kh; ++kh)
          for (std::size_t kw = 0; kw < d.kw; ++kw) {
            double acc_mu = 0.0, acc_nu = 0.0;
            for (std::size_t b = 0; b < d.n; ++b)
              for (std::size_t oh = 0; oh < d.oh; ++oh)
                for (std::size_t ow = 0; ow < d.ow; ++ow) {
                  // d x[b, j, oh, ow] / d theta[q, p, kh, kw]: only the term with
                  // matching (output channel, input channel, tap) survives.
                  double dx = 0.0;
                  for (std::size_t n = 0; n < d.ci; ++n)
                    for (std::size_t a = 0; a < d.kh; ++a)
                      for (std::size_t c = 0; c < d.kw; ++c) {
                        if (j == q && n == p && a == kh && c == kw) dx += tap_value(in, d, b, n, oh, ow, a, c);
                      }
                  acc_mu += dx;
                  acc_nu += 2.0 * x[((b * d.co + j) * d.oh + oh) * d.ow + ow] * dx;
                }
            const std::size_t idx = (((j * d.co + q) * d.ci + p) * d.kh + kh) * d.kw + kw;
            jac.d_mean[idx] = acc_mu * inv_m;
            jac.d_mean_sq[idx] = acc_nu * inv_m;
          }
  return jac;
}

Tensor finite_diff(const VectorMap& f, const Tensor& theta, double h) {
  if (!(h > 0.0)) throw ArgumentError("finite_diff step must be positive");
  const std::size_t cols = theta.size();
  std::vector<std::vector<double>> columns(cols);
  Tensor probe = theta;
  std::size_t rows = 0;
  for (std::size_t i = 0; i < cols; ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const auto up = f(probe);
    probe[i] = orig - h;
    const auto down = f(probe);
    probe[i] = orig;
    if (up.size() != down.size() || (i > 0 && up.size() != rows)) throw ShapeError("finite_diff map changed output size");
    rows = up.size();
    columns[i].resize(rows);
    for (std::size_t r = 0; r < rows; ++r) columns[i][r] = (up[r] - down[r]) / (2.0 * h);
  }
  Tensor jac({rows, cols});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) jac[r * cols + c] = columns[c][r];
  return jac;
}

double GradRatioReport::mean_mu_prev1() const {
  double s = 0.0;
  for (const auto& r : rows) s += r.mu_prev1;
  return rows.empty() ? 0.0 : s / static_cast<double>(rows.size());
}

double GradRatioReport::mean_nu_prev1() const {
  double s = 0.0;
  for (const auto& r : rows) s += r.nu_prev1;
  return rows.empty() ? 0.0 : s / static_cast<double>(rows.size());
}

namespace {

bool parameterized(const LayerSpec& s) {
  return s.kind == LayerKind::conv2d || s.kind == LayerKind::fully_connected;
}

// Index into the parameters() order of layer `l`'s weight.
std::size_t weight_slot(const NetworkGraph& g, std::size_t l) {
  std::size_t slot = 0;
  for (std::size_t i = 0; i < l; ++i) slot += g.params[i].size() + (g.norms[i] ? 2 : 0);
  return slot;
}

double sq_norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  return s;
}

}  // namespace

GradRatioRow grad_ratio_diagnostic(const NetworkGraph& graph, const Tensor& batch, std::size_t norm_layer) {
  if (norm_layer >= graph.layers.size() || graph.layers[norm_layer].kind != LayerKind::normalizer) {
    throw ArgumentError("layer " + std::to_string(norm_layer) + " is not a normalizer");
  }
  const std::size_t bound = norm_layer - 1;
  std::vector<std::size_t> earlier;  // parameterized layers before the bound one, nearest first
  for (std::size_t l = bound; l-- > 0;) {
    if (parameterized(graph.layers[l])) earlier.push_back(l);
  }
  if (earlier.empty()) throw ArgumentError("normalizer at layer " + std::to_string(norm_layer) + " is too shallow");

  NetworkGraph probe = graph;
  const auto fwd = forward(probe, batch, Mode::train, StateUpdate::frozen, NormOverride::batch_stats);
  const Tensor& x = fwd.trace.inputs[norm_layer];
  const std::size_t n = x.dim(0), c = x.dim(1), sp = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  const double inv_m = 1.0 / static_cast<double>(n * sp);

  std::vector<double> mu_sq(earlier.size(), 0.0), nu_sq(earlier.size(), 0.0);
  for (std::size_t j = 0; j < c; ++j) {
    for (int which = 0; which < 2; ++which) {
      Tensor seed(x.shape());
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < sp; ++i) {
          const std::size_t idx = (b * c + j) * sp + i;
          seed[idx] = which == 0 ? inv_m : 2.0 * x[idx] * inv_m;
        }
      const Gradients grads = backward_from(probe, fwd.trace, bound, seed);
      for (std::size_t e = 0; e < earlier.size() && e < 2; ++e) {
        const double v = sq_norm(grads[weight_slot(graph, earlier[e])]);
        (which == 0 ? mu_sq : nu_sq)[e] += v;
      }
    }
  }

  const Tensor& w = graph.params[bound][0];
  const Tensor& y_prev = fwd.trace.inputs[bound];
  const ConvGeometry geo = graph.layers[bound].geometry();
  const Tensor g_mu = stat_grad_mu(y_prev, w.shape(), geo);
  const Tensor g_nu = stat_grad_nu(y_prev, w, geo, x);

  GradRatioRow row;
  row.layer = norm_layer;
  for (std::size_t l = 0; l <= norm_layer; ++l) {
    if (graph.layers[l].kind == LayerKind::normalizer) ++row.ordinal;
  }
  row.mu_self = std::sqrt(static_cast<double>(c) * sq_norm(g_mu));
  row.nu_self = std::sqrt(sq_norm(g_nu));
  row.mu_prev1 = std::sqrt(mu_sq[0]) / row.mu_self;
  row.nu_prev1 = std::sqrt(nu_sq[0]) / row.nu_self;
  if (earlier.size() > 1) {
    row.mu_prev2 = std::sqrt(mu_sq[1]) / row.mu_self;
    row.nu_prev2 = std::sqrt(nu_sq[1]) / row.nu_self;
  }
  return row;
}

GradRatioReport grad_ratio_all(const NetworkGraph& graph, const Tensor& batch, std::size_t epoch) {
  GradRatioReport rep;
  std::size_t parameterized_before = 0;
  for (std::size_t l = 0; l < graph.layers.size(); ++l) {
    // The bound layer (l - 1) is itself counted, so a deep enough normalizer sees two.
    if (graph.layers[l].kind == LayerKind::normalizer && parameterized_before >= 2) {
      auto row = grad_ratio_diagnostic(graph, batch, l);
      row.epoch = epoch;
      rep.rows.push_back(row);
    }
    if (parameterized(graph.layers[l])) ++parameterized_before;
  }
  return rep;
}

}  // namespace cbn::oracles
