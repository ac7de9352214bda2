#include "cbn/network.hpp"

#include <algorithm>
#include <cmath>

#include "cbn/errors.hpp"
#include "cbn/kernels.hpp"

namespace cbn {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::fully_connected: return "fully-connected";
    case LayerKind::relu: return "relu";
    case LayerKind::avg_pool: return "avg-pool";
    case LayerKind::max_pool: return "max-pool";
    case LayerKind::normalizer: return "normalizer";
    case LayerKind::flatten: return "flatten";
  }
  return "?";
}

LayerSpec LayerSpec::conv(std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding, bool bias) {
  LayerSpec s;
  s.kind = LayerKind::conv2d;
  s.out_channels = out;
  s.kernel = kernel;
  s.stride = stride;
  s.padding = padding;
  s.bias = bias;
  return s;
}

LayerSpec LayerSpec::fc(std::size_t out, bool bias) {
  LayerSpec s;
  s.kind = LayerKind::fully_connected;
  s.out_channels = out;
  s.bias = bias;
  return s;
}

LayerSpec LayerSpec::relu() { return LayerSpec{}; }

LayerSpec LayerSpec::avg_pool(std::size_t window) {
  LayerSpec s;
  s.kind = LayerKind::avg_pool;
  s.kernel = window;
  s.stride = window;
  return s;
}

LayerSpec LayerSpec::max_pool(std::size_t window) {
  LayerSpec s = avg_pool(window);
  s.kind = LayerKind::max_pool;
  return s;
}

LayerSpec LayerSpec::normalizer(NormSpec spec) {
  LayerSpec s;
  s.kind = LayerKind::normalizer;
  s.norm = spec;
  return s;
}

LayerSpec LayerSpec::flatten() {
  LayerSpec s;
  s.kind = LayerKind::flatten;
  return s;
}

namespace {

bool is_parameterized(LayerKind k) { return k == LayerKind::conv2d || k == LayerKind::fully_connected; }

std::string where(std::size_t l, const LayerSpec& s) { return "layer " + std::to_string(l) + " (" + to_string(s.kind) + ")"; }

Shape output_shape_of(std::size_t l, const LayerSpec& s, const Shape& in) {
  switch (s.kind) {
    case LayerKind::conv2d: {
      if (in.size() != 3) throw GraphError(where(l, s) + " needs C x H x W input, got " + shape_string(in));
      if (s.out_channels == 0 || s.kernel == 0 || s.stride == 0) throw GraphError(where(l, s) + " has zero extent");
      if (in[1] + 2 * s.padding < s.kernel || in[2] + 2 * s.padding < s.kernel) {
        throw GraphError(where(l, s) + " kernel larger than padded input " + shape_string(in));
      }
      return {s.out_channels, (in[1] + 2 * s.padding - s.kernel) / s.stride + 1,
              (in[2] + 2 * s.padding - s.kernel) / s.stride + 1};
    }
    case LayerKind::fully_connected:
      if (in.size() != 1) throw GraphError(where(l, s) + " needs flat input, got " + shape_string(in));
      if (s.out_channels == 0) throw GraphError(where(l, s) + " has zero outputs");
      return {s.out_channels};
    case LayerKind::relu:
      return in;
    case LayerKind::avg_pool:
    case LayerKind::max_pool:
      if (in.size() != 3) throw GraphError(where(l, s) + " needs C x H x W input, got " + shape_string(in));
      if (s.kernel == 0 || in[1] < s.kernel || in[2] < s.kernel) {
        throw GraphError(where(l, s) + " window does not fit input " + shape_string(in));
      }
      return {in[0], in[1] / s.kernel, in[2] / s.kernel};
    case LayerKind::normalizer:
      if (in.size() != 1 && in.size() != 3) throw GraphError(where(l, s) + " needs C or C x H x W input");
      return in;
    case LayerKind::flatten:
      return {shape_size(in)};
  }
  return in;
}

Tensor fc_forward(const Tensor& x, const Tensor& w, const Tensor* b) {
  const std::size_t n = x.dim(0), in = x.dim(1), out = w.dim(0);
  Tensor y({n, out});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < out; ++o) {
      double acc = 0.0;
      for (std::size_t f = 0; f < in; ++f) acc += x[i * in + f] * w[o * in + f];
      y[i * out + o] = acc + (b ? (*b)[o] : 0.0);
    }
  }
  return y;
}

Tensor conv_forward(const Tensor& x, const Tensor& w, const Tensor* b, ConvGeometry g) {
  Tensor y = conv2d_forward(x, w, g);
  if (b) {
    const std::size_t n = y.dim(0), c = y.dim(1), sp = y.dim(2) * y.dim(3);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < sp; ++p) y[(i * c + ch) * sp + p] += (*b)[ch];
  }
  return y;
}

Tensor pool_forward(const Tensor& x, std::size_t win, bool is_max, std::vector<std::size_t>* argmax) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h / win, ow = w / win;
  Tensor y({n, c, oh, ow});
  if (argmax) argmax->assign(y.size(), 0);
  const double inv = 1.0 / static_cast<double>(win * win);
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* in = x.data().data() + p * h * w;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        const std::size_t o = (p * oh + i) * ow + j;
        if (is_max) {
          // Strict comparison keeps the lowest flat index on ties.
          std::size_t best_idx = (i * win) * w + j * win;
          double best = in[best_idx];
          for (std::size_t a = 0; a < win; ++a)
            for (std::size_t b = 0; b < win; ++b) {
              const std::size_t idx = (i * win + a) * w + j * win + b;
              if (in[idx] > best) {
                best = in[idx];
                best_idx = idx;
              }
            }
          y[o] = best;
          if (argmax) (*argmax)[o] = p * h * w + best_idx;
        } else {
          double acc = 0.0;
          for (std::size_t a = 0; a < win; ++a)
            for (std::size_t b = 0; b < win; ++b) acc += in[(i * win + a) * w + j * win + b];
          y[o] = acc * inv;
        }
      }
    }
  }
  return y;
}

Tensor apply_plain(const NetworkGraph& g, std::size_t l, const Tensor& x, std::vector<std::size_t>* argmax) {
  const LayerSpec& s = g.layers[l];
  const auto& p = g.params[l];
  switch (s.kind) {
    case LayerKind::conv2d:
      return conv_forward(x, p[0], s.bias ? &p[1] : nullptr, s.geometry());
    case LayerKind::fully_connected:
      return fc_forward(x, p[0], s.bias ? &p[1] : nullptr);
    case LayerKind::relu: {
      Tensor y(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
      return y;
    }
    case LayerKind::avg_pool:
      return pool_forward(x, s.kernel, false, nullptr);
    case LayerKind::max_pool:
      return pool_forward(x, s.kernel, true, argmax);
    case LayerKind::flatten:
      return x.reshaped({x.dim(0), x.size() / x.dim(0)});
    case LayerKind::normalizer:
      break;
  }
  throw StateError("apply_plain called on a normalizer");
}

void check_batch(const NetworkGraph& g, const Tensor& batch) {
  if (batch.rank() != g.input_shape.size() + 1 || batch.dim(0) == 0 ||
      !std::equal(g.input_shape.begin(), g.input_shape.end(), batch.shape().begin() + 1)) {
    throw GraphError("batch " + shape_string(batch.shape()) + " does not match network input " +
                     shape_string(g.input_shape));
  }
}

}  // namespace

NetworkGraph build_network(Shape input_shape, std::vector<LayerSpec> layers, Rng& rng) {
  NetworkGraph g;
  g.input_shape = std::move(input_shape);
  g.layers = std::move(layers);
  g.params.resize(g.layers.size());
  g.norms.resize(g.layers.size());
  Shape cur = g.input_shape;
  for (std::size_t l = 0; l < g.layers.size(); ++l) {
    const LayerSpec& s = g.layers[l];
    if (s.kind == LayerKind::normalizer) {
      if (l == 0 || !is_parameterized(g.layers[l - 1].kind)) {
        throw GraphError(where(l, s) + " must directly follow a conv2d or fully-connected layer");
      }
      if (g.layers[l - 1].bias) throw GraphError(where(l - 1, g.layers[l - 1]) + " feeds a normalizer and must not carry a bias");
    }
    const Shape next = output_shape_of(l, s, cur);
    if (s.kind == LayerKind::conv2d) {
      const std::size_t fan_in = cur[0] * s.kernel * s.kernel;
      Tensor w({s.out_channels, cur[0], s.kernel, s.kernel});
      const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (double& v : w.data()) v = sd * rng.normal();
      g.params[l].push_back(std::move(w));
      if (s.bias) g.params[l].emplace_back(Shape{s.out_channels});
    } else if (s.kind == LayerKind::fully_connected) {
      Tensor w({s.out_channels, cur[0]});
      const double sd = std::sqrt(1.0 / static_cast<double>(cur[0]));
      for (double& v : w.data()) v = sd * rng.normal();
      g.params[l].push_back(std::move(w));
      if (s.bias) g.params[l].emplace_back(Shape{s.out_channels});
    } else if (s.kind == LayerKind::normalizer) {
      g.norms[l] = make_norm_state(s.norm.kind, cur[0], s.norm.window, s.norm.burn_in_iterations, s.norm.config);
      g.norms[l]->taylor_backprop = s.norm.taylor_backprop;
    }
    g.output_shapes.push_back(next);
    cur = next;
  }
  return g;
}

std::vector<LayerSpec> desk_cnn_layers(const Shape& input_shape, NormSpec norm, std::size_t classes) {
  if (input_shape.size() != 3) throw GraphError("desk preset needs C x H x W input");
  std::size_t side = std::min(input_shape[1], input_shape[2]);
  std::vector<LayerSpec> l;
  const std::size_t widths[4] = {16, 32, 32, 64};
  for (int b = 0; b < 4; ++b) {
    // Last block is unpadded when the map is large enough, shrinking it further.
    const std::size_t pad = (b == 3 && side >= 3) ? 0 : 1;
    l.push_back(LayerSpec::conv(widths[b], 3, 1, pad));
    side = side + 2 * pad - 2;
    l.push_back(LayerSpec::normalizer(norm));
    l.push_back(LayerSpec::relu());
    if (b < 2 && side >= 2) {
      l.push_back(LayerSpec::avg_pool(2));
      side /= 2;
    }
  }
  l.push_back(LayerSpec::flatten());
  l.push_back(LayerSpec::fc(classes));
  return l;
}

std::vector<LayerSpec> tiny_cnn_layers(NormSpec norm, std::size_t classes) {
  return {LayerSpec::conv(8, 3, 1, 1), LayerSpec::normalizer(norm), LayerSpec::relu(), LayerSpec::avg_pool(2),
          LayerSpec::flatten(), LayerSpec::fc(classes)};
}

std::vector<ParamRef> parameters(NetworkGraph& g) {
  std::vector<ParamRef> out;
  for (std::size_t l = 0; l < g.layers.size(); ++l) {
    if (!g.params[l].empty()) {
      out.push_back({l, "weight", &g.params[l][0]});
      if (g.params[l].size() > 1) out.push_back({l, "bias", &g.params[l][1]});
    }
    if (g.norms[l]) {
      out.push_back({l, "gamma", &g.norms[l]->affine.gamma});
      out.push_back({l, "beta", &g.norms[l]->affine.beta});
    }
  }
  return out;
}

std::vector<Shape> parameter_shapes(const NetworkGraph& g) {
  std::vector<Shape> out;
  for (std::size_t l = 0; l < g.layers.size(); ++l) {
    for (const auto& p : g.params[l]) out.push_back(p.shape());
    if (g.norms[l]) {
      out.push_back(g.norms[l]->affine.gamma.shape());
      out.push_back(g.norms[l]->affine.beta.shape());
    }
  }
  return out;
}

ForwardResult forward(NetworkGraph& g, const Tensor& batch, Mode mode, StateUpdate update, NormOverride override) {
  check_batch(g, batch);
  ForwardResult r;
  ForwardTrace& t = r.trace;
  t.mode = mode;
  t.inputs.reserve(g.layers.size());
  t.norm_caches.resize(g.layers.size());
  t.argmax.resize(g.layers.size());
  Tensor x = batch;
  for (std::size_t l = 0; l < g.layers.size(); ++l) {
    const LayerSpec& s = g.layers[l];
    t.inputs.push_back(x);
    if (s.kind != LayerKind::normalizer) {
      x = apply_plain(g, l, x, mode == Mode::train ? &t.argmax[l] : nullptr);
      continue;
    }
    CbnState& st = *g.norms[l];
    if (mode == Mode::eval) {
      x = eval_forward(x, st);
      continue;
    }
    NormForward f;
    if (override == NormOverride::batch_stats || st.kind == NormKind::bn) {
      f = bn_train_forward(x, st, override == NormOverride::batch_stats ? StateUpdate::frozen : update);
    } else if (st.kind == NormKind::naive_cbn) {
      f = naive_cbn_train_forward(x, st, update);
    } else {
      f = cbn_train_forward(x, g.params[l - 1][0], t.inputs[l - 1], g.layers[l - 1].geometry(), st, update);
    }
    x = std::move(f.output);
    t.norm_caches[l] = std::move(f.cache);
  }
  r.logits = std::move(x);
  t.valid = true;
  return r;
}

Tensor evaluate(const NetworkGraph& g, const Tensor& batch) {
  check_batch(g, batch);
  Tensor x = batch;
  for (std::size_t l = 0; l < g.layers.size(); ++l) {
    if (g.layers[l].kind == LayerKind::normalizer) {
      x = eval_forward(x, *g.norms[l]);
    } else {
      x = apply_plain(g, l, x, nullptr);
    }
  }
  return x;
}

namespace {

Gradients run_backward(const NetworkGraph& g, const ForwardTrace& t, std::size_t top, Tensor grad, Tensor* input_grad) {
  if (!t.valid || t.inputs.size() != g.layers.size()) throw StateError("backward needs a trace from forward");
  if (t.mode != Mode::train) throw StateError("backward needs a train-mode trace");

  std::vector<std::vector<Tensor>> layer_grads(g.layers.size());
  Tensor pending_weight_extra;

  for (std::size_t l = top + 1; l-- > 0;) {
    const LayerSpec& s = g.layers[l];
    const Tensor& x = t.inputs[l];
    switch (s.kind) {
      case LayerKind::conv2d: {
        const auto& w = g.params[l][0];
        const auto d = conv_dims(x.shape(), w.shape(), s.geometry());
        Tensor gw(w.shape());
        kernels::conv2d_backward_weight(d, x.data(), grad.data(), gw.data());
        if (!pending_weight_extra.empty()) {
          for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += pending_weight_extra[i];
          pending_weight_extra = Tensor();
        }
        layer_grads[l].push_back(std::move(gw));
        if (s.bias) {
          Tensor gb({d.out_channels});
          const std::size_t sp = d.out_h() * d.out_w();
          for (std::size_t n = 0; n < d.batch; ++n)
            for (std::size_t c = 0; c < d.out_channels; ++c)
              for (std::size_t p = 0; p < sp; ++p) gb[c] += grad[(n * d.out_channels + c) * sp + p];
          layer_grads[l].push_back(std::move(gb));
        }
        Tensor gx(x.shape());
        kernels::conv2d_backward_input(d, grad.data(), w.data(), gx.data());
        grad = std::move(gx);
        break;
      }
      case LayerKind::fully_connected: {
        const auto& w = g.params[l][0];
        const std::size_t n = x.dim(0), in = x.dim(1), out = w.dim(0);
        Tensor gw(w.shape());
        for (std::size_t o = 0; o < out; ++o)
          for (std::size_t f = 0; f < in; ++f) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) acc += grad[i * out + o] * x[i * in + f];
            gw[o * in + f] = acc;
          }
        if (!pending_weight_extra.empty()) {
          for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += pending_weight_extra[i];
          pending_weight_extra = Tensor();
        }
        layer_grads[l].push_back(std::move(gw));
        if (s.bias) {
          Tensor gb({out});
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t o = 0; o < out; ++o) gb[o] += grad[i * out + o];
          layer_grads[l].push_back(std::move(gb));
        }
        Tensor gx(x.shape());
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t f = 0; f < in; ++f) {
            double acc = 0.0;
            for (std::size_t o = 0; o < out; ++o) acc += grad[i * out + o] * w[o * in + f];
            gx[i * in + f] = acc;
          }
        grad = std::move(gx);
        break;
      }
      case LayerKind::relu:
        for (std::size_t i = 0; i < grad.size(); ++i) {
          if (!(x[i] > 0.0)) grad[i] = 0.0;
        }
        break;
      case LayerKind::avg_pool:
      case LayerKind::max_pool: {
        const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), win = s.kernel;
        const std::size_t oh = h / win, ow = w / win;
        Tensor gx(x.shape());
        if (s.kind == LayerKind::max_pool) {
          for (std::size_t o = 0; o < grad.size(); ++o) gx[t.argmax[l][o]] += grad[o];
        } else {
          const double inv = 1.0 / static_cast<double>(win * win);
          for (std::size_t p = 0; p < n * c; ++p)
            for (std::size_t i = 0; i < oh; ++i)
              for (std::size_t j = 0; j < ow; ++j) {
                const double v = grad[(p * oh + i) * ow + j] * inv;
                for (std::size_t a = 0; a < win; ++a)
                  for (std::size_t b = 0; b < win; ++b) gx[p * h * w + (i * win + a) * w + j * win + b] += v;
              }
        }
        grad = std::move(gx);
        break;
      }
      case LayerKind::flatten:
        grad = grad.reshaped(x.shape());
        break;
      case LayerKind::normalizer: {
        const auto& cache = t.norm_caches[l];
        if (!cache) throw StateError("trace lacks the cache of normalizer layer " + std::to_string(l));
        NormGrads ng = cbn_backward(*cache, grad);
        layer_grads[l].push_back(std::move(ng.gamma));
        layer_grads[l].push_back(std::move(ng.beta));
        pending_weight_extra = std::move(ng.weight_extra);
        grad = std::move(ng.input);
        break;
      }
    }
  }
  if (input_grad) *input_grad = std::move(grad);

  Gradients out;
  for (std::size_t l = 0; l < g.layers.size(); ++l) {
    std::vector<Tensor> expected;
    for (const auto& p : g.params[l]) expected.emplace_back(p.shape());
    if (g.norms[l]) {
      expected.emplace_back(g.norms[l]->affine.gamma.shape());
      expected.emplace_back(g.norms[l]->affine.beta.shape());
    }
    auto& got = layer_grads[l];
    for (std::size_t i = 0; i < expected.size(); ++i) {
      out.push_back(i < got.size() ? std::move(got[i]) : std::move(expected[i]));
    }
  }
  return out;
}

}  // namespace

Gradients backward(const NetworkGraph& g, const ForwardTrace& t, const Tensor& grad_logits, Tensor* input_grad) {
  if (g.layers.empty()) throw StateError("empty network");
  return run_backward(g, t, g.layers.size() - 1, grad_logits, input_grad);
}

Gradients backward_from(const NetworkGraph& g, const ForwardTrace& t, std::size_t from_layer,
                        const Tensor& grad_at_output) {
  if (from_layer >= g.layers.size()) throw ArgumentError("backward_from layer out of range");
  return run_backward(g, t, from_layer, grad_at_output, nullptr);
}

LossResult softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("logits " + shape_string(logits.shape()) + " do not match " + std::to_string(labels.size()) +
                     " labels");
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  LossResult r;
  r.grad = Tensor(logits.shape());
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* z = logits.data().data() + i * k;
    const auto label = static_cast<std::size_t>(labels[i]);
    if (labels[i] < 0 || label >= k) throw ArgumentError("label out of range");
    double zmax = z[0];
    std::size_t arg = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (z[j] > zmax) {
        zmax = z[j];
        arg = j;
      }
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(z[j] - zmax);
    const double log_sum = std::log(sum) + zmax;
    total += log_sum - z[label];
    if (arg == label) ++r.correct;
    for (std::size_t j = 0; j < k; ++j) {
      r.grad[i * k + j] = (std::exp(z[j] - log_sum) - (j == label ? 1.0 : 0.0)) * inv_n;
    }
  }
  r.loss = total * inv_n;
  return r;
}

SgdState make_sgd_state(const NetworkGraph& g) {
  SgdState s;
  for (const auto& shape : parameter_shapes(g)) s.velocity.emplace_back(shape);
  return s;
}

void sgd_step(NetworkGraph& g, const Gradients& grads, SgdState& state, const SgdParams& p) {
  auto params = parameters(g);
  if (grads.size() != params.size() || state.velocity.size() != params.size()) {
    throw ShapeError("gradient / optimizer state count does not match parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& theta = *params[i].tensor;
    Tensor& v = state.velocity[i];
    const Tensor& gr = grads[i];
    if (gr.shape() != theta.shape() || v.shape() != theta.shape()) {
      throw ShapeError("gradient shape mismatch for parameter " + std::to_string(i));
    }
    for (std::size_t j = 0; j < theta.size(); ++j) {
      v[j] = p.momentum * v[j] + gr[j] + p.weight_decay * theta[j];
      theta[j] -= p.lr * v[j];
    }
  }
}

}  // namespace cbn
