#include <doctest.h>

#include <cmath>

#include "cbn/errors.hpp"
#include "cbn/network.hpp"
#include "cbn/ops.hpp"
#include "test_util.hpp"

using namespace cbn;
using testutil::random_tensor;

namespace {

NormSpec norm_of(NormKind kind, std::size_t window = 1) {
  NormSpec s;
  s.kind = kind;
  s.window = window;
  return s;
}

// Scalar probe of a network: <r, logits> with normalizers frozen in train mode.
double probe_loss(NetworkGraph g, const Tensor& batch, const Tensor& r) {
  return testutil::dot(r, forward(g, batch, Mode::train, StateUpdate::frozen).logits);
}

void check_fd(NetworkGraph g, const Tensor& batch, Rng& rng) {
  const Tensor r = random_tensor({batch.dim(0), g.num_classes()}, rng);
  const auto fr = forward(g, batch, Mode::train, StateUpdate::frozen);
  Tensor input_grad;
  const Gradients grads = backward(g, fr.trace, r, &input_grad);
  auto refs = parameters(g);
  REQUIRE(grads.size() == refs.size());
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const Tensor fd = testutil::numeric_grad(
        [&](const Tensor& p) {
          NetworkGraph h = g;
          *parameters(h)[i].tensor = p;
          return probe_loss(h, batch, r);
        },
        *refs[i].tensor);
    INFO("parameter " << i << " (" << refs[i].name << ", layer " << refs[i].layer << ")");
    CHECK(testutil::worst_closeness(grads[i], fd) <= 1.0);
  }
  const Tensor fd_in = testutil::numeric_grad([&](const Tensor& b) { return probe_loss(g, b, r); }, batch);
  CHECK(testutil::worst_closeness(input_grad, fd_in) <= 1.0);
}

}  // namespace

TEST_CASE("forward examples") {
  Rng rng(1);
  auto relu = build_network({2}, {LayerSpec::relu()}, rng);
  CHECK(forward(relu, Tensor({1, 2}, {-1, 2}), Mode::train).logits == Tensor({1, 2}, {0, 2}));

  auto ident = build_network({2, 3, 3}, {LayerSpec::conv(2, 1), LayerSpec::flatten()}, rng);
  ident.params[0][0] = Tensor({2, 2, 1, 1}, {1, 0, 0, 1});
  const Tensor x = random_tensor({2, 2, 3, 3}, rng);
  CHECK(forward(ident, x, Mode::train).logits == x.reshaped({2, 18}));

  // conv -> relu -> flatten -> fc, composed by hand from the individual ops.
  auto net = build_network({1, 4, 4}, {LayerSpec::conv(2, 3, 1, 1), LayerSpec::relu(), LayerSpec::flatten(),
                                       LayerSpec::fc(3)},
                           rng);
  net.params[3][1] = random_tensor({3}, rng);
  const Tensor b = random_tensor({2, 1, 4, 4}, rng);
  const Tensor h = elementwise(ElementwiseOp::max, conv2d_forward(b, net.params[0][0], {1, 1}), Tensor({1, 1, 1, 1}));
  const Tensor flat = h.reshaped({2, 32});
  const Tensor& w = net.params[3][0];
  Tensor want({2, 3});
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t o = 0; o < 3; ++o) {
      double acc = net.params[3][1][o];
      for (std::size_t k = 0; k < 32; ++k) acc += w[o * 32 + k] * flat[i * 32 + k];
      want[i * 3 + o] = acc;
    }
  CHECK(testutil::max_rel_err(forward(net, b, Mode::train).logits, want, 1e-12) <= 1e-12);
}

TEST_CASE("graph construction rules") {
  Rng rng(2);
  CHECK_THROWS_AS(build_network({1, 4, 4}, {LayerSpec::normalizer(norm_of(NormKind::bn))}, rng), GraphError);
  CHECK_THROWS_AS(build_network({1, 4, 4}, {LayerSpec::conv(2, 3, 1, 1, true), LayerSpec::normalizer(norm_of(NormKind::bn))},
                                rng),
                  GraphError);
  CHECK_THROWS_AS(
      build_network({1, 4, 4}, {LayerSpec::conv(2, 3), LayerSpec::relu(), LayerSpec::normalizer(norm_of(NormKind::bn))},
                    rng),
      GraphError);
  CHECK_THROWS_AS(build_network({1, 4, 4}, {LayerSpec::fc(3)}, rng), GraphError);
  CHECK_THROWS_AS(build_network({1, 2, 2}, {LayerSpec::conv(2, 3)}, rng), GraphError);

  auto g = build_network({1, 4, 4}, {LayerSpec::conv(2, 3, 1, 1), LayerSpec::flatten()}, rng);
  CHECK_THROWS_AS(forward(g, Tensor({1, 1, 5, 5}), Mode::train), GraphError);

  const auto desk = desk_cnn_layers({1, 14, 14}, norm_of(NormKind::cbn, 4), 10);
  auto d = build_network({1, 14, 14}, desk, rng);
  CHECK(d.output_shapes.back() == Shape{10});
  std::size_t norms = 0;
  for (const auto& n : d.norms) norms += n.has_value();
  CHECK(norms == 4);
}

TEST_CASE("backward examples") {
  Rng rng(3);
  auto fc = build_network({3}, {LayerSpec::fc(1)}, rng);
  const Tensor x({1, 3}, {0.5, -1.0, 2.0});
  const auto fr = forward(fc, x, Mode::train);
  const Gradients g = backward(fc, fr.trace, Tensor({1, 1}, {1.0}));
  CHECK(g[0] == Tensor({1, 3}, {0.5, -1.0, 2.0}));
  CHECK(g[1] == Tensor({1}, {1.0}));

  auto net = build_network({1, 4, 4}, tiny_cnn_layers(norm_of(NormKind::bn), 3), rng);
  const Tensor b = random_tensor({2, 1, 4, 4}, rng);
  const auto f2 = forward(net, b, Mode::train);
  for (const auto& t : backward(net, f2.trace, Tensor({2, 3})))
    for (double v : t.data()) CHECK(v == 0.0);

  const auto ev = forward(net, b, Mode::eval);
  CHECK_THROWS_AS(backward(net, ev.trace, Tensor({2, 3})), StateError);
  CHECK_THROWS_AS(backward(net, ForwardTrace{}, Tensor({2, 3})), StateError);
}

TEST_CASE("backward matches finite differences for every layer kind") {
  for (NormKind kind : {NormKind::bn, NormKind::naive_cbn, NormKind::cbn}) {
    INFO("normalizer " << to_string(kind));
    Rng rng(4);
    NormSpec ns = norm_of(kind, kind == NormKind::bn ? 1 : 3);
    std::vector<LayerSpec> layers{LayerSpec::conv(3, 2, 1, 1), LayerSpec::normalizer(ns), LayerSpec::relu(),
                                  LayerSpec::max_pool(2),      LayerSpec::conv(2, 1),      LayerSpec::avg_pool(2),
                                  LayerSpec::flatten(),        LayerSpec::fc(3, false),    LayerSpec::normalizer(ns),
                                  LayerSpec::fc(2)};
    auto g = build_network({2, 4, 4}, layers, rng);
    for (auto& n : g.norms) {
      if (!n) continue;
      for (double& v : n->affine.gamma.data()) v = 1.0 + 0.2 * rng.normal();
      for (double& v : n->affine.beta.data()) v = 0.2 * rng.normal();
    }
    // Fill the ring buffers through a few committed steps with weight changes in between.
    for (int step = 0; step < 3; ++step) {
      forward(g, random_tensor({3, 2, 4, 4}, rng), Mode::train);
      for (auto& p : parameters(g))
        for (double& v : p.tensor->data()) v += 0.02 * rng.normal();
    }
    check_fd(g, random_tensor({3, 2, 4, 4}, rng), rng);
  }
}

TEST_CASE("max pool ties go to the lowest index") {
  Rng rng(5);
  auto g = build_network({1, 2, 2}, {LayerSpec::max_pool(2), LayerSpec::flatten()}, rng);
  const auto fr = forward(g, Tensor({1, 1, 2, 2}, {1, 1, 1, 1}), Mode::train);
  Tensor gin;
  backward(g, fr.trace, Tensor({1, 1}, {1.0}), &gin);
  CHECK(gin == Tensor({1, 1, 2, 2}, {1, 0, 0, 0}));
}

TEST_CASE("eval forward is pure") {
  Rng rng(6);
  auto g = build_network({1, 6, 6}, tiny_cnn_layers(norm_of(NormKind::cbn, 2), 3), rng);
  CHECK_THROWS_AS(evaluate(g, Tensor({1, 1, 6, 6})), StateError);
  for (int i = 0; i < 3; ++i) forward(g, random_tensor({2, 1, 6, 6}, rng), Mode::train);
  const NetworkGraph before = g;
  const Tensor b = random_tensor({4, 1, 6, 6}, rng);
  const Tensor a = evaluate(g, b);
  CHECK(a == evaluate(g, b));
  CHECK(a == forward(g, b, Mode::eval).logits);
  CHECK(g.norms[1]->iteration == before.norms[1]->iteration);
  CHECK(g.norms[1]->running_mean == before.norms[1]->running_mean);
}

TEST_CASE("softmax cross-entropy") {
  const auto r = softmax_cross_entropy(Tensor({2, 2}, {0.0, 0.0, 3.0, 1.0}), {1, 0});
  const double l2 = -std::log(std::exp(3.0) / (std::exp(3.0) + std::exp(1.0)));
  CHECK(r.loss == doctest::Approx((std::log(2.0) + l2) / 2.0).epsilon(1e-14));
  CHECK(r.correct == 1);  // the tie in row 0 resolves to class 0
  CHECK(r.grad[0] == doctest::Approx(0.25));
  CHECK(r.grad[1] == doctest::Approx(-0.25));
  CHECK_THROWS_AS(softmax_cross_entropy(Tensor({1, 2}), {2}), ArgumentError);
  CHECK_THROWS_AS(softmax_cross_entropy(Tensor({1, 2}), {0, 1}), ShapeError);

  Rng rng(7);
  const Tensor logits = random_tensor({3, 4}, rng, 2.0);
  const std::vector<int> labels{0, 3, 1};
  const auto sc = softmax_cross_entropy(logits, labels);
  const Tensor fd =
      testutil::numeric_grad([&](const Tensor& z) { return softmax_cross_entropy(z, labels).loss; }, logits);
  CHECK(testutil::max_rel_err(sc.grad, fd) <= 1e-6);
}

TEST_CASE("sgd examples") {
  Rng rng(8);
  auto g = build_network({1}, {LayerSpec::fc(1, false)}, rng);
  g.params[0][0] = Tensor({1, 1}, {1.0});
  auto st = make_sgd_state(g);

  sgd_step(g, {Tensor({1, 1}, {0.5})}, st, {0.0, 0.9, 1e-4});
  CHECK(g.params[0][0][0] == 1.0);

  st = make_sgd_state(g);
  sgd_step(g, {Tensor({1, 1}, {0.5})}, st, {0.1, 0.0, 0.0});
  CHECK(g.params[0][0][0] == doctest::Approx(0.95).epsilon(1e-15));

  // Two momentum steps against the unrolled recurrence.
  g.params[0][0] = Tensor({1, 1}, {1.0});
  st = make_sgd_state(g);
  const double lr = 0.1, m = 0.9, wd = 0.01, g1 = 0.5, g2 = -0.2;
  sgd_step(g, {Tensor({1, 1}, {g1})}, st, {lr, m, wd});
  sgd_step(g, {Tensor({1, 1}, {g2})}, st, {lr, m, wd});
  double theta = 1.0, v = 0.0;
  v = m * v + g1 + wd * theta;
  theta -= lr * v;
  v = m * v + g2 + wd * theta;
  theta -= lr * v;
  CHECK(g.params[0][0][0] == doctest::Approx(theta).epsilon(1e-15));

  CHECK_THROWS_AS(sgd_step(g, {}, st, {}), ShapeError);
}

TEST_CASE("weight decay reaches affine parameters") {
  Rng rng(9);
  auto g = build_network({2}, {LayerSpec::fc(2, false), LayerSpec::normalizer(norm_of(NormKind::bn))}, rng);
  auto st = make_sgd_state(g);
  Gradients zero;
  for (const auto& s : parameter_shapes(g)) zero.emplace_back(s);
  sgd_step(g, zero, st, {1.0, 0.0, 0.5});
  for (double v : g.norms[1]->affine.gamma.data()) CHECK(v == 0.5);
}
