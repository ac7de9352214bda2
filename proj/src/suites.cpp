#include "cbn/suites.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "cbn/compensation.hpp"
#include "cbn/oracles.hpp"
#include "cbn/rng.hpp"

namespace cbn::suites {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = scale * rng.normal();
  return t;
}

double rel(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

double l2(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

// Per-channel mean and mean-square of a conv output, written out directly.
std::vector<double> moments(const Tensor& out) {
  const std::size_t n = out.dim(0), c = out.dim(1), hw = out.dim(2) * out.dim(3);
  std::vector<double> r(2 * c, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < hw; ++p) {
        const double v = out[(i * c + ch) * hw + p];
        s += v;
        s2 += v * v;
      }
    r[ch] = s / double(n * hw);
    r[c + ch] = s2 / double(n * hw);
  }
  return r;
}

}  // namespace

StatGradReport stat_grad_suite(std::size_t instances, std::uint64_t seed) {
  const auto t0 = Clock::now();
  Rng rng(seed);
  StatGradReport rep;
  auto extent = [&] { return 1 + static_cast<std::size_t>(rng.below(4)); };

  while (rep.instances < instances) {
    const std::size_t n = extent(), cin = extent(), cout = extent(), h = extent(), w = extent();
    const std::size_t k = 1 + rng.below(3), stride = 1 + rng.below(2), pad = rng.below(k);
    if (h + 2 * pad < k || w + 2 * pad < k) continue;
    const ConvGeometry geo{stride, pad};
    const Tensor x = random_tensor({n, cin, h, w}, rng);
    const Tensor weight = random_tensor({cout, cin, k, k}, rng, 0.5);
    const Tensor y = oracles::naive_conv(x, weight, geo);

    const Tensor gmu = stat_grad_mu(x, weight.shape(), geo);
    const Tensor gnu = stat_grad_nu(x, weight, geo, y);
    const auto jac = oracles::naive_stat_jacobian(x, weight, y, geo);
    const std::size_t block = cin * k * k;

    for (std::size_t j = 0; j < cout; ++j)
      for (std::size_t q = 0; q < cout; ++q)
        for (std::size_t e = 0; e < block; ++e) {
          const double dm = jac.d_mean[(j * cout + q) * block + e];
          const double dn = jac.d_mean_sq[(j * cout + q) * block + e];
          if (j != q) {
            rep.offdiag_nonzero += (dm != 0.0) + (dn != 0.0);
            continue;
          }
          rep.max_rel_diag_mu = std::max(rep.max_rel_diag_mu, rel(gmu[e], dm, 1e-12));
          rep.max_rel_diag_nu = std::max(rep.max_rel_diag_nu, rel(gnu[j * block + e], dn, 1e-12));
        }

    const auto fd = oracles::finite_diff([&](const Tensor& th) { return moments(oracles::naive_conv(x, th, geo)); },
                                         weight, 1e-4);
    // fd rows: mean of channel j, then mean_sq of channel j; columns: weight entries.
    const std::size_t cols = weight.size();
    for (std::size_t j = 0; j < cout; ++j)
      for (std::size_t col = 0; col < cols; ++col) {
        const std::size_t q = col / block, e = col % block;
        const double dm = jac.d_mean[(j * cout + q) * block + e];
        const double dn = jac.d_mean_sq[(j * cout + q) * block + e];
        rep.max_rel_fd = std::max(rep.max_rel_fd, rel(fd[j * cols + col], dm, 1e-3));
        rep.max_rel_fd = std::max(rep.max_rel_fd, rel(fd[(cout + j) * cols + col], dn, 1e-3));
      }
    ++rep.instances;
  }
  rep.seconds = seconds_since(t0);
  return rep;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(y[i] > 0.0) || !(x[i] > 0.0)) continue;
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    ++n;
  }
  const double denom = double(n) * sxx - sx * sx;
  if (n < 2 || denom == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return (double(n) * sxy - sx * sy) / denom;
}

TaylorReport taylor_suite(std::uint64_t seed, std::size_t directions, std::vector<double> scales) {
  const auto t0 = Clock::now();
  Rng rng(seed);
  TaylorReport rep;
  rep.scales = scales;
  rep.directions = directions;

  const ConvGeometry geo{1, 1};
  const Tensor x = random_tensor({2, 2, 5, 5}, rng);
  const Tensor weight = random_tensor({3, 2, 3, 3}, rng, 0.5);
  const auto bundle = oracles::make_replay_bundle(x, geo, weight);

  IterationRecord record;
  record.stats = oracles::replay_exact_stats(bundle, weight);
  record.grad_mean = stat_grad_mu(x, weight.shape(), geo);
  record.grad_mean_sq = stat_grad_nu(x, weight, geo, oracles::naive_conv(x, weight, geo));
  record.weight_snapshot = weight;

  double wnorm = 0.0;
  for (double v : weight.data()) wnorm += v * v;
  wnorm = std::sqrt(wnorm);

  std::vector<double> xs, mu_comp, mu_stale, nu_comp, nu_stale;
  for (std::size_t d = 0; d < directions; ++d) {
    Tensor dir = random_tensor(weight.shape(), rng);
    double dn = 0.0;
    for (double v : dir.data()) dn += v * v;
    for (double& v : dir.data()) v *= wnorm / std::sqrt(dn);

    for (double s : scales) {
      Tensor moved = weight;
      for (std::size_t i = 0; i < moved.size(); ++i) moved[i] += s * dir[i];
      const ChannelStats exact = oracles::replay_exact_stats(bundle, moved);
      const ChannelStats comp = compensate(record, moved);
      xs.push_back(s);
      mu_comp.push_back(l2(comp.mean, exact.mean));
      mu_stale.push_back(l2(record.stats.mean, exact.mean));
      nu_comp.push_back(l2(comp.mean_sq, exact.mean_sq));
      nu_stale.push_back(l2(record.stats.mean_sq, exact.mean_sq));
    }
  }
  rep.slope_mu_comp = loglog_slope(xs, mu_comp);
  rep.slope_mu_stale = loglog_slope(xs, mu_stale);
  rep.slope_nu_comp = loglog_slope(xs, nu_comp);
  rep.slope_nu_stale = loglog_slope(xs, nu_stale);
  rep.zero_mu_comp = static_cast<std::size_t>(std::count(mu_comp.begin(), mu_comp.end(), 0.0));
  rep.max_mu_comp_error = *std::max_element(mu_comp.begin(), mu_comp.end());
  rep.max_mu_stale_error = *std::max_element(mu_stale.begin(), mu_stale.end());
  rep.max_nu_comp_error = *std::max_element(nu_comp.begin(), nu_comp.end());
  rep.seconds = seconds_since(t0);
  return rep;
}

ClampReport clamp_fuzz(std::size_t trials, std::uint64_t seed) {
  const auto t0 = Clock::now();
  Rng rng(seed);
  ClampReport rep;
  rep.trials = trials;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t k = 1 + rng.below(8), c = 1 + rng.below(4);
    // Magnitudes from 1e-6 to 1e6 so cancellation in nu - mu^2 is exercised.
    const double scale = std::pow(10.0, -6.0 + 12.0 * rng.uniform());
    std::vector<ChannelStats> terms(k);
    for (auto& s : terms) {
      s.mean.resize(c);
      s.mean_sq.resize(c);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double mu = scale * rng.normal();
        s.mean[ch] = mu;
        // Roughly a third of the raw second moments are below mu^2; some are negative.
        s.mean_sq[ch] = mu * mu + scale * scale * (rng.normal() + 0.5);
      }
    }
    const auto agg = aggregate(terms[0], std::span<const ChannelStats>(terms).subspan(1));
    for (std::size_t ch = 0; ch < c; ++ch) {
      if (!(agg.mean_sq[ch] >= agg.mean[ch] * agg.mean[ch])) ++rep.nu_violations;
      if (!(agg.variance[ch] >= 0.0) || !std::isfinite(agg.variance[ch])) ++rep.var_violations;
    }
    for (auto v : agg.clamped) rep.clamped_terms += v;
  }
  rep.seconds = seconds_since(t0);
  return rep;
}

}  // namespace cbn::suites
