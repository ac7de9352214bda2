#include "cbn/kernels.hpp"

#include <algorithm>
#include <cstdint>

#ifdef CBN_HAVE_OPENMP
#include <omp.h>
#endif

namespace cbn::kernels {
namespace {

// Output indices o in [lo, hi) for which o * stride + tap - padding lands in [0, extent).
struct Range {
  std::size_t lo;
  std::size_t hi;
};

Range valid_outputs(std::size_t tap, std::size_t extent, std::size_t out_extent, std::size_t stride,
                    std::size_t padding) {
  const auto first = static_cast<std::int64_t>(padding) - static_cast<std::int64_t>(tap);
  const auto s = static_cast<std::int64_t>(stride);
  std::int64_t lo = first <= 0 ? 0 : (first + s - 1) / s;
  const std::int64_t last = static_cast<std::int64_t>(extent) - 1 + first;
  std::int64_t hi = last < 0 ? 0 : last / s + 1;
  hi = std::min<std::int64_t>(hi, static_cast<std::int64_t>(out_extent));
  lo = std::min(lo, hi);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace

int max_threads() {
#ifdef CBN_HAVE_OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void conv2d_forward(const ConvDims& d, std::span<const double> input, std::span<const double> weight,
                    std::span<double> output) {
  const std::size_t oh_n = d.out_h(), ow_n = d.out_w();
  const std::size_t in_plane = d.in_h * d.in_w, out_plane = oh_n * ow_n;
  const std::size_t kk = d.kernel_h * d.kernel_w;
  const auto planes = static_cast<std::int64_t>(d.batch * d.out_channels);

#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < planes; ++p) {
    const std::size_t n = static_cast<std::size_t>(p) / d.out_channels;
    const std::size_t co = static_cast<std::size_t>(p) % d.out_channels;
    double* out = output.data() + static_cast<std::size_t>(p) * out_plane;
    std::fill(out, out + out_plane, 0.0);
    for (std::size_t ci = 0; ci < d.in_channels; ++ci) {
      const double* in = input.data() + (n * d.in_channels + ci) * in_plane;
      const double* w = weight.data() + (co * d.in_channels + ci) * kk;
      for (std::size_t kh = 0; kh < d.kernel_h; ++kh) {
        const Range rows = valid_outputs(kh, d.in_h, oh_n, d.stride, d.padding);
        for (std::size_t kw = 0; kw < d.kernel_w; ++kw) {
          const double wv = w[kh * d.kernel_w + kw];
          const Range cols = valid_outputs(kw, d.in_w, ow_n, d.stride, d.padding);
          for (std::size_t oh = rows.lo; oh < rows.hi; ++oh) {
            const double* in_row = in + (oh * d.stride + kh - d.padding) * d.in_w;
            double* out_row = out + oh * ow_n;
            if (d.stride == 1) {
              const double* src = in_row + kw - d.padding;
              for (std::size_t ow = cols.lo; ow < cols.hi; ++ow) out_row[ow] += wv * src[ow];
            } else {
              for (std::size_t ow = cols.lo; ow < cols.hi; ++ow) {
                out_row[ow] += wv * in_row[ow * d.stride + kw - d.padding];
              }
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_input(const ConvDims& d, std::span<const double> grad_output,
                           std::span<const double> weight, std::span<double> grad_input) {
  const std::size_t oh_n = d.out_h(), ow_n = d.out_w();
  const std::size_t in_plane = d.in_h * d.in_w, out_plane = oh_n * ow_n;
  const std::size_t kk = d.kernel_h * d.kernel_w;
  const auto planes = static_cast<std::int64_t>(d.batch * d.in_channels);

#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < planes; ++p) {
    const std::size_t n = static_cast<std::size_t>(p) / d.in_channels;
    const std::size_t ci = static_cast<std::size_t>(p) % d.in_channels;
    double* gin = grad_input.data() + static_cast<std::size_t>(p) * in_plane;
    std::fill(gin, gin + in_plane, 0.0);
    for (std::size_t co = 0; co < d.out_channels; ++co) {
      const double* g = grad_output.data() + (n * d.out_channels + co) * out_plane;
      const double* w = weight.data() + (co * d.in_channels + ci) * kk;
      for (std::size_t kh = 0; kh < d.kernel_h; ++kh) {
        const Range rows = valid_outputs(kh, d.in_h, oh_n, d.stride, d.padding);
        for (std::size_t kw = 0; kw < d.kernel_w; ++kw) {
          const double wv = w[kh * d.kernel_w + kw];
          const Range cols = valid_outputs(kw, d.in_w, ow_n, d.stride, d.padding);
          for (std::size_t oh = rows.lo; oh < rows.hi; ++oh) {
            double* gin_row = gin + (oh * d.stride + kh - d.padding) * d.in_w;
            const double* g_row = g + oh * ow_n;
            if (d.stride == 1) {
              double* dst = gin_row + kw - d.padding;
              for (std::size_t ow = cols.lo; ow < cols.hi; ++ow) dst[ow] += wv * g_row[ow];
            } else {
              for (std::size_t ow = cols.lo; ow < cols.hi; ++ow) {
                gin_row[ow * d.stride + kw - d.padding] += wv * g_row[ow];
              }
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_weight(const ConvDims& d, std::span<const double> input,
                            std::span<const double> grad_output, std::span<double> grad_weight) {
  const std::size_t oh_n = d.out_h(), ow_n = d.out_w();
  const std::size_t in_plane = d.in_h * d.in_w, out_plane = oh_n * ow_n;
  const std::size_t kk = d.kernel_h * d.kernel_w;
  const auto pairs = static_cast<std::int64_t>(d.out_channels * d.in_channels);

#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < pairs; ++p) {
    const std::size_t co = static_cast<std::size_t>(p) / d.in_channels;
    const std::size_t ci = static_cast<std::size_t>(p) % d.in_channels;
    double* gw = grad_weight.data() + static_cast<std::size_t>(p) * kk;
    for (std::size_t kh = 0; kh < d.kernel_h; ++kh) {
      const Range rows = valid_outputs(kh, d.in_h, oh_n, d.stride, d.padding);
      for (std::size_t kw = 0; kw < d.kernel_w; ++kw) {
        const Range cols = valid_outputs(kw, d.in_w, ow_n, d.stride, d.padding);
        double acc = 0.0;
        for (std::size_t n = 0; n < d.batch; ++n) {
          const double* in = input.data() + (n * d.in_channels + ci) * in_plane;
          const double* g = grad_output.data() + (n * d.out_channels + co) * out_plane;
          for (std::size_t oh = rows.lo; oh < rows.hi; ++oh) {
            const double* in_row = in + (oh * d.stride + kh - d.padding) * d.in_w;
            const double* g_row = g + oh * ow_n;
            for (std::size_t ow = cols.lo; ow < cols.hi; ++ow) {
              acc += g_row[ow] * in_row[ow * d.stride + kw - d.padding];
            }
          }
        }
        gw[kh * d.kernel_w + kw] = acc;
      }
    }
  }
}

void conv2d_patch_mean(const ConvDims& d, std::span<const double> input, std::span<double> out) {
  const std::size_t oh_n = d.out_h(), ow_n = d.out_w();
  const std::size_t in_plane = d.in_h * d.in_w;
  const std::size_t kk = d.kernel_h * d.kernel_w;
  const double inv_m = 1.0 / static_cast<double>(d.positions());
  const auto channels = static_cast<std::int64_t>(d.in_channels);

#pragma omp parallel for schedule(static)
  for (std::int64_t c = 0; c < channels; ++c) {
    const std::size_t ci = static_cast<std::size_t>(c);
    for (std::size_t kh = 0; kh < d.kernel_h; ++kh) {
      const Range rows = valid_outputs(kh, d.in_h, oh_n, d.stride, d.padding);
      for (std::size_t kw = 0; kw < d.kernel_w; ++kw) {
        const Range cols = valid_outputs(kw, d.in_w, ow_n, d.stride, d.padding);
        double acc = 0.0;
        for (std::size_t n = 0; n < d.batch; ++n) {
          const double* in = input.data() + (n * d.in_channels + ci) * in_plane;
          for (std::size_t oh = rows.lo; oh < rows.hi; ++oh) {
            const double* in_row = in + (oh * d.stride + kh - d.padding) * d.in_w;
            for (std::size_t ow = cols.lo; ow < cols.hi; ++ow) acc += in_row[ow * d.stride + kw - d.padding];
          }
        }
        out[ci * kk + kh * d.kernel_w + kw] = acc * inv_m;
      }
    }
  }
}

void channel_moments(std::size_t batch, std::size_t channels, std::size_t spatial, std::span<const double> x,
                     std::span<double> mean, std::span<double> mean_sq) {
  const double inv_m = 1.0 / static_cast<double>(batch * spatial);
  const auto cs = static_cast<std::int64_t>(channels);

#pragma omp parallel for schedule(static)
  for (std::int64_t c = 0; c < cs; ++c) {
    const std::size_t ch = static_cast<std::size_t>(c);
    double s = 0.0, sq = 0.0;
    for (std::size_t n = 0; n < batch; ++n) {
      const double* row = x.data() + (n * channels + ch) * spatial;
      for (std::size_t i = 0; i < spatial; ++i) {
        s += row[i];
        sq += row[i] * row[i];
      }
    }
    mean[ch] = s * inv_m;
    mean_sq[ch] = sq * inv_m;
  }
}

}  // namespace cbn::kernels
