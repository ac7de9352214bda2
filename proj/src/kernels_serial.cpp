#include <cstdint>

#include "cbn/kernels.hpp"

// Reference loops written per output element. They follow the same
// accumulation order as the parallel kernels.

namespace cbn::kernels::serial {
namespace {

// Input coordinate hit by output index o and kernel tap k, or -1 if in padding.
std::int64_t tap(std::size_t o, std::size_t k, std::size_t stride, std::size_t padding, std::size_t extent) {
  const auto i = static_cast<std::int64_t>(o * stride + k) - static_cast<std::int64_t>(padding);
  return (i < 0 || i >= static_cast<std::int64_t>(extent)) ? -1 : i;
}

}  // namespace

void conv2d_forward(const ConvDims& d, std::span<const double> input, std::span<const double> weight,
                    std::span<double> output) {
  const std::size_t oh_n = d.out_h(), ow_n = d.out_w();
  for (std::size_t n = 0; n < d.batch; ++n)
    for (std::size_t co = 0; co < d.out_channels; ++co)
      for (std::size_t oh = 0; oh < oh_n; ++oh)
        for (std::size_t ow = 0; ow < ow_n; ++ow) {
          double acc = 0.0;
          for (std::size_t ci = 0; ci < d.in_channels; ++ci)
            for (std::size_t kh = 0; kh < d.kernel_h; ++kh) {
              const auto ih = tap(oh, kh, d.stride, d.padding, d.in_h);
              if (ih < 0) continue;
              for (std::size_t kw = 0; kw < d.kernel_w; ++kw) {
                const auto iw = tap(ow, kw, d.stride, d.padding, d.in_w);
                if (iw < 0) continue;
                acc += weight[((co * d.in_channels + ci) * d.kernel_h + kh) * d.kernel_w + kw] *
                       input[((n * d.in_channels + ci) * d.in_h + ih) * d.in_w + iw];
              }
            }
          output[((n * d.out_channels + co) * oh_n + oh) * ow_n + ow] = acc;
        }
}

void conv2d_backward_input(const ConvDims& d, std::span<const double> grad_output,
                           std::span<const double> weight, std::span<double> grad_input) {
  const std::size_t oh_n = d.out_h(), ow_n = d.out_w();
  for (std::size_t n = 0; n < d.batch; ++n)
    for (std::size_t ci = 0; ci < d.in_channels; ++ci)
      for (std::size_t ih = 0; ih < d.in_h; ++ih)
        for (std::size_t iw = 0; iw < d.in_w; ++iw) {
          double acc = 0.0;
          for (std::size_t co = 0; co < d.out_channels; ++co)
            for (std::size_t kh = 0; kh < d.kernel_h; ++kh) {
              const std::size_t sh = ih + d.padding;
              if (sh < kh || (sh - kh) % d.stride != 0 || (sh - kh) / d.stride >= oh_n) continue;
              const std::size_t oh = (sh - kh) / d.stride;
              for (std::size_t kw = 0; kw < d.kernel_w; ++kw) {
                const std::size_t sw = iw + d.padding;
                if (sw < kw || (sw - kw) % d.stride != 0 || (sw - kw) / d.stride >= ow_n) continue;
                const std::size_t ow = (sw - kw) / d.stride;
                acc += weight[((co * d.in_channels + ci) * d.kernel_h + kh) * d.kernel_w + kw] *
                       grad_output[((n * d.out_channels + co) * oh_n + oh) * ow_n + ow];
              }
            }
          grad_input[((n * d.in_channels + ci) * d.in_h + ih) * d.in_w + iw] = acc;
        }
}

void conv2d_backward_weight(const ConvDims& d, std::span<const double> input,
                            std::span<const double> grad_output, std::span<double> grad_weight) {
  const std::size_t oh_n = d.out_h(), ow_n = d.out_w();
  for (std::size_t co = 0; co < d.out_channels; ++co)
    for (std::size_t ci = 0; ci < d.in_channels; ++ci)
      for (std::size_t kh = 0; kh < d.kernel_h; ++kh)
        for (std::size_t kw = 0; kw < d.kernel_w; ++kw) {
          double acc = 0.0;
          for (std::size_t n = 0; n < d.batch; ++n)
            for (std::size_t oh = 0; oh < oh_n; ++oh) {
              const auto ih = tap(oh, kh, d.stride, d.padding, d.in_h);
              if (ih < 0) continue;
              for (std::size_t ow = 0; ow < ow_n; ++ow) {
                const auto iw = tap(ow, kw, d.stride, d.padding, d.in_w);
                if (iw < 0) continue;
                acc += grad_output[((n * d.out_channels + co) * oh_n + oh) * ow_n + ow] *
                       input[((n * d.in_channels + ci) * d.in_h + ih) * d.in_w + iw];
              }
            }
          grad_weight[((co * d.in_channels + ci) * d.kernel_h + kh) * d.kernel_w + kw] = acc;
        }
}

void conv2d_patch_mean(const ConvDims& d, std::span<const double> input, std::span<double> out) {
  const std::size_t oh_n = d.out_h(), ow_n = d.out_w();
  const double inv_m = 1.0 / static_cast<double>(d.positions());
  for (std::size_t ci = 0; ci < d.in_channels; ++ci)
    for (std::size_t kh = 0; kh < d.kernel_h; ++kh)
      for (std::size_t kw = 0; kw < d.kernel_w; ++kw) {
        double acc = 0.0;
        for (std::size_t n = 0; n < d.batch; ++n)
          for (std::size_t oh = 0; oh < oh_n; ++oh) {
            const auto ih = tap(oh, kh, d.stride, d.padding, d.in_h);
            if (ih < 0) continue;
            for (std::size_t ow = 0; ow < ow_n; ++ow) {
              const auto iw = tap(ow, kw, d.stride, d.padding, d.in_w);
              if (iw < 0) continue;
              acc += input[((n * d.in_channels + ci) * d.in_h + ih) * d.in_w + iw];
            }
          }
        out[(ci * d.kernel_h + kh) * d.kernel_w + kw] = acc * inv_m;
      }
}

void channel_moments(std::size_t batch, std::size_t channels, std::size_t spatial, std::span<const double> x,
                     std::span<double> mean, std::span<double> mean_sq) {
  const double inv_m = 1.0 / static_cast<double>(batch * spatial);
  for (std::size_t c = 0; c < channels; ++c) {
    double s = 0.0, sq = 0.0;
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t i = 0; i < spatial; ++i) {
        const double v = x[(n * channels + c) * spatial + i];
        s += v;
        sq += v * v;
      }
    mean[c] = s * inv_m;
    mean_sq[c] = sq * inv_m;
  }
}

}  // namespace cbn::kernels::serial
