#pragma once

// Data-parallel inner loops. Every kernel exists twice: the OpenMP version in
// cbn::kernels and a plain serial reference in cbn::kernels::serial that tests
// and the benchmark compare against. Each output element is accumulated by one
// thread in a fixed order, so results do not depend on the thread count.

#include <cstddef>
#include <span>

namespace cbn::kernels {

/// Extents of one 2-D cross-correlation with zero padding.
struct ConvDims {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t in_h = 1;
  std::size_t in_w = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_h() const { return (in_h + 2 * padding - kernel_h) / stride + 1; }
  std::size_t out_w() const { return (in_w + 2 * padding - kernel_w) / stride + 1; }
  std::size_t input_size() const { return batch * in_channels * in_h * in_w; }
  std::size_t output_size() const { return batch * out_channels * out_h() * out_w(); }
  std::size_t weight_size() const { return out_channels * in_channels * kernel_h * kernel_w; }
  /// Number of output positions per channel (N * H_out * W_out).
  std::size_t positions() const { return batch * out_h() * out_w(); }
  /// True when at least one output position exists.
  bool valid() const {
    return stride > 0 && kernel_h > 0 && kernel_w > 0 && in_h + 2 * padding >= kernel_h &&
           in_w + 2 * padding >= kernel_w;
  }
};

void conv2d_forward(const ConvDims& d, std::span<const double> input, std::span<const double> weight,
                    std::span<double> output);
void conv2d_backward_input(const ConvDims& d, std::span<const double> grad_output,
                           std::span<const double> weight, std::span<double> grad_input);
// grad_weight[co,ci,kh,kw] = sum over n,oh,ow of grad_output[n,co,oh,ow] * input[n,ci,ih,iw].
void conv2d_backward_weight(const ConvDims& d, std::span<const double> input,
                            std::span<const double> grad_output, std::span<double> grad_weight);

// Mean over output positions of the input tap that meets kernel element (kh, kw):
// out[ci,kh,kw] = (1/m) sum_i input[i + offset(kh,kw), ci], zero outside the image.
void conv2d_patch_mean(const ConvDims& d, std::span<const double> input, std::span<double> out);

/// Per-channel mean and mean of squares of an N x C x S activation.
void channel_moments(std::size_t batch, std::size_t channels, std::size_t spatial, std::span<const double> x,
                     std::span<double> mean, std::span<double> mean_sq);

namespace serial {

void conv2d_forward(const ConvDims& d, std::span<const double> input, std::span<const double> weight,
                    std::span<double> output);
void conv2d_backward_input(const ConvDims& d, std::span<const double> grad_output,
                           std::span<const double> weight, std::span<double> grad_input);
void conv2d_backward_weight(const ConvDims& d, std::span<const double> input,
                            std::span<const double> grad_output, std::span<double> grad_weight);
void conv2d_patch_mean(const ConvDims& d, std::span<const double> input, std::span<double> out);
void channel_moments(std::size_t batch, std::size_t channels, std::size_t spatial, std::span<const double> x,
                     std::span<double> mean, std::span<double> mean_sq);

}  // namespace serial

/// Number of threads the OpenMP kernels will use (1 without OpenMP).
int max_threads();

}  // namespace cbn::kernels
