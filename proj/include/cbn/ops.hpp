#pragma once

#include <cstddef>
#include <vector>

#include "cbn/kernels.hpp"
#include "cbn/tensor.hpp"

namespace cbn {

/// Stride and zero padding of a square-strided 2-D cross-correlation.
struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;

  friend bool operator==(const ConvGeometry&, const ConvGeometry&) = default;
};

/// Mean over `axes`; reduced axes keep extent 1.
Tensor reduce_mean_over(const Tensor& t, const std::vector<std::size_t>& axes);

enum class ElementwiseOp { add, sub, mul, div, sqrt, max, square };

// Unary form (sqrt, square).
Tensor elementwise(ElementwiseOp op, const Tensor& a);
// Binary form. Operands must have equal rank; an axis of extent 1 stretches to
// match the other operand. Division by zero follows IEEE semantics.
Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b);

/// Cross-correlation of N x C_in x H x W input with C_out x C_in x K_h x K_w weights.
Tensor conv2d_forward(const Tensor& input, const Tensor& weight, ConvGeometry geometry);

/// Kernel extents for an input/weight pair; throws ShapeError on mismatch.
kernels::ConvDims conv_dims(const Shape& input, const Shape& weight, ConvGeometry geometry);

}  // namespace cbn
