#include <algorithm>
#include <cmath>
#include <set>

#include "cbn/errors.hpp"
#include "cbn/ops.hpp"

namespace cbn {

Tensor reduce_mean_over(const Tensor& t, const std::vector<std::size_t>& axes) {
  const std::size_t rank = t.rank();
  std::vector<bool> reduced(rank, false);
  for (std::size_t a : axes) {
    if (a >= rank) {
      throw ShapeError("reduce axis " + std::to_string(a) + " invalid for shape " + shape_string(t.shape()));
    }
    reduced[a] = true;
  }
  Shape out_shape = t.shape();
  std::size_t count = 1;
  for (std::size_t a = 0; a < rank; ++a) {
    if (reduced[a]) {
      count *= out_shape[a];
      out_shape[a] = 1;
    }
  }
  Tensor out(out_shape);
  // Walk the input in row-major order, tracking the matching output offset.
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t flat = 0; flat < t.size(); ++flat) {
    std::size_t o = 0;
    for (std::size_t a = 0; a < rank; ++a) o = o * out_shape[a] + (reduced[a] ? 0 : idx[a]);
    out[o] += t[flat];
    for (std::size_t a = rank; a-- > 0;) {
      if (++idx[a] < t.shape()[a]) break;
      idx[a] = 0;
    }
  }
  if (count > 0) {
    for (double& v : out.data()) v /= static_cast<double>(count);
  }
  return out;
}

namespace {

double apply(ElementwiseOp op, double a, double b) {
  switch (op) {
    case ElementwiseOp::add: return a + b;
    case ElementwiseOp::sub: return a - b;
    case ElementwiseOp::mul: return a * b;
    case ElementwiseOp::div: return a / b;
    case ElementwiseOp::max: return std::max(a, b);
    case ElementwiseOp::sqrt: return std::sqrt(a);
    case ElementwiseOp::square: return a * a;
  }
  return 0.0;
}

bool is_unary(ElementwiseOp op) { return op == ElementwiseOp::sqrt || op == ElementwiseOp::square; }

}  // namespace

Tensor elementwise(ElementwiseOp op, const Tensor& a) {
  if (!is_unary(op)) throw ArgumentError("binary elementwise op called with one operand");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = apply(op, a[i], 0.0);
  return out;
}

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b) {
  if (is_unary(op)) throw ArgumentError("unary elementwise op called with two operands");
  if (a.rank() != b.rank()) {
    throw ShapeError("elementwise rank mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  const std::size_t rank = a.rank();
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t x = a.shape()[i], y = b.shape()[i];
    if (x != y && x != 1 && y != 1) {
      throw ShapeError("cannot broadcast " + shape_string(a.shape()) + " with " + shape_string(b.shape()));
    }
    out_shape[i] = std::max(x, y);
  }
  Tensor out(out_shape);
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t flat = 0; flat < out.size(); ++flat) {
    std::size_t ia = 0, ib = 0;
    for (std::size_t d = 0; d < rank; ++d) {
      ia = ia * a.shape()[d] + (a.shape()[d] == 1 ? 0 : idx[d]);
      ib = ib * b.shape()[d] + (b.shape()[d] == 1 ? 0 : idx[d]);
    }
    out[flat] = apply(op, a[ia], b[ib]);
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
    }
  }
  return out;
}

kernels::ConvDims conv_dims(const Shape& input, const Shape& weight, ConvGeometry geometry) {
  if (input.size() != 4 || weight.size() != 4) {
    throw ShapeError("conv2d expects rank-4 input and weight, got " + shape_string(input) + " and " +
                     shape_string(weight));
  }
  if (input[1] != weight[1]) {
    throw ShapeError("conv2d channel mismatch: input " + shape_string(input) + ", weight " + shape_string(weight));
  }
  kernels::ConvDims d;
  d.batch = input[0];
  d.in_channels = input[1];
  d.in_h = input[2];
  d.in_w = input[3];
  d.out_channels = weight[0];
  d.kernel_h = weight[2];
  d.kernel_w = weight[3];
  d.stride = geometry.stride;
  d.padding = geometry.padding;
  if (!d.valid()) {
    throw ShapeError("conv2d geometry invalid for input " + shape_string(input) + ", weight " + shape_string(weight) +
                     ", stride " + std::to_string(geometry.stride) + ", padding " + std::to_string(geometry.padding));
  }
  return d;
}

Tensor conv2d_forward(const Tensor& input, const Tensor& weight, ConvGeometry geometry) {
  const auto d = conv_dims(input.shape(), weight.shape(), geometry);
  Tensor out({d.batch, d.out_channels, d.out_h(), d.out_w()});
  kernels::conv2d_forward(d, input.data(), weight.data(), out.data());
  return out;
}

}  // namespace cbn
