#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cbn/normalizers.hpp"
#include "cbn/ops.hpp"
#include "cbn/rng.hpp"
#include "cbn/tensor.hpp"

namespace cbn {

enum class LayerKind { conv2d, fully_connected, relu, avg_pool, max_pool, normalizer, flatten };

std::string to_string(LayerKind kind);

struct NormSpec {
  NormKind kind = NormKind::bn;
  std::size_t window = 1;
  std::uint64_t burn_in_iterations = 0;
  BnConfig config;
  bool taylor_backprop = true;
};

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t out_channels = 0;  // conv filters or fc features
  std::size_t kernel = 1;        // conv kernel or pool window (pool stride equals window)
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool bias = false;
  NormSpec norm;

  static LayerSpec conv(std::size_t out, std::size_t kernel, std::size_t stride = 1, std::size_t padding = 0,
                        bool bias = false);
  static LayerSpec fc(std::size_t out, bool bias = true);
  static LayerSpec relu();
  static LayerSpec avg_pool(std::size_t window);
  static LayerSpec max_pool(std::size_t window);
  static LayerSpec normalizer(NormSpec spec);
  static LayerSpec flatten();

  ConvGeometry geometry() const { return {stride, padding}; }
};

/// Layer stack with its parameters and normalizer states.
///
/// Each normalizer is bound to the parameterized layer directly before it;
/// that layer's weight is the one its statistics are compensated against.
struct NetworkGraph {
  Shape input_shape;               // per example, e.g. {C, H, W}
  std::vector<LayerSpec> layers;
  std::vector<Shape> output_shapes;  // per example, after each layer
  // params[l] is {weight} or {weight, bias} for conv / fc layers, empty otherwise.
  std::vector<std::vector<Tensor>> params;
  std::vector<std::optional<CbnState>> norms;

  std::size_t num_classes() const { return output_shapes.empty() ? 0 : shape_size(output_shapes.back()); }
};

/// Validates that shapes compose and initializes weights (He normal for conv,
/// 1/fan_in normal for fc, zero bias, unit gamma, zero beta).
NetworkGraph build_network(Shape input_shape, std::vector<LayerSpec> layers, Rng& rng);

/// The four-block desk-scale CNN: (conv3x3 -> normalizer -> relu) x 4 with
/// channels 16/32/32/64, 2x2 average pooling after the first two blocks, an
/// unpadded last conv, and a fully-connected head.
std::vector<LayerSpec> desk_cnn_layers(const Shape& input_shape, NormSpec norm, std::size_t classes);
/// conv8 -> normalizer -> relu -> avgpool2 -> flatten -> fc; used by quick tests.
std::vector<LayerSpec> tiny_cnn_layers(NormSpec norm, std::size_t classes);

/// Non-owning view of one parameter tensor, in the fixed order used by
/// gradients and optimizer state.
struct ParamRef {
  std::size_t layer;
  std::string name;
  Tensor* tensor;
};
std::vector<ParamRef> parameters(NetworkGraph& graph);
std::vector<Shape> parameter_shapes(const NetworkGraph& graph);

using Gradients = std::vector<Tensor>;

enum class Mode { train, eval };

/// Normalizer behaviour override for probing a network without touching it:
/// `batch_stats` normalizes every layer with the current batch only.
enum class NormOverride { none, batch_stats };

struct ForwardTrace {
  Mode mode = Mode::train;
  std::vector<Tensor> inputs;  // input to each layer
  std::vector<std::optional<NormCache>> norm_caches;
  std::vector<std::vector<std::size_t>> argmax;  // max-pool winners
  bool valid = false;
};

struct ForwardResult {
  Tensor logits;
  ForwardTrace trace;
};

ForwardResult forward(NetworkGraph& graph, const Tensor& batch, Mode mode,
                      StateUpdate update = StateUpdate::commit, NormOverride override = NormOverride::none);

/// Eval-mode forward that cannot mutate the graph.
Tensor evaluate(const NetworkGraph& graph, const Tensor& batch);

/// Parameter gradients in `parameters()` order. Gradients reaching a CBN
/// layer through its Taylor terms are added to the bound layer's weight.
/// When `input_grad` is non-null it receives d(loss)/d(batch).
Gradients backward(const NetworkGraph& graph, const ForwardTrace& trace, const Tensor& grad_logits,
                   Tensor* input_grad = nullptr);

/// Runs backward from a gradient injected at the output of layer `from_layer`
/// (layers after it are skipped). Used to differentiate intermediate quantities.
Gradients backward_from(const NetworkGraph& graph, const ForwardTrace& trace, std::size_t from_layer,
                        const Tensor& grad_at_output);

struct LossResult {
  double loss = 0.0;  // mean cross-entropy
  std::size_t correct = 0;
  Tensor grad;  // d(mean loss)/d(logits)
};

LossResult softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

struct SgdState {
  std::vector<Tensor> velocity;
};

struct SgdParams {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

SgdState make_sgd_state(const NetworkGraph& graph);

/// v <- momentum * v + g + weight_decay * theta;  theta <- theta - lr * v.
/// Decay applies to every parameter, affine gamma and beta included.
void sgd_step(NetworkGraph& graph, const Gradients& grads, SgdState& state, const SgdParams& p);

}  // namespace cbn
