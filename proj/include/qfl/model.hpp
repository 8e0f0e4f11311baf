#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "qfl/tensor.hpp"

namespace qfl {

enum class LayerKind { Conv2d, MaxPool2d, Relu, Flatten, Dense, Softmax };

const char* layer_kind_name(LayerKind kind);

// One layer of the network. Conv kernels are fixed at 3x3, stride 1, no
// padding; pooling is fixed at 2x2 windows with stride 2.
struct LayerSpec {
  LayerKind kind;
  std::size_t in_channels = 0;   // conv2d
  std::size_t out_channels = 0;  // conv2d
  std::size_t in_features = 0;   // dense
  std::size_t out_features = 0;  // dense

  static LayerSpec conv2d(std::size_t in_ch, std::size_t out_ch);
  static LayerSpec maxpool2d();
  static LayerSpec relu();
  static LayerSpec flatten();
  static LayerSpec dense(std::size_t in_f, std::size_t out_f);
  static LayerSpec softmax();

  bool has_parameters() const { return kind == LayerKind::Conv2d || kind == LayerKind::Dense; }
  std::string describe() const;
};

// Layer stack plus the input image shape it expects (channels, height, width).
struct Architecture {
  std::size_t input_channels = 1;
  std::size_t input_height = 0;
  std::size_t input_width = 0;
  std::vector<LayerSpec> layers;
};

// conv(1->4, 3x3) -> relu -> maxpool(2x2) -> flatten -> dense(->2) -> softmax,
// sized for a single-channel height x width input.
Architecture default_architecture(std::size_t height, std::size_t width);

// Checks pairwise shape compatibility and the two-class softmax tail.
// Throws ConfigError naming the offending layer pair. Returns the output
// shape of every layer (without the batch dimension).
std::vector<std::vector<std::size_t>> validate_architecture(const Architecture& arch);

// Flat, shape-annotated parameter set: for each parameterized layer, its
// weight tensor followed by its bias tensor, in architecture order.
struct ModelParameters {
  std::vector<Tensor> tensors;

  std::size_t total_count() const;
  std::vector<double> flatten() const;
  void assign_flat(const std::vector<double>& flat);
  bool same_shapes(const ModelParameters& other) const;
};

struct Batch {
  Tensor inputs;            // [B, C, H, W]
  std::vector<int> labels;  // values in {0, 1}

  std::size_t size() const { return labels.size(); }
};

// Activation record produced by forward() and consumed by backward().
struct ForwardCache {
  std::vector<Tensor> layer_inputs;                  // input of every layer
  std::vector<std::vector<std::size_t>> pool_argmax; // per maxpool layer, flat source index per output element
  Tensor probs;                                      // [B, 2]
  std::uint64_t fingerprint = 0;                     // binds cache to (params, batch)
};

// Glorot-uniform weights, zero biases, deterministic per seed.
ModelParameters init_model(const Architecture& arch, std::uint64_t seed);

std::pair<Tensor, ForwardCache> forward(const ModelParameters& params, const Architecture& arch,
                                        const Batch& batch);

// Mean cross-entropy over the batch; probabilities clamped to >= 1e-12
// before the log.
double loss_ce(const Tensor& probs, const std::vector<int>& labels);

// Gradient of the mean cross-entropy loss with respect to every parameter.
// The cache must come from forward() on the same params and batch.
ModelParameters backward(const ModelParameters& params, const Architecture& arch,
                         const Batch& batch, const ForwardCache& cache);

ModelParameters sgd_step(const ModelParameters& params, const ModelParameters& gradient,
                         double lr);

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
};

// Argmax-match accuracy (ties resolve to the lower class index) and mean
// cross-entropy over the whole set.
EvalResult evaluate(const ModelParameters& params, const Architecture& arch,
                    const std::vector<Tensor>& images, const std::vector<int>& labels);

}  // namespace qfl
