#include "qfl/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "qfl/errors.hpp"
#include "qfl/hash.hpp"
#include "qfl/rng.hpp"

namespace qfl {

namespace {

constexpr std::size_t kKernel = 3;     // conv kernel edge
constexpr std::size_t kPool = 2;       // pool window edge and stride
constexpr double kProbFloor = 1e-12;   // clamp before log in cross-entropy

std::uint64_t hash_doubles(const std::vector<double>& v, std::uint64_t state) {
  return fnv1a64(reinterpret_cast<const std::uint8_t*>(v.data()), v.size() * sizeof(double),
                 state);
}

std::uint64_t cache_fingerprint(const ModelParameters& params, const Batch& batch) {
  std::uint64_t h = kFnvOffsetBasis;
  for (const Tensor& t : params.tensors) h = hash_doubles(t.values, h);
  h = hash_doubles(batch.inputs.values, h);
  for (int label : batch.labels) {
    std::uint8_t b = static_cast<std::uint8_t>(label);
    h = fnv1a64(&b, 1, h);
  }
  return h;
}

void require_finite(const Tensor& t, const char* where) {
  if (!t.all_finite()) throw NumericError(std::string(where) + ": non-finite values");
}

}  // namespace

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::MaxPool2d: return "maxpool2d";
    case LayerKind::Relu: return "relu";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Dense: return "dense";
    case LayerKind::Softmax: return "softmax";
  }
  return "?";
}

LayerSpec LayerSpec::conv2d(std::size_t in_ch, std::size_t out_ch) {
  LayerSpec s;
  s.kind = LayerKind::Conv2d;
  s.in_channels = in_ch;
  s.out_channels = out_ch;
  return s;
}

LayerSpec LayerSpec::maxpool2d() { return LayerSpec{LayerKind::MaxPool2d}; }
LayerSpec LayerSpec::relu() { return LayerSpec{LayerKind::Relu}; }
LayerSpec LayerSpec::flatten() { return LayerSpec{LayerKind::Flatten}; }

LayerSpec LayerSpec::dense(std::size_t in_f, std::size_t out_f) {
  LayerSpec s;
  s.kind = LayerKind::Dense;
  s.in_features = in_f;
  s.out_features = out_f;
  return s;
}

LayerSpec LayerSpec::softmax() { return LayerSpec{LayerKind::Softmax}; }

std::string LayerSpec::describe() const {
  std::string name = layer_kind_name(kind);
  if (kind == LayerKind::Conv2d) {
    name += "(" + std::to_string(in_channels) + "->" + std::to_string(out_channels) + ")";
  } else if (kind == LayerKind::Dense) {
    name += "(" + std::to_string(in_features) + "->" + std::to_string(out_features) + ")";
  }
  return name;
}

Architecture default_architecture(std::size_t height, std::size_t width) {
  const std::size_t conv_out = 4;
  const std::size_t pooled_h = (height - (kKernel - 1)) / kPool;
  const std::size_t pooled_w = (width - (kKernel - 1)) / kPool;
  Architecture arch;
  arch.input_channels = 1;
  arch.input_height = height;
  arch.input_width = width;
  arch.layers = {LayerSpec::conv2d(1, conv_out), LayerSpec::relu(), LayerSpec::maxpool2d(),
                 LayerSpec::flatten(), LayerSpec::dense(conv_out * pooled_h * pooled_w, 2),
                 LayerSpec::softmax()};
  return arch;
}

std::vector<std::vector<std::size_t>> validate_architecture(const Architecture& arch) {
  if (arch.layers.empty()) throw ConfigError("architecture has no layers");
  if (arch.input_channels == 0 || arch.input_height == 0 || arch.input_width == 0) {
    throw ConfigError("architecture input shape must be positive");
  }

  auto pair_error = [&](std::size_t idx, const std::string& detail) {
    std::string prev = idx == 0 ? "input" : "layer " + std::to_string(idx - 1) + " (" +
                                                arch.layers[idx - 1].describe() + ")";
    throw ConfigError("incompatible architecture: " + prev + " -> layer " + std::to_string(idx) +
                      " (" + arch.layers[idx].describe() + "): " + detail);
  };

  std::vector<std::size_t> shape = {arch.input_channels, arch.input_height, arch.input_width};
  std::vector<std::vector<std::size_t>> shapes;
  shapes.reserve(arch.layers.size());

  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const LayerSpec& layer = arch.layers[i];
    switch (layer.kind) {
      case LayerKind::Conv2d: {
        if (shape.size() != 3) pair_error(i, "conv2d needs a [C,H,W] input, got " + shape_to_string(shape));
        if (shape[0] != layer.in_channels) {
          pair_error(i, "expected " + std::to_string(layer.in_channels) + " input channels, got " +
                            std::to_string(shape[0]));
        }
        if (layer.out_channels == 0) pair_error(i, "out_channels must be positive");
        if (shape[1] < kKernel || shape[2] < kKernel) {
          pair_error(i, "input " + shape_to_string(shape) + " smaller than the 3x3 kernel");
        }
        shape = {layer.out_channels, shape[1] - (kKernel - 1), shape[2] - (kKernel - 1)};
        break;
      }
      case LayerKind::MaxPool2d: {
        if (shape.size() != 3) pair_error(i, "maxpool2d needs a [C,H,W] input, got " + shape_to_string(shape));
        if (shape[1] < kPool || shape[2] < kPool) {
          pair_error(i, "input " + shape_to_string(shape) + " smaller than the 2x2 window");
        }
        shape = {shape[0], shape[1] / kPool, shape[2] / kPool};
        break;
      }
      case LayerKind::Relu:
        break;
      case LayerKind::Flatten:
        shape = {shape_product(shape)};
        break;
      case LayerKind::Dense: {
        if (shape.size() != 1) pair_error(i, "dense needs a flat input, got " + shape_to_string(shape));
        if (shape[0] != layer.in_features) {
          pair_error(i, "expected in_features " + std::to_string(layer.in_features) + ", got " +
                            std::to_string(shape[0]));
        }
        if (layer.out_features == 0) pair_error(i, "out_features must be positive");
        shape = {layer.out_features};
        break;
      }
      case LayerKind::Softmax: {
        if (shape.size() != 1 || shape[0] != 2) {
          pair_error(i, "softmax needs exactly 2 logits, got " + shape_to_string(shape));
        }
        if (i + 1 != arch.layers.size()) pair_error(i + 1, "softmax must be the final layer");
        break;
      }
    }
    shapes.push_back(shape);
  }

  if (arch.layers.back().kind != LayerKind::Softmax) {
    throw ConfigError("incompatible architecture: final layer is " +
                      arch.layers.back().describe() + ", must be a 2-class softmax");
  }
  return shapes;
}

std::size_t ModelParameters::total_count() const {
  std::size_t n = 0;
  for (const Tensor& t : tensors) n += t.size();
  return n;
}

std::vector<double> ModelParameters::flatten() const {
  std::vector<double> flat;
  flat.reserve(total_count());
  for (const Tensor& t : tensors) flat.insert(flat.end(), t.values.begin(), t.values.end());
  return flat;
}

void ModelParameters::assign_flat(const std::vector<double>& flat) {
  if (flat.size() != total_count()) {
    throw ShapeError("flat parameter count " + std::to_string(flat.size()) +
                     " does not match model total " + std::to_string(total_count()));
  }
  std::size_t pos = 0;
  for (Tensor& t : tensors) {
    std::copy(flat.begin() + pos, flat.begin() + pos + t.size(), t.values.begin());
    pos += t.size();
  }
}

bool ModelParameters::same_shapes(const ModelParameters& other) const {
  if (tensors.size() != other.tensors.size()) return false;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (!tensors[i].same_shape(other.tensors[i])) return false;
  }
  return true;
}

ModelParameters init_model(const Architecture& arch, std::uint64_t seed) {
  validate_architecture(arch);
  Rng rng(seed);
  ModelParameters params;
  for (const LayerSpec& layer : arch.layers) {
    if (!layer.has_parameters()) continue;
    std::size_t fan_in = 0, fan_out = 0;
    Tensor weight, bias;
    if (layer.kind == LayerKind::Conv2d) {
      fan_in = layer.in_channels * kKernel * kKernel;
      fan_out = layer.out_channels * kKernel * kKernel;
      weight = Tensor({layer.out_channels, layer.in_channels, kKernel, kKernel});
      bias = Tensor({layer.out_channels});
    } else {
      fan_in = layer.in_features;
      fan_out = layer.out_features;
      weight = Tensor({layer.out_features, layer.in_features});
      bias = Tensor({layer.out_features});
    }
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& w : weight.values) w = rng.uniform(-bound, bound);
    params.tensors.push_back(std::move(weight));
    params.tensors.push_back(std::move(bias));  // biases stay zero
  }
  return params;
}

namespace {

// Shared layer walker so forward() and evaluate() run the exact same code.
struct ForwardPass {
  const ModelParameters& params;
  const Architecture& arch;

  Tensor run(const Tensor& input, ForwardCache* cache) const {
    Tensor x = input;
    std::size_t tensor_idx = 0;
    const std::size_t batch = x.dims[0];
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
      const LayerSpec& layer = arch.layers[i];
      if (cache) cache->layer_inputs.push_back(x);
      switch (layer.kind) {
        case LayerKind::Conv2d:
          x = conv_forward(x, params.tensors[tensor_idx], params.tensors[tensor_idx + 1]);
          tensor_idx += 2;
          break;
        case LayerKind::MaxPool2d: {
          std::vector<std::size_t> argmax;
          x = pool_forward(x, &argmax);
          if (cache) cache->pool_argmax.push_back(std::move(argmax));
          break;
        }
        case LayerKind::Relu:
          for (double& v : x.values) v = v > 0.0 ? v : 0.0;
          break;
        case LayerKind::Flatten: {
          const std::size_t features = x.size() / batch;
          x = Tensor({batch, features}, std::move(x.values));
          break;
        }
        case LayerKind::Dense:
          x = dense_forward(x, params.tensors[tensor_idx], params.tensors[tensor_idx + 1]);
          tensor_idx += 2;
          break;
        case LayerKind::Softmax:
          softmax_rows(x);
          break;
      }
    }
    return x;
  }

  static Tensor conv_forward(const Tensor& in, const Tensor& weight, const Tensor& bias) {
    const std::size_t B = in.dims[0], C = in.dims[1], H = in.dims[2], W = in.dims[3];
    const std::size_t O = weight.dims[0];
    const std::size_t OH = H - (kKernel - 1), OW = W - (kKernel - 1);
    Tensor out({B, O, OH, OW});
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t o = 0; o < O; ++o) {
        for (std::size_t y = 0; y < OH; ++y) {
          for (std::size_t x = 0; x < OW; ++x) {
            double acc = bias.values[o];
            for (std::size_t c = 0; c < C; ++c) {
              for (std::size_t ky = 0; ky < kKernel; ++ky) {
                for (std::size_t kx = 0; kx < kKernel; ++kx) {
                  acc += weight.values[((o * C + c) * kKernel + ky) * kKernel + kx] *
                         in.values[((b * C + c) * H + y + ky) * W + x + kx];
                }
              }
            }
            out.values[((b * O + o) * OH + y) * OW + x] = acc;
          }
        }
      }
    }
    return out;
  }

  // 2x2 window, stride 2; ties resolve to the first element in scan order.
  static Tensor pool_forward(const Tensor& in, std::vector<std::size_t>* argmax) {
    const std::size_t B = in.dims[0], C = in.dims[1], H = in.dims[2], W = in.dims[3];
    const std::size_t OH = H / kPool, OW = W / kPool;
    Tensor out({B, C, OH, OW});
    if (argmax) argmax->assign(out.size(), 0);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t y = 0; y < OH; ++y) {
          for (std::size_t x = 0; x < OW; ++x) {
            double best = -std::numeric_limits<double>::infinity();
            std::size_t best_idx = 0;
            for (std::size_t ky = 0; ky < kPool; ++ky) {
              for (std::size_t kx = 0; kx < kPool; ++kx) {
                std::size_t idx = ((b * C + c) * H + y * kPool + ky) * W + x * kPool + kx;
                if (in.values[idx] > best) {
                  best = in.values[idx];
                  best_idx = idx;
                }
              }
            }
            std::size_t out_idx = ((b * C + c) * OH + y) * OW + x;
            out.values[out_idx] = best;
            if (argmax) (*argmax)[out_idx] = best_idx;
          }
        }
      }
    }
    return out;
  }

  static Tensor dense_forward(const Tensor& in, const Tensor& weight, const Tensor& bias) {
    const std::size_t B = in.dims[0], F = in.dims[1];
    const std::size_t O = weight.dims[0];
    Tensor out({B, O});
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t o = 0; o < O; ++o) {
        double acc = bias.values[o];
        for (std::size_t f = 0; f < F; ++f) {
          acc += weight.values[o * F + f] * in.values[b * F + f];
        }
        out.values[b * O + o] = acc;
      }
    }
    return out;
  }

  static void softmax_rows(Tensor& x) {
    const std::size_t B = x.dims[0], K = x.dims[1];
    for (std::size_t b = 0; b < B; ++b) {
      double* row = x.values.data() + b * K;
      double m = row[0];
      for (std::size_t k = 1; k < K; ++k) m = std::max(m, row[k]);
      double sum = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        row[k] = std::exp(row[k] - m);
        sum += row[k];
      }
      for (std::size_t k = 0; k < K; ++k) row[k] /= sum;
    }
  }
};

void check_batch(const Architecture& arch, const Batch& batch) {
  if (batch.inputs.rank() != 4) {
    throw ShapeError("batch inputs must be [B,C,H,W], got " +
                     shape_to_string(batch.inputs.dims));
  }
  if (batch.size() == 0) throw ConfigError("batch must hold at least one sample");
  if (batch.inputs.dims[0] != batch.size()) {
    throw ShapeError("batch has " + std::to_string(batch.inputs.dims[0]) + " inputs but " +
                     std::to_string(batch.size()) + " labels");
  }
  const std::vector<std::size_t> expect = {batch.size(), arch.input_channels, arch.input_height,
                                           arch.input_width};
  if (batch.inputs.dims != expect) {
    throw ShapeError("batch input dims: expected " + shape_to_string(expect) + ", got " +
                     shape_to_string(batch.inputs.dims));
  }
  for (int label : batch.labels) {
    if (label != 0 && label != 1) {
      throw ConfigError("labels must be 0 or 1, got " + std::to_string(label));
    }
  }
}

}  // namespace

std::pair<Tensor, ForwardCache> forward(const ModelParameters& params, const Architecture& arch,
                                        const Batch& batch) {
  validate_architecture(arch);
  check_batch(arch, batch);
  ForwardCache cache;
  cache.layer_inputs.reserve(arch.layers.size());
  Tensor probs = ForwardPass{params, arch}.run(batch.inputs, &cache);
  require_finite(probs, "forward");
  cache.probs = probs;
  cache.fingerprint = cache_fingerprint(params, batch);
  return {std::move(probs), std::move(cache)};
}

double loss_ce(const Tensor& probs, const std::vector<int>& labels) {
  const std::size_t B = probs.dims[0], K = probs.dims[1];
  if (labels.size() != B) {
    throw ShapeError("loss_ce: " + std::to_string(B) + " probability rows but " +
                     std::to_string(labels.size()) + " labels");
  }
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    double p = probs.values[b * K + static_cast<std::size_t>(labels[b])];
    total += -std::log(std::max(p, kProbFloor));
  }
  return total / static_cast<double>(B);
}

ModelParameters backward(const ModelParameters& params, const Architecture& arch,
                         const Batch& batch, const ForwardCache& cache) {
  if (cache.fingerprint != cache_fingerprint(params, batch)) {
    throw InternalError("backward: cache does not match these params and batch");
  }

  const std::size_t B = batch.size();
  ModelParameters grads;
  grads.tensors.reserve(params.tensors.size());
  for (const Tensor& t : params.tensors) grads.tensors.emplace_back(t.dims);

  // Combined softmax + cross-entropy gradient w.r.t. the logits.
  Tensor grad = cache.probs;
  for (std::size_t b = 0; b < B; ++b) {
    grad.values[b * 2 + static_cast<std::size_t>(batch.labels[b])] -= 1.0;
  }
  for (double& g : grad.values) g /= static_cast<double>(B);

  std::size_t tensor_idx = params.tensors.size();
  std::size_t pool_idx = cache.pool_argmax.size();
  for (std::size_t i = arch.layers.size(); i-- > 0;) {
    const LayerSpec& layer = arch.layers[i];
    const Tensor& input = cache.layer_inputs[i];
    switch (layer.kind) {
      case LayerKind::Softmax:
        break;  // folded into the logit gradient above
      case LayerKind::Dense: {
        tensor_idx -= 2;
        const Tensor& weight = params.tensors[tensor_idx];
        Tensor& dw = grads.tensors[tensor_idx];
        Tensor& db = grads.tensors[tensor_idx + 1];
        const std::size_t F = weight.dims[1], O = weight.dims[0];
        Tensor gin({B, F});
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t o = 0; o < O; ++o) {
            const double g = grad.values[b * O + o];
            db.values[o] += g;
            for (std::size_t f = 0; f < F; ++f) {
              dw.values[o * F + f] += g * input.values[b * F + f];
              gin.values[b * F + f] += g * weight.values[o * F + f];
            }
          }
        }
        grad = std::move(gin);
        break;
      }
      case LayerKind::Flatten:
        grad = Tensor(input.dims, std::move(grad.values));
        break;
      case LayerKind::Relu: {
        for (std::size_t k = 0; k < grad.size(); ++k) {
          if (input.values[k] <= 0.0) grad.values[k] = 0.0;
        }
        break;
      }
      case LayerKind::MaxPool2d: {
        --pool_idx;
        const std::vector<std::size_t>& argmax = cache.pool_argmax[pool_idx];
        Tensor gin(input.dims);
        for (std::size_t k = 0; k < grad.size(); ++k) {
          gin.values[argmax[k]] += grad.values[k];
        }
        grad = std::move(gin);
        break;
      }
      case LayerKind::Conv2d: {
        tensor_idx -= 2;
        const Tensor& weight = params.tensors[tensor_idx];
        Tensor& dw = grads.tensors[tensor_idx];
        Tensor& db = grads.tensors[tensor_idx + 1];
        const std::size_t C = weight.dims[1];
        const std::size_t H = input.dims[2], W = input.dims[3];
        const std::size_t O = grad.dims[1], OH = grad.dims[2], OW = grad.dims[3];
        Tensor gin(input.dims);
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t o = 0; o < O; ++o) {
            for (std::size_t y = 0; y < OH; ++y) {
              for (std::size_t x = 0; x < OW; ++x) {
                const double g = grad.values[((b * O + o) * OH + y) * OW + x];
                db.values[o] += g;
                for (std::size_t c = 0; c < C; ++c) {
                  for (std::size_t ky = 0; ky < kKernel; ++ky) {
                    for (std::size_t kx = 0; kx < kKernel; ++kx) {
                      const std::size_t widx = ((o * C + c) * kKernel + ky) * kKernel + kx;
                      const std::size_t iidx = ((b * C + c) * H + y + ky) * W + x + kx;
                      dw.values[widx] += g * input.values[iidx];
                      gin.values[iidx] += g * weight.values[widx];
                    }
                  }
                }
              }
            }
          }
        }
        grad = std::move(gin);
        break;
      }
    }
  }

  for (const Tensor& t : grads.tensors) require_finite(t, "backward");
  return grads;
}

ModelParameters sgd_step(const ModelParameters& params, const ModelParameters& gradient,
                         double lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) {
    throw ConfigError("learning rate must be a finite non-negative real");
  }
  if (!params.same_shapes(gradient)) {
    throw ShapeError("sgd_step: gradient shapes do not match parameter shapes");
  }
  for (const Tensor& t : gradient.tensors) {
    if (!t.all_finite()) throw NumericError("sgd_step: non-finite gradient, round aborted");
  }
  ModelParameters out = params;
  for (std::size_t i = 0; i < out.tensors.size(); ++i) {
    for (std::size_t k = 0; k < out.tensors[i].size(); ++k) {
      out.tensors[i].values[k] -= lr * gradient.tensors[i].values[k];
    }
  }
  return out;
}

EvalResult evaluate(const ModelParameters& params, const Architecture& arch,
                    const std::vector<Tensor>& images, const std::vector<int>& labels) {
  if (images.empty()) throw ConfigError("evaluate: dataset is empty");
  if (images.size() != labels.size()) {
    throw ShapeError("evaluate: " + std::to_string(images.size()) + " images but " +
                     std::to_string(labels.size()) + " labels");
  }
  validate_architecture(arch);

  const std::size_t chunk = 256;
  const std::size_t sample_size =
      arch.input_channels * arch.input_height * arch.input_width;
  std::size_t correct = 0;
  double loss_sum = 0.0;

  for (std::size_t start = 0; start < images.size(); start += chunk) {
    const std::size_t n = std::min(chunk, images.size() - start);
    Batch batch;
    batch.inputs = Tensor({n, arch.input_channels, arch.input_height, arch.input_width});
    batch.labels.assign(labels.begin() + start, labels.begin() + start + n);
    for (std::size_t i = 0; i < n; ++i) {
      const Tensor& img = images[start + i];
      if (img.size() != sample_size) {
        throw ShapeError("evaluate: sample " + std::to_string(start + i) + " has dims " +
                         shape_to_string(img.dims) + ", expected " +
                         std::to_string(sample_size) + " values");
      }
      std::copy(img.values.begin(), img.values.end(),
                batch.inputs.values.begin() + i * sample_size);
    }
    Tensor probs = ForwardPass{params, arch}.run(batch.inputs, nullptr);
    require_finite(probs, "evaluate");
    for (std::size_t i = 0; i < n; ++i) {
      const int pred = probs.values[i * 2 + 1] > probs.values[i * 2] ? 1 : 0;
      if (pred == batch.labels[i]) ++correct;
      const double p =
          probs.values[i * 2 + static_cast<std::size_t>(batch.labels[i])];
      loss_sum += -std::log(std::max(p, kProbFloor));
    }
  }

  EvalResult r;
  r.accuracy = static_cast<double>(correct) / static_cast<double>(images.size());
  r.loss = loss_sum / static_cast<double>(images.size());
  return r;
}

}  // namespace qfl
