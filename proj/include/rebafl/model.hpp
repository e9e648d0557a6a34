#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rebafl/matrix.hpp"

namespace rebafl {

enum class LayerKind { Dense, ReLU, Conv, MaxPool };

// One extractor layer: descriptor plus its trainable blocks (empty for
// ReLU/MaxPool). Conv weights are out_ch x (in_ch*k*k), stride 1 with zero
// padding; MaxPool is a k x k window with stride k.
struct Layer {
    LayerKind kind = LayerKind::Dense;
    std::size_t in_dim = 0, out_dim = 0;  // flattened widths
    std::size_t in_ch = 0, in_h = 0, in_w = 0;
    std::size_t out_ch = 0, out_h = 0, out_w = 0;
    std::size_t ksize = 0, pad = 0;
    Matrix w;
    std::vector<double> b;
};

// Per-class proxy vectors: column c of `w` is the class-c proxy. Biases
// are kept at zero unless `use_bias` is set.
struct Classifier {
    Matrix w;  // feature_dim x num_classes
    std::vector<double> b;
    bool use_bias = false;
};

// Full trainable parameter set, split into the feature extractor and the
// classifier head. Self-describing: the layer descriptors carry enough
// geometry to run forward/backward without a separate architecture object.
struct ModelParams {
    std::string arch = "custom";
    std::size_t input_dim = 0;
    std::size_t feature_dim = 0;
    std::size_t num_classes = 0;
    std::vector<Layer> extractor;
    Classifier classifier;
};

struct ForwardCache {
    Matrix input;
    std::vector<Matrix> outputs;  // one per extractor layer
    std::vector<std::vector<std::uint32_t>> pool_idx;
    const Matrix& features() const { return outputs.empty() ? input : outputs.back(); }
};

// Embeddings h = f_theta(x) for a batch; the cache holds everything that
// backward() needs.
std::pair<Matrix, ForwardCache> forward_features(const ModelParams& params, const Matrix& x);

// Logits z[j][c] = phi_c . h_j (+ bias when enabled).
Matrix forward_logits(const ModelParams& params, const Matrix& h);

// Gradients of a scalar loss with the same shape as the parameters, given
// dL/dZ for the batch the cache was produced from. No batch reduction is
// applied here; the loss gradient already carries its 1/n factor.
ModelParams backward(const ModelParams& params, const ForwardCache& cache, const Matrix& dl_dz);

// w <- w - lr * (grad + weight_decay * w), uniformly over all blocks.
void sgd_step(ModelParams& params, const ModelParams& grads, double lr, double weight_decay);

ModelParams zeros_like(const ModelParams& params);
std::size_t param_count(const ModelParams& params);
std::vector<std::span<double>> param_spans(ModelParams& params);
std::vector<std::span<const double>> param_spans(const ModelParams& params);
void axpy_params(ModelParams& y, double alpha, const ModelParams& x);  // y += alpha*x
std::vector<double> flatten_params(const ModelParams& params);
double param_sqdist(const ModelParams& a, const ModelParams& b);

// Round every parameter through 32-bit storage precision (experiment mode).
void quantize_params_f32(ModelParams& params);

// FNV-1a over the raw parameter bytes; used for cheap trajectory comparison.
std::uint64_t params_checksum(const ModelParams& params);

// Layer constructors validate and fill in the geometry; weights start zeroed.
Layer dense_layer(std::size_t in_dim, std::size_t out_dim);
Layer relu_layer(std::size_t dim);
Layer conv_layer(std::size_t in_ch, std::size_t in_h, std::size_t in_w,
                 std::size_t out_ch, std::size_t ksize, std::size_t pad);
Layer maxpool_layer(std::size_t ch, std::size_t in_h, std::size_t in_w, std::size_t ksize);

enum class ModelArch { Mlp, FmnistCnn, CifarCnn, Linear };
ModelArch parse_arch(const std::string& name);
std::string arch_name(ModelArch arch);

// Model zoo. Hidden layers use ReLU; weights are Kaiming-uniform with
// fan-in scaling from the seeded init stream, biases start at zero.
ModelParams make_mlp(std::size_t input_dim, std::size_t hidden, std::size_t classes,
                     std::uint64_t seed, bool classifier_bias = false);
ModelParams make_cnn(std::size_t in_ch, std::size_t in_h, std::size_t in_w,
                     const std::vector<std::size_t>& conv_channels, std::size_t ksize,
                     std::size_t pad, std::size_t hidden, std::size_t classes,
                     std::uint64_t seed, bool classifier_bias = false);
ModelParams make_linear(std::size_t input_dim, std::size_t classes, std::uint64_t seed,
                        bool classifier_bias = false);
ModelParams make_model(ModelArch arch, std::size_t in_ch, std::size_t in_h, std::size_t in_w,
                       std::size_t classes, std::uint64_t seed, bool classifier_bias = false,
                       std::size_t mlp_hidden = 128);

}  // namespace rebafl
