#include "rebafl/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>
#include <stdexcept>

#include "rebafl/errors.hpp"
#include "rebafl/rng.hpp"

namespace rebafl {

namespace {

std::string layer_label(std::size_t idx, const Layer& l) {
    switch (l.kind) {
        case LayerKind::Dense:
            return "extractor layer " + std::to_string(idx) + " (dense " +
                   std::to_string(l.in_dim) + "->" + std::to_string(l.out_dim) + ")";
        case LayerKind::Conv:
            return "extractor layer " + std::to_string(idx) + " (conv " +
                   std::to_string(l.in_ch) + "->" + std::to_string(l.out_ch) + ")";
        case LayerKind::ReLU:
            return "extractor layer " + std::to_string(idx) + " (relu)";
        case LayerKind::MaxPool:
            return "extractor layer " + std::to_string(idx) + " (maxpool)";
    }
    return "extractor layer " + std::to_string(idx);
}

void conv_forward(const Layer& l, const Matrix& in, Matrix& out) {
    const std::size_t k = l.ksize;
    for (std::size_t n = 0; n < in.rows; ++n) {
        const double* src = in.data.data() + n * in.cols;
        double* dst = out.data.data() + n * out.cols;
        for (std::size_t oc = 0; oc < l.out_ch; ++oc) {
            double* plane = dst + oc * l.out_h * l.out_w;
            const double bias = l.b[oc];
            for (std::size_t i = 0; i < l.out_h * l.out_w; ++i) plane[i] = bias;
            for (std::size_t ic = 0; ic < l.in_ch; ++ic) {
                const double* iplane = src + ic * l.in_h * l.in_w;
                for (std::size_t ky = 0; ky < k; ++ky) {
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        const double wv = l.w(oc, (ic * k + ky) * k + kx);
                        if (wv == 0.0) continue;
                        // valid output range for this kernel offset
                        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) -
                                                  static_cast<std::ptrdiff_t>(l.pad);
                        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) -
                                                  static_cast<std::ptrdiff_t>(l.pad);
                        const std::size_t oy0 = dy < 0 ? static_cast<std::size_t>(-dy) : 0;
                        const std::size_t oy1 = std::min<std::size_t>(
                            l.out_h, l.in_h - std::max<std::ptrdiff_t>(dy, 0));
                        const std::size_t ox0 = dx < 0 ? static_cast<std::size_t>(-dx) : 0;
                        const std::size_t ox1 = std::min<std::size_t>(
                            l.out_w, l.in_w - std::max<std::ptrdiff_t>(dx, 0));
                        for (std::size_t oy = oy0; oy < oy1; ++oy) {
                            const double* irow = iplane + (oy + dy) * l.in_w + dx;
                            double* orow = plane + oy * l.out_w;
                            for (std::size_t ox = ox0; ox < ox1; ++ox)
                                orow[ox] += wv * irow[ox];
                        }
                    }
                }
            }
        }
    }
}

void conv_backward(const Layer& l, const Matrix& in, const Matrix& dout, Matrix& din,
                   Matrix& dw, std::vector<double>& db) {
    const std::size_t k = l.ksize;
    for (std::size_t n = 0; n < in.rows; ++n) {
        const double* src = in.data.data() + n * in.cols;
        const double* gout = dout.data.data() + n * dout.cols;
        double* gin = din.data.data() + n * din.cols;
        for (std::size_t oc = 0; oc < l.out_ch; ++oc) {
            const double* gplane = gout + oc * l.out_h * l.out_w;
            double acc = 0.0;
            for (std::size_t i = 0; i < l.out_h * l.out_w; ++i) acc += gplane[i];
            db[oc] += acc;
            for (std::size_t ic = 0; ic < l.in_ch; ++ic) {
                const double* iplane = src + ic * l.in_h * l.in_w;
                double* giplane = gin + ic * l.in_h * l.in_w;
                for (std::size_t ky = 0; ky < k; ++ky) {
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) -
                                                  static_cast<std::ptrdiff_t>(l.pad);
                        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) -
                                                  static_cast<std::ptrdiff_t>(l.pad);
                        const std::size_t oy0 = dy < 0 ? static_cast<std::size_t>(-dy) : 0;
                        const std::size_t oy1 = std::min<std::size_t>(
                            l.out_h, l.in_h - std::max<std::ptrdiff_t>(dy, 0));
                        const std::size_t ox0 = dx < 0 ? static_cast<std::size_t>(-dx) : 0;
                        const std::size_t ox1 = std::min<std::size_t>(
                            l.out_w, l.in_w - std::max<std::ptrdiff_t>(dx, 0));
                        const double wv = l.w(oc, (ic * k + ky) * k + kx);
                        double wg = 0.0;
                        for (std::size_t oy = oy0; oy < oy1; ++oy) {
                            const double* irow = iplane + (oy + dy) * l.in_w + dx;
                            double* girow = giplane + (oy + dy) * l.in_w + dx;
                            const double* grow = gplane + oy * l.out_w;
                            for (std::size_t ox = ox0; ox < ox1; ++ox) {
                                wg += grow[ox] * irow[ox];
                                girow[ox] += wv * grow[ox];
                            }
                        }
                        dw(oc, (ic * k + ky) * k + kx) += wg;
                    }
                }
            }
        }
    }
}

void pool_forward(const Layer& l, const Matrix& in, Matrix& out,
                  std::vector<std::uint32_t>& argmax) {
    const std::size_t k = l.ksize;
    argmax.assign(in.rows * out.cols, 0);
    for (std::size_t n = 0; n < in.rows; ++n) {
        const double* src = in.data.data() + n * in.cols;
        double* dst = out.data.data() + n * out.cols;
        std::uint32_t* am = argmax.data() + n * out.cols;
        std::size_t o = 0;
        for (std::size_t c = 0; c < l.in_ch; ++c) {
            const double* plane = src + c * l.in_h * l.in_w;
            for (std::size_t oy = 0; oy < l.out_h; ++oy) {
                for (std::size_t ox = 0; ox < l.out_w; ++ox, ++o) {
                    std::size_t best = (oy * k) * l.in_w + ox * k;
                    double bv = plane[best];
                    for (std::size_t ky = 0; ky < k; ++ky) {
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            const std::size_t idx = (oy * k + ky) * l.in_w + ox * k + kx;
                            if (plane[idx] > bv) {
                                bv = plane[idx];
                                best = idx;
                            }
                        }
                    }
                    dst[o] = bv;
                    am[o] = static_cast<std::uint32_t>(c * l.in_h * l.in_w + best);
                }
            }
        }
    }
}

void pool_backward(const Layer& l, const Matrix& dout,
                   const std::vector<std::uint32_t>& argmax, Matrix& din) {
    for (std::size_t n = 0; n < dout.rows; ++n) {
        const double* g = dout.data.data() + n * dout.cols;
        const std::uint32_t* am = argmax.data() + n * dout.cols;
        double* gi = din.data.data() + n * din.cols;
        for (std::size_t o = 0; o < dout.cols; ++o) gi[am[o]] += g[o];
    }
}

void check_structure(const ModelParams& a, const ModelParams& b, const char* what) {
    if (a.extractor.size() != b.extractor.size() ||
        a.classifier.w.rows != b.classifier.w.rows ||
        a.classifier.w.cols != b.classifier.w.cols)
        throw InternalError(std::string(what) + ": parameter structure mismatch");
    for (std::size_t i = 0; i < a.extractor.size(); ++i)
        if (!a.extractor[i].w.same_shape(b.extractor[i].w) ||
            a.extractor[i].b.size() != b.extractor[i].b.size())
            throw InternalError(std::string(what) + ": parameter structure mismatch");
}

void init_uniform(Matrix& w, std::size_t fan_in, std::mt19937_64& eng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : w.data) v = dist(eng);
}

}  // namespace

std::pair<Matrix, ForwardCache> forward_features(const ModelParams& params, const Matrix& x) {
    if (x.cols != params.input_dim)
        throw ConfigError("forward_features: input has " + std::to_string(x.cols) +
                          " columns, model expects " + std::to_string(params.input_dim));
    ForwardCache cache;
    cache.input = x;
    cache.outputs.reserve(params.extractor.size());
    cache.pool_idx.resize(params.extractor.size());
    const Matrix* cur = &cache.input;
    for (std::size_t i = 0; i < params.extractor.size(); ++i) {
        const Layer& l = params.extractor[i];
        if (cur->cols != l.in_dim)
            throw ConfigError("forward_features: layer " + std::to_string(i) +
                              " expects width " + std::to_string(l.in_dim) + ", got " +
                              std::to_string(cur->cols));
        Matrix out(cur->rows, l.out_dim);
        switch (l.kind) {
            case LayerKind::Dense: {
                out = matmul(*cur, l.w);
                for (std::size_t r = 0; r < out.rows; ++r) {
                    double* row = out.data.data() + r * out.cols;
                    for (std::size_t c = 0; c < out.cols; ++c) row[c] += l.b[c];
                }
                break;
            }
            case LayerKind::ReLU: {
                out.data = cur->data;
                for (double& v : out.data)
                    if (v < 0.0) v = 0.0;
                break;
            }
            case LayerKind::Conv:
                conv_forward(l, *cur, out);
                break;
            case LayerKind::MaxPool:
                pool_forward(l, *cur, out, cache.pool_idx[i]);
                break;
        }
        cache.outputs.push_back(std::move(out));
        cur = &cache.outputs.back();
    }
    if (cur->cols != params.feature_dim)
        throw InternalError("forward_features: extractor output width mismatch");
    return {*cur, std::move(cache)};
}

Matrix forward_logits(const ModelParams& params, const Matrix& h) {
    if (h.cols != params.feature_dim)
        throw ConfigError("forward_logits: features have " + std::to_string(h.cols) +
                          " columns, classifier expects " +
                          std::to_string(params.feature_dim));
    Matrix z = matmul(h, params.classifier.w);
    if (params.classifier.use_bias) {
        for (std::size_t r = 0; r < z.rows; ++r) {
            double* row = z.data.data() + r * z.cols;
            for (std::size_t c = 0; c < z.cols; ++c) row[c] += params.classifier.b[c];
        }
    }
    return z;
}

ModelParams backward(const ModelParams& params, const ForwardCache& cache,
                     const Matrix& dl_dz) {
    if (cache.outputs.size() != params.extractor.size())
        throw InternalError("backward: cache does not match parameters");
    if (dl_dz.rows != cache.input.rows || dl_dz.cols != params.num_classes)
        throw InternalError("backward: dL/dZ shape mismatch");

    ModelParams grads = zeros_like(params);
    const Matrix& h = cache.features();
    grads.classifier.w = matmul_at_b(h, dl_dz);
    if (params.classifier.use_bias) grads.classifier.b = colsum(dl_dz);

    Matrix d = matmul_a_bt(dl_dz, params.classifier.w);  // dL/dH
    for (std::size_t ri = params.extractor.size(); ri-- > 0;) {
        const Layer& l = params.extractor[ri];
        const Matrix& in = ri == 0 ? cache.input : cache.outputs[ri - 1];
        Matrix din(in.rows, in.cols);
        switch (l.kind) {
            case LayerKind::Dense:
                grads.extractor[ri].w = matmul_at_b(in, d);
                grads.extractor[ri].b = colsum(d);
                din = matmul_a_bt(d, l.w);
                break;
            case LayerKind::ReLU: {
                const Matrix& out = cache.outputs[ri];
                for (std::size_t i = 0; i < d.data.size(); ++i)
                    din.data[i] = out.data[i] > 0.0 ? d.data[i] : 0.0;
                break;
            }
            case LayerKind::Conv:
                conv_backward(l, in, d, din, grads.extractor[ri].w, grads.extractor[ri].b);
                break;
            case LayerKind::MaxPool:
                pool_backward(l, d, cache.pool_idx[ri], din);
                break;
        }
        d = std::move(din);
    }
    return grads;
}

void sgd_step(ModelParams& params, const ModelParams& grads, double lr, double weight_decay) {
    if (lr < 0.0) throw ConfigError("sgd_step: learning rate must be nonnegative");
    if (weight_decay < 0.0) throw ConfigError("sgd_step: weight decay must be nonnegative");
    check_structure(params, grads, "sgd_step");
    auto apply = [&](std::span<double> w, std::span<const double> g, const std::string& name) {
        if (!all_finite(g))
            throw NumericError("sgd_step: non-finite gradient in " + name);
        for (std::size_t i = 0; i < w.size(); ++i)
            w[i] -= lr * (g[i] + weight_decay * w[i]);
    };
    for (std::size_t i = 0; i < params.extractor.size(); ++i) {
        apply(params.extractor[i].w.data, grads.extractor[i].w.data,
              layer_label(i, params.extractor[i]));
        apply(params.extractor[i].b, grads.extractor[i].b, layer_label(i, params.extractor[i]));
    }
    apply(params.classifier.w.data, grads.classifier.w.data, "classifier");
    if (params.classifier.use_bias) apply(params.classifier.b, grads.classifier.b, "classifier bias");
}

ModelParams zeros_like(const ModelParams& params) {
    ModelParams z = params;
    for (Layer& l : z.extractor) {
        std::fill(l.w.data.begin(), l.w.data.end(), 0.0);
        std::fill(l.b.begin(), l.b.end(), 0.0);
    }
    std::fill(z.classifier.w.data.begin(), z.classifier.w.data.end(), 0.0);
    std::fill(z.classifier.b.begin(), z.classifier.b.end(), 0.0);
    return z;
}

std::vector<std::span<double>> param_spans(ModelParams& params) {
    std::vector<std::span<double>> spans;
    for (Layer& l : params.extractor) {
        if (!l.w.data.empty()) spans.emplace_back(l.w.data);
        if (!l.b.empty()) spans.emplace_back(l.b);
    }
    spans.emplace_back(params.classifier.w.data);
    if (params.classifier.use_bias) spans.emplace_back(params.classifier.b);
    return spans;
}

std::vector<std::span<const double>> param_spans(const ModelParams& params) {
    std::vector<std::span<const double>> spans;
    for (const Layer& l : params.extractor) {
        if (!l.w.data.empty()) spans.emplace_back(l.w.data);
        if (!l.b.empty()) spans.emplace_back(l.b);
    }
    spans.emplace_back(params.classifier.w.data);
    if (params.classifier.use_bias) spans.emplace_back(params.classifier.b);
    return spans;
}

std::size_t param_count(const ModelParams& params) {
    std::size_t n = 0;
    for (auto s : param_spans(params)) n += s.size();
    return n;
}

void axpy_params(ModelParams& y, double alpha, const ModelParams& x) {
    check_structure(y, x, "axpy_params");
    auto ys = param_spans(y);
    auto xs = param_spans(x);
    for (std::size_t i = 0; i < ys.size(); ++i)
        for (std::size_t k = 0; k < ys[i].size(); ++k) ys[i][k] += alpha * xs[i][k];
}

std::vector<double> flatten_params(const ModelParams& params) {
    std::vector<double> flat;
    flat.reserve(param_count(params));
    for (auto s : param_spans(params)) flat.insert(flat.end(), s.begin(), s.end());
    return flat;
}

double param_sqdist(const ModelParams& a, const ModelParams& b) {
    check_structure(a, b, "param_sqdist");
    auto as = param_spans(a);
    auto bs = param_spans(b);
    double acc = 0.0;
    for (std::size_t i = 0; i < as.size(); ++i)
        for (std::size_t k = 0; k < as[i].size(); ++k) {
            const double d = as[i][k] - bs[i][k];
            acc += d * d;
        }
    return acc;
}

void quantize_params_f32(ModelParams& params) {
    for (auto s : param_spans(params))
        for (double& v : s) v = static_cast<double>(static_cast<float>(v));
}

std::uint64_t params_checksum(const ModelParams& params) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto absorb = [&](std::span<const double> s) {
        for (double v : s) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, sizeof(bits));
            for (int i = 0; i < 8; ++i) {
                h ^= (bits >> (8 * i)) & 0xffu;
                h *= 0x100000001b3ull;
            }
        }
    };
    for (auto s : param_spans(params)) absorb(s);
    return h;
}

Layer dense_layer(std::size_t in_dim, std::size_t out_dim) {
    if (in_dim == 0 || out_dim == 0) throw ConfigError("dense_layer: zero dimension");
    Layer l;
    l.kind = LayerKind::Dense;
    l.in_dim = in_dim;
    l.out_dim = out_dim;
    l.w = Matrix(in_dim, out_dim);
    l.b.assign(out_dim, 0.0);
    return l;
}

Layer relu_layer(std::size_t dim) {
    Layer l;
    l.kind = LayerKind::ReLU;
    l.in_dim = l.out_dim = dim;
    return l;
}

Layer conv_layer(std::size_t in_ch, std::size_t in_h, std::size_t in_w, std::size_t out_ch,
                 std::size_t ksize, std::size_t pad) {
    if (in_h + 2 * pad < ksize || in_w + 2 * pad < ksize)
        throw ConfigError("conv_layer: kernel larger than padded input");
    Layer l;
    l.kind = LayerKind::Conv;
    l.in_ch = in_ch;
    l.in_h = in_h;
    l.in_w = in_w;
    l.out_ch = out_ch;
    l.ksize = ksize;
    l.pad = pad;
    l.out_h = in_h + 2 * pad - ksize + 1;
    l.out_w = in_w + 2 * pad - ksize + 1;
    l.in_dim = in_ch * in_h * in_w;
    l.out_dim = out_ch * l.out_h * l.out_w;
    l.w = Matrix(out_ch, in_ch * ksize * ksize);
    l.b.assign(out_ch, 0.0);
    return l;
}

Layer maxpool_layer(std::size_t ch, std::size_t in_h, std::size_t in_w, std::size_t ksize) {
    if (in_h < ksize || in_w < ksize) throw ConfigError("maxpool_layer: window larger than input");
    Layer l;
    l.kind = LayerKind::MaxPool;
    l.in_ch = l.out_ch = ch;
    l.in_h = in_h;
    l.in_w = in_w;
    l.ksize = ksize;
    l.out_h = in_h / ksize;
    l.out_w = in_w / ksize;
    l.in_dim = ch * in_h * in_w;
    l.out_dim = ch * l.out_h * l.out_w;
    return l;
}

ModelArch parse_arch(const std::string& name) {
    if (name == "mlp") return ModelArch::Mlp;
    if (name == "fmnist_cnn") return ModelArch::FmnistCnn;
    if (name == "cifar_cnn") return ModelArch::CifarCnn;
    if (name == "linear") return ModelArch::Linear;
    throw ConfigError("unknown model architecture: " + name);
}

std::string arch_name(ModelArch arch) {
    switch (arch) {
        case ModelArch::Mlp: return "mlp";
        case ModelArch::FmnistCnn: return "fmnist_cnn";
        case ModelArch::CifarCnn: return "cifar_cnn";
        case ModelArch::Linear: return "linear";
    }
    return "custom";
}

namespace {

void init_model(ModelParams& m, std::uint64_t seed) {
    auto eng = rng::engine(seed, rng::Stream::ModelInit);
    for (Layer& l : m.extractor) {
        if (l.kind == LayerKind::Dense) init_uniform(l.w, l.in_dim, eng);
        if (l.kind == LayerKind::Conv) init_uniform(l.w, l.in_ch * l.ksize * l.ksize, eng);
    }
    init_uniform(m.classifier.w, m.feature_dim, eng);
    // classifier biases stay zero
}

}  // namespace

ModelParams make_mlp(std::size_t input_dim, std::size_t hidden, std::size_t classes,
                     std::uint64_t seed, bool classifier_bias) {
    ModelParams m;
    m.arch = "mlp";
    m.input_dim = input_dim;
    m.feature_dim = hidden;
    m.num_classes = classes;
    m.extractor.push_back(dense_layer(input_dim, hidden));
    m.extractor.push_back(relu_layer(hidden));
    m.classifier.w = Matrix(hidden, classes);
    m.classifier.b.assign(classes, 0.0);
    m.classifier.use_bias = classifier_bias;
    init_model(m, seed);
    return m;
}

ModelParams make_cnn(std::size_t in_ch, std::size_t in_h, std::size_t in_w,
                     const std::vector<std::size_t>& conv_channels, std::size_t ksize,
                     std::size_t pad, std::size_t hidden, std::size_t classes,
                     std::uint64_t seed, bool classifier_bias) {
    ModelParams m;
    m.arch = "cnn";
    m.input_dim = in_ch * in_h * in_w;
    m.num_classes = classes;
    std::size_t ch = in_ch, h = in_h, w = in_w;
    for (std::size_t oc : conv_channels) {
        Layer conv = conv_layer(ch, h, w, oc, ksize, pad);
        m.extractor.push_back(conv);
        m.extractor.push_back(relu_layer(conv.out_dim));
        Layer pool = maxpool_layer(oc, conv.out_h, conv.out_w, 2);
        m.extractor.push_back(pool);
        ch = oc;
        h = pool.out_h;
        w = pool.out_w;
    }
    m.extractor.push_back(dense_layer(ch * h * w, hidden));
    m.extractor.push_back(relu_layer(hidden));
    m.feature_dim = hidden;
    m.classifier.w = Matrix(hidden, classes);
    m.classifier.b.assign(classes, 0.0);
    m.classifier.use_bias = classifier_bias;
    init_model(m, seed);
    return m;
}

ModelParams make_linear(std::size_t input_dim, std::size_t classes, std::uint64_t seed,
                        bool classifier_bias) {
    ModelParams m;
    m.arch = "linear";
    m.input_dim = input_dim;
    m.feature_dim = input_dim;
    m.num_classes = classes;
    m.classifier.w = Matrix(input_dim, classes);
    m.classifier.b.assign(classes, 0.0);
    m.classifier.use_bias = classifier_bias;
    init_model(m, seed);
    return m;
}

ModelParams make_model(ModelArch arch, std::size_t in_ch, std::size_t in_h, std::size_t in_w,
                       std::size_t classes, std::uint64_t seed, bool classifier_bias,
                       std::size_t mlp_hidden) {
    switch (arch) {
        case ModelArch::Mlp:
            return make_mlp(in_ch * in_h * in_w, mlp_hidden, classes, seed, classifier_bias);
        case ModelArch::FmnistCnn: {
            ModelParams m = make_cnn(in_ch, in_h, in_w, {16, 32}, 5, 2, 128, classes, seed,
                                     classifier_bias);
            m.arch = "fmnist_cnn";
            return m;
        }
        case ModelArch::CifarCnn: {
            ModelParams m = make_cnn(in_ch, in_h, in_w, {16, 32, 64}, 5, 2, 128, classes, seed,
                                     classifier_bias);
            m.arch = "cifar_cnn";
            return m;
        }
        case ModelArch::Linear:
            return make_linear(in_ch * in_h * in_w, classes, seed, classifier_bias);
    }
    throw ConfigError("make_model: unknown architecture");
}

}  // namespace rebafl
