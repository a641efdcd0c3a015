#include "fedsiam/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "fedsiam/errors.hpp"

namespace fedsiam {

namespace {

constexpr double kProbFloor = 1e-12;

// C[n x m] += A[n x k] * B[k x m], row-major. ikj order so the inner loop
// streams both B and C.
void matmul_accum(const double* a, const double* b, double* c, int n, int k, int m) {
    for (int i = 0; i < n; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        double* crow = c + static_cast<std::size_t>(i) * m;
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + static_cast<std::size_t>(p) * m;
            for (int j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[n x m] += A[k x n]^T * B[k x m]
void matmul_at_b_accum(const double* a, const double* b, double* c, int k, int n, int m) {
    for (int p = 0; p < k; ++p) {
        const double* arow = a + static_cast<std::size_t>(p) * n;
        const double* brow = b + static_cast<std::size_t>(p) * m;
        for (int i = 0; i < n; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* crow = c + static_cast<std::size_t>(i) * m;
            for (int j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[n x k] += A[n x m] * B[k x m]^T
void matmul_a_bt_accum(const double* a, const double* b, double* c, int n, int m, int k) {
    for (int i = 0; i < n; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * m;
        double* crow = c + static_cast<std::size_t>(i) * k;
        for (int j = 0; j < k; ++j) {
            const double* brow = b + static_cast<std::size_t>(j) * m;
            double acc = 0.0;
            for (int p = 0; p < m; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

Matrix affine(const LayeredParams::Layer& layer, const Matrix& x) {
    Matrix out(x.rows, layer.fan_out);
    for (int i = 0; i < out.rows; ++i) {
        double* row = out.row_ptr(i);
        for (int j = 0; j < layer.fan_out; ++j) row[j] = layer.bias[static_cast<std::size_t>(j)];
    }
    matmul_accum(x.data.data(), layer.weights.data(), out.data.data(), x.rows, layer.fan_in,
                 layer.fan_out);
    return out;
}

void apply_activation(Matrix& z, Activation act) {
    if (act == Activation::ReLU) {
        for (double& v : z.data) v = v > 0.0 ? v : 0.0;
    } else {
        for (double& v : z.data) v = std::tanh(v);
    }
}

// d(activation)/dz expressed through the pre-activation matrix.
double activation_grad(double pre, Activation act) {
    if (act == Activation::ReLU) return pre > 0.0 ? 1.0 : 0.0;
    const double t = std::tanh(pre);
    return 1.0 - t * t;
}

void softmax_rows(Matrix& logits) {
    for (int i = 0; i < logits.rows; ++i) {
        double* row = logits.row_ptr(i);
        double mx = row[0];
        for (int j = 1; j < logits.cols; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < logits.cols; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        for (int j = 0; j < logits.cols; ++j) row[j] /= sum;
    }
}

// grad w.r.t. logits from grad w.r.t. softmax outputs:
// dz_c = p_c * (g_c - sum_k g_k p_k)
Matrix softmax_backward(const Matrix& probs, const Matrix& grad_probs) {
    Matrix out(probs.rows, probs.cols);
    for (int i = 0; i < probs.rows; ++i) {
        const double* p = probs.row_ptr(i);
        const double* g = grad_probs.row_ptr(i);
        double dot = 0.0;
        for (int j = 0; j < probs.cols; ++j) dot += g[j] * p[j];
        double* o = out.row_ptr(i);
        for (int j = 0; j < probs.cols; ++j) o[j] = p[j] * (g[j] - dot);
    }
    return out;
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (a.rows != b.rows || a.cols != b.cols) {
        throw ShapeError(std::string(what) + ": shape mismatch (" + std::to_string(a.rows) + "x" +
                         std::to_string(a.cols) + " vs " + std::to_string(b.rows) + "x" +
                         std::to_string(b.cols) + ")");
    }
}

}  // namespace

std::size_t LayeredParams::scalar_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.scalar_count();
    return n;
}

bool LayeredParams::congruent_with(const LayeredParams& other) const {
    if (layers.size() != other.layers.size()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].fan_in != other.layers[i].fan_in ||
            layers[i].fan_out != other.layers[i].fan_out)
            return false;
    }
    return true;
}

void LayeredParams::fill(double value) {
    for (auto& l : layers) {
        std::fill(l.weights.begin(), l.weights.end(), value);
        std::fill(l.bias.begin(), l.bias.end(), value);
    }
}

void LayeredParams::add_scaled(const LayeredParams& other, double scale) {
    if (!congruent_with(other)) throw ShapeError("add_scaled: incongruent layer shapes");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        auto& dst = layers[i];
        const auto& src = other.layers[i];
        for (std::size_t j = 0; j < dst.weights.size(); ++j) dst.weights[j] += scale * src.weights[j];
        for (std::size_t j = 0; j < dst.bias.size(); ++j) dst.bias[j] += scale * src.bias[j];
    }
}

void LayeredParams::scale(double factor) {
    for (auto& l : layers) {
        for (double& v : l.weights) v *= factor;
        for (double& v : l.bias) v *= factor;
    }
}

void LayeredParams::check_finite(const std::string& context) const {
    for (const auto& l : layers) {
        for (double v : l.weights) {
            if (!std::isfinite(v))
                throw ShapeError(context + ": non-finite weight in layer " + l.name);
        }
        for (double v : l.bias) {
            if (!std::isfinite(v))
                throw ShapeError(context + ": non-finite bias in layer " + l.name);
        }
    }
}

LayeredParams make_mlp(int input_dim, const std::vector<int>& hidden, int classes,
                       Activation act) {
    if (input_dim < 1 || classes < 2) throw ConfigError("make_mlp: need input_dim >= 1, classes >= 2");
    for (int h : hidden) {
        if (h < 1) throw ConfigError("make_mlp: hidden layer width must be >= 1");
    }
    LayeredParams params;
    params.act = act;
    int fan_in = input_dim;
    int index = 1;
    for (int h : hidden) {
        LayeredParams::Layer l;
        l.name = "fc" + std::to_string(index++);
        l.fan_in = fan_in;
        l.fan_out = h;
        l.weights.assign(static_cast<std::size_t>(fan_in) * h, 0.0);
        l.bias.assign(static_cast<std::size_t>(h), 0.0);
        params.layers.push_back(std::move(l));
        fan_in = h;
    }
    LayeredParams::Layer out;
    out.name = "fc" + std::to_string(index);
    out.fan_in = fan_in;
    out.fan_out = classes;
    out.weights.assign(static_cast<std::size_t>(fan_in) * classes, 0.0);
    out.bias.assign(static_cast<std::size_t>(classes), 0.0);
    params.layers.push_back(std::move(out));
    return params;
}

void init_glorot(LayeredParams& params, Rng& rng) {
    for (auto& l : params.layers) {
        const double bound = std::sqrt(6.0 / (l.fan_in + l.fan_out));
        for (double& w : l.weights) w = rng.uniform(-bound, bound);
        std::fill(l.bias.begin(), l.bias.end(), 0.0);
    }
}

OptimizerState make_optimizer(const LayeredParams& model, double lr, double momentum,
                              double weight_decay) {
    OptimizerState opt;
    opt.momentum_buffers = model;
    opt.momentum_buffers.fill(0.0);
    opt.lr = lr;
    opt.momentum = momentum;
    opt.weight_decay = weight_decay;
    return opt;
}

Matrix forward_trace(const LayeredParams& model, const Matrix& inputs, ForwardTrace& trace) {
    if (model.layers.empty()) throw ShapeError("forward: model has no layers");
    if (inputs.cols != model.layers.front().fan_in) {
        throw ShapeError("forward: input dim " + std::to_string(inputs.cols) +
                         " does not match fan_in " + std::to_string(model.layers.front().fan_in) +
                         " of layer " + model.layers.front().name);
    }
    const int V = model.layer_count();
    trace.post.assign(1, inputs);
    trace.pre.clear();
    Matrix x = inputs;
    for (int i = 0; i < V; ++i) {
        const auto& l = model.layers[static_cast<std::size_t>(i)];
        if (x.cols != l.fan_in) {
            throw ShapeError("forward: dim " + std::to_string(x.cols) + " does not match fan_in " +
                             std::to_string(l.fan_in) + " of layer " + l.name);
        }
        Matrix z = affine(l, x);
        if (i + 1 < V) {
            trace.pre.push_back(z);
            apply_activation(z, model.act);
            trace.post.push_back(z);
            x = std::move(z);
        } else {
            trace.pre.push_back(z);
            softmax_rows(z);
            trace.probs = z;
            x = std::move(z);
        }
    }
    return x;
}

Matrix forward(const LayeredParams& model, const Matrix& inputs) {
    ForwardTrace trace;
    return forward_trace(model, inputs, trace);
}

LossResult cross_entropy_loss(const Matrix& probs, const std::vector<int>& labels) {
    if (labels.empty() || static_cast<int>(labels.size()) != probs.rows) {
        throw ContractError("cross_entropy_loss: labels missing or batch size mismatch");
    }
    const int n = probs.rows;
    const int c = probs.cols;
    LossResult res;
    res.grad_logits = Matrix(n, c);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= c) throw ContractError("cross_entropy_loss: label out of range");
        const double* p = probs.row_ptr(i);
        total += -std::log(std::max(p[y], kProbFloor));
        double* g = res.grad_logits.row_ptr(i);
        for (int j = 0; j < c; ++j) g[j] = p[j] / n;
        g[y] -= 1.0 / n;
    }
    res.loss = total / n;
    return res;
}

LossResult mse_consistency(const Matrix& p_online, const Matrix& p_target) {
    require_same_shape(p_online, p_target, "mse_consistency");
    const int n = p_online.rows;
    LossResult res;
    Matrix grad_probs(n, p_online.cols);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const double* po = p_online.row_ptr(i);
        const double* pt = p_target.row_ptr(i);
        double* g = grad_probs.row_ptr(i);
        for (int j = 0; j < p_online.cols; ++j) {
            const double d = po[j] - pt[j];
            total += d * d;
            g[j] = 2.0 * d / n;
        }
    }
    res.loss = total / n;
    res.grad_logits = softmax_backward(p_online, grad_probs);
    return res;
}

LossResult kl_consistency(const Matrix& p_online, const Matrix& p_target) {
    require_same_shape(p_online, p_target, "kl_consistency");
    const int n = p_online.rows;
    LossResult res;
    res.grad_logits = Matrix(n, p_online.cols);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const double* po = p_online.row_ptr(i);
        const double* pt = p_target.row_ptr(i);
        double* g = res.grad_logits.row_ptr(i);
        for (int j = 0; j < p_online.cols; ++j) {
            const double t = std::max(pt[j], kProbFloor);
            const double o = std::max(po[j], kProbFloor);
            total += t * (std::log(t) - std::log(o));
            // d KL(t || softmax(z)) / dz = p_online - p_target, per row.
            g[j] = (po[j] - pt[j]) / n;
        }
    }
    res.loss = total / n;
    return res;
}

Gradients backward(const LayeredParams& model, const ForwardTrace& trace,
                   const Matrix& grad_logits) {
    const int V = model.layer_count();
    if (static_cast<int>(trace.pre.size()) != V) {
        throw ShapeError("backward: trace does not match model depth");
    }
    require_same_shape(grad_logits, trace.probs, "backward");

    Gradients grads = model;
    grads.fill(0.0);

    Matrix delta = grad_logits;  // already includes the softmax jacobian
    for (int i = V - 1; i >= 0; --i) {
        const auto& l = model.layers[static_cast<std::size_t>(i)];
        auto& gl = grads.layers[static_cast<std::size_t>(i)];
        const Matrix& input = trace.post[static_cast<std::size_t>(i)];
        // dW = input^T * delta; db = column sums of delta
        matmul_at_b_accum(input.data.data(), delta.data.data(), gl.weights.data(), delta.rows,
                          l.fan_in, l.fan_out);
        for (int r = 0; r < delta.rows; ++r) {
            const double* d = delta.row_ptr(r);
            for (int j = 0; j < l.fan_out; ++j) gl.bias[static_cast<std::size_t>(j)] += d[j];
        }
        if (i > 0) {
            Matrix next(delta.rows, l.fan_in);
            matmul_a_bt_accum(delta.data.data(), l.weights.data(), next.data.data(), delta.rows,
                              l.fan_out, l.fan_in);
            const Matrix& pre = trace.pre[static_cast<std::size_t>(i - 1)];
            for (int r = 0; r < next.rows; ++r) {
                double* nrow = next.row_ptr(r);
                const double* prow = pre.row_ptr(r);
                for (int j = 0; j < l.fan_in; ++j) nrow[j] *= activation_grad(prow[j], model.act);
            }
            delta = std::move(next);
        }
    }
    return grads;
}

Gradients backward(const LayeredParams& model, const Matrix& inputs, const Matrix& grad_logits) {
    ForwardTrace trace;
    forward_trace(model, inputs, trace);
    return backward(model, trace, grad_logits);
}

void sgd_step(LayeredParams& params, const Gradients& grads, OptimizerState& opt) {
    if (!params.congruent_with(grads) || !params.congruent_with(opt.momentum_buffers)) {
        throw ShapeError("sgd_step: incongruent shapes");
    }
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        auto& p = params.layers[i];
        const auto& g = grads.layers[i];
        auto& buf = opt.momentum_buffers.layers[i];
        for (std::size_t j = 0; j < p.weights.size(); ++j) {
            buf.weights[j] = opt.momentum * buf.weights[j] +
                             (g.weights[j] + opt.weight_decay * p.weights[j]);
            p.weights[j] -= opt.lr * buf.weights[j];
        }
        for (std::size_t j = 0; j < p.bias.size(); ++j) {
            buf.bias[j] = opt.momentum * buf.bias[j] + (g.bias[j] + opt.weight_decay * p.bias[j]);
            p.bias[j] -= opt.lr * buf.bias[j];
        }
    }
}

}  // namespace fedsiam
