#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "fedsiam/layered_params.hpp"
#include "fedsiam/matrix.hpp"

namespace fedsiam {

struct Batch {
    Matrix inputs;                          // [batch_size x input_dim]
    std::optional<std::vector<int>> labels; // class indices in {0..C-1}

    int size() const { return inputs.rows; }
    bool labeled() const { return labels.has_value(); }
};

struct OptimizerState {
    LayeredParams momentum_buffers;  // zero-initialized, congruent with params
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 1e-4;
};

OptimizerState make_optimizer(const LayeredParams& model, double lr, double momentum,
                              double weight_decay);

// Per-layer activations cached during a forward pass so backward() does not
// have to recompute them.
struct ForwardTrace {
    std::vector<Matrix> post;  // post[0] = inputs, post[i] = activation output of layer i
    std::vector<Matrix> pre;   // pre[i] = pre-activation of layer i+1
    Matrix probs;
};

// Softmax probabilities for a batch; pure function of (model, inputs).
// Softmax subtracts the row max before exponentiating.
Matrix forward(const LayeredParams& model, const Matrix& inputs);

// Forward pass that also fills the trace for a later backward().
Matrix forward_trace(const LayeredParams& model, const Matrix& inputs, ForwardTrace& trace);

struct LossResult {
    double loss = 0.0;
    Matrix grad_logits;  // [batch_size x C], mean-reduced
};

// Mean negative log-likelihood of the correct class. probs rows must be
// normalized (come from forward()); gradient is (probs - onehot)/batch.
LossResult cross_entropy_loss(const Matrix& probs, const std::vector<int>& labels);

// Mean squared Euclidean distance between probability rows. The gradient is
// with respect to the logits of the online branch only; the target branch is
// a constant (stop-gradient).
LossResult mse_consistency(const Matrix& p_online, const Matrix& p_target);

// Mean KL(p_target || p_online) with probabilities clamped at 1e-12 before
// the log. Gradient w.r.t. online logits only.
LossResult kl_consistency(const Matrix& p_online, const Matrix& p_target);

// Backpropagates grad_logits through the traced forward pass. Weight decay is
// the optimizer's job and is not part of this gradient.
Gradients backward(const LayeredParams& model, const ForwardTrace& trace,
                   const Matrix& grad_logits);

// Convenience overload that runs its own forward pass.
Gradients backward(const LayeredParams& model, const Matrix& inputs, const Matrix& grad_logits);

// buffer <- momentum*buffer + (grad + wd*param); param <- param - lr*buffer
void sgd_step(LayeredParams& params, const Gradients& grads, OptimizerState& opt);

}  // namespace fedsiam
