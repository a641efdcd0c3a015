#include "fedsiam/siamese.hpp"

#include <algorithm>
#include <cmath>

#include "fedsiam/errors.hpp"

namespace fedsiam {

namespace {

// Reshuffling index stream over a fixed set of rows. Batches never straddle a
// reshuffle: when fewer than batch_size indices remain, the stream restarts
// from a fresh permutation.
class BatchCycler {
  public:
    explicit BatchCycler(int n) : order_(static_cast<std::size_t>(n)) {
        for (int i = 0; i < n; ++i) order_[static_cast<std::size_t>(i)] = i;
        pos_ = order_.size();  // force a shuffle on first use
    }

    std::vector<int> next(int batch_size, Rng& rng) {
        const std::size_t want =
            std::min<std::size_t>(static_cast<std::size_t>(batch_size), order_.size());
        if (pos_ + want > order_.size()) {
            rng.shuffle(order_);
            pos_ = 0;
        }
        std::vector<int> out(order_.begin() + static_cast<long>(pos_),
                             order_.begin() + static_cast<long>(pos_ + want));
        pos_ += want;
        return out;
    }

  private:
    std::vector<int> order_;
    std::size_t pos_ = 0;
};

Matrix gather(const Matrix& src, const std::vector<int>& idx) {
    Matrix out(static_cast<int>(idx.size()), src.cols);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const double* s = src.row_ptr(idx[i]);
        std::copy(s, s + src.cols, out.row_ptr(static_cast<int>(i)));
    }
    return out;
}

Matrix vstack(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows + b.rows, a.cols);
    std::copy(a.data.begin(), a.data.end(), out.data.begin());
    std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<long>(a.data.size()));
    return out;
}

int steps_per_epoch(int stream_size, int batch_size) {
    return std::max(1, stream_size / batch_size);
}

LossResult consistency(ConsistencyLoss kind, const Matrix& p_online, const Matrix& p_target) {
    return kind == ConsistencyLoss::MSE ? mse_consistency(p_online, p_target)
                                        : kl_consistency(p_online, p_target);
}

}  // namespace

double alpha_schedule(long q, double alpha_max) {
    if (q < 0) throw ContractError("alpha_schedule: q must be >= 0");
    return std::min(1.0 - 1.0 / static_cast<double>(q + 1), alpha_max);
}

double beta_schedule(int round, int phi_l, double beta_max) {
    if (round < 0) throw ContractError("beta_schedule: round must be >= 0");
    if (phi_l < 1) throw ConfigError("beta_schedule: phi_l must be >= 1");
    const double t = std::min(static_cast<double>(round) / static_cast<double>(phi_l), 1.0);
    return beta_max * std::exp(-5.0 * (1.0 - t) * (1.0 - t));
}

void ema_update(SiameseState& state, double alpha) {
    state.target.scale(alpha);
    state.target.add_scaled(state.online, 1.0 - alpha);
}

LocalTrainStats local_train_labels_at_client(SiameseState& state, const ClientShard& shard,
                                             const LocalTrainOpts& opts, Rng& rng) {
    if (shard.labeled_count() < 1 || shard.unlabeled_count() < 1) {
        throw ScenarioError("labels-at-client training needs labeled and unlabeled data (client " +
                            std::to_string(shard.client_id) + ")");
    }
    const double beta = beta_schedule(opts.round, opts.sched.phi_l, opts.sched.beta_max);
    const int per_epoch = steps_per_epoch(shard.unlabeled_count(), opts.batch_size);

    BatchCycler unlabeled(shard.unlabeled_count());
    BatchCycler labeled(shard.labeled_count());
    LocalTrainStats stats;
    for (int epoch = 0; epoch < opts.local_epochs; ++epoch) {
        for (int s = 0; s < per_epoch; ++s) {
            const auto idx_u = unlabeled.next(opts.batch_size, rng);
            const auto idx_l = labeled.next(opts.batch_size, rng);

            Matrix xl = gather(shard.labeled_x, idx_l);
            std::vector<int> yl(idx_l.size());
            for (std::size_t i = 0; i < idx_l.size(); ++i)
                yl[i] = shard.labeled_y[static_cast<std::size_t>(idx_l[i])];
            Matrix xu = gather(shard.unlabeled_x, idx_u);

            // classification branch
            Matrix xl_cls = perturb(xl, rng, opts.perturb_sigma);
            ForwardTrace trace_cls;
            forward_trace(state.online, xl_cls, trace_cls);
            LossResult cls = cross_entropy_loss(trace_cls.probs, yl);

            // consistency branch over labeled + unlabeled, independent noise
            Matrix joint = vstack(xl, xu);
            Matrix x_online = perturb(joint, rng, opts.perturb_sigma);
            Matrix x_target = perturb(joint, rng, opts.perturb_sigma);
            ForwardTrace trace_cons;
            forward_trace(state.online, x_online, trace_cons);
            Matrix p_target = forward(state.target, x_target);  // stop-gradient
            LossResult cons = consistency(opts.loss, trace_cons.probs, p_target);

            Gradients grads = backward(state.online, trace_cls, cls.grad_logits);
            grads.add_scaled(backward(state.online, trace_cons, cons.grad_logits), beta);

            sgd_step(state.online, grads, state.opt);
            const double alpha = alpha_schedule(state.step, opts.sched.alpha_max);
            ema_update(state, alpha);
            state.step += 1;

            stats.steps += 1;
            stats.cls_loss_sum += cls.loss;
            stats.cons_loss_sum += cons.loss;
            stats.alpha_sum += alpha;
        }
    }
    return stats;
}

LocalTrainStats local_train_labels_at_server(SiameseState& state, const ClientShard& shard,
                                             const LocalTrainOpts& opts, Rng& rng) {
    if (shard.unlabeled_count() < 1) {
        throw ScenarioError("labels-at-server training needs unlabeled data (client " +
                            std::to_string(shard.client_id) + ")");
    }
    const double beta = beta_schedule(opts.round, opts.sched.phi_l, opts.sched.beta_max);
    const int per_epoch = steps_per_epoch(shard.unlabeled_count(), opts.batch_size);

    BatchCycler unlabeled(shard.unlabeled_count());
    LocalTrainStats stats;
    stats.ignored_labeled_data = shard.labeled_count() > 0;
    for (int epoch = 0; epoch < opts.local_epochs; ++epoch) {
        for (int s = 0; s < per_epoch; ++s) {
            const auto idx_u = unlabeled.next(opts.batch_size, rng);
            Matrix xu = gather(shard.unlabeled_x, idx_u);

            Matrix x_online = perturb(xu, rng, opts.perturb_sigma);
            Matrix x_target = perturb(xu, rng, opts.perturb_sigma);
            ForwardTrace trace_cons;
            forward_trace(state.online, x_online, trace_cons);
            Matrix p_target = forward(state.target, x_target);
            LossResult cons = consistency(opts.loss, trace_cons.probs, p_target);

            Gradients grads = backward(state.online, trace_cons, cons.grad_logits);
            grads.scale(beta);

            sgd_step(state.online, grads, state.opt);
            const double alpha = alpha_schedule(state.step, opts.sched.alpha_max);
            ema_update(state, alpha);
            state.step += 1;

            stats.steps += 1;
            stats.cons_loss_sum += cons.loss;
            stats.alpha_sum += alpha;
        }
    }
    return stats;
}

LocalTrainStats supervised_train(LayeredParams& model, OptimizerState& opt, const Matrix& x,
                                 const std::vector<int>& y, int epochs, int batch_size,
                                 double sigma, Rng& rng) {
    if (x.rows < 1) throw ScenarioError("supervised training needs labeled data");
    const int per_epoch = steps_per_epoch(x.rows, batch_size);
    BatchCycler cycler(x.rows);
    LocalTrainStats stats;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        for (int s = 0; s < per_epoch; ++s) {
            const auto idx = cycler.next(batch_size, rng);
            Matrix xb = gather(x, idx);
            std::vector<int> yb(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i)
                yb[i] = y[static_cast<std::size_t>(idx[i])];
            if (sigma > 0.0) xb = perturb(xb, rng, sigma);

            ForwardTrace trace;
            forward_trace(model, xb, trace);
            LossResult cls = cross_entropy_loss(trace.probs, yb);
            Gradients grads = backward(model, trace, cls.grad_logits);
            sgd_step(model, grads, opt);

            stats.steps += 1;
            stats.cls_loss_sum += cls.loss;
        }
    }
    return stats;
}

LocalTrainStats server_update(SiameseState& global, const ServerPool& pool, int epochs,
                              int batch_size, double alpha_max, Rng& rng) {
    if (pool.x.rows < 1) {
        throw ScenarioError("server_update requires a labels-at-server labeled pool");
    }
    const int per_epoch = steps_per_epoch(pool.x.rows, batch_size);
    BatchCycler cycler(pool.x.rows);
    LocalTrainStats stats;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        for (int s = 0; s < per_epoch; ++s) {
            const auto idx = cycler.next(batch_size, rng);
            Matrix xb = gather(pool.x, idx);
            std::vector<int> yb(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i)
                yb[i] = pool.y[static_cast<std::size_t>(idx[i])];

            ForwardTrace trace;
            forward_trace(global.online, xb, trace);
            LossResult cls = cross_entropy_loss(trace.probs, yb);
            Gradients grads = backward(global.online, trace, cls.grad_logits);
            sgd_step(global.online, grads, global.opt);
            const double alpha = alpha_schedule(global.step, alpha_max);
            ema_update(global, alpha);
            global.step += 1;

            stats.steps += 1;
            stats.cls_loss_sum += cls.loss;
            stats.alpha_sum += alpha;
        }
    }
    return stats;
}

}  // namespace fedsiam
