#pragma once

#include <cstdint>
#include <vector>

#include "fedsiam/data.hpp"
#include "fedsiam/nn.hpp"
#include "fedsiam/rng.hpp"

namespace fedsiam {

enum class ConsistencyLoss { MSE, KL };

// One client's siamese pair. The online net learns by SGD; the target net
// trails it as an exponential moving average and never sees a gradient.
struct SiameseState {
    LayeredParams online;
    LayeredParams target;
    long step = 0;  // q, advances once per optimizer step
    OptimizerState opt;
};

struct Schedules {
    double alpha_max = 0.999;
    int phi_l = 10;       // rounds until the consistency weight saturates
    double beta_max = 1.0;
};

// EMA decay ramp: min(1 - 1/(q+1), alpha_max). alpha(0) = 0 so the target
// copies the online net on the very first step.
double alpha_schedule(long q, double alpha_max);

// Consistency weight ramp over global rounds:
// beta_max * exp(-5 * (1 - min(R_g/phi_l, 1))^2).
double beta_schedule(int round, int phi_l, double beta_max);

// target <- alpha*target + (1-alpha)*online. Online is untouched.
void ema_update(SiameseState& state, double alpha);

struct LocalTrainOpts {
    int local_epochs = 1;     // R_L
    int batch_size = 10;      // BS_tr
    ConsistencyLoss loss = ConsistencyLoss::MSE;
    double perturb_sigma = 0.1;
    Schedules sched;
    int round = 1;  // R_g, drives the beta ramp
};

struct LocalTrainStats {
    long steps = 0;
    double cls_loss_sum = 0.0;
    double cons_loss_sum = 0.0;
    double alpha_sum = 0.0;
    bool ignored_labeled_data = false;  // labels-at-server shard carried labels
};

// Labels-at-client objective: cross-entropy on a perturbed labeled batch plus
// beta * consistency over the union of the step's labeled and unlabeled
// batches, each consistency branch perturbed independently. One SGD step on
// the online net per step, followed by the EMA update; an epoch is one pass
// over the unlabeled stream, the labeled stream cycles with reshuffle.
LocalTrainStats local_train_labels_at_client(SiameseState& state, const ClientShard& shard,
                                             const LocalTrainOpts& opts, Rng& rng);

// Labels-at-server objective: beta * consistency only. No label is read.
LocalTrainStats local_train_labels_at_server(SiameseState& state, const ClientShard& shard,
                                             const LocalTrainOpts& opts, Rng& rng);

// Plain supervised cross-entropy epochs on a single net (FedAvg clients).
// sigma > 0 perturbs the inputs (weak augmentation toggle).
LocalTrainStats supervised_train(LayeredParams& model, OptimizerState& opt, const Matrix& x,
                                 const std::vector<int>& y, int epochs, int batch_size,
                                 double sigma, Rng& rng);

// Labels-at-server server step: supervised epochs on the global online net,
// with an EMA update of the global target after every optimizer step.
LocalTrainStats server_update(SiameseState& global, const ServerPool& pool, int epochs,
                              int batch_size, double alpha_max, Rng& rng);

}  // namespace fedsiam
