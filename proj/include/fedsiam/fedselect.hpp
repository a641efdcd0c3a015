#pragma once

#include <cstdint>
#include <deque>
#include <vector>

#include "fedsiam/siamese.hpp"

namespace fedsiam {

// Per-layer relative divergence ||target[j] - online[j]|| / ||online[j]||,
// weights and bias of a layer flattened together. A zero-norm online layer
// yields 0 when the target layer is identical and +inf otherwise (which
// always uploads).
struct FsmVector {
    std::vector<double> values;
    int client_id = -1;
    int round = 0;
};

FsmVector fsm(const SiameseState& state, int client_id, int round);

enum class TauCurve { Linear, Rectangle };

struct TauSchedule {
    TauCurve kind = TauCurve::Linear;
    double mu = 0.5;       // target reduction of online-net communication
    int phi_g = 3;         // tipping point 1
    int varphi_g = 40;     // tipping point 2 (rectangle only)
    int total_rounds = 50; // R_G
};

// The raw ramp-down curve at a (real-valued) round, before clamping.
// Linear: 0 for r <= phi_g, then -2(1-mu)R_G/(R_G-phi_g)^2 * (r - R_G).
// Rectangle: (1-mu)R_G/(varphi_g-phi_g) on (phi_g, varphi_g), else 0.
// Both integrate to (1-mu)*R_G over [0, R_G].
double tau_unclamped(const TauSchedule& sched, double r);

// Scheduled quantile level for an integer round, clamped to [0,1].
double tau_value(const TauSchedule& sched, int round);

// Server-side window of the most recent rounds' FSM vectors (capacity_rounds
// rounds, i.e. at most capacity_rounds * V * B scalars).
class DivergenceLog {
  public:
    explicit DivergenceLog(int capacity_rounds) : capacity_(capacity_rounds) {}

    void add_round(int round, std::vector<FsmVector> vectors);

    std::size_t scalar_count() const;
    int round_count() const { return static_cast<int>(window_.size()); }

    // All stored scalars that are finite (+inf sentinels are excluded).
    std::vector<double> finite_values() const;

  private:
    struct RoundEntry {
        int round;
        std::vector<FsmVector> vectors;
    };
    int capacity_;
    std::deque<RoundEntry> window_;
};

// Sentinel meaning "skip nothing": every FSM value compares >= it.
double boundary_sentinel();

// tau-th quantile (linear interpolation between closest order statistics) of
// the log's finite values. tau == 0 or an empty log short-circuits to the
// sentinel so that no layer is skipped.
double boundary(const DivergenceLog& log, double tau);

using UploadMask = std::vector<bool>;

// mask[j] = false (skip the upload) iff fsm.values[j] < bound. Ties upload;
// +inf always uploads.
UploadMask select_layers(const FsmVector& fsm, double bound);

}  // namespace fedsiam
