#pragma once

#include <functional>
#include <vector>

#include "lab/codec.hpp"
#include "lab/datagen.hpp"
#include "lab/model.hpp"

namespace lab {

// Autoregressive continuation of one trajectory: condition on a prefix,
// generate `horizon` states, compare against the truth.
struct RolloutResult {
    int dim = 2;
    std::vector<double> context;    // condition * dim
    std::vector<double> generated;  // horizon * dim (valid up to truncation)
    std::vector<double> truth;      // horizon * dim
    std::vector<double> step_err;   // per-step euclidean distance
    double mde = 0;                 // mean over generated steps
    int truncated_at = -1;          // first non-finite generation step, -1 if none
};

// Predictor contract: consume the most recent window of states (row-major,
// oldest first) and append the next state. Returns false to abort.
using NextStateFn =
    std::function<bool(const std::vector<double>& window, int dim, std::vector<double>& next)>;

// Generic rollout driver; `max_feed` caps the window passed to the predictor.
RolloutResult rollout_core(const NextStateFn& next_fn, const Trajectory& truth, int condition,
                           int horizon, int max_feed);

// Transformer rollouts. Classification feeds argmax tokens, regression feeds
// raw predictions; no noise is injected at inference.
RolloutResult rollout_model(Model<float>& m, const Trajectory& truth, int condition,
                            int horizon);

double mean_distance_error(const std::vector<double>& gen, const std::vector<double>& truth,
                           int dim);

// Classification-only: squared distance between decoded predicted tokens and
// the true continuous next states, averaged over positions.
double effective_mse(const std::vector<int32_t>& pred_x, const std::vector<int32_t>& pred_y,
                     const std::vector<double>& truth_states, int dim, const TokenCodec& codec);

void write_rollout_csv(const std::string& path, const std::vector<RolloutResult>& rollouts);

}  // namespace lab
