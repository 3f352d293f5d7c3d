#pragma once

#include <string>
#include <vector>

#include "lab/adam.hpp"
#include "lab/datagen.hpp"
#include "lab/model.hpp"

namespace lab {

// Dual-head next-token cross entropy: mean over positions and batch of
// CE(logits_x) plus, for 2D, CE(logits_y).
template <typename T>
int ntp_loss(Tape<T>& tape, const ForwardResult& fr, const std::vector<int32_t>& targets_x,
             const std::vector<int32_t>& targets_y);

// Noisy-context regression objective: gaussian noise on every context state,
// clean targets, mean squared next-state error over positions and batch.
// sigma == 0 runs exactly the noiseless path (no RNG draws).
template <typename T>
int regression_loss_ncl(Tape<T>& tape, Model<T>& m, const std::vector<T>& context_states,
                        const std::vector<T>& target_states, int batch, int seq, double sigma,
                        Rng& rng);

struct TrainDiverged : NumericsError {
    int64_t step;
    TrainDiverged(int64_t s, const std::string& msg)
        : NumericsError(strformat("training diverged at step %lld: %s",
                                  static_cast<long long>(s), msg.c_str())),
          step(s) {}
};

struct TrainConfig {
    int64_t steps = 20000;
    // two-phase schedule by default; boundaries must sum to `steps`
    std::vector<std::pair<int64_t, double>> schedule = {{10000, 1e-3}, {10000, 1e-4}};
    int batch = 64;
    double sigma = 0.0;  // context noise scale (regression only)
    uint64_t seed = 0;
    int64_t interval = 500;  // probe/checkpoint interval
    double test_fraction = 0.1;
    double weight_decay = 0.0;
    double grad_clip = 0.0;
    bool save_intermediate = false;  // ckpt_{step}.bin at every interval
    int eval_windows = 256;          // test-loss sample
    int eval_rollout_trajs = 16;     // in-training rollout metric sample
    std::string out_dir;             // empty: nothing written to disk

    static std::vector<std::pair<int64_t, double>> default_schedule(int64_t steps) {
        return {{steps - steps / 2, 1e-3}, {steps / 2, 1e-4}};
    }
    void validate() const;
};

struct TrainRecord {
    int64_t step = 0;
    double train_loss = 0;
    double test_loss = 0;
    double effective_mse = 0;  // classification only, else nan
    double spatial_r2 = 0;     // classification only, else nan
    double rollout_mde = 0;
};

struct TrainLog {
    std::vector<TrainRecord> records;
    double best_spatial_r2() const;
    void write_csv(const std::string& path) const;
};

struct TrainResult {
    Model<float> model;
    TrainLog log;
};

// Runs the two-phase Adam schedule over uniformly sampled context windows.
// Deterministic for a fixed seed; aborts with TrainDiverged on a non-finite
// loss.
TrainResult train(const Dataset& ds, const ModelConfig& mcfg, const TrainConfig& tcfg);

extern template int ntp_loss<float>(Tape<float>&, const ForwardResult&,
                                    const std::vector<int32_t>&, const std::vector<int32_t>&);
extern template int ntp_loss<double>(Tape<double>&, const ForwardResult&,
                                     const std::vector<int32_t>&, const std::vector<int32_t>&);
extern template int regression_loss_ncl<float>(Tape<float>&, Model<float>&,
                                               const std::vector<float>&,
                                               const std::vector<float>&, int, int, double,
                                               Rng&);
extern template int regression_loss_ncl<double>(Tape<double>&, Model<double>&,
                                                const std::vector<double>&,
                                                const std::vector<double>&, int, int, double,
                                                Rng&);

}  // namespace lab
