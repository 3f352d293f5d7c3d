#include "lab/eval.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace lab {

RolloutResult rollout_core(const NextStateFn& next_fn, const Trajectory& truth, int condition,
                           int horizon, int max_feed) {
    const int dim = truth.dim;
    check(condition >= 1, "rollout needs at least one conditioning state");
    check(condition + horizon <= truth.n(),
          "conditioning plus horizon exceeds the trajectory length");
    RolloutResult rr;
    rr.dim = dim;
    rr.context.assign(truth.pos.begin(), truth.pos.begin() + ptrdiff_t(condition) * dim);
    rr.truth.assign(truth.pos.begin() + ptrdiff_t(condition) * dim,
                    truth.pos.begin() + ptrdiff_t(condition + horizon) * dim);

    std::vector<double> history = rr.context;
    for (int step = 0; step < horizon; ++step) {
        const int avail = int(history.size()) / dim;
        const int feed = std::min(avail, max_feed);
        const std::vector<double> window(history.end() - ptrdiff_t(feed) * dim, history.end());
        std::vector<double> next;
        bool ok = false;
        try {
            ok = next_fn(window, dim, next);
        } catch (const NumericsError&) {
            ok = false;
        }
        if (ok)
            for (const double v : next)
                if (!std::isfinite(v)) ok = false;
        if (!ok || int(next.size()) != dim) {
            rr.truncated_at = step;
            break;
        }
        for (const double v : next) history.push_back(v);
        for (int d = 0; d < dim; ++d) rr.generated.push_back(next[size_t(d)]);
        double dist_sq = 0;
        for (int d = 0; d < dim; ++d) {
            const double diff = next[size_t(d)] - rr.truth[size_t(step) * dim + size_t(d)];
            dist_sq += diff * diff;
        }
        rr.step_err.push_back(std::sqrt(dist_sq));
    }
    if (!rr.step_err.empty()) {
        double s = 0;
        for (const double e : rr.step_err) s += e;
        rr.mde = s / double(rr.step_err.size());
    } else {
        rr.mde = std::numeric_limits<double>::quiet_NaN();
    }
    return rr;
}

RolloutResult rollout_model(Model<float>& m, const Trajectory& truth, int condition,
                            int horizon) {
    const ModelConfig& cfg = m.cfg;
    check(cfg.input_dim == truth.dim, "model and trajectory dimensionality differ");
    // cap at the window length the positional table was trained on
    const int max_feed = std::min(cfg.ctx, truth.n() - 1);

    if (cfg.head == HeadKind::kRegression) {
        auto next_fn = [&](const std::vector<double>& window, int dim,
                           std::vector<double>& next) {
            const int s = int(window.size()) / dim;
            std::vector<float> states(window.begin(), window.end());
            Tape<float> tape;
            const ForwardResult fr = forward_regression(tape, m, states, 1, s);
            const Tensor<float>& out = tape.val(fr.pred);
            for (int d = 0; d < dim; ++d)
                next.push_back(double(out.data[size_t(s - 1) * size_t(dim) + size_t(d)]));
            return true;
        };
        return rollout_core(next_fn, truth, condition, horizon, max_feed);
    }

    // classification: carry tokens alongside the decoded states
    const TokenCodec codec(cfg.codec_half_range, cfg.vocab);
    auto next_fn = [&](const std::vector<double>& window, int dim, std::vector<double>& next) {
        const int s = int(window.size()) / dim;
        std::vector<int32_t> tx(static_cast<size_t>(s)), ty;
        for (int i = 0; i < s; ++i) tx[size_t(i)] = codec.encode(window[size_t(i) * size_t(dim)]);
        if (dim == 2) {
            ty.resize(size_t(s));
            for (int i = 0; i < s; ++i) ty[size_t(i)] = codec.encode(window[size_t(i) * 2 + 1]);
        }
        Tape<float> tape;
        const ForwardResult fr = forward_classification(tape, m, tx, ty, 1, s);
        auto argmax_last = [&](int logits_id) {
            const Tensor<float>& lg = tape.val(logits_id);
            const float* row = lg.ptr() + int64_t(s - 1) * cfg.vocab;
            int32_t best = 0;
            for (int32_t k = 1; k < cfg.vocab; ++k)
                if (row[k] > row[best]) best = k;
            return best;
        };
        next.push_back(codec.decode(argmax_last(fr.logits_x)));
        if (dim == 2) next.push_back(codec.decode(argmax_last(fr.logits_y)));
        return true;
    };
    return rollout_core(next_fn, truth, condition, horizon, max_feed);
}

double mean_distance_error(const std::vector<double>& gen, const std::vector<double>& truth,
                           int dim) {
    check(gen.size() == truth.size(), "generated/truth length mismatch");
    check(!gen.empty(), "empty sequences");
    const size_t steps = gen.size() / size_t(dim);
    double total = 0;
    for (size_t i = 0; i < steps; ++i) {
        double dist_sq = 0;
        for (int d = 0; d < dim; ++d) {
            const double diff = gen[i * size_t(dim) + size_t(d)] - truth[i * size_t(dim) + size_t(d)];
            dist_sq += diff * diff;
        }
        total += std::sqrt(dist_sq);
    }
    return total / double(steps);
}

double effective_mse(const std::vector<int32_t>& pred_x, const std::vector<int32_t>& pred_y,
                     const std::vector<double>& truth_states, int dim, const TokenCodec& codec) {
    const size_t n = pred_x.size();
    check(truth_states.size() == n * size_t(dim), "effective_mse size mismatch");
    if (dim == 2) check(pred_y.size() == n, "effective_mse y-token mismatch");
    double total = 0;
    for (size_t i = 0; i < n; ++i) {
        const double dx = codec.decode(pred_x[i]) - truth_states[i * size_t(dim)];
        double d_sq = dx * dx;
        if (dim == 2) {
            const double dy = codec.decode(pred_y[i]) - truth_states[i * 2 + 1];
            d_sq += dy * dy;
        }
        total += d_sq;
    }
    return total / double(n);
}

void write_rollout_csv(const std::string& path, const std::vector<RolloutResult>& rollouts) {
    std::ofstream out(path);
    check(out.good(), "cannot open " + path + " for writing");
    out << "traj_id,step,x_true,y_true,x_gen,y_gen,dist_err\n";
    char line[256];
    for (size_t ti = 0; ti < rollouts.size(); ++ti) {
        const auto& rr = rollouts[ti];
        const int steps = int(rr.step_err.size());
        for (int i = 0; i < steps; ++i) {
            const double xt = rr.truth[size_t(i) * size_t(rr.dim)];
            const double yt = rr.dim == 2 ? rr.truth[size_t(i) * 2 + 1] : 0.0;
            const double xg = rr.generated[size_t(i) * size_t(rr.dim)];
            const double yg = rr.dim == 2 ? rr.generated[size_t(i) * 2 + 1] : 0.0;
            snprintf(line, sizeof(line), "%zu,%d,%.10g,%.10g,%.10g,%.10g,%.10g\n", ti, i, xt,
                     yt, xg, yg, rr.step_err[size_t(i)]);
            out << line;
        }
    }
}

}  // namespace lab
