#include "lab/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "lab/checkpoint.hpp"
#include "lab/codec.hpp"
#include "lab/eval.hpp"
#include "lab/probe.hpp"

namespace lab {

template <typename T>
int ntp_loss(Tape<T>& tape, const ForwardResult& fr, const std::vector<int32_t>& targets_x,
             const std::vector<int32_t>& targets_y) {
    check(fr.logits_x >= 0, "ntp_loss needs classification logits");
    int loss = tape.cross_entropy(fr.logits_x, targets_x);
    if (fr.logits_y >= 0) loss = tape.add(loss, tape.cross_entropy(fr.logits_y, targets_y));
    return loss;
}

template <typename T>
int regression_loss_ncl(Tape<T>& tape, Model<T>& m, const std::vector<T>& context_states,
                        const std::vector<T>& target_states, int batch, int seq, double sigma,
                        Rng& rng) {
    check(sigma >= 0, "noise scale must be >= 0");
    check(seq >= 2, "regression windows need at least two states");
    check(context_states.size() == target_states.size(), "context/target size mismatch");
    std::vector<T> noisy = context_states;
    if (sigma > 0) {
        for (auto& v : noisy) v += T(sigma * rng.normal());
    }
    const ForwardResult fr = forward_regression(tape, m, noisy, batch, seq);
    Tensor<T> tgt({int64_t(batch) * seq, m.cfg.input_dim});
    tgt.data = target_states;
    const int diff = tape.sub(fr.pred, tape.constant(std::move(tgt)));
    // the sum starts at the second context position: a single state cannot
    // determine the next one, so the first position carries no loss
    Tensor<T> mask({int64_t(batch) * seq, m.cfg.input_dim});
    for (int b = 0; b < batch; ++b)
        for (int j = 1; j < seq; ++j)
            for (int d = 0; d < m.cfg.input_dim; ++d)
                mask.data[size_t((int64_t(b) * seq + j) * m.cfg.input_dim + d)] = T(1);
    const int masked = tape.mul(diff, tape.constant(std::move(mask)));
    return tape.scale(tape.sum_all(tape.mul(masked, diff)),
                      T(1.0 / (double(batch) * (seq - 1))));
}

void TrainConfig::validate() const {
    check(steps >= 0, "steps must be >= 0");
    check(batch >= 1, "batch must be >= 1");
    check(sigma >= 0, "sigma must be >= 0");
    check(interval >= 1, "interval must be >= 1");
    check(test_fraction >= 0 && test_fraction < 1, "test fraction must be in [0, 1)");
    int64_t total = 0;
    for (const auto& [n, lr] : schedule) {
        check(n >= 0 && lr > 0, "bad schedule phase");
        total += n;
    }
    check(total == steps, "schedule boundaries must sum to total steps");
}

double TrainLog::best_spatial_r2() const {
    double best = std::numeric_limits<double>::quiet_NaN();
    for (const auto& r : records)
        if (!std::isnan(r.spatial_r2) && !(r.spatial_r2 <= best)) best = r.spatial_r2;
    return best;
}

void TrainLog::write_csv(const std::string& path) const {
    std::ofstream out(path);
    check(out.good(), "cannot open " + path + " for writing");
    out << "step,train_loss,test_loss,effective_mse,spatial_r2,rollout_mde\n";
    char line[256];
    for (const auto& r : records) {
        snprintf(line, sizeof(line), "%lld,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                 static_cast<long long>(r.step), r.train_loss, r.test_loss, r.effective_mse,
                 r.spatial_r2, r.rollout_mde);
        out << line;
    }
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct WindowRef {
    int32_t traj;
    int32_t start;
};

// Pre-tokenized / raw views of the dataset used by the train loop.
struct BatchSource {
    const Dataset* ds;
    int dim;
    int w;             // window length = min(ctx, n - 1)
    int starts;        // valid starts per trajectory
    int64_t n_train;
    int64_t n_test;
    std::vector<std::vector<int32_t>> tok_x, tok_y;  // classification

    WindowRef sample_train(Rng& rng) const {
        return {int32_t(rng.below(uint64_t(n_train))), int32_t(rng.below(uint64_t(starts)))};
    }
    WindowRef sample_test(Rng& rng) const {
        return {int32_t(n_train + int64_t(rng.below(uint64_t(n_test)))),
                int32_t(rng.below(uint64_t(starts)))};
    }
};

void fill_cls_batch(const BatchSource& src, const std::vector<WindowRef>& refs,
                    std::vector<int32_t>& tx, std::vector<int32_t>& ty,
                    std::vector<int32_t>& tgt_x, std::vector<int32_t>& tgt_y) {
    const int w = src.w;
    const size_t count = refs.size() * size_t(w);
    tx.resize(count);
    tgt_x.resize(count);
    if (src.dim == 2) {
        ty.resize(count);
        tgt_y.resize(count);
    }
    for (size_t b = 0; b < refs.size(); ++b) {
        const auto& x_toks = src.tok_x[size_t(refs[b].traj)];
        for (int j = 0; j < w; ++j) {
            tx[b * size_t(w) + size_t(j)] = x_toks[size_t(refs[b].start + j)];
            tgt_x[b * size_t(w) + size_t(j)] = x_toks[size_t(refs[b].start + j + 1)];
        }
        if (src.dim == 2) {
            const auto& y_toks = src.tok_y[size_t(refs[b].traj)];
            for (int j = 0; j < w; ++j) {
                ty[b * size_t(w) + size_t(j)] = y_toks[size_t(refs[b].start + j)];
                tgt_y[b * size_t(w) + size_t(j)] = y_toks[size_t(refs[b].start + j + 1)];
            }
        }
    }
}

void fill_reg_batch(const BatchSource& src, const std::vector<WindowRef>& refs,
                    std::vector<float>& ctx, std::vector<float>& tgt) {
    const int w = src.w, dim = src.dim;
    const size_t count = refs.size() * size_t(w) * size_t(dim);
    ctx.resize(count);
    tgt.resize(count);
    for (size_t b = 0; b < refs.size(); ++b) {
        const auto& tr = src.ds->trajs[size_t(refs[b].traj)];
        for (int j = 0; j < w; ++j)
            for (int d = 0; d < dim; ++d) {
                ctx[(b * size_t(w) + size_t(j)) * size_t(dim) + size_t(d)] =
                    float(tr.pos[size_t(refs[b].start + j) * size_t(dim) + size_t(d)]);
                tgt[(b * size_t(w) + size_t(j)) * size_t(dim) + size_t(d)] =
                    float(tr.pos[size_t(refs[b].start + j + 1) * size_t(dim) + size_t(d)]);
            }
    }
}

// Test loss (and classification effective MSE) over fixed held-out windows,
// evaluated noiselessly in chunks to bound the logits footprint.
struct EvalMetrics {
    double loss = kNaN;
    double effective_mse = kNaN;
};

EvalMetrics eval_on_windows(Model<float>& m, const BatchSource& src,
                            const std::vector<WindowRef>& refs, const TokenCodec* codec) {
    if (refs.empty()) return {};
    const int w = src.w, dim = src.dim;
    const int chunk = std::max<int>(1, int(4096 / size_t(w)));
    double loss_sum = 0;
    double emse_sum = 0;
    int64_t emse_count = 0;
    int64_t loss_rows = 0;
    std::vector<int32_t> tx, ty, gx, gy;
    std::vector<float> ctx, tgt;
    for (size_t at = 0; at < refs.size(); at += size_t(chunk)) {
        const std::vector<WindowRef> part(refs.begin() + ptrdiff_t(at),
                                          refs.begin() + ptrdiff_t(std::min(
                                              refs.size(), at + size_t(chunk))));
        Tape<float> tape;
        const int bsz = int(part.size());
        if (m.cfg.head == HeadKind::kClassification) {
            fill_cls_batch(src, part, tx, ty, gx, gy);
            const ForwardResult fr = forward_classification(tape, m, tx, ty, bsz, w);
            loss_sum += double(tape.scalar(ntp_loss(tape, fr, gx, gy))) * double(bsz) * w;
            loss_rows += int64_t(bsz) * w;
            // argmax positions -> decoded squared distance to the true state
            const Tensor<float>& lx = tape.val(fr.logits_x);
            const Tensor<float>* ly = dim == 2 ? &tape.val(fr.logits_y) : nullptr;
            for (int rowi = 0; rowi < bsz * w; ++rowi) {
                auto argmax_row = [&](const Tensor<float>& lg) {
                    const float* row = lg.ptr() + int64_t(rowi) * m.cfg.vocab;
                    int32_t bestk = 0;
                    for (int32_t k = 1; k < m.cfg.vocab; ++k)
                        if (row[k] > row[bestk]) bestk = k;
                    return bestk;
                };
                const auto& tr = src.ds->trajs[size_t(part[size_t(rowi / w)].traj)];
                const int pos = part[size_t(rowi / w)].start + rowi % w + 1;
                const double dx = codec->decode(argmax_row(lx)) -
                                  tr.pos[size_t(pos) * size_t(dim)];
                double d_sq = dx * dx;
                if (dim == 2) {
                    const double dy = codec->decode(argmax_row(*ly)) -
                                      tr.pos[size_t(pos) * 2 + 1];
                    d_sq += dy * dy;
                }
                emse_sum += d_sq;
                ++emse_count;
            }
        } else {
            fill_reg_batch(src, part, ctx, tgt);
            Rng dummy(0);
            loss_sum += double(tape.scalar(
                            regression_loss_ncl(tape, m, ctx, tgt, bsz, w, 0.0, dummy))) *
                        double(bsz) * w;
            loss_rows += int64_t(bsz) * w;
        }
    }
    EvalMetrics em;
    em.loss = loss_sum / double(loss_rows);
    if (emse_count > 0) em.effective_mse = emse_sum / double(emse_count);
    return em;
}

}  // namespace

TrainResult train(const Dataset& ds, const ModelConfig& mcfg, const TrainConfig& tcfg) {
    mcfg.validate();
    tcfg.validate();
    check(!ds.trajs.empty(), "dataset is empty");
    check(mcfg.input_dim == ds.dim(), "model dimensionality does not match the dataset");

    const int n = ds.steps;
    BatchSource src;
    src.ds = &ds;
    src.dim = ds.dim();
    src.w = std::min(mcfg.ctx, n - 1);
    src.starts = n - src.w;  // windows need one extra state for targets
    src.n_test = int64_t(tcfg.test_fraction * double(ds.d_traj));
    src.n_train = ds.d_traj - src.n_test;
    check(src.n_train >= 1, "no training trajectories after the split");

    const TokenCodec codec(mcfg.codec_half_range,
                           mcfg.head == HeadKind::kClassification ? mcfg.vocab : 2);
    if (mcfg.head == HeadKind::kClassification) {
        src.tok_x.resize(size_t(ds.d_traj));
        if (src.dim == 2) src.tok_y.resize(size_t(ds.d_traj));
        for (int64_t t = 0; t < ds.d_traj; ++t) {
            auto& tr = ds.trajs[size_t(t)];
            auto& tx = src.tok_x[size_t(t)];
            tx.resize(size_t(n));
            for (int i = 0; i < n; ++i)
                tx[size_t(i)] = codec.encode(tr.pos[size_t(i) * size_t(src.dim)]);
            if (src.dim == 2) {
                auto& ty = src.tok_y[size_t(t)];
                ty.resize(size_t(n));
                for (int i = 0; i < n; ++i) ty[size_t(i)] = codec.encode(tr.pos[size_t(i) * 2 + 1]);
            }
        }
    }

    const Rng root(tcfg.seed);
    Rng rng_init = root.fork(1);
    Rng rng_batch = root.fork(2);
    Rng rng_noise = root.fork(3);
    Rng rng_eval = root.fork(4);

    TrainResult res;
    res.model.cfg = mcfg;
    res.model.params = init_weights<float>(mcfg, rng_init);
    auto adam = AdamState<float>::init(res.model.params);
    adam.weight_decay = float(tcfg.weight_decay);
    adam.grad_clip = float(tcfg.grad_clip);

    // fixed held-out windows for the logged metrics
    std::vector<WindowRef> eval_refs;
    if (src.n_test > 0)
        for (int i = 0; i < tcfg.eval_windows; ++i) eval_refs.push_back(src.sample_test(rng_eval));
    std::vector<int64_t> rollout_trajs;
    for (int64_t t = src.n_train;
         t < std::min(ds.d_traj, src.n_train + int64_t(tcfg.eval_rollout_trajs)); ++t)
        rollout_trajs.push_back(t);

    if (!tcfg.out_dir.empty()) std::filesystem::create_directories(tcfg.out_dir);
    const auto ckpt_path = [&](int64_t step) {
        return tcfg.out_dir + "/ckpt_" + std::to_string(step) + ".bin";
    };
    nlohmann::json prov = {{"seed", tcfg.seed},
                           {"batch", tcfg.batch},
                           {"sigma", tcfg.sigma},
                           {"steps", tcfg.steps},
                           {"interval", tcfg.interval},
                           {"data_kind", ds.kind},
                           {"data_d_traj", ds.d_traj},
                           {"data_seed", ds.seed},
                           {"codec_half_range", mcfg.codec_half_range},
                           {"window", src.w},
                           {"position_semantics", "one_position_per_step_two_logit_heads"}};

    std::vector<WindowRef> refs(size_t(tcfg.batch));
    std::vector<int32_t> tx, ty, gx, gy;
    std::vector<float> ctx_states, tgt_states;
    Tape<float> tape;  // reused across steps; reset() recycles buffers
    double interval_loss = 0;
    int64_t interval_count = 0;

    size_t phase = 0;
    int64_t phase_left = tcfg.schedule.empty() ? 0 : tcfg.schedule[0].first;
    for (int64_t step = 0; step < tcfg.steps; ++step) {
        while (phase_left == 0 && phase + 1 < tcfg.schedule.size())
            phase_left = tcfg.schedule[++phase].first;
        adam.lr = float(tcfg.schedule[phase].second);
        --phase_left;

        for (auto& r : refs) r = src.sample_train(rng_batch);
        double loss_val;
        try {
            tape.reset();
            int loss;
            if (mcfg.head == HeadKind::kClassification) {
                fill_cls_batch(src, refs, tx, ty, gx, gy);
                const ForwardResult fr =
                    forward_classification(tape, res.model, tx, ty, tcfg.batch, src.w);
                loss = ntp_loss(tape, fr, gx, gy);
            } else {
                fill_reg_batch(src, refs, ctx_states, tgt_states);
                loss = regression_loss_ncl(tape, res.model, ctx_states, tgt_states, tcfg.batch,
                                           src.w, tcfg.sigma, rng_noise);
            }
            loss_val = double(tape.scalar(loss));
            if (!std::isfinite(loss_val)) throw NumericsError("non-finite loss");
            res.model.params.zero_grads();
            tape.backward(loss);
        } catch (const NumericsError& e) {
            throw TrainDiverged(step, e.what());
        }
        adam_step(res.model.params, adam);
        interval_loss += loss_val;
        ++interval_count;

        if ((step + 1) % tcfg.interval == 0 || step + 1 == tcfg.steps) {
            TrainRecord rec;
            rec.step = step + 1;
            rec.train_loss = interval_loss / double(interval_count);
            interval_loss = 0;
            interval_count = 0;

            const EvalMetrics em = eval_on_windows(res.model, src, eval_refs, &codec);
            rec.test_loss = em.loss;
            rec.effective_mse = em.effective_mse;

            rec.spatial_r2 = kNaN;
            if (mcfg.head == HeadKind::kClassification && mcfg.vocab > mcfg.d_model + 1) {
                double r2 = probe_spatial_map_r2(res.model.params.find("wte_x")->value, codec);
                if (src.dim == 2) {
                    r2 += probe_spatial_map_r2(res.model.params.find("wte_y")->value, codec);
                    r2 /= 2.0;
                }
                rec.spatial_r2 = r2;
            }

            rec.rollout_mde = kNaN;
            if (!rollout_trajs.empty() && n >= 100) {
                double sum = 0;
                int cnt = 0;
                for (const int64_t t : rollout_trajs) {
                    const RolloutResult rr =
                        rollout_model(res.model, ds.trajs[size_t(t)], 50, 50);
                    if (!std::isnan(rr.mde)) {
                        sum += rr.mde;
                        ++cnt;
                    }
                }
                if (cnt > 0) rec.rollout_mde = sum / cnt;
            }
            if (!res.log.records.empty() && res.log.records.back().step == rec.step)
                res.log.records.pop_back();
            res.log.records.push_back(rec);

            if (!tcfg.out_dir.empty() &&
                (tcfg.save_intermediate || step + 1 == tcfg.steps)) {
                prov["step"] = step + 1;
                prov["loss"] = rec.train_loss;
                save_checkpoint(ckpt_path(step + 1), res.model, prov);
            }
        }
    }
    if (tcfg.steps == 0) {
        // zero-step run: record the untouched initialization
        TrainRecord rec;
        rec.step = 0;
        rec.train_loss = kNaN;
        rec.test_loss = kNaN;
        rec.effective_mse = kNaN;
        rec.spatial_r2 = kNaN;
        rec.rollout_mde = kNaN;
        res.log.records.push_back(rec);
        if (!tcfg.out_dir.empty()) {
            prov["step"] = 0;
            prov["loss"] = kNaN;
            save_checkpoint(ckpt_path(0), res.model, prov);
        }
    }
    if (!tcfg.out_dir.empty()) res.log.write_csv(tcfg.out_dir + "/trainlog.csv");
    return res;
}

template int ntp_loss<float>(Tape<float>&, const ForwardResult&, const std::vector<int32_t>&,
                             const std::vector<int32_t>&);
template int ntp_loss<double>(Tape<double>&, const ForwardResult&, const std::vector<int32_t>&,
                              const std::vector<int32_t>&);
template int regression_loss_ncl<float>(Tape<float>&, Model<float>&, const std::vector<float>&,
                                        const std::vector<float>&, int, int, double, Rng&);
template int regression_loss_ncl<double>(Tape<double>&, Model<double>&,
                                         const std::vector<double>&, const std::vector<double>&,
                                         int, int, double, Rng&);

}  // namespace lab
