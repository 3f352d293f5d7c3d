// lab: generate trajectory datasets, train small transformers on them,
// roll out predictions, probe internal representations, and orchestrate
// experiment sweeps.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "lab/checkpoint.hpp"
#include "lab/eval.hpp"
#include "lab/experiments.hpp"
#include "lab/probe.hpp"
#include "lab/train.hpp"

using namespace lab;

namespace {

nlohmann::json load_json_file(const std::string& path) {
    std::ifstream in(path);
    check(in.good(), "cannot open " + path);
    nlohmann::json j;
    in >> j;
    return j;
}

int cmd_gen_data(const std::string& kind, int64_t traj, uint64_t seed, const std::string& out,
                 const std::string& format) {
    const Dataset ds = build_dataset(kind, traj, seed);
    if (format == "csv") {
        export_dataset_csv(out, ds);
    } else {
        save_dataset(out, ds);
    }
    std::printf("wrote %s (%lld trajectories, %lld tokens)\n", out.c_str(),
                static_cast<long long>(ds.d_traj), static_cast<long long>(ds.token_count()));
    return 0;
}

int cmd_train(const std::string& data, const std::string& head, int vocab, double noise,
              int ctx, int layers, int heads, int width, int64_t steps, uint64_t seed,
              const std::string& out, int batch, int64_t interval, bool save_intermediate,
              double test_fraction) {
    const Dataset ds = load_dataset(data);
    ModelConfig mcfg;
    mcfg.n_layer = layers;
    mcfg.n_head = heads;
    mcfg.d_model = width;
    mcfg.ctx = ctx;
    mcfg.head = head == "cls" ? HeadKind::kClassification : HeadKind::kRegression;
    mcfg.vocab = head == "cls" ? vocab : 0;
    mcfg.input_dim = ds.dim();
    mcfg.codec_half_range = default_half_range(ds.kind);
    check(head != "reg" || noise >= 0, "noise must be >= 0");

    TrainConfig tcfg;
    tcfg.steps = steps;
    tcfg.schedule = TrainConfig::default_schedule(steps);
    tcfg.batch = batch;
    tcfg.sigma = head == "reg" ? noise : 0.0;
    check(head == "reg" || noise == 0.0, "--noise applies to regression training only");
    tcfg.seed = seed;
    tcfg.interval = interval;
    tcfg.save_intermediate = save_intermediate;
    tcfg.test_fraction = test_fraction;
    tcfg.out_dir = out;

    const TrainResult res = train(ds, mcfg, tcfg);
    const auto& last = res.log.records.back();
    std::printf("final step %lld: train_loss=%.6g test_loss=%.6g",
                static_cast<long long>(last.step), last.train_loss, last.test_loss);
    if (!std::isnan(last.spatial_r2))
        std::printf(" best_spatial_r2=%.6g", res.log.best_spatial_r2());
    std::printf("\ncheckpoints and trainlog.csv under %s\n", out.c_str());
    return 0;
}

int cmd_rollout(const std::string& ckpt, const std::string& data, int condition, int horizon,
                const std::string& out, int64_t max_trajs) {
    Checkpoint ck = load_checkpoint(ckpt);
    const Dataset ds = load_dataset(data);
    check(ds.dim() == ck.model.cfg.input_dim, "dataset does not match the model");
    std::vector<RolloutResult> rollouts;
    const int64_t count = max_trajs > 0 ? std::min<int64_t>(max_trajs, ds.d_traj) : ds.d_traj;
    double mde_sum = 0;
    int64_t mde_cnt = 0;
    for (int64_t i = 0; i < count; ++i) {
        rollouts.push_back(rollout_model(ck.model, ds.trajs[size_t(i)], condition, horizon));
        if (!std::isnan(rollouts.back().mde)) {
            mde_sum += rollouts.back().mde;
            ++mde_cnt;
        }
    }
    write_rollout_csv(out, rollouts);
    std::printf("rolled out %lld trajectories; mean distance error %.6g -> %s\n",
                static_cast<long long>(count), mde_cnt ? mde_sum / double(mde_cnt) : 0.0,
                out.c_str());
    return 0;
}

int cmd_probe(const std::string& ckpt, const std::string& data, const std::string& targets,
              const std::string& out, int64_t max_rows, bool intercept) {
    Checkpoint ck = load_checkpoint(ckpt);
    if (targets == "spatial") {
        check(ck.model.cfg.head == HeadKind::kClassification,
              "spatial-map probing needs a classification checkpoint");
        const TokenCodec codec(ck.model.cfg.codec_half_range, ck.model.cfg.vocab);
        std::ofstream f(out);
        check(f.good(), "cannot open " + out);
        f << "target,site,layer,r2\n";
        const double rx = probe_spatial_map_r2(ck.model.params.find("wte_x")->value, codec);
        f << "spatial_x,wte_x,-1," << rx << "\n";
        std::printf("spatial_x r2=%.6g", rx);
        if (ck.model.cfg.input_dim == 2) {
            const double ry = probe_spatial_map_r2(ck.model.params.find("wte_y")->value, codec);
            f << "spatial_y,wte_y,-1," << ry << "\n";
            std::printf(" spatial_y r2=%.6g", ry);
        }
        std::printf(" -> %s\n", out.c_str());
        return 0;
    }
    const Dataset ds = load_dataset(data);
    const TargetSet set = targets == "newton"   ? TargetSet::kNewton
                          : targets == "kepler" ? TargetSet::kKepler
                                                : TargetSet::kAll;
    ProbeOptions opt;
    opt.max_rows = max_rows;
    opt.intercept = intercept;
    const ProbeReport rep = probe_sweep(ck.model, ds, set, opt);
    rep.write_csv(out);
    for (const auto& b : rep.best)
        std::printf("best %-8s r2=%.6g (%s, layer %d)\n", b.target.c_str(), b.r2,
                    b.site.c_str(), b.layer);
    std::printf("-> %s\n", out.c_str());
    return 0;
}

int cmd_sweep(const std::string& spec_path, int jobs, const std::string& out) {
    const SweepSpec spec = SweepSpec::from_json(load_json_file(spec_path));
    SweepOptions opt;
    opt.work_dir = out;
    opt.jobs = jobs;
    const auto results = run_sweep(spec, opt);
    int failed = 0;
    for (const auto& r : results) failed += r.failed ? 1 : 0;
    std::printf("%zu cells done, %d failed; results under %s\n", results.size(), failed,
                out.c_str());
    return failed == 0 ? 0 : 1;
}

int cmd_fit_scaling(const std::string& in, const std::string& out) {
    std::ifstream f(in);
    check(f.good(), "cannot open " + in);
    std::string header;
    check(bool(std::getline(f, header)), "empty csv");
    std::vector<std::string> cols;
    {
        std::stringstream ss(header);
        std::string c;
        while (std::getline(ss, c, ',')) cols.push_back(c);
    }
    auto col_index = [&](std::initializer_list<const char*> names) {
        for (const char* n : names)
            for (size_t i = 0; i < cols.size(); ++i)
                if (cols[i] == n) return int(i);
        return -1;
    };
    const int di = col_index({"d_tokens", "D"});
    const int vi = col_index({"vocab", "V"});
    const int yi = col_index({"one_minus_r2"});
    const int ri = col_index({"best_r2", "best_spatial_r2"});
    check(di >= 0 && vi >= 0 && (yi >= 0 || ri >= 0),
          "csv needs d_tokens, vocab and one_minus_r2 (or best_r2) columns");

    std::vector<ScalingRecord> recs;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> vals;
        while (std::getline(ss, cell, ',')) vals.push_back(cell);
        ScalingRecord r;
        r.d_tokens = std::stod(vals[size_t(di)]);
        r.vocab = std::stod(vals[size_t(vi)]);
        r.one_minus_r2 = yi >= 0 ? std::stod(vals[size_t(yi)]) : 1.0 - std::stod(vals[size_t(ri)]);
        if (r.one_minus_r2 > 0 && r.one_minus_r2 <= 1) recs.push_back(r);
    }
    const ScalingFit fit = fit_scaling_law(recs);
    std::ofstream of(out);
    of << fit.to_json().dump(2) << "\n";
    std::printf("A=%.4g alpha_D=%.4g alpha_V=%.4g r2_fit=%.4g (%zu records) -> %s\n", fit.a,
                fit.alpha_d, fit.alpha_v, fit.r2_fit, recs.size(), out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"trajectory-prediction lab: datasets, transformers, probes, sweeps"};
    app.require_subcommand(1);

    // gen-data
    std::string gd_kind = "sine", gd_out, gd_format = "bin";
    int64_t gd_traj = 64;
    uint64_t gd_seed = 0;
    auto* gd = app.add_subcommand("gen-data", "generate a trajectory dataset");
    gd->add_option("--kind", gd_kind, "sine|kepler")->check(CLI::IsMember({"sine", "kepler"}));
    gd->add_option("--traj", gd_traj, "number of trajectories")->required();
    gd->add_option("--seed", gd_seed, "rng seed");
    gd->add_option("--out", gd_out, "output path")->required();
    gd->add_option("--format", gd_format, "bin|csv")->check(CLI::IsMember({"bin", "csv"}));

    // train
    std::string tr_data, tr_head = "cls", tr_out;
    int tr_vocab = 64, tr_ctx = 100, tr_layers = 2, tr_heads = 1, tr_width = 32,
        tr_batch = 64;
    double tr_noise = 0.0, tr_test_fraction = 0.1;
    int64_t tr_steps = 20000, tr_interval = 500;
    uint64_t tr_seed = 0;
    bool tr_save_intermediate = false;
    auto* tr = app.add_subcommand("train", "train a model on a dataset");
    tr->add_option("--data", tr_data, "dataset file from gen-data")->required();
    tr->add_option("--head", tr_head, "cls|reg")->check(CLI::IsMember({"cls", "reg"}));
    tr->add_option("--vocab", tr_vocab, "vocabulary size (classification)");
    tr->add_option("--noise", tr_noise, "context noise scale sigma (regression)");
    tr->add_option("--ctx", tr_ctx, "context length");
    tr->add_option("--layers", tr_layers, "transformer layers");
    tr->add_option("--heads", tr_heads, "attention heads");
    tr->add_option("--width", tr_width, "embedding dimension N");
    tr->add_option("--steps", tr_steps, "total optimizer steps");
    tr->add_option("--seed", tr_seed, "training seed");
    tr->add_option("--out", tr_out, "output directory")->required();
    tr->add_option("--batch", tr_batch, "windows per step");
    tr->add_option("--interval", tr_interval, "probe/checkpoint interval");
    tr->add_flag("--save-intermediate", tr_save_intermediate, "keep every interval checkpoint");
    tr->add_option("--test-fraction", tr_test_fraction, "held-out trajectory fraction");

    // rollout
    std::string ro_ckpt, ro_data, ro_out;
    int ro_condition = 50, ro_horizon = 50;
    int64_t ro_trajs = 0;
    auto* ro = app.add_subcommand("rollout", "autoregressive continuation vs ground truth");
    ro->add_option("--ckpt", ro_ckpt, "checkpoint file")->required();
    ro->add_option("--data", ro_data, "dataset file")->required();
    ro->add_option("--condition", ro_condition, "conditioning states");
    ro->add_option("--horizon", ro_horizon, "generated states");
    ro->add_option("--out", ro_out, "output csv")->required();
    ro->add_option("--trajs", ro_trajs, "cap on trajectories (0 = all)");

    // probe
    std::string pr_ckpt, pr_data, pr_targets = "all", pr_out;
    int64_t pr_max_rows = 20000;
    bool pr_intercept = true;
    auto* pr = app.add_subcommand("probe", "linear probes over internal activations");
    pr->add_option("--ckpt", pr_ckpt, "checkpoint file")->required();
    pr->add_option("--data", pr_data, "held-out dataset file");
    pr->add_option("--targets", pr_targets, "spatial|newton|kepler|all")
        ->check(CLI::IsMember({"spatial", "newton", "kepler", "all"}));
    pr->add_option("--out", pr_out, "output csv")->required();
    pr->add_option("--max-rows", pr_max_rows, "probe sample cap");
    pr->add_option("--probe-intercept", pr_intercept, "include an intercept in probe fits");

    // sweep
    std::string sw_spec, sw_out;
    int sw_jobs = 1;
    auto* sw = app.add_subcommand("sweep", "run an experiment grid from a json spec");
    sw->add_option("--spec", sw_spec, "sweep spec json")->required();
    sw->add_option("--jobs", sw_jobs, "parallel cells (LAB_THREADS caps this)");
    sw->add_option("--out", sw_out, "work directory")->required();

    // fit-scaling
    std::string fs_in, fs_out;
    auto* fsc = app.add_subcommand("fit-scaling", "power-law fit of 1-R^2 against D and V");
    fsc->add_option("--in", fs_in, "csv with d_tokens, vocab, one_minus_r2")->required();
    fsc->add_option("--out", fs_out, "output json")->required();

    // report
    std::string rp_in, rp_out;
    auto* rp = app.add_subcommand("report", "emit per-figure plot csvs from sweep results");
    rp->add_option("--in", rp_in, "sweep work directory")->required();
    rp->add_option("--out", rp_out, "report output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gd->parsed())
            return cmd_gen_data(gd_kind, gd_traj, gd_seed, gd_out, gd_format);
        if (tr->parsed())
            return cmd_train(tr_data, tr_head, tr_vocab, tr_noise, tr_ctx, tr_layers, tr_heads,
                             tr_width, tr_steps, tr_seed, tr_out, tr_batch, tr_interval,
                             tr_save_intermediate, tr_test_fraction);
        if (ro->parsed())
            return cmd_rollout(ro_ckpt, ro_data, ro_condition, ro_horizon, ro_out, ro_trajs);
        if (pr->parsed())
            return cmd_probe(pr_ckpt, pr_data, pr_targets, pr_out, pr_max_rows,
                             pr_intercept);
        if (sw->parsed()) return cmd_sweep(sw_spec, sw_jobs, sw_out);
        if (fsc->parsed()) return cmd_fit_scaling(fs_in, fs_out);
        if (rp->parsed()) {
            write_report(rp_in, rp_out);
            std::printf("report written to %s\n", rp_out.c_str());
            return 0;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
