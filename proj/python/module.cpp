// Python bindings for the core operations: dataset generation, tokenization,
// training, rollout evaluation and linear probing.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "lab/checkpoint.hpp"
#include "lab/codec.hpp"
#include "lab/eval.hpp"
#include "lab/experiments.hpp"
#include "lab/probe.hpp"
#include "lab/train.hpp"

namespace py = pybind11;
using namespace lab;

namespace {

py::dict trajectory_dict(const Trajectory& t) {
    py::dict d;
    d["dim"] = t.dim;
    d["positions"] = t.pos;
    if (!t.vel.empty()) d["velocities"] = t.vel;
    if (t.targets) {
        py::dict k;
        k["a"] = t.targets->a;
        k["b"] = t.targets->b;
        k["c"] = t.targets->c;
        k["e"] = t.targets->e;
        k["lrl"] = py::make_tuple(t.targets->lrl_x, t.targets->lrl_y);
        d["ellipse"] = k;
    }
    return d;
}

py::dict train_on_file(const std::string& data_path, const std::string& head, int vocab,
                       double noise, int ctx, int width, int64_t steps, uint64_t seed,
                       int batch, const std::string& out_dir) {
    const Dataset ds = load_dataset(data_path);
    ModelConfig mcfg;
    mcfg.d_model = width;
    mcfg.ctx = ctx;
    mcfg.head = head == "cls" ? HeadKind::kClassification : HeadKind::kRegression;
    mcfg.vocab = head == "cls" ? vocab : 0;
    mcfg.input_dim = ds.dim();
    mcfg.codec_half_range = default_half_range(ds.kind);
    TrainConfig tcfg;
    tcfg.steps = steps;
    tcfg.schedule = TrainConfig::default_schedule(steps);
    tcfg.batch = batch;
    tcfg.sigma = head == "reg" ? noise : 0.0;
    tcfg.seed = seed;
    tcfg.interval = std::max<int64_t>(1, steps / 4);
    tcfg.out_dir = out_dir;
    const TrainResult res = train(ds, mcfg, tcfg);
    py::dict out;
    out["final_train_loss"] = res.log.records.back().train_loss;
    out["final_test_loss"] = res.log.records.back().test_loss;
    out["best_spatial_r2"] = res.log.best_spatial_r2();
    out["records"] = res.log.records.size();
    return out;
}

py::dict rollout_file(const std::string& ckpt_path, const std::string& data_path,
                      int condition, int horizon, int64_t max_trajs) {
    Checkpoint ck = load_checkpoint(ckpt_path);
    const Dataset ds = load_dataset(data_path);
    const int64_t count = max_trajs > 0 ? std::min<int64_t>(max_trajs, ds.d_traj) : ds.d_traj;
    double sum = 0;
    int64_t cnt = 0;
    for (int64_t i = 0; i < count; ++i) {
        const RolloutResult rr = rollout_model(ck.model, ds.trajs[size_t(i)], condition, horizon);
        if (!std::isnan(rr.mde)) {
            sum += rr.mde;
            ++cnt;
        }
    }
    py::dict out;
    out["trajectories"] = count;
    out["mean_distance_error"] = cnt ? sum / double(cnt) : 0.0;
    return out;
}

py::dict probe_file(const std::string& ckpt_path, const std::string& data_path,
                    const std::string& targets, int64_t max_rows) {
    Checkpoint ck = load_checkpoint(ckpt_path);
    const Dataset ds = load_dataset(data_path);
    const TargetSet set = targets == "newton"   ? TargetSet::kNewton
                          : targets == "kepler" ? TargetSet::kKepler
                                                : TargetSet::kAll;
    ProbeOptions opt;
    opt.max_rows = max_rows;
    const ProbeReport rep = probe_sweep(ck.model, ds, set, opt);
    py::dict out;
    for (const auto& b : rep.best) out[py::str(b.target)] = b.r2;
    return out;
}

}  // namespace

PYBIND11_MODULE(lab_core, m) {
    m.doc() = "Trajectory-prediction lab: data generation, training, rollouts, probing.";

    py::class_<TokenCodec>(m, "TokenCodec")
        .def(py::init<double, int32_t>(), py::arg("half_range"), py::arg("vocab"))
        .def("encode", &TokenCodec::encode)
        .def("decode", &TokenCodec::decode)
        .def_readonly("half_range", &TokenCodec::half_range)
        .def_readonly("vocab", &TokenCodec::vocab);

    m.def(
        "force_at",
        [](double x, double y) {
            double fx, fy, mag;
            force_at({x, y}, fx, fy, mag);
            return py::make_tuple(fx, fy, mag);
        },
        "Inverse-square force (F_x, F_y, |F|) at a position");

    m.def(
        "sine_trajectory",
        [](double amplitude, double omega, double phase) {
            return trajectory_dict(gen_sine_trajectory({amplitude, omega, phase}));
        },
        py::arg("amplitude"), py::arg("omega"), py::arg("phase"));

    m.def(
        "kepler_trajectory",
        [](double eccentricity, double semi_major, double theta) {
            return trajectory_dict(gen_kepler_trajectory({eccentricity, semi_major, theta}));
        },
        py::arg("eccentricity"), py::arg("semi_major"), py::arg("theta"));

    m.def(
        "generate_dataset",
        [](const std::string& kind, int64_t d_traj, uint64_t seed, const std::string& path) {
            const Dataset ds = build_dataset(kind, d_traj, seed);
            save_dataset(path, ds);
            return ds.token_count();
        },
        py::arg("kind"), py::arg("d_traj"), py::arg("seed"), py::arg("path"),
        "Generates a dataset file; returns the token count (100 per trajectory)");

    m.def(
        "fit_linear_probe",
        [](const std::vector<std::vector<double>>& x, const std::vector<double>& y) {
            check(!x.empty(), "empty design matrix");
            const int64_t n = int64_t(x.size()), p = int64_t(x[0].size());
            std::vector<double> flat;
            flat.reserve(size_t(n * p));
            for (const auto& row : x) {
                check(int64_t(row.size()) == p, "ragged design matrix");
                flat.insert(flat.end(), row.begin(), row.end());
            }
            const ProbeFit fit = fit_linear_probe(flat.data(), n, p, y.data());
            py::dict out;
            out["r2"] = fit.r2;
            out["intercept"] = fit.intercept;
            out["direction"] = fit.direction;
            return out;
        },
        py::arg("x"), py::arg("y"), "Least-squares probe with R^2");

    m.def("train", &train_on_file, py::arg("data"), py::arg("head"), py::arg("vocab") = 64,
          py::arg("noise") = 0.0, py::arg("ctx") = 100, py::arg("width") = 32,
          py::arg("steps") = 2000, py::arg("seed") = 0, py::arg("batch") = 16,
          py::arg("out_dir") = std::string(), "Train on a dataset file");

    m.def("rollout", &rollout_file, py::arg("ckpt"), py::arg("data"), py::arg("condition") = 50,
          py::arg("horizon") = 50, py::arg("max_trajs") = 0);

    m.def("probe", &probe_file, py::arg("ckpt"), py::arg("data"),
          py::arg("targets") = "all", py::arg("max_rows") = 20000,
          "Best-over-sites probe R^2 per target");

    m.def(
        "fit_scaling_law",
        [](const std::vector<std::vector<double>>& records) {
            std::vector<ScalingRecord> recs;
            for (const auto& r : records) {
                check(r.size() == 3, "records are (d_tokens, vocab, one_minus_r2) triples");
                recs.push_back({r[0], r[1], r[2]});
            }
            const ScalingFit fit = fit_scaling_law(recs);
            py::dict out;
            out["A"] = fit.a;
            out["alpha_D"] = fit.alpha_d;
            out["alpha_V"] = fit.alpha_v;
            out["r2_fit"] = fit.r2_fit;
            return out;
        },
        py::arg("records"));
}
