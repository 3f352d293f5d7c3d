#include "lab/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <thread>

#include "lab/checkpoint.hpp"
#include "lab/eval.hpp"
#include "lab/probe.hpp"
#include "lab/sha256.hpp"

namespace fs = std::filesystem;

namespace lab {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double median(std::vector<double> v) {
    if (v.empty()) return kNaN;
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}
}  // namespace

// ---------------------------------------------------------------------------
// Scaling-law fit
// ---------------------------------------------------------------------------

nlohmann::json ScalingFit::to_json() const {
    return {{"A", a},
            {"alpha_D", alpha_d},
            {"alpha_V", alpha_v},
            {"r2_fit", r2_fit},
            {"d_identifiable", d_identifiable},
            {"v_identifiable", v_identifiable}};
}

ScalingFit fit_scaling_law(const std::vector<ScalingRecord>& records) {
    check(records.size() >= 3, "scaling fit needs at least 3 records");
    for (const auto& r : records) {
        check(r.one_minus_r2 > 0 && r.one_minus_r2 <= 1, "1-R^2 must lie in (0, 1]");
        check(r.d_tokens > 0 && r.vocab > 0, "D and V must be positive");
    }
    const size_t n = records.size();
    std::vector<double> ld(n), lv(n), y(n);
    for (size_t i = 0; i < n; ++i) {
        ld[i] = std::log(records[i].d_tokens);
        lv[i] = std::log(records[i].vocab);
        y[i] = std::log(records[i].one_minus_r2);
    }
    auto variance = [&](const std::vector<double>& v) {
        double mean = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
        double acc = 0;
        for (const double x : v) acc += (x - mean) * (x - mean);
        return acc / double(v.size());
    };
    ScalingFit fit;
    fit.d_identifiable = variance(ld) > 1e-18;
    fit.v_identifiable = variance(lv) > 1e-18;

    // columns: intercept, log D (if identifiable), log V (if identifiable)
    std::vector<const std::vector<double>*> cols;
    cols.push_back(nullptr);  // intercept
    if (fit.d_identifiable) cols.push_back(&ld);
    if (fit.v_identifiable) cols.push_back(&lv);
    const size_t p = cols.size();
    std::vector<double> g(p * p, 0.0), b(p, 0.0);
    auto col_at = [&](size_t j, size_t i) { return cols[j] ? (*cols[j])[i] : 1.0; };
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < p; ++j) {
            b[j] += col_at(j, i) * y[i];
            for (size_t k2 = j; k2 < p; ++k2) {
                g[j * p + k2] += col_at(j, i) * col_at(k2, i);
                if (k2 != j) g[k2 * p + j] = g[j * p + k2];
            }
        }
    // gaussian elimination with partial pivoting on the tiny system
    std::vector<double> beta = b;
    {
        std::vector<double> m = g;
        for (size_t c = 0; c < p; ++c) {
            size_t piv = c;
            for (size_t r = c + 1; r < p; ++r)
                if (std::abs(m[r * p + c]) > std::abs(m[piv * p + c])) piv = r;
            for (size_t j = 0; j < p; ++j) std::swap(m[c * p + j], m[piv * p + j]);
            std::swap(beta[c], beta[piv]);
            check(std::abs(m[c * p + c]) > 1e-300, "degenerate scaling design");
            for (size_t r = c + 1; r < p; ++r) {
                const double f = m[r * p + c] / m[c * p + c];
                for (size_t j = c; j < p; ++j) m[r * p + j] -= f * m[c * p + j];
                beta[r] -= f * beta[c];
            }
        }
        for (size_t c = p; c-- > 0;) {
            for (size_t r = c + 1; r < p; ++r) beta[c] -= m[c * p + r] * beta[r];
            beta[c] /= m[c * p + c];
        }
    }
    size_t idx = 0;
    fit.a = std::exp(beta[idx++]);
    fit.alpha_d = fit.d_identifiable ? -beta[idx++] : kNaN;
    fit.alpha_v = fit.v_identifiable ? beta[idx++] : kNaN;

    double ss_res = 0, ss_tot = 0;
    const double ymean = std::accumulate(y.begin(), y.end(), 0.0) / double(n);
    for (size_t i = 0; i < n; ++i) {
        double pred = std::log(fit.a);
        if (fit.d_identifiable) pred -= fit.alpha_d * ld[i];
        if (fit.v_identifiable) pred += fit.alpha_v * lv[i];
        ss_res += (y[i] - pred) * (y[i] - pred);
        ss_tot += (y[i] - ymean) * (y[i] - ymean);
    }
    fit.r2_fit = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
    return fit;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    check(a.size() == b.size() && a.size() >= 2, "spearman needs matched series");
    auto ranks = [](const std::vector<double>& v) {
        const size_t n = v.size();
        std::vector<size_t> idx(n);
        std::iota(idx.begin(), idx.end(), size_t(0));
        std::sort(idx.begin(), idx.end(), [&](size_t i, size_t j) { return v[i] < v[j]; });
        std::vector<double> r(n);
        size_t i = 0;
        while (i < n) {
            size_t j = i;
            while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
            const double avg = 0.5 * (double(i) + double(j));
            for (size_t k2 = i; k2 <= j; ++k2) r[idx[k2]] = avg;
            i = j + 1;
        }
        return r;
    };
    const auto ra = ranks(a), rb = ranks(b);
    const size_t n = a.size();
    double ma = 0, mb = 0;
    for (size_t i = 0; i < n; ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= double(n);
    mb /= double(n);
    double num = 0, va = 0, vb = 0;
    for (size_t i = 0; i < n; ++i) {
        num += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (va <= 0 || vb <= 0) return 0.0;
    return num / std::sqrt(va * vb);
}

// ---------------------------------------------------------------------------
// Cells
// ---------------------------------------------------------------------------

nlohmann::json CellConfig::to_json() const {
    return {{"kind", kind},       {"head", head},
            {"d_traj", d_traj},   {"vocab", vocab},
            {"sigma", sigma},     {"width", width},
            {"ctx", ctx},         {"n_layer", n_layer},
            {"n_head", n_head},   {"steps", steps},
            {"batch", batch},     {"interval", interval},
            {"data_seed", data_seed}, {"seed", seed},
            {"probe", probe},     {"eval_trajs", eval_trajs},
            {"probe_rows", probe_rows}};
}

CellConfig CellConfig::from_json(const nlohmann::json& j) {
    CellConfig c;
    c.kind = j.at("kind").get<std::string>();
    c.head = j.at("head").get<std::string>();
    c.d_traj = j.at("d_traj").get<int64_t>();
    c.vocab = j.value("vocab", 64);
    c.sigma = j.value("sigma", 0.0);
    c.width = j.value("width", 32);
    c.ctx = j.value("ctx", 100);
    c.n_layer = j.value("n_layer", 2);
    c.n_head = j.value("n_head", 1);
    c.steps = j.value("steps", int64_t(20000));
    c.batch = j.value("batch", 64);
    c.interval = j.value("interval", int64_t(500));
    c.data_seed = j.value("data_seed", uint64_t(1234));
    c.seed = j.value("seed", uint64_t(0));
    c.probe = j.value("probe", false);
    c.eval_trajs = j.value("eval_trajs", 256);
    c.probe_rows = j.value("probe_rows", int64_t(20000));
    return c;
}

std::string CellConfig::content_hash() const { return sha256_hex(to_json().dump()); }

nlohmann::json CellResult::to_json() const {
    nlohmann::json j;
    j["config"] = cfg.to_json();
    j["hash"] = hash;
    j["failed"] = failed;
    j["error"] = error;
    j["best_spatial_r2"] = best_spatial_r2;
    j["final_train_loss"] = final_train_loss;
    j["final_test_loss"] = final_test_loss;
    j["eval_mde"] = eval_mde;
    j["newton_score"] = newton_score;
    j["kepler_score"] = kepler_score;
    j["probe_best"] = probe_best;
    j["horizon_err"] = horizon_err;
    return j;
}

CellResult CellResult::from_json(const nlohmann::json& j) {
    CellResult r;
    r.cfg = CellConfig::from_json(j.at("config"));
    r.hash = j.at("hash").get<std::string>();
    r.failed = j.value("failed", false);
    r.error = j.value("error", std::string());
    auto num = [&](const char* key) {
        const auto& v = j.at(key);
        return v.is_null() ? kNaN : v.get<double>();
    };
    r.best_spatial_r2 = num("best_spatial_r2");
    r.final_train_loss = num("final_train_loss");
    r.final_test_loss = num("final_test_loss");
    r.eval_mde = num("eval_mde");
    r.newton_score = num("newton_score");
    r.kepler_score = num("kepler_score");
    r.probe_best = j.value("probe_best", nlohmann::json::object());
    if (j.contains("horizon_err") && j.at("horizon_err").is_array())
        for (const auto& v : j.at("horizon_err"))
            r.horizon_err.push_back(v.is_null() ? kNaN : v.get<double>());
    return r;
}

SweepSpec SweepSpec::from_json(const nlohmann::json& j) {
    SweepSpec spec;
    spec.name = j.value("name", std::string("sweep"));
    if (j.contains("cells")) {
        for (const auto& c : j.at("cells")) spec.cells.push_back(CellConfig::from_json(c));
        return spec;
    }
    CellConfig base;
    base.kind = j.at("kind").get<std::string>();
    base.head = j.at("head").get<std::string>();
    base.steps = j.value("steps", int64_t(20000));
    base.batch = j.value("batch", 64);
    base.interval = j.value("interval", int64_t(500));
    base.data_seed = j.value("data_seed", uint64_t(1234));
    base.n_layer = j.value("n_layer", 2);
    base.n_head = j.value("n_head", 1);
    base.probe = j.value("probe", false);
    base.eval_trajs = j.value("eval_trajs", 256);
    base.probe_rows = j.value("probe_rows", int64_t(20000));

    auto list_of = [&](const char* key, nlohmann::json dflt) {
        return j.contains(key) && j.at(key).is_array() ? j.at(key)
                                                       : nlohmann::json::array({dflt});
    };
    const auto d_list = list_of("d_traj", 64);
    const auto v_list = list_of("vocab", 64);
    const auto s_list = list_of("sigma", 0.0);
    const auto w_list = list_of("width", 32);
    const auto c_list = list_of("ctx", 100);
    const int seeds = j.value("seeds", 3);

    for (const auto& d : d_list)
        for (const auto& v : v_list)
            for (const auto& s : s_list)
                for (const auto& w : w_list)
                    for (const auto& c : c_list)
                        for (int seed = 0; seed < seeds; ++seed) {
                            CellConfig cell = base;
                            cell.d_traj = d.get<int64_t>();
                            cell.vocab = v.get<int>();
                            cell.sigma = s.get<double>();
                            cell.width = w.get<int>();
                            cell.ctx = c.get<int>();
                            cell.seed = uint64_t(seed);
                            spec.cells.push_back(cell);
                        }
    return spec;
}

namespace {

void atomic_write(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        check(out.good(), "cannot open " + tmp);
        out.write(content.data(), std::streamsize(content.size()));
    }
    fs::rename(tmp, path);
}

}  // namespace

CellResult run_cell(const CellConfig& cfg, const std::string& work_dir, bool reuse) {
    CellResult res;
    res.cfg = cfg;
    res.hash = cfg.content_hash();
    const fs::path results_dir = fs::path(work_dir) / "results";
    const fs::path cell_dir = fs::path(work_dir) / "cells" / res.hash;
    fs::create_directories(results_dir);
    const fs::path result_path = results_dir / (res.hash + ".json");
    if (reuse && fs::exists(result_path)) {
        std::ifstream in(result_path);
        nlohmann::json j;
        in >> j;
        return CellResult::from_json(j);
    }

    try {
        const Dataset ds = build_dataset(cfg.kind, cfg.d_traj, cfg.data_seed);

        ModelConfig mcfg;
        mcfg.n_layer = cfg.n_layer;
        mcfg.n_head = cfg.n_head;
        mcfg.d_model = cfg.width;
        mcfg.ctx = cfg.ctx;
        mcfg.head = cfg.head == "cls" ? HeadKind::kClassification : HeadKind::kRegression;
        mcfg.vocab = cfg.head == "cls" ? cfg.vocab : 0;
        mcfg.input_dim = ds.dim();
        mcfg.codec_half_range = default_half_range(cfg.kind);

        TrainConfig tcfg;
        tcfg.steps = cfg.steps;
        tcfg.schedule = TrainConfig::default_schedule(cfg.steps);
        tcfg.batch = cfg.batch;
        tcfg.sigma = cfg.head == "reg" ? cfg.sigma : 0.0;
        tcfg.seed = Rng::mix(cfg.seed + 1, 0x7EA1);
        tcfg.interval = cfg.interval;
        tcfg.save_intermediate = false;
        tcfg.out_dir = (cell_dir / "train").string();

        const TrainResult tr = train(ds, mcfg, tcfg);
        res.best_spatial_r2 = tr.log.best_spatial_r2();
        if (!tr.log.records.empty()) {
            res.final_train_loss = tr.log.records.back().train_loss;
            res.final_test_loss = tr.log.records.back().test_loss;
        }

        // held-out evaluation: 50-step rollouts after 50 conditioning states
        Model<float> model = tr.model;
        if (cfg.eval_trajs > 0 && ds.steps >= 100) {
            const Dataset eval_ds =
                build_dataset(cfg.kind, cfg.eval_trajs, Rng::mix(cfg.data_seed, 0xEA17));
            const int horizon = 50;
            std::vector<double> sum(size_t(horizon), 0.0);
            std::vector<int64_t> cnt(size_t(horizon), 0);
            double mde_sum = 0;
            int64_t mde_cnt = 0;
            for (const auto& t : eval_ds.trajs) {
                const RolloutResult rr = rollout_model(model, t, 50, horizon);
                if (!std::isnan(rr.mde)) {
                    mde_sum += rr.mde;
                    ++mde_cnt;
                }
                for (size_t h = 0; h < rr.step_err.size(); ++h) {
                    sum[h] += rr.step_err[h];
                    ++cnt[h];
                }
            }
            if (mde_cnt > 0) res.eval_mde = mde_sum / double(mde_cnt);
            res.horizon_err.resize(size_t(horizon), kNaN);
            for (int h = 0; h < horizon; ++h)
                if (cnt[size_t(h)] > 0)
                    res.horizon_err[size_t(h)] = sum[size_t(h)] / double(cnt[size_t(h)]);
        }

        if (cfg.probe && cfg.kind == "kepler") {
            const int w = std::min(cfg.ctx, ds.steps - 1);
            const int64_t wpt = ds.steps - w + 1;
            const int64_t probe_trajs =
                std::max<int64_t>(512, (cfg.probe_rows + wpt - 1) / wpt);
            const Dataset probe_ds =
                build_dataset("kepler", probe_trajs, Rng::mix(cfg.data_seed, 0xBEEF));
            ProbeOptions popt;
            popt.max_rows = cfg.probe_rows;
            const ProbeReport rep = probe_sweep(model, probe_ds, TargetSet::kAll, popt);
            rep.write_csv((cell_dir / "probe.csv").string());
            for (const auto& b : rep.best) res.probe_best[b.target] = b.r2;
            auto score = [&](const std::vector<std::string>& targets) {
                double acc = 0;
                for (const auto& t : targets) acc += rep.best_r2(t);
                return acc / double(targets.size());
            };
            res.newton_score = score({"F", "F_x", "F_y"});
            res.kepler_score = score({"a", "b", "A_x", "A_y"});
        }
    } catch (const std::exception& e) {
        res.failed = true;
        res.error = e.what();
    }
    atomic_write(result_path.string(), res.to_json().dump(2));
    return res;
}

int env_thread_cap(int requested) {
    int cap = requested < 1 ? 1 : requested;
    if (const char* env = std::getenv("LAB_THREADS")) {
        const int limit = std::atoi(env);
        if (limit >= 1) cap = std::min(cap, limit);
    }
    return cap;
}

std::vector<CellResult> run_sweep(const SweepSpec& spec, const SweepOptions& opt) {
    fs::create_directories(opt.work_dir);
    const int jobs = env_thread_cap(opt.jobs);
    std::vector<CellResult> results(spec.cells.size());
    std::atomic<size_t> next{0};
    std::atomic<size_t> done{0};
    std::mutex print_mu;

    auto worker = [&]() {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= spec.cells.size()) return;
            results[i] = run_cell(spec.cells[i], opt.work_dir, opt.reuse);
            const size_t d = done.fetch_add(1) + 1;
            if (!opt.quiet) {
                std::lock_guard<std::mutex> lock(print_mu);
                const auto& r = results[i];
                std::printf("[%zu/%zu] %s %s/%s d=%lld V=%d s=%.3g N=%d c=%d seed=%llu %s\n", d,
                            spec.cells.size(), r.hash.substr(0, 12).c_str(), r.cfg.kind.c_str(),
                            r.cfg.head.c_str(), static_cast<long long>(r.cfg.d_traj),
                            r.cfg.vocab, r.cfg.sigma, r.cfg.width, r.cfg.ctx,
                            static_cast<unsigned long long>(r.cfg.seed),
                            r.failed ? ("FAILED: " + r.error).c_str() : "ok");
                std::fflush(stdout);
            }
        }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    write_results_csv((fs::path(opt.work_dir) / "results.csv").string(), results);
    return results;
}

void write_results_csv(const std::string& path, const std::vector<CellResult>& results) {
    std::ofstream out(path);
    check(out.good(), "cannot open " + path);
    out << "hash,kind,head,d_traj,d_tokens,vocab,sigma,width,ctx,steps,batch,seed,"
           "best_spatial_r2,final_train_loss,final_test_loss,eval_mde,newton_score,"
           "kepler_score,failed\n";
    char line[512];
    for (const auto& r : results) {
        snprintf(line, sizeof(line),
                 "%s,%s,%s,%lld,%lld,%d,%.10g,%d,%d,%lld,%d,%llu,%.10g,%.10g,%.10g,%.10g,%.10g,"
                 "%.10g,%d\n",
                 r.hash.c_str(), r.cfg.kind.c_str(), r.cfg.head.c_str(),
                 static_cast<long long>(r.cfg.d_traj),
                 static_cast<long long>(r.cfg.d_traj * 100), r.cfg.vocab, r.cfg.sigma,
                 r.cfg.width, r.cfg.ctx, static_cast<long long>(r.cfg.steps), r.cfg.batch,
                 static_cast<unsigned long long>(r.cfg.seed), r.best_spatial_r2,
                 r.final_train_loss, r.final_test_loss, r.eval_mde, r.newton_score,
                 r.kepler_score, r.failed ? 1 : 0);
        out << line;
    }
}

std::vector<CellResult> load_results(const std::string& work_dir) {
    std::vector<CellResult> out;
    const fs::path dir = fs::path(work_dir) / "results";
    if (!fs::exists(dir)) return out;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        std::ifstream in(f);
        nlohmann::json j;
        in >> j;
        out.push_back(CellResult::from_json(j));
    }
    return out;
}

std::vector<CompareRow> compare_regression_classification(
    const std::vector<CellResult>& results) {
    // the comparison is defined over full-context models; short-context cells
    // from phase studies would otherwise pollute the per-D aggregation
    std::vector<double> d_values;
    for (const auto& r : results) {
        if (r.failed || r.cfg.kind != "kepler" || r.cfg.ctx != 100) continue;
        const double d = double(r.cfg.d_traj * 100);
        if (std::find(d_values.begin(), d_values.end(), d) == d_values.end())
            d_values.push_back(d);
    }
    std::sort(d_values.begin(), d_values.end());
    std::vector<CompareRow> rows;
    for (const double d : d_values) {
        CompareRow row;
        row.d_tokens = d;
        row.best_reg_mde = kNaN;
        row.sigma0_mde = kNaN;
        row.best_cls_mde = kNaN;
        // median over seeds within identical configs first
        auto gather = [&](const std::string& head, auto key) {
            std::vector<std::pair<double, double>> out_pairs;  // (key, median mde)
            std::vector<double> keys;
            for (const auto& r : results) {
                if (r.failed || r.cfg.kind != "kepler" || r.cfg.head != head) continue;
                if (r.cfg.ctx != 100) continue;
                if (double(r.cfg.d_traj * 100) != d || std::isnan(r.eval_mde)) continue;
                const double k2 = key(r.cfg);
                if (std::find(keys.begin(), keys.end(), k2) == keys.end()) keys.push_back(k2);
            }
            for (const double k2 : keys) {
                std::vector<double> vals;
                for (const auto& r : results) {
                    if (r.failed || r.cfg.kind != "kepler" || r.cfg.head != head) continue;
                    if (r.cfg.ctx != 100) continue;
                    if (double(r.cfg.d_traj * 100) != d || std::isnan(r.eval_mde)) continue;
                    if (key(r.cfg) == k2) vals.push_back(r.eval_mde);
                }
                out_pairs.emplace_back(k2, median(vals));
            }
            return out_pairs;
        };
        for (const auto& [sigma, mde] : gather("reg", [](const CellConfig& c) { return c.sigma; })) {
            if (std::isnan(row.best_reg_mde) || mde < row.best_reg_mde) {
                row.best_reg_mde = mde;
                row.best_sigma = sigma;
            }
            if (sigma == 0.0) row.sigma0_mde = mde;
        }
        for (const auto& [v, mde] :
             gather("cls", [](const CellConfig& c) { return double(c.vocab); })) {
            if (std::isnan(row.best_cls_mde) || mde < row.best_cls_mde) {
                row.best_cls_mde = mde;
                row.best_vocab = int(v);
            }
        }
        rows.push_back(row);
    }
    return rows;
}

std::vector<PhaseRow> phase_transition_summary(const std::vector<CellResult>& results) {
    std::vector<int> ctxs;
    for (const auto& r : results) {
        if (r.failed || r.cfg.kind != "kepler" || r.cfg.head != "reg" || !r.cfg.probe) continue;
        if (std::find(ctxs.begin(), ctxs.end(), r.cfg.ctx) == ctxs.end())
            ctxs.push_back(r.cfg.ctx);
    }
    std::sort(ctxs.begin(), ctxs.end());
    std::vector<PhaseRow> rows;
    for (const int c : ctxs) {
        std::vector<double> ns, ks, ms;
        for (const auto& r : results) {
            if (r.failed || r.cfg.kind != "kepler" || r.cfg.head != "reg" || !r.cfg.probe)
                continue;
            if (r.cfg.ctx != c) continue;
            if (!std::isnan(r.newton_score)) ns.push_back(r.newton_score);
            if (!std::isnan(r.kepler_score)) ks.push_back(r.kepler_score);
            if (!std::isnan(r.eval_mde)) ms.push_back(r.eval_mde);
        }
        rows.push_back({c, median(ns), median(ks), median(ms)});
    }
    return rows;
}

void write_report(const std::string& in_dir, const std::string& out_dir) {
    const auto results = load_results(in_dir);
    check(!results.empty(), "no results under " + in_dir);
    fs::create_directories(out_dir);
    char line[512];

    // sine classification: spatial-map quality grid
    {
        std::vector<CellResult> cells;
        for (const auto& r : results)
            if (!r.failed && r.cfg.kind == "sine" && r.cfg.head == "cls" &&
                !std::isnan(r.best_spatial_r2))
                cells.push_back(r);
        if (!cells.empty()) {
            std::ofstream out(fs::path(out_dir) / "scaling_grid.csv");
            out << "d_tokens,vocab,width,seed,best_r2,one_minus_r2\n";
            for (const auto& r : cells) {
                snprintf(line, sizeof(line), "%lld,%d,%d,%llu,%.10g,%.10g\n",
                         static_cast<long long>(r.cfg.d_traj * 100), r.cfg.vocab, r.cfg.width,
                         static_cast<unsigned long long>(r.cfg.seed), r.best_spatial_r2,
                         1.0 - r.best_spatial_r2);
                out << line;
            }
            // fit over per-(D, V) medians, only where multiple D and V exist
            std::vector<ScalingRecord> recs;
            std::vector<std::pair<int64_t, int>> keys;
            for (const auto& r : cells) {
                const std::pair<int64_t, int> key{r.cfg.d_traj, r.cfg.vocab};
                if (std::find(keys.begin(), keys.end(), key) != keys.end()) continue;
                keys.push_back(key);
                std::vector<double> vals;
                for (const auto& q : cells)
                    if (q.cfg.d_traj == key.first && q.cfg.vocab == key.second)
                        vals.push_back(1.0 - q.best_spatial_r2);
                const double m = median(vals);
                if (m > 0 && m <= 1)
                    recs.push_back({double(key.first * 100), double(key.second), m});
            }
            if (recs.size() >= 3) {
                const ScalingFit fit = fit_scaling_law(recs);
                std::ofstream jf(fs::path(out_dir) / "scaling_fit.json");
                jf << fit.to_json().dump(2) << "\n";
            }
        }
    }
    // embedding-width sweep
    {
        std::vector<int> widths;
        for (const auto& r : results)
            if (!r.failed && r.cfg.kind == "sine" && r.cfg.head == "cls" &&
                std::find(widths.begin(), widths.end(), r.cfg.width) == widths.end())
                widths.push_back(r.cfg.width);
        if (widths.size() >= 2) {
            std::ofstream out(fs::path(out_dir) / "n_sweep.csv");
            out << "width,d_tokens,vocab,seed,one_minus_r2\n";
            for (const auto& r : results)
                if (!r.failed && r.cfg.kind == "sine" && r.cfg.head == "cls" &&
                    !std::isnan(r.best_spatial_r2)) {
                    snprintf(line, sizeof(line), "%d,%lld,%d,%llu,%.10g\n", r.cfg.width,
                             static_cast<long long>(r.cfg.d_traj * 100), r.cfg.vocab,
                             static_cast<unsigned long long>(r.cfg.seed),
                             1.0 - r.best_spatial_r2);
                    out << line;
                }
        }
    }
    // kepler noise / vocab sweeps
    {
        bool any_reg = false, any_cls = false;
        for (const auto& r : results) {
            if (r.failed || r.cfg.kind != "kepler" || std::isnan(r.eval_mde)) continue;
            any_reg |= r.cfg.head == "reg";
            any_cls |= r.cfg.head == "cls";
        }
        if (any_reg) {
            std::ofstream out(fs::path(out_dir) / "noise_sweep.csv");
            out << "d_tokens,sigma,ctx,seed,eval_mde\n";
            for (const auto& r : results)
                if (!r.failed && r.cfg.kind == "kepler" && r.cfg.head == "reg" &&
                    !std::isnan(r.eval_mde)) {
                    snprintf(line, sizeof(line), "%lld,%.10g,%d,%llu,%.10g\n",
                             static_cast<long long>(r.cfg.d_traj * 100), r.cfg.sigma, r.cfg.ctx,
                             static_cast<unsigned long long>(r.cfg.seed), r.eval_mde);
                    out << line;
                }
        }
        if (any_cls) {
            std::ofstream out(fs::path(out_dir) / "vocab_sweep.csv");
            out << "d_tokens,vocab,ctx,seed,eval_mde\n";
            for (const auto& r : results)
                if (!r.failed && r.cfg.kind == "kepler" && r.cfg.head == "cls" &&
                    !std::isnan(r.eval_mde)) {
                    snprintf(line, sizeof(line), "%lld,%d,%d,%llu,%.10g\n",
                             static_cast<long long>(r.cfg.d_traj * 100), r.cfg.vocab, r.cfg.ctx,
                             static_cast<unsigned long long>(r.cfg.seed), r.eval_mde);
                    out << line;
                }
        }
        if (any_reg && any_cls) {
            const auto rows = compare_regression_classification(results);
            std::ofstream out(fs::path(out_dir) / "compare.csv");
            out << "d_tokens,best_sigma,best_reg_mde,sigma0_mde,best_vocab,best_cls_mde\n";
            for (const auto& r : rows) {
                snprintf(line, sizeof(line), "%.10g,%.10g,%.10g,%.10g,%d,%.10g\n", r.d_tokens,
                         r.best_sigma, r.best_reg_mde, r.sigma0_mde, r.best_vocab,
                         r.best_cls_mde);
                out << line;
            }
        }
    }
    // phase transition summary + per-horizon rollout errors
    {
        const auto rows = phase_transition_summary(results);
        if (!rows.empty()) {
            std::ofstream out(fs::path(out_dir) / "phase_summary.csv");
            out << "ctx,newton_score,kepler_score,eval_mde\n";
            for (const auto& r : rows) {
                snprintf(line, sizeof(line), "%d,%.10g,%.10g,%.10g\n", r.ctx, r.newton_score,
                         r.kepler_score, r.eval_mde);
                out << line;
            }
        }
        bool any_horizon = false;
        for (const auto& r : results) any_horizon |= !r.horizon_err.empty();
        if (any_horizon) {
            std::ofstream out(fs::path(out_dir) / "horizon.csv");
            out << "kind,head,d_tokens,sigma,vocab,ctx,seed,step,mean_err\n";
            for (const auto& r : results) {
                if (r.failed) continue;
                for (size_t h = 0; h < r.horizon_err.size(); ++h) {
                    snprintf(line, sizeof(line), "%s,%s,%lld,%.10g,%d,%d,%llu,%zu,%.10g\n",
                             r.cfg.kind.c_str(), r.cfg.head.c_str(),
                             static_cast<long long>(r.cfg.d_traj * 100), r.cfg.sigma,
                             r.cfg.vocab, r.cfg.ctx,
                             static_cast<unsigned long long>(r.cfg.seed), h,
                             r.horizon_err[h]);
                    out << line;
                }
            }
        }
    }
}

}  // namespace lab
