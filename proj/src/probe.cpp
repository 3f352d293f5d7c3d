#include "lab/probe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

namespace lab {

namespace {

// Cholesky solve of (A)x = b for symmetric positive definite A (p x p).
bool cholesky_solve(std::vector<double> a, int64_t p, std::vector<double>& b) {
    for (int64_t i = 0; i < p; ++i) {
        for (int64_t j = 0; j <= i; ++j) {
            double s = a[size_t(i * p + j)];
            for (int64_t k = 0; k < j; ++k) s -= a[size_t(i * p + k)] * a[size_t(j * p + k)];
            if (i == j) {
                if (s <= 0) return false;
                a[size_t(i * p + j)] = std::sqrt(s);
            } else {
                a[size_t(i * p + j)] = s / a[size_t(j * p + j)];
            }
        }
    }
    for (int64_t i = 0; i < p; ++i) {
        double s = b[size_t(i)];
        for (int64_t k = 0; k < i; ++k) s -= a[size_t(i * p + k)] * b[size_t(k)];
        b[size_t(i)] = s / a[size_t(i * p + i)];
    }
    for (int64_t i = p - 1; i >= 0; --i) {
        double s = b[size_t(i)];
        for (int64_t k = i + 1; k < p; ++k) s -= a[size_t(k * p + i)] * b[size_t(k)];
        b[size_t(i)] = s / a[size_t(i * p + i)];
    }
    return true;
}

}  // namespace

ProbeAccumulator::ProbeAccumulator(int64_t p, int64_t targets)
    : p_(p),
      t_(targets),
      sxx_(size_t(p * p), 0.0),
      sx_(size_t(p), 0.0),
      sxy_(size_t(targets * p), 0.0),
      sy_(size_t(targets), 0.0),
      syy_(size_t(targets), 0.0) {}

void ProbeAccumulator::add(const double* x, const double* y) {
    for (int64_t i = 0; i < p_; ++i) {
        const double xi = x[i];
        sx_[size_t(i)] += xi;
        double* row = sxx_.data() + i * p_;
        for (int64_t j = i; j < p_; ++j) row[j] += xi * x[j];
    }
    for (int64_t t = 0; t < t_; ++t) {
        const double yt = y[t];
        sy_[size_t(t)] += yt;
        syy_[size_t(t)] += yt * yt;
        double* row = sxy_.data() + t * p_;
        for (int64_t j = 0; j < p_; ++j) row[j] += yt * x[j];
    }
    ++n_;
}

ProbeFit ProbeAccumulator::solve(int64_t target, double ridge_rel, bool intercept) const {
    check(n_ > p_, "probe needs more samples than features");
    const double n = double(n_);
    std::vector<double> c(static_cast<size_t>(p_ * p_));
    std::vector<double> cxy(static_cast<size_t>(p_));
    const double* sxy = sxy_.data() + target * p_;
    const double sy = sy_[size_t(target)];
    double sstot = syy_[size_t(target)];
    if (intercept) sstot -= sy * sy / n;
    if (sstot <= 0)
        throw ZeroVarianceTarget("zero target variance: R^2 undefined");

    for (int64_t i = 0; i < p_; ++i)
        for (int64_t j = i; j < p_; ++j) {
            double v = sxx_[size_t(i * p_ + j)];
            if (intercept) v -= sx_[size_t(i)] * sx_[size_t(j)] / n;
            c[size_t(i * p_ + j)] = v;
            c[size_t(j * p_ + i)] = v;
        }
    for (int64_t j = 0; j < p_; ++j) {
        double v = sxy[j];
        if (intercept) v -= sx_[size_t(j)] * sy / n;
        cxy[size_t(j)] = v;
    }

    double trace = 0;
    for (int64_t i = 0; i < p_; ++i) trace += c[size_t(i * p_ + i)];
    const double lambda = std::max(ridge_rel * trace / double(p_), 1e-300);
    std::vector<double> a = c;
    for (int64_t i = 0; i < p_; ++i) a[size_t(i * p_ + i)] += lambda;

    ProbeFit fit;
    fit.direction = cxy;
    if (!cholesky_solve(a, p_, fit.direction)) {
        // fully degenerate features: the zero direction is the ridge limit
        std::fill(fit.direction.begin(), fit.direction.end(), 0.0);
    }
    double quad = 0, lin = 0;
    for (int64_t i = 0; i < p_; ++i) {
        lin += fit.direction[size_t(i)] * cxy[size_t(i)];
        double acc = 0;
        for (int64_t j = 0; j < p_; ++j)
            acc += c[size_t(i * p_ + j)] * fit.direction[size_t(j)];
        quad += acc * fit.direction[size_t(i)];
    }
    const double ssres = std::max(0.0, sstot - 2.0 * lin + quad);
    fit.r2 = 1.0 - ssres / sstot;
    if (intercept) {
        double xb = 0;
        for (int64_t i = 0; i < p_; ++i) xb += sx_[size_t(i)] / n * fit.direction[size_t(i)];
        fit.intercept = sy / n - xb;
    }
    return fit;
}

ProbeFit fit_linear_probe(const double* x, int64_t n, int64_t p, const double* y,
                          double ridge_rel, bool intercept) {
    check(n >= p + 1, "probe needs at least p + 1 samples");
    ProbeAccumulator acc(p, 1);
    for (int64_t i = 0; i < n; ++i) acc.add(x + i * p, y + i);
    return acc.solve(0, ridge_rel, intercept);
}

double probe_spatial_map_r2(const Tensor<float>& table, const TokenCodec& codec,
                            double ridge_rel) {
    const int64_t v = table.dim(0), n = table.dim(1);
    std::vector<double> x(static_cast<size_t>(v * n));
    for (size_t i = 0; i < x.size(); ++i) x[i] = double(table.data[i]);
    std::vector<double> y(static_cast<size_t>(v));
    for (int32_t k = 0; k < int32_t(v); ++k) y[size_t(k)] = codec.decode(k);
    return fit_linear_probe(x.data(), v, n, y.data(), ridge_rel, true).r2;
}

const std::vector<std::string>& newton_target_names() {
    static const std::vector<std::string> names = {"F",  "F_x",   "F_y",   "n_x",
                                                   "n_y", "x",     "y",     "r",
                                                   "r2",  "inv_r", "inv_r2", "inv_r3"};
    return names;
}

const std::vector<std::string>& kepler_target_names() {
    static const std::vector<std::string> names = {"a",      "b",      "c",      "e",
                                                   "rbar",   "inv_a",  "inv_a2", "inv_b",
                                                   "inv_b2", "A_x",    "A_y",    "A_mag"};
    return names;
}

std::vector<std::string> target_names(TargetSet set) {
    std::vector<std::string> out;
    if (set == TargetSet::kNewton || set == TargetSet::kAll)
        out.insert(out.end(), newton_target_names().begin(), newton_target_names().end());
    if (set == TargetSet::kKepler || set == TargetSet::kAll)
        out.insert(out.end(), kepler_target_names().begin(), kepler_target_names().end());
    return out;
}

std::vector<double> compute_probe_targets(const Trajectory& traj, int i, TargetSet set) {
    check(traj.dim == 2, "probe targets need a 2D trajectory");
    check(traj.targets.has_value(), "trajectory is missing ellipse metadata");
    std::vector<double> out;
    if (set == TargetSet::kNewton || set == TargetSet::kAll) {
        const Vec2 r = traj.position(i);
        double fx, fy, fm;
        force_at(r, fx, fy, fm);
        const double rn = r.norm();
        out.insert(out.end(), {fm, fx, fy, r.x / rn, r.y / rn, r.x, r.y, rn, rn * rn, 1.0 / rn,
                               1.0 / (rn * rn), 1.0 / (rn * rn * rn)});
    }
    if (set == TargetSet::kKepler || set == TargetSet::kAll) {
        const KeplerTargets& k = *traj.targets;
        out.insert(out.end(), {k.a, k.b, k.c, k.e, k.rbar, k.inv_a, k.inv_a2, k.inv_b, k.inv_b2,
                               k.lrl_x, k.lrl_y, k.lrl_mag});
    }
    return out;
}

double ProbeReport::best_r2(const std::string& target) const {
    for (const auto& e : best)
        if (e.target == target) return e.r2;
    return std::numeric_limits<double>::quiet_NaN();
}

void ProbeReport::write_csv(const std::string& path) const {
    std::ofstream out(path);
    check(out.good(), "cannot open " + path + " for writing");
    out << "target,site,layer,r2\n";
    char line[256];
    for (const auto& e : entries) {
        snprintf(line, sizeof(line), "%s,%s,%d,%.10g\n", e.target.c_str(), e.site.c_str(),
                 e.layer, e.r2);
        out << line;
    }
    for (const auto& e : best) {
        snprintf(line, sizeof(line), "best_%s,%s,%d,%.10g\n", e.target.c_str(), e.site.c_str(),
                 e.layer, e.r2);
        out << line;
    }
}

namespace {

int site_layer(const std::string& site, int n_layer) {
    if (site == "embedding") return -1;
    if (site == "final_norm") return n_layer;
    return std::stoi(site.substr(0, site.find('.')));
}

std::string site_short_name(const std::string& site) {
    const auto dot = site.find('.');
    return dot == std::string::npos ? site : site.substr(dot + 1);
}

}  // namespace

ProbeReport probe_sweep(Model<float>& m, const Dataset& probe_data, TargetSet set,
                        const ProbeOptions& opt) {
    const ModelConfig& cfg = m.cfg;
    check(probe_data.kind == "kepler", "probe sweep expects kepler trajectories");
    check(cfg.input_dim == 2, "probe sweep expects a 2D model");
    const auto names = target_names(set);
    const int n_targets = int(names.size());
    const int n = probe_data.steps;
    const int w = std::min(cfg.ctx, n - 1);
    const int64_t windows_per_traj = n - w + 1;
    const int64_t total = int64_t(probe_data.trajs.size()) * windows_per_traj;
    check(total > 0, "no probe windows available");
    const int64_t stride = std::max<int64_t>(1, (total + opt.max_rows - 1) / opt.max_rows);

    const auto site_names = trace_site_names(cfg);
    std::map<std::string, ProbeAccumulator> acc;

    const TokenCodec codec =
        cfg.head == HeadKind::kClassification
            ? TokenCodec(cfg.codec_half_range, cfg.vocab)
            : TokenCodec(cfg.codec_half_range, 2);

    // batch of windows, all with identical length w
    std::vector<int64_t> pending;  // global window ids
    std::vector<double> xrow;
    auto flush = [&](const std::vector<int64_t>& batch) {
        if (batch.empty()) return;
        const int bsz = int(batch.size());
        Tape<float> tape;
        ForwardResult fr;
        if (cfg.head == HeadKind::kRegression) {
            std::vector<float> states(size_t(bsz) * size_t(w) * 2);
            for (int b = 0; b < bsz; ++b) {
                const auto& tr = probe_data.trajs[size_t(batch[size_t(b)] / windows_per_traj)];
                const int start = int(batch[size_t(b)] % windows_per_traj);
                for (int j = 0; j < w; ++j) {
                    states[size_t(b) * size_t(w) * 2 + size_t(j) * 2] =
                        float(tr.pos[size_t(start + j) * 2]);
                    states[size_t(b) * size_t(w) * 2 + size_t(j) * 2 + 1] =
                        float(tr.pos[size_t(start + j) * 2 + 1]);
                }
            }
            fr = forward_regression(tape, m, states, bsz, w);
        } else {
            std::vector<int32_t> tx(size_t(bsz) * size_t(w)), ty(size_t(bsz) * size_t(w));
            for (int b = 0; b < bsz; ++b) {
                const auto& tr = probe_data.trajs[size_t(batch[size_t(b)] / windows_per_traj)];
                const int start = int(batch[size_t(b)] % windows_per_traj);
                for (int j = 0; j < w; ++j) {
                    tx[size_t(b) * size_t(w) + size_t(j)] =
                        codec.encode(tr.pos[size_t(start + j) * 2]);
                    ty[size_t(b) * size_t(w) + size_t(j)] =
                        codec.encode(tr.pos[size_t(start + j) * 2 + 1]);
                }
            }
            fr = forward_classification(tape, m, tx, ty, bsz, w);
        }
        for (const auto& [site, node] : fr.sites) {
            const Tensor<float>& v = tape.val(node);
            const int64_t width = v.shape.back();
            auto it = acc.find(site);
            if (it == acc.end())
                it = acc.emplace(site, ProbeAccumulator(width, n_targets)).first;
            for (int b = 0; b < bsz; ++b) {
                const float* row = v.ptr() + (int64_t(b) * w + (w - 1)) * width;
                xrow.assign(row, row + width);
                const auto& tr = probe_data.trajs[size_t(batch[size_t(b)] / windows_per_traj)];
                const int start = int(batch[size_t(b)] % windows_per_traj);
                const auto y = compute_probe_targets(tr, start + w - 1, set);
                it->second.add(xrow.data(), y.data());
            }
        }
    };

    for (int64_t g = 0; g < total; g += stride) {
        pending.push_back(g);
        if (int(pending.size()) >= opt.batch_windows) {
            flush(pending);
            pending.clear();
        }
    }
    flush(pending);

    ProbeReport report;
    for (int t = 0; t < n_targets; ++t) {
        ProbeEntry best_entry;
        best_entry.target = names[size_t(t)];
        best_entry.r2 = -std::numeric_limits<double>::infinity();
        for (const auto& site : site_names) {
            const auto it = acc.find(site);
            check(it != acc.end(), "missing trace site " + site);
            ProbeEntry e;
            e.target = names[size_t(t)];
            e.site = site_short_name(site);
            e.layer = site_layer(site, cfg.n_layer);
            try {
                ProbeFit fit = it->second.solve(t, opt.ridge_rel, opt.intercept);
                e.r2 = fit.r2;
                e.direction = std::move(fit.direction);
                e.intercept = fit.intercept;
            } catch (const ZeroVarianceTarget&) {
                e.r2 = std::numeric_limits<double>::quiet_NaN();
            }
            if (!std::isnan(e.r2) && e.r2 > best_entry.r2) best_entry = e;
            report.entries.push_back(std::move(e));
        }
        if (best_entry.r2 == -std::numeric_limits<double>::infinity())
            best_entry.r2 = std::numeric_limits<double>::quiet_NaN();
        report.best.push_back(std::move(best_entry));
    }
    return report;
}

}  // namespace lab
