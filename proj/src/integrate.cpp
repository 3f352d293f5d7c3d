#include "lab/integrate.hpp"

#include <algorithm>
#include <cmath>

namespace lab {

namespace {

// Dormand-Prince 5(4) tableau.
constexpr double kA21 = 1.0 / 5;
constexpr double kA31 = 3.0 / 40, kA32 = 9.0 / 40;
constexpr double kA41 = 44.0 / 45, kA42 = -56.0 / 15, kA43 = 32.0 / 9;
constexpr double kA51 = 19372.0 / 6561, kA52 = -25360.0 / 2187, kA53 = 64448.0 / 6561,
                 kA54 = -212.0 / 729;
constexpr double kA61 = 9017.0 / 3168, kA62 = -355.0 / 33, kA63 = 46732.0 / 5247,
                 kA64 = 49.0 / 176, kA65 = -5103.0 / 18656;
constexpr double kB1 = 35.0 / 384, kB3 = 500.0 / 1113, kB4 = 125.0 / 192,
                 kB5 = -2187.0 / 6784, kB6 = 11.0 / 84;
// b - b* (5th minus embedded 4th order) for the error estimate
constexpr double kE1 = kB1 - 5179.0 / 57600;
constexpr double kE3 = kB3 - 7571.0 / 16695;
constexpr double kE4 = kB4 - 393.0 / 640;
constexpr double kE5 = kB5 - -92097.0 / 339200;
constexpr double kE6 = kB6 - 187.0 / 2100;
constexpr double kE7 = -1.0 / 40;

constexpr double kC2 = 1.0 / 5, kC3 = 3.0 / 10, kC4 = 4.0 / 5, kC5 = 8.0 / 9;

}  // namespace

template <int N>
std::vector<std::array<double, N>> integrate_dopri45(
    const std::function<void(double, const std::array<double, N>&, std::array<double, N>&)>& f,
    std::array<double, N> y, double t0, const std::vector<double>& sample_times, double rtol,
    double atol, double hmax) {
    using State = std::array<double, N>;
    std::vector<State> out;
    out.reserve(sample_times.size());

    double t = t0;
    size_t next = 0;
    while (next < sample_times.size() && sample_times[next] <= t) {
        check(sample_times[next] == t, "sample time before start of integration");
        out.push_back(y);
        ++next;
    }
    if (next >= sample_times.size()) return out;

    State k1, k2, k3, k4, k5, k6, k7, ytmp, ynew;
    f(t, y, k1);
    double h = 1e-3;
    const double t_end = sample_times.back();

    while (t < t_end) {
        h = std::min({h, hmax, t_end - t});
        const double hmin = 1e-13 * std::max(1.0, std::abs(t));
        if (h < hmin)
            throw IntegrationError(t, strformat("step size underflow at t=%.9g", t));

        for (int i = 0; i < N; ++i) ytmp[i] = y[i] + h * kA21 * k1[i];
        f(t + kC2 * h, ytmp, k2);
        for (int i = 0; i < N; ++i) ytmp[i] = y[i] + h * (kA31 * k1[i] + kA32 * k2[i]);
        f(t + kC3 * h, ytmp, k3);
        for (int i = 0; i < N; ++i)
            ytmp[i] = y[i] + h * (kA41 * k1[i] + kA42 * k2[i] + kA43 * k3[i]);
        f(t + kC4 * h, ytmp, k4);
        for (int i = 0; i < N; ++i)
            ytmp[i] = y[i] + h * (kA51 * k1[i] + kA52 * k2[i] + kA53 * k3[i] + kA54 * k4[i]);
        f(t + kC5 * h, ytmp, k5);
        for (int i = 0; i < N; ++i)
            ytmp[i] = y[i] + h * (kA61 * k1[i] + kA62 * k2[i] + kA63 * k3[i] + kA64 * k4[i] +
                                  kA65 * k5[i]);
        f(t + h, ytmp, k6);
        for (int i = 0; i < N; ++i)
            ynew[i] = y[i] +
                      h * (kB1 * k1[i] + kB3 * k3[i] + kB4 * k4[i] + kB5 * k5[i] + kB6 * k6[i]);
        f(t + h, ynew, k7);

        double err_sq = 0;
        for (int i = 0; i < N; ++i) {
            const double e = h * (kE1 * k1[i] + kE3 * k3[i] + kE4 * k4[i] + kE5 * k5[i] +
                                  kE6 * k6[i] + kE7 * k7[i]);
            const double sc = atol + rtol * std::max(std::abs(y[i]), std::abs(ynew[i]));
            err_sq += (e / sc) * (e / sc);
        }
        // error per unit step: keeps the accumulated drift near rtol * T
        // instead of rtol * step_count, which orbit conservation checks need
        const double err = std::sqrt(err_sq / N) / h;

        if (err <= 1.0) {
            // cubic Hermite dense output over the accepted step
            const double t_new = t + h;
            while (next < sample_times.size() && sample_times[next] <= t_new + 1e-14) {
                const double ts = std::min(sample_times[next], t_new);
                const double th = (ts - t) / h;
                State ys;
                for (int i = 0; i < N; ++i) {
                    const double d = y[i] + th * (ynew[i] - y[i]);
                    const double corr =
                        th * (th - 1.0) * ((1.0 - 2.0 * th) * (ynew[i] - y[i]) +
                                           (th - 1.0) * h * k1[i] + th * h * k7[i]);
                    ys[i] = d + corr;
                }
                out.push_back(ys);
                ++next;
            }
            t = t_new;
            y = ynew;
            k1 = k7;  // FSAL
        }
        const double factor =
            err <= 0 ? 5.0 : std::min(5.0, std::max(0.2, 0.9 * std::pow(err, -0.25)));
        h *= factor;
    }
    return out;
}

template std::vector<std::array<double, 2>> integrate_dopri45<2>(
    const std::function<void(double, const std::array<double, 2>&, std::array<double, 2>&)>&,
    std::array<double, 2>, double, const std::vector<double>&, double, double, double);
template std::vector<std::array<double, 4>> integrate_dopri45<4>(
    const std::function<void(double, const std::array<double, 4>&, std::array<double, 4>&)>&,
    std::array<double, 4>, double, const std::vector<double>&, double, double, double);

}  // namespace lab
