#pragma once

#include <array>
#include <functional>
#include <vector>

#include "lab/common.hpp"

namespace lab {

struct IntegrationError : std::runtime_error {
    double t;
    explicit IntegrationError(double time, const std::string& msg)
        : std::runtime_error(msg), t(time) {}
};

// Adaptive Dormand-Prince 4(5) with FSAL and cubic-Hermite dense output.
// sample_times must be non-decreasing and start at >= t0. hmax caps the step
// length; the cubic interpolant needs it tighter than the error control alone
// would pick on smooth arcs.
template <int N>
std::vector<std::array<double, N>> integrate_dopri45(
    const std::function<void(double, const std::array<double, N>&, std::array<double, N>&)>& f,
    std::array<double, N> y0, double t0, const std::vector<double>& sample_times,
    double rtol = 1e-8, double atol = 1e-8, double hmax = 0.1);

}  // namespace lab
