#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "lab/common.hpp"

namespace lab {

// Uniform binning of [-L, L] into V tokens; decode returns bin centers.
// Out-of-range inputs (and the exact upper edge, where the floor expression
// would yield V) clamp to the nearest valid token.
struct TokenCodec {
    double half_range = 1.0;  // L
    int32_t vocab = 2;        // V

    TokenCodec(double l, int32_t v) : half_range(l), vocab(v) {
        check(l > 0, "codec half-range must be positive");
        check(v >= 2, "codec vocabulary must be >= 2");
    }

    int32_t encode(double x) const {
        if (!std::isfinite(x)) throw std::invalid_argument("encode: non-finite coordinate");
        const double k = std::floor((x / half_range + 1.0) * double(vocab) / 2.0);
        if (k < 0) return 0;
        if (k > double(vocab - 1)) return vocab - 1;
        return static_cast<int32_t>(k);
    }

    double decode(int32_t k) const {
        check(k >= 0 && k < vocab, "decode: token out of range");
        return ((double(k) + 0.5) * 2.0 / double(vocab) - 1.0) * half_range;
    }
};

// Tokenization ranges: sine data lives in [-1, 1]; Kepler positions are
// bounded by a_max * (1 + e_max) = 3.6, covered with margin by 4.0.
inline double default_half_range(const std::string& kind) {
    return kind == "sine" ? 1.0 : 4.0;
}

}  // namespace lab
