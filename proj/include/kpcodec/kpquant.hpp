#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "kpcodec/errors.hpp"
#include "kpcodec/model.hpp"

namespace kpcodec {

// ---------------------------------------------------------------- location

struct QuantizedLocation {
    std::int32_t gx = 0;
    std::int32_t gy = 0;

    friend bool operator==(const QuantizedLocation&, const QuantizedLocation&) = default;
    friend auto operator<=>(const QuantizedLocation& l, const QuantizedLocation& r) {
        // raster order
        if (auto c = l.gy <=> r.gy; c != 0) return c;
        return l.gx <=> r.gx;
    }
};

inline QuantizedLocation quantize_location(const Keypoint& k, double f = 1.0) {
    return {static_cast<std::int32_t>(std::lround(k.x / f)), static_cast<std::int32_t>(std::lround(k.y / f))};
}

inline double dequantize_coordinate(std::int32_t g, double f = 1.0) { return f * g; }

/// Occupancy grid laid over the frame with cell size f.
struct LocationGrid {
    int width = 0;
    int height = 0;
    double f = 1.0;

    int cols() const { return static_cast<int>(std::ceil(width / f)); }
    int rows() const { return static_cast<int>(std::ceil(height / f)); }
    std::size_t cells() const { return static_cast<std::size_t>(cols()) * static_cast<std::size_t>(rows()); }

    bool contains(const QuantizedLocation& q) const {
        return q.gx >= 0 && q.gy >= 0 && q.gx < cols() && q.gy < rows();
    }

    /// Cell for an in-frame keypoint. Rounding can land one past the last
    /// column or row; such cells are pulled back inside the grid.
    QuantizedLocation cell_of(const Keypoint& k) const {
        if (!(k.x >= 0.0 && k.y >= 0.0 && k.x < width && k.y < height))
            throw LocationOutOfGrid("keypoint (" + std::to_string(k.x) + ", " + std::to_string(k.y) +
                                    ") lies outside the " + std::to_string(width) + "x" +
                                    std::to_string(height) + " frame");
        QuantizedLocation q = quantize_location(k, f);
        q.gx = std::clamp(q.gx, 0, cols() - 1);
        q.gy = std::clamp(q.gy, 0, rows() - 1);
        return q;
    }
};

// ------------------------------------------------------------------- scale

inline constexpr double kBaseScale = 2.0159;
inline constexpr int kMaxOctave = 7;
inline constexpr int kScalesPerOctave = 3;

inline double lattice_scale(int octave, int intra_scale, double sigma0 = kBaseScale) {
    return sigma0 * std::exp2(octave + intra_scale / 3.0);
}

struct LloydMaxCodebook {
    std::vector<double> levels;      // strictly increasing
    std::vector<double> boundaries;  // levels.size() - 1 decision thresholds

    std::size_t nearest(double v) const {
        std::size_t i = 0;
        while (i < boundaries.size() && v > boundaries[i]) ++i;
        return i;
    }

    double mse(std::span<const double> samples) const {
        if (samples.empty()) return 0.0;
        double s = 0.0;
        for (double x : samples) {
            const double e = x - levels[nearest(x)];
            s += e * e;
        }
        return s / static_cast<double>(samples.size());
    }

    static LloydMaxCodebook from_levels(std::vector<double> lv) {
        LloydMaxCodebook cb;
        cb.levels = std::move(lv);
        for (std::size_t i = 0; i + 1 < cb.levels.size(); ++i)
            cb.boundaries.push_back(0.5 * (cb.levels[i] + cb.levels[i + 1]));
        return cb;
    }
};

namespace detail {

/// Lloyd iterations from `lv` over sorted samples until the MSE changes by
/// less than `tolerance`. The MSE never increases from one step to the next.
inline LloydMaxCodebook lloyd_refine(std::span<const double> xs, std::vector<double> lv, double tolerance,
                                     int max_iterations) {
    auto cb = LloydMaxCodebook::from_levels(lv);
    double prev_mse = cb.mse(xs);
    for (int it = 0; it < max_iterations; ++it) {
        std::vector<double> sum(lv.size(), 0.0);
        std::vector<std::size_t> cnt(lv.size(), 0);
        std::size_t cell = 0;
        for (double x : xs) {  // xs sorted: sweep cells left to right
            while (cell < cb.boundaries.size() && x > cb.boundaries[cell]) ++cell;
            sum[cell] += x;
            ++cnt[cell];
        }
        for (std::size_t j = 0; j < lv.size(); ++j)
            if (cnt[j] > 0) lv[j] = sum[j] / static_cast<double>(cnt[j]);
        if (!std::is_sorted(lv.begin(), lv.end(), std::less_equal<>{})) break;
        cb = LloydMaxCodebook::from_levels(lv);
        const double mse = cb.mse(xs);
        if (std::abs(prev_mse - mse) < tolerance) break;
        prev_mse = mse;
    }
    return cb;
}

}  // namespace detail

/// Lloyd-Max scalar quantizer training. Two deterministic starts are refined:
/// levels at the sample quantile midpoints and levels of the uniform quantizer
/// over the sample range. The codebook with the lower MSE is returned, ties
/// going to the quantile start.
inline LloydMaxCodebook train_lloyd_max(std::span<const double> samples, int levels,
                                        double tolerance = 1e-8, int max_iterations = 10000) {
    if (levels < 2) throw InsufficientSamples("need at least two levels");
    if (samples.size() < 2 * static_cast<std::size_t>(levels))
        throw InsufficientSamples("need at least " + std::to_string(2 * levels) + " samples, got " +
                                  std::to_string(samples.size()));
    std::vector<double> xs(samples.begin(), samples.end());
    std::sort(xs.begin(), xs.end());
    const std::size_t n = xs.size();

    std::vector<double> lv(static_cast<std::size_t>(levels));
    for (int j = 0; j < levels; ++j) {
        const auto pos = static_cast<std::size_t>((j + 0.5) / levels * static_cast<double>(n));
        lv[static_cast<std::size_t>(j)] = xs[std::min(pos, n - 1)];
    }
    for (std::size_t j = 1; j < lv.size(); ++j)
        if (!(lv[j] > lv[j - 1]))
            throw InsufficientSamples("samples have fewer distinct quantile values than levels");
    auto best = detail::lloyd_refine(xs, lv, tolerance, max_iterations);

    const double step = (xs.back() - xs.front()) / levels;
    std::vector<double> uni(static_cast<std::size_t>(levels));
    for (int j = 0; j < levels; ++j) uni[static_cast<std::size_t>(j)] = xs.front() + (j + 0.5) * step;
    const auto alt = detail::lloyd_refine(xs, uni, tolerance, max_iterations);
    if (alt.mse(xs) < best.mse(xs)) best = alt;
    return best;
}

/// Codebook for the normalized scale offset used when none is trained for a
/// stream. Trained on the synthetic reference corpus and frozen.
inline LloydMaxCodebook default_scale_codebook() {
    return LloydMaxCodebook::from_levels({-1102.0 / 65536.0, 1153.0 / 65536.0});
}

struct ScaleCode {
    std::uint8_t octave = 0;       // 3 bits
    std::uint8_t intra_scale = 0;  // 2 bits, 0..2
    std::uint8_t offset_bit = 0;   // 1 bit

    static constexpr int kBits = 6;

    std::uint32_t pack() const { return (std::uint32_t{octave} << 3) | (std::uint32_t{intra_scale} << 1) | offset_bit; }
    static ScaleCode unpack(std::uint32_t v) {
        return {static_cast<std::uint8_t>((v >> 3) & 7u), static_cast<std::uint8_t>((v >> 1) & 3u),
                static_cast<std::uint8_t>(v & 1u)};
    }
    friend bool operator==(const ScaleCode&, const ScaleCode&) = default;
};

/// Normalized offset of sigma from its lattice point.
inline double normalized_scale_offset(double sigma, int octave, int intra_scale) {
    const double l = lattice_scale(octave, intra_scale);
    return (sigma - l) / l;
}

/// Nearest (octave, intra_scale) lattice point by absolute difference, searched
/// over every candidate. Throws when the nearest point of the unbounded lattice
/// lies outside octaves 0..7.
inline std::pair<int, int> nearest_lattice_point(double sigma) {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ScaleOutOfRange("scale must be positive and finite");
    int best_o = 0, best_s = 0;
    double best = std::numeric_limits<double>::infinity();
    for (int o = -1; o <= kMaxOctave + 1; ++o) {
        for (int s = 0; s < kScalesPerOctave; ++s) {
            const double d = std::abs(sigma - lattice_scale(o, s));
            if (d < best) {
                best = d;
                best_o = o;
                best_s = s;
            }
        }
    }
    if (best_o < 0 || best_o > kMaxOctave)
        throw ScaleOutOfRange("scale " + std::to_string(sigma) + " is outside the coded octave range");
    return {best_o, best_s};
}

inline ScaleCode code_scale(double sigma, const LloydMaxCodebook& codebook) {
    const auto [o, s] = nearest_lattice_point(sigma);
    const double offset = normalized_scale_offset(sigma, o, s);
    return {static_cast<std::uint8_t>(o), static_cast<std::uint8_t>(s),
            static_cast<std::uint8_t>(std::min<std::size_t>(codebook.nearest(offset), 1))};
}

inline double decode_scale(const ScaleCode& code, const LloydMaxCodebook& codebook) {
    return lattice_scale(code.octave, code.intra_scale) * (1.0 + codebook.levels.at(code.offset_bit));
}

// ------------------------------------------------------------- orientation

inline constexpr int kOrientationBits = 6;

struct OrientationCode {
    std::uint32_t index = 0;
    friend bool operator==(const OrientationCode&, const OrientationCode&) = default;
};

inline std::uint32_t orientation_levels(int bits) { return (std::uint32_t{1} << bits) - 1u; }

/// theta is expected in the canonical interval; the result is clamped to
/// [0, 2^bits - 1].
inline OrientationCode code_orientation(double theta, int bits = kOrientationBits) {
    const double m = orientation_levels(bits);
    const double e = std::round((theta / kTwoPi + 0.75) * m);
    return {static_cast<std::uint32_t>(std::clamp(e, 0.0, m))};
}

/// Reconstruction in [-1.5*pi, 0.5*pi]; index 2^bits - 1 maps to the closed
/// upper end, which is the same direction as index 0.
inline double decode_orientation(OrientationCode code, int bits = kOrientationBits) {
    return (static_cast<double>(code.index) / orientation_levels(bits) - 0.75) * kTwoPi;
}

/// Circular index difference a - b over the 2^bits - 1 distinct directions,
/// in [-(M-1)/2, M/2].
inline int orientation_index_difference(std::uint32_t a, std::uint32_t b, int bits = kOrientationBits) {
    const int m = static_cast<int>(orientation_levels(bits));
    int d = (static_cast<int>(a) - static_cast<int>(b)) % m;
    if (d < 0) d += m;
    if (d > m / 2) d -= m;
    return d;
}

/// Inverse of orientation_index_difference: the index `d` steps from `base`.
inline std::uint32_t orientation_index_add(std::uint32_t base, int d, int bits = kOrientationBits) {
    const int m = static_cast<int>(orientation_levels(bits));
    int e = (static_cast<int>(base % static_cast<std::uint32_t>(m)) + d) % m;
    if (e < 0) e += m;
    return static_cast<std::uint32_t>(e);
}

}  // namespace kpcodec
