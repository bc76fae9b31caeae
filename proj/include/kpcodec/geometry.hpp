#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>

#include "kpcodec/errors.hpp"
#include "kpcodec/model.hpp"

namespace kpcodec {

inline DecomposedAffine decompose(const AffineTransform& A) {
    const double det = A.det();
    const double norm2 = A.a * A.a + A.b * A.b;
    if (std::abs(det) < 1e-6 || norm2 == 0.0)
        throw DegenerateTransform("affine matrix is singular or has a zero first row");
    const double r1 = std::sqrt(norm2);
    DecomposedAffine D;
    D.r1 = r1;
    D.r2 = det / r1;
    D.q = (A.a * A.c + A.b * A.d) / det;
    D.phi = std::atan2(A.b, A.a);
    D.tx = A.tx;
    D.ty = A.ty;
    return D;
}

inline AffineTransform recompose(const DecomposedAffine& D) {
    if (!(D.r1 > 0.0)) throw InvalidDecomposition("r1 must be positive");
    const double c = std::cos(D.phi);
    const double s = std::sin(D.phi);
    AffineTransform A;
    A.a = D.r1 * c;
    A.b = D.r1 * s;
    A.c = D.r2 * (D.q * c - s);
    A.d = D.r2 * (D.q * s + c);
    A.tx = D.tx;
    A.ty = D.ty;
    return A;
}

/// Radius of the circle whose area equals the sheared/scaled ellipse.
inline double scale_factor(const DecomposedAffine& D) {
    const double p = D.r1 * D.r2;
    if (!(p > 0.0)) throw InvalidDecomposition("r1*r2 must be positive");
    return std::sqrt(p);
}

/// Predicts where a keypoint lands in the next frame under D: location through
/// the full affine map, scale by the area-preserving factor, orientation minus
/// the rotation angle.
inline Keypoint estimate_keypoint(const Keypoint& k, const DecomposedAffine& D) {
    const AffineTransform A = recompose(D);
    Keypoint out;
    A.apply(k.x, k.y, out.x, out.y);
    out.sigma = scale_factor(D) * k.sigma;
    out.theta = wrap_orientation(k.theta - D.phi);
    return out;
}

// Endpoint-inclusive uniform scalar quantizer over [lo, hi] with 2^bits levels.
struct UniformQuantizer {
    double lo = 0.0;
    double hi = 1.0;
    int bits = 1;

    std::uint32_t max_index() const noexcept { return (std::uint32_t{1} << bits) - 1u; }
    double step() const noexcept { return (hi - lo) / max_index(); }
    bool clamps(double v) const noexcept { return v < lo || v > hi; }

    std::uint32_t index(double v) const noexcept {
        // measured from the midpoint so that decimal range centres land on
        // the exact half-way tie instead of just below it
        const double m = max_index();
        const double c = std::clamp(v, lo, hi);
        const double i = std::round(0.5 * m + (c - 0.5 * (lo + hi)) / (hi - lo) * m);
        return static_cast<std::uint32_t>(std::clamp(i, 0.0, static_cast<double>(max_index())));
    }

    double value(std::uint32_t i) const noexcept {
        return lo + static_cast<double>(i) / max_index() * (hi - lo);
    }
};

struct QuantizedAffine {
    std::uint32_t idx_r1 = 0, idx_r2 = 0, idx_q = 0;
    std::uint32_t idx_phi = 0, idx_tx = 0, idx_ty = 0;

    static constexpr std::array<int, 6> kFieldBits{7, 7, 7, 9, 9, 9};
    static constexpr int kBits = 48;

    std::array<std::uint32_t, 6> fields() const noexcept {
        return {idx_r1, idx_r2, idx_q, idx_phi, idx_tx, idx_ty};
    }

    /// Packs the six indices MSB-first into the low 48 bits.
    std::uint64_t pack() const noexcept {
        std::uint64_t v = 0;
        const auto f = fields();
        for (std::size_t i = 0; i < f.size(); ++i) v = (v << kFieldBits[i]) | f[i];
        return v;
    }

    static QuantizedAffine unpack(std::uint64_t v) noexcept {
        std::array<std::uint32_t, 6> f{};
        for (std::size_t i = f.size(); i-- > 0;) {
            f[i] = static_cast<std::uint32_t>(v & ((std::uint64_t{1} << kFieldBits[i]) - 1));
            v >>= kFieldBits[i];
        }
        return {f[0], f[1], f[2], f[3], f[4], f[5]};
    }

    friend bool operator==(const QuantizedAffine&, const QuantizedAffine&) = default;
};

/// Parameter ranges of the 48-bit affine code. Translation range is per stream.
struct AffineQuantizer {
    double t_max = 64.0;

    UniformQuantizer r1() const { return {0.9, 1.1, 7}; }
    UniformQuantizer r2() const { return {0.9, 1.1, 7}; }
    UniformQuantizer q() const { return {-0.05, 0.05, 7}; }
    UniformQuantizer phi() const { return {-0.15, 0.15, 9}; }
    UniformQuantizer tx() const { return {-t_max, t_max, 9}; }
    UniformQuantizer ty() const { return {-t_max, t_max, 9}; }

    QuantizedAffine quantize(const DecomposedAffine& D) const {
        return {r1().index(D.r1), r2().index(D.r2), q().index(D.q),
                phi().index(D.phi), tx().index(D.tx), ty().index(D.ty)};
    }

    DecomposedAffine dequantize(const QuantizedAffine& Q) const {
        return {r1().value(Q.idx_r1), r2().value(Q.idx_r2), q().value(Q.idx_q),
                phi().value(Q.idx_phi), tx().value(Q.idx_tx), ty().value(Q.idx_ty)};
    }

    /// Number of parameters of D that fall outside their range.
    int clamp_count(const DecomposedAffine& D) const {
        return int(r1().clamps(D.r1)) + int(r2().clamps(D.r2)) + int(q().clamps(D.q)) +
               int(phi().clamps(D.phi)) + int(tx().clamps(D.tx)) + int(ty().clamps(D.ty));
    }
};

inline QuantizedAffine quantize_affine(const DecomposedAffine& D, double t_max = 64.0) {
    return AffineQuantizer{t_max}.quantize(D);
}

inline DecomposedAffine dequantize_affine(const QuantizedAffine& Q, double t_max = 64.0) {
    return AffineQuantizer{t_max}.dequantize(Q);
}

}  // namespace kpcodec
