#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace kpcodec {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Canonical orientation interval is [kThetaMin, kThetaMax).
inline constexpr double kThetaMin = -1.5 * std::numbers::pi;
inline constexpr double kThetaMax = 0.5 * std::numbers::pi;

/// Maps an angle into [-1.5*pi, 0.5*pi). Values already inside the interval are
/// returned unchanged, so the mapping is idempotent bit for bit.
inline double wrap_orientation(double theta) {
    if (theta >= kThetaMin && theta < kThetaMax) return theta;
    double w = theta - kTwoPi * std::floor((theta - kThetaMin) / kTwoPi);
    while (w >= kThetaMax) w -= kTwoPi;
    while (w < kThetaMin) w += kTwoPi;
    return w;
}

/// Signed shortest angular difference a - b, in (-pi, pi].
inline double angle_difference(double a, double b) {
    double d = std::remainder(a - b, kTwoPi);
    if (d <= -kPi) d += kTwoPi;
    return d;
}

struct Keypoint {
    double x = 0.0;
    double y = 0.0;
    double sigma = 1.0;
    double theta = 0.0;

    friend bool operator==(const Keypoint&, const Keypoint&) = default;
};

struct Feature {
    Keypoint keypoint;
    std::vector<float> descriptor;  // empty when the stream carries no descriptors
};

struct FrameFeatures {
    std::int64_t frame_index = 0;
    int width = 0;
    int height = 0;
    std::vector<Feature> features;

    std::size_t size() const noexcept { return features.size(); }
    bool has_descriptors() const noexcept {
        for (const auto& f : features)
            if (f.descriptor.empty()) return false;
        return true;
    }
};

inline bool in_bounds(const Keypoint& k, int width, int height) {
    return k.x >= 0.0 && k.y >= 0.0 && k.x < width && k.y < height;
}

// Two-bit frame type codes as written to the stream.
enum class FrameType : std::uint8_t { D = 0b00, S = 0b01, U = 0b10, N = 0b11 };

inline char frame_type_char(FrameType t) {
    switch (t) {
        case FrameType::D: return 'D';
        case FrameType::S: return 'S';
        case FrameType::U: return 'U';
        case FrameType::N: return 'N';
    }
    return '?';
}

// Homogeneous 2-D affine map: x' = a*x + b*y + tx, y' = c*x + d*y + ty.
struct AffineTransform {
    double a = 1.0, b = 0.0, c = 0.0, d = 1.0;
    double tx = 0.0, ty = 0.0;

    double det() const noexcept { return a * d - b * c; }

    void apply(double x, double y, double& xo, double& yo) const noexcept {
        xo = a * x + b * y + tx;
        yo = c * x + d * y + ty;
    }

    // (this o first): apply `first`, then this.
    AffineTransform compose(const AffineTransform& first) const noexcept {
        AffineTransform r;
        r.a = a * first.a + b * first.c;
        r.b = a * first.b + b * first.d;
        r.c = c * first.a + d * first.c;
        r.d = c * first.b + d * first.d;
        r.tx = a * first.tx + b * first.ty + tx;
        r.ty = c * first.tx + d * first.ty + ty;
        return r;
    }

    static AffineTransform identity() { return {}; }
    static AffineTransform translation(double tx, double ty) { return {1, 0, 0, 1, tx, ty}; }

    friend bool operator==(const AffineTransform&, const AffineTransform&) = default;
};

// Scaling diag(r1, r2), shear [[1,0],[q,1]], rotation [[cos,sin],[-sin,cos]].
struct DecomposedAffine {
    double r1 = 1.0, r2 = 1.0;
    double q = 0.0;
    double phi = 0.0;
    double tx = 0.0, ty = 0.0;

    friend bool operator==(const DecomposedAffine&, const DecomposedAffine&) = default;
};

}  // namespace kpcodec
