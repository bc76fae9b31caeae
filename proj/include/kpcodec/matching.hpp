#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "kpcodec/errors.hpp"
#include "kpcodec/model.hpp"

namespace kpcodec {

struct MatchPair {
    std::size_t idx_prev = 0;
    std::size_t idx_curr = 0;
    double dist_ratio = 0.0;

    friend bool operator==(const MatchPair&, const MatchPair&) = default;
};

namespace detail {

inline double squared_distance(std::span<const float> a, std::span<const float> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        s += d * d;
    }
    return s;
}

inline void require_descriptors(std::span<const Feature> feats, std::size_t dim, const char* which) {
    for (const auto& f : feats) {
        if (f.descriptor.empty())
            throw MissingDescriptors(std::string(which) + " frame has a feature without a descriptor");
        if (f.descriptor.size() != dim)
            throw MissingDescriptors(std::string(which) + " frame has inconsistent descriptor dimension");
    }
}

}  // namespace detail

/// Nearest-neighbour distance-ratio matching. For every feature of `curr` the
/// two closest descriptors in `prev` are found; the pair is kept when
/// d1/d2 < t. Ties resolve to the lower prev index. With fewer than two
/// candidates in `prev` no pair is emitted.
inline std::vector<MatchPair> nndr_match(std::span<const Feature> prev, std::span<const Feature> curr,
                                         double t = 0.8) {
    std::vector<MatchPair> out;
    if (prev.empty() || curr.empty()) return out;
    const std::size_t dim = prev.front().descriptor.size();
    detail::require_descriptors(prev, dim, "previous");
    detail::require_descriptors(curr, dim, "current");
    if (dim == 0) throw MissingDescriptors("descriptors are empty");
    if (prev.size() < 2) return out;

    for (std::size_t j = 0; j < curr.size(); ++j) {
        double best = std::numeric_limits<double>::infinity();
        double second = std::numeric_limits<double>::infinity();
        std::size_t best_i = 0;
        for (std::size_t i = 0; i < prev.size(); ++i) {
            const double d = detail::squared_distance(curr[j].descriptor, prev[i].descriptor);
            if (d < best) {
                second = best;
                best = d;
                best_i = i;
            } else if (d < second) {
                second = d;
            }
        }
        if (second == 0.0) continue;  // ambiguous duplicates
        const double ratio = std::sqrt(best) / std::sqrt(second);
        if (ratio < t) out.push_back({best_i, j, ratio});
    }
    return out;
}

inline std::vector<MatchPair> nndr_match(const FrameFeatures& prev, const FrameFeatures& curr, double t = 0.8) {
    return nndr_match(std::span<const Feature>(prev.features), std::span<const Feature>(curr.features), t);
}

/// Keeps at most one pair per prev index (lowest ratio, then lowest curr index).
/// Output is sorted by idx_curr.
inline std::vector<MatchPair> unique_by_prev(std::vector<MatchPair> matches) {
    std::sort(matches.begin(), matches.end(), [](const MatchPair& l, const MatchPair& r) {
        if (l.idx_prev != r.idx_prev) return l.idx_prev < r.idx_prev;
        if (l.dist_ratio != r.dist_ratio) return l.dist_ratio < r.dist_ratio;
        return l.idx_curr < r.idx_curr;
    });
    std::vector<MatchPair> out;
    for (const auto& m : matches)
        if (out.empty() || out.back().idx_prev != m.idx_prev) out.push_back(m);
    std::sort(out.begin(), out.end(),
              [](const MatchPair& l, const MatchPair& r) { return l.idx_curr < r.idx_curr; });
    return out;
}

struct RansacConfig {
    double inlier_tolerance = 3.0;  // px
    int max_iterations = 1000;
    std::size_t min_inliers = 8;
    double confidence = 0.99;
    std::uint64_t seed = 0;
};

struct AffineFit {
    AffineTransform transform;
    std::vector<MatchPair> inliers;
    int num_iterations = 0;
};

struct FitFailure {
    enum class Reason { TooFewMatches, Collinear, TooFewInliers, Degenerate };
    Reason reason;
    std::string message;
};

using FitResult = std::variant<AffineFit, FitFailure>;

namespace detail {

struct PointPair {
    double x0, y0, x1, y1;
};

inline std::optional<AffineTransform> affine_from_three(const PointPair& p, const PointPair& q,
                                                        const PointPair& r) {
    const double cross = (q.x0 - p.x0) * (r.y0 - p.y0) - (q.y0 - p.y0) * (r.x0 - p.x0);
    if (std::abs(cross) < 1e-6) return std::nullopt;
    Eigen::Matrix3d M;
    M << p.x0, p.y0, 1.0, q.x0, q.y0, 1.0, r.x0, r.y0, 1.0;
    const Eigen::Vector3d bx(p.x1, q.x1, r.x1);
    const Eigen::Vector3d by(p.y1, q.y1, r.y1);
    const auto lu = M.partialPivLu();
    const Eigen::Vector3d sx = lu.solve(bx);
    const Eigen::Vector3d sy = lu.solve(by);
    return AffineTransform{sx(0), sx(1), sy(0), sy(1), sx(2), sy(2)};
}

inline double reprojection_error(const AffineTransform& T, const PointPair& p) {
    double x, y;
    T.apply(p.x0, p.y0, x, y);
    return std::hypot(x - p.x1, y - p.y1);
}

inline std::optional<AffineTransform> affine_least_squares(std::span<const PointPair> pts) {
    if (pts.size() < 3) return std::nullopt;
    Eigen::MatrixX3d M(static_cast<Eigen::Index>(pts.size()), 3);
    Eigen::VectorXd bx(static_cast<Eigen::Index>(pts.size()));
    Eigen::VectorXd by(static_cast<Eigen::Index>(pts.size()));
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        M(r, 0) = pts[i].x0;
        M(r, 1) = pts[i].y0;
        M(r, 2) = 1.0;
        bx(r) = pts[i].x1;
        by(r) = pts[i].y1;
    }
    const auto qr = M.colPivHouseholderQr();
    if (qr.rank() < 3) return std::nullopt;
    const Eigen::Vector3d sx = qr.solve(bx);
    const Eigen::Vector3d sy = qr.solve(by);
    return AffineTransform{sx(0), sx(1), sy(0), sy(1), sx(2), sy(2)};
}

}  // namespace detail

/// RANSAC over minimal three-point affine samples, followed by a least-squares
/// refit on the best consensus set. Deterministic for a given seed.
inline FitResult ransac_affine(std::span<const MatchPair> matches, std::span<const Keypoint> prev,
                               std::span<const Keypoint> curr, const RansacConfig& cfg = {}) {
    using Reason = FitFailure::Reason;
    if (matches.size() < 3) return FitFailure{Reason::TooFewMatches, "fewer than 3 matches"};

    std::vector<detail::PointPair> pts;
    pts.reserve(matches.size());
    for (const auto& m : matches) {
        const auto& a = prev[m.idx_prev];
        const auto& b = curr[m.idx_curr];
        pts.push_back({a.x, a.y, b.x, b.y});
    }

    const std::size_t n = pts.size();
    std::mt19937_64 rng(cfg.seed);
    std::vector<char> best_mask;
    std::size_t best_count = 0;
    std::optional<AffineTransform> best_model;
    bool any_valid_sample = false;

    int needed = cfg.max_iterations;
    int it = 0;
    for (; it < needed && it < cfg.max_iterations; ++it) {
        const std::size_t i0 = rng() % n;
        std::size_t i1 = rng() % n;
        while (i1 == i0) i1 = rng() % n;
        std::size_t i2 = rng() % n;
        while (i2 == i0 || i2 == i1) i2 = rng() % n;

        const auto model = detail::affine_from_three(pts[i0], pts[i1], pts[i2]);
        if (!model || std::abs(model->det()) < 1e-6) continue;
        any_valid_sample = true;

        std::vector<char> mask(n, 0);
        std::size_t count = 0;
        for (std::size_t k = 0; k < n; ++k) {
            if (detail::reprojection_error(*model, pts[k]) <= cfg.inlier_tolerance) {
                mask[k] = 1;
                ++count;
            }
        }
        if (count > best_count) {
            best_count = count;
            best_mask = std::move(mask);
            best_model = model;
            const double w = static_cast<double>(count) / static_cast<double>(n);
            const double miss = 1.0 - w * w * w;
            if (miss <= 0.0) {
                needed = it + 1;
            } else {
                const double k = std::log(1.0 - cfg.confidence) / std::log(miss);
                needed = static_cast<int>(std::min<double>(cfg.max_iterations, std::ceil(k)));
            }
        }
    }

    if (!any_valid_sample) {
        // Exhaustive check so that small all-collinear sets are reported as such.
        bool collinear = true;
        for (std::size_t a = 0; a < n && collinear; ++a)
            for (std::size_t b = a + 1; b < n && collinear; ++b)
                for (std::size_t c = b + 1; c < n && collinear; ++c)
                    if (detail::affine_from_three(pts[a], pts[b], pts[c])) collinear = false;
        if (collinear) return FitFailure{Reason::Collinear, "all correspondences are collinear"};
        return FitFailure{Reason::Degenerate, "no non-degenerate sample found"};
    }
    if (best_count < cfg.min_inliers || best_count < 3)
        return FitFailure{Reason::TooFewInliers, "best consensus set has " + std::to_string(best_count) +
                                                     " inliers, need " + std::to_string(cfg.min_inliers)};

    AffineFit fit;
    std::vector<detail::PointPair> inlier_pts;
    for (std::size_t k = 0; k < n; ++k) {
        if (best_mask[k]) {
            fit.inliers.push_back(matches[k]);
            inlier_pts.push_back(pts[k]);
        }
    }
    const auto refit = detail::affine_least_squares(inlier_pts);
    fit.transform = (refit && std::abs(refit->det()) >= 1e-6) ? *refit : *best_model;
    fit.num_iterations = it;
    if (std::abs(fit.transform.det()) < 1e-6) return FitFailure{Reason::Degenerate, "singular fit"};
    return fit;
}

inline std::vector<Keypoint> keypoints_of(std::span<const Feature> feats) {
    std::vector<Keypoint> out;
    out.reserve(feats.size());
    for (const auto& f : feats) out.push_back(f.keypoint);
    return out;
}

inline FitResult ransac_affine(std::span<const MatchPair> matches, const FrameFeatures& prev,
                               const FrameFeatures& curr, const RansacConfig& cfg = {}) {
    const auto a = keypoints_of(prev.features);
    const auto b = keypoints_of(curr.features);
    return ransac_affine(matches, std::span<const Keypoint>(a), std::span<const Keypoint>(b), cfg);
}

}  // namespace kpcodec
