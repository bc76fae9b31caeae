#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "kpcodec/entropy.hpp"
#include "kpcodec/errors.hpp"
#include "kpcodec/geometry.hpp"
#include "kpcodec/kpquant.hpp"
#include "kpcodec/matching.hpp"
#include "kpcodec/model.hpp"

namespace kpcodec {

// Which frame types the encoder may use.
enum class Scheme {
    Adaptive,      // D/S/U/N with the adaptive interval and the N-frame window
    AllDetect,     // every frame D
    DetectUpdate,  // first frame D, then U (D only where no transform is found)
};

inline constexpr double kMaxScaleRatio = 0.3;
inline constexpr double kScaleRatioStep = 2.0 * kMaxScaleRatio / (kScaleRatioLevels - 1);
// Absorbs rounding in (sigma - est) / est so that a ratio of exactly 0.3 stays in range.
inline constexpr double kScaleRatioSlack = 1e-9;

struct CodecConfig {
    double epsilon = 0.80;
    int stability_window = 4;  // N_s
    double nndr_threshold = 0.8;
    double location_factor = 1.0;  // f
    int orientation_bits = kOrientationBits;
    double t_max = 64.0;
    std::size_t max_features = 200;
    std::uint64_t seed = 0;
    Scheme scheme = Scheme::Adaptive;
    RansacConfig ransac{};
    LloydMaxCodebook codebook = default_scale_codebook();
    LocationContextConfig location{};

    void validate() const {
        if (!(epsilon > 0.0 && epsilon <= 1.0)) throw ConfigError("epsilon must lie in (0, 1]");
        if (stability_window < 0 || stability_window > 255) throw ConfigError("N_s must lie in [0, 255]");
        if (!(nndr_threshold > 0.0 && nndr_threshold < 1.0)) throw ConfigError("NNDR threshold must lie in (0, 1)");
        if (!(location_factor > 0.0) || location_factor > 1024.0)
            throw ConfigError("location factor must lie in (0, 1024]");
        if (orientation_bits < 3 || orientation_bits > 16) throw ConfigError("orientation bits must lie in [3, 16]");
        if (!(t_max > 0.0) || t_max > 4096.0) throw ConfigError("T_max must lie in (0, 4096]");
        if (max_features == 0 || max_features > 65535) throw ConfigError("max_features must lie in [1, 65535]");
        if (codebook.levels.size() != 2) throw ConfigError("scale offset codebook must have exactly 2 levels");
    }

    AffineQuantizer affine_quantizer() const { return AffineQuantizer{t_max}; }
};

/// Decoded keypoints of the previous frame. The encoder also keeps one
/// descriptor per entry for matching; the decoder leaves `descriptors` empty.
struct KeypointBuffer {
    std::vector<Keypoint> keypoints;
    std::vector<std::vector<float>> descriptors;

    std::size_t size() const noexcept { return keypoints.size(); }
    bool empty() const noexcept { return keypoints.empty(); }
    bool tracks_descriptors() const noexcept { return descriptors.size() == keypoints.size() && !keypoints.empty(); }

    std::vector<Feature> as_features() const {
        std::vector<Feature> out(keypoints.size());
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i].keypoint = keypoints[i];
            if (i < descriptors.size()) out[i].descriptor = descriptors[i];
        }
        return out;
    }

    /// Drops entries that fall outside the frame.
    void prune(int width, int height) {
        std::size_t w = 0;
        const bool desc = descriptors.size() == keypoints.size();
        for (std::size_t i = 0; i < keypoints.size(); ++i) {
            if (!in_bounds(keypoints[i], width, height)) continue;
            if (w != i) {
                keypoints[w] = keypoints[i];
                if (desc) descriptors[w] = std::move(descriptors[i]);
            }
            ++w;
        }
        keypoints.resize(w);
        if (desc) descriptors.resize(w);
    }

    void clear() {
        keypoints.clear();
        descriptors.clear();
    }
};

// ------------------------------------------------------------ intra mode

struct IntraKeypoint {
    QuantizedLocation cell;
    ScaleCode scale;
    OrientationCode orientation;
    std::size_t source = 0;  // index of the input keypoint that won the cell
};

/// Quantizes keypoints for Intra coding. When several keypoints share a grid
/// cell the first in input order is kept. Output is in raster order.
inline std::vector<IntraKeypoint> prepare_intra(std::span<const Keypoint> kps, const LocationGrid& grid,
                                                const LloydMaxCodebook& codebook, int orientation_bits) {
    std::vector<IntraKeypoint> out;
    out.reserve(kps.size());
    for (std::size_t i = 0; i < kps.size(); ++i) {
        const auto& k = kps[i];
        out.push_back({grid.cell_of(k), code_scale(k.sigma, codebook),
                       code_orientation(wrap_orientation(k.theta), orientation_bits), i});
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const IntraKeypoint& a, const IntraKeypoint& b) { return a.cell < b.cell; });
    out.erase(std::unique(out.begin(), out.end(),
                          [](const IntraKeypoint& a, const IntraKeypoint& b) { return a.cell == b.cell; }),
              out.end());
    return out;
}

inline Keypoint reconstruct_intra(const IntraKeypoint& ik, double f, const LloydMaxCodebook& codebook,
                                  int orientation_bits) {
    return {dequantize_coordinate(ik.cell.gx, f), dequantize_coordinate(ik.cell.gy, f),
            decode_scale(ik.scale, codebook), wrap_orientation(decode_orientation(ik.orientation, orientation_bits))};
}

// ---------------------------------------------------- frame classification

struct Classification {
    FrameType type = FrameType::D;
    std::optional<AffineFit> prev_fit;  // previous-to-current fit when one exists
    std::size_t anchor_matches = 0;
};

/// Provisional type of `curr`: D without history or when no affine model links
/// the previous frame to this one; S when at least epsilon of the anchor
/// features are matched; U otherwise.
inline Classification classify_frame(const FrameFeatures& curr, const FrameFeatures* prev, const FrameFeatures* anchor,
                                     const CodecConfig& cfg) {
    Classification c;
    if (prev == nullptr || anchor == nullptr) return c;

    const auto pm = unique_by_prev(nndr_match(*prev, curr, cfg.nndr_threshold));
    RansacConfig rc = cfg.ransac;
    rc.seed = cfg.seed ^ static_cast<std::uint64_t>(curr.frame_index);
    auto fit = ransac_affine(pm, *prev, curr, rc);
    if (auto* ok = std::get_if<AffineFit>(&fit)) {
        c.prev_fit = std::move(*ok);
    } else {
        return c;
    }
    c.anchor_matches = unique_by_prev(nndr_match(*anchor, curr, cfg.nndr_threshold)).size();
    const double need = cfg.epsilon * static_cast<double>(anchor->size());
    c.type = static_cast<double>(c.anchor_matches) >= need - 1e-9 ? FrameType::S : FrameType::U;
    return c;
}

// --------------------------------------------------- N-frame window rule

enum class WindowDecision { Pending, Commit, Demote };

/// Decision for a provisional D/U leader given the provisional types of the
/// frames after it. Any non-S successor inside the window demotes the leader
/// to N; a full window of S commits it. At end of stream a partial window of S
/// also commits.
inline WindowDecision apply_nframe_rule(std::span<const FrameType> successors, int stability_window,
                                        bool end_of_stream) {
    const auto limit = std::min<std::size_t>(successors.size(), static_cast<std::size_t>(stability_window));
    for (std::size_t i = 0; i < limit; ++i)
        if (successors[i] != FrameType::S) return WindowDecision::Demote;
    if (successors.size() >= static_cast<std::size_t>(stability_window) || end_of_stream)
        return WindowDecision::Commit;
    return WindowDecision::Pending;
}

// ------------------------------------------------------- update frames

struct ModeAssignment {
    std::vector<BufferMode> modes;                  // one per buffered keypoint
    std::vector<InterResidual> residuals;           // Inter entries, buffer order
    std::vector<std::size_t> matched_curr;          // per buffer entry; meaningful for Skip/Inter
    std::vector<std::size_t> intra;                 // current-frame feature indices coded Intra

    std::size_t count(BufferMode m) const {
        return static_cast<std::size_t>(std::count(modes.begin(), modes.end(), m));
    }
};

/// Quantized difference between a current keypoint and its prediction, or
/// nullopt when any component is outside the residual range.
inline std::optional<InterResidual> compute_residual(const Keypoint& curr, const Keypoint& est,
                                                     const LocationGrid& grid, int orientation_bits) {
    const QuantizedLocation qc = grid.cell_of(curr);
    const QuantizedLocation qe = quantize_location(est, grid.f);
    InterResidual r;
    r.dx = qc.gx - qe.gx;
    r.dy = qc.gy - qe.gy;
    if (std::abs(r.dx) > kMaxLocationResidual || std::abs(r.dy) > kMaxLocationResidual) return std::nullopt;

    const double ratio = (curr.sigma - est.sigma) / est.sigma;
    if (std::abs(ratio) > kMaxScaleRatio + kScaleRatioSlack) return std::nullopt;
    r.scale_idx = std::clamp(static_cast<int>(std::lround(ratio / kScaleRatioStep)) + kNoScaleChange, 0,
                             kScaleRatioLevels - 1);

    const auto ec = code_orientation(wrap_orientation(curr.theta), orientation_bits);
    const auto ee = code_orientation(est.theta, orientation_bits);
    r.dtheta_idx = orientation_index_difference(ec.index, ee.index, orientation_bits);
    if (std::abs(r.dtheta_idx) > kMaxOrientationResidual) return std::nullopt;
    return r;
}

inline bool is_skip(const InterResidual& r) {
    return std::abs(r.dx) <= 1 && std::abs(r.dy) <= 1 && r.scale_idx == kNoScaleChange && r.dtheta_idx == 0;
}

inline Keypoint apply_residual(const Keypoint& est, const InterResidual& r, double f, int orientation_bits) {
    const QuantizedLocation qe = quantize_location(est, f);
    const auto ee = code_orientation(est.theta, orientation_bits);
    Keypoint k;
    k.x = dequantize_coordinate(qe.gx + r.dx, f);
    k.y = dequantize_coordinate(qe.gy + r.dy, f);
    k.sigma = est.sigma * (1.0 + (r.scale_idx - kNoScaleChange) * kScaleRatioStep);
    k.theta = wrap_orientation(
        decode_orientation({orientation_index_add(ee.index, r.dtheta_idx, orientation_bits)}, orientation_bits));
    return k;
}

inline std::vector<Keypoint> estimate_all(std::span<const Keypoint> kps, const DecomposedAffine& Dq) {
    std::vector<Keypoint> out;
    out.reserve(kps.size());
    for (const auto& k : kps) out.push_back(estimate_keypoint(k, Dq));
    return out;
}

/// Skip/Inter/Drop for every buffered keypoint and the list of current
/// features that fall back to Intra. Matching runs from the buffer (with its
/// descriptors) to the current frame; predictions use the dequantized affine.
inline ModeAssignment assign_modes(const FrameFeatures& curr, const KeypointBuffer& buffer, const DecomposedAffine& Dq,
                                   const CodecConfig& cfg) {
    const LocationGrid grid{curr.width, curr.height, cfg.location_factor};
    ModeAssignment out;
    out.modes.assign(buffer.size(), BufferMode::Drop);
    out.matched_curr.assign(buffer.size(), 0);

    std::vector<MatchPair> matches;
    if (buffer.tracks_descriptors() && !curr.features.empty()) {
        const auto feats = buffer.as_features();
        matches = unique_by_prev(nndr_match(std::span<const Feature>(feats),
                                            std::span<const Feature>(curr.features), cfg.nndr_threshold));
    }
    const auto est = estimate_all(buffer.keypoints, Dq);

    std::vector<char> kept(curr.size(), 0);
    std::vector<std::optional<InterResidual>> per_entry(buffer.size());
    for (const auto& m : matches) {
        auto r = compute_residual(curr.features[m.idx_curr].keypoint, est[m.idx_prev], grid, cfg.orientation_bits);
        if (!r) continue;
        r->prev_ref = m.idx_prev;
        per_entry[m.idx_prev] = r;
        out.matched_curr[m.idx_prev] = m.idx_curr;
        kept[m.idx_curr] = 1;
    }
    for (std::size_t i = 0; i < buffer.size(); ++i) {
        if (!per_entry[i]) continue;
        if (is_skip(*per_entry[i])) {
            out.modes[i] = BufferMode::Skip;
        } else {
            out.modes[i] = BufferMode::Inter;
            out.residuals.push_back(*per_entry[i]);
        }
    }
    for (std::size_t j = 0; j < curr.size(); ++j)
        if (!kept[j]) out.intra.push_back(j);
    return out;
}

/// Buffer after an update frame: surviving predictions in buffer order, then
/// the Intra keypoints. Shared by encoder and decoder.
inline std::vector<Keypoint> reconstruct_update(std::span<const Keypoint> buffer, const DecomposedAffine& Dq,
                                                std::span<const BufferMode> modes,
                                                std::span<const InterResidual> residuals,
                                                std::span<const Keypoint> intra, double f, int orientation_bits) {
    std::vector<Keypoint> out;
    std::size_t r = 0;
    for (std::size_t i = 0; i < buffer.size(); ++i) {
        switch (modes[i]) {
            case BufferMode::Skip: out.push_back(estimate_keypoint(buffer[i], Dq)); break;
            case BufferMode::Inter:
                out.push_back(apply_residual(estimate_keypoint(buffer[i], Dq), residuals[r++], f, orientation_bits));
                break;
            case BufferMode::Drop: break;
        }
    }
    out.insert(out.end(), intra.begin(), intra.end());
    return out;
}

/// Skip-frame propagation: every buffered keypoint moves under Dq.
inline void s_frame_update(KeypointBuffer& buffer, const DecomposedAffine& Dq, int width, int height) {
    for (auto& k : buffer.keypoints) k = estimate_keypoint(k, Dq);
    buffer.prune(width, height);
}

}  // namespace kpcodec
