#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "kpcodec/codec.hpp"
#include "kpcodec/errors.hpp"
#include "kpcodec/geometry.hpp"
#include "kpcodec/kpquant.hpp"
#include "kpcodec/model.hpp"

namespace kpcodec::harness {

/// Synthetic scene. Per-frame motion is applied about the frame centre; a
/// scene cut replaces every keypoint and descriptor.
struct SceneConfig {
    std::uint64_t seed = 1;
    int frames = 10;
    int width = 640;
    int height = 480;
    int num_features = 150;
    int descriptor_dim = 32;

    // per-frame motion
    double tx = 0.0, ty = 0.0;
    double phi = 0.0;
    double r1 = 1.0, r2 = 1.0;
    double q = 0.0;

    // observation noise
    double location_jitter = 0.0;     // px, Gaussian sd
    double scale_jitter = 0.0;        // relative sd
    double orientation_jitter = 0.0;  // rad sd
    double dropout = 0.0;             // per-feature per-frame
    double distractors = 0.0;         // extra random features as a fraction of num_features
    double descriptor_noise = 0.02;   // per-dimension sd

    int scene_cut_every = 0;     // 0: never
    double scale_spread = 0.15;  // half-width of the offset from the scale lattice, in scale steps
    int max_octave = 4;
    double margin = 16.0;         // px kept free at each border when seeding keypoints
    double min_separation = 3.0;  // px between seeded keypoints

    AffineTransform step_transform() const {
        const DecomposedAffine D{r1, r2, q, phi, 0.0, 0.0};
        AffineTransform A = recompose(D);
        const double cx = 0.5 * width, cy = 0.5 * height;
        double ax, ay;
        A.apply(cx, cy, ax, ay);
        A.tx = cx - ax + tx;
        A.ty = cy - ay + ty;
        return A;
    }

    void validate() const {
        const auto need = [](bool ok, const char* m) {
            if (!ok) throw ConfigError(std::string("scene: ") + m);
        };
        need(frames >= 1, "frames must be >= 1");
        need(width >= 8 && width <= 65535 && height >= 8 && height <= 65535, "width/height must lie in [8, 65535]");
        need(num_features >= 0, "num_features must be >= 0");
        need(descriptor_dim >= 1, "descriptor_dim must be >= 1");
        need(r1 > 0.0 && r2 > 0.0, "r1 and r2 must be positive");
        need(std::abs(recompose({r1, r2, q, phi, 0, 0}).det()) > 1e-6, "motion must be invertible");
        need(location_jitter >= 0 && scale_jitter >= 0 && orientation_jitter >= 0 && descriptor_noise >= 0,
             "jitters must be non-negative");
        need(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
        need(distractors >= 0.0, "distractors must be non-negative");
        need(scene_cut_every >= 0, "scene_cut_every must be >= 0");
        need(scale_spread >= 0.0 && scale_spread < 0.5, "scale_spread must lie in [0, 0.5)");
        need(max_octave >= 0 && max_octave <= kMaxOctave, "max_octave must lie in [0, 7]");
        need(margin >= 0.0 && 2 * margin < std::min(width, height), "margin too large for the frame");
        need(min_separation >= 0.0, "min_separation must be non-negative");
    }
};

/// Parses `key = value` lines; `#` starts a comment.
inline SceneConfig parse_scene(std::istream& in) {
    SceneConfig s;
    std::string raw;
    std::size_t line = 0;
    while (std::getline(in, raw)) {
        ++line;
        if (auto h = raw.find('#'); h != std::string::npos) raw.erase(h);
        const auto first = raw.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto eq = raw.find('=');
        if (eq == std::string::npos) throw ParseError(line, "expected key = value");
        auto trim = [](std::string v) {
            const auto b = v.find_first_not_of(" \t\r");
            const auto e = v.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string{} : v.substr(b, e - b + 1);
        };
        const std::string key = trim(raw.substr(0, eq));
        const std::string val = trim(raw.substr(eq + 1));
        std::istringstream vs(val);
        auto num = [&](auto& dst) {
            vs >> dst;
            std::string rest;
            if (vs.fail() || (vs >> rest)) throw ParseError(line, "bad value for '" + key + "': " + val);
        };
        if (key == "seed") num(s.seed);
        else if (key == "frames") num(s.frames);
        else if (key == "width") num(s.width);
        else if (key == "height") num(s.height);
        else if (key == "num_features") num(s.num_features);
        else if (key == "descriptor_dim") num(s.descriptor_dim);
        else if (key == "tx") num(s.tx);
        else if (key == "ty") num(s.ty);
        else if (key == "phi") num(s.phi);
        else if (key == "r1") num(s.r1);
        else if (key == "r2") num(s.r2);
        else if (key == "q") num(s.q);
        else if (key == "location_jitter") num(s.location_jitter);
        else if (key == "scale_jitter") num(s.scale_jitter);
        else if (key == "orientation_jitter") num(s.orientation_jitter);
        else if (key == "dropout") num(s.dropout);
        else if (key == "distractors") num(s.distractors);
        else if (key == "descriptor_noise") num(s.descriptor_noise);
        else if (key == "scene_cut_every") num(s.scene_cut_every);
        else if (key == "scale_spread") num(s.scale_spread);
        else if (key == "max_octave") num(s.max_octave);
        else if (key == "margin") num(s.margin);
        else if (key == "min_separation") num(s.min_separation);
        else throw ParseError(line, "unknown key '" + key + "'");
    }
    s.validate();
    return s;
}

inline std::string scene_to_string(const SceneConfig& s) {
    std::ostringstream o;
    o.precision(17);
    o << "seed = " << s.seed << "\nframes = " << s.frames << "\nwidth = " << s.width << "\nheight = " << s.height
      << "\nnum_features = " << s.num_features << "\ndescriptor_dim = " << s.descriptor_dim << "\ntx = " << s.tx
      << "\nty = " << s.ty << "\nphi = " << s.phi << "\nr1 = " << s.r1 << "\nr2 = " << s.r2 << "\nq = " << s.q
      << "\nlocation_jitter = " << s.location_jitter << "\nscale_jitter = " << s.scale_jitter
      << "\norientation_jitter = " << s.orientation_jitter << "\ndropout = " << s.dropout
      << "\ndistractors = " << s.distractors << "\ndescriptor_noise = " << s.descriptor_noise
      << "\nscene_cut_every = " << s.scene_cut_every << "\nscale_spread = " << s.scale_spread
      << "\nmax_octave = " << s.max_octave << "\nmargin = " << s.margin << "\nmin_separation = " << s.min_separation
      << "\n";
    return o.str();
}

struct SyntheticSequence {
    SceneConfig scene;
    std::vector<FrameFeatures> frames;
    std::vector<std::vector<Keypoint>> truth;    // noiseless in-frame keypoints per frame
    std::vector<std::vector<int>> truth_ids;     // parallel to truth
    std::vector<std::vector<int>> feature_ids;   // per observed feature; -1 for distractors
    std::vector<DecomposedAffine> motion;        // ground truth previous -> current; identity at frame 0 and cuts
    std::vector<char> cut;                       // frame starts a new scene
};

namespace detail {

struct Track {
    int id;
    Keypoint kp;
    std::vector<float> descriptor;
};

inline std::vector<float> random_descriptor(std::mt19937_64& rng, int dim) {
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    std::vector<float> d(static_cast<std::size_t>(dim));
    for (auto& v : d) v = u(rng);
    return d;
}

inline Keypoint random_keypoint(std::mt19937_64& rng, const SceneConfig& s) {
    std::uniform_real_distribution<double> ux(s.margin, s.width - s.margin);
    std::uniform_real_distribution<double> uy(s.margin, s.height - s.margin);
    std::uniform_int_distribution<int> uo(0, s.max_octave);
    std::uniform_int_distribution<int> us(0, kScalesPerOctave - 1);
    std::uniform_real_distribution<double> uoff(-s.scale_spread, s.scale_spread);
    std::uniform_real_distribution<double> ut(kThetaMin, kThetaMax);
    Keypoint k;
    k.x = ux(rng);
    k.y = uy(rng);
    const int o = uo(rng);
    const int si = us(rng);
    k.sigma = kBaseScale * std::exp2(o + (si + uoff(rng)) / kScalesPerOctave);
    k.theta = ut(rng);
    return k;
}

inline std::vector<Track> seed_tracks(std::mt19937_64& rng, const SceneConfig& s, int& next_id) {
    std::vector<Track> out;
    const double sep2 = s.min_separation * s.min_separation;
    int attempts = 0;
    while (static_cast<int>(out.size()) < s.num_features && attempts < 100 * std::max(1, s.num_features)) {
        ++attempts;
        Keypoint k = random_keypoint(rng, s);
        bool ok = true;
        for (const auto& t : out) {
            const double dx = t.kp.x - k.x, dy = t.kp.y - k.y;
            if (dx * dx + dy * dy < sep2) {
                ok = false;
                break;
            }
        }
        auto desc = random_descriptor(rng, s.descriptor_dim);
        if (ok) out.push_back({next_id++, k, std::move(desc)});
    }
    return out;
}

}  // namespace detail

/// Deterministic under `scene.seed`.
inline SyntheticSequence generate(const SceneConfig& scene) {
    scene.validate();
    SyntheticSequence seq;
    seq.scene = scene;
    std::mt19937_64 rng(scene.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const AffineTransform step = scene.step_transform();
    const DecomposedAffine step_d = decompose(step);
    int next_id = 0;
    std::vector<detail::Track> tracks = detail::seed_tracks(rng, scene, next_id);
    const int n_distractors = static_cast<int>(std::lround(scene.distractors * scene.num_features));

    for (int k = 0; k < scene.frames; ++k) {
        const bool cut = k > 0 && scene.scene_cut_every > 0 && k % scene.scene_cut_every == 0;
        if (cut) tracks = detail::seed_tracks(rng, scene, next_id);
        if (k > 0 && !cut)
            for (auto& t : tracks) t.kp = estimate_keypoint(t.kp, step_d);
        seq.motion.push_back(k > 0 && !cut ? step_d : DecomposedAffine{});
        seq.cut.push_back(cut ? 1 : 0);

        FrameFeatures f;
        f.frame_index = k;
        f.width = scene.width;
        f.height = scene.height;
        std::vector<Keypoint> truth;
        std::vector<int> truth_ids, feature_ids;
        for (const auto& t : tracks) {
            if (!in_bounds(t.kp, scene.width, scene.height)) continue;
            truth.push_back(t.kp);
            truth_ids.push_back(t.id);
            const bool dropped = scene.dropout > 0.0 && unit(rng) < scene.dropout;
            Keypoint obs = t.kp;
            if (scene.location_jitter > 0) {
                obs.x += scene.location_jitter * gauss(rng);
                obs.y += scene.location_jitter * gauss(rng);
            }
            if (scene.scale_jitter > 0) obs.sigma *= std::max(0.5, 1.0 + scene.scale_jitter * gauss(rng));
            if (scene.orientation_jitter > 0) obs.theta = wrap_orientation(obs.theta + scene.orientation_jitter * gauss(rng));
            Feature ft{obs, t.descriptor};
            if (scene.descriptor_noise > 0)
                for (auto& v : ft.descriptor) v += static_cast<float>(scene.descriptor_noise * gauss(rng));
            if (dropped || !in_bounds(obs, scene.width, scene.height)) continue;
            f.features.push_back(std::move(ft));
            feature_ids.push_back(t.id);
        }
        for (int i = 0; i < n_distractors; ++i) {
            Feature ft{detail::random_keypoint(rng, scene), detail::random_descriptor(rng, scene.descriptor_dim)};
            f.features.push_back(std::move(ft));
            feature_ids.push_back(-1);
        }
        seq.frames.push_back(std::move(f));
        seq.truth.push_back(std::move(truth));
        seq.truth_ids.push_back(std::move(truth_ids));
        seq.feature_ids.push_back(std::move(feature_ids));
    }
    return seq;
}

/// Normalized scale offsets of every observed keypoint, the training corpus
/// for the scale-offset codebook.
inline std::vector<double> scale_offset_samples(std::span<const FrameFeatures> frames) {
    std::vector<double> out;
    for (const auto& f : frames)
        for (const auto& ft : f.features) {
            try {
                const auto [o, s] = nearest_lattice_point(ft.keypoint.sigma);
                out.push_back(normalized_scale_offset(ft.keypoint.sigma, o, s));
            } catch (const ScaleOutOfRange&) {
            }
        }
    return out;
}

/// Scene whose scale offsets train the built-in default codebook.
inline SceneConfig reference_corpus_scene() {
    SceneConfig s;
    s.seed = 20240601;
    s.frames = 20;
    s.num_features = 500;
    s.scale_jitter = 0.0;
    s.scene_cut_every = 1;
    return s;
}

inline LloydMaxCodebook train_reference_codebook() {
    const auto seq = generate(reference_corpus_scene());
    const auto samples = scale_offset_samples(seq.frames);
    return train_lloyd_max(samples, 2);
}

/// Codebook trained on the stream itself, or the default when the stream has
/// too few keypoints.
inline LloydMaxCodebook codebook_for(std::span<const FrameFeatures> frames) {
    const auto samples = scale_offset_samples(frames);
    try {
        return train_lloyd_max(samples, 2);
    } catch (const InsufficientSamples&) {
        return default_scale_codebook();
    }
}

// ------------------------------------------------------------ evaluation

struct FrameMetrics {
    std::int64_t frame_index = 0;
    FrameType type = FrameType::D;
    std::size_t bits = 0;
    std::size_t truth = 0;
    std::size_t decoded = 0;
    std::size_t matched = 0;
    double surviving_fraction = 0.0;  // matched / truth; 0 for N frames
    double mean_location_error = 0.0;
    double mean_scale_error = 0.0;  // relative
    double mean_orientation_error = 0.0;
    double max_location_error = 0.0;
    double max_scale_error = 0.0;
    double max_orientation_error = 0.0;
};

struct MetricsReport {
    std::vector<FrameMetrics> frames;
    std::size_t header_bits = 0;
    std::size_t total_bits = 0;  // frame records only
    std::size_t count_d = 0, count_s = 0, count_u = 0, count_n = 0;
    std::size_t matched_pairs = 0;
    double mean_location_error = 0.0;
    double mean_scale_error = 0.0;
    double mean_orientation_error = 0.0;
    double max_location_error = 0.0;
    double max_scale_error = 0.0;
    double max_orientation_error = 0.0;
    double mean_surviving_fraction = 0.0;  // over frames with side information
    double min_surviving_fraction = 0.0;
    double mean_matched = 0.0;             // average matches per coded frame
    double bits_per_frame = 0.0;

    std::size_t detection_update_frames() const { return count_d + count_u; }
};

inline double orientation_error(double a, double b) {
    double d = std::fmod(std::abs(a - b), kTwoPi);
    return std::min(d, kTwoPi - d);
}

/// One-to-one greedy nearest assignment within `radius` px; returns pairs
/// (truth index, decoded index).
inline std::vector<std::pair<std::size_t, std::size_t>> associate(std::span<const Keypoint> truth,
                                                                   std::span<const Keypoint> decoded,
                                                                   double radius = 4.0) {
    struct Cand {
        double d2;
        std::size_t t, k;
    };
    std::vector<Cand> c;
    const double r2 = radius * radius;
    for (std::size_t t = 0; t < truth.size(); ++t)
        for (std::size_t k = 0; k < decoded.size(); ++k) {
            const double dx = truth[t].x - decoded[k].x, dy = truth[t].y - decoded[k].y;
            const double d2 = dx * dx + dy * dy;
            if (d2 <= r2) c.push_back({d2, t, k});
        }
    std::stable_sort(c.begin(), c.end(), [](const Cand& a, const Cand& b) { return a.d2 < b.d2; });
    std::vector<char> ut(truth.size(), 0), uk(decoded.size(), 0);
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (const auto& x : c) {
        if (ut[x.t] || uk[x.k]) continue;
        ut[x.t] = uk[x.k] = 1;
        out.emplace_back(x.t, x.k);
    }
    return out;
}

inline MetricsReport evaluate(const SyntheticSequence& seq, const std::vector<std::vector<Keypoint>>& decoded,
                              const EncodeReport& report) {
    if (decoded.size() != seq.truth.size() || report.frames.size() != seq.truth.size())
        throw ConfigError("evaluate: sequences are not aligned");
    MetricsReport m;
    m.header_bits = report.header_bits;
    double sum_loc = 0, sum_scale = 0, sum_ori = 0, sum_frac = 0, sum_matched = 0;
    std::size_t coded = 0;
    m.min_surviving_fraction = 1.0;
    for (std::size_t i = 0; i < seq.truth.size(); ++i) {
        FrameMetrics fm;
        fm.frame_index = report.frames[i].frame_index;
        fm.type = report.frames[i].type;
        fm.bits = report.frames[i].bits;
        fm.truth = seq.truth[i].size();
        fm.decoded = decoded[i].size();
        m.total_bits += fm.bits;
        switch (fm.type) {
            case FrameType::D: ++m.count_d; break;
            case FrameType::S: ++m.count_s; break;
            case FrameType::U: ++m.count_u; break;
            case FrameType::N: ++m.count_n; break;
        }
        if (fm.type != FrameType::N) {
            const auto pairs = associate(seq.truth[i], decoded[i]);
            fm.matched = pairs.size();
            for (auto [t, k] : pairs) {
                const auto& g = seq.truth[i][t];
                const auto& d = decoded[i][k];
                const double le = std::hypot(g.x - d.x, g.y - d.y);
                const double se = std::abs(d.sigma - g.sigma) / g.sigma;
                const double oe = orientation_error(g.theta, d.theta);
                fm.mean_location_error += le;
                fm.mean_scale_error += se;
                fm.mean_orientation_error += oe;
                fm.max_location_error = std::max(fm.max_location_error, le);
                fm.max_scale_error = std::max(fm.max_scale_error, se);
                fm.max_orientation_error = std::max(fm.max_orientation_error, oe);
            }
            sum_loc += fm.mean_location_error;
            sum_scale += fm.mean_scale_error;
            sum_ori += fm.mean_orientation_error;
            if (fm.matched > 0) {
                fm.mean_location_error /= static_cast<double>(fm.matched);
                fm.mean_scale_error /= static_cast<double>(fm.matched);
                fm.mean_orientation_error /= static_cast<double>(fm.matched);
            }
            fm.surviving_fraction = fm.truth ? static_cast<double>(fm.matched) / static_cast<double>(fm.truth) : 1.0;
            m.matched_pairs += fm.matched;
            m.max_location_error = std::max(m.max_location_error, fm.max_location_error);
            m.max_scale_error = std::max(m.max_scale_error, fm.max_scale_error);
            m.max_orientation_error = std::max(m.max_orientation_error, fm.max_orientation_error);
            m.min_surviving_fraction = std::min(m.min_surviving_fraction, fm.surviving_fraction);
            sum_frac += fm.surviving_fraction;
            sum_matched += static_cast<double>(fm.matched);
            ++coded;
        }
        m.frames.push_back(fm);
    }
    if (m.matched_pairs > 0) {
        const double n = static_cast<double>(m.matched_pairs);
        m.mean_location_error = sum_loc / n;
        m.mean_scale_error = sum_scale / n;
        m.mean_orientation_error = sum_ori / n;
    }
    if (coded > 0) {
        m.mean_surviving_fraction = sum_frac / static_cast<double>(coded);
        m.mean_matched = sum_matched / static_cast<double>(coded);
    } else {
        m.min_surviving_fraction = 0.0;
    }
    m.bits_per_frame = seq.truth.empty() ? 0.0 : static_cast<double>(m.total_bits) / static_cast<double>(seq.truth.size());
    return m;
}

inline void write_metrics_csv(const MetricsReport& m, std::ostream& out) {
    out << "frame,type,bits,truth,decoded,matched,surviving_fraction,mean_location_error,mean_scale_error,"
           "mean_orientation_error,max_location_error,max_scale_error,max_orientation_error\n";
    for (const auto& f : m.frames) {
        out << f.frame_index << ',' << frame_type_char(f.type) << ',' << f.bits << ',' << f.truth << ','
            << f.decoded << ',' << f.matched << ',' << f.surviving_fraction << ',' << f.mean_location_error << ','
            << f.mean_scale_error << ',' << f.mean_orientation_error << ',' << f.max_location_error << ','
            << f.max_scale_error << ',' << f.max_orientation_error << '\n';
    }
}

inline void write_summary_csv(const MetricsReport& m, std::ostream& out) {
    out << "metric,value\n"
        << "frames," << m.frames.size() << '\n'
        << "header_bits," << m.header_bits << '\n'
        << "total_bits," << m.total_bits << '\n'
        << "bits_per_frame," << m.bits_per_frame << '\n'
        << "d_frames," << m.count_d << '\n'
        << "s_frames," << m.count_s << '\n'
        << "u_frames," << m.count_u << '\n'
        << "n_frames," << m.count_n << '\n'
        << "mean_matched," << m.mean_matched << '\n'
        << "mean_surviving_fraction," << m.mean_surviving_fraction << '\n'
        << "min_surviving_fraction," << m.min_surviving_fraction << '\n'
        << "mean_location_error," << m.mean_location_error << '\n'
        << "mean_scale_error," << m.mean_scale_error << '\n'
        << "mean_orientation_error," << m.mean_orientation_error << '\n'
        << "max_location_error," << m.max_location_error << '\n'
        << "max_scale_error," << m.max_scale_error << '\n'
        << "max_orientation_error," << m.max_orientation_error << '\n';
}

struct SimulationResult {
    SyntheticSequence sequence;
    EncodedStream encoded;
    DecodedStream decoded;
    MetricsReport metrics;
};

/// generate -> encode -> decode -> evaluate. The codebook is trained on the
/// generated stream unless `train_codebook` is false.
inline SimulationResult simulate(const SceneConfig& scene, CodecConfig cfg, bool train_codebook = true) {
    SimulationResult r;
    r.sequence = generate(scene);
    std::size_t most = 1;
    for (const auto& f : r.sequence.frames) most = std::max(most, f.size());
    cfg.max_features = std::max(cfg.max_features, most);
    if (train_codebook) cfg.codebook = codebook_for(r.sequence.frames);
    r.encoded = encode_stream(r.sequence.frames, cfg);
    r.decoded = decode_stream(r.encoded.bytes, cfg.location.table);
    std::vector<std::vector<Keypoint>> kps;
    for (const auto& f : r.decoded.frames) kps.push_back(f.keypoints);
    r.metrics = evaluate(r.sequence, kps, r.encoded.report);
    return r;
}

}  // namespace kpcodec::harness
