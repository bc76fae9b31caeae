#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kpcodec/bitio.hpp"
#include "kpcodec/entropy.hpp"
#include "kpcodec/errors.hpp"
#include "kpcodec/framecontrol.hpp"
#include "kpcodec/geometry.hpp"
#include "kpcodec/kpquant.hpp"
#include "kpcodec/matching.hpp"
#include "kpcodec/model.hpp"

namespace kpcodec {

inline constexpr std::array<std::uint8_t, 4> kMagic{'K', 'P', 'C', '1'};
inline constexpr std::uint8_t kFormatVersion = 1;
inline constexpr int kFrameTypeBits = 2;
inline constexpr int kCountBits = 16;
inline constexpr int kSegmentLengthBits = 16;
inline constexpr std::size_t kMaxSegmentBits = (1u << kSegmentLengthBits) - 1;

inline std::int32_t to_q16(double v) { return static_cast<std::int32_t>(std::lround(v * 65536.0)); }
inline double from_q16(std::int32_t v) { return static_cast<double>(v) / 65536.0; }

/// FNV-1a over the little-endian bytes of a context table.
inline std::uint32_t context_table_checksum(std::span<const std::uint32_t> table) {
    std::uint32_t h = 2166136261u;
    for (auto v : table) {
        for (int b = 0; b < 4; ++b) {
            h ^= (v >> (8 * b)) & 0xffu;
            h *= 16777619u;
        }
    }
    return h;
}

/// Rounds codebook levels to what the header can carry.
inline LloydMaxCodebook header_codebook(const LloydMaxCodebook& cb) {
    std::vector<double> lv;
    for (double l : cb.levels) lv.push_back(from_q16(to_q16(l)));
    return LloydMaxCodebook::from_levels(std::move(lv));
}

struct StreamHeader {
    std::uint8_t version = kFormatVersion;
    std::uint8_t coder_variant = kCoderVariant;
    std::uint16_t width = 0;
    std::uint16_t height = 0;
    std::uint32_t first_frame_index = 0;
    std::uint32_t frame_count = 0;
    std::uint16_t max_features = 200;
    std::int32_t location_factor_q16 = 1 << 16;
    std::uint8_t orientation_bits = kOrientationBits;
    std::int32_t t_max_q16 = 64 << 16;
    // Encoder-side parameters, recorded for reproducibility only.
    std::int32_t epsilon_q16 = to_q16(0.8);
    std::uint8_t stability_window = 4;
    std::int32_t nndr_q16 = to_q16(0.8);
    std::uint64_t seed = 0;
    std::uint8_t scheme = 0;
    std::array<std::int32_t, 2> codebook_q16{};
    std::uint8_t context_table_id = 0;  // 0: uniform initial counts, 1: external table
    std::uint32_t context_checksum = 0;
    std::uint8_t context_range = 49;
    std::uint8_t context_window = 49;

    static constexpr std::size_t kBits = 496;

    double location_factor() const { return from_q16(location_factor_q16); }
    double t_max() const { return from_q16(t_max_q16); }
    LloydMaxCodebook codebook() const {
        return LloydMaxCodebook::from_levels({from_q16(codebook_q16[0]), from_q16(codebook_q16[1])});
    }

    void write(BitWriter& w) const {
        for (auto m : kMagic) w.write_bits(m, 8);
        w.write_bits(version, 8);
        w.write_bits(coder_variant, 8);
        w.write_bits(width, 16);
        w.write_bits(height, 16);
        w.write_bits(first_frame_index, 32);
        w.write_bits(frame_count, 32);
        w.write_bits(max_features, 16);
        w.write_bits(static_cast<std::uint32_t>(location_factor_q16), 32);
        w.write_bits(orientation_bits, 8);
        w.write_bits(static_cast<std::uint32_t>(t_max_q16), 32);
        w.write_bits(static_cast<std::uint32_t>(epsilon_q16), 32);
        w.write_bits(stability_window, 8);
        w.write_bits(static_cast<std::uint32_t>(nndr_q16), 32);
        w.write_bits(seed, 64);
        w.write_bits(scheme, 8);
        w.write_bits(static_cast<std::uint32_t>(codebook_q16[0]), 32);
        w.write_bits(static_cast<std::uint32_t>(codebook_q16[1]), 32);
        w.write_bits(context_table_id, 8);
        w.write_bits(context_checksum, 32);
        w.write_bits(context_range, 8);
        w.write_bits(context_window, 8);
    }

    static StreamHeader read(BitReader& r) {
        for (auto m : kMagic)
            if (r.read_bits(8) != m) throw CorruptStream(0, "bad magic, not a KPC1 stream");
        StreamHeader h;
        h.version = static_cast<std::uint8_t>(r.read_bits(8));
        if (h.version != kFormatVersion)
            throw CorruptStream(32, "unsupported format version " + std::to_string(h.version));
        h.coder_variant = static_cast<std::uint8_t>(r.read_bits(8));
        if (h.coder_variant != kCoderVariant)
            throw CorruptStream(40, "unsupported coder variant " + std::to_string(h.coder_variant));
        h.width = static_cast<std::uint16_t>(r.read_bits(16));
        h.height = static_cast<std::uint16_t>(r.read_bits(16));
        h.first_frame_index = static_cast<std::uint32_t>(r.read_bits(32));
        h.frame_count = static_cast<std::uint32_t>(r.read_bits(32));
        h.max_features = static_cast<std::uint16_t>(r.read_bits(16));
        h.location_factor_q16 = static_cast<std::int32_t>(r.read_bits(32));
        h.orientation_bits = static_cast<std::uint8_t>(r.read_bits(8));
        h.t_max_q16 = static_cast<std::int32_t>(r.read_bits(32));
        h.epsilon_q16 = static_cast<std::int32_t>(r.read_bits(32));
        h.stability_window = static_cast<std::uint8_t>(r.read_bits(8));
        h.nndr_q16 = static_cast<std::int32_t>(r.read_bits(32));
        h.seed = r.read_bits(64);
        h.scheme = static_cast<std::uint8_t>(r.read_bits(8));
        h.codebook_q16[0] = static_cast<std::int32_t>(r.read_bits(32));
        h.codebook_q16[1] = static_cast<std::int32_t>(r.read_bits(32));
        h.context_table_id = static_cast<std::uint8_t>(r.read_bits(8));
        h.context_checksum = static_cast<std::uint32_t>(r.read_bits(32));
        h.context_range = static_cast<std::uint8_t>(r.read_bits(8));
        h.context_window = static_cast<std::uint8_t>(r.read_bits(8));
        if (h.width == 0 || h.height == 0) throw CorruptStream(48, "zero frame dimension");
        if (h.location_factor_q16 <= 0) throw CorruptStream(160, "non-positive location factor");
        if (h.orientation_bits < 3 || h.orientation_bits > 16) throw CorruptStream(192, "bad orientation bits");
        if (h.t_max_q16 <= 0) throw CorruptStream(200, "non-positive T_max");
        if (!(h.codebook_q16[0] < h.codebook_q16[1])) throw CorruptStream(376, "codebook levels not increasing");
        if (h.context_range == 0 || h.context_window == 0) throw CorruptStream(480, "empty context model");
        return h;
    }
};

// --------------------------------------------------------- record blocks

/// n (16) | location segment length (16) | location segment | n * (6 + t) bits
inline void write_intra_block(std::span<const IntraKeypoint> kps, const LocationGrid& grid,
                              const LocationContextConfig& ctx, int orientation_bits, BitWriter& out) {
    if (kps.size() > 0xffff) throw ConfigError("too many intra keypoints for one record");
    std::vector<QuantizedLocation> cells;
    cells.reserve(kps.size());
    for (const auto& k : kps) cells.push_back(k.cell);
    BitWriter seg;
    if (!kps.empty()) {
        ArithmeticEncoder enc(seg);
        const auto coded = encode_locations(cells, grid, ctx, enc);
        enc.finish();
        if (coded.size() != kps.size()) throw LocationOutOfGrid("intra keypoints must occupy distinct cells");
    }
    if (seg.bit_count() > kMaxSegmentBits) throw ConfigError("location segment exceeds 65535 bits");
    out.write_bits(kps.size(), kCountBits);
    out.write_bits(seg.bit_count(), kSegmentLengthBits);
    out.append(seg);
    for (const auto& k : kps) {
        out.write_bits(k.scale.pack(), ScaleCode::kBits);
        out.write_bits(k.orientation.index, orientation_bits);
    }
}

inline std::vector<IntraKeypoint> read_intra_block(BitReader& in, const LocationGrid& grid,
                                                   const LocationContextConfig& ctx, int orientation_bits) {
    const auto n = static_cast<std::size_t>(in.read_bits(kCountBits));
    const auto len = static_cast<std::size_t>(in.read_bits(kSegmentLengthBits));
    const std::size_t seg_start = in.position();
    if ((n > 0) != (len > 0)) throw CorruptStream(seg_start, "location segment length disagrees with the count");
    std::vector<QuantizedLocation> cells;
    if (len > 0) {
        BitReader seg = in.sub_reader(len);
        ArithmeticDecoder dec(seg);
        cells = decode_locations(grid, ctx, dec);
    }
    if (cells.size() != n)
        throw CorruptStream(seg_start, "location segment holds " + std::to_string(cells.size()) +
                                           " keypoints, header says " + std::to_string(n));
    std::vector<IntraKeypoint> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t at = in.position();
        out[i].cell = cells[i];
        out[i].scale = ScaleCode::unpack(static_cast<std::uint32_t>(in.read_bits(ScaleCode::kBits)));
        out[i].orientation.index = static_cast<std::uint32_t>(in.read_bits(orientation_bits));
        if (out[i].scale.intra_scale > 2) throw CorruptStream(at, "intra scale index above 2");
        out[i].source = i;
    }
    return out;
}

/// symbol segment length (16) | modes + residuals
inline void write_update_symbols(std::span<const BufferMode> modes, std::span<const InterResidual> residuals,
                                 BitWriter& out) {
    BitWriter seg;
    ArithmeticEncoder enc(seg);
    encode_update_symbols(modes, residuals, enc);
    enc.finish();
    if (seg.bit_count() > kMaxSegmentBits) throw ConfigError("update symbol segment exceeds 65535 bits");
    out.write_bits(seg.bit_count(), kSegmentLengthBits);
    out.append(seg);
}

inline std::pair<std::vector<BufferMode>, std::vector<InterResidual>> read_update_symbols(BitReader& in,
                                                                                         std::size_t buffer_size) {
    const auto len = static_cast<std::size_t>(in.read_bits(kSegmentLengthBits));
    const std::size_t seg_start = in.position();
    if (buffer_size == 0) {
        if (len != 0) throw CorruptStream(seg_start, "symbol segment present for an empty buffer");
        return {};
    }
    if (len == 0) throw CorruptStream(seg_start, "missing symbol segment");
    BitReader seg = in.sub_reader(len);
    ArithmeticDecoder dec(seg);
    auto res = decode_update_symbols(buffer_size, dec);
    for (auto m : res.first)
        if (static_cast<int>(m) > 2) throw CorruptStream(seg_start, "invalid mode symbol");
    return res;
}

// ------------------------------------------------------------- encoder

struct FrameReport {
    std::int64_t frame_index = 0;
    FrameType type = FrameType::D;
    std::size_t bits = 0;
    std::size_t skip = 0;
    std::size_t inter = 0;
    std::size_t intra = 0;
    std::size_t drop = 0;
    int clamps = 0;
    std::size_t keypoints = 0;  // decoded keypoints after this frame
};

struct EncodeReport {
    std::size_t header_bits = StreamHeader::kBits;
    std::vector<FrameReport> frames;
    std::vector<std::vector<Keypoint>> decoded;  // encoder-side reconstruction per frame

    std::size_t payload_bits() const {
        std::size_t s = 0;
        for (const auto& f : frames) s += f.bits;
        return s;
    }
    std::size_t count(FrameType t) const {
        std::size_t n = 0;
        for (const auto& f : frames) n += f.type == t;
        return n;
    }
};

struct EncodedStream {
    std::vector<std::uint8_t> bytes;
    EncodeReport report;
};

/// Streaming keypoint encoder. Frames are pushed in index order; records are
/// committed with at most N_s frames of latency.
class Encoder {
public:
    Encoder(CodecConfig cfg, int width, int height) : cfg_(std::move(cfg)), width_(width), height_(height) {
        cfg_.validate();
        if (width <= 0 || height <= 0 || width > 0xffff || height > 0xffff)
            throw ConfigError("frame dimensions must lie in [1, 65535]");
        cfg_.codebook = header_codebook(cfg_.codebook);
        if (!(cfg_.codebook.levels[0] < cfg_.codebook.levels[1]))
            throw ConfigError("scale offset codebook levels must be increasing");
        cfg_.t_max = from_q16(to_q16(cfg_.t_max));
        cfg_.location_factor = from_q16(to_q16(cfg_.location_factor));
        if (cfg_.location.context_range > 255 || cfg_.location.window > 255)
            throw ConfigError("context range and window must be <= 255");
    }

    const CodecConfig& config() const noexcept { return cfg_; }

    void push(FrameFeatures frame) {
        if (finished_) throw ConfigError("encoder already finished");
        validate_frame(frame);
        if (!first_index_) first_index_ = frame.frame_index;
        next_index_ = frame.frame_index + 1;
        ++frame_count_;
        for (auto& f : frame.features) f.keypoint.theta = wrap_orientation(f.keypoint.theta);
        try {
            process(std::move(frame));
        } catch (const FrameError&) {
            throw;
        } catch (const Error& e) {
            throw FrameError(current_index_, e.what());
        }
    }

    EncodedStream finish() {
        if (!finished_) {
            if (leader_) commit_window();
            finished_ = true;
        }
        StreamHeader h = make_header();
        BitWriter all;
        h.write(all);
        all.append(body_);
        EncodedStream out;
        out.report = report_;
        out.report.header_bits = StreamHeader::kBits;
        out.bytes = std::move(all).take();
        return out;
    }

private:
    struct Pending {
        FrameFeatures frame;
        Classification cls;
    };

    void validate_frame(const FrameFeatures& f) const {
        const auto fail = [&](const std::string& m) { throw FrameError(f.frame_index, m); };
        if (f.width != width_ || f.height != height_) fail("frame dimensions differ from the stream");
        if (first_index_ && f.frame_index != next_index_) fail("frame indices must be consecutive");
        if (f.frame_index < 0 || f.frame_index > 0xffffffffLL) fail("frame index out of range");
        if (f.features.size() > cfg_.max_features) fail("more features than max_features");
        std::size_t dim = f.features.empty() ? 0 : f.features.front().descriptor.size();
        if (descriptor_dim_ && !f.features.empty() && dim != *descriptor_dim_)
            fail("descriptor dimension differs from earlier frames");
        for (const auto& ft : f.features) {
            const auto& k = ft.keypoint;
            if (ft.descriptor.size() != dim) fail("inconsistent descriptor dimension");
            if (!std::isfinite(k.x) || !std::isfinite(k.y) || !std::isfinite(k.theta)) fail("non-finite keypoint");
            if (!(k.sigma > 0.0)) fail("non-positive scale");
            if (!in_bounds(k, width_, height_)) fail("keypoint outside the frame");
        }
        if (dim == 0 && !f.features.empty() && cfg_.scheme != Scheme::AllDetect)
            fail("descriptors are required for prediction");
    }

    void process(FrameFeatures frame) {
        current_index_ = frame.frame_index;
        if (!frame.features.empty()) descriptor_dim_ = frame.features.front().descriptor.size();
        if (cfg_.scheme == Scheme::AllDetect) {
            commit_d(frame);
            return;
        }

        Classification cls;
        if (force_d_) {
            force_d_ = false;
        } else {
            const FrameFeatures* anchor = leader_ ? &leader_->frame : (has_anchor_ ? &anchor_ : nullptr);
            cls = classify_frame(frame, last_seen_ ? &*last_seen_ : nullptr, anchor, cfg_);
        }
        last_seen_ = frame;

        if (cfg_.scheme == Scheme::DetectUpdate) {
            if (cls.type == FrameType::D) commit_d(frame);
            else commit_u(frame, cls);
            return;
        }

        if (!leader_) {
            if (cls.type == FrameType::S) {
                commit_s(frame, cls);
            } else {
                leader_ = Pending{std::move(frame), std::move(cls)};
                if (apply_nframe_rule({}, cfg_.stability_window, false) == WindowDecision::Commit) commit_window();
            }
            return;
        }

        const FrameType t = cls.type;
        successors_.push_back(Pending{std::move(frame), std::move(cls)});
        provisional_.push_back(t);
        switch (apply_nframe_rule(provisional_, cfg_.stability_window, false)) {
            case WindowDecision::Pending: break;
            case WindowDecision::Commit: commit_window(); break;
            case WindowDecision::Demote: {
                commit_n(leader_->frame);
                auto replay = std::move(successors_);
                leader_.reset();
                successors_.clear();
                provisional_.clear();
                force_d_ = true;
                for (auto& p : replay) process(std::move(p.frame));
                break;
            }
        }
    }

    void commit_window() {
        auto leader = std::move(*leader_);
        auto succ = std::move(successors_);
        leader_.reset();
        successors_.clear();
        provisional_.clear();
        current_index_ = leader.frame.frame_index;
        if (leader.cls.type == FrameType::U) commit_u(leader.frame, leader.cls);
        else commit_d(leader.frame);
        for (auto& p : succ) {
            current_index_ = p.frame.frame_index;
            commit_s(p.frame, p.cls);
        }
    }

    /// Affine model from the decoded buffer to the current frame, falling back
    /// to the previous-frame fit.
    std::optional<DecomposedAffine> prediction_transform(const FrameFeatures& frame, const Classification& cls) {
        std::vector<AffineTransform> candidates;
        if (buffer_.tracks_descriptors() && !frame.features.empty()) {
            const auto feats = buffer_.as_features();
            const auto m = unique_by_prev(nndr_match(std::span<const Feature>(feats),
                                                     std::span<const Feature>(frame.features), cfg_.nndr_threshold));
            RansacConfig rc = cfg_.ransac;
            rc.seed = cfg_.seed ^ (static_cast<std::uint64_t>(frame.frame_index) << 1) ^ 0x9e3779b97f4a7c15ull;
            const auto cur = keypoints_of(frame.features);
            auto fit = ransac_affine(m, std::span<const Keypoint>(buffer_.keypoints), std::span<const Keypoint>(cur), rc);
            if (auto* ok = std::get_if<AffineFit>(&fit)) candidates.push_back(ok->transform);
        }
        if (cls.prev_fit) candidates.push_back(cls.prev_fit->transform);
        for (const auto& T : candidates) {
            try {
                return decompose(T);
            } catch (const DegenerateTransform&) {
            }
        }
        return std::nullopt;
    }

    void write_affine(const DecomposedAffine& D, FrameReport& rep, DecomposedAffine& Dq) {
        const auto aq = cfg_.affine_quantizer();
        const auto Q = aq.quantize(D);
        rep.clamps = aq.clamp_count(D);
        body_.write_bits(Q.pack(), QuantizedAffine::kBits);
        Dq = aq.dequantize(Q);
    }

    void begin(FrameType t, const FrameFeatures& f, FrameReport& rep) {
        rep.frame_index = f.frame_index;
        rep.type = t;
        record_start_ = body_.bit_count();
        body_.write_bits(static_cast<std::uint32_t>(t), kFrameTypeBits);
    }

    void end(FrameReport& rep) {
        rep.bits = body_.bit_count() - record_start_;
        rep.keypoints = buffer_.size();
        report_.frames.push_back(rep);
        report_.decoded.push_back(buffer_.keypoints);
    }

    LocationGrid grid() const { return {width_, height_, cfg_.location_factor}; }

    void commit_d(const FrameFeatures& frame) {
        FrameReport rep;
        begin(FrameType::D, frame, rep);
        const auto kps = keypoints_of(frame.features);
        const auto intra = prepare_intra(kps, grid(), cfg_.codebook, cfg_.orientation_bits);
        write_intra_block(intra, grid(), cfg_.location, cfg_.orientation_bits, body_);
        buffer_.clear();
        for (const auto& ik : intra) {
            buffer_.keypoints.push_back(reconstruct_intra(ik, cfg_.location_factor, cfg_.codebook, cfg_.orientation_bits));
            buffer_.descriptors.push_back(frame.features[ik.source].descriptor);
        }
        rep.intra = intra.size();
        anchor_ = frame;
        has_anchor_ = true;
        end(rep);
    }

    void commit_s(const FrameFeatures& frame, const Classification& cls) {
        const auto D = prediction_transform(frame, cls);
        if (!D) {
            commit_d(frame);
            return;
        }
        FrameReport rep;
        begin(FrameType::S, frame, rep);
        DecomposedAffine Dq;
        write_affine(*D, rep, Dq);
        rep.skip = buffer_.size();
        s_frame_update(buffer_, Dq, width_, height_);
        rep.drop = rep.skip - buffer_.size();
        rep.skip = buffer_.size();
        end(rep);
    }

    void commit_u(const FrameFeatures& frame, const Classification& cls) {
        const auto D = prediction_transform(frame, cls);
        if (!D) {
            commit_d(frame);
            return;
        }
        FrameReport rep;
        begin(FrameType::U, frame, rep);
        DecomposedAffine Dq;
        write_affine(*D, rep, Dq);

        const auto ma = assign_modes(frame, buffer_, Dq, cfg_);
        write_update_symbols(ma.modes, ma.residuals, body_);

        std::vector<Keypoint> intra_kps;
        for (auto j : ma.intra) intra_kps.push_back(frame.features[j].keypoint);
        const auto intra = prepare_intra(intra_kps, grid(), cfg_.codebook, cfg_.orientation_bits);
        write_intra_block(intra, grid(), cfg_.location, cfg_.orientation_bits, body_);

        std::vector<Keypoint> intra_rec;
        for (const auto& ik : intra)
            intra_rec.push_back(reconstruct_intra(ik, cfg_.location_factor, cfg_.codebook, cfg_.orientation_bits));

        KeypointBuffer next;
        next.keypoints = reconstruct_update(buffer_.keypoints, Dq, ma.modes, ma.residuals, intra_rec,
                                            cfg_.location_factor, cfg_.orientation_bits);
        for (std::size_t i = 0; i < ma.modes.size(); ++i)
            if (ma.modes[i] != BufferMode::Drop) next.descriptors.push_back(frame.features[ma.matched_curr[i]].descriptor);
        for (const auto& ik : intra) next.descriptors.push_back(frame.features[ma.intra[ik.source]].descriptor);
        next.prune(width_, height_);
        buffer_ = std::move(next);

        rep.skip = ma.count(BufferMode::Skip);
        rep.inter = ma.count(BufferMode::Inter);
        rep.drop = ma.count(BufferMode::Drop);
        rep.intra = intra.size();
        anchor_ = frame;
        has_anchor_ = true;
        end(rep);
    }

    void commit_n(const FrameFeatures& frame) {
        FrameReport rep;
        begin(FrameType::N, frame, rep);
        buffer_.clear();
        has_anchor_ = false;
        end(rep);
    }

    StreamHeader make_header() const {
        StreamHeader h;
        h.width = static_cast<std::uint16_t>(width_);
        h.height = static_cast<std::uint16_t>(height_);
        h.first_frame_index = static_cast<std::uint32_t>(first_index_.value_or(0));
        h.frame_count = static_cast<std::uint32_t>(report_.frames.size());
        h.max_features = static_cast<std::uint16_t>(cfg_.max_features);
        h.location_factor_q16 = to_q16(cfg_.location_factor);
        h.orientation_bits = static_cast<std::uint8_t>(cfg_.orientation_bits);
        h.t_max_q16 = to_q16(cfg_.t_max);
        h.epsilon_q16 = to_q16(cfg_.epsilon);
        h.stability_window = static_cast<std::uint8_t>(cfg_.stability_window);
        h.nndr_q16 = to_q16(cfg_.nndr_threshold);
        h.seed = cfg_.seed;
        h.scheme = static_cast<std::uint8_t>(cfg_.scheme);
        h.codebook_q16 = {to_q16(cfg_.codebook.levels[0]), to_q16(cfg_.codebook.levels[1])};
        h.context_table_id = cfg_.location.table.empty() ? 0 : 1;
        h.context_checksum = cfg_.location.table.empty() ? 0 : context_table_checksum(cfg_.location.table);
        h.context_range = static_cast<std::uint8_t>(cfg_.location.context_range);
        h.context_window = static_cast<std::uint8_t>(cfg_.location.window);
        return h;
    }

    CodecConfig cfg_;
    int width_;
    int height_;
    BitWriter body_;
    EncodeReport report_;
    std::size_t record_start_ = 0;
    std::size_t frame_count_ = 0;
    std::optional<std::int64_t> first_index_;
    std::int64_t next_index_ = 0;
    std::int64_t current_index_ = 0;
    std::optional<std::size_t> descriptor_dim_;
    bool finished_ = false;

    bool force_d_ = true;
    std::optional<FrameFeatures> last_seen_;
    FrameFeatures anchor_;
    bool has_anchor_ = false;
    KeypointBuffer buffer_;
    std::optional<Pending> leader_;
    std::vector<Pending> successors_;
    std::vector<FrameType> provisional_;
};

inline EncodedStream encode_stream(std::span<const FrameFeatures> frames, const CodecConfig& cfg) {
    if (frames.empty()) throw ConfigError("cannot encode an empty frame sequence");
    Encoder enc(cfg, frames.front().width, frames.front().height);
    for (const auto& f : frames) enc.push(f);
    return enc.finish();
}

// ------------------------------------------------------------- decoder

struct DecodedFrame {
    std::int64_t frame_index = 0;
    FrameType type = FrameType::D;
    std::vector<Keypoint> keypoints;  // empty for N: fall back to detection on the decoded video
    std::size_t bit_offset = 0;
    std::size_t bits = 0;
};

struct DecodedStream {
    StreamHeader header;
    std::vector<DecodedFrame> frames;
};

inline LocationContextConfig context_config_for(const StreamHeader& h, const std::vector<std::uint32_t>& table) {
    LocationContextConfig ctx;
    ctx.context_range = h.context_range;
    ctx.window = h.context_window;
    if (h.context_table_id == 1) {
        if (table.empty()) throw ConfigError("stream was coded with an external context table; supply it");
        if (context_table_checksum(table) != h.context_checksum)
            throw ConfigError("context table does not match the one used by the encoder");
        ctx.table = table;
    } else if (h.context_table_id != 0) {
        throw CorruptStream(440, "unknown context table id");
    }
    return ctx;
}

inline DecodedStream decode_stream(std::span<const std::uint8_t> bytes,
                                   const std::vector<std::uint32_t>& context_table = {}) {
    BitReader in(bytes);
    DecodedStream out;
    out.header = StreamHeader::read(in);
    const auto& h = out.header;
    const LocationContextConfig ctx = context_config_for(h, context_table);
    const LocationGrid grid{h.width, h.height, h.location_factor()};
    const auto codebook = h.codebook();
    const int tbits = h.orientation_bits;
    const AffineQuantizer aq{h.t_max()};

    std::vector<Keypoint> buffer;
    bool have_state = false;
    for (std::uint32_t i = 0; i < h.frame_count; ++i) {
        DecodedFrame df;
        df.frame_index = static_cast<std::int64_t>(h.first_frame_index) + i;
        df.bit_offset = in.position();
        df.type = static_cast<FrameType>(in.read_bits(kFrameTypeBits));
        switch (df.type) {
            case FrameType::D: {
                const auto intra = read_intra_block(in, grid, ctx, tbits);
                buffer.clear();
                for (const auto& ik : intra) buffer.push_back(reconstruct_intra(ik, grid.f, codebook, tbits));
                have_state = true;
                break;
            }
            case FrameType::S: {
                if (!have_state) throw CorruptStream(df.bit_offset, "S-frame without a reference frame");
                const auto Dq = aq.dequantize(QuantizedAffine::unpack(in.read_bits(QuantizedAffine::kBits)));
                KeypointBuffer kb{std::move(buffer), {}};
                s_frame_update(kb, Dq, h.width, h.height);
                buffer = std::move(kb.keypoints);
                break;
            }
            case FrameType::U: {
                if (!have_state) throw CorruptStream(df.bit_offset, "U-frame without a reference frame");
                const auto Dq = aq.dequantize(QuantizedAffine::unpack(in.read_bits(QuantizedAffine::kBits)));
                const auto [modes, residuals] = read_update_symbols(in, buffer.size());
                const auto intra = read_intra_block(in, grid, ctx, tbits);
                std::vector<Keypoint> intra_rec;
                for (const auto& ik : intra) intra_rec.push_back(reconstruct_intra(ik, grid.f, codebook, tbits));
                std::vector<BufferMode> m = modes;
                if (m.empty()) m.assign(buffer.size(), BufferMode::Drop);
                KeypointBuffer kb;
                kb.keypoints = reconstruct_update(buffer, Dq, m, residuals, intra_rec, grid.f, tbits);
                kb.prune(h.width, h.height);
                buffer = std::move(kb.keypoints);
                break;
            }
            case FrameType::N:
                buffer.clear();
                have_state = false;
                break;
        }
        if (df.type != FrameType::N) df.keypoints = buffer;
        df.bits = in.position() - df.bit_offset;
        out.frames.push_back(std::move(df));
    }
    if (in.remaining() >= 8) throw CorruptStream(in.position(), "trailing data after the last frame");
    while (in.remaining() > 0)
        if (in.read_bit()) throw CorruptStream(in.position() - 1, "non-zero padding");
    return out;
}

// ------------------------------------------------------------- inspect

struct RecordSummary {
    std::int64_t frame_index = 0;
    FrameType type = FrameType::D;
    std::size_t bit_offset = 0;
    std::size_t bits = 0;
    std::size_t intra_keypoints = 0;
    std::size_t symbol_segment_bits = 0;
    std::size_t location_segment_bits = 0;
    std::optional<QuantizedAffine> affine;
};

/// Walks the record framing using the length prefixes only; arithmetic-coded
/// segments are skipped, not decoded.
inline std::pair<StreamHeader, std::vector<RecordSummary>> inspect_stream(std::span<const std::uint8_t> bytes) {
    BitReader in(bytes);
    const StreamHeader h = StreamHeader::read(in);
    std::vector<RecordSummary> recs;
    const int per_kp = ScaleCode::kBits + h.orientation_bits;
    const auto skip_intra = [&](RecordSummary& r) {
        r.intra_keypoints = static_cast<std::size_t>(in.read_bits(kCountBits));
        r.location_segment_bits = static_cast<std::size_t>(in.read_bits(kSegmentLengthBits));
        in.skip(r.location_segment_bits);
        in.skip(r.intra_keypoints * static_cast<std::size_t>(per_kp));
    };
    for (std::uint32_t i = 0; i < h.frame_count; ++i) {
        RecordSummary r;
        r.frame_index = static_cast<std::int64_t>(h.first_frame_index) + i;
        r.bit_offset = in.position();
        r.type = static_cast<FrameType>(in.read_bits(kFrameTypeBits));
        switch (r.type) {
            case FrameType::D: skip_intra(r); break;
            case FrameType::S: r.affine = QuantizedAffine::unpack(in.read_bits(QuantizedAffine::kBits)); break;
            case FrameType::U:
                r.affine = QuantizedAffine::unpack(in.read_bits(QuantizedAffine::kBits));
                r.symbol_segment_bits = static_cast<std::size_t>(in.read_bits(kSegmentLengthBits));
                in.skip(r.symbol_segment_bits);
                skip_intra(r);
                break;
            case FrameType::N: break;
        }
        r.bits = in.position() - r.bit_offset;
        recs.push_back(r);
    }
    return {h, recs};
}

}  // namespace kpcodec
