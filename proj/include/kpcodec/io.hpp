#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <iterator>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "kpcodec/codec.hpp"
#include "kpcodec/errors.hpp"
#include "kpcodec/model.hpp"

namespace kpcodec::io {

struct FeatureStream {
    int width = 0;
    int height = 0;
    int descriptor_dim = 0;
    std::vector<FrameFeatures> frames;
};

namespace detail {

inline std::vector<std::string_view> tokenize(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
        const std::size_t b = i;
        while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
        if (i > b) out.push_back(line.substr(b, i - b));
    }
    return out;
}

inline double parse_double(std::string_view tok, std::size_t line, const char* what) {
    double v = 0.0;
    const auto* end = tok.data() + tok.size();
    auto [p, ec] = std::from_chars(tok.data(), end, v);
    if (ec != std::errc{} || p != end || !std::isfinite(v))
        throw ParseError(line, std::string("bad ") + what + " '" + std::string(tok) + "'");
    return v;
}

inline long long parse_int(std::string_view tok, std::size_t line, const char* what) {
    long long v = 0;
    const auto* end = tok.data() + tok.size();
    auto [p, ec] = std::from_chars(tok.data(), end, v);
    if (ec != std::errc{} || p != end) throw ParseError(line, std::string("bad ") + what + " '" + std::string(tok) + "'");
    return v;
}

}  // namespace detail

/// Text feature file:
///   KPF1 <width> <height> <descriptor_dim>
///   frame <index> <count>
///   <x> <y> <sigma> <theta> <d_1> ... <d_k>     (count lines)
/// Blank lines and text after '#' are ignored.
inline FeatureStream read_features(std::istream& in) {
    FeatureStream fs;
    std::string raw;
    std::size_t line = 0;
    bool have_preamble = false;
    std::size_t expected = 0;
    std::size_t frame_line = 0;
    const auto close_frame = [&](std::size_t at) {
        if (!fs.frames.empty() && fs.frames.back().features.size() != expected)
            throw ParseError(at, "frame " + std::to_string(fs.frames.back().frame_index) + " declares " +
                                     std::to_string(expected) + " features but has " +
                                     std::to_string(fs.frames.back().features.size()) + " (header at line " +
                                     std::to_string(frame_line) + ")");
    };
    while (std::getline(in, raw)) {
        ++line;
        std::string_view v(raw);
        if (auto h = v.find('#'); h != std::string_view::npos) v = v.substr(0, h);
        const auto tok = detail::tokenize(v);
        if (tok.empty()) continue;
        if (!have_preamble) {
            if (tok.size() != 4 || tok[0] != "KPF1") throw ParseError(line, "expected 'KPF1 <width> <height> <descriptor_dim>'");
            fs.width = static_cast<int>(detail::parse_int(tok[1], line, "width"));
            fs.height = static_cast<int>(detail::parse_int(tok[2], line, "height"));
            fs.descriptor_dim = static_cast<int>(detail::parse_int(tok[3], line, "descriptor dimension"));
            if (fs.width <= 0 || fs.height <= 0 || fs.width > 65535 || fs.height > 65535)
                throw ParseError(line, "frame dimensions must lie in [1, 65535]");
            if (fs.descriptor_dim < 0) throw ParseError(line, "negative descriptor dimension");
            have_preamble = true;
            continue;
        }
        if (tok[0] == "frame") {
            close_frame(line);
            if (tok.size() != 3) throw ParseError(line, "expected 'frame <index> <count>'");
            FrameFeatures f;
            f.frame_index = detail::parse_int(tok[1], line, "frame index");
            const long long n = detail::parse_int(tok[2], line, "feature count");
            if (n < 0) throw ParseError(line, "negative feature count");
            if (!fs.frames.empty() && f.frame_index <= fs.frames.back().frame_index)
                throw ParseError(line, "frame indices must increase");
            f.width = fs.width;
            f.height = fs.height;
            expected = static_cast<std::size_t>(n);
            frame_line = line;
            fs.frames.push_back(std::move(f));
            continue;
        }
        if (fs.frames.empty()) throw ParseError(line, "feature line before any 'frame' record");
        auto& f = fs.frames.back();
        if (f.features.size() == expected) throw ParseError(line, "more feature lines than the declared count");
        const std::size_t want = 4 + static_cast<std::size_t>(fs.descriptor_dim);
        if (tok.size() != want)
            throw ParseError(line, "expected " + std::to_string(want) + " columns (x y sigma theta + " +
                                       std::to_string(fs.descriptor_dim) + " descriptor values), found " +
                                       std::to_string(tok.size()));
        Feature ft;
        ft.keypoint.x = detail::parse_double(tok[0], line, "x");
        ft.keypoint.y = detail::parse_double(tok[1], line, "y");
        ft.keypoint.sigma = detail::parse_double(tok[2], line, "sigma");
        ft.keypoint.theta = detail::parse_double(tok[3], line, "theta");
        ft.descriptor.reserve(static_cast<std::size_t>(fs.descriptor_dim));
        for (std::size_t i = 4; i < tok.size(); ++i)
            ft.descriptor.push_back(static_cast<float>(detail::parse_double(tok[i], line, "descriptor value")));
        f.features.push_back(std::move(ft));
    }
    if (!have_preamble) throw ParseError(line, "empty feature file");
    close_frame(line);
    return fs;
}

inline FeatureStream read_features_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    return read_features(in);
}

namespace detail {

inline void put_double(std::ostream& out, double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    out.write(buf, p - buf);
}

}  // namespace detail

inline void write_features(std::ostream& out, int width, int height, int descriptor_dim,
                           std::span<const FrameFeatures> frames) {
    out << "KPF1 " << width << ' ' << height << ' ' << descriptor_dim << '\n';
    for (const auto& f : frames) {
        out << "frame " << f.frame_index << ' ' << f.features.size() << '\n';
        for (const auto& ft : f.features) {
            const auto& k = ft.keypoint;
            detail::put_double(out, k.x);
            out << ' ';
            detail::put_double(out, k.y);
            out << ' ';
            detail::put_double(out, k.sigma);
            out << ' ';
            detail::put_double(out, k.theta);
            for (std::size_t i = 0; i < static_cast<std::size_t>(descriptor_dim); ++i) {
                out << ' ';
                detail::put_double(out, i < ft.descriptor.size() ? ft.descriptor[i] : 0.0f);
            }
            out << '\n';
        }
    }
}

/// Decoded keypoints in feature-file layout with descriptor dimension 0. N
/// frames are written with no keypoints and an explanatory comment.
inline void write_decoded(std::ostream& out, const DecodedStream& ds) {
    out << "KPF1 " << ds.header.width << ' ' << ds.header.height << " 0\n";
    for (const auto& f : ds.frames) {
        if (f.type == FrameType::N) out << "# frame " << f.frame_index << ": N, no side information\n";
        out << "frame " << f.frame_index << ' ' << f.keypoints.size() << '\n';
        for (const auto& k : f.keypoints) {
            detail::put_double(out, k.x);
            out << ' ';
            detail::put_double(out, k.y);
            out << ' ';
            detail::put_double(out, k.sigma);
            out << ' ';
            detail::put_double(out, k.theta);
            out << '\n';
        }
    }
}

/// Whitespace-separated numbers; '#' comments allowed.
inline std::vector<double> read_numbers(std::istream& in) {
    std::vector<double> out;
    std::string raw;
    std::size_t line = 0;
    while (std::getline(in, raw)) {
        ++line;
        std::string_view v(raw);
        if (auto h = v.find('#'); h != std::string_view::npos) v = v.substr(0, h);
        for (auto tok : detail::tokenize(v)) out.push_back(detail::parse_double(tok, line, "number"));
    }
    return out;
}

/// Initial location-context counts: one "<zero> <one>" pair per context.
inline std::vector<std::uint32_t> read_context_table(std::istream& in) {
    std::vector<std::uint32_t> out;
    std::string raw;
    std::size_t line = 0;
    while (std::getline(in, raw)) {
        ++line;
        std::string_view v(raw);
        if (auto h = v.find('#'); h != std::string_view::npos) v = v.substr(0, h);
        for (auto tok : detail::tokenize(v)) {
            const long long c = detail::parse_int(tok, line, "count");
            if (c < 1 || c > 4096) throw ParseError(line, "context counts must lie in [1, 4096]");
            out.push_back(static_cast<std::uint32_t>(c));
        }
    }
    if (out.empty() || out.size() % 2 != 0) throw ParseError(line, "context table needs (zero, one) count pairs");
    return out;
}

inline void write_report_csv(const EncodeReport& r, std::ostream& out) {
    out << "frame,type,bits,skip,inter,intra,drop,clamps,keypoints\n";
    for (const auto& f : r.frames)
        out << f.frame_index << ',' << frame_type_char(f.type) << ',' << f.bits << ',' << f.skip << ',' << f.inter
            << ',' << f.intra << ',' << f.drop << ',' << f.clamps << ',' << f.keypoints << '\n';
}

inline std::vector<std::uint8_t> read_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path);
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_binary(const std::string& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ConfigError("write failed for " + path);
}

}  // namespace kpcodec::io
