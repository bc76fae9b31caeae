#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "kpcodec.hpp"

namespace {

using namespace kpcodec;

enum Exit { kOk = 0, kUsage = 2, kCorrupt = 3, kInternal = 4 };

struct EncodeArgs {
    std::string features, out, report, scheme = "adaptive", codebook_samples, context_table;
    std::optional<double> epsilon, nndr, tmax, location_factor;
    std::optional<int> ns, orientation_bits;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> max_features;
};

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
    if (flag) return *flag;
    if (const char* env = std::getenv("KPCODEC_SEED")) {
        try {
            std::size_t used = 0;
            const auto v = std::stoull(env, &used);
            if (used == std::string(env).size()) return v;
        } catch (const std::exception&) {
        }
        throw ConfigError("KPCODEC_SEED must be an unsigned integer");
    }
    return 0;
}

Scheme parse_scheme(const std::string& s) {
    if (s == "adaptive") return Scheme::Adaptive;
    if (s == "all-d") return Scheme::AllDetect;
    if (s == "d-u") return Scheme::DetectUpdate;
    throw ConfigError("unknown scheme '" + s + "' (adaptive, all-d, d-u)");
}

std::vector<std::uint32_t> load_context_table(const std::string& path) {
    if (path.empty()) return {};
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    return io::read_context_table(in);
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    return out;
}

CodecConfig make_config(const EncodeArgs& a) {
    CodecConfig cfg;
    if (a.epsilon) cfg.epsilon = *a.epsilon;
    if (a.ns) cfg.stability_window = *a.ns;
    if (a.nndr) cfg.nndr_threshold = *a.nndr;
    if (a.tmax) cfg.t_max = *a.tmax;
    if (a.location_factor) cfg.location_factor = *a.location_factor;
    if (a.orientation_bits) cfg.orientation_bits = *a.orientation_bits;
    if (a.max_features) cfg.max_features = *a.max_features;
    cfg.seed = resolve_seed(a.seed);
    cfg.ransac.seed = cfg.seed;
    cfg.scheme = parse_scheme(a.scheme);
    cfg.location.table = load_context_table(a.context_table);
    cfg.validate();
    return cfg;
}

void print_report(const EncodeReport& r, std::ostream& out) {
    out << "frames " << r.frames.size() << ", header " << r.header_bits << " bits, payload " << r.payload_bits()
        << " bits (D " << r.count(FrameType::D) << ", S " << r.count(FrameType::S) << ", U " << r.count(FrameType::U)
        << ", N " << r.count(FrameType::N) << ")\n";
}

int cmd_encode(const EncodeArgs& a) {
    CodecConfig cfg = make_config(a);
    const auto fs = io::read_features_file(a.features);
    if (fs.frames.empty()) throw ConfigError("feature file holds no frames");
    if (!a.codebook_samples.empty()) {
        std::ifstream in(a.codebook_samples);
        if (!in) throw ConfigError("cannot open " + a.codebook_samples);
        const auto samples = io::read_numbers(in);
        cfg.codebook = train_lloyd_max(samples, 2);
    } else {
        cfg.codebook = harness::codebook_for(fs.frames);
    }
    Encoder enc(cfg, fs.width, fs.height);
    for (const auto& f : fs.frames) enc.push(f);
    const auto es = enc.finish();
    io::write_binary(a.out, es.bytes);
    if (!a.report.empty()) {
        auto out = open_out(a.report);
        io::write_report_csv(es.report, out);
    }
    print_report(es.report, std::cout);
    return kOk;
}

int cmd_decode(const std::string& in_path, const std::string& out_path, const std::string& table) {
    const auto bytes = io::read_binary(in_path);
    const auto ds = decode_stream(bytes, load_context_table(table));
    auto out = open_out(out_path);
    io::write_decoded(out, ds);
    std::cout << "decoded " << ds.frames.size() << " frames\n";
    return kOk;
}

int cmd_inspect(const std::string& in_path) {
    const auto bytes = io::read_binary(in_path);
    const auto [h, recs] = inspect_stream(bytes);
    std::cout << "magic KPC1 version " << int(h.version) << " coder " << int(h.coder_variant) << '\n'
              << "size " << h.width << "x" << h.height << ", frames " << h.frame_count << " from index "
              << h.first_frame_index << '\n'
              << "max_features " << h.max_features << ", f " << h.location_factor() << ", orientation bits "
              << int(h.orientation_bits) << ", T_max " << h.t_max() << '\n'
              << "epsilon " << from_q16(h.epsilon_q16) << ", N_s " << int(h.stability_window) << ", nndr "
              << from_q16(h.nndr_q16) << ", seed " << h.seed << ", scheme " << int(h.scheme) << '\n'
              << "scale codebook " << from_q16(h.codebook_q16[0]) << ' ' << from_q16(h.codebook_q16[1])
              << ", context table " << (h.context_table_id ? "external" : "uniform") << " (" << int(h.context_range)
              << " contexts, window " << int(h.context_window) << ")\n";
    std::cout << "frame type offset bits intra loc_bits sym_bits\n";
    for (const auto& r : recs)
        std::cout << r.frame_index << ' ' << frame_type_char(r.type) << ' ' << r.bit_offset << ' ' << r.bits << ' '
                  << r.intra_keypoints << ' ' << r.location_segment_bits << ' ' << r.symbol_segment_bits << '\n';
    std::cout << "types";
    for (std::size_t i = 0; i < recs.size();) {
        std::size_t j = i;
        while (j < recs.size() && recs[j].type == recs[i].type && recs[j].bits == recs[i].bits) ++j;
        std::cout << ' ' << frame_type_char(recs[i].type);
        if (j - i > 1) std::cout << "\xC3\x97" << (j - i);
        std::cout << '(' << recs[i].bits << "b)";
        i = j;
    }
    std::cout << '\n';
    return kOk;
}

int cmd_simulate(const std::string& scene_path, const std::string& out_dir, const EncodeArgs& a) {
    std::ifstream in(scene_path);
    if (!in) throw ConfigError("cannot open " + scene_path);
    const auto scene = harness::parse_scene(in);
    CodecConfig cfg = make_config(a);
    const auto r = harness::simulate(scene, cfg);
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const fs::path dir(out_dir);
    {
        auto o = open_out((dir / "features.kpf").string());
        io::write_features(o, scene.width, scene.height, scene.descriptor_dim, r.sequence.frames);
    }
    io::write_binary((dir / "stream.kpb").string(), r.encoded.bytes);
    {
        auto o = open_out((dir / "report.csv").string());
        io::write_report_csv(r.encoded.report, o);
    }
    {
        auto o = open_out((dir / "decoded.kpf").string());
        io::write_decoded(o, r.decoded);
    }
    {
        auto o = open_out((dir / "metrics.csv").string());
        harness::write_metrics_csv(r.metrics, o);
    }
    {
        auto o = open_out((dir / "summary.csv").string());
        harness::write_summary_csv(r.metrics, o);
    }
    print_report(r.encoded.report, std::cout);
    std::cout << "mean location error " << r.metrics.mean_location_error << " px, mean scale error "
              << r.metrics.mean_scale_error << ", mean orientation error " << r.metrics.mean_orientation_error
              << " rad, surviving fraction " << r.metrics.mean_surviving_fraction << '\n';
    return kOk;
}

void add_codec_options(CLI::App* c, EncodeArgs& a) {
    c->add_option("--epsilon", a.epsilon, "S-frame match fraction threshold, (0, 1]");
    c->add_option("--ns", a.ns, "stability window N_s");
    c->add_option("--nndr", a.nndr, "NNDR ratio threshold");
    c->add_option("--seed", a.seed, "RANSAC seed (falls back to KPCODEC_SEED, then 0)");
    c->add_option("--tmax", a.tmax, "translation quantizer range in px");
    c->add_option("--location-factor", a.location_factor, "location grid step f in px");
    c->add_option("--orientation-bits", a.orientation_bits, "orientation bits t");
    c->add_option("--max-features", a.max_features, "maximum features per frame");
    c->add_option("--scheme", a.scheme, "adaptive, all-d or d-u");
    c->add_option("--context-table", a.context_table, "initial location-context counts");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"keypoint side-information codec"};
    app.require_subcommand(1);

    EncodeArgs enc;
    auto* encode = app.add_subcommand("encode", "encode a feature file into a .kpb stream");
    encode->add_option("--features", enc.features, "input feature file")->required();
    encode->add_option("--out", enc.out, "output .kpb")->required();
    encode->add_option("--report", enc.report, "per-frame CSV report");
    encode->add_option("--codebook-samples", enc.codebook_samples, "scale-offset samples to train the codebook");
    add_codec_options(encode, enc);

    std::string dec_in, dec_out, dec_table;
    auto* decode = app.add_subcommand("decode", "decode a .kpb stream into a feature file");
    decode->add_option("--in", dec_in, "input .kpb")->required();
    decode->add_option("--out", dec_out, "output feature file")->required();
    decode->add_option("--context-table", dec_table, "initial location-context counts used by the encoder");

    std::string insp_in;
    auto* inspect = app.add_subcommand("inspect", "print the header and per-frame record table");
    inspect->add_option("--in", insp_in, "input .kpb")->required();

    std::string scene, out_dir;
    EncodeArgs sim;
    auto* simulate = app.add_subcommand("simulate", "generate, encode, decode and evaluate a synthetic scene");
    simulate->add_option("--scene", scene, "scene config")->required();
    simulate->add_option("--out-dir", out_dir, "output directory")->required();
    add_codec_options(simulate, sim);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (*encode) return cmd_encode(enc);
        if (*decode) return cmd_decode(dec_in, dec_out, dec_table);
        if (*inspect) return cmd_inspect(insp_in);
        if (*simulate) return cmd_simulate(scene, out_dir, sim);
    } catch (const CorruptStream& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kCorrupt;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const FrameError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return kInternal;
    }
    return kInternal;
}
