// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "kpcodec.hpp"
#include "oracles.hpp"

using namespace kpcodec;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            if (!detail.empty()) detail += "; ";
            detail += what;
        }
    }
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

harness::SceneConfig scene(const std::string& name) {
    std::ifstream in(std::string(KPCODEC_SCENES_DIR) + "/" + name + ".cfg");
    if (!in) throw std::runtime_error("missing scene " + name);
    return harness::parse_scene(in);
}

// ---------------------------------------------------------------- AC1

Outcome ac1() {
    Outcome o;
    std::size_t s_records = 0, n_records = 0;
    for (const char* name : {"static10", "scene_cut2"}) {
        const auto golden = read_file(std::string(KPCODEC_GOLDEN_DIR) + "/" + name + ".kpb");
        const auto [h, recs] = inspect_stream(golden);
        for (const auto& r : recs) {
            if (r.type == FrameType::S) {
                ++s_records;
                o.require(r.bits == 50, std::string(name) + ": S record of " + std::to_string(r.bits) + " bits");
            }
            if (r.type == FrameType::N) {
                ++n_records;
                o.require(r.bits == 2, std::string(name) + ": N record of " + std::to_string(r.bits) + " bits");
            }
        }
        const auto fresh = harness::simulate(scene(name), CodecConfig{});
        o.require(fresh.encoded.bytes == golden, std::string(name) + ": encoder output differs from golden fixture");
    }
    o.require(s_records > 0 && n_records > 0, "fixtures must contain S and N records");
    o.detail = std::to_string(s_records) + " S records, " + std::to_string(n_records) + " N records" +
               (o.detail.empty() ? "" : ": " + o.detail);
    return o;
}

// ---------------------------------------------------------------- AC2

Outcome ac2() {
    Outcome o;
    o.require(QuantizedAffine::kBits == 48, "kBits != 48");
    const std::array<int, 6> want{7, 7, 7, 9, 9, 9};
    o.require(QuantizedAffine::kFieldBits == want, "field widths differ from 7/7/7/9/9/9");
    // each field occupies exactly its slot: all-ones in one field sets exactly its bits
    int shift = 48;
    for (std::size_t i = 0; i < 6; ++i) {
        shift -= want[i];
        std::array<std::uint32_t, 6> f{};
        f[i] = (1u << want[i]) - 1u;
        const QuantizedAffine q{f[0], f[1], f[2], f[3], f[4], f[5]};
        const std::uint64_t expect = ((std::uint64_t{1} << want[i]) - 1) << shift;
        o.require(q.pack() == expect, "field " + std::to_string(i) + " misplaced");
        o.require(QuantizedAffine::unpack(q.pack()) == q, "unpack mismatch");
    }
    BitWriter w;
    w.write_bits(QuantizedAffine{127, 0, 64, 511, 256, 1}.pack(), QuantizedAffine::kBits);
    o.require(w.bit_count() == 48, "serialized size " + std::to_string(w.bit_count()));
    o.detail = "48 bits, 7/7/7/9/9/9" + (o.detail.empty() ? "" : ": " + o.detail);
    return o;
}

// ---------------------------------------------------------------- AC3

Outcome ac3() {
    Outcome o;
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-3, 3);
    double worst = 0;
    int tested = 0;
    while (tested < 10000) {
        const AffineTransform A{u(rng), u(rng), u(rng), u(rng), u(rng) * 20, u(rng) * 20};
        if (std::abs(A.det()) < 1e-3 || std::hypot(A.a, A.b) < 1e-3) continue;
        const auto B = recompose(decompose(A));
        for (double e : {B.a - A.a, B.b - A.b, B.c - A.c, B.d - A.d, B.tx - A.tx, B.ty - A.ty})
            worst = std::max(worst, std::abs(e));
        ++tested;
    }
    o.require(worst <= 1e-9, fmt("max deviation %.3g", worst));

    const auto id = decompose(AffineTransform::identity());
    o.require(id == DecomposedAffine{1, 1, 0, 0, 0, 0}, "identity");
    const double phi = 0.1;
    const auto rot = decompose({std::cos(phi), std::sin(phi), -std::sin(phi), std::cos(phi), 0, 0});
    const auto ref = oracle::decompose_formula(std::cos(phi), std::sin(phi), -std::sin(phi), std::cos(phi));
    o.require(rot.r1 == ref.r1 && rot.r2 == ref.r2 && rot.q == ref.q && rot.phi == ref.phi,
              "rotation differs from the closed form");
    o.require(std::abs(rot.phi - phi) <= 1e-15 && std::abs(rot.r1 - 1) <= 1e-15 && std::abs(rot.r2 - 1) <= 1e-15 &&
                  std::abs(rot.q) <= 1e-15,
              "rotation parameters");
    const auto sc = decompose({2, 0, 0, 0.5, 0, 0});
    o.require(sc == DecomposedAffine{2, 0.5, 0, 0, 0, 0}, "pure scaling");
    o.require(recompose(sc) == AffineTransform{2, 0, 0, 0.5, 0, 0}, "pure scaling recompose");
    o.detail = fmt("%g matrices, max deviation %.2e; closed forms exact", tested, worst) +
               (o.detail.empty() ? "" : ": " + o.detail);
    return o;
}

// ---------------------------------------------------------------- AC4

Outcome ac4() {
    Outcome o;
    const auto sc = scene("pure_affine50");
    const auto r = harness::simulate(sc, CodecConfig{});
    const auto& m = r.metrics;
    std::size_t non_s = 0;
    for (std::size_t i = 1; i < m.frames.size(); ++i)
        if (m.frames[i].type != FrameType::S) ++non_s;
    const double phi_half_step = 0.5 * AffineQuantizer{}.phi().step();
    const double ori_bound = kTwoPi / 63.0 + phi_half_step;
    o.require(m.frames.size() == 50, "scene must have 50 frames");
    o.require(non_s == 0, std::to_string(non_s) + " frames after the first are not S");
    o.require(m.min_surviving_fraction == 1.0, fmt("min surviving fraction %.4f", m.min_surviving_fraction));
    o.require(m.mean_location_error <= 1.5, "mean location error");
    o.require(m.mean_scale_error <= 0.02, "mean scale error");
    o.require(m.mean_orientation_error <= ori_bound, "mean orientation error");
    o.detail = fmt("S after first %.0f/49, surviving %.3f, loc %.3f px, scale %.4f", 49.0 - non_s,
                   m.min_surviving_fraction, m.mean_location_error, m.mean_scale_error) +
               fmt(", ori %.4f (bound %.4f)", m.mean_orientation_error, ori_bound) +
               (o.detail.empty() ? "" : ": " + o.detail);
    return o;
}

// ---------------------------------------------------------------- AC5

Outcome ac5() {
    Outcome o;
    std::mt19937_64 rng(5);
    std::size_t frames = 0, mismatches = 0;
    const auto cb = default_scale_codebook();
    for (; frames < 10000; ++frames) {
        const int w = 16 + static_cast<int>(rng() % 145), h = 16 + static_cast<int>(rng() % 145);
        const double f = (rng() & 1) ? 1.0 : 2.0;
        const LocationGrid grid{w, h, f};
        std::uniform_real_distribution<double> ux(0, w), uy(0, h), ut(kThetaMin, kThetaMax), us(2.2, 60);
        std::vector<Keypoint> kps(rng() % 40);
        for (auto& k : kps) k = {ux(rng) * 0.999, uy(rng) * 0.999, us(rng), ut(rng)};
        const auto intra = prepare_intra(kps, grid, cb, 6);

        const std::size_t nbuf = rng() % 60;
        std::vector<BufferMode> modes(nbuf);
        std::vector<InterResidual> res;
        for (auto& m : modes) {
            m = static_cast<BufferMode>(rng() % 3);
            if (m == BufferMode::Inter) {
                InterResidual r{static_cast<int>(rng() % 33) - 16, static_cast<int>(rng() % 33) - 16,
                                static_cast<int>(rng() % 5), static_cast<int>(rng() % 9) - 4};
                if (is_skip(r)) r.dx = 5;
                res.push_back(r);
            }
        }

        BitWriter out;
        write_intra_block(intra, grid, {}, 6, out);
        write_update_symbols(modes, res, out);
        BitReader in(out.bytes(), 0, out.bit_count());
        const auto back = read_intra_block(in, grid, {}, 6);
        const auto [m2, r2] = read_update_symbols(in, nbuf);
        bool ok = back.size() == intra.size() && in.remaining() == 0 && m2 == modes && r2.size() == res.size();
        for (std::size_t i = 0; ok && i < intra.size(); ++i)
            ok = back[i].cell == intra[i].cell && back[i].scale == intra[i].scale &&
                 back[i].orientation == intra[i].orientation;
        for (std::size_t i = 0; ok && i < res.size(); ++i)
            ok = r2[i].dx == res[i].dx && r2[i].dy == res[i].dy && r2[i].scale_idx == res[i].scale_idx &&
                 r2[i].dtheta_idx == res[i].dtheta_idx;
        if (!ok) ++mismatches;
    }
    o.require(mismatches == 0, std::to_string(mismatches) + " frames did not round-trip");

    double worst_excess = -1e9;
    for (double p : {0.02, 0.1, 0.3}) {
        for (std::size_t alphabet : {2u, 5u, 33u}) {
            std::vector<double> wts(alphabet);
            for (std::size_t i = 0; i < alphabet; ++i) wts[i] = std::pow(p, static_cast<double>(i));
            std::discrete_distribution<std::size_t> dist(wts.begin(), wts.end());
            std::vector<std::size_t> s(20000);
            for (auto& v : s) v = dist(rng);
            BitWriter w;
            ArithmeticEncoder enc(w);
            AdaptiveModel model(alphabet, 8);
            for (auto v : s) model.encode(v, enc);
            enc.finish();
            BitReader r(w.bytes(), 0, w.bit_count());
            ArithmeticDecoder dec(r);
            AdaptiveModel dm(alphabet, 8);
            for (auto v : s)
                if (dm.decode(dec) != v) {
                    o.require(false, "skewed source did not decode");
                    break;
                }
            const double excess = static_cast<double>(w.bit_count()) - oracle::entropy_bound_check(s, alphabet, 8);
            worst_excess = std::max(worst_excess, excess);
        }
    }
    o.require(worst_excess <= 2.0, fmt("coder exceeds model entropy by %.3f bits", worst_excess));
    o.detail = fmt("%.0f frames, %.0f mismatches; worst excess over sequential entropy %.3f bits",
                   static_cast<double>(frames), static_cast<double>(mismatches), worst_excess) +
               (o.detail.empty() ? "" : ": " + o.detail);
    return o;
}

// ---------------------------------------------------------------- AC6

Outcome ac6() {
    Outcome o;
    int fixed = 0;
    for (std::uint32_t e = 0; e < 64; ++e) {
        const double th = decode_orientation({e});
        const auto back = code_orientation(th);
        // index 63 reconstructs to the closed end of the interval, the same direction as 0
        if (back.index == e || (e == 63 && code_orientation(wrap_orientation(th)).index == 0)) ++fixed;
    }
    std::size_t disagreements = 0;
    const auto sweep = oracle::exhaustive_orientation_sweep(
        6, 1000000, [](double t) { return code_orientation(t); },
        [](OrientationCode c) { return decode_orientation(c); }, &disagreements);
    const double bound = kPi / 63.0;
    o.require(fixed == 64, std::to_string(fixed) + "/64 fixed points");
    o.require(sweep.max_error <= bound + 1e-12, "max error above pi/63");
    o.require(disagreements == 0, std::to_string(disagreements) + " samples not at the nearest level");
    o.detail = fmt("fixed points %.0f/64, max error %.6f (bound %.6f)", fixed, sweep.max_error, bound) +
               (o.detail.empty() ? "" : ": " + o.detail);
    return o;
}

// ---------------------------------------------------------------- AC7

Outcome ac7() {
    Outcome o;
    const auto sc = scene("slow");
    const auto seq = harness::generate(sc);
    CodecConfig base;
    std::size_t most = 1;
    for (const auto& f : seq.frames) most = std::max(most, f.size());
    base.max_features = most;
    base.codebook = harness::codebook_for(seq.frames);
    const auto run = [&](Scheme s) {
        CodecConfig c = base;
        c.scheme = s;
        return encode_stream(seq.frames, c).report;
    };
    const auto all_d = run(Scheme::AllDetect);
    const auto du = run(Scheme::DetectUpdate);
    const auto full = run(Scheme::Adaptive);
    const double s_frac = static_cast<double>(full.count(FrameType::S)) / static_cast<double>(full.frames.size());
    const double bd = static_cast<double>(all_d.payload_bits()), bu = static_cast<double>(du.payload_bits()),
                 bf = static_cast<double>(full.payload_bits());
    o.require(s_frac >= 0.9, fmt("only %.3f of frames are S", s_frac));
    o.require(bf <= bd / 10.0, "full scheme above a tenth of all-D");
    o.require(bd > bu && bu > bf, "monotonicity all-D > D+U > full fails");
    o.detail = fmt("S %.3f; bits all-D %.0f, D+U %.0f, full %.0f", s_frac, bd, bu, bf) +
               fmt(" (all-D/full %.1f)", bd / bf) + (o.detail.empty() ? "" : ": " + o.detail);
    return o;
}

// ---------------------------------------------------------------- AC8

Outcome ac8() {
    Outcome o;
    auto sc = scene("scene_cut2");
    CodecConfig cfg;
    cfg.stability_window = 4;
    const auto r = harness::simulate(sc, cfg);
    const auto& fr = r.encoded.report.frames;
    const std::size_t n = fr.size();
    // A committed D/U frame is stable only when its next min(N_s, remaining)
    // frames are all S; everything else inside the cut region must be N.
    std::size_t n_frames = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (fr[i].type == FrameType::N) {
            ++n_frames;
            o.require(fr[i].bits == 2, "N frame " + std::to_string(i) + " costs " + std::to_string(fr[i].bits));
            o.require(r.decoded.frames[i].keypoints.empty(), "N frame decodes keypoints");
            continue;
        }
        if (fr[i].type == FrameType::D || fr[i].type == FrameType::U) {
            for (std::size_t k = i + 1; k < std::min(n, i + 5); ++k)
                o.require(fr[k].type == FrameType::S, "unstable frame " + std::to_string(i) + " committed as " +
                                                          frame_type_char(fr[i].type));
        }
    }
    o.require(n_frames + 2 >= n, "expected every frame but the final stable pair to be N");
    o.detail = fmt("%.0f/%.0f frames N at 2 bits", static_cast<double>(n_frames), static_cast<double>(n)) +
               (o.detail.empty() ? "" : ": " + o.detail);
    return o;
}

// ---------------------------------------------------------------- AC9

Outcome ac9() {
    Outcome o;
    struct Case {
        const char* name;
        double dx, scale;
        int dtheta;
        BufferMode want;
    };
    const Case cases[] = {{"dx=17", 17, 0, 0, BufferMode::Drop},     {"dx=16", 16, 0, 0, BufferMode::Inter},
                          {"ratio=0.31", 0, 0.31, 0, BufferMode::Drop}, {"ratio=0.30", 0, 0.30, 0, BufferMode::Inter},
                          {"dtheta=5", 0, 0, 5, BufferMode::Drop},   {"dtheta=4", 0, 0, 4, BufferMode::Inter}};
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<float> u(0, 1);
    int ok = 0;
    for (const auto& c : cases) {
        KeypointBuffer buf;
        FrameFeatures curr{1, 640, 480, {}};
        for (int i = 0; i < 20; ++i) {
            const Keypoint k{40.0 + 25 * i, 100, lattice_scale(1, 0), decode_orientation({20})};
            std::vector<float> d(32);
            for (auto& v : d) v = u(rng);
            buf.keypoints.push_back(k);
            buf.descriptors.push_back(d);
            curr.features.push_back({k, d});
        }
        auto& k = curr.features[5].keypoint;
        k.x += c.dx;
        k.sigma *= 1.0 + c.scale;
        k.theta = decode_orientation({static_cast<std::uint32_t>(20 + c.dtheta)});
        const auto ma = assign_modes(curr, buf, {1, 1, 0, 0, 0, 0}, CodecConfig{});
        const bool intra = std::find(ma.intra.begin(), ma.intra.end(), 5u) != ma.intra.end();
        const bool good = ma.modes[5] == c.want && intra == (c.want == BufferMode::Drop);
        if (good) ++ok;
        o.require(good, std::string(c.name) + " routed wrongly");
    }
    o.detail = fmt("%.0f/6 fixtures routed as expected", ok) + (o.detail.empty() ? "" : ": " + o.detail);
    return o;
}

// ---------------------------------------------------------------- AC10

Outcome ac10() {
    Outcome o;
    std::mt19937_64 rng(10);
    std::size_t worse = 0, nondet = 0;
    double worst = -1e9;
    for (int set = 0; set < 10000; ++set) {
        const std::size_t n = 20 + rng() % 200;
        std::vector<double> xs(n);
        const int kind = static_cast<int>(rng() % 3);
        std::normal_distribution<double> g(0, 1);
        std::uniform_real_distribution<double> uu(-1, 1);
        std::exponential_distribution<double> ex(1.0);
        for (auto& x : xs) x = kind == 0 ? g(rng) : kind == 1 ? uu(rng) : ex(rng) * ((rng() & 1) ? 1 : -0.3);
        const auto cb = train_lloyd_max(xs, 2);
        const auto cb2 = train_lloyd_max(xs, 2);
        if (cb.levels != cb2.levels) ++nondet;
        const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
        const double step = (*hi - *lo) / 2.0;
        const auto uni = LloydMaxCodebook::from_levels({*lo + 0.5 * step, *lo + 1.5 * step});
        const double d = cb.mse(xs) - uni.mse(xs);
        worst = std::max(worst, d);
        if (d > 1e-12) ++worse;
    }
    o.require(worse == 0, std::to_string(worse) + " sets where Lloyd-Max is worse than uniform");
    o.require(nondet == 0, std::to_string(nondet) + " non-deterministic trainings");
    o.detail = fmt("10000 sets, %.0f worse than uniform, max MSE(LM)-MSE(uniform) %.3g", static_cast<double>(worse),
                   worst) +
               (o.detail.empty() ? "" : ": " + o.detail);
    return o;
}

}  // namespace

int main() {
    const std::pair<const char*, std::function<Outcome()>> checks[] = {
        {"AC1", ac1}, {"AC2", ac2}, {"AC3", ac3}, {"AC4", ac4}, {"AC5", ac5},
        {"AC6", ac6}, {"AC7", ac7}, {"AC8", ac8}, {"AC9", ac9}, {"AC10", ac10},
    };
    int failed = 0;
    for (const auto& [name, fn] : checks) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("%s %s (%.2fs) %s\n", name, o.pass ? "PASS" : "FAIL", secs, o.detail.c_str());
        std::fflush(stdout);
        if (!o.pass) ++failed;
    }
    return failed == 0 ? 0 : 1;
}
