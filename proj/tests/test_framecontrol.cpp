#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "kpcodec/framecontrol.hpp"

using namespace kpcodec;

namespace {

std::vector<float> rand_desc(std::mt19937_64& rng) {
    std::uniform_real_distribution<float> u(0, 1);
    std::vector<float> d(32);
    for (auto& v : d) v = u(rng);
    return d;
}

FrameFeatures random_frame(std::mt19937_64& rng, int n, std::int64_t index = 0) {
    std::uniform_real_distribution<double> x(20, 620), y(20, 460);
    FrameFeatures f{index, 640, 480, {}};
    for (int i = 0; i < n; ++i)
        f.features.push_back({{x(rng), y(rng), lattice_scale(1, 1), 0.5}, rand_desc(rng)});
    return f;
}

FrameFeatures subset(const FrameFeatures& f, int n, std::int64_t index) {
    FrameFeatures g = f;
    g.frame_index = index;
    g.features.resize(static_cast<std::size_t>(n));
    return g;
}

}  // namespace

TEST(Classify, FirstFrameIsD) {
    std::mt19937_64 rng(1);
    const auto f = random_frame(rng, 50);
    EXPECT_EQ(classify_frame(f, nullptr, nullptr, CodecConfig{}).type, FrameType::D);
}

TEST(Classify, InclusiveThresholdBoundary) {
    std::mt19937_64 rng(2);
    const auto anchor = random_frame(rng, 200);
    const CodecConfig cfg;
    const auto at = subset(anchor, 160, 1);
    const auto c160 = classify_frame(at, &anchor, &anchor, cfg);
    EXPECT_EQ(c160.anchor_matches, 160u);
    EXPECT_EQ(c160.type, FrameType::S);
    ASSERT_TRUE(c160.prev_fit.has_value());
    const auto below = subset(anchor, 159, 1);
    const auto c159 = classify_frame(below, &anchor, &anchor, cfg);
    EXPECT_EQ(c159.anchor_matches, 159u);
    EXPECT_EQ(c159.type, FrameType::U);
}

TEST(Classify, EpsilonOneNeedsEveryAnchorFeature) {
    std::mt19937_64 rng(3);
    const auto anchor = random_frame(rng, 100);
    CodecConfig cfg;
    cfg.epsilon = 1.0;
    EXPECT_EQ(classify_frame(subset(anchor, 99, 1), &anchor, &anchor, cfg).type, FrameType::U);
    EXPECT_EQ(classify_frame(subset(anchor, 100, 1), &anchor, &anchor, cfg).type, FrameType::S);
}

TEST(Classify, UnrelatedFrameIsD) {
    std::mt19937_64 rng(4);
    const auto a = random_frame(rng, 100);
    const auto b = random_frame(rng, 100, 1);
    EXPECT_EQ(classify_frame(b, &a, &a, CodecConfig{}).type, FrameType::D);
}

TEST(Config, Validation) {
    CodecConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    cfg.epsilon = 1.01;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg.epsilon = 0.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = {};
    cfg.stability_window = -1;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = {};
    cfg.max_features = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(NFrameRule, Decisions) {
    using T = FrameType;
    const std::vector<T> four_s{T::S, T::S, T::S, T::S};
    EXPECT_EQ(apply_nframe_rule(four_s, 4, false), WindowDecision::Commit);
    const std::vector<T> ssu{T::S, T::S, T::U};
    EXPECT_EQ(apply_nframe_rule(ssu, 4, false), WindowDecision::Demote);
    const std::vector<T> d{T::D};
    EXPECT_EQ(apply_nframe_rule(d, 4, false), WindowDecision::Demote);
    const std::vector<T> ss{T::S, T::S};
    EXPECT_EQ(apply_nframe_rule(ss, 4, false), WindowDecision::Pending);
    EXPECT_EQ(apply_nframe_rule(ss, 4, true), WindowDecision::Commit);
    EXPECT_EQ(apply_nframe_rule({}, 0, false), WindowDecision::Commit);
}

namespace {

struct ModeFixture {
    KeypointBuffer buffer;
    FrameFeatures curr{1, 640, 480, {}};
    CodecConfig cfg;
};

// Buffer of n keypoints on integer positions; the current frame repeats them
// with identical descriptors, so an identity transform predicts them exactly.
ModeFixture perfect_fixture(int n) {
    std::mt19937_64 rng(5);
    ModeFixture fx;
    for (int i = 0; i < n; ++i) {
        const Keypoint k{static_cast<double>(40 + 13 * (i % 40)), static_cast<double>(40 + 37 * (i / 40)),
                         lattice_scale(1, 0), decode_orientation({20})};
        auto d = rand_desc(rng);
        fx.buffer.keypoints.push_back(k);
        fx.buffer.descriptors.push_back(d);
        fx.curr.features.push_back({k, d});
    }
    return fx;
}

const DecomposedAffine kIdentity{1, 1, 0, 0, 0, 0};

}  // namespace

TEST(AssignModes, PerfectPredictionIsAllSkip) {
    auto fx = perfect_fixture(80);
    const auto ma = assign_modes(fx.curr, fx.buffer, kIdentity, fx.cfg);
    EXPECT_EQ(ma.count(BufferMode::Skip), 80u);
    EXPECT_TRUE(ma.residuals.empty());
    EXPECT_TRUE(ma.intra.empty());
}

TEST(AssignModes, SingleDisplacedKeypointIsInter) {
    auto fx = perfect_fixture(30);
    fx.curr.features[7].keypoint.x += 5;
    fx.curr.features[7].keypoint.y -= 3;
    const auto ma = assign_modes(fx.curr, fx.buffer, kIdentity, fx.cfg);
    ASSERT_EQ(ma.residuals.size(), 1u);
    EXPECT_EQ(ma.residuals[0], (InterResidual{5, -3, 2, 0, 7}));
    EXPECT_EQ(ma.modes[7], BufferMode::Inter);
    EXPECT_EQ(ma.count(BufferMode::Skip), 29u);
    const auto rec = reconstruct_update(fx.buffer.keypoints, kIdentity, ma.modes, ma.residuals, {}, 1.0, 6);
    EXPECT_EQ(rec[7].x, fx.curr.features[7].keypoint.x);
    EXPECT_EQ(rec[7].y, fx.curr.features[7].keypoint.y);
}

TEST(AssignModes, OneStepIsStillSkip) {
    auto fx = perfect_fixture(20);
    fx.curr.features[3].keypoint.x += 1;
    fx.curr.features[4].keypoint.y -= 1;
    const auto ma = assign_modes(fx.curr, fx.buffer, kIdentity, fx.cfg);
    EXPECT_EQ(ma.count(BufferMode::Skip), 20u);
}

struct ClipCase {
    const char* name;
    double dx;
    double scale;
    int dtheta;
    BufferMode expected;
};

class Clipping : public ::testing::TestWithParam<ClipCase> {};

TEST_P(Clipping, RoutesPerThreshold) {
    const auto& c = GetParam();
    auto fx = perfect_fixture(20);
    auto& k = fx.curr.features[5].keypoint;
    k.x += c.dx;
    k.sigma *= 1.0 + c.scale;
    k.theta = decode_orientation({static_cast<std::uint32_t>(20 + c.dtheta)});
    const auto ma = assign_modes(fx.curr, fx.buffer, kIdentity, fx.cfg);
    EXPECT_EQ(ma.modes[5], c.expected);
    if (c.expected == BufferMode::Drop) {
        EXPECT_EQ(ma.intra, (std::vector<std::size_t>{5}));
    } else {
        EXPECT_TRUE(ma.intra.empty());
    }
    EXPECT_EQ(ma.count(BufferMode::Skip) + ma.count(BufferMode::Inter) + ma.count(BufferMode::Drop), 20u);
    EXPECT_EQ(ma.intra.size(), fx.curr.size() - (20 - ma.count(BufferMode::Drop)));
}

INSTANTIATE_TEST_SUITE_P(
    Boundaries, Clipping,
    ::testing::Values(ClipCase{"dx17", 17, 0, 0, BufferMode::Drop}, ClipCase{"dx16", 16, 0, 0, BufferMode::Inter},
                      ClipCase{"dxm17", -17, 0, 0, BufferMode::Drop}, ClipCase{"scale031", 0, 0.31, 0, BufferMode::Drop},
                      ClipCase{"scale030", 0, 0.30, 0, BufferMode::Inter},
                      ClipCase{"scalem030", 0, -0.30, 0, BufferMode::Inter},
                      ClipCase{"theta5", 0, 0, 5, BufferMode::Drop}, ClipCase{"theta4", 0, 0, 4, BufferMode::Inter},
                      ClipCase{"thetam5", 0, 0, -5, BufferMode::Drop}),
    [](const auto& info) { return std::string(info.param.name); });

TEST(Residual, ScaleIndexMapping) {
    const LocationGrid g{640, 480, 1.0};
    const Keypoint est{100, 100, 4.0, 0.0};
    for (auto [ratio, idx] : std::vector<std::pair<double, int>>{{-0.3, 0}, {-0.15, 1}, {0.0, 2}, {0.07, 2},
                                                                  {0.08, 3}, {0.3, 4}}) {
        Keypoint c = est;
        c.sigma = est.sigma * (1 + ratio);
        const auto r = compute_residual(c, est, g, 6);
        ASSERT_TRUE(r.has_value()) << ratio;
        EXPECT_EQ(r->scale_idx, idx) << ratio;
    }
}

TEST(SFrameUpdate, IdentityAndTranslation) {
    auto fx = perfect_fixture(30);
    auto b = fx.buffer;
    s_frame_update(b, kIdentity, 640, 480);
    EXPECT_EQ(b.keypoints, fx.buffer.keypoints);
    s_frame_update(b, {1, 1, 0, 0, 3.5, -2.0}, 640, 480);
    for (std::size_t i = 0; i < b.size(); ++i) {
        EXPECT_EQ(b.keypoints[i].x, fx.buffer.keypoints[i].x + 3.5);
        EXPECT_EQ(b.keypoints[i].y, fx.buffer.keypoints[i].y - 2.0);
    }
}

TEST(SFrameUpdate, PrunesKeypointsLeavingTheFrame) {
    KeypointBuffer b;
    b.keypoints = {{5, 5, 2, 0}, {600, 5, 2, 0}};
    b.descriptors = {{1.0f}, {2.0f}};
    s_frame_update(b, {1, 1, 0, 0, -10, 0}, 640, 480);
    ASSERT_EQ(b.size(), 1u);
    EXPECT_EQ(b.keypoints[0].x, 590);
    EXPECT_EQ(b.descriptors[0], std::vector<float>{2.0f});
}

TEST(SFrameUpdate, ComposedSkipsTrackGroundTruthWithinQuantizationBound) {
    std::mt19937_64 rng(6);
    const AffineQuantizer aq{64};
    std::uniform_real_distribution<double> r(0.97, 1.03), q(-0.02, 0.02), p(-0.05, 0.05), t(-10, 10);
    std::uniform_real_distribution<double> px(200, 440), py(150, 330);
    const std::array<double, 6> half{aq.r1().step() / 2, aq.r2().step() / 2, aq.q().step() / 2,
                                     aq.phi().step() / 2, aq.tx().step() / 2, aq.ty().step() / 2};
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<Keypoint> truth, buf;
        for (int i = 0; i < 20; ++i) truth.push_back({px(rng), py(rng), 3.0, 0.0});
        buf = truth;
        std::vector<double> bound(truth.size(), 0.0);
        for (int frame = 0; frame < 3; ++frame) {
            const DecomposedAffine D{r(rng), r(rng), q(rng), p(rng), t(rng), t(rng)};
            const auto Dq = aq.dequantize(aq.quantize(D));
            const auto Aq = recompose(Dq);
            const double gain = std::hypot(Aq.a, Aq.b) + std::hypot(Aq.c, Aq.d);  // >= operator norm
            for (std::size_t i = 0; i < truth.size(); ++i) {
                // first-order effect of each parameter half-step at this keypoint
                double b = 0;
                for (int k = 0; k < 6; ++k) {
                    auto Dp = D;
                    double* f[6] = {&Dp.r1, &Dp.r2, &Dp.q, &Dp.phi, &Dp.tx, &Dp.ty};
                    *f[k] += half[k];
                    const auto a = estimate_keypoint(truth[i], Dp), c = estimate_keypoint(truth[i], D);
                    b += std::hypot(a.x - c.x, a.y - c.y);
                }
                bound[i] = gain * bound[i] + b;
                truth[i] = estimate_keypoint(truth[i], D);
                buf[i] = estimate_keypoint(buf[i], Dq);
            }
        }
        for (std::size_t i = 0; i < truth.size(); ++i)
            ASSERT_LE(std::hypot(truth[i].x - buf[i].x, truth[i].y - buf[i].y), 1.01 * bound[i] + 1e-9);
    }
}

TEST(Intra, FirstKeypointPerCellWinsInRasterOrder) {
    const LocationGrid g{100, 100, 1.0};
    const auto cb = default_scale_codebook();
    std::vector<Keypoint> kps{{50.2, 10, 4, 0}, {3, 40, 4, 0}, {49.8, 10.3, 8, 1}, {7, 10, 4, 0}};
    const auto ik = prepare_intra(kps, g, cb, 6);
    ASSERT_EQ(ik.size(), 3u);
    EXPECT_EQ(ik[0].cell, (QuantizedLocation{7, 10}));
    EXPECT_EQ(ik[1].cell, (QuantizedLocation{50, 10}));
    EXPECT_EQ(ik[1].source, 0u);
    EXPECT_EQ(ik[2].cell, (QuantizedLocation{3, 40}));
    const auto k = reconstruct_intra(ik[1], 1.0, cb, 6);
    EXPECT_EQ(k.x, 50.0);
    EXPECT_EQ(k.y, 10.0);
}
