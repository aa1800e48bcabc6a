#include <gtest/gtest.h>

#include <set>
#include <tuple>

#include "mdet/decode.hpp"
#include "mdet/rng.hpp"
#include "mdet/targets.hpp"
#include "support/oracles.hpp"

using namespace mdet;

namespace {

const Lattice& default_lattice() {
    static Lattice lat(lattice_preset("full25"));
    return lat;
}

std::vector<CornersLayerOutput> as_outputs(const CornersTargetBundle& b) {
    std::vector<CornersLayerOutput> outs;
    for (const auto& t : b.layers)
        outs.push_back({t.tl_heat, t.br_heat, t.tl_off, t.br_off, t.tl_center_reg, t.br_center_reg});
    return outs;
}

std::vector<CentersLayerOutput> as_outputs(const CentersTargetBundle& b) {
    std::vector<CentersLayerOutput> outs;
    for (const auto& t : b.layers) outs.push_back({t.heat, t.tl_reg, t.br_reg});
    return outs;
}

}  // namespace

TEST(DecodeCenters, PerfectTargetsRecoverBoxes) {
    auto rng = make_rng(51);
    const Lattice& lat = default_lattice();
    for (int trial = 0; trial < 50; ++trial) {
        const auto boxes = oracle::clean_scene(rng, lat, {});
        const auto bundle = encode_centers(lat, boxes, 2, 512, 512);
        const auto dets = decode_centers(lat, as_outputs(bundle), 100);
        for (const Box& gt : boxes) {
            double best = 0.0;
            for (const Detection& d : dets)
                if (d.box.class_id == gt.class_id) best = std::max(best, iou(d.box, gt));
            EXPECT_GE(best, 0.9) << "trial " << trial;
        }
    }
}

TEST(DecodeCenters, AllZeroHeatmapsGiveNothing) {
    const Lattice& lat = default_lattice();
    const auto bundle = encode_centers(lat, {}, 2, 512, 512);
    DecodeStats stats;
    const auto dets = decode_centers(lat, as_outputs(bundle), 100, &stats);
    EXPECT_TRUE(dets.empty());
}

TEST(DecodeCenters, SinglePeakArithmetic) {
    const Lattice& lat = default_lattice();
    std::vector<CentersLayerOutput> outs;
    for (const Layer& l : lat.layers()) {
        const auto [h, w] = Lattice::feature_shape(l, 512, 512);
        outs.push_back({Tensor({1, h, w}), Tensor({2, h, w}), Tensor({2, h, w})});
    }
    const int li = lat.index_of(1, 1);
    outs[li].heat.at(0, 4, 4) = 0.7;
    outs[li].tl_reg.at(0, 4, 4) = 2.0;
    outs[li].tl_reg.at(1, 4, 4) = 1.5;
    outs[li].br_reg.at(0, 4, 4) = -2.0;
    outs[li].br_reg.at(1, 4, 4) = -1.0;
    const auto dets = decode_centers(lat, outs, 100);
    ASSERT_EQ(dets.size(), 1u);
    EXPECT_DOUBLE_EQ(dets[0].score, 0.7);
    EXPECT_DOUBLE_EQ(dets[0].box.x1, 36.0 - 16.0);  // cell center 36 minus 2 strides
    EXPECT_DOUBLE_EQ(dets[0].box.y1, 36.0 - 12.0);
    EXPECT_DOUBLE_EQ(dets[0].box.x2, 36.0 + 16.0);
    EXPECT_DOUBLE_EQ(dets[0].box.y2, 36.0 + 8.0);
    EXPECT_EQ(dets[0].layer_r, 1);
    EXPECT_EQ(dets[0].layer_c, 1);
}

TEST(DecodeCorners, PerfectTargetsRecoverCorners) {
    auto rng = make_rng(53);
    const Lattice& lat = default_lattice();
    for (int trial = 0; trial < 50; ++trial) {
        const auto boxes = oracle::clean_scene(rng, lat, {});
        const auto bundle = encode_corners(lat, boxes, 2, 512, 512);
        const auto [tl, br] = decode_corners(lat, as_outputs(bundle), 50);
        const auto dets = match_corners(lat, tl, br, 0.3);
        EXPECT_EQ(dets.size(), boxes.size()) << "trial " << trial;
        for (const Box& gt : boxes) {
            double best_err = 1e30;
            for (const Detection& d : dets) {
                if (d.box.class_id != gt.class_id) continue;
                const double err =
                    std::max(std::max(std::abs(d.box.x1 - gt.x1), std::abs(d.box.y1 - gt.y1)),
                             std::max(std::abs(d.box.x2 - gt.x2), std::abs(d.box.y2 - gt.y2)));
                best_err = std::min(best_err, err);
            }
            EXPECT_LT(best_err, 1e-6);
        }
    }
}

TEST(DecodeCorners, OversizedKSaturates) {
    const Lattice lat(LatticeSpec{8.0, {24.0, 48.0}, 0.8, 1.3, 2, 2, {}});
    const auto bundle = encode_corners(lat, {{8, 8, 40, 40, 0}}, 1, 128, 128);
    const auto [tl, br] = decode_corners(lat, as_outputs(bundle), 1000000);
    size_t cells = 0;
    for (const Layer& l : lat.layers()) {
        const auto [h, w] = Lattice::feature_shape(l, 128, 128);
        cells += static_cast<size_t>(h) * w;
    }
    EXPECT_EQ(tl.size(), cells);
    EXPECT_EQ(br.size(), cells);
}

TEST(DecodeCorners, FlipSymmetry) {
    auto rng = make_rng(59);
    const Lattice& lat = default_lattice();
    const auto boxes = oracle::clean_scene(rng, lat, {});
    if (boxes.empty()) GTEST_SKIP();
    std::vector<Box> mirrored;
    for (Box b : boxes) {
        const double x1 = 512.0 - b.x2, x2 = 512.0 - b.x1;
        b.x1 = x1;
        b.x2 = x2;
        mirrored.push_back(b);
    }
    const auto direct = match_corners(
        lat, decode_corners(lat, as_outputs(encode_corners(lat, boxes, 2, 512, 512)), 50).first,
        decode_corners(lat, as_outputs(encode_corners(lat, boxes, 2, 512, 512)), 50).second, 0.3);
    const auto flipped = match_corners(
        lat, decode_corners(lat, as_outputs(encode_corners(lat, mirrored, 2, 512, 512)), 50).first,
        decode_corners(lat, as_outputs(encode_corners(lat, mirrored, 2, 512, 512)), 50).second, 0.3);
    const auto merged = merge_flip({}, flipped, 512.0);
    ASSERT_EQ(merged.size(), direct.size());
    for (const Detection& d : direct) {
        double best = 1e30;
        for (const Detection& m : merged)
            if (m.box.class_id == d.box.class_id)
                best = std::min(best, std::abs(m.box.x1 - d.box.x1) + std::abs(m.box.y1 - d.box.y1) +
                                          std::abs(m.box.x2 - d.box.x2) + std::abs(m.box.y2 - d.box.y2));
        EXPECT_LT(best, 1e-6);
    }
}

TEST(MatchCorners, WorkedErrorExample) {
    // TL(10,10), BR(50,90): implied center (30,50), half extents (20,40).
    // TL predicting (31,49) gives errors 0.05 and 0.025 -- inside the gate.
    CornerCandidate tl{CornerKind::TopLeft, 0, 1.0, 10, 10, 31, 49, 0};
    CornerCandidate br{CornerKind::BottomRight, 0, 1.0, 50, 90, 30, 50, 0};
    const Lattice& lat = default_lattice();
    EXPECT_EQ(match_corners(lat, {tl}, {br}, 0.3).size(), 1u);

    // push the TL prediction to 7px x-error: 7/20 = 0.35 > 0.3
    tl.center_x = 37;
    tl.center_y = 50;
    EXPECT_TRUE(match_corners(lat, {tl}, {br}, 0.3).empty());
}

TEST(MatchCorners, ExactMidpointsMatch) {
    CornerCandidate tl{CornerKind::TopLeft, 1, 0.8, 0, 0, 20, 30, 3};
    CornerCandidate br{CornerKind::BottomRight, 1, 0.6, 40, 60, 20, 30, 3};
    const auto dets = match_corners(default_lattice(), {tl}, {br}, 0.3);
    ASSERT_EQ(dets.size(), 1u);
    EXPECT_DOUBLE_EQ(dets[0].score, 0.7);  // mean of corner scores
    EXPECT_EQ(dets[0].box.class_id, 1);
}

TEST(MatchCorners, RejectsInvertedAndCrossLayerPairs) {
    CornerCandidate tl{CornerKind::TopLeft, 0, 1.0, 50, 50, 60, 60, 0};
    CornerCandidate br{CornerKind::BottomRight, 0, 1.0, 40, 70, 45, 60, 0};
    EXPECT_TRUE(match_corners(default_lattice(), {tl}, {br}, 0.3).empty());  // tl.x >= br.x

    CornerCandidate tl2{CornerKind::TopLeft, 0, 1.0, 0, 0, 20, 20, 0};
    CornerCandidate br2{CornerKind::BottomRight, 0, 1.0, 40, 40, 20, 20, 1};  // other layer
    EXPECT_TRUE(match_corners(default_lattice(), {tl2}, {br2}, 0.3).empty());
}

TEST(MatchCorners, SideBySideObjectsStaySeparate) {
    // two same-class objects, perfect predictions: the two true pairs match,
    // the two cross pairs fail the 30% gate
    const Box a{10, 10, 50, 50, 0};
    const Box b{120, 10, 160, 50, 0};
    std::vector<CornerCandidate> tls, brs;
    for (const Box& box : {a, b}) {
        tls.push_back({CornerKind::TopLeft, 0, 1.0, box.x1, box.y1, box.center_x(), box.center_y(), 0});
        brs.push_back({CornerKind::BottomRight, 0, 1.0, box.x2, box.y2, box.center_x(), box.center_y(), 0});
    }
    const auto dets = match_corners(default_lattice(), tls, brs, 0.3);
    ASSERT_EQ(dets.size(), 2u);
    const auto brute = oracle::match_pairs_scan(tls, brs, 0.3);
    EXPECT_EQ(brute.size(), 2u);
}

TEST(MatchCorners, AgreesWithBruteForceOnRandomCandidates) {
    auto rng = make_rng(61);
    const Lattice& lat = default_lattice();
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<CornerCandidate> tls, brs;
        const int n = uniform_int(rng, 1, 8);
        for (int i = 0; i < n; ++i) {
            CornerCandidate tl;
            tl.kind = CornerKind::TopLeft;
            tl.class_id = uniform_int(rng, 0, 1);
            tl.layer_index = uniform_int(rng, 0, 2);
            tl.score = uniform_unit(rng);
            tl.x = uniform(rng, 0.0, 400.0);
            tl.y = uniform(rng, 0.0, 400.0);
            tl.center_x = tl.x + uniform(rng, 0.0, 120.0);
            tl.center_y = tl.y + uniform(rng, 0.0, 120.0);
            tls.push_back(tl);
            CornerCandidate br;
            br.kind = CornerKind::BottomRight;
            br.class_id = uniform_int(rng, 0, 1);
            br.layer_index = uniform_int(rng, 0, 2);
            br.score = uniform_unit(rng);
            br.x = uniform(rng, 40.0, 512.0);
            br.y = uniform(rng, 40.0, 512.0);
            br.center_x = br.x - uniform(rng, 0.0, 120.0);
            br.center_y = br.y - uniform(rng, 0.0, 120.0);
            brs.push_back(br);
        }
        const auto dets = match_corners(lat, tls, brs, 0.3);
        const auto brute = oracle::match_pairs_scan(tls, brs, 0.3);
        std::multiset<std::tuple<double, double, double, double>> got, want;
        for (const Detection& d : dets) got.insert({d.box.x1, d.box.y1, d.box.x2, d.box.y2});
        for (const auto& [i, j] : brute)
            want.insert({tls[static_cast<size_t>(i)].x, tls[static_cast<size_t>(i)].y,
                         brs[static_cast<size_t>(j)].x, brs[static_cast<size_t>(j)].y});
        EXPECT_EQ(got, want) << "trial " << trial;
    }
}

TEST(MergeFlip, Examples) {
    Detection d;
    d.box = {10, 0, 20, 10, 0};
    d.score = 0.5;
    const auto merged = merge_flip({}, {d}, 100.0);
    ASSERT_EQ(merged.size(), 1u);
    EXPECT_DOUBLE_EQ(merged[0].box.x1, 80.0);
    EXPECT_DOUBLE_EQ(merged[0].box.x2, 90.0);
    EXPECT_DOUBLE_EQ(merged[0].box.y1, 0.0);

    EXPECT_EQ(merge_flip({d}, {}, 100.0).size(), 1u);  // empty flipped list: identity

    Detection centered;
    centered.box = {40, 0, 60, 10, 0};
    const auto self = merge_flip({}, {centered}, 100.0);
    EXPECT_DOUBLE_EQ(self[0].box.x1, 40.0);
    EXPECT_DOUBLE_EQ(self[0].box.x2, 60.0);
}

TEST(SoftNms, ClosedFormDecay) {
    Detection a, b;
    a.box = b.box = {10, 10, 50, 50, 0};
    a.score = 0.9;
    b.score = 0.8;
    const auto out = soft_nms({a, b}, 0.5, 0.001);
    ASSERT_EQ(out.size(), 2u);
    EXPECT_DOUBLE_EQ(out[0].score, 0.9);
    EXPECT_NEAR(out[1].score, 0.8 * std::exp(-1.0 / 0.5), 1e-12);
}

TEST(SoftNms, DisjointAndCrossClassUntouched) {
    Detection a, b, c;
    a.box = {0, 0, 10, 10, 0};
    a.score = 0.9;
    b.box = {100, 100, 120, 120, 0};
    b.score = 0.8;
    c.box = {0, 0, 10, 10, 1};  // same box, other class
    c.score = 0.7;
    const auto out = soft_nms({a, b, c}, 0.5, 0.001);
    ASSERT_EQ(out.size(), 3u);
    EXPECT_DOUBLE_EQ(out[0].score, 0.9);
    EXPECT_DOUBLE_EQ(out[1].score, 0.8);
    EXPECT_DOUBLE_EQ(out[2].score, 0.7);
}

TEST(SoftNms, SmallSigmaApproachesHardNms) {
    Detection a, b;
    a.box = {10, 10, 50, 50, 0};
    a.score = 0.9;
    b.box = {12, 12, 52, 52, 0};  // heavy overlap
    b.score = 0.8;
    const auto out = soft_nms({a, b}, 1e-4, 0.001);
    ASSERT_EQ(out.size(), 1u);  // decayed below the floor: effectively removed
    EXPECT_DOUBLE_EQ(out[0].score, 0.9);
}

TEST(SelectTop, Basics) {
    std::vector<Detection> dets;
    for (int i = 0; i < 3; ++i) {
        Detection d;
        d.box = {0.0 + i, 0, 10.0 + i, 10, 0};
        d.score = 0.5;
        dets.push_back(d);
    }
    EXPECT_EQ(select_top(dets, 100).size(), 3u);

    std::vector<Detection> many;
    auto rng = make_rng(67);
    for (int i = 0; i < 150; ++i) {
        Detection d;
        d.box = {uniform(rng, 0, 100), 0, uniform(rng, 101, 200), 10, 0};
        d.score = uniform_unit(rng);
        many.push_back(d);
    }
    const auto top = select_top(many, 100);
    EXPECT_EQ(top.size(), 100u);
    for (size_t i = 1; i < top.size(); ++i) EXPECT_GE(top[i - 1].score, top[i].score);

    // equal scores: deterministic order by class then coordinates
    const auto tie1 = select_top(dets, 2);
    const auto tie2 = select_top(dets, 2);
    ASSERT_EQ(tie1.size(), 2u);
    EXPECT_DOUBLE_EQ(tie1[0].box.x1, 0.0);
    EXPECT_DOUBLE_EQ(tie1[1].box.x1, 1.0);
    EXPECT_DOUBLE_EQ(tie2[0].box.x1, 0.0);
}

TEST(Pipeline, MatchCountLinearInObjects) {
    auto rng = make_rng(71);
    const Lattice& lat = default_lattice();
    for (int trial = 0; trial < 30; ++trial) {
        oracle::CleanSceneParams p;
        p.max_objects = 6;
        const auto boxes = oracle::clean_scene(rng, lat, p);
        const auto bundle = encode_corners(lat, boxes, 2, 512, 512);
        std::vector<CornersLayerOutput> outs = as_outputs(bundle);
        auto [tl, br] = decode_corners(lat, outs, 50);
        const auto dets = match_corners(lat, tl, br, 0.3);
        EXPECT_EQ(dets.size(), boxes.size());
    }
}
