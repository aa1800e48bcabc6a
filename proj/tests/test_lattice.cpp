#include <gtest/gtest.h>

#include "mdet/lattice.hpp"
#include "mdet/rng.hpp"
#include "support/oracles.hpp"

using namespace mdet;

TEST(Lattice, PresetSizes) {
    EXPECT_EQ(Lattice(lattice_preset("fpn5")).layers().size(), 5u);
    EXPECT_EQ(Lattice(lattice_preset("xnet19")).layers().size(), 19u);
    EXPECT_EQ(Lattice(lattice_preset("full25")).layers().size(), 25u);
    EXPECT_THROW(lattice_preset("fpn7"), std::invalid_argument);
}

TEST(Lattice, BaseLayerNeighborRanges) {
    const Lattice lat(lattice_preset("full25"));
    const Layer& l12 = lat.layer(1, 2);
    EXPECT_DOUBLE_EQ(l12.h_range.lo, 24.0);
    EXPECT_DOUBLE_EQ(l12.h_range.hi, 48.0);
    EXPECT_DOUBLE_EQ(l12.w_range.lo, 48.0);
    EXPECT_DOUBLE_EQ(l12.w_range.hi, 96.0);

    // width halves per step right relative to the feature map: stride doubles
    const Layer& l33 = lat.layer(3, 3);
    const Layer& l34 = lat.layer(3, 4);
    EXPECT_DOUBLE_EQ(l34.stride_w, 2.0 * l33.stride_w);
    EXPECT_DOUBLE_EQ(l34.stride_h, l33.stride_h);
}

TEST(Lattice, RelaxedBaseRange) {
    const Lattice lat(lattice_preset("fpn5"));
    const Layer& base = lat.layer(1, 1);
    EXPECT_DOUBLE_EQ(base.w_relaxed.lo, 24.0 * 0.8);
    EXPECT_DOUBLE_EQ(base.w_relaxed.hi, 48.0 * 1.3);
    EXPECT_NEAR(base.w_relaxed.lo, 19.2, 1e-12);
    EXPECT_NEAR(base.w_relaxed.hi, 62.4, 1e-12);
    EXPECT_DOUBLE_EQ(base.h_relaxed.lo, base.w_relaxed.lo);
}

TEST(Lattice, RangeDoublingExact) {
    const Lattice lat(lattice_preset("full25"));
    for (const Layer& l : lat.layers()) {
        EXPECT_DOUBLE_EQ(l.w_range.lo, 24.0 * std::ldexp(1.0, l.c - 1));
        EXPECT_DOUBLE_EQ(l.w_range.hi, 48.0 * std::ldexp(1.0, l.c - 1));
        EXPECT_DOUBLE_EQ(l.h_range.lo, 24.0 * std::ldexp(1.0, l.r - 1));
        EXPECT_DOUBLE_EQ(l.h_range.hi, 48.0 * std::ldexp(1.0, l.r - 1));
        EXPECT_LT(l.w_relaxed.lo, l.w_range.lo);
        EXPECT_GT(l.w_relaxed.hi, l.w_range.hi);
    }
}

TEST(Lattice, AssignExamples) {
    const Lattice lat(lattice_preset("full25"));
    auto rc = [&](double w, double h) {
        std::set<std::pair<int, int>> out;
        Box b{0, 0, w, h, 0};
        for (int li : lat.assign(b)) out.insert({lat.layers()[li].r, lat.layers()[li].c});
        return out;
    };
    EXPECT_EQ(rc(150, 40), (std::set<std::pair<int, int>>{{1, 3}}));
    EXPECT_EQ(rc(50, 30), (std::set<std::pair<int, int>>{{1, 1}, {1, 2}}));
    EXPECT_EQ(rc(30, 30), (std::set<std::pair<int, int>>{{1, 1}}));
    EXPECT_TRUE(rc(10, 10).empty());  // below the relaxed minimum
}

TEST(Lattice, AssignMatchesBruteForce) {
    const LatticeSpec spec = lattice_preset("xnet19");
    const Lattice lat(spec);
    auto rng = make_rng(7);
    for (int i = 0; i < 10000; ++i) {
        const double w = uniform(rng, 5.0, 1200.0);
        const double h = uniform(rng, 5.0, 1200.0);
        Box b{0, 0, w, h, 0};
        std::set<std::pair<int, int>> got;
        for (int li : lat.assign(b)) got.insert({lat.layers()[li].r, lat.layers()[li].c});
        EXPECT_EQ(got, oracle::assign_scan(spec, w, h)) << "w=" << w << " h=" << h;
    }
}

TEST(Lattice, FpnDegenerationUsesDiagonalOnly) {
    const Lattice lat(lattice_preset("fpn5"));
    auto rng = make_rng(11);
    for (int i = 0; i < 2000; ++i) {
        Box b{0, 0, uniform(rng, 15.0, 1100.0), uniform(rng, 15.0, 1100.0), 0};
        for (int li : lat.assign(b)) EXPECT_EQ(lat.layers()[li].r, lat.layers()[li].c);
    }
}

TEST(Lattice, AdjacentWidthsShareALayer) {
    // relaxed ranges of adjacent columns overlap, so a 1px nudge can never
    // jump between disjoint assignments
    const Lattice lat(lattice_preset("full25"));
    for (int w = 20; w < 990; ++w) {
        Box a{0, 0, static_cast<double>(w), 30.0, 0};
        Box b{0, 0, static_cast<double>(w + 1), 30.0, 0};
        const auto sa = lat.assign(a);
        const auto sb = lat.assign(b);
        if (sa.empty() || sb.empty()) continue;
        std::vector<int> inter;
        std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(inter));
        EXPECT_FALSE(inter.empty()) << "w=" << w;
    }
}

TEST(Lattice, InLayerDynamicRange) {
    // unrelaxed membership keeps the normalized extent within [3, 6] cells
    const Lattice lat(lattice_preset("full25"));
    auto rng = make_rng(13);
    for (int i = 0; i < 2000; ++i) {
        const double w = uniform(rng, 24.0, 768.0);
        for (const Layer& l : lat.layers()) {
            if (!l.w_range.contains(w)) continue;
            const double cells = w / l.stride_w;
            EXPECT_GE(cells, 3.0 - 1e-12);
            EXPECT_LE(cells, 6.0 + 1e-12);
        }
    }
}

TEST(Lattice, FeatureShapeExamples) {
    const Lattice lat(lattice_preset("full25"));
    EXPECT_EQ(Lattice::feature_shape(lat.layer(1, 1), 512, 512), (std::pair<int, int>{64, 64}));
    EXPECT_EQ(Lattice::feature_shape(lat.layer(1, 3), 512, 512), (std::pair<int, int>{64, 16}));
    EXPECT_EQ(Lattice::feature_shape(lat.layer(5, 5), 512, 512), (std::pair<int, int>{4, 4}));
}

TEST(Lattice, CenterCellExamples) {
    const Lattice lat(lattice_preset("full25"));
    Box b{84.0, 84.0, 116.0, 116.0, 0};  // center (100, 100)
    EXPECT_EQ(Lattice::center_cell(lat.layer(1, 1), b, 512, 512), (std::pair<int, int>{12, 12}));
    EXPECT_EQ(Lattice::center_cell(lat.layer(1, 2), b, 512, 512), (std::pair<int, int>{12, 6}));
    Box origin{-1.0, -1.0, 1.0, 1.0, 0};  // center (0, 0)
    EXPECT_EQ(Lattice::center_cell(lat.layer(1, 1), origin, 512, 512), (std::pair<int, int>{0, 0}));
    Box far{500.0, 500.0, 600.0, 600.0, 0};  // center beyond the map: clamps
    EXPECT_EQ(Lattice::center_cell(lat.layer(1, 1), far, 512, 512), (std::pair<int, int>{63, 63}));
}

TEST(Lattice, RejectsBadPruning) {
    LatticeSpec diag = lattice_preset("full25");
    diag.prune.insert({3, 3});
    EXPECT_THROW(Lattice{diag}, std::invalid_argument);

    LatticeSpec gap = lattice_preset("full25");
    gap.prune.insert({1, 3});  // keeps (1,4) but breaks its path to (1,1)
    EXPECT_THROW(Lattice{gap}, std::invalid_argument);

    LatticeSpec bad_range;
    bad_range.base_range = {48.0, 24.0};
    EXPECT_THROW(Lattice{bad_range}, std::invalid_argument);
}

TEST(Lattice, PaddedExtent) {
    const Lattice lat(lattice_preset("xnet19"));
    EXPECT_EQ(lat.max_stride(), 128.0);
    EXPECT_EQ(lat.padded_extent(512), 512);
    EXPECT_EQ(lat.padded_extent(513), 640);
    EXPECT_EQ(lat.padded_extent(900), 1024);
}
