// Cross-view geometry: unprojection, correspondence filtering, color
// transfer, dump I/O, and mask propagation, checked against independent
// ray-cast oracles on synthetic scenes with exact depth.
#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"

#include <cmath>

using namespace viewprop;
using namespace testutil;

namespace {

DatasetManifest ring(const char* preset, int views, int res) {
    return gen_synthetic(make_preset(preset, views, res));
}

// Bilinear interpolation of a correspondence field at continuous source
// coordinates; false unless all four neighboring entries are valid.
bool interp_corr(const CorrespondenceMap& map, double u, double v, double* out_u, double* out_v) {
    double x = u - 0.5, y = v - 0.5;
    int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
    int x1 = x0 + 1, y1 = y0 + 1;
    if (x0 < 0 || y0 < 0 || x1 >= map.width || y1 >= map.height) return false;
    const CorrEntry& e00 = map.entries[map.index(x0, y0)];
    const CorrEntry& e10 = map.entries[map.index(x1, y0)];
    const CorrEntry& e01 = map.entries[map.index(x0, y1)];
    const CorrEntry& e11 = map.entries[map.index(x1, y1)];
    if (!e00.valid || !e10.valid || !e01.valid || !e11.valid) return false;
    double ax = x - x0, ay = y - y0;
    *out_u = e00.u * (1 - ax) * (1 - ay) + e10.u * ax * (1 - ay) + e01.u * (1 - ax) * ay +
             e11.u * ax * ay;
    *out_v = e00.v * (1 - ax) * (1 - ay) + e10.v * ax * (1 - ay) + e01.v * (1 - ax) * ay +
             e11.v * ax * ay;
    return true;
}

}  // namespace

TEST_CASE("unproject follows the depth and pose conventions") {
    SECTION("identity pose, principal point") {
        ViewRecord view;
        view.id = 0;
        view.intrinsics.fx = view.intrinsics.fy = 10.0;
        view.intrinsics.cx = view.intrinsics.cy = 2.0;
        view.intrinsics.width = view.intrinsics.height = 4;
        view.image.resize(4, 4);
        view.depth.resize(4, 4);
        view.modified.resize(4, 4);
        view.depth.set(1, 1, 2.5);
        PointCloud cloud = unproject(view);
        REQUIRE(cloud.valid[cloud.index(1, 1)] == 1);
        // Pixel center (1.5, 1.5) against principal point (2, 2):
        // ((1.5-2)/10 * 2.5, (1.5-2)/10 * 2.5, 2.5).
        CHECK((cloud.points[cloud.index(1, 1)] - Eigen::Vector3d(-0.125, -0.125, 2.5)).norm() <
              1e-12);
        CHECK(cloud.valid[cloud.index(0, 0)] == 0);
    }

    SECTION("all-invalid depth yields an empty cloud") {
        ViewRecord view;
        view.id = 0;
        view.intrinsics.fx = view.intrinsics.fy = 10.0;
        view.intrinsics.cx = view.intrinsics.cy = 2.0;
        view.intrinsics.width = view.intrinsics.height = 4;
        view.image.resize(4, 4);
        view.depth.resize(4, 4);
        view.modified.resize(4, 4);
        PointCloud cloud = unproject(view);
        for (std::uint8_t f : cloud.valid) REQUIRE(f == 0);
    }

    SECTION("project_points round trips to pixel centers within 1e-6 px") {
        DatasetManifest data = ring("plane-ring", 3, 24);
        const ViewRecord& view = data.views[0];
        PointCloud cloud = unproject(view);
        auto projs = project_points(cloud, view.intrinsics, view.pose);
        for (int y = 0; y < 24; ++y)
            for (int x = 0; x < 24; ++x) {
                const PixelProjection& p = projs[cloud.index(x, y)];
                REQUIRE(p.in_front);
                REQUIRE(std::hypot(p.u - (x + 0.5), p.v - (y + 0.5)) < 1e-6);
            }
    }
}

TEST_CASE("self-correspondence is the identity with zero reprojection error") {
    DatasetManifest data = ring("plane-ring", 3, 24);
    const ViewRecord& view = data.views[1];
    CorrespondenceMap map = build_correspondences(view, view);
    REQUIRE(map.valid_count() == 24 * 24);
    for (int y = 0; y < 24; ++y)
        for (int x = 0; x < 24; ++x) {
            const CorrEntry& e = map.entries[map.index(x, y)];
            REQUIRE(e.valid);
            REQUIRE(std::hypot(e.u - (x + 0.5), e.v - (y + 0.5)) < 1e-9);
            REQUIRE(e.error < 1e-9);
            REQUIRE(std::abs(e.projected_depth - view.depth.at(x, y)) < 1e-9);
        }
}

TEST_CASE("correspondences agree with the analytic oracle on a plane") {
    SyntheticSceneSpec spec = make_preset("plane-ring", 8, 48);
    DatasetManifest data = gen_synthetic(spec);
    for (auto [ti, si] : {std::pair{0, 1}, std::pair{0, 3}}) {
        const ViewRecord& target = data.views[static_cast<std::size_t>(ti)];
        const ViewRecord& source = data.views[static_cast<std::size_t>(si)];
        CorrespondenceMap map = build_correspondences(target, source);
        std::size_t checked = 0;
        for (int y = 0; y < 48; ++y)
            for (int x = 0; x < 48; ++x) {
                const CorrEntry& e = map.entries[map.index(x, y)];
                if (!e.valid) continue;
                RefProjection ref;
                REQUIRE(ref_correspondence(spec, target, source, x, y, &ref));
                REQUIRE(std::hypot(e.u - ref.u, e.v - ref.v) < 1e-6);
                REQUIRE(std::abs(e.projected_depth - ref.z) < 1e-9);
                REQUIRE(e.error >= 0.0);
                ++checked;
            }
        // Adjacent ring views over an infinite plane share most of the frame.
        REQUIRE(checked > static_cast<std::size_t>(48 * 48 / 4));
    }
}

TEST_CASE("forward and reverse correspondence fields are mutual inverses") {
    // Tight baseline (adjacent views of a fine ring) keeps the interpolation
    // error of the reverse field well under the 1e-3 px budget.
    DatasetManifest data = ring("plane-ring", 24, 128);
    const ViewRecord& a = data.views[0];
    const ViewRecord& b = data.views[1];
    CorrespondenceMap ab = build_correspondences(a, b);
    CorrespondenceMap ba = build_correspondences(b, a);

    std::size_t checked = 0;
    for (int y = 0; y < 128; ++y)
        for (int x = 0; x < 128; ++x) {
            const CorrEntry& e = ab.entries[ab.index(x, y)];
            if (!e.valid) continue;
            double bu = 0, bv = 0;
            if (!interp_corr(ba, e.u, e.v, &bu, &bv)) continue;
            REQUIRE(std::hypot(bu - (x + 0.5), bv - (y + 0.5)) < 1e-3);
            ++checked;
        }
    REQUIRE(checked > static_cast<std::size_t>(128 * 128 / 2));
}

TEST_CASE("occluded plane pixels are never accepted (sphere over plane)") {
    SyntheticSceneSpec spec = make_preset("sphere-over-plane", 8, 64);
    DatasetManifest data = gen_synthetic(spec);
    const ViewRecord& target = data.views[0];
    const ViewRecord& source = data.views[1];
    CorrespondenceMap map = build_correspondences(target, source);

    std::size_t false_accepts = 0, visible = 0, accepted_visible = 0;
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            bool vis = ref_visible(spec, target, source, x, y);
            bool acc = map.entries[map.index(x, y)].valid;
            if (acc && !vis) ++false_accepts;
            if (vis) {
                ++visible;
                if (acc) ++accepted_visible;
            }
        }
    CHECK(false_accepts == 0);
    REQUIRE(visible > 0);
    CHECK(static_cast<double>(accepted_visible) >= 0.95 * static_cast<double>(visible));
}

TEST_CASE("depth corruption breaks depth agreement") {
    DatasetManifest data = ring("plane-ring", 8, 48);
    ViewRecord target = data.views[0];
    ViewRecord source = data.views[1];
    // 20% depth error in a block: far outside the 1% agreement tolerance.
    for (int y = 10; y < 30; ++y)
        for (int x = 10; x < 30; ++x) source.depth.set(x, y, source.depth.at(x, y) * 1.2);

    CorrespondenceMap clean = build_correspondences(data.views[0], data.views[1]);
    CorrespondenceMap dirty = build_correspondences(target, source);
    for (int y = 0; y < 48; ++y)
        for (int x = 0; x < 48; ++x) {
            const CorrEntry& e = clean.entries[clean.index(x, y)];
            if (!e.valid) continue;
            // Entries that used to land well inside the corrupted block must
            // now be gone (1 px margin keeps bilinear supports unambiguous).
            if (e.u > 11.0 && e.u < 29.0 && e.v > 11.0 && e.v < 29.0)
                REQUIRE_FALSE(dirty.entries[dirty.index(x, y)].valid);
        }
}

TEST_CASE("reprojection error cap filters cycle-inconsistent depth") {
    DatasetManifest data = ring("plane-ring", 20, 64);
    ViewRecord target = data.views[0];
    ViewRecord source = data.views[1];
    // Smooth multiplicative ramp: stays inside the 1% depth agreement band
    // but unprojects off the true surface, so the return trip misses.
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x)
            source.depth.set(x, y, source.depth.at(x, y) * (1.0 + 0.004 * x / 64.0));

    FilterPolicy loose;  // default 5 px cap
    FilterPolicy tight;
    tight.max_reprojection_error = 0.02;
    CorrespondenceMap with_loose = build_correspondences(target, source, loose);
    CorrespondenceMap with_tight = build_correspondences(target, source, tight);
    REQUIRE(with_loose.valid_count() > 0);
    CHECK(with_tight.valid_count() < with_loose.valid_count());
    // Every tightly-accepted entry is also loosely accepted.
    for (std::size_t i = 0; i < with_loose.entries.size(); ++i)
        if (with_tight.entries[i].valid) REQUIRE(with_loose.entries[i].valid);
}

TEST_CASE("filter policy validation") {
    FilterPolicy policy;
    REQUIRE_NOTHROW(policy.validate());
    policy.max_reprojection_error = 0.0;
    CHECK_THROWS_AS(policy.validate(), std::invalid_argument);
    policy = {};
    policy.depth_agreement_tolerance = -0.1;
    CHECK_THROWS_AS(policy.validate(), std::invalid_argument);
    policy = {};
    policy.depth_discontinuity_tolerance = 0.0;
    CHECK_THROWS_AS(policy.validate(), std::invalid_argument);
}

TEST_CASE("transfer_colors composites exactly where correspondences are valid") {
    DatasetManifest data = ring("plane-ring", 8, 48);
    const ViewRecord& target = data.views[0];
    const ViewRecord& source = data.views[1];
    SyntheticSceneSpec spec = make_preset("plane-ring", 8, 48);

    CorrespondenceMap map = build_correspondences(target, source);
    TransferResult res = transfer_colors(map, source.image);
    REQUIRE(res.image.width == 48);
    REQUIRE(res.mask.width == 48);

    std::size_t close = 0, valid = 0;
    for (int y = 0; y < 48; ++y)
        for (int x = 0; x < 48; ++x) {
            const CorrEntry& e = map.entries[map.index(x, y)];
            REQUIRE(res.mask.at(x, y) == e.valid);
            if (!e.valid) {
                REQUIRE(res.image.rgb(x, y).norm() == 0.0);
                continue;
            }
            ++valid;
            RefProjection ref;
            REQUIRE(ref_correspondence(spec, target, source, x, y, &ref));
            Eigen::Vector3d expect = ref_bilinear(source.image, ref.u, ref.v);
            if ((res.image.rgb(x, y) - expect).cwiseAbs().maxCoeff() <= 1.0 / 255.0) ++close;
        }
    REQUIRE(valid > 0);
    CHECK(static_cast<double>(close) >= 0.99 * static_cast<double>(valid));
}

TEST_CASE("correspondence dumps round trip") {
    DatasetManifest data = ring("plane-ring", 4, 24);
    CorrespondenceMap map = build_correspondences(data.views[0], data.views[2]);

    TempDir dir;
    std::filesystem::path file = dir / "corr.bin";
    write_correspondence_dump(file, map);
    CorrespondenceMap back = read_correspondence_dump(file);

    CHECK(back.target_id == map.target_id);
    CHECK(back.source_id == map.source_id);
    CHECK(back.width == map.width);
    CHECK(back.height == map.height);
    for (std::size_t i = 0; i < map.entries.size(); ++i) {
        REQUIRE(back.entries[i].valid == map.entries[i].valid);
        if (!map.entries[i].valid) continue;
        REQUIRE(back.entries[i].u == static_cast<float>(map.entries[i].u));
        REQUIRE(back.entries[i].v == static_cast<float>(map.entries[i].v));
        REQUIRE(back.entries[i].error == static_cast<float>(map.entries[i].error));
    }

    SECTION("truncated dumps are rejected") {
        std::string bytes = read_file(file);
        write_file(file, bytes.substr(0, bytes.size() - 7));
        CHECK_THROWS_AS(read_correspondence_dump(file), IoError);
    }
    SECTION("missing dump") {
        CHECK_THROWS_AS(read_correspondence_dump(dir / "nope.bin"), IoError);
    }
}

TEST_CASE("mask propagation argument validation") {
    DatasetManifest data = ring("plane-ring", 4, 24);
    BinaryMask mask(24, 24, false);
    mask.set(12, 12, true);

    CHECK_THROWS_AS(propagate_mask(data.views, -1, mask, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(propagate_mask(data.views, 9, mask, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(propagate_mask(data.views, 0, mask, 1.5), std::invalid_argument);
    CHECK_THROWS_AS(propagate_mask(data.views, 0, BinaryMask(24, 24, false), 0.5),
                    std::invalid_argument);
    CHECK_THROWS_AS(propagate_mask(data.views, 0, BinaryMask(16, 16, true), 0.5),
                    std::invalid_argument);
}

TEST_CASE("mask propagation threshold extremes") {
    DatasetManifest data = ring("plane-ring", 6, 48);
    BinaryMask mask(48, 48, false);
    for (int y = 18; y < 30; ++y)
        for (int x = 18; x < 30; ++x) mask.set(x, y, true);

    SECTION("threshold 1.0 keeps only the seed on imperfect overlap") {
        MaskPropagationResult res = propagate_mask(data.views, 2, mask, 1.0);
        REQUIRE(res.accepted == std::vector<int>{2});
        for (std::size_t i = 0; i < res.masks.size(); ++i)
            if (i != 2) REQUIRE(res.masks[i].empty_mask());
        REQUIRE(res.masks[2].count() == mask.count());
    }
    SECTION("threshold 0 accepts every view, seed first") {
        MaskPropagationResult res = propagate_mask(data.views, 2, mask, 0.0);
        REQUIRE(res.accepted.size() == data.views.size());
        REQUIRE(res.accepted.front() == 2);
        for (const auto& m : res.masks) REQUIRE_FALSE(m.empty_mask());
    }
}

TEST_CASE("mask projected onto an identical pose reproduces itself") {
    DatasetManifest data = ring("plane-ring", 2, 32);
    data.views[1] = data.views[0];
    data.views[1].id = 1;
    BinaryMask mask(32, 32, false);
    for (int y = 8; y < 20; ++y)
        for (int x = 10; x < 22; ++x) mask.set(x, y, true);

    MaskPropagationResult res = propagate_mask(data.views, 0, mask, 0.0);
    REQUIRE(res.accepted.size() == 2);
    REQUIRE(res.masks[1].bits == mask.bits);
}

TEST_CASE("propagated planar masks match the homography-warped ground truth") {
    SyntheticSceneSpec spec = make_preset("plane-ring", 6, 48);
    DatasetManifest data = gen_synthetic(spec);
    BinaryMask seed(48, 48, false);
    for (int y = 0; y < 48; ++y)
        for (int x = 0; x < 48; ++x)
            if (std::hypot(x + 0.5 - 24.0, y + 0.5 - 24.0) <= 9.0) seed.set(x, y, true);

    // The acceptance gate compares the disk against the view's whole
    // valid-correspondence support, so a small region needs a low threshold.
    MaskPropagationResult res = propagate_mask(data.views, 0, seed, 0.1);
    REQUIRE(res.accepted.size() >= 3);

    // Each accepted view unions one nearest-neighbor hop from the views
    // accepted before it, so the oracle warps those source masks through
    // the analytic plane geometry. For the first non-seed view this is
    // exactly the homography-warped seed mask.
    std::vector<int> sources = {res.accepted.front()};
    for (std::size_t a = 1; a < res.accepted.size(); ++a) {
        int idx = res.accepted[a];
        const ViewRecord& view = data.views[static_cast<std::size_t>(idx)];
        BinaryMask gt(48, 48, false);
        for (int y = 0; y < 48; ++y)
            for (int x = 0; x < 48; ++x)
                for (int src : sources) {
                    RefProjection ref;
                    if (!ref_correspondence(spec, view, data.views[static_cast<std::size_t>(src)],
                                            x, y, &ref))
                        continue;
                    if (!ref.in_bounds) continue;
                    if (nearest_sample_mask(res.masks[static_cast<std::size_t>(src)], ref.u,
                                            ref.v)) {
                        gt.set(x, y, true);
                        break;
                    }
                }
        sources.push_back(idx);
        // Mismatches are allowed only where the ground truth is locally
        // non-constant: a one-pixel band around the mask boundary.
        for (int y = 0; y < 48; ++y)
            for (int x = 0; x < 48; ++x) {
                if (res.masks[static_cast<std::size_t>(idx)].at(x, y) == gt.at(x, y)) continue;
                bool any_true = false, any_false = false;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        int nx = std::clamp(x + dx, 0, 47), ny = std::clamp(y + dy, 0, 47);
                        (gt.at(nx, ny) ? any_true : any_false) = true;
                    }
                INFO("view " << view.id << " pixel (" << x << "," << y << ")");
                REQUIRE((any_true && any_false));
            }
    }
}
