// viewprop/geometry.hpp
//
// Depth-guided cross-view geometry. The central object is the per-pixel
// correspondence map from a target view into a source view, built by
// gathering: unproject each target pixel through its own depth, project into
// the source, then keep only correspondences that survive three filters:
//   1. frustum membership both ways,
//   2. depth agreement between projected depth and the source depth map,
//   3. cycle reprojection error target -> source -> target below a cap.
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "viewprop/camera.hpp"
#include "viewprop/core.hpp"
#include "viewprop/image.hpp"
#include "viewprop/scene.hpp"

namespace viewprop {

// Validity filters for correspondences. Tolerances are relative for depths
// and in pixels for the cycle reprojection error.
struct FilterPolicy {
    double max_reprojection_error = 5.0;       // pixels, cycle error cap
    double depth_agreement_tolerance = 0.01;   // relative depth mismatch cap
    bool require_in_frustum = true;            // demand image-bounds membership
    // Bilinear depth samples whose 2x2 patch spans a larger relative spread
    // are rejected as straddling a depth edge (no surface has that depth).
    double depth_discontinuity_tolerance = 0.10;

    void validate() const {
        if (!(max_reprojection_error > 0.0))
            throw std::invalid_argument("filter: max_reprojection_error must be positive");
        if (!(depth_agreement_tolerance > 0.0))
            throw std::invalid_argument("filter: depth_agreement_tolerance must be positive");
        if (!(depth_discontinuity_tolerance > 0.0))
            throw std::invalid_argument("filter: depth_discontinuity_tolerance must be positive");
    }
};

// World points aligned with a view's pixel grid; entries without valid
// depth are flagged rather than dropped so pixel indexing stays direct.
struct PointCloud {
    int width = 0;
    int height = 0;
    std::vector<Eigen::Vector3d> points;
    std::vector<std::uint8_t> valid;

    std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
};

inline PointCloud unproject(const ViewRecord& view) {
    PointCloud cloud;
    cloud.width = view.intrinsics.width;
    cloud.height = view.intrinsics.height;
    cloud.points.assign(static_cast<std::size_t>(cloud.width) * cloud.height,
                        Eigen::Vector3d::Zero());
    cloud.valid.assign(cloud.points.size(), 0);
    for (int y = 0; y < cloud.height; ++y) {
        for (int x = 0; x < cloud.width; ++x) {
            if (!view.depth.is_valid(x, y)) continue;
            std::size_t i = cloud.index(x, y);
            cloud.points[i] = unproject_pixel(view.intrinsics, view.pose, x + 0.5, y + 0.5,
                                              view.depth.at(x, y));
            cloud.valid[i] = 1;
        }
    }
    return cloud;
}

// Projects a point cloud into a camera; output aligned with the cloud grid.
inline std::vector<PixelProjection> project_points(const PointCloud& cloud,
                                                   const CameraIntrinsics& intr,
                                                   const RigidPose& pose) {
    std::vector<PixelProjection> out(cloud.points.size());
    for (std::size_t i = 0; i < cloud.points.size(); ++i) {
        if (!cloud.valid[i]) continue;
        out[i] = project_to_pixel(intr, pose, cloud.points[i]);
    }
    return out;
}

// One target-pixel correspondence into a source view.
struct CorrEntry {
    double u = 0.0;                // source continuous pixel coordinates
    double v = 0.0;
    double error = 0.0;            // cycle reprojection error, pixels
    double projected_depth = 0.0;  // target point's z in the source camera
    bool valid = false;
};

struct CorrespondenceMap {
    int target_id = 0;
    int source_id = 0;
    int width = 0;   // target grid
    int height = 0;
    std::vector<CorrEntry> entries;

    std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
    std::size_t valid_count() const {
        std::size_t n = 0;
        for (const auto& e : entries) n += e.valid ? 1 : 0;
        return n;
    }
};

inline CorrespondenceMap build_correspondences(const ViewRecord& target, const ViewRecord& source,
                                               const FilterPolicy& policy = {}) {
    policy.validate();
    CorrespondenceMap map;
    map.target_id = target.id;
    map.source_id = source.id;
    map.width = target.intrinsics.width;
    map.height = target.intrinsics.height;
    map.entries.assign(static_cast<std::size_t>(map.width) * map.height, CorrEntry{});

    const double w_src = static_cast<double>(source.intrinsics.width);
    const double h_src = static_cast<double>(source.intrinsics.height);
    const double w_tgt = static_cast<double>(target.intrinsics.width);
    const double h_tgt = static_cast<double>(target.intrinsics.height);

    for (int y = 0; y < map.height; ++y) {
        for (int x = 0; x < map.width; ++x) {
            if (!target.depth.is_valid(x, y)) continue;
            double d_t = target.depth.at(x, y);
            Eigen::Vector3d world =
                unproject_pixel(target.intrinsics, target.pose, x + 0.5, y + 0.5, d_t);

            PixelProjection proj = project_to_pixel(source.intrinsics, source.pose, world);
            if (!proj.in_front) continue;
            if (policy.require_in_frustum &&
                !(proj.u >= 0.0 && proj.u < w_src && proj.v >= 0.0 && proj.v < h_src))
                continue;

            double d_s = 0.0;
            if (!sample_depth_bilinear(source.depth, proj.u, proj.v,
                                       policy.depth_discontinuity_tolerance, &d_s))
                continue;
            if (std::abs(proj.z - d_s) > policy.depth_agreement_tolerance * d_s) continue;

            // Cycle: re-unproject through the source depth, return to target.
            Eigen::Vector3d back =
                unproject_pixel(source.intrinsics, source.pose, proj.u, proj.v, d_s);
            PixelProjection rt = project_to_pixel(target.intrinsics, target.pose, back);
            if (!rt.in_front) continue;
            if (policy.require_in_frustum &&
                !(rt.u >= 0.0 && rt.u < w_tgt && rt.v >= 0.0 && rt.v < h_tgt))
                continue;
            double err = std::hypot(rt.u - (x + 0.5), rt.v - (y + 0.5));
            if (err > policy.max_reprojection_error) continue;

            CorrEntry& e = map.entries[map.index(x, y)];
            e.u = proj.u;
            e.v = proj.v;
            e.error = err;
            e.projected_depth = proj.z;
            e.valid = true;
        }
    }
    return map;
}

// Colors pulled through a correspondence map. `image` holds bilinear
// samples of the source image where `mask` is set and zeros elsewhere;
// callers composite using the mask.
struct TransferResult {
    ImageBuffer image;
    BinaryMask mask;
};

inline TransferResult transfer_colors(const CorrespondenceMap& corr, const ImageBuffer& source) {
    TransferResult out;
    out.image.resize(corr.width, corr.height);
    out.mask.resize(corr.width, corr.height, false);
    for (int y = 0; y < corr.height; ++y) {
        for (int x = 0; x < corr.width; ++x) {
            const CorrEntry& e = corr.entries[corr.index(x, y)];
            if (!e.valid) continue;
            out.image.set_rgb(x, y, bilinear_sample(source, e.u, e.v));
            out.mask.set(x, y, true);
        }
    }
    return out;
}

// ── correspondence dump ─────────────────────────────────────────────────
//
// Flat little-endian binary for offline inspection:
//   int32 target_id, int32 source_id, int32 width, int32 height
//   then width*height records of {float32 u, float32 v, float32 error,
//   uint8 valid}, row-major over the target grid.
// Invalid records are written as zeros. Projected depth is not stored.

inline void write_correspondence_dump(const std::filesystem::path& path,
                                      const CorrespondenceMap& corr) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write correspondence dump: " + path.string());
    auto put_i32 = [&](std::int32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    put_i32(corr.target_id);
    put_i32(corr.source_id);
    put_i32(corr.width);
    put_i32(corr.height);
    for (const auto& e : corr.entries) {
        float u = e.valid ? static_cast<float>(e.u) : 0.0f;
        float v = e.valid ? static_cast<float>(e.v) : 0.0f;
        float err = e.valid ? static_cast<float>(e.error) : 0.0f;
        std::uint8_t flag = e.valid ? 1 : 0;
        out.write(reinterpret_cast<const char*>(&u), 4);
        out.write(reinterpret_cast<const char*>(&v), 4);
        out.write(reinterpret_cast<const char*>(&err), 4);
        out.write(reinterpret_cast<const char*>(&flag), 1);
    }
    if (!out) throw IoError("short write to correspondence dump: " + path.string());
}

inline CorrespondenceMap read_correspondence_dump(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read correspondence dump: " + path.string());
    auto get_i32 = [&]() {
        std::int32_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 4);
        return v;
    };
    CorrespondenceMap corr;
    corr.target_id = get_i32();
    corr.source_id = get_i32();
    corr.width = get_i32();
    corr.height = get_i32();
    if (!in || corr.width <= 0 || corr.height <= 0)
        throw IoError("malformed correspondence dump header: " + path.string());
    corr.entries.assign(static_cast<std::size_t>(corr.width) * corr.height, CorrEntry{});
    for (auto& e : corr.entries) {
        float u = 0, v = 0, err = 0;
        std::uint8_t flag = 0;
        in.read(reinterpret_cast<char*>(&u), 4);
        in.read(reinterpret_cast<char*>(&v), 4);
        in.read(reinterpret_cast<char*>(&err), 4);
        in.read(reinterpret_cast<char*>(&flag), 1);
        e.u = u;
        e.v = v;
        e.error = err;
        e.valid = flag != 0;
    }
    if (!in) throw IoError("truncated correspondence dump: " + path.string());
    return corr;
}

// ── mask propagation ────────────────────────────────────────────────────

struct MaskPropagationResult {
    std::vector<int> accepted;        // view indices in acceptance order, seed first
    std::vector<BinaryMask> masks;    // aligned with `views`; rejected views all-false
};

// Walks views outward from the seed (ordered by camera distance). Each
// candidate receives the union of masks projected from every already
// accepted view (nearest-neighbor, valid correspondences only). The
// candidate is accepted while IoU(projected mask, valid-correspondence
// support) >= overlap_threshold; the walk stops at the first failure, so a
// threshold of 1.0 keeps only the seed on any imperfect scene.
inline MaskPropagationResult propagate_mask(const std::vector<ViewRecord>& views,
                                            int seed_index, const BinaryMask& seed_mask,
                                            double overlap_threshold,
                                            const FilterPolicy& policy = {}) {
    if (seed_index < 0 || seed_index >= static_cast<int>(views.size()))
        throw std::invalid_argument("propagate_mask: seed view out of range");
    const ViewRecord& seed = views[static_cast<std::size_t>(seed_index)];
    if (seed_mask.width != seed.intrinsics.width || seed_mask.height != seed.intrinsics.height)
        throw std::invalid_argument("propagate_mask: seed mask size disagrees with seed view");
    if (seed_mask.empty_mask()) throw std::invalid_argument("propagate_mask: empty seed mask");
    if (!(overlap_threshold >= 0.0 && overlap_threshold <= 1.0))
        throw std::invalid_argument("propagate_mask: overlap threshold must be in [0,1]");

    MaskPropagationResult result;
    result.masks.resize(views.size());
    for (std::size_t i = 0; i < views.size(); ++i)
        result.masks[i].resize(views[i].intrinsics.width, views[i].intrinsics.height, false);
    result.masks[static_cast<std::size_t>(seed_index)] = seed_mask;
    result.accepted.push_back(seed_index);

    // Candidates ordered by camera-center distance to the seed, ties by id.
    std::vector<int> order;
    for (int i = 0; i < static_cast<int>(views.size()); ++i)
        if (i != seed_index) order.push_back(i);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        double da = (views[static_cast<std::size_t>(a)].pose.translation - seed.pose.translation).norm();
        double db = (views[static_cast<std::size_t>(b)].pose.translation - seed.pose.translation).norm();
        if (da != db) return da < db;
        return views[static_cast<std::size_t>(a)].id < views[static_cast<std::size_t>(b)].id;
    });

    for (int cand : order) {
        const ViewRecord& view = views[static_cast<std::size_t>(cand)];
        BinaryMask projected(view.intrinsics.width, view.intrinsics.height, false);
        BinaryMask support(view.intrinsics.width, view.intrinsics.height, false);
        for (int acc : result.accepted) {
            CorrespondenceMap corr =
                build_correspondences(view, views[static_cast<std::size_t>(acc)], policy);
            const BinaryMask& acc_mask = result.masks[static_cast<std::size_t>(acc)];
            for (int y = 0; y < corr.height; ++y)
                for (int x = 0; x < corr.width; ++x) {
                    const CorrEntry& e = corr.entries[corr.index(x, y)];
                    if (!e.valid) continue;
                    support.set(x, y, true);
                    if (nearest_sample_mask(acc_mask, e.u, e.v)) projected.set(x, y, true);
                }
        }

        std::size_t inter = 0, uni = 0;
        for (std::size_t i = 0; i < projected.bits.size(); ++i) {
            bool p = projected.bits[i] != 0;
            bool s = support.bits[i] != 0;
            inter += (p && s) ? 1 : 0;
            uni += (p || s) ? 1 : 0;
        }
        double iou = uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
        if (iou < overlap_threshold) break;
        result.masks[static_cast<std::size_t>(cand)] = std::move(projected);
        result.accepted.push_back(cand);
    }
    return result;
}

}  // namespace viewprop
