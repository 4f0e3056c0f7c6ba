// viewprop/scene.hpp
//
// Dataset model and I/O, plus the synthetic scene generator.
//
// On-disk dataset layout (all paths relative to the dataset directory):
//   manifest.json          version "viewprop-1", depth_scale, view list
//   NNN.png                8-bit RGB view image
//   NNN_depth.png          16-bit single-channel depth; meters = stored *
//                          depth_scale; stored 0 marks invalid depth
//
// The generator ray-casts planes and spheres analytically with Lambertian
// shading, so colors are view independent and depths are exact z-depths.
// That makes generated scenes usable as geometric ground truth.
#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "viewprop/camera.hpp"
#include "viewprop/core.hpp"
#include "viewprop/image.hpp"
#include "viewprop/png_io.hpp"

namespace viewprop {

// ── dataset model ───────────────────────────────────────────────────────

struct ViewRecord {
    int id = 0;
    CameraIntrinsics intrinsics;
    RigidPose pose;
    ImageBuffer image;
    DepthMap depth;
    BinaryMask modified;  // write-once bookkeeping for propagation
    std::string image_file;
    std::string depth_file;

    void validate() const {
        intrinsics.validate();
        pose.validate();
        if (image.width != intrinsics.width || image.height != intrinsics.height)
            throw std::invalid_argument("view: image size disagrees with intrinsics");
        if (depth.width != intrinsics.width || depth.height != intrinsics.height)
            throw std::invalid_argument("view: depth size disagrees with intrinsics");
        if (modified.width != intrinsics.width || modified.height != intrinsics.height)
            throw std::invalid_argument("view: modified mask size disagrees with intrinsics");
    }
};

struct DatasetManifest {
    std::string version = "viewprop-1";
    double depth_scale = 0.0005;  // meters per stored depth unit
    std::vector<ViewRecord> views;

    void validate() const {
        if (version != "viewprop-1") throw std::invalid_argument("dataset: unsupported version");
        if (!(depth_scale > 0.0) || !std::isfinite(depth_scale))
            throw std::invalid_argument("dataset: depth_scale must be positive");
        if (views.empty()) throw std::invalid_argument("dataset: no views");
        std::set<int> ids;
        for (const auto& v : views) {
            v.validate();
            if (!ids.insert(v.id).second)
                throw std::invalid_argument("dataset: duplicate view id");
        }
        // Ids are contiguous from 0 so id and array index agree after the
        // canonical sort in load_dataset.
        if (*ids.begin() != 0 || *ids.rbegin() != static_cast<int>(views.size()) - 1)
            throw std::invalid_argument("dataset: view ids must be contiguous from 0");
    }
};

namespace detail {

inline std::string view_basename(int id) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%03d", id);
    return buf;
}

}  // namespace detail

// ── dataset I/O ─────────────────────────────────────────────────────────

// Writes the dataset with canonical per-view filenames derived from ids.
// Image channels quantize as round(v*255); depths as round(m/depth_scale)
// clamped to [1, 65535] so a valid depth never collides with the invalid
// sentinel 0. Byte output is deterministic.
inline void save_dataset(const std::filesystem::path& dir, const DatasetManifest& data) {
    data.validate();
    std::filesystem::create_directories(dir);

    nlohmann::ordered_json root;
    root["version"] = data.version;
    root["depth_scale"] = data.depth_scale;
    root["views"] = nlohmann::ordered_json::array();

    for (const auto& view : data.views) {
        std::string base = detail::view_basename(view.id);
        std::string image_name = base + ".png";
        std::string depth_name = base + "_depth.png";

        write_png_rgb8(dir / image_name, view.image);

        std::vector<std::uint16_t> stored(view.depth.depth.size(), 0);
        for (std::size_t i = 0; i < stored.size(); ++i) {
            if (!view.depth.valid[i]) continue;
            double units = view.depth.depth[i] / data.depth_scale;
            long q = std::lround(units);
            if (q < 1) q = 1;
            if (q > 65535) q = 65535;
            stored[i] = static_cast<std::uint16_t>(q);
        }
        write_png_gray16(dir / depth_name, view.intrinsics.width, view.intrinsics.height,
                         stored.data());

        nlohmann::ordered_json v;
        v["id"] = view.id;
        v["image"] = image_name;
        v["depth"] = depth_name;
        v["fx"] = view.intrinsics.fx;
        v["fy"] = view.intrinsics.fy;
        v["cx"] = view.intrinsics.cx;
        v["cy"] = view.intrinsics.cy;
        v["width"] = view.intrinsics.width;
        v["height"] = view.intrinsics.height;
        Eigen::Matrix4d m = view.pose.matrix4();
        auto pose = nlohmann::ordered_json::array();
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c) pose.push_back(m(r, c));
        v["pose"] = pose;
        root["views"].push_back(std::move(v));
    }

    std::ofstream out(dir / "manifest.json", std::ios::binary);
    if (!out) throw IoError("cannot write manifest: " + (dir / "manifest.json").string());
    out << root.dump(2) << "\n";
}

inline DatasetManifest load_dataset(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json", std::ios::binary);
    if (!in) throw IoError("missing manifest: " + (dir / "manifest.json").string());
    nlohmann::json root;
    try {
        in >> root;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed manifest JSON: ") + e.what());
    }

    DatasetManifest data;
    try {
        data.version = root.at("version").get<std::string>();
        if (data.version != "viewprop-1")
            throw IoError("unsupported manifest version: " + data.version);
        data.depth_scale = root.at("depth_scale").get<double>();
        if (!(data.depth_scale > 0.0) || !std::isfinite(data.depth_scale))
            throw IoError("manifest: depth_scale must be positive");

        for (const auto& v : root.at("views")) {
            ViewRecord view;
            view.id = v.at("id").get<int>();
            view.intrinsics.fx = v.at("fx").get<double>();
            view.intrinsics.fy = v.at("fy").get<double>();
            view.intrinsics.cx = v.at("cx").get<double>();
            view.intrinsics.cy = v.at("cy").get<double>();
            view.intrinsics.width = v.at("width").get<int>();
            view.intrinsics.height = v.at("height").get<int>();
            view.image_file = v.at("image").get<std::string>();
            view.depth_file = v.at("depth").get<std::string>();

            const auto& pose = v.at("pose");
            if (!pose.is_array() || pose.size() != 16)
                throw IoError("manifest: pose must be 16 numbers (row-major 4x4)");
            Eigen::Matrix4d m;
            for (int r = 0; r < 4; ++r)
                for (int c = 0; c < 4; ++c) m(r, c) = pose[static_cast<std::size_t>(r * 4 + c)].get<double>();
            try {
                view.pose = RigidPose::from_matrix4(m);
                view.pose.validate();
                view.intrinsics.validate();
            } catch (const std::invalid_argument& e) {
                throw IoError(std::string("manifest view ") + std::to_string(view.id) + ": " +
                              e.what());
            }
            data.views.push_back(std::move(view));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("manifest missing or mistyped field: ") + e.what());
    }

    if (data.views.empty()) throw IoError("manifest: no views");
    std::set<int> ids;
    for (const auto& v : data.views)
        if (!ids.insert(v.id).second) throw IoError("manifest: duplicate view id");
    if (*ids.begin() != 0 || *ids.rbegin() != static_cast<int>(data.views.size()) - 1)
        throw IoError("manifest: view ids must be contiguous from 0");

    // Canonical order: index == id, regardless of manifest array order.
    std::sort(data.views.begin(), data.views.end(),
              [](const ViewRecord& a, const ViewRecord& b) { return a.id < b.id; });

    for (auto& view : data.views) {
        view.image = read_png_rgb8(dir / view.image_file);
        if (view.image.width != view.intrinsics.width ||
            view.image.height != view.intrinsics.height)
            throw IoError("image size disagrees with manifest: " + view.image_file);

        Gray16 raw = read_png_gray16(dir / view.depth_file);
        if (raw.width != view.intrinsics.width || raw.height != view.intrinsics.height)
            throw IoError("depth size disagrees with manifest: " + view.depth_file);
        view.depth.resize(raw.width, raw.height);
        for (int y = 0; y < raw.height; ++y)
            for (int x = 0; x < raw.width; ++x) {
                std::uint16_t s = raw.samples[view.depth.index(x, y)];
                if (s == 0)
                    view.depth.set_invalid(x, y);
                else
                    view.depth.set(x, y, static_cast<double>(s) * data.depth_scale);
            }
        view.modified.resize(view.intrinsics.width, view.intrinsics.height, false);
    }
    return data;
}

// ── synthetic scenes ────────────────────────────────────────────────────

struct PlaneSpec {
    Eigen::Vector3d point = Eigen::Vector3d::Zero();
    Eigen::Vector3d normal = Eigen::Vector3d(0, 0, 1);
    double checker_period = 0.0;  // <= 0 renders solid albedo_a
    Eigen::Vector3d albedo_a = Eigen::Vector3d(0.9, 0.9, 0.9);
    Eigen::Vector3d albedo_b = Eigen::Vector3d(0.3, 0.3, 0.3);
};

struct SphereSpec {
    Eigen::Vector3d center = Eigen::Vector3d::Zero();
    double radius = 1.0;
    Eigen::Vector3d albedo = Eigen::Vector3d(0.8, 0.3, 0.3);
};

// Cameras are spaced evenly on a circle of the given radius in the plane
// z = look_at.z + radius (a fixed 45-degree elevation), all aimed at the
// look-at point.
struct CameraRingSpec {
    int count = 0;
    double radius = 3.0;
    Eigen::Vector3d look_at = Eigen::Vector3d::Zero();
    double fx = 0.0;
    double fy = 0.0;
    double cx = 0.0;
    double cy = 0.0;
};

struct SyntheticSceneSpec {
    int width = 0;
    int height = 0;
    CameraRingSpec ring;
    std::vector<PlaneSpec> planes;
    std::vector<SphereSpec> spheres;
    Eigen::Vector3d light_direction = Eigen::Vector3d(0, 0, -1);  // travel direction
    Eigen::Vector3d background = Eigen::Vector3d(0.08, 0.09, 0.12);
    std::uint64_t seed = 0;  // reserved; rendering is fully analytic
};

namespace detail {

// In-plane orthonormal basis, deterministic in the normal.
inline void plane_basis(const Eigen::Vector3d& n, Eigen::Vector3d* e1, Eigen::Vector3d* e2) {
    Eigen::Vector3d a = std::abs(n.x()) < 0.707 ? Eigen::Vector3d(1, 0, 0)
                                                : Eigen::Vector3d(0, 1, 0);
    *e1 = a.cross(n).normalized();
    *e2 = n.cross(*e1);
}

struct RayHit {
    double t = std::numeric_limits<double>::infinity();  // == z-depth (ray dir has cam z = 1)
    Eigen::Vector3d point = Eigen::Vector3d::Zero();
    Eigen::Vector3d normal = Eigen::Vector3d::Zero();
    Eigen::Vector3d albedo = Eigen::Vector3d::Zero();
    bool hit = false;
};

inline void intersect_plane(const PlaneSpec& plane, const Eigen::Vector3d& origin,
                            const Eigen::Vector3d& dir, RayHit* best) {
    Eigen::Vector3d n = plane.normal.normalized();
    double denom = n.dot(dir);
    if (std::abs(denom) < 1e-12) return;
    double t = n.dot(plane.point - origin) / denom;
    if (t <= 1e-9 || t >= best->t) return;
    best->t = t;
    best->hit = true;
    best->point = origin + dir * t;
    best->normal = denom < 0 ? n : Eigen::Vector3d(-n);
    if (plane.checker_period > 0.0) {
        Eigen::Vector3d e1, e2;
        plane_basis(n, &e1, &e2);
        Eigen::Vector3d q = best->point - plane.point;
        long a = static_cast<long>(std::floor(q.dot(e1) / plane.checker_period));
        long b = static_cast<long>(std::floor(q.dot(e2) / plane.checker_period));
        best->albedo = ((a + b) % 2 + 2) % 2 == 0 ? plane.albedo_a : plane.albedo_b;
    } else {
        best->albedo = plane.albedo_a;
    }
}

inline void intersect_sphere(const SphereSpec& sphere, const Eigen::Vector3d& origin,
                             const Eigen::Vector3d& dir, RayHit* best) {
    Eigen::Vector3d oc = origin - sphere.center;
    double a = dir.squaredNorm();
    double b = 2.0 * oc.dot(dir);
    double c = oc.squaredNorm() - sphere.radius * sphere.radius;
    double disc = b * b - 4 * a * c;
    if (disc < 0) return;
    double sq = std::sqrt(disc);
    double t = (-b - sq) / (2 * a);
    if (t <= 1e-9) t = (-b + sq) / (2 * a);
    if (t <= 1e-9 || t >= best->t) return;
    best->t = t;
    best->hit = true;
    best->point = origin + dir * t;
    best->normal = (best->point - sphere.center).normalized();
    best->albedo = sphere.albedo;
}

inline Eigen::Vector3d shade(const RayHit& hit, const Eigen::Vector3d& light_dir) {
    constexpr double kAmbient = 0.15;
    double lambert = std::max(0.0, hit.normal.dot(-light_dir));
    double f = kAmbient + (1.0 - kAmbient) * lambert;
    return {clamp01(hit.albedo.x() * f), clamp01(hit.albedo.y() * f), clamp01(hit.albedo.z() * f)};
}

}  // namespace detail

// Renders the scene into a full dataset. Deterministic; colors are view
// independent (Lambertian), depths are exact camera-frame z of the first
// hit, pixels with no hit get the background color and invalid depth.
inline DatasetManifest gen_synthetic(const SyntheticSceneSpec& spec) {
    if (spec.width <= 0 || spec.height <= 0)
        throw std::invalid_argument("gen_synthetic: image size must be positive");
    if (spec.ring.count < 2)
        throw std::invalid_argument("gen_synthetic: camera count >= 2 required");
    if (!(spec.ring.radius > 0.0))
        throw std::invalid_argument("gen_synthetic: ring radius must be positive");
    if (spec.light_direction.norm() < 1e-12)
        throw std::invalid_argument("gen_synthetic: light direction must be nonzero");

    CameraIntrinsics intr;
    intr.fx = spec.ring.fx;
    intr.fy = spec.ring.fy;
    intr.cx = spec.ring.cx;
    intr.cy = spec.ring.cy;
    intr.width = spec.width;
    intr.height = spec.height;
    intr.validate();

    Eigen::Vector3d light = spec.light_direction.normalized();

    DatasetManifest data;
    for (int k = 0; k < spec.ring.count; ++k) {
        double theta = 2.0 * M_PI * static_cast<double>(k) / static_cast<double>(spec.ring.count);
        Eigen::Vector3d eye = spec.ring.look_at +
                              Eigen::Vector3d(spec.ring.radius * std::cos(theta),
                                              spec.ring.radius * std::sin(theta),
                                              spec.ring.radius);
        for (const auto& sphere : spec.spheres)
            if ((eye - sphere.center).norm() <= sphere.radius * (1.0 + 1e-12))
                throw GenerationError("gen_synthetic: camera placed inside a sphere");

        ViewRecord view;
        view.id = k;
        view.intrinsics = intr;
        view.pose = look_at_pose(eye, spec.ring.look_at);
        view.image.resize(spec.width, spec.height);
        view.depth.resize(spec.width, spec.height);
        view.modified.resize(spec.width, spec.height, false);
        view.image_file = detail::view_basename(k) + ".png";
        view.depth_file = detail::view_basename(k) + "_depth.png";

        for (int y = 0; y < spec.height; ++y) {
            for (int x = 0; x < spec.width; ++x) {
                Eigen::Vector3d dir_cam = pixel_ray_camera(intr, x + 0.5, y + 0.5);
                Eigen::Vector3d dir = view.pose.rotation * dir_cam;  // cam z = 1: t == z-depth
                detail::RayHit best;
                for (const auto& plane : spec.planes) detail::intersect_plane(plane, eye, dir, &best);
                for (const auto& sphere : spec.spheres)
                    detail::intersect_sphere(sphere, eye, dir, &best);
                if (best.hit) {
                    view.image.set_rgb(x, y, detail::shade(best, light));
                    view.depth.set(x, y, best.t);
                } else {
                    view.image.set_rgb(x, y, spec.background);
                    view.depth.set_invalid(x, y);
                }
            }
        }
        data.views.push_back(std::move(view));
    }
    return data;
}

// ── presets ─────────────────────────────────────────────────────────────
//
// Shared by the CLI and the test fixtures so both produce bit-identical
// datasets for the same arguments.

inline SyntheticSceneSpec make_preset(const std::string& name, int view_count, int resolution,
                                      std::uint64_t seed = 0) {
    if (view_count < 2) throw std::invalid_argument("preset: camera count >= 2 required");
    if (resolution <= 0) throw std::invalid_argument("preset: resolution must be positive");

    SyntheticSceneSpec spec;
    spec.width = resolution;
    spec.height = resolution;
    spec.seed = seed;
    spec.ring.count = view_count;
    spec.ring.radius = 3.0;
    spec.ring.look_at = Eigen::Vector3d::Zero();
    spec.ring.fx = 1.2 * resolution;
    spec.ring.fy = 1.2 * resolution;
    spec.ring.cx = resolution / 2.0;
    spec.ring.cy = resolution / 2.0;
    spec.light_direction = Eigen::Vector3d(0.25, -0.4, -1.0).normalized();

    PlaneSpec ground;
    ground.point = Eigen::Vector3d::Zero();
    ground.normal = Eigen::Vector3d(0, 0, 1);

    if (name == "plane-ring") {
        ground.checker_period = 0.5;
        ground.albedo_a = Eigen::Vector3d(0.92, 0.88, 0.80);
        ground.albedo_b = Eigen::Vector3d(0.28, 0.33, 0.42);
        spec.planes.push_back(ground);
    } else if (name == "plane-ring-soft") {
        // Large, low-contrast checker: enough texture for embeddings, little
        // resampling error at cell edges.
        ground.checker_period = 2.0;
        ground.albedo_a = Eigen::Vector3d(0.62, 0.57, 0.50);
        ground.albedo_b = Eigen::Vector3d(0.50, 0.57, 0.64);
        spec.planes.push_back(ground);
    } else if (name == "sphere-over-plane") {
        ground.checker_period = 0.5;
        ground.albedo_a = Eigen::Vector3d(0.92, 0.88, 0.80);
        ground.albedo_b = Eigen::Vector3d(0.28, 0.33, 0.42);
        spec.planes.push_back(ground);
        SphereSpec ball;
        ball.center = Eigen::Vector3d(0, 0, 0.9);
        ball.radius = 0.55;
        ball.albedo = Eigen::Vector3d(0.85, 0.25, 0.20);
        spec.spheres.push_back(ball);
    } else {
        throw std::invalid_argument("preset: unknown name '" + name + "'");
    }
    return spec;
}

}  // namespace viewprop
