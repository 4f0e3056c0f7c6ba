// viewprop/camera.hpp
//
// Pinhole camera model. Conventions, fixed across the whole library:
//   - poses are camera-to-world rigid transforms,
//   - the camera looks down +z with x right and y down,
//   - pixel (i, j) covers [i, i+1) x [j, j+1); its center is (i+0.5, j+0.5)
//     in continuous pixel coordinates,
//   - a point on the optical axis projects to (cx, cy).
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

#include "viewprop/core.hpp"

namespace viewprop {

struct CameraIntrinsics {
    double fx = 0.0;
    double fy = 0.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 0;
    int height = 0;

    void validate() const {
        if (!(fx > 0.0) || !(fy > 0.0) || !std::isfinite(fx) || !std::isfinite(fy))
            throw std::invalid_argument("intrinsics: focal lengths must be positive and finite");
        if (!std::isfinite(cx) || !std::isfinite(cy))
            throw std::invalid_argument("intrinsics: principal point must be finite");
        if (width <= 0 || height <= 0)
            throw std::invalid_argument("intrinsics: image size must be positive");
    }
};

// Camera-to-world transform: X_world = rotation * X_camera + translation.
struct RigidPose {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    // Rotation must be orthonormal within 1e-9 with determinant +1.
    void validate() const {
        Eigen::Matrix3d residual = rotation.transpose() * rotation - Eigen::Matrix3d::Identity();
        if (residual.cwiseAbs().maxCoeff() > 1e-9)
            throw std::invalid_argument("pose: rotation is not orthonormal");
        if (std::abs(rotation.determinant() - 1.0) > 1e-9)
            throw std::invalid_argument("pose: rotation determinant is not +1");
        if (!translation.allFinite())
            throw std::invalid_argument("pose: translation is not finite");
    }

    Eigen::Vector3d world_from_camera(const Eigen::Vector3d& p) const {
        return rotation * p + translation;
    }

    Eigen::Vector3d camera_from_world(const Eigen::Vector3d& p) const {
        return rotation.transpose() * (p - translation);
    }

    Eigen::Matrix4d matrix4() const {
        Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
        m.topLeftCorner<3, 3>() = rotation;
        m.topRightCorner<3, 1>() = translation;
        return m;
    }

    static RigidPose from_matrix4(const Eigen::Matrix4d& m) {
        Eigen::Vector4d bottom = m.row(3).transpose();
        if ((bottom - Eigen::Vector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-12)
            throw std::invalid_argument("pose: bottom row of 4x4 must be (0,0,0,1)");
        RigidPose pose;
        pose.rotation = m.topLeftCorner<3, 3>();
        pose.translation = m.topRightCorner<3, 1>();
        return pose;
    }
};

// Builds a camera-to-world pose at `eye` looking at `target`. `up_hint` is
// the world direction the image top should face; camera y (down) is made
// orthogonal to the forward axis and opposed to the hint.
inline RigidPose look_at_pose(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                              const Eigen::Vector3d& up_hint = Eigen::Vector3d(0, 0, 1)) {
    Eigen::Vector3d forward = target - eye;
    if (forward.norm() < 1e-12)
        throw std::invalid_argument("look_at_pose: eye and target coincide");
    forward.normalize();

    Eigen::Vector3d down = -up_hint;
    Eigen::Vector3d y = down - forward * down.dot(forward);
    if (y.norm() < 1e-9) {
        // Forward is parallel to the hint; fall back to a fixed secondary axis.
        Eigen::Vector3d alt(0, 1, 0);
        y = alt - forward * alt.dot(forward);
    }
    y.normalize();
    Eigen::Vector3d x = y.cross(forward);  // right-handed: x = y cross z

    RigidPose pose;
    pose.rotation.col(0) = x;
    pose.rotation.col(1) = y;
    pose.rotation.col(2) = forward;
    pose.translation = eye;
    return pose;
}

// Result of projecting a world point into a camera.
struct PixelProjection {
    double u = 0.0;  // continuous pixel coordinates
    double v = 0.0;
    double z = 0.0;  // camera-frame depth (z-depth, not ray distance)
    bool in_front = false;
    bool in_bounds = false;
};

inline PixelProjection project_to_pixel(const CameraIntrinsics& intr, const RigidPose& pose,
                                        const Eigen::Vector3d& world_point) {
    PixelProjection out;
    Eigen::Vector3d p = pose.camera_from_world(world_point);
    out.z = p.z();
    if (!(p.z() > 1e-12)) return out;
    out.in_front = true;
    out.u = intr.fx * (p.x() / p.z()) + intr.cx;
    out.v = intr.fy * (p.y() / p.z()) + intr.cy;
    out.in_bounds = out.u >= 0.0 && out.u < static_cast<double>(intr.width) &&
                    out.v >= 0.0 && out.v < static_cast<double>(intr.height);
    return out;
}

// Camera-frame ray direction through a continuous pixel coordinate, with
// the z component fixed to 1 so that ray parameter == z-depth.
inline Eigen::Vector3d pixel_ray_camera(const CameraIntrinsics& intr, double u, double v) {
    return {(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0};
}

// World point for a continuous pixel coordinate at a given z-depth.
inline Eigen::Vector3d unproject_pixel(const CameraIntrinsics& intr, const RigidPose& pose,
                                       double u, double v, double depth) {
    return pose.world_from_camera(pixel_ray_camera(intr, u, v) * depth);
}

}  // namespace viewprop
