// viewprop/image.hpp
//
// Raster value types: RGB image, depth map, binary mask. Pixel values are
// doubles in [0, 1] and are treated as display-encoded; no linearization
// happens anywhere. Depth maps store z-depth in meters with an explicit
// per-pixel validity flag (never a magic depth value).
#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "viewprop/core.hpp"

namespace viewprop {

struct ImageBuffer {
    int width = 0;
    int height = 0;
    std::vector<double> data;  // interleaved RGB, row-major

    ImageBuffer() = default;
    ImageBuffer(int w, int h, double fill = 0.0) { resize(w, h, fill); }

    void resize(int w, int h, double fill = 0.0) {
        if (w <= 0 || h <= 0) throw std::invalid_argument("image: size must be positive");
        width = w;
        height = h;
        data.assign(static_cast<std::size_t>(w) * h * 3, fill);
    }

    bool empty() const { return data.empty(); }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }

    double& at(int x, int y, int c) {
        return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
    double at(int x, int y, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }

    Eigen::Vector3d rgb(int x, int y) const {
        std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
        return {data[i], data[i + 1], data[i + 2]};
    }
    void set_rgb(int x, int y, const Eigen::Vector3d& v) {
        std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
        data[i] = v.x();
        data[i + 1] = v.y();
        data[i + 2] = v.z();
    }

    bool same_size(const ImageBuffer& other) const {
        return width == other.width && height == other.height;
    }
};

// Bilinear sample at continuous pixel coordinates (pixel centers at i+0.5).
// Coordinates are clamped to the border, so any finite (u, v) is valid.
inline Eigen::Vector3d bilinear_sample(const ImageBuffer& img, double u, double v) {
    double x = u - 0.5;
    double y = v - 0.5;
    if (x < 0.0) x = 0.0;
    if (y < 0.0) y = 0.0;
    double xmax = static_cast<double>(img.width - 1);
    double ymax = static_cast<double>(img.height - 1);
    if (x > xmax) x = xmax;
    if (y > ymax) y = ymax;
    int x0 = static_cast<int>(x);
    int y0 = static_cast<int>(y);
    int x1 = x0 + 1 < img.width ? x0 + 1 : x0;
    int y1 = y0 + 1 < img.height ? y0 + 1 : y0;
    double ax = x - x0;
    double ay = y - y0;
    Eigen::Vector3d c00 = img.rgb(x0, y0);
    Eigen::Vector3d c10 = img.rgb(x1, y0);
    Eigen::Vector3d c01 = img.rgb(x0, y1);
    Eigen::Vector3d c11 = img.rgb(x1, y1);
    return c00 * (1 - ax) * (1 - ay) + c10 * ax * (1 - ay) + c01 * (1 - ax) * ay +
           c11 * ax * ay;
}

struct DepthMap {
    int width = 0;
    int height = 0;
    std::vector<double> depth;        // meters, z-depth
    std::vector<std::uint8_t> valid;  // explicit invalid-depth flag per pixel

    DepthMap() = default;
    DepthMap(int w, int h) { resize(w, h); }

    void resize(int w, int h) {
        if (w <= 0 || h <= 0) throw std::invalid_argument("depth: size must be positive");
        width = w;
        height = h;
        depth.assign(static_cast<std::size_t>(w) * h, 0.0);
        valid.assign(static_cast<std::size_t>(w) * h, 0);
    }

    std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
    bool is_valid(int x, int y) const { return valid[index(x, y)] != 0; }
    double at(int x, int y) const { return depth[index(x, y)]; }

    void set(int x, int y, double d) {
        if (!(d > 0.0) || !std::isfinite(d))
            throw std::invalid_argument("depth: valid depths must be positive and finite");
        depth[index(x, y)] = d;
        valid[index(x, y)] = 1;
    }
    void set_invalid(int x, int y) {
        depth[index(x, y)] = 0.0;
        valid[index(x, y)] = 0;
    }

    double valid_fraction() const {
        if (valid.empty()) return 0.0;
        std::size_t n = 0;
        for (std::uint8_t f : valid) n += f;
        return static_cast<double>(n) / static_cast<double>(valid.size());
    }
};

// Bilinear depth sample at continuous pixel coordinates. Fails (returns
// false) when any contributing pixel is invalid or when the 2x2 patch spans
// a relative depth spread above `discontinuity_tol`: interpolating across a
// depth edge fabricates depths that belong to no surface.
inline bool sample_depth_bilinear(const DepthMap& dm, double u, double v,
                                  double discontinuity_tol, double* out) {
    double x = u - 0.5;
    double y = v - 0.5;
    if (x < 0.0) x = 0.0;
    if (y < 0.0) y = 0.0;
    double xmax = static_cast<double>(dm.width - 1);
    double ymax = static_cast<double>(dm.height - 1);
    if (x > xmax) x = xmax;
    if (y > ymax) y = ymax;
    int x0 = static_cast<int>(x);
    int y0 = static_cast<int>(y);
    int x1 = x0 + 1 < dm.width ? x0 + 1 : x0;
    int y1 = y0 + 1 < dm.height ? y0 + 1 : y0;
    if (!dm.is_valid(x0, y0) || !dm.is_valid(x1, y0) || !dm.is_valid(x0, y1) ||
        !dm.is_valid(x1, y1))
        return false;
    double d00 = dm.at(x0, y0), d10 = dm.at(x1, y0), d01 = dm.at(x0, y1), d11 = dm.at(x1, y1);
    double dmin = std::min(std::min(d00, d10), std::min(d01, d11));
    double dmax = std::max(std::max(d00, d10), std::max(d01, d11));
    if (dmax - dmin > discontinuity_tol * dmin) return false;
    double ax = x - x0;
    double ay = y - y0;
    *out = d00 * (1 - ax) * (1 - ay) + d10 * ax * (1 - ay) + d01 * (1 - ax) * ay + d11 * ax * ay;
    return true;
}

struct BinaryMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> bits;

    BinaryMask() = default;
    BinaryMask(int w, int h, bool fill = false) { resize(w, h, fill); }

    void resize(int w, int h, bool fill = false) {
        if (w <= 0 || h <= 0) throw std::invalid_argument("mask: size must be positive");
        width = w;
        height = h;
        bits.assign(static_cast<std::size_t>(w) * h, fill ? 1 : 0);
    }

    std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
    bool at(int x, int y) const { return bits[index(x, y)] != 0; }
    void set(int x, int y, bool v) { bits[index(x, y)] = v ? 1 : 0; }
    void set_all(bool v) { std::fill(bits.begin(), bits.end(), v ? 1 : 0); }

    std::size_t count() const {
        std::size_t n = 0;
        for (std::uint8_t b : bits) n += b;
        return n;
    }
    bool empty_mask() const { return count() == 0; }
};

// Nearest-neighbor mask lookup at continuous pixel coordinates. Masks are
// categorical; interpolating them would invent labels.
inline bool nearest_sample_mask(const BinaryMask& mask, double u, double v) {
    int x = static_cast<int>(std::floor(u));
    int y = static_cast<int>(std::floor(v));
    if (x < 0) x = 0;
    if (y < 0) y = 0;
    if (x >= mask.width) x = mask.width - 1;
    if (y >= mask.height) y = mask.height - 1;
    return mask.at(x, y);
}

}  // namespace viewprop
