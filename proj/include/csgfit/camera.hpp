// camera.hpp - pinhole camera and depth raster types shared by sampling,
// rendering, and scene generation.
//
// Convention: camera at the origin of the raw frame looking down +z, x right,
// y down (image coordinates). Depth is the z coordinate, not ray length.
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "csgfit/vec3.hpp"

namespace csgfit {

struct Camera {
    double fx = 0, fy = 0, cx = 0, cy = 0;
    int width = 0, height = 0;

    // Reasonable calibration assumption when intrinsics are absent.
    static Camera default_for(int width, int height) {
        Camera c;
        c.width = width;
        c.height = height;
        c.fx = c.fy = 0.6 * std::max(width, height);
        c.cx = 0.5 * width;
        c.cy = 0.5 * height;
        return c;
    }

    Camera scaled_to(int new_width, int new_height) const {
        Camera c = *this;
        const double sx = static_cast<double>(new_width) / width;
        const double sy = static_cast<double>(new_height) / height;
        c.fx *= sx; c.cx *= sx; c.width = new_width;
        c.fy *= sy; c.cy *= sy; c.height = new_height;
        return c;
    }

    void validate() const {
        if (width <= 0 || height <= 0) throw std::invalid_argument("Camera: non-positive size");
        if (!(fx > 0) || !(fy > 0)) throw std::invalid_argument("Camera: focal lengths must be > 0");
        if (cx < 0 || cx >= width || cy < 0 || cy >= height)
            throw std::invalid_argument("Camera: principal point outside image");
    }
};

// Unit viewing direction through pixel (u, v).
inline Vec3 pixel_ray(const Camera& cam, double u, double v) {
    return Vec3{(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0}.normalized();
}

// Unprojection of a single pixel at depth z.
inline Vec3 unproject_pixel(const Camera& cam, double u, double v, double z) {
    return {(u - cam.cx) * z / cam.fx, (v - cam.cy) * z / cam.fy, z};
}

// Row-major depth raster with a validity mask. Valid depths are strictly
// positive and finite; invalid pixels (sensor dropouts, ray misses) carry no
// value.
struct DepthImage {
    int width = 0, height = 0;
    std::vector<double> values;
    std::vector<std::uint8_t> valid;

    DepthImage() = default;
    DepthImage(int w, int h)
        : width(w), height(h),
          values(static_cast<std::size_t>(w) * h, 0.0),
          valid(static_cast<std::size_t>(w) * h, 0) {}

    std::size_t index(int u, int v) const { return static_cast<std::size_t>(v) * width + u; }
    double at(int u, int v) const { return values[index(u, v)]; }
    bool is_valid(int u, int v) const { return valid[index(u, v)] != 0; }

    void set(int u, int v, double z) {
        const std::size_t i = index(u, v);
        values[i] = z;
        valid[i] = (std::isfinite(z) && z > 0.0) ? 1 : 0;
    }

    std::size_t valid_count() const {
        std::size_t n = 0;
        for (auto m : valid) n += m;
        return n;
    }
};

}  // namespace csgfit
