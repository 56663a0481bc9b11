// vec3.hpp - minimal 3-vector math and the isotropic scene transform.
#pragma once

#include <algorithm>
#include <cmath>
#include <iosfwd>
#include <limits>
#include <ostream>

namespace csgfit {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    constexpr Vec3() = default;
    constexpr Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

    constexpr Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    constexpr Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    constexpr Vec3 operator-() const { return {-x, -y, -z}; }
    constexpr Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    constexpr Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
    Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
    Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
    Vec3& operator*=(double s) { x *= s; y *= s; z *= s; return *this; }

    constexpr double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
    double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }

    constexpr bool operator==(const Vec3& o) const = default;

    double norm() const { return std::sqrt(x * x + y * y + z * z); }
    constexpr double squared_norm() const { return x * x + y * y + z * z; }
    Vec3 normalized() const { return *this / norm(); }
    bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
};

constexpr Vec3 operator*(double s, const Vec3& v) { return v * s; }
constexpr double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
constexpr Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline Vec3 cwise_min(const Vec3& a, const Vec3& b) {
    return {std::min(a.x, b.x), std::min(a.y, b.y), std::min(a.z, b.z)};
}
inline Vec3 cwise_max(const Vec3& a, const Vec3& b) {
    return {std::max(a.x, b.x), std::max(a.y, b.y), std::max(a.z, b.z)};
}

inline std::ostream& operator<<(std::ostream& os, const Vec3& v) {
    return os << "(" << v.x << ", " << v.y << ", " << v.z << ")";
}

// Axis-aligned bounding box accumulator.
struct Aabb {
    Vec3 min{std::numeric_limits<double>::infinity(),
             std::numeric_limits<double>::infinity(),
             std::numeric_limits<double>::infinity()};
    Vec3 max{-std::numeric_limits<double>::infinity(),
             -std::numeric_limits<double>::infinity(),
             -std::numeric_limits<double>::infinity()};

    void extend(const Vec3& p) { min = cwise_min(min, p); max = cwise_max(max, p); }
    void extend(const Aabb& b) { min = cwise_min(min, b.min); max = cwise_max(max, b.max); }
    Vec3 extent() const { return max - min; }
    Vec3 center() const { return (min + max) * 0.5; }
    bool empty() const { return !(min.x <= max.x && min.y <= max.y && min.z <= max.z); }
};

// Similarity transform (isotropic scale + translation) between the raw camera
// frame and the normalized unit-cube frame. Directions are unchanged by it;
// distances scale by `scale`.
struct Transform {
    double scale = 1.0;
    Vec3 translate{};

    Vec3 apply(const Vec3& p) const { return p * scale + translate; }
    Vec3 invert(const Vec3& q) const { return (q - translate) / scale; }
};

// 3x3 rotation, used for random primitive frames and scene presets.
struct Mat3 {
    Vec3 row0{1, 0, 0}, row1{0, 1, 0}, row2{0, 0, 1};

    Vec3 operator*(const Vec3& v) const { return {dot(row0, v), dot(row1, v), dot(row2, v)}; }

    static Mat3 axis_angle(const Vec3& axis, double angle) {
        const Vec3 a = axis.normalized();
        const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
        return {{t * a.x * a.x + c, t * a.x * a.y - s * a.z, t * a.x * a.z + s * a.y},
                {t * a.x * a.y + s * a.z, t * a.y * a.y + c, t * a.y * a.z - s * a.x},
                {t * a.x * a.z - s * a.y, t * a.y * a.z + s * a.x, t * a.z * a.z + c}};
    }
};

inline Mat3 operator*(const Mat3& a, const Mat3& b) {
    const Vec3 c0{b.row0.x, b.row1.x, b.row2.x};
    const Vec3 c1{b.row0.y, b.row1.y, b.row2.y};
    const Vec3 c2{b.row0.z, b.row1.z, b.row2.z};
    return {{dot(a.row0, c0), dot(a.row0, c1), dot(a.row0, c2)},
            {dot(a.row1, c0), dot(a.row1, c1), dot(a.row1, c2)},
            {dot(a.row2, c0), dot(a.row2, c1), dot(a.row2, c2)}};
}

}  // namespace csgfit
