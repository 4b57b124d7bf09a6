#pragma once

#include "linerf/common.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <utility>

namespace linerf {

/// Camera ray r(t) = origin + t * direction restricted to [t_near, t_far].
struct Ray {
  Vec3d origin = Vec3d::Zero();
  Vec3d direction = Vec3d(0, 0, -1);
  double t_near = 0.0;
  double t_far = 1.0;

  Ray() = default;
  Ray(Vec3d o, Vec3d d, double tn, double tf) : origin(o), direction(d), t_near(tn), t_far(tf) {
    validate();
  }

  void validate() const {
    if (!(t_near < t_far)) throw InputError("ray: t_near must be < t_far");
    if (std::abs(direction.norm() - 1.0) > 1e-6) throw InputError("ray: direction is not unit length");
  }

  Vec3d at(double t) const { return origin + t * direction; }
};

struct Aabb {
  Vec3d min = Vec3d::Constant(-1.0);
  Vec3d max = Vec3d::Constant(1.0);

  Vec3d extent() const { return max - min; }
  bool valid() const { return (max.array() > min.array()).all(); }
  Vec3d clamp(const Vec3d& p) const { return p.cwiseMax(min).cwiseMin(max); }

  /// Slab test. Returns the parametric overlap of the ray with the box for
  /// t >= 0, or nothing when the overlap is empty or degenerate.
  std::optional<std::pair<double, double>> intersect(const Vec3d& o, const Vec3d& d) const {
    double t0 = 0.0;
    double t1 = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
      if (std::abs(d[a]) < 1e-15) {
        if (o[a] < min[a] || o[a] > max[a]) return std::nullopt;
        continue;
      }
      double ta = (min[a] - o[a]) / d[a];
      double tb = (max[a] - o[a]) / d[a];
      if (ta > tb) std::swap(ta, tb);
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
    }
    if (!(t1 - t0 > 1e-9)) return std::nullopt;
    return std::make_pair(t0, t1);
  }
};

/// Pinhole camera. `pose` maps camera to world coordinates; the camera looks
/// down its local -z axis with +y up (the transforms.json convention).
struct Camera {
  Mat4d pose = Mat4d::Identity();
  double focal = 1.0;  // pixels
  int width = 1;
  int height = 1;

  Eigen::Matrix3d rotation() const { return pose.topLeftCorner<3, 3>(); }
  Vec3d position() const { return pose.topRightCorner<3, 1>(); }

  void validate() const {
    if (width < 1 || height < 1) throw InputError("camera: zero resolution");
    if (!(focal > 0.0) || !std::isfinite(focal)) throw InputError("camera: focal length must be positive");
    if (!pose.allFinite()) throw ValidationError("camera: pose has non-finite entries");
    const Eigen::Matrix3d r = rotation();
    if ((r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-6)
      throw ValidationError("camera: rotation block is not orthonormal");
  }

  /// Unit world-space direction through image position (px, py), measured in
  /// pixels from the top-left corner (pixel centers sit at +0.5).
  Vec3d direction(double px, double py) const {
    const Vec3d local((px - 0.5 * width) / focal, -(py - 0.5 * height) / focal, -1.0);
    return (rotation() * local).normalized();
  }

  /// Camera-to-world pose looking from `eye` toward `target`.
  static Mat4d look_at(const Vec3d& eye, const Vec3d& target, const Vec3d& up = Vec3d(0, 1, 0)) {
    const Vec3d back = (eye - target).normalized();
    Vec3d right = up.cross(back);
    if (right.norm() < 1e-12) right = Vec3d(1, 0, 0).cross(back);
    right.normalize();
    const Vec3d true_up = back.cross(right);
    Mat4d m = Mat4d::Identity();
    m.block<3, 1>(0, 0) = right;
    m.block<3, 1>(0, 1) = true_up;
    m.block<3, 1>(0, 2) = back;
    m.block<3, 1>(0, 3) = eye;
    return m;
  }
};

}  // namespace linerf
