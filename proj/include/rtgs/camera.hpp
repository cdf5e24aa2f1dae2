#pragma once

#include <array>
#include <cmath>
#include <string>

#include "rtgs/math.hpp"

namespace rtgs {

/// Pinhole camera. Camera space is x right, y down, z forward; pixel (u, v)
/// looks along ((u - cx) / fx, (v - cy) / fy, 1).
struct Camera {
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
  int width = 0, height = 0;
  Mat3 rotation;     // world -> camera
  Vec3 translation;  // world -> camera

  Vec3 center() const { return -(rotation.transposed() * translation); }
  Vec3 to_camera(const Vec3& p) const { return rotation * p + translation; }

  /// Unit world-space direction through pixel coordinate (u, v).
  Vec3 pixel_ray(double u, double v) const {
    const Vec3 d_cam = normalize(Vec3{(u - cx) / fx, (v - cy) / fy, 1.0});
    return rotation.transposed() * d_cam;
  }

  /// Checks the documented invariants; throws Error with `what` as context.
  void validate(const std::string& what = "camera") const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw Error(what + ": focal lengths must be positive");
    if (width <= 0 || height <= 0) throw Error(what + ": image size must be positive");
    const Mat3 rrt = rotation * rotation.transposed();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        if (std::abs(rrt(i, j) - (i == j ? 1.0 : 0.0)) > 1e-5)
          throw Error(what + ": rotation is not orthonormal");
    if (std::abs(rotation.determinant() - 1.0) > 1e-5)
      throw Error(what + ": rotation determinant must be +1");
  }

  /// Row-major 4x4 world-to-camera matrix.
  std::array<double, 16> world_to_camera() const {
    return {rotation(0, 0), rotation(0, 1), rotation(0, 2), translation.x,
            rotation(1, 0), rotation(1, 1), rotation(1, 2), translation.y,
            rotation(2, 0), rotation(2, 1), rotation(2, 2), translation.z,
            0.0,            0.0,            0.0,            1.0};
  }
  void set_world_to_camera(const std::array<double, 16>& m) {
    rotation = Mat3{{m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]}};
    translation = {m[3], m[7], m[11]};
  }

  friend bool operator==(const Camera&, const Camera&) = default;
};

/// Camera at `eye` looking at `target`; `up` is the world up direction.
inline Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, int width, int height,
                      double fov_y_radians) {
  const Vec3 forward = normalize(target - eye);
  const Vec3 right = normalize(cross(forward, up));
  const Vec3 down = cross(forward, right);
  Camera cam;
  cam.width = width;
  cam.height = height;
  cam.fy = 0.5 * height / std::tan(0.5 * fov_y_radians);
  cam.fx = cam.fy;
  cam.cx = 0.5 * (width - 1);
  cam.cy = 0.5 * (height - 1);
  cam.rotation = Mat3::from_rows(right, down, forward);
  cam.translation = -(cam.rotation * eye);
  return cam;
}

}  // namespace rtgs
