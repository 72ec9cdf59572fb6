#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <optional>

namespace falcon {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

/// Rigid transform. Rotation is kept unit-norm by every constructor and
/// operation. Quaternions are (w, x, y, z) whenever they are serialized.
class Pose {
 public:
  Pose() : rotation_(Quat::Identity()), translation_(Vec3::Zero()) {}
  Pose(const Quat& rotation, const Vec3& translation);

  static Pose identity() { return {}; }

  const Quat& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }
  Mat3 rotation_matrix() const { return rotation_.toRotationMatrix(); }

  Vec3 apply(const Vec3& p) const { return rotation_ * p + translation_; }

 private:
  Quat rotation_;
  Vec3 translation_;
};

/// Applies b, then a.
Pose compose(const Pose& a, const Pose& b);
Pose inverse(const Pose& p);

/// Pose of `object` expressed in the frame of `camera`: inverse(camera) * object.
/// Both arguments are world-frame poses.
Pose relative_pose(const Pose& camera, const Pose& object);

/// Pinhole camera. Pixel (i, j) has its center at coordinate (i, j).
struct Intrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  void validate() const;
  /// Same field of view at a different resolution.
  Intrinsics resized(int new_width, int new_height) const;
  /// Principal point at the image center, horizontal focal length
  /// `focal_ratio * width`.
  static Intrinsics centered(int width, int height, double focal_ratio);
};

inline constexpr double kMinDepth = 1e-9;

/// Camera-frame point to pixel. std::nullopt means the point is behind the
/// camera (z <= 1e-9).
std::optional<Vec2> project(const Vec3& point, const Intrinsics& k);

/// Pixel + depth back to a camera-frame point.
Vec3 back_project(const Vec2& pixel, double depth, const Intrinsics& k);

/// Rotation distance in radians, range [0, pi], sign-invariant.
double geodesic_angle(const Quat& q1, const Quat& q2);

Quat axis_angle(const Vec3& axis, double angle);
Quat rot_x(double angle);
Quat rot_y(double angle);
Quat rot_z(double angle);

/// Rotation vector -> quaternion, exact for any magnitude.
Quat exp_so3(const Vec3& omega);
/// Quaternion -> rotation vector with norm in [0, pi].
Vec3 log_so3(const Quat& q);

/// Left perturbation on the 6-dim tangent (omega, v):
/// R' = exp(omega) R, t' = exp(omega) t + v.
Pose retract(const Pose& p, const Vec6& delta);

/// Camera-to-world pose of a camera at `eye` looking at `target`
/// (x right, y down, z forward). `up` picks the roll; it must not be
/// parallel to the viewing direction.
Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up);

}  // namespace falcon
