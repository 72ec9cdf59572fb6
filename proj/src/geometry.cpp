#include "falcon/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "falcon/error.hpp"

namespace falcon {

Pose::Pose(const Quat& rotation, const Vec3& translation)
    : rotation_(rotation.normalized()), translation_(translation) {}

Pose compose(const Pose& a, const Pose& b) {
  return Pose((a.rotation() * b.rotation()).normalized(),
              a.rotation() * b.translation() + a.translation());
}

Pose inverse(const Pose& p) {
  const Quat qi = p.rotation().conjugate();
  return Pose(qi, -(qi * p.translation()));
}

Pose relative_pose(const Pose& camera, const Pose& object) {
  return compose(inverse(camera), object);
}

void Intrinsics::validate() const {
  if (!(fx > 0) || !(fy > 0)) throw InvalidArgument("intrinsics: focal lengths must be positive");
  if (width <= 0 || height <= 0) throw InvalidArgument("intrinsics: image size must be positive");
  if (!(cx >= 0 && cx < width) || !(cy >= 0 && cy < height))
    throw InvalidArgument("intrinsics: principal point outside image");
}

Intrinsics Intrinsics::resized(int new_width, int new_height) const {
  // Pixel centers sit at integer coordinates, so the continuous image
  // spans [-0.5, width - 0.5].
  const double sx = static_cast<double>(new_width) / width;
  const double sy = static_cast<double>(new_height) / height;
  Intrinsics out;
  out.fx = fx * sx;
  out.fy = fy * sy;
  out.cx = (cx + 0.5) * sx - 0.5;
  out.cy = (cy + 0.5) * sy - 0.5;
  out.width = new_width;
  out.height = new_height;
  return out;
}

Intrinsics Intrinsics::centered(int width, int height, double focal_ratio) {
  Intrinsics k;
  k.fx = k.fy = focal_ratio * width;
  k.cx = 0.5 * width - 0.5;
  k.cy = 0.5 * height - 0.5;
  k.width = width;
  k.height = height;
  return k;
}

std::optional<Vec2> project(const Vec3& p, const Intrinsics& k) {
  if (p.z() <= kMinDepth) return std::nullopt;
  return Vec2(k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy);
}

Vec3 back_project(const Vec2& pixel, double depth, const Intrinsics& k) {
  return {(pixel.x() - k.cx) / k.fx * depth, (pixel.y() - k.cy) / k.fy * depth, depth};
}

double geodesic_angle(const Quat& q1, const Quat& q2) {
  // atan2 form stays accurate near zero where acos loses half the digits
  const Quat r = q1.conjugate() * q2;
  return 2.0 * std::atan2(r.vec().norm(), std::abs(r.w()));
}

Quat axis_angle(const Vec3& axis, double angle) {
  return Quat(Eigen::AngleAxisd(angle, axis.normalized()));
}
Quat rot_x(double angle) { return axis_angle(Vec3::UnitX(), angle); }
Quat rot_y(double angle) { return axis_angle(Vec3::UnitY(), angle); }
Quat rot_z(double angle) { return axis_angle(Vec3::UnitZ(), angle); }

Quat exp_so3(const Vec3& omega) {
  const double theta = omega.norm();
  const double half = 0.5 * theta;
  // sin(half)/theta, with a Taylor branch near zero.
  const double s = theta < 1e-8 ? 0.5 - theta * theta / 48.0 : std::sin(half) / theta;
  return Quat(std::cos(half), s * omega.x(), s * omega.y(), s * omega.z()).normalized();
}

Vec3 log_so3(const Quat& q_in) {
  Quat q = q_in.normalized();
  if (q.w() < 0) q.coeffs() = -q.coeffs();
  const Vec3 v = q.vec();
  const double sin_half = v.norm();
  if (sin_half < 1e-12) return 2.0 * v;
  const double theta = 2.0 * std::atan2(sin_half, q.w());
  return v * (theta / sin_half);
}

Pose retract(const Pose& p, const Vec6& delta) {
  const Quat dq = exp_so3(delta.head<3>());
  return Pose(dq * p.rotation(), dq * p.translation() + delta.tail<3>());
}

Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 z = (target - eye).normalized();
  Vec3 x = z.cross(up);
  if (x.norm() < 1e-9) throw InvalidArgument("look_at: up vector parallel to viewing direction");
  x.normalize();
  const Vec3 y = z.cross(x);
  Mat3 r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  return Pose(Quat(r), eye);
}

}  // namespace falcon
