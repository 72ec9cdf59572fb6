#include "falcon/pnp.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "falcon/rng.hpp"

namespace falcon {

std::vector<Vec3> select_keypoints(const SplatAsset& asset, std::size_t n) {
  if (n < 6) throw InvalidArgument("at least 6 keypoints are required");
  const auto& splats = asset.splats();
  if (splats.size() < n)
    throw TooFewSplats("asset has " + std::to_string(splats.size()) + " splats, " + std::to_string(n) +
                       " keypoints requested");
  Vec3 centroid = Vec3::Zero();
  for (const auto& s : splats) centroid += s.center;
  centroid /= static_cast<double>(splats.size());

  std::size_t first = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < splats.size(); ++i) {
    const double d = (splats[i].center - centroid).squaredNorm();
    if (d < best) best = d, first = i;
  }
  std::vector<Vec3> out{splats[first].center};
  std::vector<double> dist(splats.size());
  for (std::size_t i = 0; i < splats.size(); ++i) dist[i] = (splats[i].center - out[0]).squaredNorm();
  while (out.size() < n) {
    std::size_t pick = 0;
    for (std::size_t i = 1; i < splats.size(); ++i)
      if (dist[i] > dist[pick]) pick = i;
    if (dist[pick] <= 0.0) throw TooFewSplats("asset has fewer than " + std::to_string(n) + " distinct centers");
    out.push_back(splats[pick].center);
    for (std::size_t i = 0; i < splats.size(); ++i) dist[i] = std::min(dist[i], (splats[i].center - out.back()).squaredNorm());
  }
  return out;
}

namespace {

using Mat34 = Eigen::Matrix<double, 3, 4>;

// Similarity moving points to zero mean and the given RMS distance.
template <int D>
Eigen::Matrix<double, D + 1, D + 1> normalizer(const std::vector<Eigen::Matrix<double, D, 1>>& pts) {
  Eigen::Matrix<double, D, 1> mean = Eigen::Matrix<double, D, 1>::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  double ms = 0.0;
  for (const auto& p : pts) ms += (p - mean).squaredNorm();
  ms /= static_cast<double>(pts.size());
  const double s = ms > 0 ? std::sqrt(static_cast<double>(D) / ms) : 1.0;
  Eigen::Matrix<double, D + 1, D + 1> t = Eigen::Matrix<double, D + 1, D + 1>::Identity();
  t.template topLeftCorner<D, D>() *= s;
  t.template topRightCorner<D, 1>() = -s * mean;
  return t;
}

double sq_error(const Pose& pose, const std::vector<Correspondence>& corr, const Intrinsics& k) {
  double e = 0.0;
  for (const auto& c : corr) {
    const Vec3 pc = pose.apply(c.object_point);
    if (pc.z() <= kMinDepth) return std::numeric_limits<double>::infinity();
    const Vec2 uv(k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy);
    e += (uv - c.pixel).squaredNorm();
  }
  return e;
}

Pose dlt_initialize(const std::vector<Correspondence>& corr, const Intrinsics& k) {
  const std::size_t n = corr.size();
  std::vector<Vec2> xs;
  std::vector<Vec3> ps;
  for (const auto& c : corr) {
    xs.emplace_back((c.pixel.x() - k.cx) / k.fx, (c.pixel.y() - k.cy) / k.fy);
    ps.push_back(c.object_point);
  }
  // Coplanar or colinear object points leave the DLT rank-deficient.
  {
    Vec3 mean = Vec3::Zero();
    for (const auto& p : ps) mean += p;
    mean /= static_cast<double>(n);
    Mat3 cov = Mat3::Zero();
    for (const auto& p : ps) cov += (p - mean) * (p - mean).transpose();
    const Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
    const Vec3 ev = es.eigenvalues();
    if (!(ev[2] > 0) || ev[0] / ev[2] < 1e-10)
      throw DegenerateConfiguration("object points are coplanar or colinear");
  }
  const Eigen::Matrix3d t2 = normalizer<2>(xs);
  const Eigen::Matrix4d t3 = normalizer<3>(ps);

  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(2 * static_cast<Eigen::Index>(n), 12);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d x = t2 * xs[i].homogeneous();
    const Eigen::Vector4d p = t3 * ps[i].homogeneous();
    const auto r = static_cast<Eigen::Index>(2 * i);
    a.block<1, 4>(r, 0) = p.transpose();
    a.block<1, 4>(r, 8) = -x.x() * p.transpose();
    a.block<1, 4>(r + 1, 4) = p.transpose();
    a.block<1, 4>(r + 1, 8) = -x.y() * p.transpose();
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (!(sv[0] > 0) || sv[10] / sv[0] < 1e-12) throw DegenerateConfiguration("DLT system is rank-deficient");
  const Eigen::VectorXd v = svd.matrixV().col(11);
  Mat34 pn;
  pn << v.segment<4>(0).transpose(), v.segment<4>(4).transpose(), v.segment<4>(8).transpose();
  Mat34 p = t2.inverse() * pn * t3;

  Mat3 m = p.leftCols<3>();
  if (m.determinant() < 0) {
    p = -p;
    m = -m;
  }
  const Eigen::JacobiSVD<Mat3> polar(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 r = polar.matrixU() * polar.matrixV().transpose();
  if (r.determinant() < 0) throw DegenerateConfiguration("DLT produced a reflection");
  const double scale = polar.singularValues().mean();
  if (!(scale > 0)) throw DegenerateConfiguration("DLT scale is zero");
  const Vec3 t = p.col(3) / scale;
  return Pose(Quat(r), t);
}

}  // namespace

PnpResult solve_pnp(const std::vector<Correspondence>& corr, const Intrinsics& k, const PnpOptions& opt) {
  k.validate();
  if (corr.size() < 6) throw InvalidArgument("PnP needs at least 6 correspondences, got " + std::to_string(corr.size()));
  for (const auto& c : corr)
    if (!c.object_point.allFinite() || !c.pixel.allFinite()) throw InvalidArgument("non-finite correspondence");

  PnpResult res;
  res.pose = dlt_initialize(corr, k);
  double cost = sq_error(res.pose, corr, k);

  for (int it = 0; it < opt.max_iterations; ++it) {
    res.iterations = it + 1;
    Eigen::Matrix<double, 6, 6> h = Eigen::Matrix<double, 6, 6>::Zero();
    Vec6 g = Vec6::Zero();
    for (const auto& c : corr) {
      const Vec3 pc = res.pose.apply(c.object_point);
      const double iz = 1.0 / pc.z();
      const Vec2 r(k.fx * pc.x() * iz + k.cx - c.pixel.x(), k.fy * pc.y() * iz + k.cy - c.pixel.y());
      Eigen::Matrix<double, 2, 3> jp;
      jp << k.fx * iz, 0, -k.fx * pc.x() * iz * iz, 0, k.fy * iz, -k.fy * pc.y() * iz * iz;
      Eigen::Matrix<double, 3, 6> jx;
      // d(pc)/d(omega) = -[pc]x, d(pc)/d(v) = I for the left perturbation.
      jx << 0, pc.z(), -pc.y(), 1, 0, 0, -pc.z(), 0, pc.x(), 0, 1, 0, pc.y(), -pc.x(), 0, 0, 0, 1;
      const Eigen::Matrix<double, 2, 6> j = jp * jx;
      h += j.transpose() * j;
      g += j.transpose() * r;
    }
    const Vec6 step = -h.ldlt().solve(g);
    if (!step.allFinite()) throw DegenerateConfiguration("singular Gauss-Newton system");
    if (step.norm() < opt.step_tolerance) {
      res.converged = true;
      break;
    }
    // Halve the step until the cost does not increase.
    double alpha = 1.0;
    bool accepted = false;
    for (int h_it = 0; h_it < 30; ++h_it, alpha *= 0.5) {
      const Pose cand = retract(res.pose, alpha * step);
      const double c = sq_error(cand, corr, k);
      if (c <= cost) {
        res.pose = cand;
        cost = c;
        accepted = true;
        break;
      }
    }
    if (!accepted || alpha * step.norm() < opt.step_tolerance) {
      res.converged = true;  // no further descent available at this precision
      break;
    }
  }
  res.rms = std::sqrt(cost / static_cast<double>(corr.size()));
  if (!res.converged) throw NoConvergence("Gauss-Newton did not converge in " + std::to_string(opt.max_iterations) +
                                          " iterations", res);
  return res;
}

std::vector<Correspondence> simulate_clicks(const LabeledFrame& frame, const std::vector<Vec3>& keypoints,
                                            double noise_sigma) {
  if (!(noise_sigma >= 0)) throw InvalidArgument("noise sigma must be >= 0");
  if (!frame.in_view) throw NotVisible("frame " + std::to_string(frame.id) + " has no visible object");
  const Intrinsics& k = frame.intrinsics;
  Rng rng(mix_seeds(frame.seed, 0xC11C));
  std::vector<Correspondence> out;
  for (const auto& kp : keypoints) {
    const Vec3 p = frame.scale * kp;
    const auto uv = project(frame.pose_label.apply(p), k);
    // Draw noise for every keypoint so skipping one does not shift the others.
    const Vec2 noise(rng.normal() * noise_sigma, rng.normal() * noise_sigma);
    if (!uv || uv->x() < -0.5 || uv->y() < -0.5 || uv->x() > k.width - 0.5 || uv->y() > k.height - 0.5) continue;
    Vec2 px = *uv + noise;
    px.x() = std::clamp(px.x(), 0.0, static_cast<double>(k.width - 1));
    px.y() = std::clamp(px.y(), 0.0, static_cast<double>(k.height - 1));
    out.push_back({p, px, noise_sigma});
  }
  if (out.size() < 6)
    throw NotVisible("frame " + std::to_string(frame.id) + ": only " + std::to_string(out.size()) +
                     " keypoints inside the image");
  return out;
}

PnpResult pnp_estimate_frame(const LabeledFrame& frame, const std::vector<Vec3>& keypoints, double noise_sigma) {
  return solve_pnp(simulate_clicks(frame, keypoints, noise_sigma), frame.intrinsics);
}

}  // namespace falcon
