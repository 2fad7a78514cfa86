#include "seqmosaic/multiview.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

namespace seqmosaic {

ProjectionJacobian projection_jacobian(const Pose& pose, const Vec3& point, const CameraModel& camera) {
  const Mat3 rt = pose.rotation().transpose();
  const Vec3 pc = rt * (point - pose.center());
  const double iz = 1.0 / pc.z();
  Eigen::Matrix<double, 2, 3> jpi;
  jpi << camera.fx * iz, 0.0, -camera.fx * pc.x() * iz * iz, 0.0, camera.fy * iz, -camera.fy * pc.y() * iz * iz;
  ProjectionJacobian out;
  out.pixel = {camera.cx + camera.fx * pc.x() * iz, camera.cy + camera.fy * pc.y() * iz};
  out.d_pose.leftCols<3>() = jpi * skew(pc);
  out.d_pose.rightCols<3>() = -jpi * rt;
  out.d_point = jpi * rt;
  out.depth = pc.z();
  return out;
}

namespace {

// Polynomials in (x, y, z) of total degree <= 3. The first ten monomials are
// the cubic ones, the remaining ten form the quotient basis used by the
// action matrix.
struct Monomial {
  int x, y, z;
};
constexpr std::array<Monomial, 20> kMonomials{{{3, 0, 0}, {2, 1, 0}, {1, 2, 0}, {0, 3, 0}, {2, 0, 1},
                                               {1, 1, 1}, {0, 2, 1}, {1, 0, 2}, {0, 1, 2}, {0, 0, 3},
                                               {2, 0, 0}, {1, 1, 0}, {0, 2, 0}, {1, 0, 1}, {0, 1, 1},
                                               {0, 0, 2}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0, 0, 0}}};

int monomial_index(int x, int y, int z) {
  for (int i = 0; i < 20; ++i) {
    if (kMonomials[i].x == x && kMonomials[i].y == y && kMonomials[i].z == z) return i;
  }
  return -1;
}

struct Poly {
  std::array<double, 20> c{};

  Poly operator+(const Poly& o) const {
    Poly r;
    for (int i = 0; i < 20; ++i) r.c[i] = c[i] + o.c[i];
    return r;
  }
  Poly operator-(const Poly& o) const {
    Poly r;
    for (int i = 0; i < 20; ++i) r.c[i] = c[i] - o.c[i];
    return r;
  }
  Poly operator*(double s) const {
    Poly r;
    for (int i = 0; i < 20; ++i) r.c[i] = c[i] * s;
    return r;
  }
  Poly operator*(const Poly& o) const {
    Poly r;
    for (int i = 0; i < 20; ++i) {
      if (c[i] == 0.0) continue;
      for (int j = 0; j < 20; ++j) {
        if (o.c[j] == 0.0) continue;
        const int k = monomial_index(kMonomials[i].x + kMonomials[j].x, kMonomials[i].y + kMonomials[j].y,
                                     kMonomials[i].z + kMonomials[j].z);
        r.c[k] += c[i] * o.c[j];
      }
    }
    return r;
  }
};

using PolyMat = std::array<std::array<Poly, 3>, 3>;

PolyMat poly_mul(const PolyMat& a, const PolyMat& b) {
  PolyMat r{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      for (int k = 0; k < 3; ++k) r[i][j] = r[i][j] + a[i][k] * b[k][j];
    }
  }
  return r;
}

PolyMat poly_transpose(const PolyMat& a) {
  PolyMat r{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) r[i][j] = a[j][i];
  }
  return r;
}

}  // namespace

std::vector<Mat3> essential_five_point(std::span<const Vec2, 5> x1, std::span<const Vec2, 5> x2) {
  Eigen::Matrix<double, 5, 9> a;
  for (int i = 0; i < 5; ++i) {
    const Vec3 p(x1[i].x(), x1[i].y(), 1.0);
    const Vec3 q(x2[i].x(), x2[i].y(), 1.0);
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) a(i, 3 * r + c) = q[r] * p[c];
    }
  }
  Eigen::JacobiSVD<Eigen::Matrix<double, 5, 9>> svd(a, Eigen::ComputeFullV);
  const Eigen::Matrix<double, 9, 9>& v = svd.matrixV();

  // E = x*X + y*Y + z*Z + W, with X..W spanning the null space.
  PolyMat e{};
  const int ix = monomial_index(1, 0, 0);
  const int iy = monomial_index(0, 1, 0);
  const int iz = monomial_index(0, 0, 1);
  const int i1 = monomial_index(0, 0, 0);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      const int k = 3 * r + c;
      e[r][c].c[ix] = v(k, 5);
      e[r][c].c[iy] = v(k, 6);
      e[r][c].c[iz] = v(k, 7);
      e[r][c].c[i1] = v(k, 8);
    }
  }

  Eigen::Matrix<double, 10, 20> m;
  const Poly det = e[0][0] * (e[1][1] * e[2][2] - e[1][2] * e[2][1]) -
                   e[0][1] * (e[1][0] * e[2][2] - e[1][2] * e[2][0]) +
                   e[0][2] * (e[1][0] * e[2][1] - e[1][1] * e[2][0]);
  for (int k = 0; k < 20; ++k) m(0, k) = det.c[k];
  const PolyMat eet = poly_mul(e, poly_transpose(e));
  const Poly half_trace = (eet[0][0] + eet[1][1] + eet[2][2]) * 0.5;
  const PolyMat eete = poly_mul(eet, e);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      const Poly constraint = eete[r][c] - half_trace * e[r][c];
      for (int k = 0; k < 20; ++k) m(1 + 3 * r + c, k) = constraint.c[k];
    }
  }

  const Eigen::Matrix<double, 10, 10> lead = m.leftCols<10>();
  Eigen::FullPivLU<Eigen::Matrix<double, 10, 10>> lu(lead);
  if (!lu.isInvertible()) return {};
  const Eigen::Matrix<double, 10, 10> b = lu.solve(m.rightCols<10>());

  // Rows express x * basis_k in the quotient basis
  // (x^2, xy, y^2, xz, yz, z^2, x, y, z, 1).
  Eigen::Matrix<double, 10, 10> action = Eigen::Matrix<double, 10, 10>::Zero();
  action.row(0) = -b.row(monomial_index(3, 0, 0));
  action.row(1) = -b.row(monomial_index(2, 1, 0));
  action.row(2) = -b.row(monomial_index(1, 2, 0));
  action.row(3) = -b.row(monomial_index(2, 0, 1));
  action.row(4) = -b.row(monomial_index(1, 1, 1));
  action.row(5) = -b.row(monomial_index(1, 0, 2));
  action(6, 0) = 1.0;  // x * x  = x^2
  action(7, 1) = 1.0;  // x * y  = xy
  action(8, 3) = 1.0;  // x * z  = xz
  action(9, 6) = 1.0;  // x * 1  = x

  Eigen::EigenSolver<Eigen::Matrix<double, 10, 10>> eig(action);
  if (eig.info() != Eigen::Success) return {};
  std::vector<Mat3> out;
  for (int k = 0; k < 10; ++k) {
    const std::complex<double> lambda = eig.eigenvalues()[k];
    if (std::abs(lambda.imag()) > 1e-8 * std::max(1.0, std::abs(lambda.real()))) continue;
    const Eigen::Matrix<std::complex<double>, 10, 1> vec = eig.eigenvectors().col(k);
    if (std::abs(vec[9]) < 1e-12) continue;
    const double x = (vec[6] / vec[9]).real();
    const double y = (vec[7] / vec[9]).real();
    const double z = (vec[8] / vec[9]).real();
    Mat3 candidate;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        const int idx = 3 * r + c;
        candidate(r, c) = x * v(idx, 5) + y * v(idx, 6) + z * v(idx, 7) + v(idx, 8);
      }
    }
    const double norm = candidate.norm();
    if (!(norm > 0.0) || !candidate.allFinite()) continue;
    out.push_back(candidate / norm);
  }
  return out;
}

double sampson_error(const Mat3& essential, const Vec2& x1, const Vec2& x2) {
  const Vec3 p(x1.x(), x1.y(), 1.0);
  const Vec3 q(x2.x(), x2.y(), 1.0);
  const Vec3 ep = essential * p;
  const Vec3 etq = essential.transpose() * q;
  const double num = q.dot(ep);
  const double den = ep.x() * ep.x() + ep.y() * ep.y() + etq.x() * etq.x() + etq.y() * etq.y();
  if (den <= 0.0) return std::numeric_limits<double>::infinity();
  return num * num / den;
}

std::vector<RelativePose> decompose_essential(const Mat3& essential) {
  Eigen::JacobiSVD<Mat3> svd(essential, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  Mat3 v = svd.matrixV();
  if (u.determinant() < 0.0) u = -u;
  if (v.determinant() < 0.0) v = -v;
  Mat3 w;
  w << 0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0;
  const Mat3 r1 = u * w * v.transpose();
  const Mat3 r2 = u * w.transpose() * v.transpose();
  const Vec3 t = u.col(2);
  return {{r1, t}, {r1, -t}, {r2, t}, {r2, -t}};
}

std::optional<Vec3> triangulate(std::span<const Pose> poses, std::span<const Vec2> normalized) {
  const std::size_t n = poses.size();
  if (n < 2 || normalized.size() != n) return std::nullopt;
  Eigen::MatrixXd a(2 * n, 4);
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::Matrix<double, 3, 4> p;
    const Mat3 rt = poses[i].rotation().transpose();
    p.leftCols<3>() = rt;
    p.col(3) = -rt * poses[i].center();
    a.row(2 * i) = normalized[i].x() * p.row(2) - p.row(0);
    a.row(2 * i + 1) = normalized[i].y() * p.row(2) - p.row(1);
  }
  // Row scaling keeps the SVD well conditioned for distant views.
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double nr = a.row(r).norm();
    if (nr > 0.0) a.row(r) /= nr;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::Vector4d h = svd.matrixV().col(3);
  if (std::abs(h[3]) < 1e-14) return std::nullopt;
  const Vec3 x = h.head<3>() / h[3];
  if (!x.allFinite()) return std::nullopt;
  return x;
}

Vec3 refine_point(const Vec3& initial, std::span<const Pose> poses, std::span<const PixelCoord> pixels,
                  const CameraModel& camera, int iterations) {
  Vec3 x = initial;
  for (int it = 0; it < iterations; ++it) {
    Mat3 h = Mat3::Zero();
    Vec3 g = Vec3::Zero();
    for (std::size_t i = 0; i < poses.size(); ++i) {
      const auto j = projection_jacobian(poses[i], x, camera);
      if (j.depth <= 1e-12) return x;
      const Vec2 r = j.pixel - Vec2(pixels[i].u, pixels[i].v);
      h += j.d_point.transpose() * j.d_point;
      g += j.d_point.transpose() * r;
    }
    Eigen::LDLT<Mat3> ldlt(h);
    if (ldlt.info() != Eigen::Success) break;
    const Vec3 step = -ldlt.solve(g);
    if (!step.allFinite()) break;
    x += step;
    if (step.norm() < 1e-12 * (1.0 + x.norm())) break;
  }
  return x;
}

namespace {

Vec2 normalized_of(const PixelCoord& p, const CameraModel& camera) {
  return {(p.u - camera.cx) / camera.fx, (p.v - camera.cy) / camera.fy};
}

std::vector<int> sample_indices(std::mt19937_64& rng, int n, int k) {
  std::vector<int> out;
  out.reserve(k);
  while (static_cast<int>(out.size()) < k) {
    const int candidate = static_cast<int>(rng() % static_cast<std::uint64_t>(n));
    if (std::find(out.begin(), out.end(), candidate) == out.end()) out.push_back(candidate);
  }
  return out;
}

int adaptive_iterations(double confidence, double inlier_ratio, int sample_size, int cap) {
  if (inlier_ratio <= 0.0) return cap;
  const double p = std::pow(inlier_ratio, sample_size);
  if (p >= 1.0 - 1e-12) return 1;
  const double needed = std::log(1.0 - confidence) / std::log(1.0 - p);
  if (!std::isfinite(needed) || needed > cap) return cap;
  return std::max(1, static_cast<int>(std::ceil(needed)));
}

double essential_distance(const Mat3& a, const Mat3& b) { return std::min((a - b).norm(), (a + b).norm()); }

}  // namespace

std::optional<EssentialEstimate> estimate_essential(std::span<const PixelCoord> pixels_1,
                                                    std::span<const PixelCoord> pixels_2,
                                                    const CameraModel& camera, const RansacParams& params) {
  const int n = static_cast<int>(pixels_1.size());
  if (n < 5 || pixels_2.size() != pixels_1.size()) return std::nullopt;
  std::vector<Vec2> x1(n), x2(n);
  for (int i = 0; i < n; ++i) {
    x1[i] = normalized_of(pixels_1[i], camera);
    x2[i] = normalized_of(pixels_2[i], camera);
  }
  const double thr = params.threshold / camera.mean_focal();
  const double thr2 = thr * thr;

  struct Hypothesis {
    Mat3 e;
    int support;
    double error;
  };
  std::vector<Hypothesis> top;
  std::mt19937_64 rng(params.seed);
  int iterations = params.max_iterations;
  for (int it = 0; it < iterations; ++it) {
    const auto idx = sample_indices(rng, n, 5);
    std::array<Vec2, 5> s1, s2;
    for (int k = 0; k < 5; ++k) {
      s1[k] = x1[idx[k]];
      s2[k] = x2[idx[k]];
    }
    for (const Mat3& e : essential_five_point(std::span<const Vec2, 5>(s1), std::span<const Vec2, 5>(s2))) {
      int support = 0;
      double error = 0.0;
      for (int i = 0; i < n; ++i) {
        const double d = sampson_error(e, x1[i], x2[i]);
        if (d < thr2) {
          ++support;
          error += d;
        }
      }
      if (support < 5) continue;
      Hypothesis h{e, support, error};
      auto same = std::find_if(top.begin(), top.end(),
                               [&](const Hypothesis& o) { return essential_distance(o.e, e) < 0.1; });
      if (same != top.end()) {
        if (support > same->support || (support == same->support && error < same->error)) *same = h;
      } else {
        top.push_back(h);
      }
      std::stable_sort(top.begin(), top.end(), [](const Hypothesis& a, const Hypothesis& b) {
        return a.support > b.support || (a.support == b.support && a.error < b.error);
      });
      if (top.size() > 6) top.resize(6);
      iterations = std::min(iterations, adaptive_iterations(params.confidence, static_cast<double>(top.front().support) / n,
                                                            5, params.max_iterations));
    }
  }
  if (top.empty()) return std::nullopt;

  EssentialEstimate out;
  out.essential = top.front().e;
  for (int i = 0; i < n; ++i) {
    if (sampson_error(out.essential, x1[i], x2[i]) < thr2) out.inliers.push_back(i);
  }
  for (const auto& h : top) {
    if (h.support * 10 >= top.front().support * 9) out.candidates.push_back(h.e);
  }
  return out;
}

std::pair<Pose, int> pose_from_essential(const Mat3& essential, std::span<const PixelCoord> pixels_1,
                                         std::span<const PixelCoord> pixels_2, const CameraModel& camera) {
  int best_count = -1;
  Pose best;
  for (const RelativePose& rel : decompose_essential(essential)) {
    // Camera 2 maps x1 -> R x1 + t, so its camera-to-world pose is (R^T, -R^T t).
    const Mat3 rwc = rel.rotation.transpose();
    Eigen::Quaterniond q(rwc);
    q.normalize();
    const Pose second(q.toRotationMatrix(), -rwc * rel.translation);
    const std::array<Pose, 2> poses{Pose(), second};
    int count = 0;
    for (std::size_t i = 0; i < pixels_1.size(); ++i) {
      const std::array<Vec2, 2> obs{normalized_of(pixels_1[i], camera), normalized_of(pixels_2[i], camera)};
      const auto x = triangulate(poses, obs);
      if (!x) continue;
      if (poses[0].to_camera(*x).z() > 0.0 && poses[1].to_camera(*x).z() > 0.0) ++count;
    }
    if (count > best_count) {
      best_count = count;
      best = second;
    }
  }
  return {best, best_count};
}

namespace {

using Coeffs = std::vector<double>;  // ascending powers

Coeffs poly_mul(const Coeffs& a, const Coeffs& b) {
  Coeffs r(a.size() + b.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) r[i + j] += a[i] * b[j];
  }
  return r;
}

Coeffs poly_add(Coeffs a, const Coeffs& b, double scale = 1.0) {
  if (a.size() < b.size()) a.resize(b.size(), 0.0);
  for (std::size_t i = 0; i < b.size(); ++i) a[i] += scale * b[i];
  return a;
}

std::vector<double> real_roots(Coeffs c) {
  while (!c.empty() && std::abs(c.back()) < 1e-14 * (1.0 + std::abs(c.front()))) c.pop_back();
  const int degree = static_cast<int>(c.size()) - 1;
  if (degree < 1) return {};
  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(degree, degree);
  for (int i = 0; i < degree; ++i) companion(0, i) = -c[degree - 1 - i] / c[degree];
  for (int i = 1; i < degree; ++i) companion(i, i - 1) = 1.0;
  Eigen::EigenSolver<Eigen::MatrixXd> eig(companion, false);
  std::vector<double> roots;
  for (int i = 0; i < degree; ++i) {
    const auto r = eig.eigenvalues()[i];
    if (std::abs(r.imag()) < 1e-8 * std::max(1.0, std::abs(r.real()))) roots.push_back(r.real());
  }
  return roots;
}

// Rotation/translation with q_i = R p_i + t for three or more point pairs.
std::optional<std::pair<Mat3, Vec3>> rigid_align(std::span<const Vec3> p, std::span<const Vec3> q) {
  Vec3 cp = Vec3::Zero();
  Vec3 cq = Vec3::Zero();
  for (std::size_t i = 0; i < p.size(); ++i) {
    cp += p[i];
    cq += q[i];
  }
  cp /= static_cast<double>(p.size());
  cq /= static_cast<double>(q.size());
  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < p.size(); ++i) h += (q[i] - cq) * (p[i] - cp).transpose();
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  const Mat3 r = svd.matrixU() * d * svd.matrixV().transpose();
  if (!r.allFinite()) return std::nullopt;
  return std::make_pair(r, cq - r * cp);
}

}  // namespace

std::vector<Pose> solve_p3p(std::span<const Vec3, 3> bearings, std::span<const Vec3, 3> world) {
  const Vec3 j1 = bearings[0].normalized();
  const Vec3 j2 = bearings[1].normalized();
  const Vec3 j3 = bearings[2].normalized();
  const double a2 = (world[1] - world[2]).squaredNorm();
  const double b2 = (world[0] - world[2]).squaredNorm();
  const double c2 = (world[0] - world[1]).squaredNorm();
  if (a2 < 1e-18 || b2 < 1e-18 || c2 < 1e-18) return {};
  const double cos_a = j2.dot(j3);
  const double cos_b = j1.dot(j3);
  const double cos_g = j1.dot(j2);

  // With s2 = u s1 and s3 = v s1 the law of cosines gives u = N(v) / D(v);
  // substituting into the remaining constraint yields a quartic in v.
  const double k = (c2 - a2) / b2;
  const Coeffs q = {1.0, -2.0 * cos_b, 1.0};  // 1 + v^2 - 2 v cos(beta)
  const Coeffs num = poly_add(poly_add(Coeffs{0.0}, q, k), Coeffs{-1.0, 0.0, 1.0});
  const Coeffs den = {-2.0 * cos_g, 2.0 * cos_a};
  // N^2 + (v^2 - (a^2/b^2) q) D^2 - 2 v cos(alpha) N D = 0
  const Coeffs vq = poly_add(Coeffs{0.0, 0.0, 1.0}, q, -a2 / b2);
  Coeffs quartic = poly_mul(num, num);
  quartic = poly_add(quartic, poly_mul(vq, poly_mul(den, den)));
  quartic = poly_add(quartic, poly_mul(Coeffs{0.0, -2.0 * cos_a}, poly_mul(num, den)));

  std::vector<Pose> out;
  for (double v : real_roots(quartic)) {
    if (v <= 0.0) continue;
    const double d = den[0] + den[1] * v;
    if (std::abs(d) < 1e-12) continue;
    const double u = (num[0] + num[1] * v + num[2] * v * v) / d;
    if (u <= 0.0) continue;
    const double denom = 1.0 + v * v - 2.0 * v * cos_b;
    if (denom <= 0.0) continue;
    const double s1 = std::sqrt(b2 / denom);
    const std::array<Vec3, 3> cam{s1 * j1, u * s1 * j2, v * s1 * j3};
    const std::array<Vec3, 3> pts{world[0], world[1], world[2]};
    const auto rt = rigid_align(pts, cam);  // camera = R world + t
    if (!rt) continue;
    const Mat3 rwc = rt->first.transpose();
    Eigen::Quaterniond qr(rwc);
    qr.normalize();
    out.emplace_back(qr.toRotationMatrix(), -rwc * rt->second);
  }
  return out;
}

Pose refine_pose(const Pose& initial, std::span<const Vec3> world, std::span<const PixelCoord> pixels,
                 const CameraModel& camera, int iterations) {
  auto cost_of = [&](const Pose& pose) {
    double cost = 0.0;
    for (std::size_t i = 0; i < world.size(); ++i) {
      const Vec3 pc = pose.to_camera(world[i]);
      if (pc.z() <= 1e-12) return std::numeric_limits<double>::infinity();
      const double du = camera.cx + camera.fx * pc.x() / pc.z() - pixels[i].u;
      const double dv = camera.cy + camera.fy * pc.y() / pc.z() - pixels[i].v;
      cost += du * du + dv * dv;
    }
    return cost;
  };
  Pose pose = initial;
  double cost = cost_of(pose);
  double lambda = 1e-3;
  for (int it = 0; it < iterations && std::isfinite(cost) && cost > 0.0; ++it) {
    Eigen::Matrix<double, 6, 6> h = Eigen::Matrix<double, 6, 6>::Zero();
    Vec6 g = Vec6::Zero();
    for (std::size_t i = 0; i < world.size(); ++i) {
      const auto j = projection_jacobian(pose, world[i], camera);
      const Vec2 r = j.pixel - Vec2(pixels[i].u, pixels[i].v);
      h += j.d_pose.transpose() * j.d_pose;
      g += j.d_pose.transpose() * r;
    }
    bool improved = false;
    for (int attempt = 0; attempt < 10; ++attempt) {
      Eigen::Matrix<double, 6, 6> damped = h;
      damped.diagonal() += lambda * h.diagonal();
      const Vec6 step = -damped.ldlt().solve(g);
      if (!step.allFinite()) break;
      const Pose candidate = pose.retract(step);
      const double c = cost_of(candidate);
      if (c < cost) {
        const double decrease = (cost - c) / cost;
        pose = candidate;
        cost = c;
        lambda = std::max(lambda / 10.0, 1e-12);
        improved = decrease > 1e-12 && step.norm() > 1e-14;
        break;
      }
      lambda *= 10.0;
    }
    if (!improved) break;
  }
  return pose;
}

std::optional<Resection> resect(std::span<const Vec3> world, std::span<const PixelCoord> pixels,
                                const CameraModel& camera, const RansacParams& params) {
  const int n = static_cast<int>(world.size());
  if (n < 3 || pixels.size() != world.size()) return std::nullopt;
  std::vector<Vec3> bearings(n);
  for (int i = 0; i < n; ++i) {
    bearings[i] = Vec3((pixels[i].u - camera.cx) / camera.fx, (pixels[i].v - camera.cy) / camera.fy, 1.0).normalized();
  }
  const double thr2 = params.threshold * params.threshold;
  auto inliers_of = [&](const Pose& pose, double& error) {
    std::vector<int> inl;
    error = 0.0;
    for (int i = 0; i < n; ++i) {
      const Vec3 pc = pose.to_camera(world[i]);
      if (pc.z() <= 1e-12) continue;
      const double du = camera.cx + camera.fx * pc.x() / pc.z() - pixels[i].u;
      const double dv = camera.cy + camera.fy * pc.y() / pc.z() - pixels[i].v;
      const double d2 = du * du + dv * dv;
      if (d2 < thr2) {
        inl.push_back(i);
        error += d2;
      }
    }
    return inl;
  };

  std::mt19937_64 rng(params.seed);
  std::optional<Resection> best;
  double best_error = std::numeric_limits<double>::infinity();
  int iterations = params.max_iterations;
  for (int it = 0; it < iterations; ++it) {
    const auto idx = sample_indices(rng, n, 3);
    const std::array<Vec3, 3> b{bearings[idx[0]], bearings[idx[1]], bearings[idx[2]]};
    const std::array<Vec3, 3> w{world[idx[0]], world[idx[1]], world[idx[2]]};
    for (const Pose& pose : solve_p3p(std::span<const Vec3, 3>(b), std::span<const Vec3, 3>(w))) {
      double error = 0.0;
      auto inl = inliers_of(pose, error);
      const std::size_t have = best ? best->inliers.size() : 0;
      if (inl.size() > have || (inl.size() == have && error < best_error)) {
        best = Resection{pose, std::move(inl)};
        best_error = error;
        iterations = std::min(iterations, adaptive_iterations(params.confidence,
                                                              static_cast<double>(best->inliers.size()) / n, 3,
                                                              params.max_iterations));
      }
    }
  }
  if (!best || best->inliers.size() < 3) return std::nullopt;

  for (int round = 0; round < 2; ++round) {
    std::vector<Vec3> w;
    std::vector<PixelCoord> p;
    for (int i : best->inliers) {
      w.push_back(world[i]);
      p.push_back(pixels[i]);
    }
    const Pose refined = refine_pose(best->pose, w, p, camera);
    double error = 0.0;
    auto inl = inliers_of(refined, error);
    if (inl.size() < best->inliers.size()) break;
    best = Resection{refined, std::move(inl)};
  }
  return best;
}

}  // namespace seqmosaic
