#include "seqmosaic/bundle_adjustment.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "seqmosaic/error.hpp"
#include "seqmosaic/multiview.hpp"

namespace seqmosaic {

double reprojection_cost(const BaProblem& problem, const CameraModel& camera) {
  double cost = 0.0;
  for (const auto& obs : problem.observations) {
    const Vec3 pc = problem.poses[obs.pose].to_camera(problem.points[obs.point]);
    if (pc.z() <= 1e-12) return std::numeric_limits<double>::infinity();
    const double du = camera.cx + camera.fx * pc.x() / pc.z() - obs.pixel.u;
    const double dv = camera.cy + camera.fy * pc.y() / pc.z() - obs.pixel.v;
    cost += du * du + dv * dv;
  }
  return cost;
}

namespace {

using Mat6 = Eigen::Matrix<double, 6, 6>;
using Mat63 = Eigen::Matrix<double, 6, 3>;

struct NormalEquations {
  std::vector<Mat6> u;
  std::vector<Vec6> g_pose;
  std::vector<Mat3> v;
  std::vector<Vec3> g_point;
  std::vector<Mat63> w;  // per observation, zero when the pose is fixed
};

}  // namespace

BaReport bundle_adjust(BaProblem& problem, const CameraModel& camera, const BaOptions& options) {
  const int num_poses = static_cast<int>(problem.poses.size());
  const int num_points = static_cast<int>(problem.points.size());
  if (problem.pose_fixed.size() != problem.poses.size()) problem.pose_fixed.resize(problem.poses.size(), false);

  std::vector<int> pose_block(num_poses, -1);
  int free_poses = 0;
  for (int i = 0; i < num_poses; ++i) {
    if (!problem.pose_fixed[i]) pose_block[i] = free_poses++;
  }
  std::vector<std::vector<int>> obs_of_point(num_points);
  for (int k = 0; k < static_cast<int>(problem.observations.size()); ++k) {
    obs_of_point[problem.observations[k].point].push_back(k);
  }

  BaReport report;
  const double n_obs = std::max<double>(1.0, static_cast<double>(problem.observations.size()));
  double cost = reprojection_cost(problem, camera);
  report.initial_cost = report.final_cost = cost;
  report.initial_rms = report.final_rms = std::sqrt(cost / n_obs);
  if (!std::isfinite(cost)) fail(ErrorKind::DivergedAdjustment, "initial configuration has points behind a camera");
  if (problem.observations.empty() || (free_poses == 0 && num_points == 0)) {
    report.termination = BaTermination::NoFreeParameters;
    return report;
  }
  // Exact data: nothing to improve.
  if (report.initial_rms < 1e-10) {
    report.termination = BaTermination::AlreadyOptimal;
    return report;
  }

  const int dim = 6 * free_poses;
  int gauge_index = -1;
  if (problem.fixed_center_axis) {
    const auto [pose, axis] = *problem.fixed_center_axis;
    if (pose_block[pose] >= 0) gauge_index = 6 * pose_block[pose] + 3 + axis;
  }

  double lambda = options.initial_lambda;
  int rejections = 0;
  NormalEquations ne;
  bool rebuild = true;
  while (report.iterations < options.max_iterations) {
    if (rebuild) {
      ne.u.assign(free_poses, Mat6::Zero());
      ne.g_pose.assign(free_poses, Vec6::Zero());
      ne.v.assign(num_points, Mat3::Zero());
      ne.g_point.assign(num_points, Vec3::Zero());
      ne.w.assign(problem.observations.size(), Mat63::Zero());
      for (std::size_t k = 0; k < problem.observations.size(); ++k) {
        const auto& obs = problem.observations[k];
        const auto j = projection_jacobian(problem.poses[obs.pose], problem.points[obs.point], camera);
        const Vec2 r = j.pixel - Vec2(obs.pixel.u, obs.pixel.v);
        ne.v[obs.point] += j.d_point.transpose() * j.d_point;
        ne.g_point[obs.point] += j.d_point.transpose() * r;
        const int b = pose_block[obs.pose];
        if (b >= 0) {
          ne.u[b] += j.d_pose.transpose() * j.d_pose;
          ne.g_pose[b] += j.d_pose.transpose() * r;
          ne.w[k] = j.d_pose.transpose() * j.d_point;
        }
      }
      rebuild = false;
    }
    ++report.iterations;

    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(dim);
    for (int b = 0; b < free_poses; ++b) {
      Mat6 ub = ne.u[b];
      ub.diagonal() += lambda * ne.u[b].diagonal() + Vec6::Constant(1e-12);
      s.block<6, 6>(6 * b, 6 * b) = ub;
      rhs.segment<6>(6 * b) = -ne.g_pose[b];
    }
    std::vector<Mat3> v_inv(num_points);
    for (int p = 0; p < num_points; ++p) {
      Mat3 vp = ne.v[p];
      vp.diagonal() += lambda * ne.v[p].diagonal() + Vec3::Constant(1e-12);
      v_inv[p] = vp.inverse();
      if (!v_inv[p].allFinite()) v_inv[p].setZero();
      const auto& obs_list = obs_of_point[p];
      for (int k1 : obs_list) {
        const int b1 = pose_block[problem.observations[k1].pose];
        if (b1 < 0) continue;
        const Mat63 wv = ne.w[k1] * v_inv[p];
        rhs.segment<6>(6 * b1) += wv * ne.g_point[p];
        for (int k2 : obs_list) {
          const int b2 = pose_block[problem.observations[k2].pose];
          if (b2 < 0) continue;
          s.block<6, 6>(6 * b1, 6 * b2) -= wv * ne.w[k2].transpose();
        }
      }
    }
    if (gauge_index >= 0) {
      s.row(gauge_index).setZero();
      s.col(gauge_index).setZero();
      s(gauge_index, gauge_index) = 1.0;
      rhs[gauge_index] = 0.0;
    }

    Eigen::VectorXd delta_pose = Eigen::VectorXd::Zero(dim);
    bool solved = true;
    if (dim > 0) {
      Eigen::LDLT<Eigen::MatrixXd> ldlt(s);
      delta_pose = ldlt.solve(rhs);
      solved = ldlt.info() == Eigen::Success && delta_pose.allFinite();
    }
    std::vector<Vec3> delta_point(num_points, Vec3::Zero());
    double step_sq = delta_pose.squaredNorm();
    double param_sq = 0.0;
    if (solved) {
      for (int p = 0; p < num_points; ++p) {
        Vec3 acc = -ne.g_point[p];
        for (int k : obs_of_point[p]) {
          const int b = pose_block[problem.observations[k].pose];
          if (b >= 0) acc -= ne.w[k].transpose() * delta_pose.segment<6>(6 * b);
        }
        delta_point[p] = v_inv[p] * acc;
        step_sq += delta_point[p].squaredNorm();
        param_sq += problem.points[p].squaredNorm();
      }
      for (int i = 0; i < num_poses; ++i) {
        if (pose_block[i] >= 0) param_sq += problem.poses[i].center().squaredNorm();
      }
      solved = std::isfinite(step_sq);
    }
    if (!solved) {
      lambda *= 10.0;
      continue;
    }
    if (std::sqrt(step_sq) < options.min_step * (std::sqrt(param_sq) + options.min_step)) {
      report.termination = BaTermination::SmallStep;
      break;
    }

    std::vector<Pose> new_poses = problem.poses;
    for (int i = 0; i < num_poses; ++i) {
      if (pose_block[i] >= 0) new_poses[i] = problem.poses[i].retract(delta_pose.segment<6>(6 * pose_block[i]));
    }
    std::vector<Vec3> new_points = problem.points;
    for (int p = 0; p < num_points; ++p) new_points[p] += delta_point[p];
    std::swap(new_poses, problem.poses);
    std::swap(new_points, problem.points);
    const double new_cost = reprojection_cost(problem, camera);
    if (new_cost < cost) {
      const double decrease = (cost - new_cost) / cost;
      cost = new_cost;
      ++report.accepted_steps;
      lambda = std::max(lambda / 10.0, 1e-15);
      rejections = 0;
      rebuild = true;
      if (decrease < options.min_relative_decrease) {
        report.termination = BaTermination::SmallDecrease;
        break;
      }
    } else {
      std::swap(new_poses, problem.poses);
      std::swap(new_points, problem.points);
      const bool real_increase = !std::isfinite(new_cost) || (new_cost - cost) > 1e-12 * cost;
      if (!real_increase) {
        report.termination = BaTermination::SmallDecrease;
        break;
      }
      lambda *= 10.0;
      if (++rejections >= options.max_consecutive_rejections) {
        fail(ErrorKind::DivergedAdjustment,
             "cost increased on " + std::to_string(rejections) + " consecutive steps");
      }
    }
  }
  report.final_cost = cost;
  report.final_rms = std::sqrt(cost / n_obs);
  return report;
}

}  // namespace seqmosaic
