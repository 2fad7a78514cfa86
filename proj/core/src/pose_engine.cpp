#include "seqmosaic/pose_engine.hpp"

#include <algorithm>
#include <climits>
#include <cmath>
#include <set>

#include <Eigen/SVD>

#include "seqmosaic/plane_fitting.hpp"

namespace seqmosaic {

namespace {

constexpr double kDeg = 3.14159265358979323846 / 180.0;

Vec2 normalized(const PixelCoord& ideal, const CameraModel& c) {
  return {(ideal.u - c.cx) / c.fx, (ideal.v - c.cy) / c.fy};
}

double reprojection_error(const Pose& pose, const Vec3& x, const PixelCoord& ideal, const CameraModel& c) {
  const Vec3 pc = pose.to_camera(x);
  if (pc.z() <= 1e-12) return std::numeric_limits<double>::infinity();
  return std::hypot(c.cx + c.fx * pc.x() / pc.z() - ideal.u, c.cy + c.fy * pc.y() / pc.z() - ideal.v);
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

}  // namespace

int select_keyframe(const SlidingWindow& window) {
  if (window.members.empty()) fail(ErrorKind::InvalidArgument, "window has no members");
  return window.members[window.members.size() / 2];
}

std::vector<FeatureMatch> detect_and_match(const Frame& a, const Frame& b, const FeatureConfig& config) {
  if (a.image.empty() || b.image.empty()) fail(ErrorKind::InvalidArgument, "frames must carry images");
  return detect_and_match(a.image, b.image, config);
}

BaReport windowed_bundle_adjust(const SlidingWindow& window, SparseMap& map, const CameraModel& camera,
                                const BaOptions& options, std::optional<std::pair<int, int>> gauge) {
  const std::set<int> members(window.members.begin(), window.members.end());
  for (int id : members) {
    if (map.poses.count(id) == 0) fail(ErrorKind::MissingPose, "window member " + std::to_string(id) + " has no pose");
  }
  BaProblem problem;
  std::map<int, int> pose_index;
  std::vector<int> pose_ids;
  auto add_pose = [&](int id, bool fixed) {
    const auto [it, inserted] = pose_index.emplace(id, static_cast<int>(problem.poses.size()));
    if (inserted) {
      problem.poses.push_back(map.poses.at(id));
      problem.pose_fixed.push_back(fixed);
      pose_ids.push_back(id);
    }
    return it->second;
  };
  for (int id : window.members) add_pose(id, false);

  std::vector<int> point_ids;
  for (const auto& [pid, point] : map.points) {
    const bool seen = std::any_of(point.observations.begin(), point.observations.end(),
                                  [&](const Observation& o) { return members.count(o.frame_id) != 0; });
    if (!seen) continue;
    const int index = static_cast<int>(problem.points.size());
    point_ids.push_back(pid);
    problem.points.push_back(point.position);
    for (const auto& o : point.observations) {
      if (map.poses.count(o.frame_id) == 0) continue;
      const int pi = add_pose(o.frame_id, members.count(o.frame_id) == 0);
      problem.observations.push_back({pi, index, o.ideal});
    }
  }
  if (gauge) {
    const auto it = pose_index.find(gauge->first);
    if (it != pose_index.end()) problem.fixed_center_axis = std::pair{it->second, gauge->second};
  }
  const BaReport report = bundle_adjust(problem, camera, options);
  for (std::size_t i = 0; i < pose_ids.size(); ++i) {
    if (!problem.pose_fixed[i]) map.poses.at(pose_ids[i]) = problem.poses[i];
  }
  for (std::size_t i = 0; i < point_ids.size(); ++i) map.points.at(point_ids[i]).position = problem.points[i];
  return report;
}

int prune_outliers(SparseMap& map, std::span<const int> point_ids, const CameraModel& camera, double cutoff) {
  int removed = 0;
  for (int pid : point_ids) {
    auto it = map.points.find(pid);
    if (it == map.points.end()) continue;
    auto& obs = it->second.observations;
    const auto end = std::remove_if(obs.begin(), obs.end(), [&](const Observation& o) {
      const auto pose = map.poses.find(o.frame_id);
      return pose != map.poses.end() && !(reprojection_error(pose->second, it->second.position, o.ideal, camera) <= cutoff);
    });
    removed += static_cast<int>(obs.end() - end);
    obs.erase(end, obs.end());
    if (obs.size() < 2) map.points.erase(it);
  }
  return removed;
}

ReplayPoses::ReplayPoses(std::vector<TrajectoryEntry> entries) : entries_(std::move(entries)) {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (!by_id_.emplace(entries_[i].id, i).second) {
      fail(ErrorKind::ParseError, "duplicate frame id " + std::to_string(entries_[i].id) + " in trajectory");
    }
  }
}

ReplayPoses ReplayPoses::load(const std::filesystem::path& path) { return ReplayPoses(read_trajectory(path)); }

const Pose& ReplayPoses::pose(int frame_id) const {
  const auto it = by_id_.find(frame_id);
  if (it == by_id_.end()) fail(ErrorKind::MissingPose, "no pose for frame " + std::to_string(frame_id));
  return entries_[it->second].pose;
}

namespace {

struct Track {
  int id = 0;
  std::vector<Observation> obs;
  Rgb color;
};

struct ActiveTrack {
  int id = 0;
  PixelCoord pixel;  // observed position in the latest frame
};

struct MapState {
  SparseMap map;
  std::map<int, Track> pending;
};

struct FrameData {
  double timestamp = 0.0;
  Image image;
  GrayImage gray;
};

// Promotes pending tracks with enough posed views to tie points. Tracks whose
// triangulation is inconsistent are dropped; those short of parallax wait.
void triangulate_pending(MapState& st, const CameraModel& camera, const PoseEngineConfig& cfg) {
  std::vector<int> promote;
  std::vector<int> drop;
  std::vector<Pose> poses;
  std::vector<Vec2> norm;
  std::vector<PixelCoord> ideal;
  for (auto& [id, track] : st.pending) {
    poses.clear();
    norm.clear();
    ideal.clear();
    for (const auto& o : track.obs) {
      const auto it = st.map.poses.find(o.frame_id);
      if (it == st.map.poses.end()) continue;
      poses.push_back(it->second);
      norm.push_back(normalized(o.ideal, camera));
      ideal.push_back(o.ideal);
    }
    if (poses.size() < 2) continue;
    auto x = triangulate(poses, norm);
    if (!x) continue;
    *x = refine_point(*x, poses, ideal, camera);
    double max_angle = 0.0;
    bool front = true;
    for (std::size_t i = 0; i < poses.size(); ++i) {
      if (poses[i].to_camera(*x).z() <= 0.0) front = false;
      for (std::size_t j = i + 1; j < poses.size(); ++j) {
        const Vec3 a = (*x - poses[i].center()).normalized();
        const Vec3 b = (*x - poses[j].center()).normalized();
        max_angle = std::max(max_angle, std::atan2(a.cross(b).norm(), a.dot(b)));
      }
    }
    if (max_angle < cfg.min_triangulation_deg * kDeg) continue;
    bool consistent = front;
    for (std::size_t i = 0; consistent && i < poses.size(); ++i) {
      consistent = reprojection_error(poses[i], *x, ideal[i], camera) <= cfg.outlier_cutoff;
    }
    if (!consistent) {
      drop.push_back(id);
      continue;
    }
    TiePoint tp;
    tp.id = id;
    tp.position = *x;
    tp.observations = track.obs;
    tp.color = track.color;
    st.map.points.emplace(id, std::move(tp));
    promote.push_back(id);
  }
  for (int id : promote) st.pending.erase(id);
  for (int id : drop) st.pending.erase(id);
}

// Re-solves points against all their posed observations; used when poses are
// given and no adjustment runs.
void refine_points(SparseMap& map, std::span<const int> ids, const CameraModel& camera) {
  std::vector<Pose> poses;
  std::vector<PixelCoord> ideal;
  for (int id : ids) {
    auto it = map.points.find(id);
    if (it == map.points.end()) continue;
    poses.clear();
    ideal.clear();
    for (const auto& o : it->second.observations) {
      const auto p = map.poses.find(o.frame_id);
      if (p == map.poses.end()) continue;
      poses.push_back(p->second);
      ideal.push_back(o.ideal);
    }
    if (poses.size() >= 2) it->second.position = refine_point(it->second.position, poses, ideal, camera);
  }
}

// Best rotation mapping bearings a onto b; the median residual angle tells
// whether a pure rotation explains the motion.
double rotation_only_residual_deg(std::span<const Vec3> a, std::span<const Vec3> b) {
  Mat3 m = Mat3::Zero();
  for (std::size_t i = 0; i < a.size(); ++i) m += b[i] * a[i].transpose();
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 s = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) s(2, 2) = -1.0;
  const Mat3 r = svd.matrixU() * s * svd.matrixV().transpose();
  std::vector<double> res;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Vec3 ra = r * a[i];
    res.push_back(std::atan2(ra.cross(b[i]).norm(), ra.dot(b[i])) / kDeg);
  }
  return median(std::move(res));
}

}  // namespace

struct PoseEngine::Impl {
  CameraModel camera;
  PoseEngineConfig config;
  std::shared_ptr<const ReplayPoses> replay;

  EngineState state = EngineState::AwaitingInitialization;
  int session = 0;
  bool any_frame = false;
  int last_id = INT_MIN;

  MapState st;
  std::vector<ActiveTrack> active;
  int next_track_id = 0;
  int last_frame = INT_MIN;  // latest frame holding tracking data
  SlidingWindow window;
  std::map<int, FrameStatus> statuses;
  std::map<int, FrameData> frames;
  std::vector<int> init_frames;
  bool initial_forward_done = false;
  std::set<int> forwarded;
  int last_forwarded = INT_MIN;

  Impl(const CameraModel& cam, const PoseEngineConfig& cfg, std::shared_ptr<const ReplayPoses> rp)
      : camera(cam), config(cfg), replay(std::move(rp)) {
    camera.validate();
    if (config.window_size < 3) fail(ErrorKind::InvalidArgument, "window size must be at least 3");
    if (config.mosaic_stride < 1) fail(ErrorKind::InvalidArgument, "mosaic stride must be at least 1");
    window.size = config.window_size;
  }

  void reset_tracking() {
    st = MapState{};
    active.clear();
    last_frame = INT_MIN;
    window.members.clear();
    window.fixed.clear();
    init_frames.clear();
    frames.clear();
    initial_forward_done = false;
  }

  // Extends the active tracks into the new frame and starts new ones.
  // Throws TooFewMatches.
  void track(int id, const FrameData& data) {
    const FeatureConfig& fc = config.features;
    const auto corners = detect_corners(data.gray, fc);
    std::vector<ActiveTrack> next;
    std::vector<bool> used(corners.size(), false);
    const auto prev = frames.find(last_frame);
    if (prev != frames.end() && !active.empty()) {
      std::vector<PixelCoord> pts;
      pts.reserve(active.size());
      for (const auto& a : active) pts.push_back(a.pixel);
      const double full_radius = fc.search_radius * std::max(camera.width, camera.height);
      Vec2 offset = Vec2::Zero();
      double radius = full_radius;
      {
        const std::size_t stride = std::max<std::size_t>(1, pts.size() / 150);
        std::vector<PixelCoord> sub;
        for (std::size_t i = 0; i < pts.size(); i += stride) sub.push_back(pts[i]);
        const auto coarse = match_features(prev->second.gray, sub, data.gray, corners, fc, Vec2::Zero(), full_radius);
        if (coarse.size() >= 8) {
          std::vector<double> du;
          std::vector<double> dv;
          for (const auto& m : coarse) {
            du.push_back(m.pixel_b.u - m.pixel_a.u);
            dv.push_back(m.pixel_b.v - m.pixel_a.v);
          }
          offset = Vec2(median(du), median(dv));
          radius = fc.tracking_radius;
        }
      }
      const auto matches = match_features(prev->second.gray, pts, data.gray, corners, fc, offset, radius);
      if (static_cast<int>(matches.size()) < fc.min_matches) {
        fail(ErrorKind::TooFewMatches, "frame " + std::to_string(id) + ": " + std::to_string(matches.size()) +
                                           " matches, need " + std::to_string(fc.min_matches));
      }
      for (const auto& m : matches) {
        PixelCoord ideal;
        try {
          ideal = undistort_pixel(m.pixel_b, camera);
        } catch (const Error&) {
          continue;
        }
        const int tid = active[m.index_a].id;
        const Observation o{id, m.pixel_b, ideal};
        if (auto p = st.map.points.find(tid); p != st.map.points.end()) {
          p->second.observations.push_back(o);
        } else if (auto t = st.pending.find(tid); t != st.pending.end()) {
          t->second.obs.push_back(o);
        } else {
          continue;
        }
        used[m.index_b] = true;
        next.push_back({tid, m.pixel_b});
      }
    }
    // New tracks on free corners, away from the continuing ones.
    const double cell = std::max(1.0, fc.min_distance);
    const int gw = static_cast<int>(camera.width / cell) + 1;
    const int gh = static_cast<int>(camera.height / cell) + 1;
    std::vector<std::vector<PixelCoord>> grid(static_cast<std::size_t>(gw) * gh);
    auto cell_of = [&](const PixelCoord& p) {
      const int cx = std::clamp(static_cast<int>(p.u / cell), 0, gw - 1);
      const int cy = std::clamp(static_cast<int>(p.v / cell), 0, gh - 1);
      return std::pair{cx, cy};
    };
    auto occupied = [&](const PixelCoord& p) {
      const auto [cx, cy] = cell_of(p);
      for (int y = std::max(0, cy - 1); y <= std::min(gh - 1, cy + 1); ++y) {
        for (int x = std::max(0, cx - 1); x <= std::min(gw - 1, cx + 1); ++x) {
          for (const auto& q : grid[static_cast<std::size_t>(y) * gw + x]) {
            if (std::hypot(p.u - q.u, p.v - q.v) < fc.min_distance) return true;
          }
        }
      }
      return false;
    };
    for (const auto& a : next) {
      const auto [cx, cy] = cell_of(a.pixel);
      grid[static_cast<std::size_t>(cy) * gw + cx].push_back(a.pixel);
    }
    for (std::size_t i = 0; i < corners.size() && static_cast<int>(next.size()) < fc.max_features; ++i) {
      if (used[i] || occupied(corners[i].pixel)) continue;
      PixelCoord ideal;
      try {
        ideal = undistort_pixel(corners[i].pixel, camera);
      } catch (const Error&) {
        continue;
      }
      Track t;
      t.id = next_track_id++;
      t.obs.push_back({id, corners[i].pixel, ideal});
      const auto c = sample_bilinear(data.image, corners[i].pixel);
      t.color = c ? to_rgb(*c) : Rgb{};
      st.pending.emplace(t.id, t);
      next.push_back({t.id, corners[i].pixel});
      const auto [cx, cy] = cell_of(corners[i].pixel);
      grid[static_cast<std::size_t>(cy) * gw + cx].push_back(corners[i].pixel);
    }
    active = std::move(next);
    // Pending tracks that stopped can no longer gain views.
    std::set<int> alive;
    for (const auto& a : active) alive.insert(a.id);
    for (auto it = st.pending.begin(); it != st.pending.end();) {
      it = alive.count(it->first) ? std::next(it) : st.pending.erase(it);
    }
    last_frame = id;
  }

  // Keeps only tracks whose latest observation is in frame `id`.
  void refresh_active(int id) {
    std::vector<ActiveTrack> kept;
    for (const auto& a : active) {
      const std::vector<Observation>* obs = nullptr;
      if (auto p = st.map.points.find(a.id); p != st.map.points.end()) {
        obs = &p->second.observations;
      } else if (auto t = st.pending.find(a.id); t != st.pending.end()) {
        obs = &t->second.obs;
      }
      if (obs && !obs->empty() && obs->back().frame_id == id) kept.push_back(a);
    }
    active = std::move(kept);
  }

  std::vector<int> window_point_ids() const {
    const std::set<int> members(window.members.begin(), window.members.end());
    std::vector<int> ids;
    for (const auto& [pid, p] : st.map.points) {
      for (const auto& o : p.observations) {
        if (members.count(o.frame_id)) {
          ids.push_back(pid);
          break;
        }
      }
    }
    return ids;
  }

  Keyframe make_keyframe(int id) const {
    Keyframe k;
    k.frame_id = id;
    const auto& fd = frames.at(id);
    k.timestamp = fd.timestamp;
    k.image = fd.image;
    k.pose = st.map.poses.at(id);
    k.session = session;
    for (int pid : window_point_ids()) k.local_points.push_back(st.map.points.at(pid).position);
    for (int m : window.members) k.window_centers.push_back(st.map.poses.at(m).center());
    return k;
  }

  void forward(int id, std::vector<Keyframe>& out) {
    if (forwarded.count(id)) return;
    if (last_forwarded != INT_MIN && id - last_forwarded < config.mosaic_stride) return;
    forwarded.insert(id);
    last_forwarded = id;
    out.push_back(make_keyframe(id));
  }

  void forward_window(std::vector<Keyframe>& out) {
    if (!window.full()) return;
    const std::size_t center = window.members.size() / 2;
    if (!initial_forward_done) {
      for (std::size_t i = 0; i <= center; ++i) forward(window.members[i], out);
      initial_forward_done = true;
    } else {
      forward(window.members[center], out);
    }
  }

  void slide(int id) {
    window.members.push_back(id);
    while (static_cast<int>(window.members.size()) > window.size) {
      window.fixed.push_back(window.members.front());
      window.members.erase(window.members.begin());
    }
  }

  void drop_stale_images() {
    std::set<int> keep(window.members.begin(), window.members.end());
    keep.insert(last_frame);
    for (int id : init_frames) keep.insert(id);
    for (auto it = frames.begin(); it != frames.end();) it = keep.count(it->first) ? std::next(it) : frames.erase(it);
  }

  void fail_step(EngineStep& step, const Error& error) {
    step.failure = error;
    step.status = FrameStatus::Lost;
    statuses[step.frame_id] = FrameStatus::Lost;
    for (int id : init_frames) {
      if (statuses[id] == FrameStatus::Pending) statuses[id] = FrameStatus::Lost;
    }
    state = EngineState::Lost;
    reset_tracking();
  }

  EngineStep process(const Frame& frame) {
    if (any_frame && frame.id <= last_id) {
      fail(ErrorKind::InvalidArgument, "frame ids must increase (" + std::to_string(frame.id) + " after " +
                                           std::to_string(last_id) + ")");
    }
    if (frame.image.empty()) fail(ErrorKind::InvalidArgument, "frame " + std::to_string(frame.id) + " has no image");
    any_frame = true;
    last_id = frame.id;
    EngineStep step;
    step.frame_id = frame.id;
    if (state == EngineState::Lost) {
      statuses[frame.id] = FrameStatus::Lost;
      step.status = FrameStatus::Lost;
      return step;
    }
    statuses[frame.id] = FrameStatus::Pending;
    FrameData data{frame.timestamp, frame.image, to_gray(frame.image)};
    if (replay) return process_replay(frame.id, std::move(data));

    frames[frame.id] = data;
    try {
      track(frame.id, frames[frame.id]);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::TooFewMatches) throw;
      const bool init = state == EngineState::AwaitingInitialization;
      fail_step(step, Error(init ? ErrorKind::InitializationFailed : ErrorKind::TrackingLost, e.what()));
      return step;
    }
    try {
      if (state == EngineState::AwaitingInitialization) {
        init_frames.push_back(frame.id);
        if (static_cast<int>(init_frames.size()) == window.size) initialize(step);
      } else {
        register_frame(frame.id, step);
      }
    } catch (const Error& e) {
      switch (e.kind()) {
        case ErrorKind::InitializationFailed:
        case ErrorKind::TrackingLost:
        case ErrorKind::DivergedAdjustment:
          fail_step(step, e);
          return step;
        default:
          throw;
      }
    }
    drop_stale_images();
    return step;
  }

  EngineStep process_replay(int id, FrameData data) {
    EngineStep step;
    step.frame_id = id;
    const Pose pose = replay->pose(id);
    frames[id] = std::move(data);
    try {
      track(id, frames[id]);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::TooFewMatches) throw;
      // Poses are given, so losing the tracks only restarts them.
      active.clear();
      last_frame = INT_MIN;
      track(id, frames[id]);
    }
    st.map.poses[id] = pose;
    statuses[id] = FrameStatus::Tracked;
    std::vector<int> seen;
    for (const auto& a : active) {
      if (st.map.points.count(a.id)) seen.push_back(a.id);
    }
    refine_points(st.map, seen, camera);
    prune_outliers(st.map, seen, camera, config.outlier_cutoff);
    triangulate_pending(st, camera, config);
    refresh_active(id);
    slide(id);
    state = EngineState::Tracking;
    forward_window(step.keyframes);
    drop_stale_images();
    step.status = FrameStatus::Tracked;
    step.pose = pose;
    return step;
  }

  struct Candidate {
    MapState st;
    double rms = 0.0;
    double alignment = 0.0;
  };

  std::optional<Candidate> evaluate(const Mat3& essential, int f0, int fk, std::span<const PixelCoord> p0,
                                    std::span<const PixelCoord> pk) {
    Candidate c;
    c.st.pending = st.pending;
    c.st.map.poses[f0] = Pose();
    const auto [pose_k, in_front] = pose_from_essential(essential, p0, pk, camera);
    if (in_front < std::max<int>(8, static_cast<int>(p0.size()) / 2)) return std::nullopt;
    c.st.map.poses[fk] = pose_k;
    triangulate_pending(c.st, camera, config);
    for (int j : init_frames) {
      if (j == f0 || j == fk) continue;
      std::vector<Vec3> world;
      std::vector<PixelCoord> pix;
      for (const auto& [pid, p] : c.st.map.points) {
        for (const auto& o : p.observations) {
          if (o.frame_id == j) {
            world.push_back(p.position);
            pix.push_back(o.ideal);
          }
        }
      }
      if (static_cast<int>(world.size()) < config.min_resection_inliers) return std::nullopt;
      const auto res = resect(world, pix, camera, config.resection);
      if (!res || static_cast<int>(res->inliers.size()) < config.min_resection_inliers) return std::nullopt;
      c.st.map.poses[j] = res->pose;
      triangulate_pending(c.st, camera, config);
    }
    SlidingWindow all;
    all.size = static_cast<int>(init_frames.size());
    for (int id : init_frames) {
      if (id != f0) all.members.push_back(id);
    }
    const Vec3 ck = c.st.map.poses.at(fk).center();
    Eigen::Index axis = 0;
    ck.cwiseAbs().maxCoeff(&axis);
    const std::pair<int, int> gauge{fk, static_cast<int>(axis)};
    BaReport report;
    for (int round = 0; round < 2; ++round) {
      report = windowed_bundle_adjust(all, c.st.map, camera, config.bundle_adjustment, gauge);
      std::vector<int> ids;
      for (const auto& [pid, p] : c.st.map.points) ids.push_back(pid);
      if (prune_outliers(c.st.map, ids, camera, config.outlier_cutoff) == 0) break;
    }
    if (c.st.map.points.size() < 8) return std::nullopt;
    c.rms = std::sqrt(reprojection_cost_of(c.st.map) / std::max<std::size_t>(1, observation_count(c.st.map)));

    std::vector<double> parallax;
    std::vector<Vec3> pts;
    for (const auto& [pid, p] : c.st.map.points) {
      pts.push_back(p.position);
      double best = 0.0;
      for (std::size_t i = 0; i < p.observations.size(); ++i) {
        for (std::size_t k = i + 1; k < p.observations.size(); ++k) {
          const Vec3 a = (p.position - c.st.map.poses.at(p.observations[i].frame_id).center()).normalized();
          const Vec3 b = (p.position - c.st.map.poses.at(p.observations[k].frame_id).center()).normalized();
          best = std::max(best, std::atan2(a.cross(b).norm(), a.dot(b)));
        }
      }
      parallax.push_back(best / kDeg);
    }
    if (median(parallax) < config.min_parallax_deg) return std::nullopt;
    c.alignment = std::abs(fit_plane_least_squares(pts).normal.z());
    return c;
  }

  double reprojection_cost_of(const SparseMap& map) const {
    double cost = 0.0;
    for (const auto& [pid, p] : map.points) {
      for (const auto& o : p.observations) {
        const double e = reprojection_error(map.poses.at(o.frame_id), p.position, o.ideal, camera);
        cost += e * e;
      }
    }
    return cost;
  }

  static std::size_t observation_count(const SparseMap& map) {
    std::size_t n = 0;
    for (const auto& [pid, p] : map.points) n += p.observations.size();
    return n;
  }

  void initialize(EngineStep& step) {
    const int f0 = init_frames.front();
    std::string reason = "too few correspondences with the first frame";
    for (std::size_t k = init_frames.size() - 1; k >= 1; --k) {
      const int fk = init_frames[k];
      std::vector<PixelCoord> p0;
      std::vector<PixelCoord> pk;
      std::vector<Vec3> b0;
      std::vector<Vec3> bk;
      for (const auto& [tid, t] : st.pending) {
        const Observation* o0 = nullptr;
        const Observation* ok = nullptr;
        for (const auto& o : t.obs) {
          if (o.frame_id == f0) o0 = &o;
          if (o.frame_id == fk) ok = &o;
        }
        if (!o0 || !ok) continue;
        p0.push_back(o0->ideal);
        pk.push_back(ok->ideal);
        b0.push_back(normalized(o0->ideal, camera).homogeneous().normalized());
        bk.push_back(normalized(ok->ideal, camera).homogeneous().normalized());
      }
      if (static_cast<int>(p0.size()) < config.features.min_matches) continue;
      // A pure rotation maps the bearings onto each other up to noise.
      const double rotation_px = rotation_only_residual_deg(b0, bk) * kDeg * camera.mean_focal();
      if (rotation_px < config.essential.threshold) {
        fail(ErrorKind::InitializationFailed, "no parallax between frames " + std::to_string(f0) + " and " +
                                                  std::to_string(fk) + " (rotation-only motion)");
      }
      const auto est = estimate_essential(p0, pk, camera, config.essential);
      if (!est || static_cast<int>(est->inliers.size()) < config.features.min_matches) {
        reason = "essential matrix has too few inliers";
        continue;
      }
      std::vector<PixelCoord> in0;
      std::vector<PixelCoord> ink;
      for (int i : est->inliers) {
        in0.push_back(p0[i]);
        ink.push_back(pk[i]);
      }
      std::vector<Candidate> candidates;
      const std::size_t limit = std::min<std::size_t>(est->candidates.size(), 4);
      for (std::size_t c = 0; c < limit; ++c) {
        if (auto cand = evaluate(est->candidates[c], f0, fk, in0, ink)) candidates.push_back(std::move(*cand));
      }
      if (candidates.empty()) {
        reason = "no relative orientation survived resection and adjustment";
        continue;
      }
      double best_rms = std::numeric_limits<double>::infinity();
      for (const auto& c : candidates) best_rms = std::min(best_rms, c.rms);
      // Near-ties are the planar-scene ambiguity; the surveyed surface faces
      // the first camera.
      const Candidate* chosen = nullptr;
      for (const auto& c : candidates) {
        if (c.rms > 1.5 * best_rms + 0.05) continue;
        if (!chosen || c.alignment > chosen->alignment) chosen = &c;
      }
      commit_initialization(chosen->st, step);
      return;
    }
    fail(ErrorKind::InitializationFailed, reason);
  }

  void commit_initialization(MapState chosen, EngineStep& step) {
    const Vec3 c0 = chosen.map.poses.at(init_frames[0]).center();
    const double baseline = (chosen.map.poses.at(init_frames[1]).center() - c0).norm();
    if (!(baseline > 1e-9)) fail(ErrorKind::InitializationFailed, "first baseline is zero");
    const double s = 1.0 / baseline;
    for (auto& [id, pose] : chosen.map.poses) pose = Pose(pose.rotation(), c0 + s * (pose.center() - c0));
    for (auto& [pid, p] : chosen.map.points) p.position = c0 + s * (p.position - c0);
    st = std::move(chosen);
    for (int id : init_frames) statuses[id] = FrameStatus::Tracked;
    window.members = init_frames;
    window.fixed.clear();
    init_frames.clear();
    state = EngineState::Tracking;
    refresh_active(window.members.back());
    step.status = FrameStatus::Tracked;
    step.pose = st.map.poses.at(window.members.back());
    forward_window(step.keyframes);
  }

  void register_frame(int id, EngineStep& step) {
    std::vector<Vec3> world;
    std::vector<PixelCoord> pix;
    std::vector<int> ids;
    for (const auto& a : active) {
      const auto p = st.map.points.find(a.id);
      if (p == st.map.points.end()) continue;
      const auto& o = p->second.observations.back();
      if (o.frame_id != id) continue;
      world.push_back(p->second.position);
      pix.push_back(o.ideal);
      ids.push_back(a.id);
    }
    const int need = config.min_resection_inliers;
    if (static_cast<int>(world.size()) < need) {
      fail(ErrorKind::TrackingLost, "frame " + std::to_string(id) + ": " + std::to_string(world.size()) +
                                        " tie points visible, need " + std::to_string(need));
    }
    const auto res = resect(world, pix, camera, config.resection);
    if (!res || static_cast<int>(res->inliers.size()) < need) {
      fail(ErrorKind::TrackingLost, "frame " + std::to_string(id) + ": resection support " +
                                        std::to_string(res ? res->inliers.size() : 0) + " below " +
                                        std::to_string(need));
    }
    std::vector<bool> inlier(ids.size(), false);
    for (int i : res->inliers) inlier[i] = true;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (inlier[i]) continue;
      auto& p = st.map.points.at(ids[i]);
      p.observations.pop_back();
      if (p.observations.size() < 2) st.map.points.erase(ids[i]);
    }
    st.map.poses[id] = res->pose;
    statuses[id] = FrameStatus::Tracked;
    triangulate_pending(st, camera, config);
    slide(id);
    step.adjustment = windowed_bundle_adjust(window, st.map, camera, config.bundle_adjustment);
    prune_outliers(st.map, window_point_ids(), camera, config.outlier_cutoff);
    refresh_active(id);
    step.status = FrameStatus::Tracked;
    step.pose = st.map.poses.at(id);
    forward_window(step.keyframes);
  }

  std::vector<Keyframe> finish() {
    std::vector<Keyframe> out;
    if (state != EngineState::Tracking) return out;
    const std::size_t start = window.full() ? window.members.size() / 2 + 1 : 0;
    for (std::size_t i = start; i < window.members.size(); ++i) forward(window.members[i], out);
    return out;
  }
};

PoseEngine::PoseEngine(const CameraModel& camera, const PoseEngineConfig& config,
                       std::shared_ptr<const ReplayPoses> replay)
    : impl_(std::make_unique<Impl>(camera, config, std::move(replay))) {}
PoseEngine::~PoseEngine() = default;
PoseEngine::PoseEngine(PoseEngine&&) noexcept = default;
PoseEngine& PoseEngine::operator=(PoseEngine&&) noexcept = default;

EngineStep PoseEngine::process(const Frame& frame) { return impl_->process(frame); }
std::vector<Keyframe> PoseEngine::finish() { return impl_->finish(); }

void PoseEngine::restart() {
  impl_->reset_tracking();
  impl_->state = EngineState::AwaitingInitialization;
  ++impl_->session;
}

EngineState PoseEngine::state() const noexcept { return impl_->state; }
const SlidingWindow& PoseEngine::window() const noexcept { return impl_->window; }
const SparseMap& PoseEngine::map() const noexcept { return impl_->st.map; }
int PoseEngine::session() const noexcept { return impl_->session; }

std::optional<Pose> PoseEngine::pose(int frame_id) const {
  const auto it = impl_->st.map.poses.find(frame_id);
  if (it == impl_->st.map.poses.end()) return std::nullopt;
  return it->second;
}

FrameStatus PoseEngine::status(int frame_id) const {
  const auto it = impl_->statuses.find(frame_id);
  return it == impl_->statuses.end() ? FrameStatus::Pending : it->second;
}

InitializedBlock initialize_block(std::span<const Frame> frames, const CameraModel& camera,
                                  const PoseEngineConfig& config) {
  if (frames.size() < 3) fail(ErrorKind::InitializationFailed, "initialization needs at least 3 frames");
  PoseEngineConfig cfg = config;
  cfg.window_size = static_cast<int>(frames.size());
  PoseEngine engine(camera, cfg);
  for (const auto& f : frames) {
    const auto step = engine.process(f);
    if (step.failure) throw *step.failure;
  }
  InitializedBlock out;
  for (const auto& f : frames) out.poses.push_back(*engine.pose(f.id));
  for (const auto& [pid, p] : engine.map().points) out.tie_points.push_back(p);
  return out;
}

}  // namespace seqmosaic
