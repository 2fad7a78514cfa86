#include "seqmosaic/features.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "seqmosaic/error.hpp"

namespace seqmosaic {
namespace {

struct Gradients {
  GrayImage gx;
  GrayImage gy;
};

Gradients sobel(const GrayImage& image) {
  const int w = image.width();
  const int h = image.height();
  Gradients g{GrayImage(w, h), GrayImage(w, h)};
  for (int y = 1; y < h - 1; ++y) {
    for (int x = 1; x < w - 1; ++x) {
      const float a = image.at(x - 1, y - 1);
      const float b = image.at(x, y - 1);
      const float c = image.at(x + 1, y - 1);
      const float d = image.at(x - 1, y);
      const float f = image.at(x + 1, y);
      const float p = image.at(x - 1, y + 1);
      const float q = image.at(x, y + 1);
      const float r = image.at(x + 1, y + 1);
      g.gx.at(x, y) = ((c + 2.0F * f + r) - (a + 2.0F * d + p)) * 0.125F;
      g.gy.at(x, y) = ((p + 2.0F * q + r) - (a + 2.0F * b + c)) * 0.125F;
    }
  }
  return g;
}

// Separable box sum with radius r; pixels closer than r to the border stay zero.
GrayImage box_sum(const GrayImage& in, int r) {
  const int w = in.width();
  const int h = in.height();
  GrayImage tmp(w, h);
  GrayImage out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = r; x < w - r; ++x) {
      float s = 0.0F;
      for (int k = -r; k <= r; ++k) s += in.at(x + k, y);
      tmp.at(x, y) = s;
    }
  }
  for (int y = r; y < h - r; ++y) {
    for (int x = r; x < w - r; ++x) {
      float s = 0.0F;
      for (int k = -r; k <= r; ++k) s += tmp.at(x, y + k);
      out.at(x, y) = s;
    }
  }
  return out;
}

// Zero-mean, unit-norm patch vector; empty when the patch is flat or leaves the image.
std::vector<float> normalized_patch(const GrayImage& image, double u, double v, int half) {
  const double lo = half;
  if (u < lo || v < lo || u > image.width() - 1 - lo || v > image.height() - 1 - lo) return {};
  const int n = 2 * half + 1;
  std::vector<float> patch(static_cast<std::size_t>(n) * n);
  const bool integral = u == std::floor(u) && v == std::floor(v);
  std::size_t i = 0;
  for (int dy = -half; dy <= half; ++dy) {
    for (int dx = -half; dx <= half; ++dx) {
      patch[i++] = integral ? image.at(static_cast<int>(u) + dx, static_cast<int>(v) + dy)
                            : image.sample(u + dx, v + dy);
    }
  }
  const double mean = std::accumulate(patch.begin(), patch.end(), 0.0) / static_cast<double>(patch.size());
  double norm = 0.0;
  for (float& p : patch) {
    p = static_cast<float>(p - mean);
    norm += static_cast<double>(p) * p;
  }
  norm = std::sqrt(norm);
  if (norm < 1e-3 * patch.size()) return {};
  for (float& p : patch) p = static_cast<float>(p / norm);
  return patch;
}

double dot(const std::vector<float>& a, const std::vector<float>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

// Translational Lucas-Kanade with bias compensation; returns false when the
// alignment diverges or leaves the image.
bool refine_translation(const GrayImage& a, const PixelCoord& pa, const GrayImage& b, const Gradients& grad_b,
                        int half, int iterations, PixelCoord& pb) {
  const int n = 2 * half + 1;
  std::vector<float> templ(static_cast<std::size_t>(n) * n);
  std::size_t i = 0;
  for (int dy = -half; dy <= half; ++dy) {
    for (int dx = -half; dx <= half; ++dx) templ[i++] = a.sample(pa.u + dx, pa.v + dy);
  }
  double u = pb.u;
  double v = pb.v;
  for (int it = 0; it < iterations; ++it) {
    if (u < half + 1 || v < half + 1 || u > b.width() - half - 2 || v > b.height() - half - 2) return false;
    double sum_b = 0.0;
    double sum_t = 0.0;
    std::vector<double> values(templ.size());
    i = 0;
    for (int dy = -half; dy <= half; ++dy) {
      for (int dx = -half; dx <= half; ++dx) {
        values[i] = b.sample(u + dx, v + dy);
        sum_b += values[i];
        sum_t += templ[i];
        ++i;
      }
    }
    const double bias = (sum_t - sum_b) / static_cast<double>(templ.size());
    double hxx = 0.0, hxy = 0.0, hyy = 0.0, ex = 0.0, ey = 0.0;
    i = 0;
    for (int dy = -half; dy <= half; ++dy) {
      for (int dx = -half; dx <= half; ++dx) {
        const double gx = grad_b.gx.sample(u + dx, v + dy);
        const double gy = grad_b.gy.sample(u + dx, v + dy);
        const double e = templ[i] - (values[i] + bias);
        hxx += gx * gx;
        hxy += gx * gy;
        hyy += gy * gy;
        ex += gx * e;
        ey += gy * e;
        ++i;
      }
    }
    const double det = hxx * hyy - hxy * hxy;
    if (!(det > 1e-9)) return false;
    const double du = (hyy * ex - hxy * ey) / det;
    const double dv = (hxx * ey - hxy * ex) / det;
    u += du;
    v += dv;
    if (std::hypot(du, dv) < 1e-6) break;
  }
  pb = {u, v};
  return std::isfinite(u) && std::isfinite(v);
}

// Affine Lucas-Kanade started from a translational solution. The patch
// center is what moves downstream, but letting the patch shear and rotate
// removes the bias a small in-plane rotation puts on it.
bool refine_affine(const GrayImage& a, const PixelCoord& pa, const GrayImage& b, const Gradients& grad_b, int half,
                   int iterations, PixelCoord& pb) {
  const int n = 2 * half + 1;
  std::vector<double> templ(static_cast<std::size_t>(n) * n);
  std::size_t i = 0;
  for (int dy = -half; dy <= half; ++dy) {
    for (int dx = -half; dx <= half; ++dx) templ[i++] = a.sample(pa.u + dx, pa.v + dy);
  }
  // p = (u, v, a11 - 1, a12, a21, a22 - 1)
  Eigen::Matrix<double, 6, 1> p;
  p << pb.u, pb.v, 0.0, 0.0, 0.0, 0.0;
  const double reach = half * 1.5 + 2.0;
  std::vector<double> values(templ.size());
  for (int it = 0; it < iterations; ++it) {
    if (p(0) < reach || p(1) < reach || p(0) > b.width() - 1 - reach || p(1) > b.height() - 1 - reach) return false;
    double sum_b = 0.0;
    double sum_t = 0.0;
    i = 0;
    for (int dy = -half; dy <= half; ++dy) {
      for (int dx = -half; dx <= half; ++dx) {
        values[i] = b.sample(p(0) + (1.0 + p(2)) * dx + p(3) * dy, p(1) + p(4) * dx + (1.0 + p(5)) * dy);
        sum_b += values[i];
        sum_t += templ[i];
        ++i;
      }
    }
    const double bias = (sum_t - sum_b) / static_cast<double>(templ.size());
    Eigen::Matrix<double, 6, 6> h = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
    i = 0;
    for (int dy = -half; dy <= half; ++dy) {
      for (int dx = -half; dx <= half; ++dx) {
        const double x = p(0) + (1.0 + p(2)) * dx + p(3) * dy;
        const double y = p(1) + p(4) * dx + (1.0 + p(5)) * dy;
        const double gx = grad_b.gx.sample(x, y);
        const double gy = grad_b.gy.sample(x, y);
        Eigen::Matrix<double, 6, 1> j;
        j << gx, gy, gx * dx, gx * dy, gy * dx, gy * dy;
        const double e = templ[i] - (values[i] + bias);
        h.selfadjointView<Eigen::Lower>().rankUpdate(j);
        g += j * e;
        ++i;
      }
    }
    h = h.selfadjointView<Eigen::Lower>();
    const Eigen::Matrix<double, 6, 1> step = h.ldlt().solve(g);
    if (!step.allFinite()) return false;
    p += step;
    if (p.tail<4>().cwiseAbs().maxCoeff() > 0.25) return false;
    if (std::hypot(step(0), step(1)) < 1e-6 && step.tail<4>().cwiseAbs().maxCoeff() < 1e-7) break;
  }
  pb = {p(0), p(1)};
  return std::isfinite(pb.u) && std::isfinite(pb.v);
}

}  // namespace

std::vector<Keypoint> detect_corners(const GrayImage& image, const FeatureConfig& config) {
  const int w = image.width();
  const int h = image.height();
  if (image.empty() || w < config.patch_size + 6 || h < config.patch_size + 6) return {};
  const Gradients g = sobel(image);
  GrayImage xx(w, h), xy(w, h), yy(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const float gx = g.gx.at(x, y);
      const float gy = g.gy.at(x, y);
      xx.at(x, y) = gx * gx;
      xy.at(x, y) = gx * gy;
      yy.at(x, y) = gy * gy;
    }
  }
  const GrayImage sxx = box_sum(xx, 2);
  const GrayImage sxy = box_sum(xy, 2);
  const GrayImage syy = box_sum(yy, 2);
  GrayImage response(w, h);
  float max_response = 0.0F;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const float a = sxx.at(x, y);
      const float b = sxy.at(x, y);
      const float c = syy.at(x, y);
      const float half_trace = 0.5F * (a + c);
      const float disc = std::sqrt(0.25F * (a - c) * (a - c) + b * b);
      const float r = half_trace - disc;
      response.at(x, y) = r;
      max_response = std::max(max_response, r);
    }
  }
  if (!(max_response > 0.0F)) return {};
  const float threshold = static_cast<float>(config.quality_level) * max_response;
  const int margin = config.patch_size / 2 + 2;
  std::vector<Keypoint> candidates;
  for (int y = margin; y < h - margin; ++y) {
    for (int x = margin; x < w - margin; ++x) {
      const float r = response.at(x, y);
      if (r <= threshold) continue;
      bool is_max = true;
      for (int dy = -1; dy <= 1 && is_max; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const float other = response.at(x + dx, y + dy);
          // Ties resolve toward the earlier raster position.
          if (other > r || (other == r && (dy < 0 || (dy == 0 && dx < 0)))) {
            is_max = false;
            break;
          }
        }
      }
      if (is_max) candidates.push_back({{static_cast<double>(x), static_cast<double>(y)}, r});
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Keypoint& l, const Keypoint& r) { return l.response > r.response; });

  const double cell = std::max(1.0, config.min_distance);
  const int gw = static_cast<int>(std::ceil(w / cell)) + 1;
  const int gh = static_cast<int>(std::ceil(h / cell)) + 1;
  std::vector<std::vector<int>> grid(static_cast<std::size_t>(gw) * gh);
  std::vector<Keypoint> out;
  const double min_d2 = config.min_distance * config.min_distance;
  for (const Keypoint& k : candidates) {
    if (static_cast<int>(out.size()) >= config.max_features) break;
    const int cx = static_cast<int>(k.pixel.u / cell);
    const int cy = static_cast<int>(k.pixel.v / cell);
    bool ok = true;
    for (int yy2 = std::max(0, cy - 1); yy2 <= std::min(gh - 1, cy + 1) && ok; ++yy2) {
      for (int xx2 = std::max(0, cx - 1); xx2 <= std::min(gw - 1, cx + 1) && ok; ++xx2) {
        for (int idx : grid[static_cast<std::size_t>(yy2) * gw + xx2]) {
          const double du = out[idx].pixel.u - k.pixel.u;
          const double dv = out[idx].pixel.v - k.pixel.v;
          if (du * du + dv * dv < min_d2) {
            ok = false;
            break;
          }
        }
      }
    }
    if (!ok) continue;
    grid[static_cast<std::size_t>(cy) * gw + cx].push_back(static_cast<int>(out.size()));
    out.push_back(k);
  }
  return out;
}

std::vector<FeatureMatch> match_features(const GrayImage& a, std::span<const PixelCoord> points_a,
                                         const GrayImage& b, std::span<const Keypoint> corners_b,
                                         const FeatureConfig& config, const Vec2& predicted_offset,
                                         double radius) {
  const int half = config.patch_size / 2;
  std::vector<std::vector<float>> patches_a(points_a.size());
  for (std::size_t i = 0; i < points_a.size(); ++i) {
    patches_a[i] = normalized_patch(a, points_a[i].u, points_a[i].v, half);
  }
  std::vector<std::vector<float>> patches_b(corners_b.size());
  for (std::size_t j = 0; j < corners_b.size(); ++j) {
    patches_b[j] = normalized_patch(b, corners_b[j].pixel.u, corners_b[j].pixel.v, half);
  }

  // Bucket b corners so each query only touches its neighbourhood.
  const double cell = std::max(8.0, radius);
  const int gw = static_cast<int>(std::ceil(b.width() / cell)) + 1;
  const int gh = static_cast<int>(std::ceil(b.height() / cell)) + 1;
  std::vector<std::vector<int>> grid(static_cast<std::size_t>(gw) * gh);
  for (std::size_t j = 0; j < corners_b.size(); ++j) {
    if (patches_b[j].empty()) continue;
    const int gx = std::clamp(static_cast<int>(corners_b[j].pixel.u / cell), 0, gw - 1);
    const int gy = std::clamp(static_cast<int>(corners_b[j].pixel.v / cell), 0, gh - 1);
    grid[static_cast<std::size_t>(gy) * gw + gx].push_back(static_cast<int>(j));
  }
  const double r2 = radius * radius;

  std::vector<int> best_b(points_a.size(), -1);
  std::vector<double> best_b_score(points_a.size(), -2.0);
  std::vector<int> best_a(corners_b.size(), -1);
  std::vector<double> best_a_score(corners_b.size(), -2.0);
  for (std::size_t i = 0; i < points_a.size(); ++i) {
    if (patches_a[i].empty()) continue;
    const double pu = points_a[i].u + predicted_offset.x();
    const double pv = points_a[i].v + predicted_offset.y();
    const int gx0 = std::max(0, static_cast<int>(std::floor((pu - radius) / cell)));
    const int gx1 = std::min(gw - 1, static_cast<int>(std::floor((pu + radius) / cell)));
    const int gy0 = std::max(0, static_cast<int>(std::floor((pv - radius) / cell)));
    const int gy1 = std::min(gh - 1, static_cast<int>(std::floor((pv + radius) / cell)));
    for (int gy = gy0; gy <= gy1; ++gy) {
      for (int gx = gx0; gx <= gx1; ++gx) {
        for (int j : grid[static_cast<std::size_t>(gy) * gw + gx]) {
          const double du = corners_b[j].pixel.u - pu;
          const double dv = corners_b[j].pixel.v - pv;
          if (du * du + dv * dv > r2) continue;
          const double s = dot(patches_a[i], patches_b[j]);
          if (s > best_b_score[i] || (s == best_b_score[i] && j < best_b[i])) {
            best_b_score[i] = s;
            best_b[i] = j;
          }
          if (s > best_a_score[j] || (s == best_a_score[j] && static_cast<int>(i) < best_a[j])) {
            best_a_score[j] = s;
            best_a[j] = static_cast<int>(i);
          }
        }
      }
    }
  }

  const Gradients grad_b = sobel(b);
  std::vector<FeatureMatch> matches;
  for (std::size_t i = 0; i < points_a.size(); ++i) {
    const int j = best_b[i];
    if (j < 0 || best_a[j] != static_cast<int>(i)) continue;
    if (best_b_score[i] < config.min_ncc) continue;
    PixelCoord refined = corners_b[j].pixel;
    if (!refine_translation(a, points_a[i], b, grad_b, half, config.refine_iterations, refined)) continue;
    if (!refine_affine(a, points_a[i], b, grad_b, half, config.refine_iterations, refined)) continue;
    if (std::hypot(refined.u - corners_b[j].pixel.u, refined.v - corners_b[j].pixel.v) > config.max_refine_shift) {
      continue;
    }
    matches.push_back({points_a[i], refined, std::clamp(best_b_score[i], 0.0, 1.0), static_cast<int>(i), j});
  }
  std::stable_sort(matches.begin(), matches.end(),
                   [](const FeatureMatch& l, const FeatureMatch& r) { return l.score > r.score; });
  return matches;
}

std::vector<FeatureMatch> detect_and_match(const Image& a, const Image& b, const FeatureConfig& config) {
  if (a.empty() || b.empty()) fail(ErrorKind::InvalidArgument, "images must be non-empty");
  const GrayImage ga = to_gray(a);
  const GrayImage gb = to_gray(b);
  const auto corners_a = detect_corners(ga, config);
  const auto corners_b = detect_corners(gb, config);
  std::vector<PixelCoord> points_a;
  points_a.reserve(corners_a.size());
  for (const auto& k : corners_a) points_a.push_back(k.pixel);
  const double radius = config.search_radius * std::max(b.width(), b.height());
  auto matches = match_features(ga, points_a, gb, corners_b, config, Vec2::Zero(), radius);
  if (static_cast<int>(matches.size()) < config.min_matches) {
    fail(ErrorKind::TooFewMatches, "only " + std::to_string(matches.size()) + " matches (need " +
                                       std::to_string(config.min_matches) + ")");
  }
  return matches;
}

}  // namespace seqmosaic
