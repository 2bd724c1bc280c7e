#pragma once

// Plain-loop reference implementations shared by the unit tests and the
// acceptance runner. They use the same seeding draws as the library but no
// Eigen expressions.

#include <algorithm>
#include <limits>
#include <vector>

#include "sckd/core.hpp"

namespace sckd::oracle {

using Point = std::vector<double>;

inline double sq_dist(const Point& a, const Point& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

struct Lloyd {
  std::vector<int> assignment;
  std::vector<Point> centroids;
};

/// k-means++ seeding (first centre uniform, then D^2 sampling) followed by
/// Lloyd iterations until the assignment repeats.
inline Lloyd lloyd(const std::vector<Point>& pts, int k, Rng& rng, int max_iterations = 100) {
  const int n = static_cast<int>(pts.size());
  std::vector<int> seeds = {static_cast<int>(uniform_index(rng, n))};
  while (static_cast<int>(seeds.size()) < k) {
    std::vector<double> d2(n);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int s : seeds) best = std::min(best, sq_dist(pts[i], pts[s]));
      d2[i] = best;
      total += best;
    }
    int next = -1;
    if (total > 0.0) {
      const double target = uniform01(rng) * total;
      double run = 0.0;
      for (int i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        run += d2[i];
        next = i;
        if (run > target) break;
      }
    } else {
      for (int i = 0; i < n && next < 0; ++i)
        if (std::find(seeds.begin(), seeds.end(), i) == seeds.end()) next = i;
    }
    seeds.push_back(next);
  }
  Lloyd out;
  for (int s : seeds) out.centroids.push_back(pts[s]);
  std::vector<int> previous;
  for (int it = 0; it < max_iterations; ++it) {
    out.assignment.assign(n, 0);
    std::vector<int> count(k, 0);
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int j = 0; j < k; ++j) {
        const double d = sq_dist(pts[i], out.centroids[j]);
        if (d < best) {
          best = d;
          out.assignment[i] = j;
        }
      }
      ++count[out.assignment[i]];
    }
    for (int e = 0; e < k; ++e) {
      if (count[e] > 0) continue;
      int largest = 0;
      for (int j = 1; j < k; ++j)
        if (count[j] > count[largest]) largest = j;
      int far_point = -1;
      double far = -1.0;
      for (int i = 0; i < n; ++i)
        if (out.assignment[i] == largest && sq_dist(pts[i], out.centroids[largest]) > far) {
          far = sq_dist(pts[i], out.centroids[largest]);
          far_point = i;
        }
      out.assignment[far_point] = e;
      --count[largest];
      ++count[e];
    }
    for (int j = 0; j < k; ++j) {
      Point c(pts[0].size(), 0.0);
      for (int i = 0; i < n; ++i)
        if (out.assignment[i] == j)
          for (std::size_t t = 0; t < c.size(); ++t) c[t] += pts[i][t];
      for (double& v : c) v /= count[j];
      out.centroids[j] = c;
    }
    if (out.assignment == previous) break;
    previous = out.assignment;
  }
  return out;
}

/// Member closest to each centroid (lowest id on ties), ids sorted.
inline std::vector<SampleId> typical(const std::vector<Point>& pts, const std::vector<SampleId>& ids, int L,
                                     std::uint64_t seed) {
  std::vector<SampleId> chosen;
  if (L >= static_cast<int>(pts.size())) {
    chosen = ids;
  } else {
    Rng rng(seed);
    const Lloyd km = lloyd(pts, L, rng);
    for (int c = 0; c < L; ++c) {
      int best = -1;
      for (int i = 0; i < static_cast<int>(pts.size()); ++i) {
        if (km.assignment[i] != c) continue;
        const double d = sq_dist(pts[i], km.centroids[c]);
        const double bd = best < 0 ? 0.0 : sq_dist(pts[best], km.centroids[c]);
        if (best < 0 || d < bd || (d == bd && ids[i] < ids[best])) best = i;
      }
      chosen.push_back(ids[best]);
    }
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

}  // namespace sckd::oracle
