#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include "sckd/data.hpp"

namespace sckd {

/// Floor applied to every per-dimension deviation.
inline constexpr Scalar kDeviationFloor = 1e-4;

struct KMeansResult {
  std::vector<int> assignment;  // cluster per point
  Matrix centroids;             // k x dim
  int iterations = 0;
};

/// Lloyd's k-means with k-means++ seeding. Rows of `points` are the data.
/// Nearest-centroid ties go to the lowest cluster index; an empty cluster
/// takes the point farthest from its centroid in the largest cluster.
KMeansResult kmeans(const Matrix& points, int k, Rng& rng, int max_iterations = 100);

/// Picks min(L, n) typical samples: k-means over `hiddens` (one row per
/// sample), then in each cluster the member closest to the centroid (lowest
/// sample id on ties). Returned ids are sorted ascending.
std::vector<SampleId> select_typical(std::span<const Sample> samples, const Matrix& hiddens, int L,
                                     std::uint64_t seed);

/// Arithmetic mean of the rows.
RowVector compute_prototype(const Matrix& exemplar_hiddens);

/// Per-dimension population standard deviation, floored at kDeviationFloor.
RowVector compute_deviation(const Matrix& hiddens);

struct RelationStats {
  RelationId relation = 0;
  std::vector<Sample> exemplars;
  RowVector prototype;
  RowVector deviation;
  int first_task = 0;

  std::vector<SampleId> exemplar_ids() const;
};

struct PseudoSample {
  RelationId relation = 0;
  RowVector vector;
};

/// n draws of prototype + eta (elementwise) deviation, eta ~ N(0, I).
std::vector<PseudoSample> generate_pseudo(const RelationStats& stats, int n, Rng& rng);

/// Accumulated exemplar memory across tasks, keyed by relation.
class MemoryStore {
 public:
  bool contains(RelationId r) const { return stats_.contains(r); }
  RelationStats& at(RelationId r) { return stats_.at(r); }
  const RelationStats& at(RelationId r) const { return stats_.at(r); }
  void insert(RelationStats stats);

  std::size_t relation_count() const { return stats_.size(); }
  std::size_t exemplar_count() const;
  /// Every stored exemplar, relation-major.
  std::vector<Sample> exemplars() const;
  const std::map<RelationId, RelationStats>& relations() const { return stats_; }
  std::map<RelationId, RelationStats>& relations() { return stats_; }

  /// Diagnostic dump: relation,exemplar_ids,prototype,deviation (space-separated lists).
  void write_csv(const std::filesystem::path& path) const;

 private:
  std::map<RelationId, RelationStats> stats_;
};

}  // namespace sckd
