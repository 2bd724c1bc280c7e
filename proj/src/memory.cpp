#include "sckd/memory.hpp"

#include <algorithm>
#include <fstream>
#include <limits>

namespace sckd {

namespace {

std::vector<int> seed_centers(const Matrix& points, int k, Rng& rng) {
  const Index n = points.rows();
  std::vector<int> centers;
  centers.push_back(static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(n))));
  Vector d2(n);
  for (Index i = 0; i < n; ++i) d2(i) = (points.row(i) - points.row(centers[0])).squaredNorm();
  while (static_cast<int>(centers.size()) < k) {
    Scalar total = 0.0;
    for (Index i = 0; i < n; ++i) total += d2(i);
    int next = -1;
    if (total > 0.0) {
      const Scalar target = uniform01(rng) * total;
      Scalar cumulative = 0.0;
      for (Index i = 0; i < n; ++i) {
        if (d2(i) <= 0.0) continue;
        cumulative += d2(i);
        next = static_cast<int>(i);
        if (cumulative > target) break;
      }
    } else {
      for (Index i = 0; i < n && next < 0; ++i)
        if (std::find(centers.begin(), centers.end(), static_cast<int>(i)) == centers.end()) next = static_cast<int>(i);
    }
    centers.push_back(next);
    for (Index i = 0; i < n; ++i) d2(i) = std::min(d2(i), (points.row(i) - points.row(next)).squaredNorm());
  }
  return centers;
}

Matrix centroids_of(const Matrix& points, const std::vector<int>& assignment, int k) {
  Matrix c = Matrix::Zero(k, points.cols());
  std::vector<int> count(k, 0);
  for (Index i = 0; i < points.rows(); ++i) {
    c.row(assignment[i]) += points.row(i);
    ++count[assignment[i]];
  }
  for (int j = 0; j < k; ++j)
    if (count[j] > 0) c.row(j) /= static_cast<Scalar>(count[j]);
  return c;
}

}  // namespace

KMeansResult kmeans(const Matrix& points, int k, Rng& rng, int max_iterations) {
  const Index n = points.rows();
  SCKD_REQUIRE(n > 0, "kmeans: no points");
  SCKD_REQUIRE(k >= 1 && k <= n, "kmeans: k must lie in [1, n]");
  KMeansResult r;
  const std::vector<int> seeds = seed_centers(points, k, rng);
  r.centroids.resize(k, points.cols());
  for (int j = 0; j < k; ++j) r.centroids.row(j) = points.row(seeds[j]);

  std::vector<int> previous;
  for (r.iterations = 1; r.iterations <= max_iterations; ++r.iterations) {
    r.assignment.assign(n, 0);
    std::vector<int> count(k, 0);
    for (Index i = 0; i < n; ++i) {
      Scalar best = std::numeric_limits<Scalar>::infinity();
      for (int j = 0; j < k; ++j) {
        const Scalar d = (points.row(i) - r.centroids.row(j)).squaredNorm();
        if (d < best) {
          best = d;
          r.assignment[i] = j;
        }
      }
      ++count[r.assignment[i]];
    }
    for (int empty = 0; empty < k; ++empty) {
      if (count[empty] > 0) continue;
      const int largest = static_cast<int>(std::max_element(count.begin(), count.end()) - count.begin());
      Index far_point = -1;
      Scalar far = -1.0;
      for (Index i = 0; i < n; ++i) {
        if (r.assignment[i] != largest) continue;
        const Scalar d = (points.row(i) - r.centroids.row(largest)).squaredNorm();
        if (d > far) {
          far = d;
          far_point = i;
        }
      }
      r.assignment[far_point] = empty;
      --count[largest];
      ++count[empty];
    }
    r.centroids = centroids_of(points, r.assignment, k);
    if (r.assignment == previous) break;
    previous = r.assignment;
  }
  r.iterations = std::min(r.iterations, max_iterations);
  return r;
}

std::vector<SampleId> select_typical(std::span<const Sample> samples, const Matrix& hiddens, int L,
                                     std::uint64_t seed) {
  SCKD_REQUIRE(!samples.empty(), "select_typical: empty sample list");
  SCKD_REQUIRE(L >= 1, "select_typical: L must be >= 1");
  SCKD_REQUIRE(hiddens.rows() == static_cast<Index>(samples.size()), "select_typical: one hidden row per sample");
  std::vector<SampleId> chosen;
  if (static_cast<std::size_t>(L) >= samples.size()) {
    for (const Sample& s : samples) chosen.push_back(s.id);
  } else {
    Rng rng(seed);
    const KMeansResult km = kmeans(hiddens, L, rng);
    for (int c = 0; c < L; ++c) {
      Index best = -1;
      Scalar best_d = std::numeric_limits<Scalar>::infinity();
      for (Index i = 0; i < hiddens.rows(); ++i) {
        if (km.assignment[i] != c) continue;
        const Scalar d = (hiddens.row(i) - km.centroids.row(c)).squaredNorm();
        if (d < best_d || (d == best_d && samples[i].id < samples[best].id)) {
          best_d = d;
          best = i;
        }
      }
      chosen.push_back(samples[best].id);
    }
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

RowVector compute_prototype(const Matrix& exemplar_hiddens) {
  SCKD_REQUIRE(exemplar_hiddens.rows() > 0, "compute_prototype: no exemplars");
  return exemplar_hiddens.colwise().sum() / static_cast<Scalar>(exemplar_hiddens.rows());
}

RowVector compute_deviation(const Matrix& hiddens) {
  SCKD_REQUIRE(hiddens.rows() > 0, "compute_deviation: no samples");
  const RowVector mean = compute_prototype(hiddens);
  const RowVector var = (hiddens.rowwise() - mean).array().square().colwise().sum() / static_cast<Scalar>(hiddens.rows());
  return var.array().sqrt().max(kDeviationFloor).matrix();
}

std::vector<SampleId> RelationStats::exemplar_ids() const {
  std::vector<SampleId> ids;
  for (const Sample& s : exemplars) ids.push_back(s.id);
  return ids;
}

std::vector<PseudoSample> generate_pseudo(const RelationStats& stats, int n, Rng& rng) {
  SCKD_REQUIRE(n > 0, "generate_pseudo: n must be positive");
  SCKD_REQUIRE(stats.prototype.size() > 0 && stats.prototype.size() == stats.deviation.size(),
               "generate_pseudo: prototype and deviation required");
  std::vector<PseudoSample> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    RowVector eta(stats.prototype.size());
    for (Index j = 0; j < eta.size(); ++j) eta(j) = standard_normal(rng);
    out.push_back({stats.relation, stats.prototype + eta.cwiseProduct(stats.deviation)});
  }
  return out;
}

void MemoryStore::insert(RelationStats stats) {
  SCKD_REQUIRE(!stats_.contains(stats.relation), "memory already holds this relation");
  stats_.emplace(stats.relation, std::move(stats));
}

std::size_t MemoryStore::exemplar_count() const {
  std::size_t n = 0;
  for (const auto& [r, s] : stats_) n += s.exemplars.size();
  return n;
}

std::vector<Sample> MemoryStore::exemplars() const {
  std::vector<Sample> out;
  for (const auto& [r, s] : stats_) out.insert(out.end(), s.exemplars.begin(), s.exemplars.end());
  return out;
}

void MemoryStore::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out.precision(17);
  out << "relation,exemplar_ids,prototype,deviation\n";
  auto join = [&](const RowVector& v) {
    for (Index i = 0; i < v.size(); ++i) out << (i ? " " : "") << v(i);
  };
  for (const auto& [r, s] : stats_) {
    out << r << ',';
    for (std::size_t i = 0; i < s.exemplars.size(); ++i) out << (i ? " " : "") << s.exemplars[i].id;
    out << ',';
    join(s.prototype);
    out << ',';
    join(s.deviation);
    out << '\n';
  }
}

}  // namespace sckd
