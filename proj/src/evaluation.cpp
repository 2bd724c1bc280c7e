#include "sckd/evaluation.hpp"

#include <fstream>
#include <sstream>

namespace sckd {

AccuracyMatrix::AccuracyMatrix(int tasks)
    : tasks_(tasks), values_(static_cast<std::size_t>(tasks) * tasks, 0.0),
      filled_(static_cast<std::size_t>(tasks) * tasks, 0) {
  SCKD_REQUIRE(tasks >= 1, "accuracy matrix needs at least one task");
}

void AccuracyMatrix::check(int j, int i) const {
  SCKD_REQUIRE(j >= 1 && j <= tasks_ && i >= 1 && i <= j, "accuracy matrix index outside lower triangle");
}

void AccuracyMatrix::set(int j, int i, Scalar accuracy) {
  check(j, i);
  SCKD_REQUIRE(accuracy >= 0.0 && accuracy <= 1.0, "accuracy must lie in [0,1]");
  const std::size_t k = static_cast<std::size_t>(j - 1) * tasks_ + (i - 1);
  SCKD_REQUIRE(!filled_[k], "accuracy entry already populated");
  values_[k] = accuracy;
  filled_[k] = 1;
}

bool AccuracyMatrix::has(int j, int i) const {
  check(j, i);
  return filled_[static_cast<std::size_t>(j - 1) * tasks_ + (i - 1)] != 0;
}

Scalar AccuracyMatrix::at(int j, int i) const {
  SCKD_REQUIRE(has(j, i), "accuracy entry not populated");
  return values_[static_cast<std::size_t>(j - 1) * tasks_ + (i - 1)];
}

bool AccuracyMatrix::row_complete(int j) const {
  for (int i = 1; i <= j; ++i)
    if (!has(j, i)) return false;
  return true;
}

Scalar strict_accuracy(const Model& model, std::span<const Sample> test_set, int observed_relations) {
  SCKD_REQUIRE(!test_set.empty(), "strict_accuracy: empty test set");
  SCKD_REQUIRE(model.relation_count() == observed_relations, "classifier width must equal the observed relation count");
  long correct = 0;
  for (const Sample& s : test_set) {
    SCKD_REQUIRE(s.relation >= 0 && s.relation < observed_relations, "test label outside observed relations");
    const RowVector logits = forward_eval(model, s).logits;
    Index best = 0;
    for (Index r = 1; r < logits.size(); ++r)
      if (logits(r) > logits(best)) best = r;
    if (best == s.relation) ++correct;
  }
  return static_cast<Scalar>(correct) / static_cast<Scalar>(test_set.size());
}

Scalar average_accuracy(const AccuracyMatrix& m, int j) {
  SCKD_REQUIRE(j >= 1 && j <= m.tasks() && m.row_complete(j), "average_accuracy: row not populated");
  Scalar total = 0.0;
  for (int i = 1; i <= j; ++i) total += m.at(j, i);
  return total / j;
}

std::optional<Scalar> bwt(const AccuracyMatrix& m) {
  const int J = m.tasks();
  if (J < 2) return std::nullopt;
  Scalar total = 0.0;
  for (int i = 1; i < J; ++i) total += m.at(J, i) - m.at(i, i);
  return total / (J - 1);
}

void write_accuracy_csv(const AccuracyMatrix& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out.precision(17);
  out << "after_task";
  for (int i = 1; i <= m.tasks(); ++i) out << ",T" << i;
  out << '\n';
  for (int j = 1; j <= m.tasks(); ++j) {
    out << j;
    for (int i = 1; i <= m.tasks(); ++i) {
      out << ',';
      if (i <= j && m.has(j, i)) out << m.at(j, i);
    }
    out << '\n';
  }
}

AccuracyMatrix read_accuracy_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  if (rows.empty()) throw ParseError(path.string() + ": no rows");
  AccuracyMatrix m(static_cast<int>(rows.size()));
  for (int j = 1; j <= m.tasks(); ++j)
    for (int i = 1; i <= j; ++i)
      if (i < static_cast<int>(rows[j - 1].size()) && !rows[j - 1][i].empty())
        m.set(j, i, std::stod(rows[j - 1][i]));
  return m;
}

void write_representations_csv(const Model& model, std::span<const Sample> samples,
                               const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out.precision(17);
  out << "sample_id,relation";
  for (int k = 0; k < model.dims().hidden_dim; ++k) out << ",h" << k;
  out << '\n';
  for (const Sample& s : samples) {
    const RowVector h = forward_eval(model, s).hidden;
    out << s.id << ',' << s.relation;
    for (Index k = 0; k < h.size(); ++k) out << ',' << h(k);
    out << '\n';
  }
}

}  // namespace sckd
