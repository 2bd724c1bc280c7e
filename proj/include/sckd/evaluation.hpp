#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "sckd/encoder.hpp"

namespace sckd {

/// Lower-triangular grid ACC(j, i), 1 <= i <= j <= J, 1-based. Each entry is
/// written exactly once.
class AccuracyMatrix {
 public:
  AccuracyMatrix() = default;
  explicit AccuracyMatrix(int tasks);

  int tasks() const { return tasks_; }
  void set(int j, int i, Scalar accuracy);
  Scalar at(int j, int i) const;
  bool has(int j, int i) const;
  bool row_complete(int j) const;

  friend bool operator==(const AccuracyMatrix&, const AccuracyMatrix&) = default;

 private:
  void check(int j, int i) const;
  int tasks_ = 0;
  std::vector<Scalar> values_;
  std::vector<char> filled_;
};

/// Argmax over every observed relation (ties to the lowest index), eval mode.
Scalar strict_accuracy(const Model& model, std::span<const Sample> test_set, int observed_relations);

/// Mean of row j.
Scalar average_accuracy(const AccuracyMatrix& m, int j);

/// Backward transfer over the final row; std::nullopt when J = 1.
std::optional<Scalar> bwt(const AccuracyMatrix& m);

void write_accuracy_csv(const AccuracyMatrix& m, const std::filesystem::path& path);
AccuracyMatrix read_accuracy_csv(const std::filesystem::path& path);

/// sample id, relation, then d hidden values per test sample.
void write_representations_csv(const Model& model, std::span<const Sample> samples,
                               const std::filesystem::path& path);

}  // namespace sckd
