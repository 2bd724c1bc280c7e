#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "sckd/core.hpp"

namespace sckd {

inline constexpr int kHeadMarkerToken = 0;  // [E1]
inline constexpr int kTailMarkerToken = 1;  // [E2]

/// Half-open token range [begin, end).
struct Span {
  int begin = 0;
  int end = 0;
  int size() const { return end - begin; }
  bool overlaps(const Span& o) const { return begin < o.end && o.begin < end; }
  friend bool operator==(const Span&, const Span&) = default;
};

/// A marked sentence: tokens already contain [E1]/[E2] immediately before each entity span.
struct Sample {
  SampleId id = 0;
  std::vector<int> tokens;
  int head_marker_pos = 0;
  int tail_marker_pos = 0;
  Span head_span;
  Span tail_span;
  RelationId relation = 0;

  friend bool operator==(const Sample&, const Sample&) = default;
};

/// Throws ValidationError describing the first violated sample invariant.
void validate_sample(const Sample& s);

struct Task {
  int index = 1;  // 1-based
  std::vector<RelationId> relations;
  std::vector<Sample> train;
  std::vector<Sample> test;

  friend bool operator==(const Task&, const Task&) = default;
};

struct TaskSequence {
  std::vector<Task> tasks;
  std::vector<std::string> relation_names;  // indexed by RelationId
  std::vector<std::string> vocabulary;      // indexed by token id
  int n_ways = 0;
  int k_shots = 0;

  int vocab_size() const { return static_cast<int>(vocabulary.size()); }
  int relation_count() const { return static_cast<int>(relation_names.size()); }

  friend bool operator==(const TaskSequence&, const TaskSequence&) = default;
};

/// Checks cross-task invariants: disjoint relation sets, membership, few-shot counts.
void validate_sequence(const TaskSequence& seq);

/// Reads a vocabulary file, one token per line; line number is the id.
std::vector<std::string> load_vocabulary(const std::filesystem::path& path);

/// Loads a JSONL dataset. Spans in the file index the raw tokens; markers are
/// inserted at span starts during ingestion.
TaskSequence load_jsonl(const std::filesystem::path& path,
                        const std::filesystem::path& vocab_path);

/// Writes `seq` as JSONL + vocabulary; load_jsonl on the result reproduces `seq`.
void write_jsonl(const TaskSequence& seq, const std::filesystem::path& path,
                 const std::filesystem::path& vocab_path);

struct SyntheticConfig {
  std::uint64_t seed = 7;
  int n_tasks = 8;
  int n_ways = 10;
  int k_shots = 5;
  int first_task_samples = 100;  // per relation
  int test_per_relation = 20;
  int vocab_size = 400;
  double cluster_spread = 0.3;
  int cue_pool = 0;  // 0: private signature tokens per relation; otherwise relations draw from a shared pool
};

/// Generates a continual few-shot sequence. Relation r owns three signature
/// tokens; its entities are drawn from them and one more appears between the
/// entities. With probability cluster_spread each signature slot is replaced
/// by another relation's signature token.
TaskSequence generate_synthetic_sequence(const SyntheticConfig& config);

/// Removes marker tokens and returns raw tokens plus raw spans.
struct RawSentence {
  std::vector<int> tokens;
  Span head;
  Span tail;
};
RawSentence strip_markers(const Sample& s);
Sample insert_markers(SampleId id, const RawSentence& raw, RelationId relation);

}  // namespace sckd
