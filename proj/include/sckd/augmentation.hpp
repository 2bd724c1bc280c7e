#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "sckd/encoder.hpp"

namespace sckd {

enum class EntitySide { kHead = 0, kTail = 1 };

struct EntityOccurrence {
  SampleId sample = 0;
  EntitySide side = EntitySide::kHead;
  std::vector<int> surface;
  RowVector representation;  // marker-token contextual vector, width h
};

/// Two occurrences per sample (head, then tail), eval-mode representations.
std::vector<EntityOccurrence> collect_entities(const Model& model, std::span<const Sample> samples);

/// Copy of `host` with the entity on `side` replaced by `surface`; marker kept,
/// positions of everything after the span shifted by the length change.
Sample replace_entity(const Sample& host, EntitySide side, std::span<const int> surface, SampleId new_id);

struct AcceptedPair {
  SampleId sample_a = 0;
  EntitySide side_a = EntitySide::kHead;
  SampleId sample_b = 0;
  EntitySide side_b = EntitySide::kHead;
  Scalar cosine = 0.0;
};

struct AugmentationResult {
  std::vector<Sample> dataset;  // originals first, then variants
  std::vector<Sample> memory;
  std::vector<AcceptedPair> pairs;
};

struct AugmentConfig {
  Scalar tau = 0.95;
  int cap_per_sample = 2;
};

/// Mutual entity replacement between entities whose representations have
/// cosine similarity strictly above tau. The occurrence pool is the union of
/// `dataset` and `memory` (deduplicated by sample id); pairs within one sample
/// or with identical surface forms are skipped. Each original keeps at most
/// `cap_per_sample` variants, highest similarity first. New samples get ids
/// next_id, next_id+1, ... and `next_id` is advanced.
AugmentationResult augment(std::span<const Sample> dataset, std::span<const Sample> memory, const Model& model,
                           const AugmentConfig& config, SampleId& next_id);

void write_pairs_csv(const std::vector<AcceptedPair>& pairs, const std::filesystem::path& path);

}  // namespace sckd
