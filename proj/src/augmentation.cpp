#include "sckd/augmentation.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

namespace sckd {

std::vector<EntityOccurrence> collect_entities(const Model& model, std::span<const Sample> samples) {
  const Index h = model.dims().model_dim;
  std::vector<EntityOccurrence> out;
  out.reserve(2 * samples.size());
  for (const Sample& s : samples) {
    const RowVector f = encode_features(model, s);
    for (EntitySide side : {EntitySide::kHead, EntitySide::kTail}) {
      const Span& sp = side == EntitySide::kHead ? s.head_span : s.tail_span;
      EntityOccurrence occ;
      occ.sample = s.id;
      occ.side = side;
      occ.surface.assign(s.tokens.begin() + sp.begin, s.tokens.begin() + sp.end);
      occ.representation = f.segment(side == EntitySide::kHead ? 0 : h, h);
      out.push_back(std::move(occ));
    }
  }
  return out;
}

Sample replace_entity(const Sample& host, EntitySide side, std::span<const int> surface, SampleId new_id) {
  SCKD_REQUIRE(!surface.empty(), "replace_entity: empty surface");
  RawSentence raw = strip_markers(host);
  Span& target = side == EntitySide::kHead ? raw.head : raw.tail;
  Span& other = side == EntitySide::kHead ? raw.tail : raw.head;
  const int delta = static_cast<int>(surface.size()) - target.size();
  std::vector<int> tokens(raw.tokens.begin(), raw.tokens.begin() + target.begin);
  tokens.insert(tokens.end(), surface.begin(), surface.end());
  tokens.insert(tokens.end(), raw.tokens.begin() + target.end, raw.tokens.end());
  if (other.begin >= target.end) {
    other.begin += delta;
    other.end += delta;
  }
  target.end = target.begin + static_cast<int>(surface.size());
  raw.tokens = std::move(tokens);
  return insert_markers(new_id, raw, host.relation);
}

namespace {

Scalar cosine(const RowVector& a, const RowVector& b) {
  return a.dot(b) / (std::max(a.norm(), 1e-12) * std::max(b.norm(), 1e-12));
}

struct Candidate {
  Scalar cosine;
  std::size_t partner;  // occurrence index providing the new surface
  EntitySide side;      // entity replaced in the host
};

}  // namespace

AugmentationResult augment(std::span<const Sample> dataset, std::span<const Sample> memory, const Model& model,
                           const AugmentConfig& config, SampleId& next_id) {
  if (!(config.tau > 0.0 && config.tau <= 1.0)) throw ConfigError("augmentation threshold tau must lie in (0,1]");
  if (config.cap_per_sample < 0) throw ConfigError("augmentation cap must be >= 0");

  std::map<SampleId, const Sample*> pool;
  for (const Sample& s : dataset) pool.emplace(s.id, &s);
  for (const Sample& s : memory) pool.emplace(s.id, &s);
  std::vector<Sample> ordered;
  ordered.reserve(pool.size());
  for (const auto& [id, s] : pool) ordered.push_back(*s);
  const std::vector<EntityOccurrence> occ = collect_entities(model, ordered);

  std::map<SampleId, std::vector<Candidate>> candidates;
  AugmentationResult result;
  for (std::size_t i = 0; i < occ.size(); ++i) {
    for (std::size_t j = i + 1; j < occ.size(); ++j) {
      if (occ[i].sample == occ[j].sample || occ[i].surface == occ[j].surface) continue;
      const Scalar c = cosine(occ[i].representation, occ[j].representation);
      if (!(c > config.tau)) continue;
      result.pairs.push_back({occ[i].sample, occ[i].side, occ[j].sample, occ[j].side, c});
      candidates[occ[i].sample].push_back({c, j, occ[i].side});
      candidates[occ[j].sample].push_back({c, i, occ[j].side});
    }
  }

  std::map<SampleId, std::vector<Sample>> variants;
  for (auto& [host_id, list] : candidates) {
    std::stable_sort(list.begin(), list.end(), [](const Candidate& a, const Candidate& b) {
      if (a.cosine != b.cosine) return a.cosine > b.cosine;
      if (a.partner != b.partner) return a.partner < b.partner;
      return a.side < b.side;
    });
    const Sample& host = *pool.at(host_id);
    std::set<std::vector<int>> seen;
    for (const Candidate& c : list) {
      if (static_cast<int>(variants[host_id].size()) >= config.cap_per_sample) break;
      Sample v = replace_entity(host, c.side, occ[c.partner].surface, 0);
      if (!seen.insert(v.tokens).second) continue;
      variants[host_id].push_back(std::move(v));
    }
  }
  for (auto& [host_id, vs] : variants)
    for (Sample& v : vs) v.id = next_id++;

  auto assemble = [&](std::span<const Sample> base) {
    std::vector<Sample> out(base.begin(), base.end());
    std::set<SampleId> hosts;
    for (const Sample& s : base) hosts.insert(s.id);
    for (SampleId id : hosts) {
      auto it = variants.find(id);
      if (it != variants.end()) out.insert(out.end(), it->second.begin(), it->second.end());
    }
    return out;
  };
  result.dataset = assemble(dataset);
  result.memory = assemble(memory);
  return result;
}

void write_pairs_csv(const std::vector<AcceptedPair>& pairs, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out.precision(17);
  out << "sample_a,entity_a,sample_b,entity_b,cosine\n";
  auto name = [](EntitySide s) { return s == EntitySide::kHead ? "head" : "tail"; };
  for (const auto& p : pairs)
    out << p.sample_a << ',' << name(p.side_a) << ',' << p.sample_b << ',' << name(p.side_b) << ',' << p.cosine
        << '\n';
}

}  // namespace sckd
