#include "sckd/data.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

namespace sckd {

namespace {

std::string sample_tag(const Sample& s) { return "sample " + std::to_string(s.id); }

}  // namespace

void validate_sample(const Sample& s) {
  const int n = static_cast<int>(s.tokens.size());
  auto fail = [&](const std::string& what) { throw ValidationError(sample_tag(s) + ": " + what); };
  if (s.head_marker_pos < 0 || s.head_marker_pos >= n || s.tail_marker_pos < 0 ||
      s.tail_marker_pos >= n)
    fail("marker position out of bounds");
  if (s.head_marker_pos == s.tail_marker_pos) fail("head and tail markers coincide");
  if (s.tokens[s.head_marker_pos] != kHeadMarkerToken) fail("missing [E1] at head marker position");
  if (s.tokens[s.tail_marker_pos] != kTailMarkerToken) fail("missing [E2] at tail marker position");
  for (const Span* sp : {&s.head_span, &s.tail_span}) {
    if (sp->size() <= 0) fail("empty entity span");
    if (sp->begin < 0 || sp->end > n) fail("entity span out of bounds");
  }
  if (s.head_span.overlaps(s.tail_span)) fail("entity spans overlap");
  if (s.head_span.begin != s.head_marker_pos + 1 || s.tail_span.begin != s.tail_marker_pos + 1)
    fail("entity span does not start right after its marker");
  for (int i = 0; i < n; ++i) {
    const int t = s.tokens[i];
    if (t < 0) fail("negative token id");
    if ((t == kHeadMarkerToken || t == kTailMarkerToken) && i != s.head_marker_pos &&
        i != s.tail_marker_pos)
      fail("stray marker token at position " + std::to_string(i));
  }
}

RawSentence strip_markers(const Sample& s) {
  RawSentence raw;
  raw.tokens.reserve(s.tokens.size() - 2);
  auto raw_index = [&](int pos) {
    return pos - (pos > s.head_marker_pos ? 1 : 0) - (pos > s.tail_marker_pos ? 1 : 0);
  };
  for (int i = 0; i < static_cast<int>(s.tokens.size()); ++i)
    if (i != s.head_marker_pos && i != s.tail_marker_pos) raw.tokens.push_back(s.tokens[i]);
  raw.head = {raw_index(s.head_span.begin), raw_index(s.head_span.begin) + s.head_span.size()};
  raw.tail = {raw_index(s.tail_span.begin), raw_index(s.tail_span.begin) + s.tail_span.size()};
  return raw;
}

Sample insert_markers(SampleId id, const RawSentence& raw, RelationId relation) {
  const int n = static_cast<int>(raw.tokens.size());
  if (raw.head.size() <= 0 || raw.tail.size() <= 0 || raw.head.begin < 0 || raw.tail.begin < 0 ||
      raw.head.end > n || raw.tail.end > n)
    throw ValidationError("sample " + std::to_string(id) + ": invalid entity span");
  if (raw.head.overlaps(raw.tail))
    throw ValidationError("sample " + std::to_string(id) + ": entity spans overlap");
  Sample s;
  s.id = id;
  s.relation = relation;
  s.tokens.reserve(n + 2);
  for (int i = 0; i < n; ++i) {
    if (i == raw.head.begin) {
      s.head_marker_pos = static_cast<int>(s.tokens.size());
      s.tokens.push_back(kHeadMarkerToken);
    }
    if (i == raw.tail.begin) {
      s.tail_marker_pos = static_cast<int>(s.tokens.size());
      s.tokens.push_back(kTailMarkerToken);
    }
    s.tokens.push_back(raw.tokens[i]);
  }
  s.head_span = {s.head_marker_pos + 1, s.head_marker_pos + 1 + raw.head.size()};
  s.tail_span = {s.tail_marker_pos + 1, s.tail_marker_pos + 1 + raw.tail.size()};
  validate_sample(s);
  return s;
}

void validate_sequence(const TaskSequence& seq) {
  if (seq.tasks.empty()) throw ValidationError("task sequence is empty");
  std::map<RelationId, int> owner;
  for (std::size_t j = 0; j < seq.tasks.size(); ++j) {
    const Task& task = seq.tasks[j];
    if (task.index != static_cast<int>(j) + 1)
      throw ValidationError("task indices must run 1..J in order");
    if (task.relations.empty()) throw ValidationError("task " + std::to_string(task.index) + " has no relations");
    std::set<RelationId> rels(task.relations.begin(), task.relations.end());
    for (RelationId r : rels) {
      if (r < 0 || r >= seq.relation_count())
        throw ValidationError("relation id out of range in task " + std::to_string(task.index));
      auto [it, inserted] = owner.emplace(r, task.index);
      if (!inserted)
        throw ValidationError("relation " + seq.relation_names[r] + " appears in tasks " +
                              std::to_string(it->second) + " and " + std::to_string(task.index));
    }
    std::map<RelationId, int> train_counts;
    for (const auto* split : {&task.train, &task.test}) {
      for (const Sample& s : *split) {
        validate_sample(s);
        if (!rels.contains(s.relation))
          throw ValidationError(sample_tag(s) + ": relation not in task " + std::to_string(task.index));
        for (int t : s.tokens)
          if (t >= seq.vocab_size()) throw ValidationError(sample_tag(s) + ": token id out of vocabulary");
      }
    }
    for (const Sample& s : task.train) ++train_counts[s.relation];
    for (RelationId r : rels)
      if (train_counts[r] == 0)
        throw ValidationError("relation " + seq.relation_names[r] + " has no training samples");
    if (j >= 1) {
      for (RelationId r : rels)
        if (train_counts[r] != seq.k_shots)
          throw ValidationError("few-shot task " + std::to_string(task.index) + " relation " +
                                seq.relation_names[r] + " has " + std::to_string(train_counts[r]) +
                                " training samples, expected K=" + std::to_string(seq.k_shots));
    }
  }
}

std::vector<std::string> load_vocabulary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open vocabulary file " + path.string());
  std::vector<std::string> vocab;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    vocab.push_back(line);
  }
  if (vocab.size() < 2 || vocab[0] != "[E1]" || vocab[1] != "[E2]")
    throw ParseError(path.string() + ": ids 0 and 1 must be [E1] and [E2]");
  return vocab;
}

namespace {

struct Record {
  int line = 0;
  int task = 0;
  std::string relation;
  bool train = true;
  RawSentence raw;
};

Span parse_span(const nlohmann::json& j, const char* key) {
  const auto& a = j.at(key);
  if (!a.is_array() || a.size() != 2) throw std::invalid_argument(std::string(key) + " must be [start,end)");
  return {a[0].get<int>(), a[1].get<int>()};
}

}  // namespace

TaskSequence load_jsonl(const std::filesystem::path& path, const std::filesystem::path& vocab_path) {
  TaskSequence seq;
  seq.vocabulary = load_vocabulary(vocab_path);
  std::unordered_map<std::string, int> token_ids;
  for (std::size_t i = 0; i < seq.vocabulary.size(); ++i) token_ids.emplace(seq.vocabulary[i], static_cast<int>(i));

  std::ifstream in(path);
  if (!in) throw ParseError("cannot open dataset " + path.string());
  std::vector<Record> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
    Record rec;
    rec.line = line_no;
    try {
      const auto j = nlohmann::json::parse(line);
      rec.task = j.at("task").get<int>();
      rec.relation = j.at("relation").get<std::string>();
      const auto split = j.at("split").get<std::string>();
      if (split != "train" && split != "test") throw std::invalid_argument("split must be train or test");
      rec.train = split == "train";
      for (const auto& tok : j.at("tokens")) {
        const auto text = tok.get<std::string>();
        auto it = token_ids.find(text);
        if (it == token_ids.end()) throw std::invalid_argument("token '" + text + "' not in vocabulary");
        if (it->second == kHeadMarkerToken || it->second == kTailMarkerToken)
          throw std::invalid_argument("raw tokens must not contain entity markers");
        rec.raw.tokens.push_back(it->second);
      }
      rec.raw.head = parse_span(j, "head");
      rec.raw.tail = parse_span(j, "tail");
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + e.what());
    } catch (const std::invalid_argument& e) {
      throw ParseError(where + e.what());
    }
    if (rec.task < 1) throw ParseError(where + "task must be >= 1");
    records.push_back(std::move(rec));
  }
  if (records.empty()) throw ParseError(path.string() + ": no records");

  int n_tasks = 0;
  for (const auto& r : records) n_tasks = std::max(n_tasks, r.task);
  seq.tasks.resize(n_tasks);
  for (int j = 0; j < n_tasks; ++j) seq.tasks[j].index = j + 1;

  std::unordered_map<std::string, std::pair<RelationId, int>> relation_ids;  // name -> (id, task)
  for (int j = 1; j <= n_tasks; ++j) {
    for (const auto& r : records) {
      if (r.task != j) continue;
      auto it = relation_ids.find(r.relation);
      if (it == relation_ids.end()) {
        const RelationId id = static_cast<RelationId>(seq.relation_names.size());
        relation_ids.emplace(r.relation, std::make_pair(id, j));
        seq.relation_names.push_back(r.relation);
        seq.tasks[j - 1].relations.push_back(id);
      } else if (it->second.second != j) {
        throw ValidationError(path.string() + ":" + std::to_string(r.line) + ": relation " + r.relation +
                              " already used by task " + std::to_string(it->second.second));
      }
    }
  }
  SampleId next_id = 0;
  for (const auto& r : records) {
    Sample s;
    try {
      s = insert_markers(next_id++, r.raw, relation_ids.at(r.relation).first);
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + ":" + std::to_string(r.line) + ": " + e.what());
    }
    Task& task = seq.tasks[r.task - 1];
    (r.train ? task.train : task.test).push_back(std::move(s));
  }
  for (const Task& t : seq.tasks)
    if (t.relations.empty()) throw ValidationError("task " + std::to_string(t.index) + " has no records");

  auto per_relation_min = [](const Task& t) {
    std::map<RelationId, int> c;
    for (const auto& s : t.train) ++c[s.relation];
    int m = std::numeric_limits<int>::max();
    for (RelationId r : t.relations) m = std::min(m, c[r]);
    return m;
  };
  const Task& probe = seq.tasks.size() > 1 ? seq.tasks[1] : seq.tasks[0];
  seq.n_ways = static_cast<int>(probe.relations.size());
  seq.k_shots = per_relation_min(probe);
  validate_sequence(seq);
  return seq;
}

void write_jsonl(const TaskSequence& seq, const std::filesystem::path& path,
                 const std::filesystem::path& vocab_path) {
  {
    std::ofstream v(vocab_path);
    if (!v) throw ConfigError("cannot write " + vocab_path.string());
    for (const auto& tok : seq.vocabulary) v << tok << '\n';
  }
  std::vector<std::pair<SampleId, nlohmann::json>> rows;
  for (const Task& task : seq.tasks) {
    for (const auto* split : {&task.train, &task.test}) {
      for (const Sample& s : *split) {
        const RawSentence raw = strip_markers(s);
        nlohmann::json j;
        j["task"] = task.index;
        j["relation"] = seq.relation_names.at(s.relation);
        j["split"] = split == &task.train ? "train" : "test";
        auto tokens = nlohmann::json::array();
        for (int t : raw.tokens) tokens.push_back(seq.vocabulary.at(t));
        j["tokens"] = std::move(tokens);
        j["head"] = {raw.head.begin, raw.head.end};
        j["tail"] = {raw.tail.begin, raw.tail.end};
        rows.emplace_back(s.id, std::move(j));
      }
    }
  }
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  for (const auto& [id, j] : rows) out << j.dump() << '\n';
}

TaskSequence generate_synthetic_sequence(const SyntheticConfig& c) {
  if (c.n_tasks < 1 || c.n_ways < 1 || c.k_shots < 1 || c.first_task_samples < 1 || c.test_per_relation < 1)
    throw ConfigError("synthetic generator: all counts must be >= 1");
  if (c.cluster_spread < 0.0 || c.cluster_spread > 1.0)
    throw ConfigError("synthetic generator: cluster_spread must lie in [0,1]");
  constexpr int kSignature = 3;
  constexpr int kMinFiller = 8;
  const int n_relations = c.n_tasks * c.n_ways;
  const bool shared = c.cue_pool > 0;
  if (shared && c.cue_pool < kSignature) throw ConfigError("synthetic generator: cue_pool must be 0 or >= 3");
  const int n_cues = shared ? c.cue_pool : kSignature * n_relations;
  const int first_filler = 2 + n_cues;
  if (c.vocab_size < first_filler + kMinFiller)
    throw ConfigError("synthetic generator: vocab_size " + std::to_string(c.vocab_size) + " too small; need >= " +
                      std::to_string(first_filler + kMinFiller));
  const int n_filler = c.vocab_size - first_filler;

  TaskSequence seq;
  seq.vocabulary = {"[E1]", "[E2]"};
  if (shared) {
    for (int i = 0; i < n_cues; ++i) seq.vocabulary.push_back("c" + std::to_string(i));
  } else {
    for (int r = 0; r < n_relations; ++r)
      for (int k = 0; k < kSignature; ++k) seq.vocabulary.push_back("r" + std::to_string(r) + "_" + char('a' + k));
  }
  for (int i = 0; i < n_filler; ++i) seq.vocabulary.push_back("w" + std::to_string(i));
  for (int r = 0; r < n_relations; ++r) seq.relation_names.push_back("P" + std::to_string(r + 1));
  seq.n_ways = c.n_ways;
  seq.k_shots = c.n_tasks == 1 ? c.first_task_samples : c.k_shots;

  Rng rng = make_rng(c.seed, Stream::kSynthetic);
  // Signature sets; with a shared pool any two relations share at most one cue.
  std::vector<std::array<int, kSignature>> sig(n_relations);
  if (shared) {
    std::vector<std::array<int, kSignature>> chosen;
    for (int r = 0; r < n_relations; ++r) {
      for (int attempt = 0;; ++attempt) {
        if (attempt == 10000)
          throw ConfigError("synthetic generator: cue_pool " + std::to_string(c.cue_pool) + " too small for " +
                            std::to_string(n_relations) + " relations");
        std::vector<int> pool(n_cues);
        for (int i = 0; i < n_cues; ++i) pool[i] = i;
        shuffle(pool, rng);
        std::array<int, kSignature> cand{pool[0], pool[1], pool[2]};
        const bool ok = std::all_of(chosen.begin(), chosen.end(), [&](const auto& other) {
          int common = 0;
          for (int a : cand) common += static_cast<int>(std::count(other.begin(), other.end(), a));
          return common <= 1;
        });
        if (ok) {
          chosen.push_back(cand);
          break;
        }
      }
      for (int k = 0; k < kSignature; ++k) sig[r][k] = 2 + chosen[r][k];
    }
  } else {
    for (int r = 0; r < n_relations; ++r)
      for (int k = 0; k < kSignature; ++k) sig[r][k] = 2 + kSignature * r + k;
  }
  auto filler = [&] { return first_filler + static_cast<int>(uniform_index(rng, n_filler)); };
  auto signature = [&](int r, int k) { return sig[r][k]; };
  auto noisy = [&](int r, int k) {
    if (n_relations > 1 && uniform01(rng) < c.cluster_spread) {
      int other = static_cast<int>(uniform_index(rng, n_relations - 1));
      if (other >= r) ++other;
      return signature(other, static_cast<int>(uniform_index(rng, kSignature)));
    }
    return signature(r, k);
  };
  auto range = [&](int lo, int hi) { return lo + static_cast<int>(uniform_index(rng, hi - lo + 1)); };

  SampleId next_id = 0;
  auto make_sample = [&](RelationId r) {
    std::vector<int> order = {0, 1, 2};
    shuffle(order, rng);
    const int head_len = range(1, 2);
    const int tail_len = range(1, 2);
    RawSentence raw;
    for (int i = range(1, 3); i > 0; --i) raw.tokens.push_back(filler());
    raw.head.begin = static_cast<int>(raw.tokens.size());
    for (int i = 0; i < head_len; ++i) raw.tokens.push_back(noisy(r, order[i]));
    raw.head.end = static_cast<int>(raw.tokens.size());
    const int middle = range(1, 3);
    const int cue = range(0, middle);
    for (int i = 0; i <= middle; ++i)
      raw.tokens.push_back(i == cue ? noisy(r, order[2]) : filler());
    raw.tail.begin = static_cast<int>(raw.tokens.size());
    for (int i = 0; i < tail_len; ++i) raw.tokens.push_back(noisy(r, order[(head_len + i) % kSignature]));
    raw.tail.end = static_cast<int>(raw.tokens.size());
    for (int i = range(1, 3); i > 0; --i) raw.tokens.push_back(filler());
    return insert_markers(next_id++, raw, r);
  };

  for (int j = 0; j < c.n_tasks; ++j) {
    Task task;
    task.index = j + 1;
    for (int w = 0; w < c.n_ways; ++w) task.relations.push_back(j * c.n_ways + w);
    const int per_relation = j == 0 ? c.first_task_samples : c.k_shots;
    for (RelationId r : task.relations)
      for (int i = 0; i < per_relation; ++i) task.train.push_back(make_sample(r));
    for (RelationId r : task.relations)
      for (int i = 0; i < c.test_per_relation; ++i) task.test.push_back(make_sample(r));
    seq.tasks.push_back(std::move(task));
  }
  validate_sequence(seq);
  return seq;
}

}  // namespace sckd
