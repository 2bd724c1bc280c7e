#pragma once

#include <functional>
#include <vector>

#include "sckd/data.hpp"
#include "sckd/encoder.hpp"
#include "sckd/trainer.hpp"

namespace sckd::test {

inline EncoderDims tiny_dims(int vocab = 24) {
  EncoderDims d;
  d.vocab_size = vocab;
  d.model_dim = 8;
  d.heads = 2;
  d.ffn_dim = 12;
  d.hidden_dim = 6;
  return d;
}

inline Model tiny_model(int relations, std::uint64_t seed = 1, Scalar dropout = 0.0, int vocab = 24) {
  Rng rng(seed);
  Model m = Model::initialize(tiny_dims(vocab), dropout, rng);
  extend_classifier(m, relations, rng);
  // Larger classifier rows than the default init so logits are not all ~0.
  m[ParamId::kClassifier] *= 25.0;
  return m;
}

/// Raw sentence "w.. head w.. tail w.." with markers inserted; tokens >= 2.
inline Sample sentence(SampleId id, std::vector<int> tokens, Span head, Span tail, RelationId relation) {
  RawSentence raw{std::move(tokens), head, tail};
  return insert_markers(id, raw, relation);
}

inline std::vector<Sample> random_samples(int n, int relations, int vocab, std::uint64_t seed, SampleId first_id = 0) {
  Rng rng(seed);
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) {
    const int len = 5 + static_cast<int>(uniform_index(rng, 4));
    std::vector<int> tokens(len);
    for (int& t : tokens) t = 2 + static_cast<int>(uniform_index(rng, vocab - 2));
    const int hb = static_cast<int>(uniform_index(rng, 2));
    const Span head{hb, hb + 1};
    const Span tail{len - 2, len - 2 + 1 + static_cast<int>(uniform_index(rng, 2))};
    out.push_back(sentence(first_id + i, tokens, head, tail, i % relations));
  }
  return out;
}

/// Central difference of `f` at one coordinate of `x`.
inline Scalar central_difference(Matrix& x, Index r, Index c, Scalar step, const std::function<Scalar()>& f) {
  const Scalar saved = x(r, c);
  x(r, c) = saved + step;
  const Scalar up = f();
  x(r, c) = saved - step;
  const Scalar down = f();
  x(r, c) = saved;
  return (up - down) / (2.0 * step);
}

inline Scalar gradient_error(Scalar analytic, Scalar numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
}

/// Small synthetic sequence: J tasks of 3 relations, 3 shots, 4 first-task samples.
inline TaskSequence tiny_sequence(int tasks = 3, std::uint64_t seed = 5) {
  SyntheticConfig c;
  c.seed = seed;
  c.n_tasks = tasks;
  c.n_ways = 3;
  c.k_shots = 3;
  c.first_task_samples = 4;
  c.test_per_relation = 3;
  c.vocab_size = 80;
  return generate_synthetic_sequence(c);
}

inline RunConfig tiny_run(RunMode mode = RunMode::kSckd, std::uint64_t seed = 3) {
  RunConfig r;
  r.mode = mode;
  r.seed = seed;
  r.dims = tiny_dims();
  r.dropout = 0.3;
  r.epochs_adapt = 2;
  r.epochs_sckd = 2;
  r.batch_size = 4;
  r.grad_accum = 2;
  r.lr = {1e-3, 1e-3, 1e-3};
  r.pseudo_per_relation = 3;
  r.augmentation.tau = 0.6;
  return r;
}

}  // namespace sckd::test
