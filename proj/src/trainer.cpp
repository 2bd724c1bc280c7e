#include "sckd/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>

namespace sckd {

std::string to_string(RunMode mode) {
  switch (mode) {
    case RunMode::kSckd: return "sckd";
    case RunMode::kFinetune: return "finetune";
    case RunMode::kJoint: return "joint";
  }
  return "?";
}

RunMode parse_run_mode(const std::string& text) {
  if (text == "sckd") return RunMode::kSckd;
  if (text == "finetune") return RunMode::kFinetune;
  if (text == "joint") return RunMode::kJoint;
  throw ConfigError("unknown run mode '" + text + "' (expected sckd, finetune or joint)");
}

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::kAdapt: return "adapt";
    case Phase::kSckdData: return "sckd_data";
    case Phase::kSckdMemory: return "sckd_memory";
  }
  return "?";
}

void RunConfig::validate() const {
  if (epochs_adapt < 0 || epochs_sckd < 0) throw ConfigError("epoch counts must be >= 0");
  if (batch_size < 1 || grad_accum < 1) throw ConfigError("batch_size and grad_accum must be >= 1");
  if (memory_size < 1) throw ConfigError("memory size L must be >= 1");
  if (pseudo_per_relation < 1) throw ConfigError("pseudo samples per relation must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0,1)");
  if (!(augmentation.tau > 0.0 && augmentation.tau <= 1.0)) throw ConfigError("tau must lie in (0,1]");
  if (augmentation.cap_per_sample < 0) throw ConfigError("augmentation cap must be >= 0");
  for (Scalar v : {lr.encoder, lr.projection, lr.classifier})
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("learning rates must be finite and >= 0");
  if (dims.model_dim < 1 || dims.heads < 1 || dims.model_dim % dims.heads != 0 || dims.ffn_dim < 1 ||
      dims.hidden_dim < 1)
    throw ConfigError("invalid encoder dimensions");
  weights.validate();
}

TrainerState make_state(const RunConfig& config, const TaskSequence& seq) {
  config.validate();
  TrainerState s;
  s.config = config;
  s.config.dims.vocab_size = seq.vocab_size();
  s.optimizer = AdamOptimizer(AdamConfig{config.lr});
  SampleId max_id = -1;
  for (const Task& t : seq.tasks) {
    for (const Sample& x : t.train) max_id = std::max(max_id, x.id);
    for (const Sample& x : t.test) max_id = std::max(max_id, x.id);
  }
  s.next_sample_id = max_id + 1;
  return s;
}

ObjectiveTerms sample_objective(const BoundModel& student, const Sample& sample, const TeacherOutputs* teacher,
                                const LossWeights& w, const DropoutSource* dropout) {
  SCKD_REQUIRE(sample.relation >= 0 && sample.relation < student.model->relation_count(),
               "training label outside the classifier");
  ad::Tape& tape = *student.params[0].tape();
  const ForwardVars fv = forward(student, sample, dropout);
  ObjectiveTerms t;
  t.csf = ad::cross_entropy(fv.logits, sample.relation);
  if (!teacher) {
    t.total = t.csf;
    return t;
  }
  const ForwardValues& prev = teacher->values;
  t.fd = ad::cosine_distance(prev.features, fv.features);
  t.rd = ad::cosine_distance(prev.hidden, fv.hidden);
  t.dtr = teacher->targets ? ad::triplet_hinge(fv.hidden, *teacher->targets) : tape.constant(Matrix::Zero(1, 1));
  t.pd = ad::soft_cross_entropy(prev.logits, fv.logits, teacher->width, w.temperature);
  ad::Var hcd = ad::add(ad::scale(t.rd, w.rd_weight), ad::scale(t.dtr, w.dtr_weight));
  ad::Var dst = ad::add(ad::add(ad::scale(t.fd, w.alpha), ad::scale(hcd, w.beta)), ad::scale(t.pd, w.gamma));
  t.total = ad::add(ad::scale(t.csf, w.lambda1), ad::scale(dst, w.lambda2));
  return t;
}

std::vector<TeacherOutputs> teacher_outputs(const ModelSnapshot& teacher, std::span<const Sample* const> batch,
                                            std::span<const PseudoSample> pseudo) {
  const Model& m = teacher.model();
  std::vector<TeacherOutputs> out(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    out[i].values = forward_eval(m, *batch[i]);
    out[i].width = m.relation_count();
  }
  std::vector<PoolEntry> pool;
  pool.reserve(pseudo.size() + batch.size());
  for (const PseudoSample& p : pseudo) pool.push_back({p.vector, p.relation});
  for (std::size_t i = 0; i < batch.size(); ++i) pool.push_back({out[i].values.hidden, batch[i]->relation});
  for (std::size_t i = 0; i < batch.size(); ++i) {
    try {
      out[i].targets = mine_triplet(out[i].values.hidden, batch[i]->relation, pool);
    } catch (const MiningError&) {
      out[i].targets.reset();
    }
  }
  return out;
}

LossRecord optimizer_step(TrainerState& state, std::span<const std::vector<const Sample*>> micro_batches,
                          const DistillContext* context) {
  const LossWeights& w = state.config.weights;
  ModelGradients total = zero_gradients(state.model);
  LossRecord rec;
  std::size_t count = 0;
  DropoutSource dropout{&state.dropout_rng};

  for (const auto& batch : micro_batches) {
    if (batch.empty()) continue;
    std::vector<TeacherOutputs> prev;
    if (context) {
      SCKD_REQUIRE(context->teacher != nullptr, "distillation step requires a teacher");
      prev = teacher_outputs(*context->teacher, batch, context->pseudo);
    }
    ad::Tape tape;
    const BoundModel bound = bind(tape, state.model, true);
    ad::Var sum;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const ObjectiveTerms t = sample_objective(bound, *batch[i], context ? &prev[i] : nullptr, w, &dropout);
      rec.csf += t.csf.scalar();
      if (context) {
        rec.fd += t.fd.scalar();
        rec.rd += t.rd.scalar();
        rec.dtr += t.dtr.scalar();
        rec.pd += t.pd.scalar();
      }
      rec.total += t.total.scalar();
      sum = sum.valid() ? ad::add(sum, t.total) : t.total;
      ++count;
    }
    ad::Var loss = ad::scale(sum, 1.0 / static_cast<Scalar>(batch.size()));
    add_gradients(total, compute_gradients(tape, loss, bound));
  }
  SCKD_REQUIRE(count > 0, "optimizer_step: no samples");
  state.optimizer.step(state.model, total);
  if (!state.model.all_finite()) throw TrainingError("parameters became non-finite after an update");
  const Scalar n = static_cast<Scalar>(count);
  rec.csf /= n;
  rec.fd /= n;
  rec.rd /= n;
  rec.dtr /= n;
  rec.pd /= n;
  rec.total /= n;
  rec.step = ++state.step;
  return rec;
}

void train_epochs(TrainerState& state, std::span<const Sample> data, int epochs, Phase phase,
                  const DistillContext* context) {
  if (epochs == 0) return;
  SCKD_REQUIRE(!data.empty(), "train_epochs: empty training data");
  const RunConfig& c = state.config;
  state.optimizer = AdamOptimizer(AdamConfig{c.lr});
  state.dropout_rng = make_rng(c.seed, Stream::kDropout, state.task, static_cast<int>(phase));
  Rng order_rng = make_rng(c.seed, Stream::kData, state.task, static_cast<int>(phase));
  std::vector<const Sample*> order;
  order.reserve(data.size());
  for (const Sample& s : data) order.push_back(&s);

  for (int e = 0; e < epochs; ++e) {
    shuffle(order, order_rng);
    std::vector<std::vector<const Sample*>> group;
    for (std::size_t start = 0; start < order.size(); start += c.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(c.batch_size));
      group.emplace_back(order.begin() + start, order.begin() + end);
      if (static_cast<int>(group.size()) == c.grad_accum || end == order.size()) {
        LossRecord rec = optimizer_step(state, group, context);
        rec.phase = phase;
        state.trace.push_back(rec);
        group.clear();
      }
    }
  }
}

namespace {

void extend_observed(TrainerState& state, std::span<const RelationId> relations, Rng& rng) {
  for (RelationId r : relations) {
    SCKD_REQUIRE(std::find(state.observed.begin(), state.observed.end(), r) == state.observed.end(),
                 "relation already observed");
    SCKD_REQUIRE(r == static_cast<RelationId>(state.observed.size()),
                 "relations must arrive in dense order of first appearance");
    state.observed.push_back(r);
  }
  extend_classifier(state.model, static_cast<int>(relations.size()), rng);
}

Matrix eval_hiddens(const Model& m, std::span<const Sample* const> samples) {
  Matrix h(static_cast<Index>(samples.size()), m.dims().hidden_dim);
  for (std::size_t i = 0; i < samples.size(); ++i) h.row(static_cast<Index>(i)) = forward_eval(m, *samples[i]).hidden;
  return h;
}

}  // namespace

void adapt_on_new_task(TrainerState& state, const Task& task) {
  SCKD_REQUIRE(!task.train.empty(), "adapt_on_new_task: empty training set");
  state.task = task.index;
  state.trace.clear();
  Rng init = make_rng(state.config.seed, Stream::kInit, task.index);
  if (state.task == 1 || state.model.tensors()[0].size() == 0)
    state.model = Model::initialize(state.config.dims, state.config.dropout, init);
  extend_observed(state, task.relations, init);
  train_epochs(state, task.train, state.config.epochs_adapt, Phase::kAdapt, nullptr);
}

void build_memory_and_prototypes(TrainerState& state, const Task& task) {
  const int L = state.config.memory_size;
  for (RelationId r : task.relations) {
    std::vector<const Sample*> members;
    for (const Sample& s : task.train)
      if (s.relation == r) members.push_back(&s);
    SCKD_REQUIRE(!members.empty(), "relation without training samples");
    const Matrix hiddens = eval_hiddens(state.model, members);
    std::vector<Sample> copies;
    for (const Sample* s : members) copies.push_back(*s);
    const std::uint64_t cluster_seed = make_rng(state.config.seed, Stream::kCluster, task.index, r)();
    const std::vector<SampleId> ids = select_typical(copies, hiddens, L, cluster_seed);
    RelationStats stats;
    stats.relation = r;
    stats.first_task = task.index;
    for (const Sample& s : copies)
      if (std::binary_search(ids.begin(), ids.end(), s.id)) stats.exemplars.push_back(s);
    stats.deviation = compute_deviation(hiddens);
    state.memory.insert(std::move(stats));
  }
  for (auto& [r, stats] : state.memory.relations()) {
    std::vector<const Sample*> ex;
    for (const Sample& s : stats.exemplars) ex.push_back(&s);
    stats.prototype = compute_prototype(eval_hiddens(state.model, ex));
  }
}

std::vector<PseudoSample> build_pseudo_samples(TrainerState& state) {
  Rng noise = make_rng(state.config.seed, Stream::kNoise, state.task);
  std::vector<PseudoSample> out;
  for (RelationId r : state.observed) {
    auto batch = generate_pseudo(state.memory.at(r), state.config.pseudo_per_relation, noise);
    out.insert(out.end(), batch.begin(), batch.end());
  }
  return out;
}

void sckd_phase(TrainerState& state, std::span<const Sample> data, std::span<const PseudoSample> pseudo, Phase phase) {
  SCKD_REQUIRE(state.teacher.has_value(), "distillation phase requires the previous model");
  DistillContext ctx{&*state.teacher, pseudo};
  train_epochs(state, data, state.config.epochs_sckd, phase, &ctx);
}

void train_task(TrainerState& state, const Task& task, const TaskSequence& seq) {
  const RunConfig& c = state.config;
  if (c.mode == RunMode::kJoint) {
    state.task = task.index;
    state.trace.clear();
    Rng init = make_rng(c.seed, Stream::kInit, task.index);
    state.model = Model::initialize(c.dims, c.dropout, init);
    state.observed.clear();
    std::vector<RelationId> all;
    std::vector<Sample> data;
    for (const Task& t : seq.tasks) {
      if (t.index > task.index) break;
      all.insert(all.end(), t.relations.begin(), t.relations.end());
      data.insert(data.end(), t.train.begin(), t.train.end());
    }
    extend_observed(state, all, init);
    train_epochs(state, data, c.epochs_adapt, Phase::kAdapt, nullptr);
    return;
  }

  adapt_on_new_task(state, task);
  if (c.mode == RunMode::kFinetune) return;

  build_memory_and_prototypes(state, task);
  if (state.teacher) {
    const std::vector<Sample> memory = state.memory.exemplars();
    std::vector<Sample> data_star(task.train.begin(), task.train.end());
    std::vector<Sample> memory_star = memory;
    if (c.augment) {
      AugmentationResult aug = augment(task.train, memory, state.model, c.augmentation, state.next_sample_id);
      data_star = std::move(aug.dataset);
      memory_star = std::move(aug.memory);
    }
    const std::vector<PseudoSample> pseudo = build_pseudo_samples(state);
    sckd_phase(state, data_star, pseudo, Phase::kSckdData);
    sckd_phase(state, memory_star, pseudo, Phase::kSckdMemory);
  }
  state.teacher.emplace(state.model);
}

RunResult run_sequence(const TaskSequence& seq, const RunConfig& config, const TaskObserver& observer) {
  TrainerState state = make_state(config, seq);
  RunResult result;
  result.accuracy = AccuracyMatrix(static_cast<int>(seq.tasks.size()));
  for (const Task& task : seq.tasks) {
    const auto t0 = std::chrono::steady_clock::now();
    train_task(state, task, seq);
    const int observed = static_cast<int>(state.observed.size());
    for (const Task& seen : seq.tasks) {
      if (seen.index > task.index) break;
      result.accuracy.set(task.index, seen.index, strict_accuracy(state.model, seen.test, observed));
    }
    result.traces.push_back(state.trace);
    result.memory_sizes.push_back(state.memory.exemplar_count());
    result.task_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    if (observer) observer(state, task, result.accuracy);
  }
  result.final_model = state.model;
  return result;
}

RunResult run_baseline(const TaskSequence& seq, RunConfig config, RunMode mode) {
  if (mode == RunMode::kSckd) throw ConfigError("run_baseline expects finetune or joint");
  config.mode = mode;
  return run_sequence(seq, config);
}

void write_loss_trace(const std::vector<LossRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out.precision(17);
  out << "step,csf,fd,rd,dtr,pd,total,phase\n";
  for (const auto& r : records)
    out << r.step << ',' << r.csf << ',' << r.fd << ',' << r.rd << ',' << r.dtr << ',' << r.pd << ',' << r.total << ','
        << phase_name(r.phase) << '\n';
}

}  // namespace sckd
