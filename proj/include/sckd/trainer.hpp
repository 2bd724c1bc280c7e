#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sckd/augmentation.hpp"
#include "sckd/encoder.hpp"
#include "sckd/evaluation.hpp"
#include "sckd/losses.hpp"
#include "sckd/memory.hpp"

namespace sckd {

enum class RunMode { kSckd, kFinetune, kJoint };

std::string to_string(RunMode mode);
RunMode parse_run_mode(const std::string& text);

struct RunConfig {
  RunMode mode = RunMode::kSckd;
  std::uint64_t seed = 7;
  EncoderDims dims;  // vocab_size is taken from the dataset
  Scalar dropout = 0.5;
  int epochs_adapt = 20;
  int epochs_sckd = 10;
  int batch_size = 16;
  int grad_accum = 4;
  LearningRates lr;
  LossWeights weights;
  bool augment = true;
  AugmentConfig augmentation;
  int memory_size = 1;  // L
  int pseudo_per_relation = 10;

  void validate() const;
};

enum class Phase { kAdapt = 0, kSckdData = 1, kSckdMemory = 2 };
const char* phase_name(Phase p);

/// Mean per-sample loss components over one optimizer step.
struct LossRecord {
  int step = 0;
  Phase phase = Phase::kAdapt;
  Scalar csf = 0.0;
  Scalar fd = 0.0;
  Scalar rd = 0.0;
  Scalar dtr = 0.0;
  Scalar pd = 0.0;
  Scalar total = 0.0;
};

/// Teacher-side inputs of one distillation step.
struct DistillContext {
  const ModelSnapshot* teacher = nullptr;
  std::span<const PseudoSample> pseudo;
};

struct TrainerState {
  RunConfig config;
  Model model;
  std::optional<ModelSnapshot> teacher;
  MemoryStore memory;
  std::vector<RelationId> observed;
  AdamOptimizer optimizer;
  Rng dropout_rng;
  int task = 0;  // index of the task being trained, 1-based
  SampleId next_sample_id = 0;
  std::vector<LossRecord> trace;
  int step = 0;
};

/// Teacher-side constants for one sample.
struct TeacherOutputs {
  ForwardValues values;
  std::optional<TripletTargets> targets;  // empty when mining found no positive or negative
  Index width = 0;                        // previous relation count
};

/// Per-sample loss terms on the tape. Without a teacher only csf is built and
/// total = csf; otherwise total = lambda1 csf + lambda2 (alpha fd + beta hcd + gamma pd).
struct ObjectiveTerms {
  ad::Var csf, fd, rd, dtr, pd, total;
};
ObjectiveTerms sample_objective(const BoundModel& student, const Sample& sample, const TeacherOutputs* teacher,
                                const LossWeights& w, const DropoutSource* dropout);

/// Eval-mode teacher outputs for a micro-batch, with triplets mined from
/// pseudo samples plus the batch's own teacher hiddens.
std::vector<TeacherOutputs> teacher_outputs(const ModelSnapshot& teacher, std::span<const Sample* const> batch,
                                            std::span<const PseudoSample> pseudo);

/// Fresh state; the model is created on the first adapt_on_new_task call.
TrainerState make_state(const RunConfig& config, const TaskSequence& seq);

/// One optimizer step: gradients of each micro-batch summed, then one Adam
/// update. Without a context the objective is the classification loss only.
LossRecord optimizer_step(TrainerState& state, std::span<const std::vector<const Sample*>> micro_batches,
                          const DistillContext* context);

/// Epoch loop over `data`: shuffle, micro-batches of batch_size, grad_accum
/// micro-batches per optimizer step (the tail flushes a partial step).
void train_epochs(TrainerState& state, std::span<const Sample> data, int epochs, Phase phase,
                  const DistillContext* context);

/// Initialise (task 1) or inherit, extend the classifier, train on D_j with
/// the classification loss.
void adapt_on_new_task(TrainerState& state, const Task& task);

/// Exemplar selection and deviations for the task's relations; prototypes refreshed
/// for every observed relation.
void build_memory_and_prototypes(TrainerState& state, const Task& task);

/// n pseudo samples for every observed relation.
std::vector<PseudoSample> build_pseudo_samples(TrainerState& state);

/// Distillation training over `data` against the current teacher.
void sckd_phase(TrainerState& state, std::span<const Sample> data, std::span<const PseudoSample> pseudo, Phase phase);

/// Full per-task procedure for the state's mode. Evaluation is separate.
void train_task(TrainerState& state, const Task& task, const TaskSequence& seq);

struct RunResult {
  AccuracyMatrix accuracy;
  std::vector<std::vector<LossRecord>> traces;  // per task
  std::vector<double> task_seconds;
  std::vector<std::size_t> memory_sizes;  // exemplar count after each task
  Model final_model;
};

/// Called after each task is trained and evaluated.
using TaskObserver = std::function<void(const TrainerState&, const Task&, const AccuracyMatrix&)>;

/// Trains on every task of `seq` in order and fills the accuracy matrix.
RunResult run_sequence(const TaskSequence& seq, const RunConfig& config, const TaskObserver& observer = {});

/// Baseline runner; `mode` must be finetune or joint.
RunResult run_baseline(const TaskSequence& seq, RunConfig config, RunMode mode);

void write_loss_trace(const std::vector<LossRecord>& records, const std::filesystem::path& path);

}  // namespace sckd
