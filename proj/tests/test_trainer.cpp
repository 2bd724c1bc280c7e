#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "sckd/trainer.hpp"

using namespace sckd;

namespace {

std::vector<std::vector<const Sample*>> batches_of(const std::vector<Sample>& data, std::size_t size) {
  std::vector<std::vector<const Sample*>> out;
  for (std::size_t i = 0; i < data.size(); i += size) {
    out.emplace_back();
    for (std::size_t k = i; k < std::min(data.size(), i + size); ++k) out.back().push_back(&data[k]);
  }
  return out;
}

// State after training task 1 and the adapt step of task 2 in sckd mode.
TrainerState after_adapt_on_task2(const TaskSequence& seq, const RunConfig& cfg) {
  TrainerState s = make_state(cfg, seq);
  train_task(s, seq.tasks[0], seq);
  adapt_on_new_task(s, seq.tasks[1]);
  return s;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("run modes and config validation") {
  CHECK(parse_run_mode("joint") == RunMode::kJoint);
  CHECK(to_string(RunMode::kFinetune) == "finetune");
  CHECK_THROWS_AS(parse_run_mode("replay"), ConfigError);
  RunConfig c = test::tiny_run();
  CHECK_NOTHROW(c.validate());
  c.memory_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = test::tiny_run();
  c.augmentation.tau = 1.2;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = test::tiny_run();
  c.lr.encoder = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = test::tiny_run();
  c.weights.temperature = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("zero adapt epochs leave the fresh initialisation untouched") {
  const TaskSequence seq = test::tiny_sequence(2);
  RunConfig cfg = test::tiny_run();
  cfg.epochs_adapt = 0;
  TrainerState s = make_state(cfg, seq);
  adapt_on_new_task(s, seq.tasks[0]);
  Rng init = make_rng(cfg.seed, Stream::kInit, 1);
  EncoderDims dims = cfg.dims;
  dims.vocab_size = seq.vocab_size();
  Model expect = Model::initialize(dims, cfg.dropout, init);
  extend_classifier(expect, 3, init);
  CHECK(bit_identical(s.model, expect));
  CHECK(s.trace.empty());
  CHECK(s.observed == std::vector<RelationId>{0, 1, 2});
}

TEST_CASE("memory holds L exemplars per observed relation") {
  const TaskSequence seq = test::tiny_sequence(4);
  for (int L : {1, 2, 3}) {
    RunConfig cfg = test::tiny_run();
    cfg.memory_size = L;
    const RunResult r = run_sequence(seq, cfg);
    for (std::size_t j = 0; j < seq.tasks.size(); ++j) CHECK(r.memory_sizes[j] == static_cast<std::size_t>(L) * 3 * (j + 1));
  }
}

TEST_CASE("exemplars come from the task's training data and prototypes are their mean") {
  const TaskSequence seq = test::tiny_sequence(2);
  RunConfig cfg = test::tiny_run();
  cfg.memory_size = 2;
  TrainerState s = make_state(cfg, seq);
  adapt_on_new_task(s, seq.tasks[0]);
  build_memory_and_prototypes(s, seq.tasks[0]);
  for (RelationId r : seq.tasks[0].relations) {
    const RelationStats& st = s.memory.at(r);
    CHECK(st.exemplars.size() == 2);
    Matrix h(2, cfg.dims.hidden_dim);
    for (int i = 0; i < 2; ++i) {
      const Sample& e = st.exemplars[i];
      CHECK(e.relation == r);
      CHECK(std::find(seq.tasks[0].train.begin(), seq.tasks[0].train.end(), e) != seq.tasks[0].train.end());
      h.row(i) = forward_eval(s.model, e).hidden;
    }
    CHECK((st.prototype - compute_prototype(h)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((st.deviation.array() >= kDeviationFloor).all());
  }
  const auto pseudo = build_pseudo_samples(s);
  CHECK(pseudo.size() == 9);
}

TEST_CASE("the teacher is not modified by either distillation phase") {
  const TaskSequence seq = test::tiny_sequence(2);
  const RunConfig cfg = test::tiny_run();
  TrainerState s = after_adapt_on_task2(seq, cfg);
  REQUIRE(s.teacher.has_value());
  const Model frozen = s.teacher->model();
  build_memory_and_prototypes(s, seq.tasks[1]);
  const auto pseudo = build_pseudo_samples(s);
  const Model before = s.model;
  sckd_phase(s, seq.tasks[1].train, pseudo, Phase::kSckdData);
  CHECK(bit_identical(s.teacher->model(), frozen));
  CHECK_FALSE(bit_identical(s.model, before));
  const auto memory = s.memory.exemplars();
  sckd_phase(s, memory, pseudo, Phase::kSckdMemory);
  CHECK(bit_identical(s.teacher->model(), frozen));
}

TEST_CASE("without distillation weight and augmentation a step equals the finetune step") {
  const TaskSequence seq = test::tiny_sequence(2);
  RunConfig cfg = test::tiny_run();
  cfg.weights.lambda2 = 0.0;
  cfg.augment = false;
  TrainerState sckd = after_adapt_on_task2(seq, cfg);
  build_memory_and_prototypes(sckd, seq.tasks[1]);
  const auto pseudo = build_pseudo_samples(sckd);

  TrainerState plain = sckd;
  plain.config.mode = RunMode::kFinetune;
  sckd.dropout_rng = plain.dropout_rng = make_rng(99, Stream::kDropout);
  const auto batches = batches_of(seq.tasks[1].train, 4);
  DistillContext ctx{&*sckd.teacher, pseudo};
  const LossRecord a = optimizer_step(sckd, batches, &ctx);
  const LossRecord b = optimizer_step(plain, batches, nullptr);
  CHECK(bit_identical(sckd.model, plain.model));
  CHECK(a.csf == b.csf);
  CHECK(a.fd > 0.0);
}

TEST_CASE("distilling against an identical teacher gives zero feature and representation loss") {
  const TaskSequence seq = test::tiny_sequence(2);
  RunConfig cfg = test::tiny_run();
  cfg.dropout = 0.0;
  TrainerState s = after_adapt_on_task2(seq, cfg);
  build_memory_and_prototypes(s, seq.tasks[1]);
  const auto pseudo = build_pseudo_samples(s);
  Model same = s.model;
  s.teacher.emplace(same);
  const auto batches = batches_of(seq.tasks[1].train, 9);
  DistillContext ctx{&*s.teacher, pseudo};
  const LossRecord rec = optimizer_step(s, batches, &ctx);
  CHECK(rec.fd <= 1e-12);
  CHECK(rec.rd <= 1e-12);
  CHECK(rec.pd >= 0.0);
}

TEST_CASE("the first task trains without distillation") {
  const TaskSequence seq = test::tiny_sequence(2);
  TrainerState s = make_state(test::tiny_run(), seq);
  train_task(s, seq.tasks[0], seq);
  REQUIRE_FALSE(s.trace.empty());
  for (const LossRecord& r : s.trace) {
    CHECK(r.phase == Phase::kAdapt);
    CHECK(r.fd == 0.0);
    CHECK(r.pd == 0.0);
    CHECK(r.total == r.csf);
  }
  CHECK(s.teacher.has_value());
  CHECK(s.memory.relation_count() == 3);
}

TEST_CASE("later tasks run adapt, data and memory phases in order") {
  const TaskSequence seq = test::tiny_sequence(2);
  TrainerState s = make_state(test::tiny_run(), seq);
  train_task(s, seq.tasks[0], seq);
  train_task(s, seq.tasks[1], seq);
  std::vector<Phase> order;
  int last_step = 0;
  for (const LossRecord& r : s.trace) {
    if (order.empty() || order.back() != r.phase) order.push_back(r.phase);
    CHECK(r.step > last_step);
    last_step = r.step;
  }
  CHECK(order == std::vector<Phase>{Phase::kAdapt, Phase::kSckdData, Phase::kSckdMemory});
  CHECK(s.teacher->model().relation_count() == 6);
}

TEST_CASE("identical config and seed reproduce the run exactly") {
  const TaskSequence seq = test::tiny_sequence(3);
  const RunResult a = run_sequence(seq, test::tiny_run());
  const RunResult b = run_sequence(seq, test::tiny_run());
  CHECK(a.accuracy == b.accuracy);
  CHECK(bit_identical(a.final_model, b.final_model));
  const RunResult c = run_sequence(seq, test::tiny_run(RunMode::kSckd, 4));
  CHECK_FALSE(bit_identical(a.final_model, c.final_model));
}

TEST_CASE("joint training equals finetuning on a single task") {
  const TaskSequence seq = test::tiny_sequence(1);
  const RunResult f = run_sequence(seq, test::tiny_run(RunMode::kFinetune));
  const RunResult j = run_sequence(seq, test::tiny_run(RunMode::kJoint));
  CHECK(bit_identical(f.final_model, j.final_model));
  CHECK(f.accuracy == j.accuracy);
  CHECK_THROWS_AS(run_baseline(seq, test::tiny_run(), RunMode::kSckd), ConfigError);
}

TEST_CASE("baselines keep no memory and joint sees all data so far") {
  const TaskSequence seq = test::tiny_sequence(3);
  const RunResult f = run_baseline(seq, test::tiny_run(), RunMode::kFinetune);
  CHECK(f.memory_sizes == std::vector<std::size_t>{0, 0, 0});
  int observed_calls = 0;
  const RunResult j = run_sequence(seq, test::tiny_run(RunMode::kJoint), [&](const TrainerState& s, const Task& t,
                                                                            const AccuracyMatrix& acc) {
    ++observed_calls;
    CHECK(s.model.relation_count() == 3 * t.index);
    CHECK(acc.row_complete(t.index));
  });
  CHECK(observed_calls == 3);
  CHECK(j.accuracy.row_complete(3));
}

TEST_CASE("loss trace csv") {
  std::vector<LossRecord> recs(2);
  recs[0].step = 1;
  recs[0].csf = recs[0].total = 0.5;
  recs[1].step = 2;
  recs[1].phase = Phase::kSckdMemory;
  const auto path = std::filesystem::temp_directory_path() / "sckd_trace.csv";
  write_loss_trace(recs, path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "step,csf,fd,rd,dtr,pd,total,phase");
  std::getline(in, line);
  CHECK(line == "1,0.5,0,0,0,0,0.5,adapt");
  std::getline(in, line);
  CHECK(line == "2,0,0,0,0,0,0,sckd_memory");
}

}  // TEST_SUITE
