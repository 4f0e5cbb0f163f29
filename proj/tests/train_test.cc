// Copyright 2026 The sparsecomm Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "sparsecomm/train.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "sparsecomm/errors.h"

namespace sparsecomm {
namespace {

// Straight-line sparse Adam over a dense copy, one row at a time.
void OracleSparseAdam(DenseMatrix& p, DenseMatrix& m, DenseMatrix& v,
                      const std::vector<std::pair<RowIndex, std::vector<double>>>& rows,
                      int t, const AdamConfig& c) {
  const double step = c.lr * std::sqrt(1.0 - std::pow(c.beta2, t)) /
                      (1.0 - std::pow(c.beta1, t));
  for (const auto& [r, g] : rows) {
    for (std::size_t j = 0; j < g.size(); ++j) {
      m(r, j) = c.beta1 * m(r, j) + (1.0 - c.beta1) * g[j];
      v(r, j) = c.beta2 * v(r, j) + (1.0 - c.beta2) * g[j] * g[j];
      p(r, j) -= step * m(r, j) / (std::sqrt(v(r, j)) + c.eps);
    }
  }
}

SparseGrad Rows(std::size_t cols,
                const std::vector<std::pair<RowIndex, std::vector<double>>>& rows) {
  std::vector<SparseGrad::Row> r;
  for (const auto& [i, v] : rows) r.push_back({i, v});
  return Coalesce(SparseGrad::FromRows(cols, r));
}

TEST(AdamTest, SingleFinalPartMatchesSparseAdam) {
  const AdamConfig cfg{0.1, 0.9, 0.99, 1e-8};
  DenseMatrix p(4, 2, {1, 2, 3, 4, 5, 6, 7, 8});
  DenseMatrix op = p, om(4, 2), ov(4, 2);
  ElementwiseAdamState s(4, 2, cfg);
  const std::vector<std::pair<RowIndex, std::vector<double>>> g1 = {{0, {0.5, -1}},
                                                                     {2, {2, 0.25}}};
  const std::vector<std::pair<RowIndex, std::vector<double>>> g2 = {{2, {-1, 1}},
                                                                     {3, {0.1, 0.2}}};
  s.ApplyPartial(p, Rows(2, g1), true);
  OracleSparseAdam(op, om, ov, g1, 1, cfg);
  s.ApplyPartial(p, Rows(2, g2), true);
  OracleSparseAdam(op, om, ov, g2, 2, cfg);
  EXPECT_EQ(p, op);
  EXPECT_EQ(s.first_moment(), om);
  EXPECT_EQ(s.second_moment(), ov);
  EXPECT_EQ(s.step(), 2u);
  // Row 1 was never touched.
  EXPECT_EQ(p(1, 0), 3.0);
  EXPECT_EQ(s.first_moment()(1, 1), 0.0);
}

TEST(AdamTest, FirstStepMovesByLearningRate) {
  // With zero state, the bias-corrected first step is lr * g / (|g| + eps).
  const AdamConfig cfg{0.5, 0.9, 0.999, 1e-300};
  DenseMatrix p(1, 2);
  ElementwiseAdamState s(1, 2, cfg);
  s.ApplyPartial(p, Rows(2, {{0, {3.0, -0.25}}}), true);
  EXPECT_NEAR(p(0, 0), -0.5, 1e-15);
  EXPECT_NEAR(p(0, 1), 0.5, 1e-15);
}

TEST(AdamTest, EmptyPriorPartChangesNothing) {
  ElementwiseAdamState s(3, 2, {});
  DenseMatrix p(3, 2, {1, 1, 1, 1, 1, 1});
  const DenseMatrix before = p;
  s.ApplyPartial(p, SparseGrad(2), false);
  EXPECT_EQ(p, before);
  EXPECT_EQ(s.step(), 0u);
  EXPECT_EQ(s.first_moment(), DenseMatrix(3, 2));
  s.ApplyPartial(p, Rows(2, {{1, {1, 1}}}), true);
  EXPECT_EQ(s.step(), 1u);
  EXPECT_NE(p, before);
}

TEST(AdamTest, OverlappingPartsRejectedWithoutSideEffects) {
  ElementwiseAdamState s(4, 1, {});
  DenseMatrix p(4, 1);
  s.ApplyPartial(p, Rows(1, {{1, {1}}, {2, {1}}}), false);
  const DenseMatrix snapshot = p;
  const DenseMatrix m = s.first_moment();
  EXPECT_THROW(s.ApplyPartial(p, Rows(1, {{0, {1}}, {2, {1}}}), true), DoubleUpdateError);
  EXPECT_EQ(p, snapshot);
  EXPECT_EQ(s.first_moment(), m);
  EXPECT_EQ(s.step(), 0u);
  EXPECT_THROW(s.ApplyDense(p, DenseMatrix(4, 1)), DoubleUpdateError);
  s.ApplyPartial(p, Rows(1, {{0, {1}}}), true);
  EXPECT_EQ(s.step(), 1u);
  // A new iteration may touch the same rows again.
  s.ApplyPartial(p, Rows(1, {{1, {1}}}), true);
  EXPECT_EQ(s.step(), 2u);
}

TEST(AdamTest, RejectsBadParts) {
  ElementwiseAdamState s(2, 2, {});
  DenseMatrix p(2, 2);
  SparseGrad raw(2);
  raw.Append(1, std::vector<double>{1, 1});
  raw.Append(0, std::vector<double>{1, 1});
  EXPECT_THROW(s.ApplyPartial(p, raw, true), PreconditionError);
  EXPECT_THROW(s.ApplyPartial(p, Rows(2, {{5, {1, 1}}}), true), BoundsError);
  EXPECT_THROW(s.ApplyPartial(p, Rows(3, {{0, {1, 1, 1}}}), true), ShapeError);
  DenseMatrix wrong(3, 2);
  EXPECT_THROW(s.ApplyPartial(wrong, SparseGrad(2), true), ShapeError);
  EXPECT_THROW(ElementwiseAdamState(1, 1, AdamConfig{0.0}), PreconditionError);
  EXPECT_THROW(ElementwiseAdamState(1, 1, AdamConfig{0.1, 1.0}), PreconditionError);
}

TEST(AdamTest, DenseStepMatchesOracle) {
  const AdamConfig cfg{0.05, 0.8, 0.9, 1e-6};
  DenseMatrix p(2, 2, {1, -1, 0.5, 2});
  DenseMatrix op = p, om(2, 2), ov(2, 2);
  ElementwiseAdamState s(2, 2, cfg);
  const DenseMatrix g(2, 2, {0.1, 0.2, -0.3, 0.4});
  for (int t = 1; t <= 3; ++t) {
    s.ApplyDense(p, g);
    OracleSparseAdam(op, om, ov, {{0, {0.1, 0.2}}, {1, {-0.3, 0.4}}}, t, cfg);
  }
  EXPECT_EQ(p, op);
  EXPECT_EQ(s.step(), 3u);
}

TEST(AdamPropertyTest, TwoPartSplitIsBitwiseEqualToWhole) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> val(-2, 2);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t rows = 1 + rng() % 12, cols = 1 + rng() % 4;
    ElementwiseAdamState whole(rows, cols, {}), parts(rows, cols, {});
    DenseMatrix pw(rows, cols), pp(rows, cols);
    for (double& x : pw.mutable_data()) x = val(rng);
    pp = pw;
    for (int iter = 0; iter < 3; ++iter) {
      std::vector<std::pair<RowIndex, std::vector<double>>> all, a, b;
      for (RowIndex r = 0; r < rows; ++r) {
        if (rng() % 3 == 0) continue;
        std::vector<double> g(cols);
        for (double& x : g) x = val(rng);
        all.push_back({r, g});
        (rng() % 2 ? a : b).push_back({r, g});
      }
      whole.ApplyPartial(pw, Rows(cols, all), true);
      parts.ApplyPartial(pp, Rows(cols, a), false);
      parts.ApplyPartial(pp, Rows(cols, b), true);
      ASSERT_EQ(pw, pp);
      ASSERT_EQ(whole.first_moment(), parts.first_moment());
      ASSERT_EQ(whole.second_moment(), parts.second_moment());
      ASSERT_EQ(whole.step(), parts.step());
    }
  }
}

// Toy model ------------------------------------------------------------------

TEST(ToyModelTest, ForwardByHand) {
  ToyModel m;
  m.embedding = DenseMatrix(3, 2, {1, 0, 0, 1, 0.5, 0.5});
  m.blocks.push_back(DenseMatrix(1, 3, {0.5, -1, 0.25}));  // linear output
  // tokens 0, 2, 2 -> h0 = (2, 1); y = 0.5*2 - 1*1 + 0.25
  EXPECT_DOUBLE_EQ(ToyForward(m, {0, 2, 2}), 0.25);
  // hidden = tanh(2 + 1 - 3) = 0; y = 2 * 0 + 0.5
  m.blocks = {DenseMatrix(1, 3, {1, 1, -3}), DenseMatrix(1, 2, {2, 0.5})};
  EXPECT_DOUBLE_EQ(ToyForward(m, {0, 2, 2}), 0.5);
  EXPECT_THROW(ToyForward(m, {7}), VocabularyBoundsError);
}

TEST(ToyModelTest, InitIsDeterministic) {
  const ToyModelSpec spec{{64, 8}, {8}};
  const ToyModel a = InitToyModel(spec, 3), b = InitToyModel(spec, 3);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, InitToyModel(spec, 4));
  ASSERT_EQ(a.blocks.size(), 2u);
  EXPECT_EQ(a.blocks[0].rows(), 8u);
  EXPECT_EQ(a.blocks[0].cols(), 9u);
  EXPECT_EQ(a.blocks[1].rows(), 1u);
  EXPECT_EQ(a.blocks[1].cols(), 9u);
  EXPECT_THROW(InitToyModel({{64, 8}, {0}}, 1), PreconditionError);
}

struct Fixture {
  ToyModel model;
  ToyTask task;
  std::vector<TokenBatch> batches;
};

Fixture MakeFixture(std::size_t vocab, std::size_t dim, std::size_t steps,
                    std::size_t batch = 8) {
  WorkloadSpec w;
  w.vocab = vocab;
  w.batch = batch;
  w.seq_len = 6;
  w.zipf_s = 1.0;
  w.pad_fraction = 0.25;
  w.num_batches = steps;
  w.seed = 17;
  return {InitToyModel({{vocab, dim}, {dim}}, 5), MakeToyTask(vocab, 5),
          GenerateWorkload(w)};
}

double MaxRelDiff(const ToyModel& a, const ToyModel& b) {
  double worst = 0;
  auto cmp = [&](const DenseMatrix& x, const DenseMatrix& y) {
    EXPECT_EQ(x.rows(), y.rows());
    EXPECT_EQ(x.cols(), y.cols());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = std::abs(x.data()[i] - y.data()[i]);
      worst = std::max(worst, d / std::max(1.0, std::abs(y.data()[i])));
    }
  };
  cmp(a.embedding, b.embedding);
  for (std::size_t i = 0; i < a.blocks.size(); ++i) cmp(a.blocks[i], b.blocks[i]);
  return worst;
}

TrainResult Single(const Fixture& f, const AdamConfig& adam = {}) {
  WorkerGroup one(1);
  return TrainBaselineAllGather(one, f.model, f.task, f.batches, adam);
}

TEST(TrainTest, SingleWorkerHybridEqualsBaseline) {
  const Fixture f = MakeFixture(16, 4, 10);
  WorkerGroup one(1);
  for (Policy p : {Policy::kFifo, Policy::kHorizontal, Policy::kTwoD}) {
    const TrainResult h = TrainHybrid(one, f.model, f.task, f.batches, p, {});
    const TrainResult b = Single(f);
    EXPECT_EQ(h.losses, b.losses) << ToString(p);
    EXPECT_LE(MaxRelDiff(h.model, b.model), 1e-12) << ToString(p);
  }
}

TEST(TrainTest, FirstLossMatchesDirectEvaluation) {
  const Fixture f = MakeFixture(16, 4, 2);
  WorkerGroup two(2);
  const TrainResult h = TrainHybrid(two, f.model, f.task, f.batches, Policy::kTwoD, {});
  EXPECT_NEAR(h.losses[0], ToyLoss(f.model, f.task, f.batches[0]), 1e-12);
}

TEST(TrainTest, TwoWorkersMatchSingleWorker) {
  const Fixture f = MakeFixture(16, 4, 20);
  WorkerGroup two(2);
  const TrainResult base = Single(f);
  for (Policy p : {Policy::kFifo, Policy::kHorizontal, Policy::kTwoD}) {
    const TrainResult h = TrainHybrid(two, f.model, f.task, f.batches, p, {});
    EXPECT_LE(MaxRelDiff(h.model, base.model), 1e-9) << ToString(p);
    ASSERT_EQ(h.losses.size(), 20u);
    for (std::size_t i = 0; i < 20; ++i) EXPECT_NEAR(h.losses[i], base.losses[i], 1e-9);
  }
}

TEST(TrainTest, PoliciesNeverChangeValues) {
  const Fixture f = MakeFixture(64, 8, 30);
  WorkerGroup four(4);
  const TrainResult fifo = TrainHybrid(four, f.model, f.task, f.batches, Policy::kFifo, {});
  const TrainResult horiz =
      TrainHybrid(four, f.model, f.task, f.batches, Policy::kHorizontal, {});
  const TrainResult two_d = TrainHybrid(four, f.model, f.task, f.batches, Policy::kTwoD, {});
  EXPECT_EQ(fifo.losses, horiz.losses);
  EXPECT_EQ(fifo.losses, two_d.losses);
  EXPECT_EQ(fifo.model, horiz.model);
  EXPECT_EQ(fifo.model, two_d.model);
}

TEST(TrainTest, BaselineAllGatherMatchesSingleWorker) {
  const Fixture f = MakeFixture(64, 8, 30);
  WorkerGroup four(4);
  const TrainResult b = TrainBaselineAllGather(four, f.model, f.task, f.batches, {});
  EXPECT_LE(MaxRelDiff(b.model, Single(f).model), 1e-6);
  const TrainResult h = TrainHybrid(four, f.model, f.task, f.batches, Policy::kTwoD, {});
  EXPECT_LE(MaxRelDiff(h.model, b.model), 1e-6);
}

TEST(TrainTest, CommunicationFollowsPolicyPriorities) {
  const Fixture f = MakeFixture(16, 4, 2);
  WorkerGroup two(2);
  const auto order = [&](Policy p) {
    return TrainHybrid(two, f.model, f.task, f.batches, p, {}).comm_order;
  };
  EXPECT_EQ(order(Policy::kFifo),
            (std::vector<std::string>{"AllReduce Dense1 #1", "AllReduce Dense0 #1",
                                      "AlltoAll embedding #1", "AllReduce Dense1 #2",
                                      "AllReduce Dense0 #2", "AlltoAll embedding #2"}));
  EXPECT_EQ(order(Policy::kHorizontal),
            (std::vector<std::string>{"AlltoAll embedding #1", "AllReduce Dense0 #1",
                                      "AllReduce Dense1 #1", "AlltoAll embedding #2",
                                      "AllReduce Dense0 #2", "AllReduce Dense1 #2"}));
  EXPECT_EQ(order(Policy::kTwoD),
            (std::vector<std::string>{"AlltoAll prior #1", "AllReduce Dense0 #1",
                                      "AllReduce Dense1 #1", "AlltoAll prior #2",
                                      "AllReduce Dense0 #2", "AllReduce Dense1 #2",
                                      "AlltoAll scheduled #1", "AlltoAll scheduled #2"}));
}

TEST(TrainTest, LearnsTheToyTask) {
  const Fixture f = MakeFixture(64, 8, 200);
  WorkerGroup four(4);
  const TrainResult h =
      TrainHybrid(four, f.model, f.task, f.batches, Policy::kTwoD, AdamConfig{0.02});
  ASSERT_EQ(h.losses.size(), 200u);
  EXPECT_LT(h.losses.back(), 0.1 * h.losses.front());
}

TEST(TrainTest, RejectsUnevenBatches) {
  const Fixture f = MakeFixture(16, 4, 2, 6);
  WorkerGroup four(4);
  EXPECT_THROW(TrainHybrid(four, f.model, f.task, f.batches, Policy::kFifo, {}),
               PreconditionError);
  EXPECT_THROW(TrainBaselineAllGather(four, f.model, f.task, f.batches, {}),
               PreconditionError);
}

TEST(TrainTest, MoreWorkersThanColumnsIsInfeasible) {
  const Fixture f = MakeFixture(16, 2, 1, 4);
  WorkerGroup four(4);
  EXPECT_THROW(TrainHybrid(four, f.model, f.task, f.batches, Policy::kFifo, {}),
               InfeasiblePartitionError);
}

TEST(TrainTest, NonFiniteLossIsReported) {
  Fixture f = MakeFixture(16, 4, 2);
  f.task.token_value[f.batches[0][0][0]] = std::numeric_limits<double>::infinity();
  WorkerGroup two(2);
  EXPECT_THROW(TrainHybrid(two, f.model, f.task, f.batches, Policy::kTwoD, {}),
               TrainingDivergedError);
}

TEST(TrainTest, OverlappingSplitPartsAreCaught) {
  const Fixture f = MakeFixture(16, 4, 4);
  WorkerGroup two(2);
  HybridOptions opts;
  opts.overlap_split_parts = true;
  EXPECT_THROW(TrainHybrid(two, f.model, f.task, f.batches, Policy::kTwoD, {}, opts),
               DoubleUpdateError);
  // The flag only affects the two-part path. An aborted group stays aborted.
  WorkerGroup fresh(2);
  EXPECT_NO_THROW(TrainHybrid(fresh, f.model, f.task, f.batches, Policy::kFifo, {}, opts));
}

TEST(TrainTest, DivergenceReportsLastFiniteLoss) {
  Fixture f = MakeFixture(16, 4, 3);
  const std::vector<TokenId> first = Flatten(f.batches[0]);
  TokenId fresh_token = 0;
  for (TokenId t : Flatten(f.batches[1])) {
    if (std::find(first.begin(), first.end(), t) == first.end()) fresh_token = t;
  }
  ASSERT_NE(fresh_token, 0u);
  f.task.token_value[fresh_token] = std::numeric_limits<double>::infinity();
  WorkerGroup two(2);
  try {
    TrainHybrid(two, f.model, f.task, f.batches, Policy::kFifo, {});
    FAIL() << "expected divergence";
  } catch (const TrainingDivergedError& e) {
    EXPECT_NE(std::string(e.what()).find("step 2"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("last finite loss"), std::string::npos);
  }
}

}  // namespace
}  // namespace sparsecomm
