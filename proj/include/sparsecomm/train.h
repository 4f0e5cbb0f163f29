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

// Synchronous data-parallel training of a small embedding + dense model over
// an in-process worker group.

#ifndef SPARSECOMM_TRAIN_H_
#define SPARSECOMM_TRAIN_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "sparsecomm/comm.h"
#include "sparsecomm/partition.h"
#include "sparsecomm/sim.h"
#include "sparsecomm/tensors.h"
#include "sparsecomm/workload.h"

namespace sparsecomm {

struct AdamConfig {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  // Throws PreconditionError.
  void Validate() const;
};

// Adam moments for one parameter matrix. Sparse gradients update only the
// rows they carry; the step counter is shared by all parts of an iteration
// and committed by the final one.
class ElementwiseAdamState {
 public:
  ElementwiseAdamState(std::size_t rows, std::size_t cols, AdamConfig cfg);

  std::uint64_t step() const { return step_; }
  const DenseMatrix& first_moment() const { return m_; }
  const DenseMatrix& second_moment() const { return v_; }
  const AdamConfig& config() const { return cfg_; }

  // `part` must be coalesced (PreconditionError). A row already updated in
  // the current iteration raises DoubleUpdateError; out-of-range rows raise
  // BoundsError; a column mismatch raises ShapeError.
  void ApplyPartial(DenseMatrix& params, const SparseGrad& part, bool final_part);

  // Full-tensor step. Throws ShapeError, or DoubleUpdateError if a partial
  // iteration is still open.
  void ApplyDense(DenseMatrix& params, const DenseMatrix& grad);

 private:
  void UpdateRow(std::span<double> p, std::size_t row, std::span<const double> g,
                 double step_size);
  double StepSize() const;

  AdamConfig cfg_;
  std::uint64_t step_ = 0;
  DenseMatrix m_;
  DenseMatrix v_;
  std::unordered_set<RowIndex> touched_;
};

struct ToyModelSpec {
  EmbeddingSpec embedding;
  // Output widths of the hidden dense blocks; a final width-1 linear block
  // is always appended.
  std::vector<std::size_t> hidden;

  void Validate() const;
};

struct ToyModel {
  DenseMatrix embedding;             // vocab x dim
  std::vector<DenseMatrix> blocks;   // out x (in + 1), bias in the last column

  friend bool operator==(const ToyModel&, const ToyModel&) = default;
};

// Weights uniform in [-scale, scale) with scale = 1/sqrt(fan_in).
ToyModel InitToyModel(const ToyModelSpec& spec, std::uint64_t seed);

// Regression target of a sequence: the sum of fixed per-token values.
struct ToyTask {
  std::vector<double> token_value;

  double Target(const Sequence& seq) const;
};

ToyTask MakeToyTask(std::size_t vocab, std::uint64_t seed);

// Sum of the token embeddings, then the dense blocks (tanh on all but the
// last). Throws VocabularyBoundsError.
double ToyForward(const ToyModel& model, const Sequence& seq);

// Mean squared error over the batch.
double ToyLoss(const ToyModel& model, const ToyTask& task, const TokenBatch& batch);

struct TrainResult {
  ToyModel model;
  std::vector<double> losses;            // loss before each step's update
  std::vector<std::string> comm_order;   // rank 0's executor order, all steps
};

// Column-partitioned embedding with lookups redistributed by AlltoAll, dense
// gradients all-reduced, and embedding gradients exchanged by AlltoAll of
// column slices. kTwoD splits each worker's gradient into the rows the next
// batch reads and the rest; the rest is exchanged and applied during the
// following step. Each global batch must split evenly over the group
// (PreconditionError). Throws TrainingDivergedError on a non-finite loss.
struct HybridOptions {
  // Debug only: under kTwoD, also ship each step's prior rows with its
  // scheduled part so the optimizer sees them twice.
  bool overlap_split_parts = false;
};

TrainResult TrainHybrid(WorkerGroup& group, const ToyModel& init, const ToyTask& task,
                        std::span<const TokenBatch> batches, Policy policy,
                        const AdamConfig& adam, const HybridOptions& options = {});

// Replicated embedding; sparse gradients are all-gathered and summed locally.
// With a group of one this is plain single-worker training.
TrainResult TrainBaselineAllGather(WorkerGroup& group, const ToyModel& init,
                                   const ToyTask& task,
                                   std::span<const TokenBatch> batches,
                                   const AdamConfig& adam);

}  // namespace sparsecomm

#endif  // SPARSECOMM_TRAIN_H_
