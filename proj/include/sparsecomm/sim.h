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

// Deterministic discrete-event model of one data-parallel training worker:
// a compute stream running forward/backward passes and a single serial
// communication channel, under three communication policies.
//
//   kFifo        forward passes in model order; communication leaves in the
//                order gradients become ready; iteration k+1 starts only when
//                every transfer of iteration k is done.
//   kHorizontal  embedding forward passes hoisted to the front; the channel
//                serves a priority queue; each forward pass waits only for the
//                transfers it reads.
//   kTwoD        kHorizontal plus the vertical split: after backward a split
//                step shrinks each sparse gradient to its coalesced size and
//                sends the prior part first and the scheduled part last, as
//                background traffic that yields to everything else.
//
// Workers are homogeneous and collectives are synchronous, so every worker
// follows the same timeline; the trace repeats it per worker.
//
// Iteration time is measured between the start of the first backward pass
// and the start of backward pass I+1, i.e. over I steady iterations.

#ifndef SPARSECOMM_SIM_H_
#define SPARSECOMM_SIM_H_

#include <cstddef>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "sparsecomm/cost.h"
#include "sparsecomm/schedule.h"

namespace sparsecomm {

enum class Policy { kFifo, kHorizontal, kTwoD };

std::string_view ToString(Policy p);
// Accepts "fifo", "horizontal", "2d". Throws ConfigError otherwise.
Policy ParsePolicy(std::string_view name);

struct ModuleCost {
  double fp_seconds = 0.0;
  double bp_seconds = 0.0;
  // Embeddings: fraction of the table's elements present in one step's
  // gradient. Ignored for dense blocks.
  double density = 1.0;
  // Embeddings: elements of lookup results exchanged in the forward pass.
  double data_elems = 0.0;
};

struct SimConfig {
  ClusterSpec cluster;
  ModuleGraph graph;
  std::map<std::string, ModuleCost> costs;  // one per module
  Policy policy = Policy::kFifo;
  std::size_t iterations = 1;
  // Vertical split compute per iteration (kTwoD only).
  double split_seconds = 0.0;
  // Coalesced rows / original rows, and prior rows / coalesced rows.
  double coalesced_ratio = 1.0;
  double prior_ratio = 1.0;

  // Throws PreconditionError (or DependencyError for the graph).
  void Validate() const;
};

enum class IntervalKind { kForward, kBackward, kComm, kSplit, kIdle };
std::string_view ToString(IntervalKind k);

enum class CommRole { kNone, kDenseGrad, kEmbeddingData, kSparseGrad, kPriorGrad,
                      kScheduledGrad };

struct Interval {
  double start = 0.0;
  double end = 0.0;
  IntervalKind kind = IntervalKind::kIdle;
  std::string label;
  CommRole role = CommRole::kNone;
  std::size_t iteration = 0;  // 1-based; 0 for idle gaps
  double elements = 0.0;  // comm only; split across preempted segments

  double duration() const { return end - start; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

struct WorkerTrace {
  std::size_t worker = 0;
  std::vector<Interval> intervals;  // sorted by (start, kind)
  friend bool operator==(const WorkerTrace&, const WorkerTrace&) = default;
};

struct EventTrace {
  Policy policy = Policy::kFifo;
  std::size_t iterations = 0;
  double window_start = 0.0;
  double window_end = 0.0;
  std::vector<WorkerTrace> workers;
  friend bool operator==(const EventTrace&, const EventTrace&) = default;
};

// Throws SchedulingDeadlockError naming the blocked work if the timeline
// cannot progress.
EventTrace Simulate(const SimConfig& cfg);

struct StallReport {
  double iteration_time = 0.0;
  double compute_time = 0.0;       // model FP + BP per iteration
  double computation_stall = 0.0;  // idle + split
  double idle = 0.0;
  double split = 0.0;
  double comm_time = 0.0;           // channel busy time inside the window
  double overlap_fraction = 0.0;    // share of comm_time hidden under compute
  double total_comm_seconds = 0.0;  // every transfer in the trace
  double sparse_comm_seconds = 0.0;
  double sparse_comm_elements = 0.0;
};

// Per-iteration metrics of worker 0. All zero for an empty trace.
StallReport ComputeStallReport(const EventTrace& trace);

// Shortest compute idle gap that directly follows the last backward pass of
// an iteration. Used to bound the split cost. Zero for an empty trace.
double PostBackwardIdleWindow(const EventTrace& trace);

// One JSON object per line: {"worker","start","end","kind","label"}.
void WriteTraceJsonl(const EventTrace& trace, std::ostream& out);

}  // namespace sparsecomm

#endif  // SPARSECOMM_SIM_H_
