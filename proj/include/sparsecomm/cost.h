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

// Closed-form communication overhead of one sparse tensor per training step
// under AllReduce, parameter server, AllGather and AlltoAll exchange.
//
// Units are abstract: sizes in elements, bandwidth in elements per second,
// latency and results in seconds.

#ifndef SPARSECOMM_COST_H_
#define SPARSECOMM_COST_H_

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sparsecomm/tensors.h"

namespace sparsecomm {

struct ClusterSpec {
  std::size_t nodes = 1;             // n
  std::size_t workers_per_node = 1;  // w
  std::size_t servers = 1;           // S, 1 <= S <= n
  double bandwidth = 1.0;            // B > 0
  double latency = 0.0;              // beta >= 0

  std::size_t total_workers() const { return nodes * workers_per_node; }  // N

  // Throws PreconditionError on any violated invariant.
  void Validate() const;
};

enum class Strategy { kAllReduce, kParameterServer, kAllGather, kAllToAll };

std::string_view ToString(Strategy s);

double CostAllReduce(const ClusterSpec& c, const TensorSpec& t);

struct PsCost {
  double at_servers = 0.0;   // with the configured S
  double lower_bound = 0.0;  // with S = n
};
PsCost CostParameterServer(const ClusterSpec& c, const TensorSpec& t);

double CostAllGather(const ClusterSpec& c, const TensorSpec& t);

// Two AlltoAll calls per step: lookup results out, gradients back.
double CostAllToAll(const ClusterSpec& c, const TensorSpec& t);

// One AlltoAll call moving `elements` in total, split evenly over N peers.
double CostAllToAllCall(std::size_t num_workers, double elements,
                        double bandwidth, double latency);
// One ring AllReduce over a dense tensor of `elements`.
double CostRingAllReduceCall(std::size_t num_workers, double elements,
                             double bandwidth, double latency);

struct StrategyCost {
  Strategy strategy;
  double seconds;
};

struct CostReport {
  // All four strategies, ascending by cost. Ties keep the order AllReduce,
  // PS, AllGather, AlltoAll.
  std::vector<StrategyCost> ranked;
  PsCost ps;
  bool alltoall_le_allreduce = false;
  bool alltoall_allreduce_tie = false;
  // Latency above which AllGather beats AlltoAll; nullopt for N < 2.
  // Zero or negative means AllGather wins for every positive latency.
  std::optional<double> allgather_beta_threshold;
  std::vector<std::string> notes;

  double seconds(Strategy s) const;
  std::size_t rank_of(Strategy s) const;  // 1-based
};

CostReport RankStrategies(const ClusterSpec& c, const TensorSpec& t);

}  // namespace sparsecomm

#endif  // SPARSECOMM_COST_H_
