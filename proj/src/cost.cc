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

#include "sparsecomm/cost.h"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "sparsecomm/errors.h"

namespace sparsecomm {

void ClusterSpec::Validate() const {
  if (nodes < 1 || workers_per_node < 1) {
    throw PreconditionError("cluster needs n >= 1 and w >= 1");
  }
  if (servers < 1 || servers > nodes) {
    throw PreconditionError("parameter servers S must satisfy 1 <= S <= n");
  }
  if (!(bandwidth > 0.0)) throw PreconditionError("bandwidth B must be > 0");
  if (!(latency >= 0.0)) throw PreconditionError("latency beta must be >= 0");
}

std::string_view ToString(Strategy s) {
  switch (s) {
    case Strategy::kAllReduce:
      return "AllReduce";
    case Strategy::kParameterServer:
      return "PS";
    case Strategy::kAllGather:
      return "AllGather";
    case Strategy::kAllToAll:
      return "AlltoAll";
  }
  return "?";
}

double CostRingAllReduceCall(std::size_t num_workers, double elements,
                             double bandwidth, double latency) {
  if (num_workers <= 1) return 0.0;
  const double n = static_cast<double>(num_workers);
  return 2.0 * (n - 1.0) * (elements / (n * bandwidth) + latency);
}

double CostAllToAllCall(std::size_t num_workers, double elements,
                        double bandwidth, double latency) {
  if (num_workers <= 1) return 0.0;
  const double n = static_cast<double>(num_workers);
  return (n - 1.0) * (elements / (n * bandwidth) + latency);
}

double CostAllReduce(const ClusterSpec& c, const TensorSpec& t) {
  return CostRingAllReduceCall(c.total_workers(), t.size_m, c.bandwidth,
                               c.latency);
}

PsCost CostParameterServer(const ClusterSpec& c, const TensorSpec& t) {
  const double n = static_cast<double>(c.total_workers());
  const double payload = t.density_alpha * t.size_m;
  auto cost = [&](double servers) {
    return 2.0 * n * (payload / (servers * c.bandwidth) + c.latency);
  };
  return {cost(static_cast<double>(c.servers)),
          cost(static_cast<double>(c.nodes))};
}

double CostAllGather(const ClusterSpec& c, const TensorSpec& t) {
  const double n = static_cast<double>(c.total_workers());
  return (n - 1.0) * (t.density_alpha * t.size_m / c.bandwidth + c.latency);
}

double CostAllToAll(const ClusterSpec& c, const TensorSpec& t) {
  // Same expression shape as the ring AllReduce so that alpha = 1 ties exactly.
  return CostRingAllReduceCall(c.total_workers(), t.density_alpha * t.size_m,
                               c.bandwidth, c.latency);
}

double CostReport::seconds(Strategy s) const {
  for (const auto& e : ranked) {
    if (e.strategy == s) return e.seconds;
  }
  return 0.0;
}

std::size_t CostReport::rank_of(Strategy s) const {
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (ranked[i].strategy == s) return i + 1;
  }
  return 0;
}

CostReport RankStrategies(const ClusterSpec& c, const TensorSpec& t) {
  c.Validate();
  t.Validate();
  CostReport report;
  report.ps = CostParameterServer(c, t);
  report.ranked = {{Strategy::kAllReduce, CostAllReduce(c, t)},
                   {Strategy::kParameterServer, report.ps.at_servers},
                   {Strategy::kAllGather, CostAllGather(c, t)},
                   {Strategy::kAllToAll, CostAllToAll(c, t)}};
  std::stable_sort(report.ranked.begin(), report.ranked.end(),
                   [](const StrategyCost& a, const StrategyCost& b) {
                     return a.seconds < b.seconds;
                   });

  const double allreduce = report.seconds(Strategy::kAllReduce);
  const double alltoall = report.seconds(Strategy::kAllToAll);
  report.alltoall_le_allreduce = alltoall <= allreduce;
  report.alltoall_allreduce_tie = alltoall == allreduce;

  const std::size_t n = c.total_workers();
  std::ostringstream note;
  if (report.alltoall_allreduce_tie) {
    note << "AlltoAll and AllReduce tie";
    if (t.density_alpha == 1.0) note << " (dense tensor, alpha = 1)";
    report.notes.push_back(note.str());
  } else if (report.alltoall_le_allreduce) {
    report.notes.push_back("AlltoAll is cheaper than AllReduce (alpha <= 1)");
  }

  if (n >= 2) {
    // (N-1)(aM/B + b) = 2(N-1)(aM/(NB) + b)  <=>  b = (aM/B)(1 - 2/N)
    const double threshold = t.density_alpha * t.size_m / c.bandwidth *
                             (1.0 - 2.0 / static_cast<double>(n));
    report.allgather_beta_threshold = threshold;
    std::ostringstream cross;
    if (threshold > 0.0) {
      cross << "AllGather beats AlltoAll only when beta > " << threshold;
    } else {
      cross << "AllGather beats AlltoAll for every beta > 0 at N = " << n;
    }
    report.notes.push_back(cross.str());
  }
  std::ostringstream ps;
  ps << "PS lower bound (S = n = " << c.nodes << "): " << report.ps.lower_bound;
  report.notes.push_back(ps.str());
  return report;
}

}  // namespace sparsecomm
