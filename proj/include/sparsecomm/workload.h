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

// Synthetic token batches with Zipf-distributed ids and trailing padding.

#ifndef SPARSECOMM_WORKLOAD_H_
#define SPARSECOMM_WORKLOAD_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "sparsecomm/partition.h"

namespace sparsecomm {

struct WorkloadSpec {
  std::size_t vocab = 0;
  std::size_t batch = 1;    // sequences per batch
  std::size_t seq_len = 1;  // tokens per sequence, padding included
  double zipf_s = 1.0;      // 0 is uniform
  TokenId pad_id = 0;
  double pad_fraction = 0.0;  // trailing share of each sequence that is padding
  std::size_t num_batches = 1;
  std::uint64_t seed = 0;

  std::size_t pad_per_sequence() const;
  // Throws PreconditionError.
  void Validate() const;
};

using Sequence = std::vector<TokenId>;
using TokenBatch = std::vector<Sequence>;

std::vector<TokenBatch> GenerateWorkload(const WorkloadSpec& spec);

std::vector<TokenId> Flatten(const TokenBatch& batch);

struct BatchStats {
  std::size_t original = 0;   // tokens in the batch
  std::size_t coalesced = 0;  // distinct tokens
  std::size_t prior = 0;      // distinct tokens also present in the next batch
};

// The last batch has no successor and reports prior = 0.
std::vector<BatchStats> ComputeBatchStats(std::span<const TokenBatch> batches);

struct WorkloadRatios {
  double coalesced_ratio = 0.0;  // sum(coalesced) / sum(original)
  double prior_ratio = 0.0;      // sum(prior) / sum(coalesced), last batch excluded
};

WorkloadRatios MeanRatios(std::span<const BatchStats> stats);

}  // namespace sparsecomm

#endif  // SPARSECOMM_WORKLOAD_H_
