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

#include "sparsecomm/workload.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "sparsecomm/errors.h"

namespace sparsecomm {
namespace {

// Inverse-CDF sampler over the non-pad ids, rank 1 being the smallest id.
class ZipfSampler {
 public:
  ZipfSampler(std::size_t vocab, TokenId pad, double s) : pad_(pad) {
    cdf_.reserve(vocab - 1);
    double total = 0.0;
    for (std::size_t r = 1; r < vocab; ++r) {
      total += std::pow(static_cast<double>(r), -s);
      cdf_.push_back(total);
    }
    for (double& c : cdf_) c /= total;
    cdf_.back() = 1.0;
  }

  TokenId operator()(std::mt19937_64& rng) const {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    const auto rank = static_cast<TokenId>(it - cdf_.begin());
    return rank < pad_ ? rank : rank + 1;
  }

 private:
  TokenId pad_;
  std::vector<double> cdf_;
};

}  // namespace

std::size_t WorkloadSpec::pad_per_sequence() const {
  return static_cast<std::size_t>(
      std::llround(pad_fraction * static_cast<double>(seq_len)));
}

void WorkloadSpec::Validate() const {
  if (vocab < 2) throw PreconditionError("workload vocabulary must hold at least 2 ids");
  if (batch == 0 || seq_len == 0) {
    throw PreconditionError("workload batch and sequence length must be positive");
  }
  if (!(zipf_s >= 0.0) || !std::isfinite(zipf_s)) {
    throw PreconditionError("zipf exponent must be finite and >= 0");
  }
  if (pad_id >= vocab) {
    throw PreconditionError("pad id " + std::to_string(pad_id) +
                            " outside vocabulary of " + std::to_string(vocab));
  }
  if (!(pad_fraction >= 0.0 && pad_fraction <= 1.0)) {
    throw PreconditionError("pad fraction must lie in [0, 1]");
  }
}

std::vector<TokenBatch> GenerateWorkload(const WorkloadSpec& spec) {
  spec.Validate();
  const ZipfSampler sample(spec.vocab, spec.pad_id, spec.zipf_s);
  std::mt19937_64 rng(spec.seed);
  const std::size_t pads = spec.pad_per_sequence();
  const std::size_t words = spec.seq_len - pads;

  std::vector<TokenBatch> out(spec.num_batches);
  for (auto& batch : out) {
    batch.resize(spec.batch);
    for (auto& seq : batch) {
      seq.reserve(spec.seq_len);
      for (std::size_t i = 0; i < words; ++i) seq.push_back(sample(rng));
      seq.resize(spec.seq_len, spec.pad_id);
    }
  }
  return out;
}

std::vector<TokenId> Flatten(const TokenBatch& batch) {
  std::vector<TokenId> out;
  for (const auto& seq : batch) out.insert(out.end(), seq.begin(), seq.end());
  return out;
}

std::vector<BatchStats> ComputeBatchStats(std::span<const TokenBatch> batches) {
  std::vector<std::vector<TokenId>> unique(batches.size());
  std::vector<BatchStats> stats(batches.size());
  for (std::size_t i = 0; i < batches.size(); ++i) {
    auto& u = unique[i];
    u = Flatten(batches[i]);
    stats[i].original = u.size();
    std::sort(u.begin(), u.end());
    u.erase(std::unique(u.begin(), u.end()), u.end());
    stats[i].coalesced = u.size();
  }
  for (std::size_t i = 0; i + 1 < batches.size(); ++i) {
    std::vector<TokenId> both;
    std::set_intersection(unique[i].begin(), unique[i].end(), unique[i + 1].begin(),
                          unique[i + 1].end(), std::back_inserter(both));
    stats[i].prior = both.size();
  }
  return stats;
}

WorkloadRatios MeanRatios(std::span<const BatchStats> stats) {
  double original = 0, coalesced = 0, prior = 0, coalesced_with_next = 0;
  for (std::size_t i = 0; i < stats.size(); ++i) {
    original += static_cast<double>(stats[i].original);
    coalesced += static_cast<double>(stats[i].coalesced);
    if (i + 1 < stats.size()) {
      prior += static_cast<double>(stats[i].prior);
      coalesced_with_next += static_cast<double>(stats[i].coalesced);
    }
  }
  WorkloadRatios r;
  if (original > 0) r.coalesced_ratio = coalesced / original;
  if (coalesced_with_next > 0) r.prior_ratio = prior / coalesced_with_next;
  return r;
}

}  // namespace sparsecomm
