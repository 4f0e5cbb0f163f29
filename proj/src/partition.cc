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

#include "sparsecomm/partition.h"

#include <string>

#include "sparsecomm/errors.h"

namespace sparsecomm {
namespace {

void CheckTableShape(const EmbeddingSpec& spec, const DenseMatrix& weights) {
  spec.Validate();
  if (weights.rows() != spec.vocab || weights.cols() != spec.dim) {
    throw ShapeError("embedding weights are " + std::to_string(weights.rows()) +
                     "x" + std::to_string(weights.cols()) + ", expected " +
                     std::to_string(spec.vocab) + "x" + std::to_string(spec.dim));
  }
}

}  // namespace

void EmbeddingSpec::Validate() const {
  if (vocab < 1 || dim < 1) {
    throw PreconditionError("embedding needs vocab >= 1 and dim >= 1");
  }
}

std::vector<Range> BalancedRanges(std::size_t total, std::size_t parts) {
  std::vector<Range> out;
  if (parts == 0) return out;
  out.reserve(parts);
  const std::size_t base = total / parts;
  const std::size_t extra = total % parts;
  std::size_t start = 0;
  for (std::size_t r = 0; r < parts; ++r) {
    const std::size_t count = base + (r < extra ? 1 : 0);
    out.push_back({start, count});
    start += count;
  }
  return out;
}

std::vector<EmbeddingShard> PartitionColumnwise(const EmbeddingSpec& spec,
                                                const DenseMatrix& weights,
                                                std::size_t num_workers) {
  CheckTableShape(spec, weights);
  if (num_workers == 0 || num_workers > spec.dim) {
    throw InfeasiblePartitionError(
        "cannot split " + std::to_string(spec.dim) + " columns across " +
        std::to_string(num_workers) + " workers");
  }
  std::vector<EmbeddingShard> shards;
  shards.reserve(num_workers);
  const auto ranges = BalancedRanges(spec.dim, num_workers);
  for (std::size_t r = 0; r < num_workers; ++r) {
    shards.push_back({spec, r, ranges[r],
                      weights.SliceColumns(ranges[r].start, ranges[r].count)});
  }
  return shards;
}

std::vector<RowShard> PartitionRowwise(const EmbeddingSpec& spec,
                                       const DenseMatrix& weights,
                                       std::size_t num_workers) {
  CheckTableShape(spec, weights);
  if (num_workers == 0 || num_workers > spec.vocab) {
    throw InfeasiblePartitionError(
        "cannot split " + std::to_string(spec.vocab) + " rows across " +
        std::to_string(num_workers) + " workers");
  }
  std::vector<RowShard> shards;
  shards.reserve(num_workers);
  const auto ranges = BalancedRanges(spec.vocab, num_workers);
  for (std::size_t r = 0; r < num_workers; ++r) {
    const Range range = ranges[r];
    DenseMatrix part(range.count, spec.dim);
    for (std::size_t i = 0; i < range.count; ++i) {
      auto src = weights.row(range.start + i);
      std::copy(src.begin(), src.end(), part.row(i).begin());
    }
    shards.push_back({spec, r, range, std::move(part)});
  }
  return shards;
}

DenseMatrix ShardLookup(const EmbeddingShard& shard,
                        std::span<const TokenId> tokens) {
  DenseMatrix out(tokens.size(), shard.cols.count);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] >= shard.spec.vocab) {
      throw VocabularyBoundsError("token id " + std::to_string(tokens[i]) +
                                  " outside vocabulary of " +
                                  std::to_string(shard.spec.vocab));
    }
    auto src = shard.weights.row(tokens[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

DenseMatrix ReassembleColumns(std::span<const EmbeddingShard> shards) {
  std::vector<DenseMatrix> blocks;
  blocks.reserve(shards.size());
  for (const auto& s : shards) blocks.push_back(s.weights);
  return ConcatColumns(blocks);
}

std::vector<std::size_t> ColumnwiseRequestCounts(
    std::span<const EmbeddingShard> shards, std::span<const TokenId> tokens) {
  std::vector<std::size_t> counts(shards.size(), 0);
  for (TokenId t : tokens) {
    for (std::size_t s = 0; s < shards.size(); ++s) {
      if (t < shards[s].spec.vocab) ++counts[s];
    }
  }
  return counts;
}

std::vector<std::size_t> RowwiseRequestCounts(std::span<const RowShard> shards,
                                              std::span<const TokenId> tokens) {
  std::vector<std::size_t> counts(shards.size(), 0);
  for (TokenId t : tokens) {
    for (std::size_t s = 0; s < shards.size(); ++s) {
      if (shards[s].rows.contains(t)) {
        ++counts[s];
        break;
      }
    }
  }
  return counts;
}

}  // namespace sparsecomm
