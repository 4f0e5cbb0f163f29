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

// Column-wise and row-wise partitioning of an embedding table.

#ifndef SPARSECOMM_PARTITION_H_
#define SPARSECOMM_PARTITION_H_

#include <cstddef>
#include <span>
#include <vector>

#include "sparsecomm/tensors.h"

namespace sparsecomm {

using TokenId = RowIndex;

struct EmbeddingSpec {
  std::size_t vocab = 0;  // L
  std::size_t dim = 0;    // D

  // Throws PreconditionError unless vocab >= 1 and dim >= 1.
  void Validate() const;
};

// Contiguous half-open range [start, start + count).
struct Range {
  std::size_t start = 0;
  std::size_t count = 0;
  std::size_t end() const { return start + count; }
  bool contains(std::size_t i) const { return i >= start && i < end(); }
  friend bool operator==(const Range&, const Range&) = default;
};

// Splits `total` into `parts` contiguous ranges ordered by rank. Sizes differ
// by at most one; the first total % parts ranks take the extra element.
std::vector<Range> BalancedRanges(std::size_t total, std::size_t parts);

// One worker's column slice: every row of the table, columns `cols`.
struct EmbeddingShard {
  EmbeddingSpec spec;
  std::size_t worker_rank = 0;
  Range cols;
  DenseMatrix weights;  // vocab x cols.count
};

// One worker's row slice, kept only for the load-balance comparison.
struct RowShard {
  EmbeddingSpec spec;
  std::size_t worker_rank = 0;
  Range rows;
  DenseMatrix weights;  // rows.count x dim
};

// Throws InfeasiblePartitionError if num_workers == 0 or > dim, and
// ShapeError if weights is not vocab x dim.
std::vector<EmbeddingShard> PartitionColumnwise(const EmbeddingSpec& spec,
                                                const DenseMatrix& weights,
                                                std::size_t num_workers);

// Throws InfeasiblePartitionError if num_workers == 0 or > vocab.
std::vector<RowShard> PartitionRowwise(const EmbeddingSpec& spec,
                                       const DenseMatrix& weights,
                                       std::size_t num_workers);

// |tokens| x shard.cols.count matrix; row i is the shard's slice of the
// embedding row tokens[i]. Throws VocabularyBoundsError for ids >= vocab.
DenseMatrix ShardLookup(const EmbeddingShard& shard,
                        std::span<const TokenId> tokens);

// Inverse of PartitionColumnwise. Shards must be in rank order.
DenseMatrix ReassembleColumns(std::span<const EmbeddingShard> shards);

// Lookup requests each shard serves for one global token batch. Every column
// shard serves the full batch; a row shard serves tokens inside its range.
std::vector<std::size_t> ColumnwiseRequestCounts(
    std::span<const EmbeddingShard> shards, std::span<const TokenId> tokens);
std::vector<std::size_t> RowwiseRequestCounts(std::span<const RowShard> shards,
                                              std::span<const TokenId> tokens);

}  // namespace sparsecomm

#endif  // SPARSECOMM_PARTITION_H_
