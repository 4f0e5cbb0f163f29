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

// Dense row-major matrices and row-vector COO sparse gradients.
//
// A SparseGrad holds whole embedding rows: each entry is a row index plus a
// value vector of length num_cols. Entries may repeat a row index until the
// gradient is coalesced, after which indices are unique and ascending.

#ifndef SPARSECOMM_TENSORS_H_
#define SPARSECOMM_TENSORS_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace sparsecomm {

using RowIndex = std::uint64_t;

class DenseMatrix {
 public:
  DenseMatrix() = default;
  // Zero-initialised rows x cols matrix.
  DenseMatrix(std::size_t rows, std::size_t cols);
  // Throws ShapeError unless data.size() == rows * cols.
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  std::span<const double> data() const { return data_; }
  std::span<double> mutable_data() { return data_; }

  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }
  double& operator()(std::size_t r, std::size_t c) {
    return data_[r * cols_ + c];
  }

  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols_, cols_);
  }
  std::span<double> row(std::size_t r) {
    return std::span<double>(data_).subspan(r * cols_, cols_);
  }

  // Columns [col_start, col_start + count) of every row.
  DenseMatrix SliceColumns(std::size_t col_start, std::size_t count) const;

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Places the blocks side by side. All blocks must have the same row count.
DenseMatrix ConcatColumns(std::span<const DenseMatrix> blocks);

class SparseGrad {
 public:
  struct Row {
    RowIndex index;
    std::vector<double> values;
  };

  explicit SparseGrad(std::size_t num_cols = 0) : num_cols_(num_cols) {}

  // `values` is entry-major: entry i occupies [i * num_cols, (i+1) * num_cols).
  // Throws MalformedGradientError on a length mismatch, and PreconditionError
  // when `coalesced` is claimed but indices are not strictly increasing.
  SparseGrad(std::size_t num_cols, std::vector<RowIndex> indices,
             std::vector<double> values, bool coalesced = false);

  // Throws MalformedGradientError if any row vector has length != num_cols.
  static SparseGrad FromRows(std::size_t num_cols, const std::vector<Row>& rows);

  std::size_t num_cols() const { return num_cols_; }
  std::size_t size() const { return indices_.size(); }
  bool empty() const { return indices_.empty(); }
  bool coalesced() const { return coalesced_ || indices_.empty(); }
  // Number of real values carried (entries x num_cols).
  std::size_t value_count() const { return values_.size(); }

  RowIndex index(std::size_t i) const { return indices_[i]; }
  std::span<const double> value(std::size_t i) const {
    return std::span<const double>(values_).subspan(i * num_cols_, num_cols_);
  }
  std::span<const RowIndex> indices() const { return indices_; }
  std::span<const double> values() const { return values_; }

  // Appends an entry; the result is no longer marked coalesced.
  void Append(RowIndex index, std::span<const double> value);

  friend bool operator==(const SparseGrad& a, const SparseGrad& b) {
    return a.num_cols_ == b.num_cols_ && a.indices_ == b.indices_ &&
           a.values_ == b.values_ && a.coalesced() == b.coalesced();
  }

 private:
  std::size_t num_cols_;
  std::vector<RowIndex> indices_;
  std::vector<double> values_;
  bool coalesced_ = false;
};

// Size and density of one sparse tensor, as used by the cost formulas.
struct TensorSpec {
  double size_m = 0.0;         // element count
  double density_alpha = 1.0;  // fraction of non-zero elements, in (0, 1]

  // Throws PreconditionError on size_m <= 0 or alpha outside (0, 1].
  void Validate() const;
};

// Merges duplicate rows by summation. Rows come out in ascending index
// order; duplicates are summed in their original entry order, so the result
// is bit-reproducible. Idempotent on coalesced input.
SparseGrad Coalesce(const SparseGrad& g);

// Entries of a coalesced gradient whose index is in `keep` (any order,
// duplicates ignored). Throws PreconditionError on uncoalesced input.
SparseGrad IndexSelect(const SparseGrad& g, std::span<const RowIndex> keep);

// Dense rows x num_cols matrix with duplicate rows accumulated in entry order.
// Throws BoundsError if an index is >= rows.
DenseMatrix Densify(const SparseGrad& g, std::size_t rows);

// target[row] += scale * value for each entry, in entry order. Throws
// ShapeError when columns differ or an index is out of range.
void ScatterAddInPlace(DenseMatrix& target, const SparseGrad& g, double scale);
DenseMatrix ScatterAdd(DenseMatrix target, const SparseGrad& g, double scale);

// Same entries restricted to columns [col_start, col_start + count).
SparseGrad SliceColumns(const SparseGrad& g, std::size_t col_start,
                        std::size_t count);

// Entries of every part, concatenated in order. Parts must agree on num_cols.
SparseGrad ConcatEntries(std::span<const SparseGrad> parts);

}  // namespace sparsecomm

#endif  // SPARSECOMM_TENSORS_H_
