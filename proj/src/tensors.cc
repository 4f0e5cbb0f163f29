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

#include "sparsecomm/tensors.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "sparsecomm/errors.h"

namespace sparsecomm {

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols,
                         std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("dense matrix data length " + std::to_string(data_.size()) +
                     " does not match " + std::to_string(rows_) + "x" +
                     std::to_string(cols_));
  }
}

DenseMatrix DenseMatrix::SliceColumns(std::size_t col_start,
                                      std::size_t count) const {
  if (col_start + count > cols_) {
    throw ShapeError("column slice out of range");
  }
  DenseMatrix out(rows_, count);
  for (std::size_t r = 0; r < rows_; ++r) {
    std::copy_n(data_.begin() + r * cols_ + col_start, count,
                out.data_.begin() + r * count);
  }
  return out;
}

DenseMatrix ConcatColumns(std::span<const DenseMatrix> blocks) {
  if (blocks.empty()) return DenseMatrix();
  const std::size_t rows = blocks.front().rows();
  std::size_t cols = 0;
  for (const auto& b : blocks) {
    if (b.rows() != rows) throw ShapeError("column concat with unequal rows");
    cols += b.cols();
  }
  DenseMatrix out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    auto dst = out.row(r).begin();
    for (const auto& b : blocks) {
      auto src = b.row(r);
      dst = std::copy(src.begin(), src.end(), dst);
    }
  }
  return out;
}

SparseGrad::SparseGrad(std::size_t num_cols, std::vector<RowIndex> indices,
                       std::vector<double> values, bool coalesced)
    : num_cols_(num_cols),
      indices_(std::move(indices)),
      values_(std::move(values)),
      coalesced_(coalesced) {
  if (values_.size() != indices_.size() * num_cols_) {
    throw MalformedGradientError(
        "sparse gradient has " + std::to_string(values_.size()) +
        " values for " + std::to_string(indices_.size()) + " rows of width " +
        std::to_string(num_cols_));
  }
  if (coalesced_ && !std::is_sorted(indices_.begin(), indices_.end(),
                                    std::less_equal<RowIndex>())) {
    throw PreconditionError("gradient marked coalesced has unsorted indices");
  }
}

SparseGrad SparseGrad::FromRows(std::size_t num_cols,
                                const std::vector<Row>& rows) {
  SparseGrad g(num_cols);
  for (const auto& row : rows) {
    if (row.values.size() != num_cols) {
      throw MalformedGradientError(
          "row " + std::to_string(row.index) + " has " +
          std::to_string(row.values.size()) + " values, expected " +
          std::to_string(num_cols));
    }
    g.Append(row.index, row.values);
  }
  return g;
}

void SparseGrad::Append(RowIndex index, std::span<const double> value) {
  if (value.size() != num_cols_) {
    throw MalformedGradientError("appended row has wrong width");
  }
  indices_.push_back(index);
  values_.insert(values_.end(), value.begin(), value.end());
  coalesced_ = false;
}

void TensorSpec::Validate() const {
  if (!(size_m > 0.0)) throw PreconditionError("tensor size M must be > 0");
  if (!(density_alpha > 0.0 && density_alpha <= 1.0)) {
    throw PreconditionError("tensor density alpha must lie in (0, 1]");
  }
}

SparseGrad Coalesce(const SparseGrad& g) {
  if (g.coalesced()) {
    return SparseGrad(g.num_cols(),
                      {g.indices().begin(), g.indices().end()},
                      {g.values().begin(), g.values().end()}, true);
  }
  std::vector<std::size_t> order(g.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return g.index(a) < g.index(b);
  });

  const std::size_t width = g.num_cols();
  std::vector<RowIndex> indices;
  std::vector<double> values;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const std::size_t e = order[k];
    auto v = g.value(e);
    if (!indices.empty() && indices.back() == g.index(e)) {
      double* acc = values.data() + values.size() - width;
      for (std::size_t c = 0; c < width; ++c) acc[c] += v[c];
    } else {
      indices.push_back(g.index(e));
      values.insert(values.end(), v.begin(), v.end());
    }
  }
  return SparseGrad(width, std::move(indices), std::move(values), true);
}

SparseGrad IndexSelect(const SparseGrad& g, std::span<const RowIndex> keep) {
  if (!g.coalesced()) {
    throw PreconditionError("index_select requires a coalesced gradient");
  }
  std::vector<RowIndex> wanted(keep.begin(), keep.end());
  std::sort(wanted.begin(), wanted.end());

  std::vector<RowIndex> indices;
  std::vector<double> values;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (std::binary_search(wanted.begin(), wanted.end(), g.index(i))) {
      indices.push_back(g.index(i));
      auto v = g.value(i);
      values.insert(values.end(), v.begin(), v.end());
    }
  }
  return SparseGrad(g.num_cols(), std::move(indices), std::move(values), true);
}

DenseMatrix Densify(const SparseGrad& g, std::size_t rows) {
  DenseMatrix out(rows, g.num_cols());
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g.index(i) >= rows) {
      throw BoundsError("row index " + std::to_string(g.index(i)) +
                        " out of range for " + std::to_string(rows) + " rows");
    }
    auto dst = out.row(g.index(i));
    auto src = g.value(i);
    for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
  }
  return out;
}

void ScatterAddInPlace(DenseMatrix& target, const SparseGrad& g, double scale) {
  if (g.num_cols() != target.cols()) {
    throw ShapeError("scatter_add width " + std::to_string(g.num_cols()) +
                     " does not match target width " +
                     std::to_string(target.cols()));
  }
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g.index(i) >= target.rows()) {
      throw ShapeError("scatter_add row " + std::to_string(g.index(i)) +
                       " out of range");
    }
  }
  for (std::size_t i = 0; i < g.size(); ++i) {
    auto dst = target.row(g.index(i));
    auto src = g.value(i);
    for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += scale * src[c];
  }
}

DenseMatrix ScatterAdd(DenseMatrix target, const SparseGrad& g, double scale) {
  ScatterAddInPlace(target, g, scale);
  return target;
}

SparseGrad SliceColumns(const SparseGrad& g, std::size_t col_start,
                        std::size_t count) {
  if (col_start + count > g.num_cols()) {
    throw ShapeError("sparse column slice out of range");
  }
  std::vector<double> values;
  values.reserve(g.size() * count);
  for (std::size_t i = 0; i < g.size(); ++i) {
    auto v = g.value(i).subspan(col_start, count);
    values.insert(values.end(), v.begin(), v.end());
  }
  return SparseGrad(count, {g.indices().begin(), g.indices().end()},
                    std::move(values), g.coalesced());
}

SparseGrad ConcatEntries(std::span<const SparseGrad> parts) {
  if (parts.empty()) return SparseGrad();
  SparseGrad out(parts.front().num_cols());
  for (const auto& p : parts) {
    if (p.num_cols() != out.num_cols()) {
      throw ShapeError("concatenated gradients differ in width");
    }
    for (std::size_t i = 0; i < p.size(); ++i) out.Append(p.index(i), p.value(i));
  }
  return out;
}

}  // namespace sparsecomm
