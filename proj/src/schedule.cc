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

#include "sparsecomm/schedule.h"

#include <algorithm>
#include <set>

namespace sparsecomm {
namespace {

// Dense-block topological order; ties broken by name.
std::vector<std::string> DenseTopologicalOrder(const ModuleGraph& g) {
  std::map<std::string, std::size_t> indegree;
  for (const auto& m : g.modules) {
    if (m.kind == ModuleKind::kDenseBlock) indegree[m.name] = 0;
  }
  for (const auto& [from, to] : g.edges) {
    if (g.module(from).kind == ModuleKind::kDenseBlock) ++indegree[to];
  }
  std::set<std::string> ready;
  for (const auto& [name, deg] : indegree) {
    if (deg == 0) ready.insert(name);
  }
  std::vector<std::string> order;
  while (!ready.empty()) {
    std::string name = *ready.begin();
    ready.erase(ready.begin());
    order.push_back(name);
    for (const auto& next : g.consumers(name)) {
      if (--indegree[next] == 0) ready.insert(next);
    }
  }
  if (order.size() != indegree.size()) {
    std::string cycle;
    for (const auto& [name, deg] : indegree) {
      if (deg > 0) cycle += (cycle.empty() ? "" : ", ") + name;
    }
    throw DependencyError("module graph has a cycle through: " + cycle);
  }
  return order;
}

std::vector<std::string> SortedEmbeddings(const ModuleGraph& g) {
  std::vector<std::string> out;
  for (const auto& m : g.modules) {
    if (m.kind == ModuleKind::kEmbedding) out.push_back(m.name);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

void ModuleGraph::Validate() const {
  std::set<std::string> names;
  for (const auto& m : modules) {
    if (!names.insert(m.name).second) {
      throw DependencyError("duplicate module name '" + m.name + "'");
    }
  }
  for (const auto& [from, to] : edges) {
    if (!names.count(from) || !names.count(to)) {
      throw DependencyError("edge " + from + " -> " + to +
                            " references an unknown module");
    }
    if (module(to).kind == ModuleKind::kEmbedding) {
      throw DependencyError("embedding '" + to +
                            "' cannot depend on another module");
    }
  }
  DenseTopologicalOrder(*this);
}

const ModuleDecl& ModuleGraph::module(const std::string& name) const {
  for (const auto& m : modules) {
    if (m.name == name) return m;
  }
  throw DependencyError("unknown module '" + name + "'");
}

std::vector<std::string> ModuleGraph::consumers(const std::string& name) const {
  std::vector<std::string> out;
  for (const auto& [from, to] : edges) {
    if (from == name) out.push_back(to);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::string> DefaultForwardOrder(const ModuleGraph& g) {
  g.Validate();
  const auto dense = DenseTopologicalOrder(g);
  const auto embeddings = SortedEmbeddings(g);

  std::vector<std::string> order;
  std::set<std::string> placed;
  for (const auto& e : embeddings) {
    if (g.consumers(e).empty()) {
      order.push_back(e);
      placed.insert(e);
    }
  }
  for (const auto& block : dense) {
    for (const auto& e : embeddings) {
      if (placed.count(e)) continue;
      const auto uses = g.consumers(e);
      if (std::find(uses.begin(), uses.end(), block) != uses.end()) {
        order.push_back(e);
        placed.insert(e);
      }
    }
    order.push_back(block);
  }
  return order;
}

std::vector<std::string> EagerForwardOrder(const ModuleGraph& g) {
  g.Validate();
  auto order = SortedEmbeddings(g);
  for (auto& block : DenseTopologicalOrder(g)) order.push_back(std::move(block));
  return order;
}

int PrioritySchedule::priority_of(const std::string& dense_block) const {
  auto it = dense_priority.find(dense_block);
  if (it == dense_priority.end()) {
    throw DependencyError("no priority for '" + dense_block + "'");
  }
  return it->second;
}

PrioritySchedule AssignPriorities(const ModuleGraph& g) {
  PrioritySchedule s;
  s.forward_order = EagerForwardOrder(g);
  s.backward_order.assign(s.forward_order.rbegin(), s.forward_order.rend());
  int next = 1;
  for (const auto& name : s.forward_order) {
    if (g.module(name).kind == ModuleKind::kDenseBlock) {
      s.dense_priority[name] = next++;
    }
  }
  s.prior_priority = 0;
  s.embedding_data_priority = 0;
  s.scheduled_priority = next;
  return s;
}

SplitGradients VerticalSplit(const SparseGrad& g,
                             std::span<const std::vector<TokenId>> current_by_rank,
                             std::span<const TokenId> next, std::size_t rank) {
  if (rank >= current_by_rank.size()) {
    throw RankError("rank " + std::to_string(rank) + " out of range for " +
                    std::to_string(current_by_rank.size()) + " ranks");
  }
  const SparseGrad coalesced = Coalesce(g);

  std::vector<RowIndex> unique_current(current_by_rank[rank].begin(),
                                       current_by_rank[rank].end());
  std::sort(unique_current.begin(), unique_current.end());
  unique_current.erase(std::unique(unique_current.begin(), unique_current.end()),
                       unique_current.end());

  for (RowIndex row : coalesced.indices()) {
    if (!std::binary_search(unique_current.begin(), unique_current.end(), row)) {
      throw PreconditionError("gradient row " + std::to_string(row) +
                              " was not looked up by rank " +
                              std::to_string(rank));
    }
  }

  std::vector<RowIndex> sorted_next(next.begin(), next.end());
  std::sort(sorted_next.begin(), sorted_next.end());

  SplitGradients out;
  std::set_intersection(unique_current.begin(), unique_current.end(),
                        sorted_next.begin(), sorted_next.end(),
                        std::back_inserter(out.prior_rows));
  out.prior_rows.erase(std::unique(out.prior_rows.begin(), out.prior_rows.end()),
                       out.prior_rows.end());
  std::set_difference(unique_current.begin(), unique_current.end(),
                      out.prior_rows.begin(), out.prior_rows.end(),
                      std::back_inserter(out.scheduled_rows));
  out.prior = IndexSelect(coalesced, out.prior_rows);
  out.scheduled = IndexSelect(coalesced, out.scheduled_rows);
  return out;
}

void CommRequest::Validate() const {
  if (payload_elems == 0) {
    throw PreconditionError("communication request '" + tag +
                            "' has an empty payload");
  }
}

// ---------------------------------------------------------------------------
// CommExecutor

CommExecutor::CommExecutor() : thread_([this] { Loop(); }) {}

CommExecutor::~CommExecutor() {
  {
    std::lock_guard<std::mutex> lock(mu_);
    stop_ = true;
  }
  cv_.notify_all();
  thread_.join();
}

void CommExecutor::Submit(int priority, std::string tag,
                          std::function<void()> work) {
  pending_.Enqueue(priority, Task{std::move(tag), std::move(work)});
}

void CommExecutor::Release() {
  auto batch = pending_.Drain();
  {
    std::lock_guard<std::mutex> lock(mu_);
    outstanding_ += batch.size();
    released_.push_back(std::move(batch));
  }
  cv_.notify_all();
}

void CommExecutor::Wait() {
  std::unique_lock<std::mutex> lock(mu_);
  cv_.wait(lock, [&] { return outstanding_ == 0; });
  if (error_) {
    auto e = error_;
    error_ = nullptr;
    std::rethrow_exception(e);
  }
}

std::vector<std::string> CommExecutor::executed_tags() const {
  std::lock_guard<std::mutex> lock(mu_);
  return executed_;
}

void CommExecutor::Loop() {
  for (;;) {
    std::vector<Task> batch;
    {
      std::unique_lock<std::mutex> lock(mu_);
      cv_.wait(lock, [&] { return stop_ || !released_.empty(); });
      if (released_.empty()) return;
      batch = std::move(released_.front());
      released_.erase(released_.begin());
    }
    for (auto& task : batch) {
      bool skip;
      {
        std::lock_guard<std::mutex> lock(mu_);
        skip = error_ != nullptr;
      }
      if (!skip) {
        try {
          task.work();
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu_);
          error_ = std::current_exception();
        }
      }
      {
        std::lock_guard<std::mutex> lock(mu_);
        if (!skip) executed_.push_back(task.tag);
        --outstanding_;
      }
      cv_.notify_all();
    }
  }
}

}  // namespace sparsecomm
