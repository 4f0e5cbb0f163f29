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

// Communication scheduling: priority assignment over the module dependency
// graph, the vertical split of sparse embedding gradients into a prior part
// (rows the next batch reads) and a scheduled part, the stable priority
// queue that orders communication, and one-batch data prefetch.

#ifndef SPARSECOMM_SCHEDULE_H_
#define SPARSECOMM_SCHEDULE_H_

#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "sparsecomm/comm.h"
#include "sparsecomm/errors.h"
#include "sparsecomm/partition.h"
#include "sparsecomm/tensors.h"

namespace sparsecomm {

enum class ModuleKind { kEmbedding, kDenseBlock };

struct ModuleDecl {
  std::string name;
  ModuleKind kind = ModuleKind::kDenseBlock;
  std::size_t param_elems = 0;
};

// Forward-pass dependency graph. An edge {a, b} means b's forward pass
// consumes a's output.
struct ModuleGraph {
  std::vector<ModuleDecl> modules;
  std::vector<std::pair<std::string, std::string>> edges;

  // Throws DependencyError on unknown names, duplicate names, a cycle, or an
  // embedding with a predecessor.
  void Validate() const;
  const ModuleDecl& module(const std::string& name) const;
  // Names of the modules whose forward pass consumes `name`.
  std::vector<std::string> consumers(const std::string& name) const;
};

// Forward order used without horizontal scheduling: dense blocks in
// topological order (ties by name), each embedding placed immediately before
// its first consumer.
std::vector<std::string> DefaultForwardOrder(const ModuleGraph& g);

// Forward order with embedding forward passes hoisted to the front.
std::vector<std::string> EagerForwardOrder(const ModuleGraph& g);

struct PrioritySchedule {
  // Lower value = sent sooner.
  int prior_priority = 0;           // prior sparse gradients
  int embedding_data_priority = 0;  // lookup-result exchange during FP
  int scheduled_priority = 0;       // scheduled sparse gradients, the maximum
  std::map<std::string, int> dense_priority;  // one unit per dense block
  std::vector<std::string> forward_order;     // embeddings first
  std::vector<std::string> backward_order;    // reverse of forward_order

  int priority_of(const std::string& dense_block) const;
};

// Dense blocks get priorities 1..K in forward order; prior sparse gradients
// and embedding data get 0; scheduled sparse gradients get K + 1.
// Derived from the graph only, so declaration order does not matter.
PrioritySchedule AssignPriorities(const ModuleGraph& g);

struct SplitGradients {
  SparseGrad prior;      // rows needed by the next batch
  SparseGrad scheduled;  // the rest
  std::vector<RowIndex> prior_rows;      // unique(current[rank]) & next
  std::vector<RowIndex> scheduled_rows;  // unique(current[rank]) \ prior_rows
};

// Coalesces g and splits it by whether each row reappears in `next` (the
// global next batch). Every row of g must come from current_by_rank[rank].
// Throws RankError for a bad rank and PreconditionError for a row of g that
// the rank did not look up.
SplitGradients VerticalSplit(const SparseGrad& g,
                             std::span<const std::vector<TokenId>> current_by_rank,
                             std::span<const TokenId> next, std::size_t rank);

struct CommRequest {
  CollectiveKind kind = CollectiveKind::kAllReduce;
  std::size_t payload_elems = 1;
  int priority = 0;
  std::string tag;

  // Throws PreconditionError when payload_elems == 0.
  void Validate() const;
};

// Thread-safe priority queue, ascending priority with FIFO order among equal
// priorities.
template <typename T>
class PriorityCommQueue {
 public:
  void Enqueue(int priority, T item) {
    {
      std::lock_guard<std::mutex> lock(mu_);
      heap_.push(Entry{priority, next_seq_++, std::move(item)});
    }
    cv_.notify_one();
  }

  std::optional<T> TryPop() {
    std::lock_guard<std::mutex> lock(mu_);
    return PopLocked();
  }

  // Blocks until an item is available; nullopt once closed and empty.
  std::optional<T> Pop() {
    std::unique_lock<std::mutex> lock(mu_);
    cv_.wait(lock, [&] { return !heap_.empty() || closed_; });
    return PopLocked();
  }

  // Removes every queued item in execution order.
  std::vector<T> Drain() {
    std::lock_guard<std::mutex> lock(mu_);
    std::vector<T> out;
    while (auto item = PopLocked()) out.push_back(std::move(*item));
    return out;
  }

  void Close() {
    {
      std::lock_guard<std::mutex> lock(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }

  std::size_t size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return heap_.size();
  }

 private:
  struct Entry {
    int priority;
    std::uint64_t seq;
    T item;
  };
  struct Later {
    bool operator()(const Entry& a, const Entry& b) const {
      return a.priority != b.priority ? a.priority > b.priority : a.seq > b.seq;
    }
  };

  std::optional<T> PopLocked() {
    if (heap_.empty()) return std::nullopt;
    // top() is const; the entry is discarded right after the move.
    T item = std::move(const_cast<Entry&>(heap_.top()).item);
    heap_.pop();
    return item;
  }

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::priority_queue<Entry, std::vector<Entry>, Later> heap_;
  std::uint64_t next_seq_ = 0;
  bool closed_ = false;
};

// Per-worker communication thread. Backward hooks Submit() communication
// closures as their gradients become ready; Release() hands the batch
// submitted so far to the thread, which runs it in priority order. Batching
// per release keeps the collective call order identical on every rank.
// Wait() blocks until the released work is done and rethrows its first error.
class CommExecutor {
 public:
  CommExecutor();
  ~CommExecutor();
  CommExecutor(const CommExecutor&) = delete;
  CommExecutor& operator=(const CommExecutor&) = delete;

  void Submit(int priority, std::string tag, std::function<void()> work);
  void Release();
  void Wait();

  // Tags in the order the thread ran them, across all batches.
  std::vector<std::string> executed_tags() const;

 private:
  struct Task {
    std::string tag;
    std::function<void()> work;
  };
  void Loop();

  PriorityCommQueue<Task> pending_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::vector<std::vector<Task>> released_;
  std::size_t outstanding_ = 0;
  bool stop_ = false;
  std::exception_ptr error_;
  std::vector<std::string> executed_;
  std::thread thread_;
};

// Yields each batch together with the one after it, holding at most one batch
// of lookahead. The last batch pairs with nullopt.
template <typename Batch>
class PrefetchWindow {
 public:
  using Source = std::function<std::optional<Batch>()>;

  explicit PrefetchWindow(Source source) : source_(std::move(source)) {
    next_ = source_();
  }

  static PrefetchWindow FromVector(std::vector<Batch> batches) {
    auto data = std::make_shared<std::vector<Batch>>(std::move(batches));
    auto pos = std::make_shared<std::size_t>(0);
    return PrefetchWindow([data, pos]() -> std::optional<Batch> {
      if (*pos >= data->size()) return std::nullopt;
      return (*data)[(*pos)++];
    });
  }

  bool done() const { return !next_.has_value(); }

  // Throws EndOfDataError when the stream is exhausted.
  std::pair<Batch, std::optional<Batch>> Next() {
    if (!next_) throw EndOfDataError("batch stream exhausted");
    Batch current = std::move(*next_);
    next_ = source_();
    return {std::move(current), next_};
  }

  // Batches held in memory beyond the one being returned.
  std::size_t lookahead() const { return next_ ? 1 : 0; }

 private:
  Source source_;
  std::optional<Batch> next_;
};

}  // namespace sparsecomm

#endif  // SPARSECOMM_SCHEDULE_H_
