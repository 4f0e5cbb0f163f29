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

// In-process worker group with per-pair FIFO channels and the three
// collectives used by hybrid embedding training.
//
// Every rank runs in its own thread and owns a Communicator. Collectives are
// blocking and must be entered by all ranks in the same order; each call
// carries a per-rank sequence number and kind so a mismatched call sequence is
// reported as CollectiveContractError instead of silently pairing the wrong
// messages. A receive that waits longer than the group timeout raises
// CollectiveTimeoutError.

#ifndef SPARSECOMM_COMM_H_
#define SPARSECOMM_COMM_H_

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "sparsecomm/tensors.h"

namespace sparsecomm {

enum class CollectiveKind { kAllReduce, kAllGather, kAllToAll };

std::string_view ToString(CollectiveKind kind);

using Payload = std::variant<std::vector<double>, DenseMatrix, SparseGrad>;

// Real values carried by a payload. Sparse row indices are metadata and are
// not counted, matching the element units of the cost formulas.
std::size_t PayloadElements(const Payload& p);

// Elements each rank sends to other ranks for one collective call.
// For kAllReduce and kAllGather outgoing[r] holds rank r's single payload;
// for kAllToAll it holds rank r's N blocks, block j addressed to rank j.
// Self-delivery is free.
std::vector<std::size_t> MeasureSentElements(
    CollectiveKind kind, const std::vector<std::vector<Payload>>& outgoing);

struct TrafficRecord {
  std::uint64_t seq = 0;
  CollectiveKind kind = CollectiveKind::kAllReduce;
  std::size_t elements_sent = 0;
};

class WorkerGroup;

class Communicator {
 public:
  std::size_t rank() const { return rank_; }
  std::size_t size() const;

  // Elementwise sum over ranks, accumulated in ascending rank order on every
  // rank, so all ranks get bit-identical results.
  std::vector<double> AllReduce(std::span<const double> x);

  // Every rank's payload, indexed by source rank.
  template <typename T>
  std::vector<T> AllGather(const T& x) {
    std::vector<Payload> out(size(), Payload(x));
    return Unwrap<T>(Exchange(CollectiveKind::kAllGather, std::move(out)));
  }

  // Block transpose: output slot s holds rank s's block addressed to us.
  // Throws CollectiveContractError unless blocks.size() == size().
  template <typename T>
  std::vector<T> AllToAll(std::vector<T> blocks) {
    CheckBlockCount(blocks.size());
    std::vector<Payload> out;
    out.reserve(blocks.size());
    for (auto& b : blocks) out.emplace_back(std::move(b));
    return Unwrap<T>(Exchange(CollectiveKind::kAllToAll, std::move(out)));
  }

  const std::vector<TrafficRecord>& traffic() const { return traffic_; }

 private:
  friend class WorkerGroup;
  Communicator(WorkerGroup* group, std::size_t rank)
      : group_(group), rank_(rank) {}

  void CheckBlockCount(std::size_t n) const;
  std::vector<Payload> Exchange(CollectiveKind kind,
                                std::vector<Payload> outgoing);

  template <typename T>
  static std::vector<T> Unwrap(std::vector<Payload> in) {
    std::vector<T> out;
    out.reserve(in.size());
    for (auto& p : in) out.push_back(std::get<T>(std::move(p)));
    return out;
  }

  WorkerGroup* group_;
  std::size_t rank_;
  std::uint64_t seq_ = 0;
  std::vector<TrafficRecord> traffic_;
};

class WorkerGroup {
 public:
  explicit WorkerGroup(
      std::size_t size,
      std::chrono::milliseconds timeout = std::chrono::seconds(30));
  WorkerGroup(const WorkerGroup&) = delete;
  WorkerGroup& operator=(const WorkerGroup&) = delete;

  std::size_t size() const { return size_; }
  std::chrono::milliseconds timeout() const { return timeout_; }
  Communicator& comm(std::size_t rank);

  // Wakes every blocked receive with CollectiveContractError. Used when one
  // rank fails so the others do not wait out the timeout.
  void Abort();
  bool aborted() const { return aborted_.load(); }

 private:
  friend class Communicator;

  struct Message {
    std::uint64_t seq;
    CollectiveKind kind;
    Payload payload;
  };

  class Channel {
   public:
    void Push(Message m);
    // Throws CollectiveTimeoutError on timeout and CollectiveContractError
    // if the group was aborted while waiting.
    Message Pop(std::chrono::milliseconds timeout, const std::atomic<bool>& aborted);
    void Wake();

   private:
    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<Message> queue_;
  };

  Channel& channel(std::size_t src, std::size_t dst) {
    return *channels_[src * size_ + dst];
  }

  std::size_t size_;
  std::chrono::milliseconds timeout_;
  std::atomic<bool> aborted_{false};
  std::vector<std::unique_ptr<Channel>> channels_;
  std::vector<std::unique_ptr<Communicator>> comms_;
};

// Runs body(comm) on one thread per rank and joins them. If any rank throws,
// the group is aborted and the first exception raised is rethrown after all
// threads exit.
void RunOnRanks(WorkerGroup& group,
                const std::function<void(Communicator&)>& body);

}  // namespace sparsecomm

#endif  // SPARSECOMM_COMM_H_
