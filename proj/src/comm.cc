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

#include "sparsecomm/comm.h"

#include <exception>
#include <string>
#include <thread>

#include "sparsecomm/errors.h"

namespace sparsecomm {

std::string_view ToString(CollectiveKind kind) {
  switch (kind) {
    case CollectiveKind::kAllReduce:
      return "AllReduce";
    case CollectiveKind::kAllGather:
      return "AllGather";
    case CollectiveKind::kAllToAll:
      return "AlltoAll";
  }
  return "?";
}

std::size_t PayloadElements(const Payload& p) {
  return std::visit(
      [](const auto& v) -> std::size_t {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, SparseGrad>) {
          return v.value_count();
        } else {
          return v.size();
        }
      },
      p);
}

std::vector<std::size_t> MeasureSentElements(
    CollectiveKind kind, const std::vector<std::vector<Payload>>& outgoing) {
  const std::size_t n = outgoing.size();
  std::vector<std::size_t> sent(n, 0);
  for (std::size_t r = 0; r < n; ++r) {
    if (kind == CollectiveKind::kAllToAll) {
      for (std::size_t j = 0; j < outgoing[r].size(); ++j) {
        if (j != r) sent[r] += PayloadElements(outgoing[r][j]);
      }
    } else {
      for (const auto& p : outgoing[r]) sent[r] += (n - 1) * PayloadElements(p);
    }
  }
  return sent;
}

// ---------------------------------------------------------------------------
// WorkerGroup

void WorkerGroup::Channel::Push(Message m) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    queue_.push_back(std::move(m));
  }
  cv_.notify_one();
}

WorkerGroup::Message WorkerGroup::Channel::Pop(
    std::chrono::milliseconds timeout, const std::atomic<bool>& aborted) {
  std::unique_lock<std::mutex> lock(mu_);
  const bool ready = cv_.wait_for(lock, timeout, [&] {
    return !queue_.empty() || aborted.load();
  });
  if (!queue_.empty()) {
    Message m = std::move(queue_.front());
    queue_.pop_front();
    return m;
  }
  if (ready) throw CollectiveContractError("worker group aborted");
  throw CollectiveTimeoutError("collective receive timed out after " +
                               std::to_string(timeout.count()) +
                               " ms; a rank did not enter the collective");
}

void WorkerGroup::Channel::Wake() {
  { std::lock_guard<std::mutex> lock(mu_); }
  cv_.notify_all();
}

WorkerGroup::WorkerGroup(std::size_t size, std::chrono::milliseconds timeout)
    : size_(size), timeout_(timeout) {
  if (size == 0) throw PreconditionError("worker group needs at least 1 rank");
  channels_.reserve(size * size);
  for (std::size_t i = 0; i < size * size; ++i) {
    channels_.push_back(std::make_unique<Channel>());
  }
  comms_.reserve(size);
  for (std::size_t r = 0; r < size; ++r) {
    comms_.push_back(std::unique_ptr<Communicator>(new Communicator(this, r)));
  }
}

Communicator& WorkerGroup::comm(std::size_t rank) {
  if (rank >= size_) throw RankError("rank " + std::to_string(rank) + " out of range");
  return *comms_[rank];
}

void WorkerGroup::Abort() {
  aborted_.store(true);
  for (auto& c : channels_) c->Wake();
}

// ---------------------------------------------------------------------------
// Communicator

std::size_t Communicator::size() const { return group_->size(); }

void Communicator::CheckBlockCount(std::size_t n) const {
  if (n != size()) {
    throw CollectiveContractError("AlltoAll on rank " + std::to_string(rank_) +
                                  " got " + std::to_string(n) +
                                  " blocks for a group of " +
                                  std::to_string(size()));
  }
}

std::vector<Payload> Communicator::Exchange(CollectiveKind kind,
                                            std::vector<Payload> outgoing) {
  const std::size_t n = size();
  const std::uint64_t seq = seq_++;

  std::size_t sent = 0;
  for (std::size_t dst = 0; dst < n; ++dst) {
    if (dst == rank_) continue;
    sent += PayloadElements(outgoing[dst]);
    group_->channel(rank_, dst).Push({seq, kind, std::move(outgoing[dst])});
  }
  traffic_.push_back({seq, kind, sent});

  std::vector<Payload> incoming(n);
  incoming[rank_] = std::move(outgoing[rank_]);
  for (std::size_t src = 0; src < n; ++src) {
    if (src == rank_) continue;
    auto msg = group_->channel(src, rank_).Pop(group_->timeout(), group_->aborted_);
    if (msg.seq != seq || msg.kind != kind) {
      throw CollectiveContractError(
          "rank " + std::to_string(rank_) + " in " + std::string(ToString(kind)) +
          " #" + std::to_string(seq) + " received " +
          std::string(ToString(msg.kind)) + " #" + std::to_string(msg.seq) +
          " from rank " + std::to_string(src));
    }
    incoming[src] = std::move(msg.payload);
  }
  return incoming;
}

std::vector<double> Communicator::AllReduce(std::span<const double> x) {
  std::vector<Payload> out(size(), Payload(std::vector<double>(x.begin(), x.end())));
  auto parts = Unwrap<std::vector<double>>(
      Exchange(CollectiveKind::kAllReduce, std::move(out)));
  for (std::size_t r = 1; r < parts.size(); ++r) {
    if (parts[r].size() != parts[0].size()) {
      throw CollectiveContractError(
          "AllReduce length mismatch: rank 0 has " +
          std::to_string(parts[0].size()) + ", rank " + std::to_string(r) +
          " has " + std::to_string(parts[r].size()));
    }
  }
  std::vector<double> sum = std::move(parts[0]);
  for (std::size_t r = 1; r < parts.size(); ++r) {
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += parts[r][i];
  }
  return sum;
}

void RunOnRanks(WorkerGroup& group,
                const std::function<void(Communicator&)>& body) {
  std::mutex mu;
  std::exception_ptr first;
  std::vector<std::thread> threads;
  threads.reserve(group.size());
  for (std::size_t r = 0; r < group.size(); ++r) {
    threads.emplace_back([&, r] {
      try {
        body(group.comm(r));
      } catch (...) {
        {
          std::lock_guard<std::mutex> lock(mu);
          if (!first) first = std::current_exception();
        }
        group.Abort();
      }
    });
  }
  for (auto& t : threads) t.join();
  if (first) std::rethrow_exception(first);
}

}  // namespace sparsecomm
