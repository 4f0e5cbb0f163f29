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

#include "sparsecomm/sim.h"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "sparsecomm/errors.h"

namespace sparsecomm {
namespace {

constexpr double kNever = std::numeric_limits<double>::infinity();
constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

struct CommItem {
  std::string label;
  CommRole role;
  std::size_t iteration;
  double duration;
  double elements;
  int priority;
  std::vector<std::size_t> after;  // items that must complete first

  double release = kNever;
  std::uint64_t release_seq = 0;
  double remaining = 0.0;
  double complete = kNever;
  bool running = false;
};

struct ComputeTask {
  std::string label;
  IntervalKind kind;
  std::size_t iteration;
  double duration;
  std::vector<std::size_t> waits;     // comm items
  std::vector<std::size_t> releases;  // comm items
  double start = kNever;
  double end = kNever;
};

std::string Tag(const std::string& what, std::size_t iteration) {
  return what + " #" + std::to_string(iteration);
}

class Timeline {
 public:
  explicit Timeline(const SimConfig& cfg) : cfg_(cfg) { Build(); }

  EventTrace Run();

 private:
  std::size_t AddItem(CommItem item) {
    item.remaining = item.duration;
    items_.push_back(std::move(item));
    return items_.size() - 1;
  }

  double AllToAll(double elements) const {
    return CostAllToAllCall(cfg_.cluster.total_workers(), elements,
                            cfg_.cluster.bandwidth, cfg_.cluster.latency);
  }
  double AllReduce(double elements) const {
    return CostRingAllReduceCall(cfg_.cluster.total_workers(), elements,
                                 cfg_.cluster.bandwidth, cfg_.cluster.latency);
  }
  bool Communicates(double elements) const {
    return elements > 0.0 && cfg_.cluster.total_workers() > 1;
  }

  void Build();
  bool Ready(const ComputeTask& t) const;
  bool Eligible(const CommItem& c) const;
  std::size_t PickItem() const;
  [[noreturn]] void Deadlock() const;

  const SimConfig& cfg_;
  std::vector<CommItem> items_;
  std::vector<ComputeTask> tasks_;
  std::vector<Interval> comm_segments_;
  double now_ = 0.0;
  std::uint64_t release_counter_ = 0;
};

void Timeline::Build() {
  const ModuleGraph& g = cfg_.graph;
  const PrioritySchedule prio = AssignPriorities(g);
  const bool fifo = cfg_.policy == Policy::kFifo;
  const bool two_d = cfg_.policy == Policy::kTwoD;
  const auto forward = fifo ? DefaultForwardOrder(g) : prio.forward_order;
  const auto model_order = DefaultForwardOrder(g);
  const std::vector<std::string> backward(model_order.rbegin(), model_order.rend());

  std::vector<std::string> embeddings;
  for (const auto& m : g.modules) {
    if (m.kind == ModuleKind::kEmbedding) embeddings.push_back(m.name);
  }
  std::sort(embeddings.begin(), embeddings.end());

  auto sparse_elems = [&](const std::string& e) {
    return cfg_.costs.at(e).density * static_cast<double>(g.module(e).param_elems);
  };
  bool any_sparse = false;
  for (const auto& e : embeddings) any_sparse |= Communicates(sparse_elems(e));

  // Per-iteration handles of the items produced, keyed by module name.
  std::map<std::string, std::size_t> prev_grad, prev_prior, prev_sched;
  std::vector<std::size_t> prev_all;
  const std::size_t iters = cfg_.iterations;

  for (std::size_t k = 1; k <= iters + 1; ++k) {
    std::map<std::string, std::size_t> data, grad, prior, sched;
    std::vector<std::size_t> all;

    bool first_fp = true;
    for (const auto& name : forward) {
      const ModuleDecl& m = g.module(name);
      const ModuleCost& cost = cfg_.costs.at(name);
      ComputeTask t{Tag("FP " + name, k), IntervalKind::kForward, k,
                    cost.fp_seconds, {}, {}};
      if (fifo && first_fp) t.waits = prev_all;
      first_fp = false;
      if (m.kind == ModuleKind::kEmbedding) {
        if (!fifo) {
          const auto& dep = two_d ? prev_prior : prev_grad;
          if (auto it = dep.find(name); it != dep.end()) t.waits.push_back(it->second);
        }
        if (Communicates(cost.data_elems)) {
          const std::size_t id = AddItem({Tag("AlltoAll data " + name, k),
                                          CommRole::kEmbeddingData, k,
                                          AllToAll(cost.data_elems), cost.data_elems,
                                          prio.embedding_data_priority, {}});
          data[name] = id;
          all.push_back(id);
          t.releases.push_back(id);
        }
      } else {
        for (const auto& e : embeddings) {
          const auto uses = g.consumers(e);
          if (std::find(uses.begin(), uses.end(), name) != uses.end() &&
              data.count(e)) {
            t.waits.push_back(data[e]);
          }
        }
        if (!fifo) {
          if (auto it = prev_grad.find(name); it != prev_grad.end()) {
            t.waits.push_back(it->second);
          }
        }
      }
      tasks_.push_back(std::move(t));
    }
    if (k > iters) break;

    for (const auto& name : backward) {
      const ModuleDecl& m = g.module(name);
      ComputeTask t{Tag("BP " + name, k), IntervalKind::kBackward, k,
                    cfg_.costs.at(name).bp_seconds, {}, {}};
      if (m.kind == ModuleKind::kDenseBlock) {
        const double elems = static_cast<double>(m.param_elems);
        if (Communicates(elems)) {
          const int p = fifo ? 0 : prio.priority_of(name);
          const std::size_t id = AddItem({Tag("AllReduce grad " + name, k),
                                          CommRole::kDenseGrad, k, AllReduce(elems),
                                          elems, p, {}});
          grad[name] = id;
          all.push_back(id);
          t.releases.push_back(id);
        }
      } else if (two_d) {
        const double coalesced = sparse_elems(name) * cfg_.coalesced_ratio;
        const double p_elems = coalesced * cfg_.prior_ratio;
        const double s_elems = coalesced - p_elems;
        if (Communicates(p_elems)) {
          CommItem item{Tag("AlltoAll prior " + name, k), CommRole::kPriorGrad, k,
                        AllToAll(p_elems), p_elems, prio.prior_priority, {}};
          // Scheduled rows of the previous step must land before this update.
          if (auto it = prev_sched.find(name); it != prev_sched.end()) {
            item.after.push_back(it->second);
          }
          const std::size_t id = AddItem(std::move(item));
          prior[name] = id;
          all.push_back(id);
          t.releases.push_back(id);
        }
        if (Communicates(s_elems)) {
          const std::size_t id = AddItem({Tag("AlltoAll scheduled " + name, k),
                                          CommRole::kScheduledGrad, k,
                                          AllToAll(s_elems), s_elems,
                                          prio.scheduled_priority, {}});
          sched[name] = id;
          all.push_back(id);
          t.releases.push_back(id);
        }
      } else if (Communicates(sparse_elems(name))) {
        const double elems = sparse_elems(name);
        const std::size_t id = AddItem({Tag("AlltoAll grad " + name, k),
                                        CommRole::kSparseGrad, k, AllToAll(elems),
                                        elems, prio.prior_priority, {}});
        grad[name] = id;
        all.push_back(id);
        t.releases.push_back(id);
      }
      tasks_.push_back(std::move(t));
    }

    if (two_d && any_sparse) {
      tasks_.push_back({Tag("vertical split", k), IntervalKind::kSplit, k,
                        cfg_.split_seconds, {}, {}});
    }

    prev_grad = std::move(grad);
    prev_prior = std::move(prior);
    // A step without a scheduled part keeps the older barrier.
    for (auto& [e, id] : sched) prev_sched[e] = id;
    prev_all = std::move(all);
  }
}

bool Timeline::Ready(const ComputeTask& t) const {
  return std::all_of(t.waits.begin(), t.waits.end(),
                     [&](std::size_t id) { return items_[id].complete <= now_; });
}

bool Timeline::Eligible(const CommItem& c) const {
  return c.release <= now_ && c.complete == kNever && !c.running &&
         std::all_of(c.after.begin(), c.after.end(),
                     [&](std::size_t id) { return items_[id].complete <= now_; });
}

std::size_t Timeline::PickItem() const {
  const bool fifo = cfg_.policy == Policy::kFifo;
  std::size_t best = kNone;
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const CommItem& c = items_[i];
    if (!Eligible(c)) continue;
    if (best == kNone) {
      best = i;
      continue;
    }
    const CommItem& b = items_[best];
    const bool better =
        fifo ? c.release_seq < b.release_seq
             : (c.priority != b.priority ? c.priority < b.priority
                                         : c.release_seq < b.release_seq);
    if (better) best = i;
  }
  return best;
}

void Timeline::Deadlock() const {
  std::ostringstream msg;
  msg << "simulation cannot progress at t=" << now_ << ";";
  for (const auto& t : tasks_) {
    if (t.start != kNever) continue;
    msg << " '" << t.label << "' waits on";
    for (std::size_t id : t.waits) {
      if (items_[id].complete == kNever) msg << " '" << items_[id].label << "'";
    }
    break;
  }
  throw SchedulingDeadlockError(msg.str());
}

EventTrace Timeline::Run() {
  std::size_t next_task = 0;
  std::size_t computing = kNone;
  std::size_t sending = kNone;
  double send_start = 0.0;

  auto finish_segment = [&](std::size_t id, double end) {
    CommItem& c = items_[id];
    const double done = end - send_start;
    const double share = c.duration > 0.0 ? done / c.duration : 1.0;
    comm_segments_.push_back({send_start, end, IntervalKind::kComm, c.label, c.role,
                              c.iteration, c.elements * share});
  };

  for (;;) {
    bool changed = true;
    while (changed) {
      changed = false;
      if (computing != kNone && tasks_[computing].end <= now_) {
        for (std::size_t id : tasks_[computing].releases) {
          items_[id].release = now_;
          items_[id].release_seq = release_counter_++;
          // Anything holding up a released item inherits its urgency.
          for (std::size_t dep : items_[id].after) {
            items_[dep].priority = std::min(items_[dep].priority, items_[id].priority);
          }
        }
        computing = kNone;
        changed = true;
      }
      if (sending != kNone && send_start + items_[sending].remaining <= now_) {
        CommItem& c = items_[sending];
        finish_segment(sending, now_);
        c.remaining = 0.0;
        c.complete = now_;
        c.running = false;
        sending = kNone;
        changed = true;
      }
      if (computing == kNone && next_task < tasks_.size() &&
          Ready(tasks_[next_task])) {
        ComputeTask& t = tasks_[next_task];
        t.start = now_;
        t.end = now_ + t.duration;
        computing = next_task++;
        changed = true;
      }
      const std::size_t pick = PickItem();
      if (pick != kNone) {
        // Transfers are chunked, so a more urgent one cuts in under
        // priority scheduling.
        const bool preempt = sending != kNone && cfg_.policy != Policy::kFifo &&
                             items_[pick].priority < items_[sending].priority;
        if (preempt) {
          CommItem& c = items_[sending];
          finish_segment(sending, now_);
          c.remaining -= now_ - send_start;
          c.running = false;
          sending = kNone;
        }
        if (sending == kNone) {
          items_[pick].running = true;
          sending = pick;
          send_start = now_;
          changed = true;
        }
      }
    }

    double next = kNever;
    if (computing != kNone) next = std::min(next, tasks_[computing].end);
    if (sending != kNone) next = std::min(next, send_start + items_[sending].remaining);
    if (next == kNever) {
      const bool work_left =
          next_task < tasks_.size() ||
          std::any_of(items_.begin(), items_.end(),
                      [](const CommItem& c) { return c.complete == kNever; });
      if (work_left) Deadlock();
      break;
    }
    now_ = next;
  }

  WorkerTrace worker;
  double first_bp = kNever;
  double last_fp_end = 0.0;
  double cursor = 0.0;
  for (const auto& t : tasks_) {
    if (t.start > cursor) {
      worker.intervals.push_back({cursor, t.start, IntervalKind::kIdle, "idle",
                                  CommRole::kNone, 0, 0.0});
    }
    worker.intervals.push_back(
        {t.start, t.end, t.kind, t.label, CommRole::kNone, t.iteration, 0.0});
    cursor = t.end;
    if (t.kind == IntervalKind::kBackward) first_bp = std::min(first_bp, t.start);
    if (t.kind == IntervalKind::kForward) last_fp_end = std::max(last_fp_end, t.end);
  }
  worker.intervals.insert(worker.intervals.end(), comm_segments_.begin(),
                          comm_segments_.end());
  std::stable_sort(worker.intervals.begin(), worker.intervals.end(),
                   [](const Interval& a, const Interval& b) {
                     return a.start != b.start ? a.start < b.start
                                               : a.kind < b.kind;
                   });

  EventTrace trace;
  trace.policy = cfg_.policy;
  trace.iterations = cfg_.iterations;
  trace.window_start = first_bp;
  trace.window_end = last_fp_end;
  for (std::size_t w = 0; w < cfg_.cluster.total_workers(); ++w) {
    worker.worker = w;
    trace.workers.push_back(worker);
  }
  return trace;
}

// Length of the part of [a0, a1) inside [b0, b1).
double Overlap(double a0, double a1, double b0, double b1) {
  return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}

}  // namespace

std::string_view ToString(Policy p) {
  switch (p) {
    case Policy::kFifo:
      return "fifo";
    case Policy::kHorizontal:
      return "horizontal";
    case Policy::kTwoD:
      return "2d";
  }
  return "?";
}

Policy ParsePolicy(std::string_view name) {
  if (name == "fifo") return Policy::kFifo;
  if (name == "horizontal") return Policy::kHorizontal;
  if (name == "2d") return Policy::kTwoD;
  throw ConfigError("unknown policy '" + std::string(name) +
                    "' (expected fifo, horizontal or 2d)");
}

std::string_view ToString(IntervalKind k) {
  switch (k) {
    case IntervalKind::kForward:
      return "FP";
    case IntervalKind::kBackward:
      return "BP";
    case IntervalKind::kComm:
      return "comm";
    case IntervalKind::kSplit:
      return "split-compute";
    case IntervalKind::kIdle:
      return "idle";
  }
  return "?";
}

void SimConfig::Validate() const {
  cluster.Validate();
  graph.Validate();
  for (const auto& m : graph.modules) {
    auto it = costs.find(m.name);
    if (it == costs.end()) {
      throw PreconditionError("no timing given for module '" + m.name + "'");
    }
    const ModuleCost& c = it->second;
    if (!(c.fp_seconds >= 0 && c.bp_seconds >= 0 && c.data_elems >= 0)) {
      throw PreconditionError("module '" + m.name +
                              "' has a negative duration or payload");
    }
    if (m.kind == ModuleKind::kEmbedding && !(c.density > 0 && c.density <= 1)) {
      throw PreconditionError("embedding '" + m.name + "' density must be in (0, 1]");
    }
  }
  for (const auto& [name, c] : costs) graph.module(name);
  if (!(split_seconds >= 0)) throw PreconditionError("split cost must be >= 0");
  if (!(coalesced_ratio > 0 && coalesced_ratio <= 1) ||
      !(prior_ratio > 0 && prior_ratio <= 1)) {
    throw PreconditionError("split fractions must lie in (0, 1]");
  }
}

EventTrace Simulate(const SimConfig& cfg) {
  cfg.Validate();
  if (cfg.iterations == 0) {
    EventTrace empty;
    empty.policy = cfg.policy;
    return empty;
  }
  return Timeline(cfg).Run();
}

StallReport ComputeStallReport(const EventTrace& trace) {
  StallReport r;
  if (trace.iterations == 0 || trace.workers.empty()) return r;
  const double w0 = trace.window_start;
  const double w1 = trace.window_end;
  const double iters = static_cast<double>(trace.iterations);

  std::vector<std::pair<double, double>> busy;  // compute intervals
  double compute = 0.0, split = 0.0;
  for (const auto& iv : trace.workers.front().intervals) {
    const double inside = Overlap(iv.start, iv.end, w0, w1);
    switch (iv.kind) {
      case IntervalKind::kForward:
      case IntervalKind::kBackward:
        compute += inside;
        busy.emplace_back(iv.start, iv.end);
        break;
      case IntervalKind::kSplit:
        split += inside;
        busy.emplace_back(iv.start, iv.end);
        break;
      case IntervalKind::kComm:
        r.total_comm_seconds += iv.duration();
        if (iv.role == CommRole::kSparseGrad || iv.role == CommRole::kPriorGrad ||
            iv.role == CommRole::kScheduledGrad) {
          r.sparse_comm_seconds += iv.duration();
          r.sparse_comm_elements += iv.elements;
        }
        break;
      default:
        break;
    }
  }
  double comm = 0.0, hidden = 0.0;
  for (const auto& iv : trace.workers.front().intervals) {
    if (iv.kind != IntervalKind::kComm) continue;
    const double s = std::max(iv.start, w0), e = std::min(iv.end, w1);
    if (e <= s) continue;
    comm += e - s;
    for (const auto& [b0, b1] : busy) hidden += Overlap(s, e, b0, b1);
  }

  r.iteration_time = (w1 - w0) / iters;
  r.compute_time = compute / iters;
  r.split = split / iters;
  r.idle = r.iteration_time - r.compute_time - r.split;
  r.computation_stall = r.idle + r.split;
  r.comm_time = comm / iters;
  r.overlap_fraction = comm > 0.0 ? hidden / comm : 1.0;
  r.total_comm_seconds /= iters;
  r.sparse_comm_seconds /= iters;
  r.sparse_comm_elements /= iters;
  return r;
}

double PostBackwardIdleWindow(const EventTrace& trace) {
  if (trace.iterations == 0 || trace.workers.empty()) return 0.0;
  const auto& ivs = trace.workers.front().intervals;
  std::vector<double> last_bp(trace.iterations + 1, -kNever);
  for (const auto& iv : ivs) {
    if (iv.kind == IntervalKind::kBackward) {
      last_bp[iv.iteration] = std::max(last_bp[iv.iteration], iv.end);
    }
  }
  double window = kNever;
  for (std::size_t k = 1; k <= trace.iterations; ++k) {
    double next_compute = kNever;
    for (const auto& iv : ivs) {
      const bool compute = iv.kind == IntervalKind::kForward ||
                           iv.kind == IntervalKind::kBackward ||
                           iv.kind == IntervalKind::kSplit;
      if (compute && iv.start >= last_bp[k] && iv.iteration > k - 1 &&
          !(iv.kind == IntervalKind::kBackward && iv.iteration == k)) {
        next_compute = std::min(next_compute, iv.start);
      }
    }
    window = std::min(window, next_compute - last_bp[k]);
  }
  return window == kNever ? 0.0 : window;
}

void WriteTraceJsonl(const EventTrace& trace, std::ostream& out) {
  for (const auto& w : trace.workers) {
    for (const auto& iv : w.intervals) {
      nlohmann::ordered_json rec;
      rec["worker"] = w.worker;
      rec["start"] = iv.start;
      rec["end"] = iv.end;
      rec["kind"] = ToString(iv.kind);
      rec["label"] = iv.label;
      out << rec.dump() << '\n';
    }
  }
}

}  // namespace sparsecomm
