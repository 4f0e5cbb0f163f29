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

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "sparsecomm/errors.h"

namespace sparsecomm {
namespace {

// Two workers, unit bandwidth, no latency: AllReduce of M elements takes M
// seconds and AlltoAll of M elements takes M/2 seconds.
ClusterSpec PairCluster() { return {1, 2, 1, 1.0, 0.0}; }

// EncEmb -> Enc -> Dec <- DecEmb
SimConfig FixtureConfig(Policy policy) {
  SimConfig cfg;
  cfg.cluster = PairCluster();
  cfg.graph.modules = {{"EncEmb", ModuleKind::kEmbedding, 8},
                       {"DecEmb", ModuleKind::kEmbedding, 8},
                       {"Enc", ModuleKind::kDenseBlock, 2},
                       {"Dec", ModuleKind::kDenseBlock, 2}};
  cfg.graph.edges = {{"EncEmb", "Enc"}, {"Enc", "Dec"}, {"DecEmb", "Dec"}};
  for (const auto& m : cfg.graph.modules) cfg.costs[m.name] = {1.0, 1.0, 0.5, 0.0};
  cfg.policy = policy;
  cfg.iterations = 1;
  cfg.split_seconds = 0.25;
  cfg.coalesced_ratio = 0.5;
  cfg.prior_ratio = 0.5;
  return cfg;
}

const Interval* Find(const EventTrace& t, const std::string& label) {
  for (const auto& iv : t.workers.front().intervals) {
    if (iv.label == label) return &iv;
  }
  return nullptr;
}

TEST(PolicyTest, ParseRoundTrip) {
  for (Policy p : {Policy::kFifo, Policy::kHorizontal, Policy::kTwoD}) {
    EXPECT_EQ(ParsePolicy(ToString(p)), p);
  }
  EXPECT_THROW(ParsePolicy("lifo"), ConfigError);
}

TEST(SimConfigTest, RejectsBadInputs) {
  SimConfig cfg = FixtureConfig(Policy::kFifo);
  cfg.costs["Enc"].fp_seconds = -1;
  EXPECT_THROW(Simulate(cfg), PreconditionError);
  cfg = FixtureConfig(Policy::kFifo);
  cfg.prior_ratio = 0;
  EXPECT_THROW(Simulate(cfg), PreconditionError);
  cfg = FixtureConfig(Policy::kFifo);
  cfg.coalesced_ratio = 1.5;
  EXPECT_THROW(Simulate(cfg), PreconditionError);
  cfg = FixtureConfig(Policy::kFifo);
  cfg.costs.erase("Dec");
  EXPECT_THROW(Simulate(cfg), PreconditionError);
  cfg = FixtureConfig(Policy::kFifo);
  cfg.graph.edges.push_back({"Dec", "Enc"});
  EXPECT_THROW(Simulate(cfg), DependencyError);
}

// Hand schedule, times in seconds from the start of the first backward pass
// (absolute t = 4 + offset). BP order Dec, DecEmb, Enc, EncEmb ends at 4.
// Priorities: embedding traffic 0, Enc 1, Dec 2, scheduled rows 3.
//   FIFO:  comm Dec 1-3, DecEmb 3-5, Enc 5-7, EncEmb 7-9; FP 9-13.
//   Horiz: comm Dec 1-2, DecEmb 2-4, EncEmb 4-6, Enc 6-8, Dec 8-9;
//          FP DecEmb 4-5, EncEmb 6-7, Enc 8-9, Dec 9-10.
//   2D:    comm Dec 1-2, prior DecEmb 2-2.5, Dec 2.5-3, Enc 3-4,
//          prior EncEmb 4-4.5, Enc 4.5-5.5, Dec 5.5-6, scheduled 6-7;
//          split 4-4.25; FP 4.25-8.25 without waiting.
TEST(SimulateTest, FixtureHandSchedule) {
  const EventTrace fifo = Simulate(FixtureConfig(Policy::kFifo));
  const EventTrace horiz = Simulate(FixtureConfig(Policy::kHorizontal));
  const EventTrace two_d = Simulate(FixtureConfig(Policy::kTwoD));

  EXPECT_DOUBLE_EQ(fifo.window_start, 4.0);
  EXPECT_DOUBLE_EQ(fifo.window_end, 17.0);
  EXPECT_DOUBLE_EQ(horiz.window_end, 14.0);
  EXPECT_DOUBLE_EQ(two_d.window_end, 12.25);

  ASSERT_NE(Find(horiz, "AlltoAll grad EncEmb #1"), nullptr);
  EXPECT_DOUBLE_EQ(Find(horiz, "AlltoAll grad EncEmb #1")->start, 8.0);
  EXPECT_DOUBLE_EQ(Find(horiz, "AllReduce grad Enc #1")->end, 12.0);
  EXPECT_DOUBLE_EQ(Find(horiz, "FP Dec #2")->start, 13.0);
  ASSERT_NE(Find(two_d, "vertical split #1"), nullptr);
  EXPECT_DOUBLE_EQ(Find(two_d, "vertical split #1")->end, 8.25);
  EXPECT_DOUBLE_EQ(Find(two_d, "AlltoAll prior DecEmb #1")->start, 6.0);
  EXPECT_DOUBLE_EQ(Find(two_d, "AlltoAll scheduled EncEmb #1")->end, 11.0);
  EXPECT_DOUBLE_EQ(Find(two_d, "FP DecEmb #2")->start, 8.25);

  const StallReport f = ComputeStallReport(fifo);
  const StallReport h = ComputeStallReport(horiz);
  const StallReport d = ComputeStallReport(two_d);
  EXPECT_DOUBLE_EQ(f.iteration_time, 13.0);
  EXPECT_DOUBLE_EQ(h.iteration_time, 10.0);
  EXPECT_DOUBLE_EQ(d.iteration_time, 8.25);
  EXPECT_DOUBLE_EQ(f.computation_stall, 5.0);
  EXPECT_DOUBLE_EQ(h.computation_stall, 2.0);
  EXPECT_DOUBLE_EQ(d.computation_stall, 0.25);
  EXPECT_DOUBLE_EQ(d.split, 0.25);
  EXPECT_DOUBLE_EQ(d.idle, 0.0);
  EXPECT_DOUBLE_EQ(h.split, 0.0);
  EXPECT_GT(f.computation_stall, h.computation_stall);
  EXPECT_GT(h.computation_stall, d.computation_stall);

  EXPECT_DOUBLE_EQ(f.total_comm_seconds, 8.0);
  EXPECT_DOUBLE_EQ(h.total_comm_seconds, 8.0);
  EXPECT_DOUBLE_EQ(h.sparse_comm_seconds, 4.0);
  EXPECT_DOUBLE_EQ(d.sparse_comm_seconds, 2.0);
  EXPECT_DOUBLE_EQ(h.sparse_comm_elements, 8.0);
  EXPECT_DOUBLE_EQ(d.sparse_comm_elements, 4.0);
}

// Emb -> B1 -> B2, all compute 1 s. B2's gradient (1 s) fits exactly inside
// B1's backward pass; B1's (1.5 s) hides under Emb's BP and FP unless the
// next forward pass waits for all communication.
SimConfig TwoBlockConfig(Policy policy) {
  SimConfig cfg;
  cfg.cluster = PairCluster();
  cfg.cluster.bandwidth = 2.0;  // AllReduce of M elements takes M/2 seconds
  cfg.graph.modules = {{"Emb", ModuleKind::kEmbedding, 0},
                       {"B1", ModuleKind::kDenseBlock, 1},
                       {"B2", ModuleKind::kDenseBlock, 1}};
  cfg.graph.modules[1].param_elems = 3;  // 1.5 s
  cfg.graph.modules[2].param_elems = 2;  // 1 s
  cfg.graph.edges = {{"Emb", "B1"}, {"B1", "B2"}};
  for (const auto& m : cfg.graph.modules) cfg.costs[m.name] = {1.0, 1.0, 1.0, 0.0};
  cfg.policy = policy;
  cfg.iterations = 1;
  return cfg;
}

TEST(SimulateTest, HorizontalHidesDenseGradients) {
  const StallReport h = ComputeStallReport(Simulate(TwoBlockConfig(Policy::kHorizontal)));
  const StallReport f = ComputeStallReport(Simulate(TwoBlockConfig(Policy::kFifo)));
  EXPECT_DOUBLE_EQ(h.iteration_time, 6.0);
  EXPECT_DOUBLE_EQ(h.computation_stall, 0.0);
  EXPECT_DOUBLE_EQ(h.overlap_fraction, 1.0);
  EXPECT_DOUBLE_EQ(f.iteration_time, 6.5);
  EXPECT_GT(f.iteration_time, h.iteration_time);
}

TEST(SimulateTest, SerialTraceStallsForAllCommunication) {
  // A single block: its gradient can only travel after the last BP.
  SimConfig cfg;
  cfg.cluster = PairCluster();
  cfg.graph.modules = {{"B", ModuleKind::kDenseBlock, 4}};
  cfg.costs["B"] = {1.0, 1.0, 1.0, 0.0};
  for (Policy p : {Policy::kFifo, Policy::kHorizontal, Policy::kTwoD}) {
    cfg.policy = p;
    const StallReport r = ComputeStallReport(Simulate(cfg));
    EXPECT_DOUBLE_EQ(r.computation_stall, 4.0) << ToString(p);
    EXPECT_DOUBLE_EQ(r.comm_time, 4.0);
    EXPECT_DOUBLE_EQ(r.overlap_fraction, 0.0);
  }
}

TEST(SimulateTest, ZeroPayloadsGivePureCompute) {
  SimConfig cfg = FixtureConfig(Policy::kFifo);
  for (auto& m : cfg.graph.modules) m.param_elems = 0;
  cfg.iterations = 3;
  double expected = -1;
  for (Policy p : {Policy::kFifo, Policy::kHorizontal, Policy::kTwoD}) {
    cfg.policy = p;
    const EventTrace t = Simulate(cfg);
    const StallReport r = ComputeStallReport(t);
    EXPECT_DOUBLE_EQ(r.iteration_time, 8.0);
    EXPECT_DOUBLE_EQ(r.computation_stall, 0.0);
    EXPECT_DOUBLE_EQ(r.total_comm_seconds, 0.0);
    if (expected < 0) expected = r.iteration_time;
    EXPECT_DOUBLE_EQ(r.iteration_time, expected);
  }
  // With one embedding the lazy and eager orders coincide, so the traces match.
  SimConfig single = TwoBlockConfig(Policy::kFifo);
  for (auto& m : single.graph.modules) m.param_elems = 0;
  single.iterations = 2;
  EventTrace base = Simulate(single);
  for (Policy p : {Policy::kHorizontal, Policy::kTwoD}) {
    single.policy = p;
    EventTrace t = Simulate(single);
    t.policy = base.policy;
    EXPECT_EQ(t, base) << ToString(p);
  }
}

TEST(SimulateTest, SingleWorkerHasNoCommunication) {
  SimConfig cfg = FixtureConfig(Policy::kTwoD);
  cfg.cluster = {1, 1, 1, 1.0, 0.5};
  const StallReport r = ComputeStallReport(Simulate(cfg));
  EXPECT_DOUBLE_EQ(r.total_comm_seconds, 0.0);
  EXPECT_DOUBLE_EQ(r.computation_stall, 0.0);
}

TEST(SimulateTest, ZeroIterationsIsEmpty) {
  SimConfig cfg = FixtureConfig(Policy::kHorizontal);
  cfg.iterations = 0;
  const EventTrace t = Simulate(cfg);
  EXPECT_TRUE(t.workers.empty());
  const StallReport r = ComputeStallReport(t);
  EXPECT_EQ(r.iteration_time, 0.0);
  EXPECT_EQ(r.computation_stall, 0.0);
  EXPECT_EQ(PostBackwardIdleWindow(t), 0.0);
}

TEST(SimulateTest, OneTracePerWorker) {
  SimConfig cfg = FixtureConfig(Policy::kTwoD);
  cfg.cluster = {2, 2, 1, 1.0, 0.0};
  const EventTrace t = Simulate(cfg);
  ASSERT_EQ(t.workers.size(), 4u);
  for (std::size_t w = 0; w < 4; ++w) EXPECT_EQ(t.workers[w].worker, w);
}

TEST(SimulateTest, PostBackwardIdleWindow) {
  // Fixture: the last BP ends at 8; FIFO resumes at 13, Horizontal at once.
  EXPECT_DOUBLE_EQ(PostBackwardIdleWindow(Simulate(FixtureConfig(Policy::kFifo))), 5.0);
  EXPECT_DOUBLE_EQ(PostBackwardIdleWindow(Simulate(FixtureConfig(Policy::kHorizontal))),
                   0.0);
}

// Each step's scheduled rows cost a second AlltoAll startup. When the channel
// is the bottleneck that startup is not hidden and 2D falls behind.
TEST(SimulateTest, ExtraStartupCanDominateWhenCommunicationBound) {
  SimConfig cfg;
  cfg.cluster = {1, 2, 1, 1.0, 1.0};
  cfg.graph.modules = {{"E", ModuleKind::kEmbedding, 2}, {"B", ModuleKind::kDenseBlock, 0}};
  cfg.graph.edges = {{"E", "B"}};
  cfg.costs["E"] = {0.1, 0.1, 1.0, 0.0};
  cfg.costs["B"] = {0.1, 0.1, 1.0, 0.0};
  cfg.iterations = 4;
  cfg.prior_ratio = 0.5;
  cfg.policy = Policy::kHorizontal;
  const double h = ComputeStallReport(Simulate(cfg)).iteration_time;
  cfg.policy = Policy::kTwoD;
  const double d = ComputeStallReport(Simulate(cfg)).iteration_time;
  EXPECT_GT(d, h);
}

TEST(SimulateTest, SplitLongerThanWindowExtendsTimeline) {
  SimConfig cfg = FixtureConfig(Policy::kTwoD);
  cfg.split_seconds = 4.0;
  const StallReport r = ComputeStallReport(Simulate(cfg));
  EXPECT_DOUBLE_EQ(r.split, 4.0);
  EXPECT_GT(r.iteration_time,
            ComputeStallReport(Simulate(FixtureConfig(Policy::kHorizontal))).iteration_time);
}

TEST(WriteTraceJsonlTest, OneRecordPerInterval) {
  const EventTrace t = Simulate(FixtureConfig(Policy::kFifo));
  std::ostringstream out;
  WriteTraceJsonl(t, out);
  std::size_t lines = 0;
  std::string line;
  std::istringstream in(out.str());
  while (std::getline(in, line)) {
    ++lines;
    EXPECT_NE(line.find("\"worker\":"), std::string::npos);
    EXPECT_NE(line.find("\"kind\":"), std::string::npos);
  }
  EXPECT_EQ(lines, 2 * t.workers.front().intervals.size());
}

// Random configurations -----------------------------------------------------

class ConfigGen {
 public:
  // Module compute times are drawn from [0, 2) s. The per-call startup
  // default keeps latency a small fraction of that, as on real links.
  explicit ConfigGen(std::uint64_t seed, double max_latency = 0.02)
      : rng_(seed), max_latency_(max_latency) {}

  double Uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng_);
  }
  std::size_t Int(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_);
  }

  SimConfig Next() {
    SimConfig cfg;
    cfg.cluster = {Int(1, 3), Int(1, 4), 1, Uniform(0.5, 4.0),
                   Int(0, 2) == 0 ? 0.0 : Uniform(0.0, max_latency_)};
    const std::size_t embs = Int(1, 3), blocks = Int(1, 4);
    for (std::size_t b = 0; b < blocks; ++b) {
      const std::string name = "B" + std::to_string(b);
      cfg.graph.modules.push_back({name, ModuleKind::kDenseBlock, Int(0, 8)});
      if (b > 0 && Int(0, 3) > 0) {
        cfg.graph.edges.push_back({"B" + std::to_string(Int(0, b - 1)), name});
      }
    }
    for (std::size_t e = 0; e < embs; ++e) {
      const std::string name = "E" + std::to_string(e);
      cfg.graph.modules.push_back({name, ModuleKind::kEmbedding, Int(0, 16)});
      cfg.graph.edges.push_back({name, "B" + std::to_string(Int(0, blocks - 1))});
    }
    for (const auto& m : cfg.graph.modules) {
      cfg.costs[m.name] = {Uniform(0.0, 2.0), Uniform(0.0, 2.0), Uniform(0.05, 1.0),
                           Int(0, 2) == 0 ? 0.0 : Uniform(0.0, 4.0)};
    }
    cfg.iterations = Int(1, 4);
    cfg.coalesced_ratio = Uniform(0.1, 1.0);
    cfg.prior_ratio = Uniform(0.05, 1.0);
    return cfg;
  }

 private:
  std::mt19937_64 rng_;
  double max_latency_;
};

std::string Describe(const SimConfig& cfg) {
  std::ostringstream out;
  out.precision(17);
  out << "cluster n=" << cfg.cluster.nodes << " w=" << cfg.cluster.workers_per_node
      << " B=" << cfg.cluster.bandwidth << " beta=" << cfg.cluster.latency
      << " iterations=" << cfg.iterations << " split=" << cfg.split_seconds
      << " coalesced=" << cfg.coalesced_ratio << " prior=" << cfg.prior_ratio << "\n";
  for (const auto& m : cfg.graph.modules) {
    const ModuleCost& c = cfg.costs.at(m.name);
    out << "  " << m.name << " elems=" << m.param_elems << " fp=" << c.fp_seconds
        << " bp=" << c.bp_seconds << " density=" << c.density
        << " data=" << c.data_elems << "\n";
  }
  for (const auto& e : cfg.graph.edges) out << "  " << e.first << " -> " << e.second << "\n";
  return out.str();
}

bool Leq(double a, double b) { return a <= b + 1e-9 * std::max(1.0, std::abs(b)); }

TEST(SimulatePropertyTest, PolicyDominance) {
  ConfigGen gen(20261016);
  int failures = 0;
  for (int i = 0; i < 1000 && failures < 5; ++i) {
    SimConfig cfg = gen.Next();
    cfg.policy = Policy::kFifo;
    const StallReport f = ComputeStallReport(Simulate(cfg));
    cfg.policy = Policy::kHorizontal;
    const EventTrace ht = Simulate(cfg);
    const StallReport h = ComputeStallReport(ht);
    cfg.policy = Policy::kTwoD;
    cfg.split_seconds = gen.Uniform(0.0, 1.0) * PostBackwardIdleWindow(ht);
    const StallReport d = ComputeStallReport(Simulate(cfg));
    const bool ok = Leq(h.iteration_time, f.iteration_time) &&
                    Leq(d.iteration_time, h.iteration_time);
    if (!ok) {
      ++failures;
      std::ofstream("sim_counterexample_" + std::to_string(i) + ".txt") << Describe(cfg);
      ADD_FAILURE() << "case " << i << ": fifo=" << f.iteration_time
                    << " horizontal=" << h.iteration_time
                    << " 2d=" << d.iteration_time << "\n"
                    << Describe(cfg);
    }
  }
}

TEST(SimulatePropertyTest, CommunicationConservation) {
  ConfigGen gen(7);
  for (int i = 0; i < 300; ++i) {
    SimConfig cfg = gen.Next();
    cfg.policy = Policy::kFifo;
    const StallReport f = ComputeStallReport(Simulate(cfg));
    cfg.policy = Policy::kHorizontal;
    const StallReport h = ComputeStallReport(Simulate(cfg));
    cfg.policy = Policy::kTwoD;
    const StallReport d = ComputeStallReport(Simulate(cfg));
    EXPECT_NEAR(f.total_comm_seconds, h.total_comm_seconds,
                1e-9 * std::max(1.0, h.total_comm_seconds))
        << Describe(cfg);
    EXPECT_TRUE(Leq(d.sparse_comm_elements, h.sparse_comm_elements)) << Describe(cfg);
    if (cfg.cluster.latency == 0.0) {
      EXPECT_TRUE(Leq(d.sparse_comm_seconds, h.sparse_comm_seconds)) << Describe(cfg);
    }
  }
}

TEST(SimulatePropertyTest, StallIdentityAndResourceExclusion) {
  ConfigGen gen(99);
  for (int i = 0; i < 300; ++i) {
    SimConfig cfg = gen.Next();
    cfg.policy = static_cast<Policy>(i % 3);
    cfg.split_seconds = gen.Uniform(0.0, 0.5);
    const EventTrace t = Simulate(cfg);
    const StallReport r = ComputeStallReport(t);
    EXPECT_NEAR(r.idle + r.compute_time + r.split, r.iteration_time, 1e-9);
    EXPECT_GE(r.computation_stall, -1e-12);
    EXPECT_GE(r.idle, -1e-9);
    if (cfg.policy != Policy::kTwoD) EXPECT_EQ(r.split, 0.0);

    double compute_end = 0.0, comm_end = 0.0;
    for (const auto& iv : t.workers.front().intervals) {
      EXPECT_LE(iv.start, iv.end);
      if (iv.kind == IntervalKind::kComm) {
        EXPECT_GE(iv.start, comm_end - 1e-12);
        comm_end = iv.end;
      } else {
        EXPECT_GE(iv.start, compute_end - 1e-12);
        compute_end = iv.end;
      }
    }
  }
}

TEST(SimulatePropertyTest, Deterministic) {
  ConfigGen a(5), b(5);
  for (int i = 0; i < 50; ++i) {
    SimConfig ca = a.Next(), cb = b.Next();
    ca.policy = cb.policy = static_cast<Policy>(i % 3);
    EXPECT_EQ(Simulate(ca), Simulate(cb));
  }
}

}  // namespace
}  // namespace sparsecomm
