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

#include "sparsecomm/cli.h"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "sparsecomm/cost.h"
#include "sparsecomm/errors.h"
#include "sparsecomm/sim.h"
#include "sparsecomm/train.h"
#include "sparsecomm/workload.h"

namespace sparsecomm {
namespace {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

struct Options {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> policy;
  std::optional<double> tolerance;
  bool overlap_split = false;
};

std::string Num(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------------------
// Strict config reading.

std::string LineColumn(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

Json LoadConfig(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    std::string what = e.what();
    if (auto p = what.find("syntax error"); p != std::string::npos) what = what.substr(p);
    throw ConfigError(path + ": " + LineColumn(text, e.byte) + ": " + what);
  }
}

class Fields {
 public:
  Fields(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  bool Has(const std::string& key) const { return j_.contains(key); }

  const Json& Raw(const std::string& key) {
    if (!Has(key)) throw ConfigError(Where(key) + ": required field missing");
    used_.insert(key);
    return j_.at(key);
  }

  template <typename T>
  T Require(const std::string& key) {
    T out;
    Read(Raw(key), Where(key), out);
    return out;
  }

  template <typename T>
  T Get(const std::string& key, T fallback) {
    if (!Has(key)) return fallback;
    return Require<T>(key);
  }

  std::string Where(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  // Rejects any field nobody asked for.
  void Done() const {
    for (const auto& [key, value] : j_.items()) {
      if (!used_.count(key)) throw ConfigError(Where(key) + ": unknown field");
    }
  }

  static void Read(const Json& v, const std::string& where, double& out) {
    if (!v.is_number()) throw ConfigError(where + ": expected a number");
    out = v.get<double>();
  }
  static void Read(const Json& v, const std::string& where, std::size_t& out) {
    if (!v.is_number_unsigned() &&
        !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
      throw ConfigError(where + ": expected a non-negative integer");
    }
    out = v.get<std::size_t>();
  }
  static void Read(const Json& v, const std::string& where, std::string& out) {
    if (!v.is_string()) throw ConfigError(where + ": expected a string");
    out = v.get<std::string>();
  }
  template <typename T>
  static void Read(const Json& v, const std::string& where, std::vector<T>& out) {
    if (!v.is_array()) throw ConfigError(where + ": expected an array");
    out.clear();
    for (std::size_t i = 0; i < v.size(); ++i) {
      T item;
      Read(v[i], where + "[" + std::to_string(i) + "]", item);
      out.push_back(std::move(item));
    }
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> used_;
};

template <typename F>
void AsConfigError(const std::string& where, F&& check) {
  try {
    check();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

ClusterSpec ParseCluster(const Json& j, const std::string& path) {
  Fields f(j, path);
  ClusterSpec c;
  c.nodes = f.Require<std::size_t>("nodes");
  c.workers_per_node = f.Get<std::size_t>("workers_per_node", 1);
  c.servers = f.Get<std::size_t>("servers", 1);
  c.bandwidth = f.Require<double>("bandwidth");
  c.latency = f.Get<double>("latency", 0.0);
  f.Done();
  AsConfigError(path, [&] { c.Validate(); });
  return c;
}

Json ToJson(const ClusterSpec& c) {
  return {{"nodes", c.nodes},         {"workers_per_node", c.workers_per_node},
          {"servers", c.servers},     {"bandwidth", c.bandwidth},
          {"latency", c.latency}};
}

WorkloadSpec ParseWorkload(const Json& j, const std::string& path,
                           std::optional<std::uint64_t> seed) {
  Fields f(j, path);
  WorkloadSpec w;
  w.vocab = f.Require<std::size_t>("vocab");
  w.batch = f.Require<std::size_t>("batch");
  w.seq_len = f.Require<std::size_t>("seq_len");
  w.zipf_s = f.Get<double>("zipf_s", 1.0);
  w.pad_id = f.Get<std::size_t>("pad_id", 0);
  w.pad_fraction = f.Get<double>("pad_fraction", 0.0);
  w.num_batches = f.Get<std::size_t>("num_batches", 1);
  w.seed = f.Get<std::size_t>("seed", 0);
  if (seed) w.seed = *seed;
  f.Done();
  AsConfigError(path, [&] { w.Validate(); });
  return w;
}

Json ToJson(const WorkloadSpec& w) {
  return {{"vocab", w.vocab},
          {"batch", w.batch},
          {"seq_len", w.seq_len},
          {"zipf_s", w.zipf_s},
          {"pad_id", w.pad_id},
          {"pad_fraction", w.pad_fraction},
          {"num_batches", w.num_batches},
          {"seed", w.seed}};
}

std::vector<Policy> ParsePolicies(Fields& f, const Options& opt) {
  std::vector<Policy> out;
  if (opt.policy) {
    AsConfigError("--policy", [&] { out.push_back(ParsePolicy(*opt.policy)); });
    if (f.Has("policies")) f.Raw("policies");
    return out;
  }
  const auto names = f.Get<std::vector<std::string>>(
      "policies", {"fifo", "horizontal", "2d"});
  for (std::size_t i = 0; i < names.size(); ++i) {
    AsConfigError(f.Where("policies") + "[" + std::to_string(i) + "]",
                  [&] { out.push_back(ParsePolicy(names[i])); });
  }
  if (out.empty()) throw ConfigError(f.Where("policies") + ": must not be empty");
  return out;
}

Json PolicyNames(const std::vector<Policy>& ps) {
  Json out = Json::array();
  for (Policy p : ps) out.push_back(std::string(ToString(p)));
  return out;
}

// ---------------------------------------------------------------------------
// Output helpers.

class OutputDir {
 public:
  explicit OutputDir(const std::string& dir) : dir_(dir) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw ConfigError("cannot create output directory '" + dir + "'");
  }

  std::ofstream Open(const std::string& name) {
    std::ofstream f(dir_ / name);
    if (!f) throw Error("cannot write '" + (dir_ / name).string() + "'");
    written_.push_back(name);
    return f;
  }

  void Manifest(const std::string& subcommand, std::uint64_t seed, Json config) {
    Json m;
    m["tool"] = "sparsecomm";
    m["subcommand"] = subcommand;
    m["seed"] = seed;
    m["config"] = std::move(config);
    m["outputs"] = written_;
    std::ofstream f(dir_ / "manifest.json");
    f << m.dump(2) << '\n';
  }

  const fs::path& path() const { return dir_; }

 private:
  fs::path dir_;
  std::vector<std::string> written_;
};

// ---------------------------------------------------------------------------
// cost

struct CostTensor {
  std::string name;
  double size = 0.0;
  std::optional<double> density;
  std::optional<WorkloadSpec> workload;
};

int CmdCost(const Options& opt, std::ostream& out) {
  const Json j = LoadConfig(opt.config);
  Fields f(j, "");
  std::vector<ClusterSpec> clusters;
  if (f.Has("cluster") == f.Has("clusters")) {
    throw ConfigError("exactly one of 'cluster' or 'clusters' is required");
  }
  if (f.Has("cluster")) {
    clusters.push_back(ParseCluster(f.Raw("cluster"), "cluster"));
  } else {
    const Json& arr = f.Raw("clusters");
    if (!arr.is_array() || arr.empty()) {
      throw ConfigError("clusters: expected a non-empty array");
    }
    for (std::size_t i = 0; i < arr.size(); ++i) {
      clusters.push_back(ParseCluster(arr[i], "clusters[" + std::to_string(i) + "]"));
    }
  }
  const Json& tj = f.Raw("tensors");
  if (!tj.is_array() || tj.empty()) throw ConfigError("tensors: expected a non-empty array");
  std::vector<CostTensor> tensors;
  for (std::size_t i = 0; i < tj.size(); ++i) {
    const std::string path = "tensors[" + std::to_string(i) + "]";
    Fields tf(tj[i], path);
    CostTensor t;
    t.name = tf.Require<std::string>("name");
    t.size = tf.Require<double>("size");
    if (tf.Has("density") == tf.Has("workload")) {
      throw ConfigError(path + ": give exactly one of 'density' or 'workload'");
    }
    if (tf.Has("density")) t.density = tf.Require<double>("density");
    if (tf.Has("workload")) {
      t.workload = ParseWorkload(tf.Raw("workload"), tf.Where("workload"), opt.seed);
    }
    tf.Done();
    if (t.density) {
      AsConfigError(path, [&] { TensorSpec{t.size, *t.density}.Validate(); });
    }
    tensors.push_back(std::move(t));
  }
  f.Done();

  OutputDir dir(opt.out);
  Json resolved_tensors = Json::array();
  std::vector<TensorSpec> specs;
  for (const auto& t : tensors) {
    double alpha = t.density.value_or(0.0);
    Json rt = {{"name", t.name}, {"size", t.size}};
    if (t.workload) {
      const auto stats = ComputeBatchStats(GenerateWorkload(*t.workload));
      double rows = 0;
      for (const auto& s : stats) rows += static_cast<double>(s.coalesced);
      alpha = rows / static_cast<double>(stats.size()) /
              static_cast<double>(t.workload->vocab);
      rt["workload"] = ToJson(*t.workload);
    }
    rt["density"] = alpha;
    specs.push_back({t.size, alpha});
    resolved_tensors.push_back(std::move(rt));
  }

  std::ofstream csv = dir.Open("cost.csv");
  std::ofstream notes = dir.Open("cost_notes.txt");
  csv << "workers,tensor,strategy,seconds,rank\n";
  Json resolved_clusters = Json::array();
  for (const auto& c : clusters) {
    resolved_clusters.push_back(ToJson(c));
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      const CostReport r = RankStrategies(c, specs[i]);
      out << "N=" << c.total_workers() << " " << tensors[i].name
          << " (alpha=" << Num(specs[i].density_alpha) << ")\n";
      for (std::size_t k = 0; k < r.ranked.size(); ++k) {
        const auto& sc = r.ranked[k];
        csv << c.total_workers() << ',' << tensors[i].name << ','
            << ToString(sc.strategy) << ',' << Num(sc.seconds) << ',' << k + 1 << '\n';
        out << "  " << k + 1 << ". " << ToString(sc.strategy) << "  " << Num(sc.seconds)
            << " s\n";
      }
      notes << "N=" << c.total_workers() << " " << tensors[i].name << ":\n";
      notes << "  PS lower bound (S=n): " << Num(r.ps.lower_bound) << " s\n";
      for (const auto& n : r.notes) {
        notes << "  " << n << '\n';
        out << "  note: " << n << '\n';
      }
    }
  }
  dir.Manifest("cost", opt.seed.value_or(0),
               {{"clusters", resolved_clusters}, {"tensors", resolved_tensors}});
  return kExitOk;
}

// ---------------------------------------------------------------------------
// simulate

ModuleKind ParseKind(const std::string& s, const std::string& where) {
  if (s == "embedding") return ModuleKind::kEmbedding;
  if (s == "dense") return ModuleKind::kDenseBlock;
  throw ConfigError(where + ": expected 'embedding' or 'dense', got '" + s + "'");
}

Json StallJson(const StallReport& r) {
  return {{"iteration_time", r.iteration_time},
          {"compute_time", r.compute_time},
          {"computation_stall", r.computation_stall},
          {"idle", r.idle},
          {"split", r.split},
          {"comm_time", r.comm_time},
          {"overlap_fraction", r.overlap_fraction},
          {"total_comm_seconds", r.total_comm_seconds},
          {"sparse_comm_seconds", r.sparse_comm_seconds},
          {"sparse_comm_elements", r.sparse_comm_elements}};
}

int CmdSimulate(const Options& opt, std::ostream& out) {
  const Json j = LoadConfig(opt.config);
  Fields f(j, "");
  SimConfig cfg;
  cfg.cluster = ParseCluster(f.Raw("cluster"), "cluster");
  const Json& mods = f.Raw("modules");
  if (!mods.is_array()) throw ConfigError("modules: expected an array");
  Json resolved_modules = Json::array();
  for (std::size_t i = 0; i < mods.size(); ++i) {
    Fields mf(mods[i], "modules[" + std::to_string(i) + "]");
    ModuleDecl m;
    m.name = mf.Require<std::string>("name");
    m.kind = ParseKind(mf.Require<std::string>("kind"), mf.Where("kind"));
    m.param_elems = mf.Require<std::size_t>("params");
    ModuleCost c;
    c.fp_seconds = mf.Require<double>("fp");
    c.bp_seconds = mf.Require<double>("bp");
    c.density = mf.Get<double>("density", 1.0);
    c.data_elems = mf.Get<double>("data", 0.0);
    mf.Done();
    if (cfg.costs.count(m.name)) {
      throw ConfigError(mf.Where("name") + ": duplicate module '" + m.name + "'");
    }
    resolved_modules.push_back(
        {{"name", m.name},
         {"kind", m.kind == ModuleKind::kEmbedding ? "embedding" : "dense"},
         {"params", m.param_elems},
         {"fp", c.fp_seconds},
         {"bp", c.bp_seconds},
         {"density", c.density},
         {"data", c.data_elems}});
    cfg.costs[m.name] = c;
    cfg.graph.modules.push_back(std::move(m));
  }
  const Json& edges = f.Raw("edges");
  if (!edges.is_array()) throw ConfigError("edges: expected an array");
  for (std::size_t i = 0; i < edges.size(); ++i) {
    std::vector<std::string> e;
    Fields::Read(edges[i], "edges[" + std::to_string(i) + "]", e);
    if (e.size() != 2) {
      throw ConfigError("edges[" + std::to_string(i) + "]: expected [from, to]");
    }
    cfg.graph.edges.push_back({e[0], e[1]});
  }
  cfg.iterations = f.Get<std::size_t>("iterations", 1);
  cfg.split_seconds = f.Get<double>("split_seconds", 0.0);
  std::optional<WorkloadSpec> workload;
  if (f.Has("workload")) {
    if (f.Has("coalesced_ratio") || f.Has("prior_ratio")) {
      throw ConfigError("workload: cannot be combined with explicit split ratios");
    }
    workload = ParseWorkload(f.Raw("workload"), "workload", opt.seed);
    const WorkloadRatios r = MeanRatios(ComputeBatchStats(GenerateWorkload(*workload)));
    cfg.coalesced_ratio = r.coalesced_ratio;
    cfg.prior_ratio = r.prior_ratio;
  } else {
    cfg.coalesced_ratio = f.Get<double>("coalesced_ratio", 1.0);
    cfg.prior_ratio = f.Get<double>("prior_ratio", 1.0);
  }
  const std::vector<Policy> policies = ParsePolicies(f, opt);
  f.Done();
  AsConfigError("config", [&] { cfg.Validate(); });

  Json resolved = {{"cluster", ToJson(cfg.cluster)},
                   {"modules", resolved_modules},
                   {"edges", Json::array()},
                   {"iterations", cfg.iterations},
                   {"split_seconds", cfg.split_seconds},
                   {"coalesced_ratio", cfg.coalesced_ratio},
                   {"prior_ratio", cfg.prior_ratio},
                   {"policies", PolicyNames(policies)}};
  for (const auto& [from, to] : cfg.graph.edges) resolved["edges"].push_back({from, to});
  if (workload) resolved["workload"] = ToJson(*workload);

  OutputDir dir(opt.out);
  Json stall = Json::object();
  std::ofstream csv_stall;
  std::vector<std::pair<Policy, StallReport>> reports;
  for (Policy p : policies) {
    cfg.policy = p;
    const EventTrace trace = Simulate(cfg);
    std::ofstream tf = dir.Open("trace_" + std::string(ToString(p)) + ".jsonl");
    WriteTraceJsonl(trace, tf);
    const StallReport r = ComputeStallReport(trace);
    stall[std::string(ToString(p))] = StallJson(r);
    reports.emplace_back(p, r);
  }
  std::ofstream csv = dir.Open("stall.csv");
  csv << "policy,iteration_time,compute_time,computation_stall,idle,split,comm_time,"
         "overlap_fraction,total_comm_seconds,sparse_comm_seconds\n";
  out << "policy        iteration   stall   overlap\n";
  for (const auto& [p, r] : reports) {
    csv << ToString(p) << ',' << Num(r.iteration_time) << ',' << Num(r.compute_time)
        << ',' << Num(r.computation_stall) << ',' << Num(r.idle) << ',' << Num(r.split)
        << ',' << Num(r.comm_time) << ',' << Num(r.overlap_fraction) << ','
        << Num(r.total_comm_seconds) << ',' << Num(r.sparse_comm_seconds) << '\n';
    std::string name(ToString(p));
    name.resize(12, ' ');
    out << name << "  " << Num(r.iteration_time) << "  " << Num(r.computation_stall)
        << "  " << Num(r.overlap_fraction) << '\n';
  }
  dir.Open("stall.json") << stall.dump(2) << '\n';
  dir.Manifest("simulate", opt.seed.value_or(workload ? workload->seed : 0), resolved);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

double MaxDeviation(const ToyModel& a, const ToyModel& b) {
  double worst = 0.0;
  auto cmp = [&](const DenseMatrix& x, const DenseMatrix& y) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = std::abs(x.data()[i] - y.data()[i]);
      worst = std::max(worst, d / std::max(1.0, std::abs(y.data()[i])));
    }
  };
  cmp(a.embedding, b.embedding);
  for (std::size_t i = 0; i < a.blocks.size(); ++i) cmp(a.blocks[i], b.blocks[i]);
  return worst;
}

int CmdTrain(const Options& opt, std::ostream& out, std::ostream& err) {
  const Json j = LoadConfig(opt.config);
  Fields f(j, "");
  ToyModelSpec spec;
  spec.embedding.vocab = f.Require<std::size_t>("vocab");
  spec.embedding.dim = f.Require<std::size_t>("dim");
  spec.hidden = f.Get<std::vector<std::size_t>>("hidden", {spec.embedding.dim});
  const std::size_t workers = f.Require<std::size_t>("workers");
  WorkloadSpec w;
  w.vocab = spec.embedding.vocab;
  w.num_batches = f.Require<std::size_t>("steps");
  w.batch = f.Require<std::size_t>("batch");
  w.seq_len = f.Require<std::size_t>("seq_len");
  w.zipf_s = f.Get<double>("zipf_s", 1.0);
  w.pad_id = f.Get<std::size_t>("pad_id", 0);
  w.pad_fraction = f.Get<double>("pad_fraction", 0.0);
  w.seed = opt.seed.value_or(f.Get<std::size_t>("seed", 0));
  if (opt.seed && f.Has("seed")) f.Raw("seed");
  AdamConfig adam;
  if (f.Has("adam")) {
    Fields af(f.Raw("adam"), "adam");
    adam.lr = af.Get<double>("lr", adam.lr);
    adam.beta1 = af.Get<double>("beta1", adam.beta1);
    adam.beta2 = af.Get<double>("beta2", adam.beta2);
    adam.eps = af.Get<double>("eps", adam.eps);
    af.Done();
  }
  const double tolerance = opt.tolerance.value_or(f.Get<double>("tolerance", 1e-6));
  if (opt.tolerance && f.Has("tolerance")) f.Raw("tolerance");
  std::vector<Policy> policies = ParsePolicies(f, opt);
  f.Done();
  if (workers == 0) throw ConfigError("workers: must be positive");
  if (!(tolerance >= 0)) throw ConfigError("tolerance: must be >= 0");
  AsConfigError("config", [&] {
    spec.Validate();
    w.Validate();
    adam.Validate();
  });
  if (w.batch % workers != 0) {
    throw ConfigError("batch: " + std::to_string(w.batch) + " does not split over " +
                      std::to_string(workers) + " workers");
  }
  if (workers > spec.embedding.dim) {
    throw ConfigError("workers: more workers than embedding columns");
  }
  if (opt.overlap_split &&
      std::find(policies.begin(), policies.end(), Policy::kTwoD) == policies.end()) {
    policies.push_back(Policy::kTwoD);
  }

  Json resolved = {{"vocab", spec.embedding.vocab},
                   {"dim", spec.embedding.dim},
                   {"hidden", spec.hidden},
                   {"workers", workers},
                   {"steps", w.num_batches},
                   {"batch", w.batch},
                   {"seq_len", w.seq_len},
                   {"zipf_s", w.zipf_s},
                   {"pad_id", w.pad_id},
                   {"pad_fraction", w.pad_fraction},
                   {"seed", w.seed},
                   {"adam",
                    {{"lr", adam.lr},
                     {"beta1", adam.beta1},
                     {"beta2", adam.beta2},
                     {"eps", adam.eps}}},
                   {"tolerance", tolerance},
                   {"policies", PolicyNames(policies)},
                   {"debug_overlap_split", opt.overlap_split}};

  OutputDir dir(opt.out);
  const ToyModel init = InitToyModel(spec, w.seed);
  const ToyTask task = MakeToyTask(spec.embedding.vocab, w.seed);
  const std::vector<TokenBatch> batches = GenerateWorkload(w);

  WorkerGroup single(1);
  const TrainResult reference = TrainBaselineAllGather(single, init, task, batches, adam);
  WorkerGroup group(workers);
  const TrainResult allgather = TrainBaselineAllGather(group, init, task, batches, adam);
  std::vector<std::pair<Policy, TrainResult>> runs;
  for (Policy p : policies) {
    HybridOptions hopt;
    hopt.overlap_split_parts = opt.overlap_split && p == Policy::kTwoD;
    runs.emplace_back(p, TrainHybrid(group, init, task, batches, p, adam, hopt));
  }

  std::ofstream csv = dir.Open("loss.csv");
  csv << "step,single,allgather";
  for (const auto& [p, r] : runs) csv << ',' << ToString(p);
  csv << '\n';
  for (std::size_t s = 0; s < batches.size(); ++s) {
    csv << s + 1 << ',' << Num(reference.losses[s]) << ',' << Num(allgather.losses[s]);
    for (const auto& [p, r] : runs) csv << ',' << Num(r.losses[s]);
    csv << '\n';
  }

  Json verdict;
  double worst = MaxDeviation(allgather.model, reference.model);
  verdict["deviation"]["allgather"] = worst;
  bool same_losses = true;
  for (const auto& [p, r] : runs) {
    const double d = MaxDeviation(r.model, reference.model);
    verdict["deviation"][std::string(ToString(p))] = d;
    worst = std::max(worst, d);
    same_losses = same_losses && r.losses == runs.front().second.losses;
  }
  const bool pass = worst <= tolerance && same_losses;
  verdict["max_deviation"] = worst;
  verdict["tolerance"] = tolerance;
  verdict["identical_policy_losses"] = same_losses;
  verdict["final_loss"] = reference.losses.empty() ? 0.0 : reference.losses.back();
  verdict["pass"] = pass;
  dir.Open("verdict.json") << verdict.dump(2) << '\n';
  dir.Manifest("train", w.seed, resolved);

  out << "max elementwise deviation vs single worker: " << Num(worst)
      << " (tolerance " << Num(tolerance) << ")\n";
  out << "policy loss sequences identical: " << (same_losses ? "yes" : "no") << '\n';
  out << (pass ? "PASS" : "FAIL") << '\n';
  if (!pass) err << "equivalence check failed\n";
  return pass ? kExitOk : kExitInvariantFailure;
}

// ---------------------------------------------------------------------------
// workload

int CmdWorkload(const Options& opt, std::ostream& out) {
  const Json j = LoadConfig(opt.config);
  const WorkloadSpec w = ParseWorkload(j, "", opt.seed);
  OutputDir dir(opt.out);
  const auto stats = ComputeBatchStats(GenerateWorkload(w));
  std::ofstream csv = dir.Open("workload.csv");
  csv << "batch,original,coalesced,prior\n";
  for (std::size_t i = 0; i < stats.size(); ++i) {
    csv << i + 1 << ',' << stats[i].original << ',' << stats[i].coalesced << ','
        << stats[i].prior << '\n';
  }
  const WorkloadRatios r = MeanRatios(stats);
  dir.Open("workload.json") << Json{{"coalesced_ratio", r.coalesced_ratio},
                                    {"prior_ratio", r.prior_ratio}}
                                   .dump(2)
                            << '\n';
  dir.Manifest("workload", w.seed, ToJson(w));
  out << "batches " << stats.size() << ", coalesced ratio " << Num(r.coalesced_ratio)
      << ", prior ratio " << Num(r.prior_ratio) << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

std::string ErrorName(const std::exception& e) {
  if (dynamic_cast<const SchedulingDeadlockError*>(&e)) return "scheduling_deadlock";
  if (dynamic_cast<const DoubleUpdateError*>(&e)) return "double_update";
  if (dynamic_cast<const TrainingDivergedError*>(&e)) return "training_diverged";
  if (dynamic_cast<const PreconditionError*>(&e)) return "precondition";
  if (dynamic_cast<const CollectiveTimeoutError*>(&e)) return "collective_timeout";
  if (dynamic_cast<const CollectiveContractError*>(&e)) return "collective_contract";
  return "runtime";
}

int Fail(const Options& opt, const std::exception& e, int code, std::ostream& err) {
  err << "error: " << e.what() << '\n';
  std::error_code ec;
  if (fs::is_directory(opt.out, ec)) {
    std::ofstream f(fs::path(opt.out) / "error.json");
    f << Json{{"error", ErrorName(e)}, {"message", e.what()}, {"exit_code", code}}.dump(2)
      << '\n';
  }
  return code;
}

}  // namespace

int RunCli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sparse communication cost, scheduling and training toolkit", "sparsecomm"};
  app.require_subcommand(1);
  Options opt;
  std::uint64_t seed = 0;
  std::string policy;
  double tolerance = 0;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config, "JSON config file")->required();
    sub->add_option("--out", opt.out, "output directory")->capture_default_str();
    sub->add_option("--seed", seed, "override every seed in the config");
  };
  CLI::App* cost = app.add_subcommand("cost", "rank aggregation strategies");
  CLI::App* sim = app.add_subcommand("simulate", "replay schedules and report stalls");
  CLI::App* train = app.add_subcommand("train", "toy training equivalence check");
  CLI::App* work = app.add_subcommand("workload", "token batch statistics");
  for (CLI::App* s : {cost, sim, train, work}) common(s);
  for (CLI::App* s : {sim, train}) {
    s->add_option("--policy", policy, "fifo, horizontal or 2d");
  }
  train->add_option("--tolerance", tolerance, "max elementwise deviation");
  train->add_flag("--debug-overlap-split", opt.overlap_split,
                  "send prior rows twice to exercise the double-update check");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfigError;
  }
  for (CLI::App* s : {sim, train, work, cost}) {
    if (s->parsed() && s->count("--seed")) opt.seed = seed;
  }
  if ((sim->parsed() && sim->count("--policy")) ||
      (train->parsed() && train->count("--policy"))) {
    opt.policy = policy;
  }
  if (train->parsed() && train->count("--tolerance")) opt.tolerance = tolerance;

  try {
    if (cost->parsed()) return CmdCost(opt, out);
    if (sim->parsed()) return CmdSimulate(opt, out);
    if (train->parsed()) return CmdTrain(opt, out, err);
    return CmdWorkload(opt, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfigError;
  } catch (const SchedulingDeadlockError& e) {
    return Fail(opt, e, kExitInvariantFailure, err);
  } catch (const DoubleUpdateError& e) {
    out << "FAIL\n";
    return Fail(opt, e, kExitInvariantFailure, err);
  } catch (const PreconditionError& e) {
    return Fail(opt, e, kExitInvariantFailure, err);
  } catch (const std::exception& e) {
    return Fail(opt, e, kExitRuntimeError, err);
  }
}

}  // namespace sparsecomm
