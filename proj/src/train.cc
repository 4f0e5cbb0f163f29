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

#include "sparsecomm/train.h"

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <sstream>

#include "sparsecomm/errors.h"
#include "sparsecomm/schedule.h"

namespace sparsecomm {
namespace {

double UniformSymmetric(std::mt19937_64& rng, double scale) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return (2.0 * u - 1.0) * scale;
}

std::string StepTag(const std::string& what, std::size_t step) {
  return what + " #" + std::to_string(step);
}

std::string BlockName(std::size_t i) { return "Dense" + std::to_string(i); }

ModuleGraph ToyGraph(const ToyModel& model) {
  ModuleGraph g;
  g.modules.push_back({"Embedding", ModuleKind::kEmbedding, model.embedding.size()});
  std::string prev = "Embedding";
  for (std::size_t i = 0; i < model.blocks.size(); ++i) {
    g.modules.push_back({BlockName(i), ModuleKind::kDenseBlock, model.blocks[i].size()});
    g.edges.push_back({prev, BlockName(i)});
    prev = BlockName(i);
  }
  return g;
}

// Outputs of every block for one sequence; acts[0] is the embedding sum.
using Activations = std::vector<std::vector<double>>;

double RunBlocks(const std::vector<DenseMatrix>& blocks, std::vector<double> h0,
                 Activations& acts) {
  acts.clear();
  acts.push_back(std::move(h0));
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const DenseMatrix& w = blocks[b];
    const std::vector<double>& in = acts.back();
    const std::size_t n_in = w.cols() - 1;
    if (in.size() != n_in) {
      throw ShapeError("block " + std::to_string(b) + " expects width " +
                       std::to_string(n_in) + ", got " + std::to_string(in.size()));
    }
    std::vector<double> out(w.rows());
    for (std::size_t o = 0; o < w.rows(); ++o) {
      double z = w(o, n_in);
      for (std::size_t i = 0; i < n_in; ++i) z += w(o, i) * in[i];
      out[o] = b + 1 < blocks.size() ? std::tanh(z) : z;
    }
    acts.push_back(std::move(out));
  }
  return acts.back().at(0);
}

// Accumulates block gradients for d(loss)/d(output) = dout and returns the
// gradient with respect to the embedding sum.
std::vector<double> BackBlocks(const std::vector<DenseMatrix>& blocks,
                               const Activations& acts, double dout,
                               std::vector<DenseMatrix>& grads) {
  std::vector<double> dh{dout};
  for (std::size_t b = blocks.size(); b-- > 0;) {
    const DenseMatrix& w = blocks[b];
    const std::size_t n_in = w.cols() - 1;
    const std::vector<double>& in = acts[b];
    const std::vector<double>& out = acts[b + 1];
    std::vector<double> dz(w.rows());
    for (std::size_t o = 0; o < w.rows(); ++o) {
      dz[o] = b + 1 < blocks.size() ? dh[o] * (1.0 - out[o] * out[o]) : dh[o];
    }
    std::vector<double> din(n_in, 0.0);
    for (std::size_t o = 0; o < w.rows(); ++o) {
      for (std::size_t i = 0; i < n_in; ++i) {
        grads[b](o, i) += dz[o] * in[i];
        din[i] += w(o, i) * dz[o];
      }
      grads[b](o, n_in) += dz[o];
    }
    dh = std::move(din);
  }
  return dh;
}

// Column slice [cols) of the embedding sum of seq, from a vocab x cols table.
void SumRows(const DenseMatrix& table, const Sequence& seq, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  for (TokenId t : seq) {
    if (t >= table.rows()) {
      throw VocabularyBoundsError("token " + std::to_string(t) +
                                  " outside vocabulary of " +
                                  std::to_string(table.rows()));
    }
    const auto row = table.row(t);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += row[c];
  }
}

struct LocalPass {
  double loss_sum = 0.0;
  std::vector<DenseMatrix> block_grads;
  SparseGrad embedding_grad;
};

// FP and BP over `seqs` given their embedding sums. Gradients are scaled for
// a mean over `global_batch` sequences.
LocalPass ForwardBackward(const std::vector<DenseMatrix>& blocks, const ToyTask& task,
                          std::span<const Sequence> seqs, const DenseMatrix& sums,
                          std::size_t global_batch) {
  LocalPass pass;
  pass.embedding_grad = SparseGrad(sums.cols());
  for (const auto& w : blocks) pass.block_grads.emplace_back(w.rows(), w.cols());
  const double scale = 1.0 / static_cast<double>(global_batch);
  Activations acts;
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    const auto h0 = sums.row(s);
    const double y = RunBlocks(blocks, {h0.begin(), h0.end()}, acts);
    const double err = y - task.Target(seqs[s]);
    pass.loss_sum += err * err;
    const std::vector<double> dh0 =
        BackBlocks(blocks, acts, 2.0 * err * scale, pass.block_grads);
    for (TokenId t : seqs[s]) pass.embedding_grad.Append(t, dh0);
  }
  return pass;
}

double GlobalLoss(Communicator& comm, double local_sum, std::size_t global_batch,
                  const std::vector<double>& history) {
  const double loss = comm.AllReduce(std::vector<double>{local_sum})[0] /
                      static_cast<double>(global_batch);
  if (!std::isfinite(loss)) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "loss became " << loss << " at step " << history.size() + 1;
    if (history.empty()) {
      msg << " (no finite loss recorded)";
    } else {
      msg << " (last finite loss " << history.back() << ")";
    }
    throw TrainingDivergedError(msg.str());
  }
  return loss;
}

std::size_t PerRank(const TokenBatch& batch, std::size_t n, std::size_t step) {
  if (batch.empty() || batch.size() % n != 0) {
    throw PreconditionError("batch " + std::to_string(step) + " has " +
                            std::to_string(batch.size()) +
                            " sequences, not a positive multiple of " +
                            std::to_string(n) + " workers");
  }
  return batch.size() / n;
}

void CheckModel(const ToyModel& m) {
  if (m.blocks.empty()) throw ShapeError("toy model needs at least one dense block");
  if (m.blocks.front().cols() != m.embedding.cols() + 1) {
    throw ShapeError("first dense block does not match the embedding width");
  }
  if (m.blocks.back().rows() != 1) throw ShapeError("last dense block must have width 1");
}

// Sends each rank its column slice of g and sums what comes back, rank by rank.
SparseGrad ExchangeColumnSlices(Communicator& comm, const SparseGrad& g,
                                const std::vector<Range>& cols) {
  std::vector<SparseGrad> out;
  out.reserve(cols.size());
  for (const Range& c : cols) out.push_back(SliceColumns(g, c.start, c.count));
  const std::vector<SparseGrad> in = comm.AllToAll(std::move(out));
  return Coalesce(ConcatEntries(in));
}

}  // namespace

void AdamConfig::Validate() const {
  if (!(lr > 0) || !(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1) ||
      !(eps > 0)) {
    throw PreconditionError("Adam needs lr > 0, betas in [0, 1) and eps > 0");
  }
}

ElementwiseAdamState::ElementwiseAdamState(std::size_t rows, std::size_t cols,
                                           AdamConfig cfg)
    : cfg_(cfg), m_(rows, cols), v_(rows, cols) {
  cfg_.Validate();
}

double ElementwiseAdamState::StepSize() const {
  const double t = static_cast<double>(step_ + 1);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
  return cfg_.lr * std::sqrt(bc2) / bc1;
}

void ElementwiseAdamState::UpdateRow(std::span<double> p, std::size_t row,
                                     std::span<const double> g, double step_size) {
  auto m = m_.row(row);
  auto v = v_.row(row);
  for (std::size_t c = 0; c < g.size(); ++c) {
    m[c] = cfg_.beta1 * m[c] + (1.0 - cfg_.beta1) * g[c];
    v[c] = cfg_.beta2 * v[c] + (1.0 - cfg_.beta2) * g[c] * g[c];
    p[c] -= step_size * m[c] / (std::sqrt(v[c]) + cfg_.eps);
  }
}

void ElementwiseAdamState::ApplyPartial(DenseMatrix& params, const SparseGrad& part,
                                        bool final_part) {
  if (params.rows() != m_.rows() || params.cols() != m_.cols()) {
    throw ShapeError("parameters do not match the optimizer state");
  }
  if (!part.empty() && part.num_cols() != m_.cols()) {
    throw ShapeError("gradient has " + std::to_string(part.num_cols()) +
                     " columns, parameters have " + std::to_string(m_.cols()));
  }
  if (!part.coalesced()) throw PreconditionError("gradient part must be coalesced");
  for (RowIndex r : part.indices()) {
    if (r >= m_.rows()) {
      throw BoundsError("gradient row " + std::to_string(r) + " outside " +
                        std::to_string(m_.rows()) + " rows");
    }
    if (touched_.count(r)) {
      throw DoubleUpdateError("row " + std::to_string(r) +
                              " updated twice in step " + std::to_string(step_ + 1));
    }
  }
  const double step_size = StepSize();
  for (std::size_t i = 0; i < part.size(); ++i) {
    UpdateRow(params.row(part.index(i)), part.index(i), part.value(i), step_size);
    touched_.insert(part.index(i));
  }
  if (final_part) {
    ++step_;
    touched_.clear();
  }
}

void ElementwiseAdamState::ApplyDense(DenseMatrix& params, const DenseMatrix& grad) {
  if (params.rows() != m_.rows() || params.cols() != m_.cols() ||
      grad.rows() != m_.rows() || grad.cols() != m_.cols()) {
    throw ShapeError("dense Adam shapes disagree");
  }
  if (!touched_.empty()) {
    throw DoubleUpdateError("dense step issued while a partial step is open");
  }
  const double step_size = StepSize();
  for (std::size_t r = 0; r < m_.rows(); ++r) {
    UpdateRow(params.row(r), r, grad.row(r), step_size);
  }
  ++step_;
}

void ToyModelSpec::Validate() const {
  embedding.Validate();
  for (std::size_t w : hidden) {
    if (w == 0) throw PreconditionError("hidden width must be positive");
  }
}

ToyModel InitToyModel(const ToyModelSpec& spec, std::uint64_t seed) {
  spec.Validate();
  std::mt19937_64 rng(seed);
  ToyModel m;
  const std::size_t dim = spec.embedding.dim;
  m.embedding = DenseMatrix(spec.embedding.vocab, dim);
  const double emb_scale = 1.0 / std::sqrt(static_cast<double>(dim));
  for (double& x : m.embedding.mutable_data()) x = UniformSymmetric(rng, emb_scale);
  std::vector<std::size_t> widths = spec.hidden;
  widths.push_back(1);
  std::size_t in = dim;
  for (std::size_t out : widths) {
    DenseMatrix w(out, in + 1);
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& x : w.mutable_data()) x = UniformSymmetric(rng, scale);
    m.blocks.push_back(std::move(w));
    in = out;
  }
  return m;
}

double ToyTask::Target(const Sequence& seq) const {
  double y = 0.0;
  for (TokenId t : seq) {
    if (t >= token_value.size()) {
      throw VocabularyBoundsError("token " + std::to_string(t) + " has no target value");
    }
    y += token_value[t];
  }
  return y;
}

ToyTask MakeToyTask(std::size_t vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  ToyTask task;
  task.token_value.resize(vocab);
  for (double& v : task.token_value) v = UniformSymmetric(rng, 0.5);
  return task;
}

double ToyForward(const ToyModel& model, const Sequence& seq) {
  std::vector<double> h0(model.embedding.cols());
  SumRows(model.embedding, seq, h0);
  Activations acts;
  return RunBlocks(model.blocks, std::move(h0), acts);
}

double ToyLoss(const ToyModel& model, const ToyTask& task, const TokenBatch& batch) {
  if (batch.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& seq : batch) {
    const double err = ToyForward(model, seq) - task.Target(seq);
    sum += err * err;
  }
  return sum / static_cast<double>(batch.size());
}

TrainResult TrainHybrid(WorkerGroup& group, const ToyModel& init, const ToyTask& task,
                        std::span<const TokenBatch> batches, Policy policy,
                        const AdamConfig& adam, const HybridOptions& options) {
  CheckModel(init);
  adam.Validate();
  const std::size_t n = group.size();
  const EmbeddingSpec spec{init.embedding.rows(), init.embedding.cols()};
  const std::vector<EmbeddingShard> initial = PartitionColumnwise(spec, init.embedding, n);
  std::vector<Range> cols;
  for (const auto& s : initial) cols.push_back(s.cols);
  const PrioritySchedule prio = AssignPriorities(ToyGraph(init));

  std::vector<EmbeddingShard> final_shards(n);
  TrainResult result;

  RunOnRanks(group, [&](Communicator& comm) {
    const std::size_t rank = comm.rank();
    EmbeddingShard shard = initial[rank];
    std::vector<DenseMatrix> blocks = init.blocks;
    ElementwiseAdamState emb_adam(spec.vocab, shard.cols.count, adam);
    std::vector<ElementwiseAdamState> block_adam;
    for (const auto& w : blocks) block_adam.emplace_back(w.rows(), w.cols(), adam);
    CommExecutor exec;
    std::vector<double> losses;

    // kTwoD: this worker's not-yet-exchanged rows from the previous step.
    std::optional<SparseGrad> pending;
    std::vector<RowIndex> pending_rows;

    auto submit_embedding = [&](int priority, const std::string& tag,
                                const SparseGrad& g, SparseGrad& out) {
      exec.Submit(priority, tag,
                  [&comm, &g, &out, &cols] { out = ExchangeColumnSlices(comm, g, cols); });
    };

    for (std::size_t step = 0; step < batches.size(); ++step) {
      const TokenBatch& batch = batches[step];
      const std::size_t per = PerRank(batch, n, step);
      const std::size_t k = step + 1;

      // Rows whose exchange is deferred must not be read by this lookup.
      for (const auto& seq : batch) {
        for (TokenId t : seq) {
          if (std::binary_search(pending_rows.begin(), pending_rows.end(), t)) {
            throw PreconditionError("step " + std::to_string(k) + " reads row " +
                                    std::to_string(t) + " before its update landed");
          }
        }
      }

      // Lookup of the whole batch in the local column slice, then AlltoAll so
      // each worker receives every slice of its own sequences.
      std::vector<DenseMatrix> slices;
      for (std::size_t dst = 0; dst < n; ++dst) {
        DenseMatrix part(per, shard.cols.count);
        for (std::size_t s = 0; s < per; ++s) {
          SumRows(shard.weights, batch[dst * per + s], part.row(s));
        }
        slices.push_back(std::move(part));
      }
      const DenseMatrix sums = ConcatColumns(comm.AllToAll(std::move(slices)));
      const std::span<const Sequence> mine(batch.data() + rank * per, per);

      LocalPass pass = ForwardBackward(blocks, task, mine, sums, batch.size());
      losses.push_back(GlobalLoss(comm, pass.loss_sum, batch.size(), losses));

      // Gradient exchange, issued through the priority queue. Release order
      // follows the backward pass: last dense block first, embedding last.
      std::vector<DenseMatrix> reduced(blocks.size());
      for (std::size_t b = blocks.size(); b-- > 0;) {
        const int p = policy == Policy::kFifo ? 0 : prio.priority_of(BlockName(b));
        exec.Submit(p, StepTag("AllReduce " + BlockName(b), k),
                    [&comm, &pass, &reduced, b] {
                      const DenseMatrix& g = pass.block_grads[b];
                      reduced[b] = DenseMatrix(g.rows(), g.cols(), comm.AllReduce(g.data()));
                    });
      }

      SparseGrad whole, prior, scheduled_prev;
      SplitGradients split;
      const bool had_pending = pending.has_value();
      if (policy == Policy::kTwoD) {
        std::vector<std::vector<TokenId>> current(n);
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t s = 0; s < per; ++s) {
            const auto& seq = batch[r * per + s];
            current[r].insert(current[r].end(), seq.begin(), seq.end());
          }
        }
        const std::vector<TokenId> next =
            step + 1 < batches.size() ? Flatten(batches[step + 1]) : std::vector<TokenId>{};
        split = VerticalSplit(pass.embedding_grad, current, next, rank);
        submit_embedding(prio.prior_priority, StepTag("AlltoAll prior", k), split.prior,
                         prior);
        if (had_pending) {
          submit_embedding(prio.scheduled_priority, StepTag("AlltoAll scheduled", k - 1),
                           *pending, scheduled_prev);
        }
      } else {
        pass.embedding_grad = Coalesce(pass.embedding_grad);
        submit_embedding(prio.prior_priority, StepTag("AlltoAll embedding", k),
                         pass.embedding_grad, whole);
      }
      exec.Release();
      exec.Wait();

      if (policy == Policy::kTwoD) {
        if (had_pending) emb_adam.ApplyPartial(shard.weights, scheduled_prev, true);
        emb_adam.ApplyPartial(shard.weights, prior, false);
        pending = std::move(split.scheduled);
        if (options.overlap_split_parts) {
          const std::vector<SparseGrad> both = {*pending, split.prior};
          pending = Coalesce(ConcatEntries(both));
        }
        pending_rows = std::move(split.scheduled_rows);
      } else {
        emb_adam.ApplyPartial(shard.weights, whole, true);
      }
      for (std::size_t b = 0; b < blocks.size(); ++b) {
        block_adam[b].ApplyDense(blocks[b], reduced[b]);
      }
    }

    if (pending) {
      SparseGrad last;
      submit_embedding(prio.scheduled_priority,
                       StepTag("AlltoAll scheduled", batches.size()), *pending, last);
      exec.Release();
      exec.Wait();
      emb_adam.ApplyPartial(shard.weights, last, true);
    }

    final_shards[rank] = std::move(shard);
    if (rank == 0) {
      result.model.blocks = std::move(blocks);
      result.losses = std::move(losses);
      result.comm_order = exec.executed_tags();
    }
  });

  result.model.embedding = ReassembleColumns(final_shards);
  return result;
}

TrainResult TrainBaselineAllGather(WorkerGroup& group, const ToyModel& init,
                                   const ToyTask& task,
                                   std::span<const TokenBatch> batches,
                                   const AdamConfig& adam) {
  CheckModel(init);
  adam.Validate();
  const std::size_t n = group.size();
  TrainResult result;

  RunOnRanks(group, [&](Communicator& comm) {
    const std::size_t rank = comm.rank();
    ToyModel model = init;
    ElementwiseAdamState emb_adam(model.embedding.rows(), model.embedding.cols(), adam);
    std::vector<ElementwiseAdamState> block_adam;
    for (const auto& w : model.blocks) block_adam.emplace_back(w.rows(), w.cols(), adam);
    std::vector<double> losses;

    for (std::size_t step = 0; step < batches.size(); ++step) {
      const TokenBatch& batch = batches[step];
      const std::size_t per = PerRank(batch, n, step);
      const std::span<const Sequence> mine(batch.data() + rank * per, per);
      DenseMatrix sums(per, model.embedding.cols());
      for (std::size_t s = 0; s < per; ++s) SumRows(model.embedding, mine[s], sums.row(s));

      LocalPass pass = ForwardBackward(model.blocks, task, mine, sums, batch.size());
      losses.push_back(GlobalLoss(comm, pass.loss_sum, batch.size(), losses));

      for (std::size_t b = model.blocks.size(); b-- > 0;) {
        const DenseMatrix& g = pass.block_grads[b];
        pass.block_grads[b] = DenseMatrix(g.rows(), g.cols(), comm.AllReduce(g.data()));
      }
      const std::vector<SparseGrad> all = comm.AllGather(Coalesce(pass.embedding_grad));
      emb_adam.ApplyPartial(model.embedding, Coalesce(ConcatEntries(all)), true);
      for (std::size_t b = 0; b < model.blocks.size(); ++b) {
        block_adam[b].ApplyDense(model.blocks[b], pass.block_grads[b]);
      }
    }
    if (rank == 0) {
      result.model = std::move(model);
      result.losses = std::move(losses);
    }
  });
  return result;
}

}  // namespace sparsecomm
