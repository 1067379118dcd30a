#pragma once

#include <atomic>
#include <chrono>
#include <exception>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "molddp/collective.hpp"
#include "molddp/dataload.hpp"
#include "molddp/gcnn.hpp"
#include "molddp/graphenc.hpp"

namespace molddp {

/// Seconds spent per phase in one epoch on one rank.
struct PhaseTimings {
  int rank = 0;
  int epoch = 0;
  double dataload = 0;
  double forward = 0;
  double backward = 0;
  double optimizer = 0;
  double gradient_aggregation = 0;
  double total = 0;
  std::int64_t samples = 0;
  std::int64_t batches = 0;

  static constexpr std::size_t kFields = 10;
  std::array<double, kFields> pack() const {
    return {static_cast<double>(rank), static_cast<double>(epoch), dataload, forward, backward, optimizer,
            gradient_aggregation, total, static_cast<double>(samples), static_cast<double>(batches)};
  }
  static PhaseTimings unpack(std::span<const double> v) {
    PhaseTimings t;
    t.rank = static_cast<int>(v[0]);
    t.epoch = static_cast<int>(v[1]);
    t.dataload = v[2];
    t.forward = v[3];
    t.backward = v[4];
    t.optimizer = v[5];
    t.gradient_aggregation = v[6];
    t.total = v[7];
    t.samples = static_cast<std::int64_t>(v[8]);
    t.batches = static_cast<std::int64_t>(v[9]);
    return t;
  }
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0;  // mean per-sample MSE over the epoch, all ranks
  double train_mae = 0;
  double val_mse = 0;
  double val_mae = 0;
  std::int64_t samples = 0;  // consumed by all ranks together
};

struct TrainOptions {
  ModelConfig model;
  Hyper hyper;
  int world_size = 1;
  std::uint64_t seed = 0;
  AllreduceAlgo algo = AllreduceAlgo::Ring;
  int prefetch_depth = 0;
  std::int64_t max_steps = -1;  // stop early after this many optimizer steps
  bool validate = true;
  bool final_parity = true;
  std::optional<double> delta;  // computed from the training split when absent
  std::optional<double> stop_below_val_mae;  // end training once rank 0 validates below this
  std::filesystem::path checkpoint_dir;
  std::chrono::milliseconds timeout{std::chrono::seconds(300)};
};

template <class T>
struct WorkerResult {
  std::optional<Model<T>> model;
  std::vector<PhaseTimings> timings;  // rank 0: every rank's, rank-major; others: own
  std::vector<EpochMetrics> history;  // rank 0 only
  EvalResult train, val, test;        // rank 0 only, when final_parity
  double delta = 0;
};

/// Called after every optimizer step with (rank, step, model).
template <class T>
using StepHook = std::function<void(int, std::int64_t, const Model<T>&)>;

/// Makes every rank hold rank 0's parameters bit-for-bit.
template <class T>
void broadcast_params(Communicator& comm, Model<T>& model) {
  std::vector<T> flat = model.flat_values();
  comm.broadcast(std::span<T>(flat), 0);
  model.set_flat_values(flat);
}

/// Local forward/backward, gradient averaging, identical AdamW step on all
/// ranks. Returns the local mean loss.
template <class T>
T train_step(Communicator& comm, Model<T>& model, const GraphBatch<T>& batch, const Hyper& hp,
             AllreduceAlgo algo = AllreduceAlgo::Ring, PhaseTimings* timing = nullptr, Vec<T>* predictions = nullptr) {
  using clock = std::chrono::steady_clock;
  auto secs = [](clock::time_point a, clock::time_point b) { return std::chrono::duration<double>(b - a).count(); };
  model.zero_grad();
  const auto t0 = clock::now();
  Vec<T> pred = model.forward(batch);
  const T loss = mse_loss(pred, batch.y);
  const auto t1 = clock::now();
  model.backward(T(2) * (pred - batch.y) / static_cast<T>(batch.num_graphs));
  const auto t2 = clock::now();
  if (comm.world_size() > 1) {
    std::vector<T> g = model.flat_grads();
    comm.allreduce_mean(std::span<T>(g), algo);
    model.set_flat_grads(g);
  }
  const auto t3 = clock::now();
  model.adamw_step(hp);
  const auto t4 = clock::now();
  if (timing) {
    timing->forward += secs(t0, t1);
    timing->backward += secs(t1, t2);
    timing->gradient_aggregation += secs(t2, t3);
    timing->optimizer += secs(t3, t4);
  }
  if (predictions) *predictions = std::move(pred);
  return loss;
}

/// SPMD body executed by every rank.
template <class T>
WorkerResult<T> run_worker(Communicator& comm, const GraphSource& source, const DatasetSplit& split,
                           const TrainOptions& opt, const StepHook<T>& hook = {}) {
  using clock = std::chrono::steady_clock;
  opt.hyper.validate();
  const int rank = comm.rank(), W = comm.world_size();
  require(W == opt.world_size, ErrorKind::InvalidArgument, "communicator size differs from world_size");
  WorkerResult<T> res;

  double delta = opt.delta.value_or(0.0);
  if (!opt.delta) {
    std::array<double, 1> d{0.0};
    if (rank == 0) d[0] = degree_statistic(source, split.train);
    comm.broadcast(std::span<double>(d), 0);
    delta = d[0];
  }
  res.delta = delta;

  ModelConfig cfg = opt.model;
  if (cfg.node_features == 0) cfg.node_features = node_feature_count(source.vocab());
  Model<T> model(cfg, delta, opt.seed);
  broadcast_params(comm, model);

  const int B = opt.hyper.local_batch_size;
  std::int64_t steps = 0;
  bool stop = false;
  for (int epoch = 0; epoch < opt.hyper.max_epochs && !stop; ++epoch) {
    PhaseTimings tm;
    tm.rank = rank;
    tm.epoch = epoch;
    const auto epoch_start = clock::now();
    auto shard = shard_indices(split.train, rank, W, opt.seed, static_cast<std::uint64_t>(epoch));
    BatchLoader loader(source, std::move(shard), {B, opt.prefetch_depth, false});
    double se = 0, ae = 0;
    std::int64_t n = 0;
    for (;;) {
      const auto tl = clock::now();
      auto batch = loader.next();
      if (!batch) break;
      const auto g = to_graph_batch<T>(*batch);
      tm.dataload += std::chrono::duration<double>(clock::now() - tl).count();
      Vec<T> pred;
      const T loss = train_step(comm, model, g, opt.hyper, opt.algo, &tm, &pred);
      se += static_cast<double>(loss) * static_cast<double>(g.num_graphs);
      ae += (pred - g.y).cwiseAbs().template cast<double>().sum();
      n += g.num_graphs;
      ++tm.batches;
      ++steps;
      if (hook) hook(rank, steps, model);
      if (opt.max_steps >= 0 && steps >= opt.max_steps) {
        stop = true;
        break;
      }
    }
    tm.samples = n;
    tm.total = std::chrono::duration<double>(clock::now() - epoch_start).count();
    res.timings.push_back(tm);

    std::array<double, 3> sums{se, ae, static_cast<double>(n)};
    comm.allreduce_mean(std::span<double>(sums), AllreduceAlgo::Naive);
    EpochMetrics em;
    em.epoch = epoch;
    em.samples = static_cast<std::int64_t>(std::llround(sums[2] * W));
    if (sums[2] > 0) {
      em.train_loss = sums[0] / sums[2];
      em.train_mae = sums[1] / sums[2];
    }
    if (rank == 0) {
      if (opt.validate && !split.val.empty()) {
        BatchLoader vl(source, split.val, {B, 0, false});
        const auto ev = evaluate(model, vl);
        em.val_mse = ev.mse;
        em.val_mae = ev.mae;
      }
      res.history.push_back(em);
      if (!opt.checkpoint_dir.empty()) {
        std::filesystem::create_directories(opt.checkpoint_dir);
        save_checkpoint(opt.checkpoint_dir / "checkpoint.bin", model);
      }
    }
    if (opt.stop_below_val_mae) {
      std::array<double, 1> done{0.0};
      if (rank == 0 && opt.validate && !split.val.empty() && em.val_mae < *opt.stop_below_val_mae) done[0] = 1.0;
      comm.broadcast(std::span<double>(done), 0);
      stop = stop || done[0] != 0.0;
    }
    comm.barrier();
  }

  std::vector<double> packed;
  for (const auto& t : res.timings) {
    const auto p = t.pack();
    packed.insert(packed.end(), p.begin(), p.end());
  }
  auto all = comm.gather(std::span<const double>(packed), 0);
  if (rank == 0) {
    res.timings.clear();
    for (const auto& v : all)
      for (std::size_t k = 0; k + PhaseTimings::kFields <= v.size(); k += PhaseTimings::kFields)
        res.timings.push_back(PhaseTimings::unpack(std::span(v).subspan(k, PhaseTimings::kFields)));
    if (opt.final_parity) {
      auto eval_on = [&](const std::vector<std::int64_t>& idx) {
        BatchLoader l(source, idx, {B, 0, false});
        return evaluate(model, l);
      };
      res.train = eval_on(split.train);
      res.val = eval_on(split.val);
      res.test = eval_on(split.test);
    }
  }
  res.model = std::move(model);
  return res;
}

/// Runs world_size ranks as threads over an in-process mesh and returns
/// rank 0's result. The first failing rank aborts the rest and its error is
/// rethrown.
template <class T>
WorkerResult<T> run_training(const GraphSource& source, const DatasetSplit& split, const TrainOptions& opt,
                             const StepHook<T>& hook = {}) {
  require(opt.world_size >= 1, ErrorKind::InvalidArgument, "world_size must be >= 1");
  auto mesh = make_inprocess_mesh(opt.world_size);
  std::vector<std::optional<WorkerResult<T>>> results(static_cast<std::size_t>(opt.world_size));
  std::mutex err_mu;
  std::exception_ptr first_error;
  auto body = [&](int r) {
    Communicator comm(*mesh[static_cast<std::size_t>(r)], opt.timeout);
    try {
      results[static_cast<std::size_t>(r)] = run_worker<T>(comm, source, split, opt, hook);
    } catch (const std::exception& e) {
      {
        std::lock_guard lk(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
      comm.abort("rank " + std::to_string(r) + ": " + e.what());
    }
  };
  if (opt.world_size == 1) {
    body(0);
  } else {
    std::vector<std::thread> threads;
    for (int r = 0; r < opt.world_size; ++r) threads.emplace_back(body, r);
    for (auto& t : threads) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  return std::move(*results[0]);
}

}  // namespace molddp
