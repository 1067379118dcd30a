#include <map>
#include <mutex>
#include <thread>

#include "helpers.hpp"
#include "model_check.hpp"

using namespace molddp;
using molddp::testing::error_kind_of;

namespace {

const MemorySource& corpus() {
  static const MemorySource src = check::synth_source(300, 21, synth::Target::HeavyAtoms, 3);
  return src;
}

DatasetSplit fixed_split() {
  DatasetSplit s;
  for (std::int64_t i = 0; i < 256; ++i) s.train.push_back(i);
  for (std::int64_t i = 256; i < 280; ++i) s.val.push_back(i);
  for (std::int64_t i = 280; i < 300; ++i) s.test.push_back(i);
  return s;
}

TrainOptions small_options(int W, int epochs = 2) {
  TrainOptions o;
  o.model.num_conv_layers = 2;
  o.model.hidden_width = 8;
  o.model.fc_layers = 1;
  o.hyper.local_batch_size = 32 / W;
  o.hyper.max_epochs = epochs;
  o.world_size = W;
  o.seed = 5;
  o.algo = AllreduceAlgo::Naive;
  o.final_parity = false;
  return o;
}

}  // namespace

TEST(Ddp, SingleRankMatchesPlainLoopExactly) {
  const auto opt = small_options(1);
  const auto res = run_training<double>(corpus(), fixed_split(), opt);
  const auto ref = check::reference_training<double>(corpus(), fixed_split(), opt);
  EXPECT_EQ(res.model->flat_values(), ref.flat_values());
  EXPECT_EQ(res.model->step(), ref.step());
}

TEST(Ddp, DataParallelMatchesLargeBatchReference) {
  for (int W : {2, 4}) {
    const auto opt = small_options(W);
    const auto res = run_training<double>(corpus(), fixed_split(), opt);
    const auto ref = check::reference_training<double>(corpus(), fixed_split(), opt);
    const auto a = res.model->flat_values(), b = ref.flat_values();
    EXPECT_LE(check::max_relative_divergence<double>(a, b), 1e-6) << "W=" << W;
    EXPECT_EQ(res.model->step(), 2 * 256 / 32);
  }
}

TEST(Ddp, RanksHoldIdenticalParametersAfterEveryStep) {
  const int W = 3;
  auto opt = small_options(W);
  opt.hyper.local_batch_size = 10;
  std::mutex mu;
  std::map<std::int64_t, std::vector<std::vector<double>>> seen;
  const StepHook<double> hook = [&](int, std::int64_t step, const Model<double>& m) {
    auto v = m.flat_values();
    std::lock_guard lk(mu);
    seen[step].push_back(std::move(v));
  };
  run_training<double>(corpus(), fixed_split(), opt, hook);
  ASSERT_FALSE(seen.empty());
  // 256 / 3 gives 85 samples per rank: 9 steps per epoch, the last one partial
  EXPECT_EQ(seen.size(), 18u);
  for (const auto& [step, views] : seen) {
    ASSERT_EQ(views.size(), static_cast<std::size_t>(W)) << step;
    for (const auto& v : views) ASSERT_EQ(v, views[0]) << "step " << step;
  }
}

TEST(Ddp, TimingsAndHistoryShape) {
  const int W = 2;
  auto opt = small_options(W, 3);
  const auto res = run_training<double>(corpus(), fixed_split(), opt);
  ASSERT_EQ(res.timings.size(), static_cast<std::size_t>(3 * W));
  for (std::size_t k = 0; k < res.timings.size(); ++k) {
    const auto& t = res.timings[k];
    EXPECT_EQ(t.rank, static_cast<int>(k / 3));
    EXPECT_EQ(t.epoch, static_cast<int>(k % 3));
    EXPECT_EQ(t.samples, 128);
    EXPECT_EQ(t.batches, 8);
    EXPECT_GE(t.total, t.forward + t.backward + t.optimizer);
  }
  ASSERT_EQ(res.history.size(), 3u);
  for (const auto& h : res.history) {
    EXPECT_EQ(h.samples, 256);
    EXPECT_GT(h.train_loss, 0);
    EXPECT_GT(h.val_mae, 0);
    EXPECT_LE(h.train_mae, std::sqrt(h.train_loss) + 1e-12);
  }
  EXPECT_GT(res.delta, 0);
}

TEST(Ddp, RerunIsBitIdenticalInDoublePrecision) {
  auto opt = small_options(2);
  opt.algo = AllreduceAlgo::Ring;
  opt.prefetch_depth = 2;
  const auto a = run_training<double>(corpus(), fixed_split(), opt);
  const auto b = run_training<double>(corpus(), fixed_split(), opt);
  EXPECT_EQ(a.model->flat_values(), b.model->flat_values());
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t e = 0; e < a.history.size(); ++e) {
    EXPECT_EQ(a.history[e].train_loss, b.history[e].train_loss);
    EXPECT_EQ(a.history[e].val_mae, b.history[e].val_mae);
  }
}

TEST(Ddp, MaxStepsFinalParityAndCheckpoint) {
  molddp::testing::TempDir dir;
  auto opt = small_options(2, 5);
  opt.max_steps = 3;
  opt.final_parity = true;
  opt.checkpoint_dir = dir.path();
  const auto res = run_training<float>(corpus(), fixed_split(), opt);
  EXPECT_EQ(res.model->step(), 3);
  EXPECT_EQ(res.history.size(), 1u);
  EXPECT_EQ(res.train.count, 256);
  EXPECT_EQ(res.val.count, 24);
  EXPECT_EQ(res.test.count, 20);
  const auto back = load_checkpoint<float>(dir.path() / "checkpoint.bin");
  EXPECT_EQ(back.flat_values(), res.model->flat_values());
}

TEST(Ddp, StopsOnceValidationMaeIsBelowTarget) {
  auto opt = small_options(2, 4);
  opt.stop_below_val_mae = 1e9;
  const auto early = run_training<double>(corpus(), fixed_split(), opt);
  EXPECT_EQ(early.history.size(), 1u);
  EXPECT_EQ(early.model->step(), 256 / 32);
  opt.stop_below_val_mae = 0.0;
  const auto full = run_training<double>(corpus(), fixed_split(), opt);
  EXPECT_EQ(full.history.size(), 4u);
  EXPECT_EQ(full.model->step(), 4 * 256 / 32);
  opt.validate = false;
  opt.stop_below_val_mae = 1e9;
  EXPECT_EQ(run_training<double>(corpus(), fixed_split(), opt).history.size(), 4u);
}

TEST(Ddp, BroadcastAlignsDivergentInitialisations) {
  auto mesh = make_inprocess_mesh(2);
  ModelConfig cfg;
  cfg.node_features = 4;
  cfg.num_conv_layers = 1;
  cfg.hidden_width = 3;
  std::vector<std::vector<double>> out(2);
  std::vector<std::thread> threads;
  for (int r = 0; r < 2; ++r)
    threads.emplace_back([&, r] {
      Communicator comm(*mesh[static_cast<std::size_t>(r)]);
      Model<double> m(cfg, 1.0, static_cast<std::uint64_t>(100 + r));
      broadcast_params(comm, m);
      out[static_cast<std::size_t>(r)] = m.flat_values();
    });
  for (auto& t : threads) t.join();
  EXPECT_EQ(out[0], out[1]);
  EXPECT_EQ(out[0], Model<double>(cfg, 1.0, 100).flat_values());
}

TEST(Ddp, ErrorsSurfaceFromEveryRank) {
  auto opt = small_options(2);
  opt.hyper.learning_rate = 0;
  EXPECT_EQ(error_kind_of([&] { run_training<double>(corpus(), fixed_split(), opt); }), ErrorKind::InvalidArgument);
  opt = small_options(2);
  opt.world_size = 0;
  EXPECT_EQ(error_kind_of([&] { run_training<double>(corpus(), fixed_split(), opt); }), ErrorKind::InvalidArgument);
  auto bad = fixed_split();
  bad.train.push_back(100000);
  EXPECT_EQ(error_kind_of([&] { run_training<double>(corpus(), bad, small_options(2)); }), ErrorKind::IndexOutOfRange);
}
