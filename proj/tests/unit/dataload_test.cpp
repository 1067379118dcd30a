#include <numeric>
#include <set>

#include "helpers.hpp"

using namespace molddp;
using molddp::testing::error_kind_of;
using molddp::testing::random_samples;
using molddp::testing::TempDir;

namespace {

GraphSample chain(std::int64_t nodes, std::int64_t id) {
  GraphSample g;
  g.id = id;
  g.node_features = 2;
  g.num_nodes = nodes;
  for (std::int64_t i = 0; i < nodes; ++i) g.x.insert(g.x.end(), {static_cast<float>(i), static_cast<float>(id)});
  std::vector<std::int64_t> src, dst;
  for (std::int64_t i = 0; i + 1 < nodes; ++i) {
    src.push_back(i);
    dst.push_back(i + 1);
  }
  g.num_edges = static_cast<std::int64_t>(src.size());
  g.edge_index = src;
  g.edge_index.insert(g.edge_index.end(), dst.begin(), dst.end());
  g.edge_attr.assign(static_cast<std::size_t>(g.num_edges * 4), 1.0f);
  g.y = {static_cast<float>(id)};
  return g;
}

std::vector<std::int64_t> iota_n(std::int64_t n) {
  std::vector<std::int64_t> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

std::vector<Batch> drain(BatchLoader& l) {
  std::vector<Batch> out;
  while (auto b = l.next()) out.push_back(std::move(*b));
  return out;
}

bool same_batch(const Batch& a, const Batch& b) { return batch_checksum(a) == batch_checksum(b) && a.ids == b.ids; }

}  // namespace

TEST(Collate, BatchVectorAndOffsets) {
  const std::vector<GraphSample> s{chain(3, 0), chain(5, 1)};
  const auto b = collate(s);
  EXPECT_EQ(b.num_graphs, 2);
  EXPECT_EQ(b.batch_vector, (std::vector<std::int64_t>{0, 0, 0, 1, 1, 1, 1, 1}));
  // second graph's first edge 0->1 becomes 3->4
  EXPECT_EQ(b.edge_index[2], 3);
  EXPECT_EQ(b.edge_index[static_cast<std::size_t>(b.num_edges + 2)], 4);
  EXPECT_EQ(b.y, (std::vector<float>{0.0f, 1.0f}));
  EXPECT_EQ(b.ids, (std::vector<std::int64_t>{0, 1}));
}

TEST(Collate, SingleGraphIsIdentity) {
  const auto g = chain(4, 9);
  const auto b = collate(std::vector<GraphSample>{g});
  EXPECT_EQ(b.x, g.x);
  EXPECT_EQ(b.edge_index, g.edge_index);
  EXPECT_EQ(b.edge_attr, g.edge_attr);
  EXPECT_EQ(b.batch_vector, std::vector<std::int64_t>(4, 0));
}

TEST(Collate, Errors) {
  EXPECT_EQ(error_kind_of([] { collate(std::span<const GraphSample>{}); }), ErrorKind::EmptyBatch);
  auto a = chain(2, 0), b = chain(2, 1);
  b.node_features = 3;
  b.x.resize(6);
  const std::vector<GraphSample> s{a, b};
  EXPECT_EQ(error_kind_of([&] { collate(s); }), ErrorKind::InconsistentFeatureWidth);
}

TEST(Collate, InvariantsOnRandomBatches) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    auto s = random_samples(1 + rng.below(20), rng.next());
    const auto b = collate(s);
    ASSERT_TRUE(std::is_sorted(b.batch_vector.begin(), b.batch_vector.end()));
    for (std::int64_t e = 0; e < b.num_edges; ++e) {
      const auto u = b.edge_index[static_cast<std::size_t>(e)];
      const auto v = b.edge_index[static_cast<std::size_t>(b.num_edges + e)];
      ASSERT_EQ(b.batch_vector[static_cast<std::size_t>(u)], b.batch_vector[static_cast<std::size_t>(v)]);
    }
  }
}

TEST(Shard, TenOverThree) {
  const auto idx = iota_n(10);
  std::set<std::int64_t> seen;
  for (int r = 0; r < 3; ++r) {
    const auto s = shard_indices(idx, r, 3, 1, 0);
    EXPECT_EQ(s.size(), 3u);
    for (auto i : s) EXPECT_TRUE(seen.insert(i).second);
  }
  EXPECT_EQ(seen.size(), 9u);
}

TEST(Shard, WorldOneIsPermutationAndDeterministic) {
  const auto idx = iota_n(37);
  auto s = shard_indices(idx, 0, 1, 5, 2);
  EXPECT_EQ(s, shard_indices(idx, 0, 1, 5, 2));
  EXPECT_NE(s, shard_indices(idx, 0, 1, 5, 3));
  std::sort(s.begin(), s.end());
  EXPECT_EQ(s, idx);
  EXPECT_EQ(error_kind_of([&] { shard_indices(idx, 2, 2, 0, 0); }), ErrorKind::InvalidArgument);
}

TEST(Shard, DisjointCoverageProperty) {
  Rng rng(17);
  for (int trial = 0; trial < 150; ++trial) {
    const auto n = static_cast<std::int64_t>(rng.below(500));
    const int W = 1 + static_cast<int>(rng.below(9));
    const auto seed = rng.next();
    const auto epoch = rng.below(10);
    std::vector<std::int64_t> global(static_cast<std::size_t>(n));
    for (auto& g : global) g = static_cast<std::int64_t>(rng.below(1'000'000)) * 1000 + (&g - global.data());
    std::set<std::int64_t> all(global.begin(), global.end()), seen;
    for (int r = 0; r < W; ++r) {
      const auto s = shard_indices(global, r, W, seed, epoch);
      ASSERT_EQ(static_cast<std::int64_t>(s.size()), n / W);
      for (auto i : s) {
        ASSERT_TRUE(all.count(i));
        ASSERT_TRUE(seen.insert(i).second);
      }
    }
    ASSERT_EQ(static_cast<std::int64_t>(seen.size()), W * (n / W));
  }
}

TEST(Loader, BatchCountsAndOrder) {
  MemorySource src(random_samples(50, 1), FeatureVocab{});
  BatchLoader l(src, iota_n(50), {16, 0, true});
  EXPECT_EQ(l.num_batches(), 3);
  const auto bs = drain(l);
  ASSERT_EQ(bs.size(), 3u);
  EXPECT_EQ(bs[1].ids.front(), 16);
  BatchLoader keep(src, iota_n(50), {16, 0, false});
  EXPECT_EQ(drain(keep).back().num_graphs, 2);
  BatchLoader none(src, iota_n(10), {16, 0, true});
  EXPECT_EQ(none.num_batches(), 0);
  EXPECT_FALSE(none.next().has_value());
}

TEST(Loader, PrefetchYieldsSameStream) {
  MemorySource src(random_samples(300, 2), FeatureVocab{});
  const auto idx = shard_indices(iota_n(300), 0, 1, 4, 0);
  BatchLoader plain(src, idx, {32, 0, true}), ahead(src, idx, {32, 3, true});
  const auto a = drain(plain), b = drain(ahead);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_TRUE(same_batch(a[k], b[k]));
  EXPECT_GE(plain.total_load_seconds(), 0.0);
}

TEST(Loader, PrefetchPropagatesErrors) {
  MemorySource src(random_samples(10, 3), FeatureVocab{});
  BatchLoader l(src, {0, 1, 2, 99}, {2, 2, true});
  EXPECT_TRUE(l.next().has_value());
  EXPECT_EQ(error_kind_of([&] { l.next(); }), ErrorKind::IndexOutOfRange);
}

TEST(Loader, DestroyWhilePrefetching) {
  MemorySource src(random_samples(200, 4), FeatureVocab{});
  for (int k = 0; k < 20; ++k) {
    BatchLoader l(src, iota_n(200), {8, 2, true});
    l.next();
  }
  SUCCEED();
}

class Backends : public ::testing::Test {
 protected:
  void SetUp() override {
    molddp::testing::write_corpus(tmp_ / "c.csv", 400, 21);
    // one bad row: a malformed SMILES is skipped by both paths
    auto text = molddp::testing::read_text(tmp_ / "c.csv");
    text += "C1CC,1.0\nCCO,not-a-number\n";
    molddp::testing::write_text(tmp_ / "c.csv", text);
    PreprocessOptions o;
    o.input = tmp_ / "c.csv";
    o.output = tmp_ / "c.gpack";
    o.subfiles = 3;
    o.workers = 2;
    preprocess(o);
    o.output = tmp_ / "c.obj";
    o.format = ContainerFormat::Object;
    preprocess(o);
  }
  TempDir tmp_;
};

TEST_F(Backends, IdenticalBatchStreams) {
  auto inl = open_source(Backend::Inline, tmp_ / "c.csv");
  auto obj = open_source(Backend::Object, tmp_ / "c.obj");
  auto pk = open_source(Backend::Packed, tmp_ / "c.gpack");
  auto pre = open_source(Backend::Packed, tmp_ / "c.gpack", {}, gpack::ReadMode::Preload);
  ASSERT_EQ(inl->size(), 400);
  ASSERT_EQ(obj->size(), 400);
  ASSERT_EQ(pk->size(), 400);
  EXPECT_EQ(inl->vocab(), pk->vocab());
  EXPECT_EQ(obj->vocab(), pk->vocab());
  for (std::uint64_t epoch = 0; epoch < 3; ++epoch) {
    const auto idx = shard_indices(iota_n(400), 0, 1, 8, epoch);
    std::vector<std::vector<Batch>> streams;
    for (auto* s : {inl.get(), obj.get(), pk.get(), pre.get()}) {
      BatchLoader l(*s, idx, {32, 0, true});
      streams.push_back(drain(l));
    }
    for (std::size_t k = 1; k < streams.size(); ++k) {
      ASSERT_EQ(streams[k].size(), streams[0].size());
      for (std::size_t b = 0; b < streams[0].size(); ++b) {
        EXPECT_TRUE(same_batch(streams[0][b], streams[k][b]));
        EXPECT_EQ(streams[0][b].x, streams[k][b].x);
      }
    }
  }
}

TEST_F(Backends, InlineIdsAreDataRowIndices) {
  InlineSource src(tmp_ / "c.csv", {});
  EXPECT_EQ(src.size(), 400);
  EXPECT_EQ(src.get(0).id, 0);
  EXPECT_EQ(src.get(399).id, 399);
  EXPECT_EQ(error_kind_of([&] { src.get(400); }), ErrorKind::IndexOutOfRange);
}

TEST_F(Backends, CorruptObjectRecordNamesItsKey) {
  const auto rec = objstore::record_path(tmp_ / "c.obj", 17);
  std::filesystem::resize_file(rec, std::filesystem::file_size(rec) / 2);
  ObjectSource src(tmp_ / "c.obj");
  try {
    src.get(17);
    FAIL() << "expected SourceUnreadable";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::SourceUnreadable);
    EXPECT_NE(std::string(e.what()).find("17"), std::string::npos);
  }
  EXPECT_NO_THROW(src.get(16));
}

TEST(InlineSource, ColumnOptionsAndMissingColumn) {
  TempDir tmp;
  molddp::testing::write_text(tmp / "t.tsv", "id\tgap_ev\tsmi\n1\t3.5\tCCO\n2\t4.25\tc1ccccc1\n");
  InlineSource::Options o;
  o.csv = {"smi", "gap_ev", '\t'};
  InlineSource src(tmp / "t.tsv", o);
  ASSERT_EQ(src.size(), 2);
  EXPECT_EQ(src.get(1).y, std::vector<float>{4.25f});
  EXPECT_EQ(src.get(1).num_nodes, 12);
  EXPECT_EQ(src.vocab().symbols(), (std::vector<std::string>{"H", "C", "O"}));
  EXPECT_EQ(error_kind_of([&] { InlineSource bad(tmp / "t.tsv", {}); }), ErrorKind::SourceUnreadable);
  EXPECT_EQ(error_kind_of([&] { InlineSource bad(tmp / "absent.csv", {}); }), ErrorKind::SourceUnreadable);
}

TEST(ParseTarget, AcceptsNumbersOnly) {
  EXPECT_EQ(parse_target("4.5"), 4.5f);
  EXPECT_EQ(parse_target(" -1e-2"), -0.01f);
  EXPECT_FALSE(parse_target("").has_value());
  EXPECT_FALSE(parse_target("abc").has_value());
  EXPECT_FALSE(parse_target("1.5x").has_value());
}
