#pragma once

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "molddp/molddp.hpp"

namespace molddp {

inline void PrintTo(ErrorKind k, std::ostream* os) { *os << to_string(k); }

}  // namespace molddp

namespace molddp::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    std::string name = "molddp_";
    if (info) name += std::string(info->test_suite_name()) + "_" + info->name();
    for (auto& c : name)
      if (c == '/') c = '_';
    path_ = std::filesystem::temp_directory_path() / (name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Random sample with arbitrary float payloads; edges need not be symmetric.
inline GraphSample random_sample(Rng& rng, std::int64_t id, int node_features = 7, int max_nodes = 12) {
  GraphSample g;
  g.id = id;
  g.node_features = node_features;
  g.num_nodes = 1 + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(max_nodes)));
  g.num_edges = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(3 * g.num_nodes)));
  g.x.resize(static_cast<std::size_t>(g.num_nodes * node_features));
  for (auto& v : g.x) v = static_cast<float>(rng.uniform(-3, 3));
  g.edge_index.resize(static_cast<std::size_t>(2 * g.num_edges));
  for (auto& v : g.edge_index) v = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(g.num_nodes)));
  g.edge_attr.resize(static_cast<std::size_t>(g.num_edges * g.edge_features));
  for (auto& v : g.edge_attr) v = static_cast<float>(rng.uniform(-1, 1));
  g.y = {static_cast<float>(rng.uniform(0, 10))};
  return g;
}

inline std::vector<GraphSample> random_samples(std::size_t n, std::uint64_t seed, int node_features = 7) {
  Rng rng(seed);
  std::vector<GraphSample> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_sample(rng, static_cast<std::int64_t>(i), node_features));
  return out;
}

/// Writes a synthetic smiles,gap table and returns its records.
inline std::vector<synth::Record> write_corpus(const std::filesystem::path& csv, std::int64_t count,
                                               std::uint64_t seed, int max_units = 4) {
  synth::CorpusOptions o;
  o.count = count;
  o.seed = seed;
  o.max_units = max_units;
  auto recs = synth::generate_corpus(o);
  synth::write_csv(csv, recs);
  return recs;
}

template <class F>
ErrorKind error_kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected a molddp::Error";
  return ErrorKind::Io;
}

}  // namespace molddp::testing
