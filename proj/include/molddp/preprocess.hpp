#pragma once

// SMILES text -> graph container. Records are parsed and encoded by a pool
// of workers, then written by the same number of writers, each owning a
// contiguous slice so graph order always matches input order.

#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "molddp/dataload.hpp"
#include "molddp/gpack.hpp"
#include "molddp/graphenc.hpp"
#include "molddp/objstore.hpp"

namespace molddp {

enum class ContainerFormat { Gpack, Object };

struct PreprocessOptions {
  std::filesystem::path input;
  std::filesystem::path output;
  ContainerFormat format = ContainerFormat::Gpack;
  int workers = 1;
  std::uint32_t subfiles = 1;
  CsvOptions csv;
  double max_failure_rate = 0.05;
  bool overwrite = false;
};

struct RecordFailure {
  std::int64_t line = 0;
  ErrorKind kind = ErrorKind::SyntaxError;
  std::string message;
};

struct PreprocessResult {
  std::int64_t records = 0;
  std::vector<RecordFailure> failures;
  bool threshold_exceeded = false;
  FeatureVocab vocab;
  gpack::DatasetSummary summary;
  std::uint64_t bytes_on_disk = 0;
};

namespace detail {

template <class F>
void parallel_slices(std::size_t n, int workers, F&& body) {
  workers = std::max(1, workers);
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  auto run = [&](int w) {
    try {
      body(n * static_cast<std::size_t>(w) / static_cast<std::size_t>(workers),
           n * static_cast<std::size_t>(w + 1) / static_cast<std::size_t>(workers));
    } catch (...) {
      errors[static_cast<std::size_t>(w)] = std::current_exception();
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> threads;
    for (int w = 0; w < workers; ++w) threads.emplace_back(run, w);
    for (auto& t : threads) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

/// Writes an object-per-graph store; key k holds samples[k].
inline void write_object_store(const std::filesystem::path& dir, const FeatureVocab& vocab,
                               std::span<const GraphSample> samples, int workers, bool overwrite) {
  namespace fs = std::filesystem;
  if (fs::exists(dir / objstore::kManifest)) {
    if (!overwrite) fail(ErrorKind::PathExists, (dir / objstore::kManifest).string() + " already exists");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
  detail::parallel_slices(samples.size(), workers, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t k = lo; k < hi; ++k) objstore::write_record(dir, static_cast<std::int64_t>(k), samples[k]);
  });
  objstore::Manifest m;
  m.num_graphs = static_cast<std::int64_t>(samples.size());
  m.node_features = node_feature_count(vocab);
  m.vocab = vocab.symbols();
  objstore::write_manifest(dir, m);
}

inline PreprocessResult preprocess(const PreprocessOptions& opt) {
  require(opt.workers >= 1, ErrorKind::InvalidArgument, "workers must be >= 1");
  const auto rows = read_csv_records(opt.input, opt.csv);
  PreprocessResult res;
  res.records = static_cast<std::int64_t>(rows.size());

  std::vector<std::optional<Molecule>> mols(rows.size());
  std::vector<std::optional<float>> targets(rows.size());
  std::vector<std::optional<RecordFailure>> fails(rows.size());
  detail::parallel_slices(rows.size(), opt.workers, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t r = lo; r < hi; ++r) {
      targets[r] = parse_target(rows[r].target);
      if (!targets[r]) {
        fails[r] = RecordFailure{rows[r].line, ErrorKind::SourceUnreadable,
                                 "target '" + rows[r].target + "' is not a number"};
        continue;
      }
      try {
        mols[r] = parse_smiles(rows[r].smiles);
      } catch (const Error& e) {
        fails[r] = RecordFailure{rows[r].line, e.kind(), e.what()};
      }
    }
  });

  std::vector<int> seen;
  std::vector<std::size_t> kept;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (fails[r]) {
      res.failures.push_back(*fails[r]);
      continue;
    }
    collect_elements(*mols[r], seen);
    kept.push_back(r);
  }
  const double rate =
      rows.empty() ? 0.0 : static_cast<double>(res.failures.size()) / static_cast<double>(rows.size());
  if (rate > opt.max_failure_rate) {
    res.threshold_exceeded = true;
    return res;
  }
  if (!seen.empty()) res.vocab = build_vocab(seen);

  std::vector<GraphSample> samples(kept.size());
  detail::parallel_slices(kept.size(), opt.workers, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t k = lo; k < hi; ++k) {
      const auto r = kept[k];
      samples[k] = encode_graph(expand_hydrogens(*mols[r]), res.vocab, *targets[r], static_cast<std::int64_t>(r));
      mols[r].reset();
    }
  });

  std::uint64_t nodes = 0, edges = 0;
  for (const auto& g : samples) {
    nodes += static_cast<std::uint64_t>(g.num_nodes);
    edges += static_cast<std::uint64_t>(g.num_edges);
  }
  if (opt.format == ContainerFormat::Gpack) {
    const auto writers = static_cast<std::uint32_t>(std::min<std::uint32_t>(opt.workers, opt.subfiles));
    gpack::write_container(opt.output, gpack::GpackSchema::for_vocab(res.vocab), samples, opt.subfiles, writers,
                           opt.overwrite);
  } else {
    write_object_store(opt.output, res.vocab, samples, opt.workers, opt.overwrite);
  }
  res.summary = gpack::summarize(samples.size(), nodes, edges);
  res.bytes_on_disk = disk_usage(opt.output);
  return res;
}

}  // namespace molddp
