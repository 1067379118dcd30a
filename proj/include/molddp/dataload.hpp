#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <deque>
#include <exception>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "molddp/binio.hpp"
#include "molddp/gpack.hpp"
#include "molddp/graphenc.hpp"
#include "molddp/objstore.hpp"
#include "molddp/rng.hpp"

namespace molddp {

enum class Backend { Inline, Object, Packed };

inline std::string_view to_string(Backend b) {
  switch (b) {
    case Backend::Inline: return "inline";
    case Backend::Object: return "object";
    case Backend::Packed: return "gpack";
  }
  return "?";
}

inline Backend parse_backend(std::string_view s) {
  if (s == "inline" || s == "csv") return Backend::Inline;
  if (s == "object") return Backend::Object;
  if (s == "gpack" || s == "packed") return Backend::Packed;
  fail(ErrorKind::InvalidArgument, "unknown backend '" + std::string(s) + "'");
}

/// Random-access view of a graph dataset. get() must be safe to call from
/// several threads at once.
class GraphSource {
 public:
  virtual ~GraphSource() = default;
  virtual Backend backend() const = 0;
  virtual std::int64_t size() const = 0;
  virtual GraphSample get(std::int64_t index) const = 0;
  virtual const FeatureVocab& vocab() const = 0;
};

/// Holds samples in memory; used by tests and benchmarks.
class MemorySource final : public GraphSource {
 public:
  MemorySource(std::vector<GraphSample> samples, FeatureVocab vocab)
      : samples_(std::move(samples)), vocab_(std::move(vocab)) {}
  Backend backend() const override { return Backend::Packed; }
  std::int64_t size() const override { return static_cast<std::int64_t>(samples_.size()); }
  GraphSample get(std::int64_t i) const override {
    require(i >= 0 && i < size(), ErrorKind::IndexOutOfRange, "sample " + std::to_string(i));
    return samples_[static_cast<std::size_t>(i)];
  }
  const FeatureVocab& vocab() const override { return vocab_; }
  const std::vector<GraphSample>& samples() const { return samples_; }

 private:
  std::vector<GraphSample> samples_;
  FeatureVocab vocab_;
};

class PackedSource final : public GraphSource {
 public:
  explicit PackedSource(const std::filesystem::path& path, gpack::ReadMode mode = gpack::ReadMode::OnDemand)
      : reader_(path, mode) {}
  Backend backend() const override { return Backend::Packed; }
  std::int64_t size() const override { return reader_.num_graphs(); }
  GraphSample get(std::int64_t i) const override { return reader_.read_graph(i); }
  const FeatureVocab& vocab() const override { return reader_.vocab(); }
  const gpack::GpackReader& reader() const { return reader_; }

 private:
  gpack::GpackReader reader_;
};

class ObjectSource final : public GraphSource {
 public:
  explicit ObjectSource(const std::filesystem::path& path) : reader_(path) {}
  Backend backend() const override { return Backend::Object; }
  std::int64_t size() const override { return reader_.num_graphs(); }
  GraphSample get(std::int64_t i) const override { return reader_.read(i); }
  const FeatureVocab& vocab() const override { return reader_.vocab(); }

 private:
  objstore::ObjectReader reader_;
};

/// Target values are parsed the same way by preprocessing and the inline
/// backend so both produce identical floats.
inline std::optional<float> parse_target(std::string_view text) {
  std::string s(text);
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || errno == ERANGE) return std::nullopt;
  while (*end == ' ' || *end == '\t') ++end;
  if (*end != '\0') return std::nullopt;
  return static_cast<float>(v);
}

struct CsvOptions {
  std::string smiles_column = "smiles";
  std::string target_column = "gap";
  char delimiter = ',';
};

struct CsvRecord {
  std::int64_t line = 0;  // 1-based line number in the file
  std::string smiles;
  std::string target;
};

/// Reads a delimited text file with a header row and returns the two
/// requested columns for every data row, in file order.
inline std::vector<CsvRecord> read_csv_records(const std::filesystem::path& path, const CsvOptions& opt) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::SourceUnreadable, "cannot open " + path.string());
  auto split = [&](const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream ss(line);
    while (std::getline(ss, cur, opt.delimiter)) {
      if (!cur.empty() && cur.back() == '\r') cur.pop_back();
      if (cur.size() >= 2 && cur.front() == '"' && cur.back() == '"') cur = cur.substr(1, cur.size() - 2);
      out.push_back(cur);
    }
    if (!line.empty() && line.back() == opt.delimiter) out.emplace_back();
    return out;
  };
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::SourceUnreadable, path.string() + " is empty");
  const auto header = split(line);
  auto col = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    fail(ErrorKind::SourceUnreadable, path.string() + " has no column '" + name + "'");
  };
  const std::size_t sc = col(opt.smiles_column), tc = col(opt.target_column);
  std::vector<CsvRecord> out;
  std::int64_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto f = split(line);
    CsvRecord r;
    r.line = lineno;
    if (sc < f.size()) r.smiles = f[sc];
    if (tc < f.size()) r.target = f[tc];
    out.push_back(std::move(r));
  }
  return out;
}

/// Inline backend: keeps the text records in memory and converts SMILES to
/// a graph on every access. Graph index g maps to data row record_ids[g].
class InlineSource final : public GraphSource {
 public:
  struct Options {
    CsvOptions csv;
    std::optional<FeatureVocab> vocab;               // scanned from the data when absent
    std::optional<std::vector<std::int64_t>> record_ids;  // all parseable rows when absent
  };

  InlineSource(const std::filesystem::path& path, Options opt) {
    const auto rows = read_csv_records(path, opt.csv);
    std::vector<int> seen;
    if (opt.record_ids) {
      for (auto id : *opt.record_ids) {
        require(id >= 0 && id < static_cast<std::int64_t>(rows.size()), ErrorKind::SourceUnreadable,
                "record " + std::to_string(id) + " not present in " + path.string());
        const auto& row = rows[static_cast<std::size_t>(id)];
        auto t = parse_target(row.target);
        require(t.has_value(), ErrorKind::SourceUnreadable, "record " + std::to_string(id) + " has no target");
        if (!opt.vocab) collect_elements(parse_smiles(row.smiles), seen);
        add(row.smiles, *t, id);
      }
    } else {
      // Same acceptance rule as preprocessing: the row needs a numeric
      // target and a parseable SMILES string.
      for (std::size_t r = 0; r < rows.size(); ++r) {
        auto t = parse_target(rows[r].target);
        if (!t) continue;
        try {
          collect_elements(parse_smiles(rows[r].smiles), seen);
        } catch (const Error&) {
          continue;
        }
        add(rows[r].smiles, *t, static_cast<std::int64_t>(r));
      }
    }
    vocab_ = opt.vocab ? *opt.vocab : build_vocab(seen);
  }

  Backend backend() const override { return Backend::Inline; }
  std::int64_t size() const override { return static_cast<std::int64_t>(smiles_.size()); }
  GraphSample get(std::int64_t i) const override {
    require(i >= 0 && i < size(), ErrorKind::IndexOutOfRange, "inline record " + std::to_string(i));
    const auto k = static_cast<std::size_t>(i);
    return smiles_to_graph(smiles_[k], vocab_, targets_[k], ids_[k]);
  }
  const FeatureVocab& vocab() const override { return vocab_; }
  const std::vector<std::int64_t>& record_ids() const { return ids_; }

 private:
  void add(const std::string& smiles, float target, std::int64_t id) {
    smiles_.push_back(smiles);
    targets_.push_back(target);
    ids_.push_back(id);
  }

  std::vector<std::string> smiles_;
  std::vector<float> targets_;
  std::vector<std::int64_t> ids_;
  FeatureVocab vocab_;
};

inline std::unique_ptr<GraphSource> open_source(Backend backend, const std::filesystem::path& path,
                                                InlineSource::Options inline_options = {},
                                                gpack::ReadMode packed_mode = gpack::ReadMode::OnDemand) {
  switch (backend) {
    case Backend::Inline: return std::make_unique<InlineSource>(path, std::move(inline_options));
    case Backend::Object: return std::make_unique<ObjectSource>(path);
    case Backend::Packed: return std::make_unique<PackedSource>(path, packed_mode);
  }
  fail(ErrorKind::InvalidArgument, "unknown backend");
}

/// Disjoint union of graphs. edge_index holds all sources then all
/// destinations, already shifted by each graph's node offset.
struct Batch {
  std::int64_t num_graphs = 0;
  std::int64_t num_nodes = 0;
  std::int64_t num_edges = 0;
  int node_features = 0;
  int edge_features = 0;
  std::vector<float> x;
  std::vector<std::int64_t> edge_index;
  std::vector<float> edge_attr;
  std::vector<float> y;
  std::vector<std::int64_t> batch_vector;
  std::vector<std::int64_t> ids;

  std::int64_t source(std::int64_t e) const { return edge_index[static_cast<std::size_t>(e)]; }
  std::int64_t target(std::int64_t e) const { return edge_index[static_cast<std::size_t>(num_edges + e)]; }
};

inline Batch collate(std::span<const GraphSample> samples) {
  if (samples.empty()) fail(ErrorKind::EmptyBatch, "cannot collate zero graphs");
  Batch b;
  b.node_features = samples[0].node_features;
  b.edge_features = samples[0].edge_features;
  const std::size_t targets = samples[0].y.size();
  for (const auto& s : samples) {
    if (s.node_features != b.node_features || s.edge_features != b.edge_features || s.y.size() != targets)
      fail(ErrorKind::InconsistentFeatureWidth, "graph " + std::to_string(s.id) + " has different feature widths");
    b.num_nodes += s.num_nodes;
    b.num_edges += s.num_edges;
  }
  b.num_graphs = static_cast<std::int64_t>(samples.size());
  b.x.reserve(static_cast<std::size_t>(b.num_nodes * b.node_features));
  b.edge_index.resize(static_cast<std::size_t>(2 * b.num_edges));
  b.edge_attr.reserve(static_cast<std::size_t>(b.num_edges * b.edge_features));
  b.y.reserve(samples.size() * targets);
  b.batch_vector.reserve(static_cast<std::size_t>(b.num_nodes));
  b.ids.reserve(samples.size());

  std::int64_t node_base = 0, edge_base = 0;
  for (std::size_t g = 0; g < samples.size(); ++g) {
    const auto& s = samples[g];
    b.x.insert(b.x.end(), s.x.begin(), s.x.end());
    for (std::int64_t e = 0; e < s.num_edges; ++e) {
      b.edge_index[static_cast<std::size_t>(edge_base + e)] = s.source(e) + node_base;
      b.edge_index[static_cast<std::size_t>(b.num_edges + edge_base + e)] = s.target(e) + node_base;
    }
    b.edge_attr.insert(b.edge_attr.end(), s.edge_attr.begin(), s.edge_attr.end());
    b.y.insert(b.y.end(), s.y.begin(), s.y.end());
    b.batch_vector.insert(b.batch_vector.end(), static_cast<std::size_t>(s.num_nodes), static_cast<std::int64_t>(g));
    b.ids.push_back(s.id);
    node_base += s.num_nodes;
    edge_base += s.num_edges;
  }
  return b;
}

/// CRC32 over every tensor of a batch, chained onto `seed`.
inline std::uint32_t batch_checksum(const Batch& b, std::uint32_t seed = 0) {
  std::uint32_t c = seed;
  auto add = [&](const auto& v) { c = crc32(std::as_bytes(std::span(v)), c); };
  add(b.x);
  add(b.edge_index);
  add(b.edge_attr);
  add(b.y);
  add(b.batch_vector);
  add(b.ids);
  return c;
}

/// Shuffles `global` with a permutation keyed by (seed, epoch), then rank r
/// keeps positions i with i mod world == r. The tail that does not divide
/// evenly is dropped so every rank holds the same count.
inline std::vector<std::int64_t> shard_indices(std::span<const std::int64_t> global, int rank, int world_size,
                                               std::uint64_t seed, std::uint64_t epoch) {
  require(world_size >= 1 && rank >= 0 && rank < world_size, ErrorKind::InvalidArgument,
          "need 0 <= rank < world_size");
  std::vector<std::int64_t> perm(global.begin(), global.end());
  Rng rng(mix_seed(seed, epoch));
  rng.shuffle(std::span<std::int64_t>(perm));
  const std::size_t per_rank = perm.size() / static_cast<std::size_t>(world_size);
  std::vector<std::int64_t> out;
  out.reserve(per_rank);
  for (std::size_t k = 0; k < per_rank; ++k) out.push_back(perm[k * static_cast<std::size_t>(world_size) + static_cast<std::size_t>(rank)]);
  return out;
}

struct LoaderOptions {
  int batch_size = 128;
  int prefetch_depth = 0;
  bool drop_last = true;
};

/// Iterates batches over `indices` in order. With prefetch_depth > 0 a
/// background thread keeps up to that many batches ready.
class BatchLoader {
 public:
  BatchLoader(const GraphSource& source, std::vector<std::int64_t> indices, LoaderOptions opt)
      : source_(&source), indices_(std::move(indices)), opt_(opt) {
    require(opt_.batch_size > 0, ErrorKind::InvalidArgument, "batch_size must be positive");
    require(opt_.prefetch_depth >= 0, ErrorKind::InvalidArgument, "prefetch_depth must be >= 0");
    const auto n = static_cast<std::int64_t>(indices_.size());
    num_batches_ = opt_.drop_last ? n / opt_.batch_size : (n + opt_.batch_size - 1) / opt_.batch_size;
    if (opt_.prefetch_depth > 0 && num_batches_ > 0)
      worker_ = std::jthread([this](std::stop_token st) { produce(st); });
  }

  BatchLoader(const BatchLoader&) = delete;
  BatchLoader& operator=(const BatchLoader&) = delete;

  ~BatchLoader() {
    if (worker_.joinable()) {
      worker_.request_stop();
      cv_.notify_all();
    }
  }

  std::int64_t num_batches() const { return num_batches_; }

  std::optional<Batch> next() {
    if (consumed_ >= num_batches_) return std::nullopt;
    const auto t0 = std::chrono::steady_clock::now();
    std::optional<Batch> out;
    if (opt_.prefetch_depth == 0) {
      out = build(consumed_);
    } else {
      std::unique_lock lk(mu_);
      cv_.wait(lk, [&] { return !queue_.empty(); });
      auto item = std::move(queue_.front());
      queue_.pop_front();
      lk.unlock();
      cv_.notify_all();
      if (auto* err = std::get_if<std::exception_ptr>(&item)) std::rethrow_exception(*err);
      out = std::move(std::get<Batch>(item));
    }
    ++consumed_;
    last_seconds_ = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    total_seconds_ += last_seconds_;
    return out;
  }

  /// Wall time spent inside the most recent next() call.
  double last_load_seconds() const { return last_seconds_; }
  double total_load_seconds() const { return total_seconds_; }

 private:
  Batch build(std::int64_t b) const {
    const std::int64_t lo = b * opt_.batch_size;
    const std::int64_t hi = std::min<std::int64_t>(lo + opt_.batch_size, static_cast<std::int64_t>(indices_.size()));
    std::vector<GraphSample> samples;
    samples.reserve(static_cast<std::size_t>(hi - lo));
    for (std::int64_t i = lo; i < hi; ++i) samples.push_back(source_->get(indices_[static_cast<std::size_t>(i)]));
    return collate(samples);
  }

  void produce(std::stop_token st) {
    for (std::int64_t b = 0; b < num_batches_ && !st.stop_requested(); ++b) {
      std::variant<Batch, std::exception_ptr> item;
      try {
        item = build(b);
      } catch (...) {
        item = std::current_exception();
      }
      const bool failed = std::holds_alternative<std::exception_ptr>(item);
      {
        std::unique_lock lk(mu_);
        cv_.wait(lk, [&] { return st.stop_requested() || static_cast<int>(queue_.size()) < opt_.prefetch_depth; });
        if (st.stop_requested()) return;
        queue_.push_back(std::move(item));
      }
      cv_.notify_all();
      if (failed) return;
    }
  }

  const GraphSource* source_;
  std::vector<std::int64_t> indices_;
  LoaderOptions opt_;
  std::int64_t num_batches_ = 0;
  std::int64_t consumed_ = 0;
  double last_seconds_ = 0.0;
  double total_seconds_ = 0.0;

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::variant<Batch, std::exception_ptr>> queue_;
  std::jthread worker_;  // declared last so it stops before the queue dies
};

inline std::unique_ptr<BatchLoader> make_loader(const GraphSource& source, std::vector<std::int64_t> indices,
                                                int batch_size, int prefetch_depth = 0, bool drop_last = true) {
  return std::make_unique<BatchLoader>(source, std::move(indices), LoaderOptions{batch_size, prefetch_depth, drop_last});
}

}  // namespace molddp
