#pragma once

// Pure data-loading epochs per backend: no model compute, optional cold page
// cache before each repeat, median and spread over repeats, and a checksum of
// the batch stream that must agree across backends.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>
#include <thread>
#include <vector>

#include "molddp/binio.hpp"
#include "molddp/dataload.hpp"
#include "molddp/metrics.hpp"

namespace molddp {

struct BenchTarget {
  Backend backend;
  std::filesystem::path path;
};

struct BenchOptions {
  std::vector<BenchTarget> targets;
  int batch_size = 128;
  int repeats = 5;
  int world_size = 1;
  int prefetch_depth = 0;
  bool cold_cache = true;
  std::uint64_t seed = 0;
  std::int64_t limit = -1;  // use only the first `limit` graphs
  InlineSource::Options inline_options;
  gpack::ReadMode packed_mode = gpack::ReadMode::Preload;
};

struct BackendResult {
  Backend backend;
  std::filesystem::path path;
  std::vector<double> seconds;
  double median = 0, min = 0, max = 0;
  std::uint32_t checksum = 0;
  std::int64_t samples = 0;
  std::uint64_t bytes_on_disk = 0;
  bool cold = false;
};

struct BenchReport {
  std::vector<BackendResult> results;
  std::map<std::string, double> speedups;  // "a/b": median(b) / median(a)
  bool checksums_match = true;
};

inline double median_of(std::vector<double> v) {
  require(!v.empty(), ErrorKind::InvalidArgument, "median of nothing");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Loads every rank's shard once, ranks running concurrently as threads.
/// Returns the slowest rank's time inside the loader (checksumming is not
/// counted) and the rank-ordered chained checksum.
inline std::pair<double, std::uint32_t> load_epoch(const GraphSource& source, std::span<const std::int64_t> indices,
                                                   const BenchOptions& opt, std::int64_t* samples = nullptr) {
  const int W = opt.world_size;
  std::vector<std::uint32_t> sums(static_cast<std::size_t>(W), 0);
  std::vector<std::int64_t> counts(static_cast<std::size_t>(W), 0);
  std::vector<double> load_secs(static_cast<std::size_t>(W), 0.0);
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(W));
  auto body = [&](int r) {
    try {
      auto shard = shard_indices(indices, r, W, opt.seed, 0);
      BatchLoader loader(source, std::move(shard), {opt.batch_size, opt.prefetch_depth, false});
      std::uint32_t c = 0;
      while (auto b = loader.next()) {
        c = batch_checksum(*b, c);
        counts[static_cast<std::size_t>(r)] += b->num_graphs;
      }
      sums[static_cast<std::size_t>(r)] = c;
      load_secs[static_cast<std::size_t>(r)] = loader.total_load_seconds();
    } catch (...) {
      errors[static_cast<std::size_t>(r)] = std::current_exception();
    }
  };
  if (W == 1) {
    body(0);
  } else {
    std::vector<std::thread> th;
    for (int r = 0; r < W; ++r) th.emplace_back(body, r);
    for (auto& t : th) t.join();
  }
  const double secs = *std::max_element(load_secs.begin(), load_secs.end());
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::uint32_t total = 0;
  for (auto s : sums) total = crc32(std::as_bytes(std::span(&s, 1)), total);
  if (samples) *samples = std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
  return {secs, total};
}

inline BenchReport run_bench_io(const BenchOptions& opt) {
  require(opt.repeats >= 3, ErrorKind::InvalidArgument, "bench-io needs at least 3 repeats");
  require(!opt.targets.empty(), ErrorKind::InvalidArgument, "no backends to benchmark");
  require(opt.world_size >= 1 && opt.batch_size >= 1, ErrorKind::InvalidArgument, "world_size/batch_size");
  BenchReport rep;
  for (const auto& t : opt.targets) {
    BackendResult r;
    r.backend = t.backend;
    r.path = t.path;
    r.bytes_on_disk = disk_usage(t.path);
    for (int k = 0; k < opt.repeats; ++k) {
      // Opening is timed too: the inline backend reads its whole table here.
      if (opt.cold_cache) r.cold = drop_caches(t.path);
      const auto t0 = std::chrono::steady_clock::now();
      auto source = open_source(t.backend, t.path, opt.inline_options, opt.packed_mode);
      const double open_secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::int64_t n = source->size();
      if (opt.limit >= 0) n = std::min(n, opt.limit);
      std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
      std::iota(idx.begin(), idx.end(), 0);
      const auto [secs, sum] = load_epoch(*source, idx, opt, &r.samples);
      r.seconds.push_back(open_secs + secs);
      if (k == 0) r.checksum = sum;
      else
        require(sum == r.checksum, ErrorKind::SourceUnreadable,
                std::string(to_string(t.backend)) + " produced different batch streams across repeats");
    }
    r.median = median_of(r.seconds);
    r.min = *std::min_element(r.seconds.begin(), r.seconds.end());
    r.max = *std::max_element(r.seconds.begin(), r.seconds.end());
    rep.results.push_back(std::move(r));
  }
  for (const auto& r : rep.results) rep.checksums_match = rep.checksums_match && r.checksum == rep.results[0].checksum;
  for (const auto& a : rep.results)
    for (const auto& b : rep.results)
      if (&a != &b && a.median > 0)
        rep.speedups[std::string(to_string(a.backend)) + "/" + std::string(to_string(b.backend))] = b.median / a.median;
  return rep;
}

inline nlohmann::json to_json(const BenchReport& rep, const BenchOptions& opt) {
  nlohmann::json backends = nlohmann::json::array();
  for (const auto& r : rep.results) {
    char sum[16];
    std::snprintf(sum, sizeof sum, "%08x", r.checksum);
    backends.push_back({{"backend", to_string(r.backend)},
                        {"path", r.path.string()},
                        {"seconds", r.seconds},
                        {"median_s", r.median},
                        {"min_s", r.min},
                        {"max_s", r.max},
                        {"samples", r.samples},
                        {"bytes_on_disk", r.bytes_on_disk},
                        {"cold_cache", r.cold},
                        {"checksum", sum}});
  }
  return {{"schema", "molddp.bench-io"},
          {"version", "1.0"},
          {"batch_size", opt.batch_size},
          {"repeats", opt.repeats},
          {"world_size", opt.world_size},
          {"prefetch_depth", opt.prefetch_depth},
          {"gpack_read", to_string(opt.packed_mode)},
          {"seed", opt.seed},
          {"backends", backends},
          {"speedups", rep.speedups},
          {"checksums_match", rep.checksums_match}};
}

/// backend,repeat,seconds (one row per repeat)
inline void write_bench_csv(const std::filesystem::path& path, const BenchReport& rep) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot create " + path.string());
  out << "backend,repeat,seconds\n";
  char line[64];
  for (const auto& r : rep.results)
    for (std::size_t k = 0; k < r.seconds.size(); ++k) {
      std::snprintf(line, sizeof line, ",%zu,%.9g\n", k, r.seconds[k]);
      out << to_string(r.backend) << line;
    }
}

}  // namespace molddp
