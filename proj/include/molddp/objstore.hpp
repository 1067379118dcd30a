#pragma once

// Object-per-graph store: one length-prefixed binary record per graph in a
// two-level directory fan-out, plus a small JSON manifest.
//
//   <dir>/meta.json
//   <dir>/<key/1000, 6 digits>/<key, 10 digits>.gso
//
// Record layout (little-endian):
//   "GSO1" | u32 version | u64 payload_bytes | payload | u32 crc32(payload)
//   payload = i64 id | i64 nodes | i64 edges | u32 node_features |
//             u32 edge_features | u32 targets | x | edge_index | edge_attr | y

#include <cstdio>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "molddp/binio.hpp"
#include "molddp/graphenc.hpp"

namespace molddp::objstore {

inline constexpr std::string_view kRecordMagic = "GSO1";
inline constexpr std::uint32_t kRecordVersion = 1;
inline constexpr std::string_view kManifest = "meta.json";

inline std::filesystem::path record_path(const std::filesystem::path& dir, std::int64_t key) {
  char bucket[24], name[32];
  std::snprintf(bucket, sizeof bucket, "%06lld", static_cast<long long>(key / 1000));
  std::snprintf(name, sizeof name, "%010lld.gso", static_cast<long long>(key));
  return dir / bucket / name;
}

inline Bytes encode_record(const GraphSample& g) {
  ByteWriter p;
  p.put(g.id);
  p.put(g.num_nodes);
  p.put(g.num_edges);
  p.put(static_cast<std::uint32_t>(g.node_features));
  p.put(static_cast<std::uint32_t>(g.edge_features));
  p.put(static_cast<std::uint32_t>(g.y.size()));
  p.put_array(std::span<const float>(g.x));
  p.put_array(std::span<const std::int64_t>(g.edge_index));
  p.put_array(std::span<const float>(g.edge_attr));
  p.put_array(std::span<const float>(g.y));

  ByteWriter w;
  w.put_tag(kRecordMagic);
  w.put(kRecordVersion);
  w.put(static_cast<std::uint64_t>(p.size()));
  w.put_bytes(p.bytes());
  w.put(crc32(p.bytes()));
  return w.take();
}

/// Decodes a record; any inconsistency is reported as SourceUnreadable with
/// the record key.
inline GraphSample decode_record(std::span<const std::byte> bytes, std::int64_t key) {
  const std::string where = "object record " + std::to_string(key);
  try {
    ByteReader r(bytes, ErrorKind::SourceUnreadable);
    if (r.get_tag(4) != kRecordMagic) fail(ErrorKind::SourceUnreadable, where + ": bad magic");
    if (r.get<std::uint32_t>() != kRecordVersion) fail(ErrorKind::SourceUnreadable, where + ": bad version");
    const auto len = r.get<std::uint64_t>();
    if (len + 4 != r.remaining()) fail(ErrorKind::SourceUnreadable, where + ": length mismatch");
    auto payload = r.get_span(static_cast<std::size_t>(len));
    if (r.get<std::uint32_t>() != crc32(payload)) fail(ErrorKind::SourceUnreadable, where + ": checksum mismatch");

    ByteReader p(payload, ErrorKind::SourceUnreadable);
    GraphSample g;
    g.id = p.get<std::int64_t>();
    g.num_nodes = p.get<std::int64_t>();
    g.num_edges = p.get<std::int64_t>();
    g.node_features = static_cast<int>(p.get<std::uint32_t>());
    g.edge_features = static_cast<int>(p.get<std::uint32_t>());
    const auto targets = p.get<std::uint32_t>();
    if (g.num_nodes < 0 || g.num_edges < 0) fail(ErrorKind::SourceUnreadable, where + ": negative sizes");
    g.x = p.get_vector<float>(static_cast<std::size_t>(g.num_nodes) * static_cast<std::size_t>(g.node_features));
    g.edge_index = p.get_vector<std::int64_t>(static_cast<std::size_t>(g.num_edges) * 2);
    g.edge_attr =
        p.get_vector<float>(static_cast<std::size_t>(g.num_edges) * static_cast<std::size_t>(g.edge_features));
    g.y = p.get_vector<float>(targets);
    if (!p.done()) fail(ErrorKind::SourceUnreadable, where + ": trailing bytes");
    return g;
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::SourceUnreadable) throw;
    fail(ErrorKind::SourceUnreadable, where + ": " + e.what());
  }
}

struct Manifest {
  std::int64_t num_graphs = 0;
  int node_features = 0;
  int edge_features = kEdgeFeatures;
  int target_count = 1;
  std::vector<std::string> vocab;
};

inline void write_manifest(const std::filesystem::path& dir, const Manifest& m) {
  nlohmann::json j{{"format", "molddp-objects"},   {"version", kRecordVersion},
                   {"num_graphs", m.num_graphs},   {"node_features", m.node_features},
                   {"edge_features", m.edge_features}, {"target_count", m.target_count},
                   {"vocab", m.vocab}};
  const std::string text = j.dump(2) + "\n";
  write_file(dir / kManifest, std::as_bytes(std::span(text)));
}

inline Manifest read_manifest(const std::filesystem::path& dir) {
  const auto p = dir / kManifest;
  const Bytes raw = read_file(p, ErrorKind::SourceUnreadable);
  try {
    auto j = nlohmann::json::parse(std::string(reinterpret_cast<const char*>(raw.data()), raw.size()));
    if (j.at("format") != "molddp-objects") fail(ErrorKind::SourceUnreadable, p.string() + ": wrong format tag");
    Manifest m;
    m.num_graphs = j.at("num_graphs").get<std::int64_t>();
    m.node_features = j.at("node_features").get<int>();
    m.edge_features = j.at("edge_features").get<int>();
    m.target_count = j.at("target_count").get<int>();
    m.vocab = j.at("vocab").get<std::vector<std::string>>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::SourceUnreadable, p.string() + ": " + e.what());
  }
}

/// Writes one record per graph. Safe to use from several threads as long as
/// they write disjoint keys.
inline void write_record(const std::filesystem::path& dir, std::int64_t key, const GraphSample& g) {
  const auto p = record_path(dir, key);
  std::error_code ec;
  std::filesystem::create_directories(p.parent_path(), ec);
  write_file(p, encode_record(g));
}

class ObjectReader {
 public:
  explicit ObjectReader(std::filesystem::path dir) : dir_(std::move(dir)), manifest_(read_manifest(dir_)) {
    vocab_ = FeatureVocab::from_symbols(manifest_.vocab);
  }

  std::int64_t num_graphs() const { return manifest_.num_graphs; }
  const Manifest& manifest() const { return manifest_; }
  const FeatureVocab& vocab() const { return vocab_; }

  GraphSample read(std::int64_t key) const {
    if (key < 0 || key >= manifest_.num_graphs)
      fail(ErrorKind::IndexOutOfRange, "object key " + std::to_string(key));
    const auto p = record_path(dir_, key);
    FileHandle fh = FileHandle::open_read(p);
    if (!fh) fail(ErrorKind::SourceUnreadable, "object record " + std::to_string(key) + ": cannot open " + p.string());
    struct stat st {};
    if (::fstat(fh.get(), &st) != 0) fail(ErrorKind::SourceUnreadable, "object record " + std::to_string(key));
    Bytes buf(static_cast<std::size_t>(st.st_size));
    if (!fh.pread_exact(buf, 0))
      fail(ErrorKind::SourceUnreadable, "object record " + std::to_string(key) + ": short read");
    return decode_record(buf, key);
  }

 private:
  std::filesystem::path dir_;
  Manifest manifest_;
  FeatureVocab vocab_;
};

}  // namespace molddp::objstore
