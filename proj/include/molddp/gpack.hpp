#pragma once

// gpack: a packed, sharded container for graph datasets.
//
// A container is a directory holding `meta.idx` (schema, counts, per-graph
// offset index, per-subfile extents) and `data.<k>` subfiles. Each subfile
// starts with a 16-byte header and then holds, per appended graph, the
// variable blocks x, edge_index, edge_attr, y back to back. Logically the
// per-graph blocks form one global array per variable, addressed through
// node_offset / edge_offset. See FORMAT.md for the byte layout.

#include <algorithm>
#include <array>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <system_error>
#include <thread>
#include <utility>
#include <vector>

#include "molddp/binio.hpp"
#include "molddp/error.hpp"
#include "molddp/graphenc.hpp"

namespace molddp::gpack {

inline constexpr std::string_view kIndexMagic = "GPK1";
inline constexpr std::string_view kDataMagic = "GPKD";
inline constexpr std::string_view kPartMagic = "GPKP";
inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::uint64_t kSubfileHeaderBytes = 16;
inline constexpr std::string_view kIndexFile = "meta.idx";

inline std::filesystem::path data_path(const std::filesystem::path& dir, std::uint32_t subfile) {
  return dir / ("data." + std::to_string(subfile));
}
inline std::filesystem::path part_path(const std::filesystem::path& dir, std::uint32_t writer) {
  return dir / ("index." + std::to_string(writer) + ".part");
}

enum class DType : std::uint8_t { F32 = 1, I64 = 2 };

/// Symbolic extents in per-record shape rules.
inline constexpr std::int64_t kDimNodes = -1;
inline constexpr std::int64_t kDimEdges = -2;

struct VariableSpec {
  std::string name;
  DType dtype;
  std::vector<std::int64_t> shape;

  friend bool operator==(const VariableSpec&, const VariableSpec&) = default;
};

struct GpackSchema {
  std::uint32_t node_features = 0;
  std::uint32_t edge_features = kEdgeFeatures;
  std::uint32_t target_count = 1;
  std::uint8_t codec = 0;  // 0 = raw; reserved for compression
  std::vector<std::string> vocab;
  std::vector<std::pair<std::string, std::string>> attributes;

  static GpackSchema for_vocab(const FeatureVocab& v) {
    GpackSchema s;
    s.node_features = static_cast<std::uint32_t>(node_feature_count(v));
    s.vocab = v.symbols();
    return s;
  }

  /// The four graph variables with their per-record shape rules.
  std::vector<VariableSpec> variables() const {
    const auto nf = static_cast<std::int64_t>(node_features);
    const auto ef = static_cast<std::int64_t>(edge_features);
    const auto tc = static_cast<std::int64_t>(target_count);
    return {{"x", DType::F32, {kDimNodes, nf}},
            {"edge_index", DType::I64, {2, kDimEdges}},
            {"edge_attr", DType::F32, {kDimEdges, ef}},
            {"y", DType::F32, {tc}}};
  }

  std::uint64_t record_bytes(std::int64_t nodes, std::int64_t edges) const {
    return static_cast<std::uint64_t>(nodes) * node_features * 4 + static_cast<std::uint64_t>(edges) * 16 +
           static_cast<std::uint64_t>(edges) * edge_features * 4 + static_cast<std::uint64_t>(target_count) * 4;
  }

  FeatureVocab feature_vocab() const { return FeatureVocab::from_symbols(vocab); }

  friend bool operator==(const GpackSchema&, const GpackSchema&) = default;
};

namespace detail {

inline void encode_schema(ByteWriter& w, const GpackSchema& s) {
  w.put(s.codec);
  w.put(s.node_features);
  w.put(s.edge_features);
  w.put(s.target_count);
  const auto vars = s.variables();
  w.put(static_cast<std::uint32_t>(vars.size()));
  for (const auto& v : vars) {
    w.put_string(v.name);
    w.put(static_cast<std::uint8_t>(v.dtype));
    w.put(static_cast<std::uint8_t>(v.shape.size()));
    for (auto d : v.shape) w.put(d);
  }
  w.put(static_cast<std::uint32_t>(s.vocab.size()));
  for (const auto& sym : s.vocab) w.put_string(sym);
  w.put(static_cast<std::uint32_t>(s.attributes.size()));
  for (const auto& [k, v] : s.attributes) {
    w.put_string(k);
    w.put_string(v);
  }
}

inline GpackSchema decode_schema(ByteReader& r) {
  GpackSchema s;
  s.codec = r.get<std::uint8_t>();
  s.node_features = r.get<std::uint32_t>();
  s.edge_features = r.get<std::uint32_t>();
  s.target_count = r.get<std::uint32_t>();
  const auto nvars = r.get<std::uint32_t>();
  std::vector<VariableSpec> vars;
  for (std::uint32_t i = 0; i < nvars && i < 64; ++i) {
    VariableSpec v;
    v.name = r.get_string();
    v.dtype = static_cast<DType>(r.get<std::uint8_t>());
    const auto nd = r.get<std::uint8_t>();
    for (std::uint8_t d = 0; d < nd; ++d) v.shape.push_back(r.get<std::int64_t>());
    vars.push_back(std::move(v));
  }
  if (vars != s.variables()) fail(ErrorKind::SchemaMismatch, "variable table does not match the graph schema");
  if (s.codec != 0) fail(ErrorKind::VersionUnsupported, "unknown codec " + std::to_string(s.codec));
  const auto nvocab = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < nvocab; ++i) s.vocab.push_back(r.get_string());
  const auto nattr = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < nattr; ++i) {
    auto k = r.get_string();
    auto v = r.get_string();
    s.attributes.emplace_back(std::move(k), std::move(v));
  }
  return s;
}

inline Bytes subfile_header(std::uint32_t subfile) {
  ByteWriter w;
  w.put_tag(kDataMagic);
  w.put(kFormatVersion);
  w.put(subfile);
  w.put(std::uint32_t{0});
  return w.take();
}

}  // namespace detail

struct SubfileExtent {
  std::uint64_t bytes = 0;  // including header
  std::uint32_t crc = 0;    // CRC32 over the whole file
  std::uint64_t graphs = 0;
  std::uint64_t nodes = 0;
  std::uint64_t edges = 0;

  friend bool operator==(const SubfileExtent&, const SubfileExtent&) = default;
};

/// Metadata of a finalized container: everything in meta.idx.
struct GpackDataset {
  std::filesystem::path path;
  GpackSchema schema;
  std::uint64_t num_graphs = 0;
  std::uint32_t num_subfiles = 0;
  std::uint32_t writer_count = 0;
  std::vector<std::int64_t> node_offset;  // size num_graphs + 1
  std::vector<std::int64_t> edge_offset;  // size num_graphs + 1
  std::vector<std::int32_t> subfile;      // per graph
  std::vector<std::int64_t> byte_offset;  // per graph, within its subfile
  std::vector<std::int64_t> ids;          // per graph record identifier
  std::vector<SubfileExtent> extents;     // per subfile

  std::int64_t total_nodes() const { return node_offset.empty() ? 0 : node_offset.back(); }
  std::int64_t total_edges() const { return edge_offset.empty() ? 0 : edge_offset.back(); }
};

struct DatasetSummary {
  std::uint64_t num_graphs = 0;
  std::uint64_t total_nodes = 0;
  std::uint64_t total_edges = 0;
  double avg_nodes_per_graph = 0.0;
};

inline DatasetSummary summarize(std::uint64_t graphs, std::uint64_t nodes, std::uint64_t edges) {
  return {graphs, nodes, edges, graphs == 0 ? 0.0 : static_cast<double>(nodes) / static_cast<double>(graphs)};
}

/// Appends graphs to the subfiles owned by one writer
/// ({s : s mod writer_count == writer_id}), round-robin in append order.
class GpackWriter {
 public:
  GpackWriter(std::filesystem::path path, GpackSchema schema, std::uint32_t num_subfiles, std::uint32_t writer_id,
              std::uint32_t writer_count, bool overwrite = false)
      : path_(std::move(path)), schema_(std::move(schema)), num_subfiles_(num_subfiles), writer_id_(writer_id),
        writer_count_(writer_count) {
    namespace fs = std::filesystem;
    if (num_subfiles == 0 || writer_count == 0 || writer_id >= writer_count || writer_count > num_subfiles)
      fail(ErrorKind::InvalidShardConfig, "need 0 <= writer_id < writer_count <= num_subfiles, got writer " +
                                              std::to_string(writer_id) + "/" + std::to_string(writer_count) +
                                              " with " + std::to_string(num_subfiles) + " subfiles");
    std::error_code ec;
    if (fs::exists(path_) && !fs::is_directory(path_))
      fail(ErrorKind::PathExists, path_.string() + " exists and is not a container directory");
    fs::create_directories(path_, ec);
    if (ec) fail(ErrorKind::Io, "cannot create " + path_.string() + ": " + ec.message());

    for (std::uint32_t s = writer_id; s < num_subfiles; s += writer_count) owned_.push_back(s);
    std::vector<fs::path> mine{part_path(path_, writer_id), path_ / kIndexFile};
    for (auto s : owned_) mine.push_back(data_path(path_, s));
    for (const auto& p : mine) {
      if (!fs::exists(p)) continue;
      if (!overwrite) fail(ErrorKind::PathExists, p.string() + " already exists");
      fs::remove(p, ec);
    }

    streams_.reserve(owned_.size());
    for (auto s : owned_) {
      Stream st;
      st.buffer = std::make_unique<char[]>(kStreamBuffer);
      st.out = std::make_unique<std::ofstream>();
      st.out->rdbuf()->pubsetbuf(st.buffer.get(), kStreamBuffer);
      st.out->open(data_path(path_, s), std::ios::binary | std::ios::trunc);
      if (!*st.out) fail(ErrorKind::Io, "cannot create " + data_path(path_, s).string());
      write(st, detail::subfile_header(s));
      streams_.push_back(std::move(st));
    }
  }

  GpackWriter(const GpackWriter&) = delete;
  GpackWriter& operator=(const GpackWriter&) = delete;
  GpackWriter(GpackWriter&&) = default;
  GpackWriter& operator=(GpackWriter&&) = default;

  /// Returns the graph's position within this writer's stream.
  std::int64_t append(const GraphSample& g) {
    if (finalized_) fail(ErrorKind::InvalidArgument, "append after finalize");
    if (g.node_features != static_cast<int>(schema_.node_features) ||
        g.edge_features != static_cast<int>(schema_.edge_features) || g.y.size() != schema_.target_count)
      fail(ErrorKind::SchemaMismatch, "graph " + std::to_string(g.id) + " does not match the container schema");
    try {
      g.check_shapes();
    } catch (const Error& e) {
      fail(ErrorKind::SchemaMismatch, e.what());
    }

    const auto local = static_cast<std::int64_t>(entries_.size());
    const std::size_t slot = static_cast<std::size_t>(local) % streams_.size();
    Stream& st = streams_[slot];

    scratch_.bytes().clear();
    scratch_.put_array(std::span<const float>(g.x));
    scratch_.put_array(std::span<const std::int64_t>(g.edge_index));
    scratch_.put_array(std::span<const float>(g.edge_attr));
    scratch_.put_array(std::span<const float>(g.y));

    entries_.push_back({owned_[slot], st.extent.bytes, g.num_nodes, g.num_edges, g.id});
    write(st, scratch_.bytes());
    st.extent.graphs += 1;
    st.extent.nodes += static_cast<std::uint64_t>(g.num_nodes);
    st.extent.edges += static_cast<std::uint64_t>(g.num_edges);
    return local;
  }

  std::int64_t size() const { return static_cast<std::int64_t>(entries_.size()); }

  /// Flushes the subfiles and writes this writer's partial index.
  void finalize() {
    if (finalized_) return;
    for (auto& st : streams_) {
      st.out->flush();
      st.out->close();
      if (!*st.out) fail(ErrorKind::Io, "failed to flush a subfile in " + path_.string());
    }
    ByteWriter w;
    w.put_tag(kPartMagic);
    w.put(kFormatVersion);
    w.put(writer_id_);
    w.put(writer_count_);
    w.put(num_subfiles_);
    ByteWriter schema;
    detail::encode_schema(schema, schema_);
    w.put(static_cast<std::uint64_t>(schema.size()));
    w.put_bytes(schema.bytes());
    w.put(static_cast<std::uint64_t>(entries_.size()));
    for (const auto& e : entries_) {
      w.put(e.subfile);
      w.put(e.byte_offset);
      w.put(e.nodes);
      w.put(e.edges);
      w.put(e.id);
    }
    w.put(static_cast<std::uint32_t>(owned_.size()));
    for (std::size_t i = 0; i < owned_.size(); ++i) {
      const auto& x = streams_[i].extent;
      w.put(owned_[i]);
      w.put(x.bytes);
      w.put(x.crc);
      w.put(x.graphs);
      w.put(x.nodes);
      w.put(x.edges);
    }
    w.put(crc32(w.bytes()));
    write_file(part_path(path_, writer_id_), w.bytes());
    finalized_ = true;
  }

 private:
  static constexpr std::size_t kStreamBuffer = 1 << 20;

  struct Stream {
    std::unique_ptr<char[]> buffer;
    std::unique_ptr<std::ofstream> out;
    SubfileExtent extent;
  };

  struct Entry {
    std::uint32_t subfile;
    std::uint64_t byte_offset;
    std::int64_t nodes;
    std::int64_t edges;
    std::int64_t id;
  };

  static void write(Stream& st, std::span<const std::byte> bytes) {
    st.out->write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!*st.out) fail(ErrorKind::Io, "subfile write failed");
    st.extent.crc = crc32(bytes, st.extent.crc);
    st.extent.bytes += bytes.size();
  }

  std::filesystem::path path_;
  GpackSchema schema_;
  std::uint32_t num_subfiles_;
  std::uint32_t writer_id_;
  std::uint32_t writer_count_;
  std::vector<std::uint32_t> owned_;
  std::vector<Stream> streams_;
  std::vector<Entry> entries_;
  ByteWriter scratch_;
  bool finalized_ = false;
};

inline GpackWriter create_writer(const std::filesystem::path& path, const GpackSchema& schema,
                                 std::uint32_t num_subfiles, std::uint32_t writer_id, std::uint32_t writer_count,
                                 bool overwrite = false) {
  return GpackWriter(path, schema, num_subfiles, writer_id, writer_count, overwrite);
}

namespace detail {

inline void put_section(ByteWriter& out, std::string_view tag, const ByteWriter& payload) {
  out.put_tag(tag);
  out.put(static_cast<std::uint64_t>(payload.size()));
  out.put_bytes(payload.bytes());
  out.put(crc32(payload.bytes()));
}

inline Bytes encode_index(const GpackDataset& d) {
  ByteWriter out;
  out.put_tag(kIndexMagic);
  out.put(kFormatVersion);
  out.put(std::uint32_t{7});

  ByteWriter s;
  encode_schema(s, d.schema);
  put_section(out, "SCHM", s);

  ByteWriter c;
  c.put(d.num_graphs);
  c.put(d.num_subfiles);
  c.put(d.writer_count);
  c.put(static_cast<std::uint64_t>(d.total_nodes()));
  c.put(static_cast<std::uint64_t>(d.total_edges()));
  put_section(out, "CNTS", c);

  ByteWriter n;
  n.put_array(std::span<const std::int64_t>(d.node_offset));
  put_section(out, "NOFF", n);
  ByteWriter e;
  e.put_array(std::span<const std::int64_t>(d.edge_offset));
  put_section(out, "EOFF", e);

  ByteWriter l;
  l.put_array(std::span<const std::int32_t>(d.subfile));
  l.put_array(std::span<const std::int64_t>(d.byte_offset));
  put_section(out, "GLOC", l);

  ByteWriter g;
  g.put_array(std::span<const std::int64_t>(d.ids));
  put_section(out, "GIDS", g);

  ByteWriter x;
  for (const auto& ext : d.extents) {
    x.put(ext.bytes);
    x.put(ext.crc);
    x.put(ext.graphs);
    x.put(ext.nodes);
    x.put(ext.edges);
  }
  put_section(out, "EXTS", x);
  return out.take();
}

inline GpackDataset decode_index(std::span<const std::byte> bytes, const std::filesystem::path& path) {
  if (bytes.size() < 12 || std::string_view(reinterpret_cast<const char*>(bytes.data()), 4) != kIndexMagic)
    fail(ErrorKind::BadMagic, path.string() + " is not a gpack index");
  ByteReader r(bytes, ErrorKind::CorruptIndex);
  r.get_tag(4);
  const auto version = r.get<std::uint32_t>();
  if (version != kFormatVersion)
    fail(ErrorKind::VersionUnsupported, "gpack format version " + std::to_string(version));
  const auto nsections = r.get<std::uint32_t>();

  std::map<std::string, std::span<const std::byte>> sections;
  for (std::uint32_t i = 0; i < nsections; ++i) {
    auto tag = r.get_tag(4);
    const auto len = r.get<std::uint64_t>();
    if (len > r.remaining()) fail(ErrorKind::CorruptIndex, "section " + tag + " truncated");
    auto payload = r.get_span(static_cast<std::size_t>(len));
    if (r.get<std::uint32_t>() != crc32(payload)) fail(ErrorKind::CorruptIndex, "checksum mismatch in " + tag);
    sections[tag] = payload;
  }
  for (const char* need : {"SCHM", "CNTS", "NOFF", "EOFF", "GLOC", "GIDS", "EXTS"})
    if (!sections.count(need)) fail(ErrorKind::CorruptIndex, std::string("missing section ") + need);

  GpackDataset d;
  d.path = path;
  {
    ByteReader s(sections["SCHM"], ErrorKind::CorruptIndex);
    d.schema = decode_schema(s);
  }
  std::uint64_t total_nodes, total_edges;
  {
    ByteReader c(sections["CNTS"], ErrorKind::CorruptIndex);
    d.num_graphs = c.get<std::uint64_t>();
    d.num_subfiles = c.get<std::uint32_t>();
    d.writer_count = c.get<std::uint32_t>();
    total_nodes = c.get<std::uint64_t>();
    total_edges = c.get<std::uint64_t>();
  }
  const auto G = static_cast<std::size_t>(d.num_graphs);
  auto read_all = [&](const char* tag, auto& vec, std::size_t n) {
    ByteReader rr(sections[tag], ErrorKind::CorruptIndex);
    vec = rr.template get_vector<typename std::decay_t<decltype(vec)>::value_type>(n);
    return rr;
  };
  if (!read_all("NOFF", d.node_offset, G + 1).done() || !read_all("EOFF", d.edge_offset, G + 1).done())
    fail(ErrorKind::CorruptIndex, "offset arrays have the wrong length");
  {
    ByteReader l(sections["GLOC"], ErrorKind::CorruptIndex);
    d.subfile = l.get_vector<std::int32_t>(G);
    d.byte_offset = l.get_vector<std::int64_t>(G);
    if (!l.done()) fail(ErrorKind::CorruptIndex, "location table has the wrong length");
  }
  if (!read_all("GIDS", d.ids, G).done()) fail(ErrorKind::CorruptIndex, "id table has the wrong length");
  {
    ByteReader x(sections["EXTS"], ErrorKind::CorruptIndex);
    for (std::uint32_t s = 0; s < d.num_subfiles; ++s) {
      SubfileExtent e;
      e.bytes = x.get<std::uint64_t>();
      e.crc = x.get<std::uint32_t>();
      e.graphs = x.get<std::uint64_t>();
      e.nodes = x.get<std::uint64_t>();
      e.edges = x.get<std::uint64_t>();
      d.extents.push_back(e);
    }
    if (!x.done()) fail(ErrorKind::CorruptIndex, "extent table has the wrong length");
  }

  if (d.node_offset[0] != 0 || d.edge_offset[0] != 0) fail(ErrorKind::CorruptIndex, "offsets must start at 0");
  for (std::size_t g = 0; g < G; ++g) {
    if (d.node_offset[g + 1] <= d.node_offset[g]) fail(ErrorKind::CorruptIndex, "node offsets not increasing");
    if (d.edge_offset[g + 1] < d.edge_offset[g]) fail(ErrorKind::CorruptIndex, "edge offsets decreasing");
    if (d.subfile[g] < 0 || static_cast<std::uint32_t>(d.subfile[g]) >= d.num_subfiles)
      fail(ErrorKind::CorruptIndex, "subfile id out of range");
    const auto& ext = d.extents[static_cast<std::size_t>(d.subfile[g])];
    const auto len = d.schema.record_bytes(d.node_offset[g + 1] - d.node_offset[g],
                                           d.edge_offset[g + 1] - d.edge_offset[g]);
    if (d.byte_offset[g] < static_cast<std::int64_t>(kSubfileHeaderBytes) ||
        static_cast<std::uint64_t>(d.byte_offset[g]) + len > ext.bytes)
      fail(ErrorKind::CorruptIndex, "graph block outside its subfile extent");
  }
  if (static_cast<std::uint64_t>(d.total_nodes()) != total_nodes ||
      static_cast<std::uint64_t>(d.total_edges()) != total_edges)
    fail(ErrorKind::CorruptIndex, "totals disagree with offsets");
  return d;
}

}  // namespace detail

/// Combines the partial indexes of all writers into meta.idx. Global graph
/// ids follow (writer_id, local position) order.
inline GpackDataset merge_index(const std::filesystem::path& path, std::uint32_t writer_count) {
  namespace fs = std::filesystem;
  GpackDataset d;
  d.path = path;
  d.writer_count = writer_count;
  d.node_offset.push_back(0);
  d.edge_offset.push_back(0);
  std::vector<std::optional<SubfileExtent>> extents;
  bool first = true;

  for (std::uint32_t w = 0; w < writer_count; ++w) {
    const auto pp = part_path(path, w);
    if (!fs::exists(pp)) fail(ErrorKind::MissingSubfile, "writer " + std::to_string(w) + " left no index");
    const Bytes bytes = read_file(pp, ErrorKind::CorruptIndex);
    if (bytes.size() < 4 || crc32(std::span(bytes).first(bytes.size() - 4)) !=
                                ByteReader(std::span(bytes).last(4), ErrorKind::CorruptIndex).get<std::uint32_t>())
      fail(ErrorKind::CorruptIndex, pp.string() + " checksum mismatch");
    ByteReader r{std::span(bytes).first(bytes.size() - 4), ErrorKind::CorruptIndex};
    if (r.get_tag(4) != kPartMagic) fail(ErrorKind::BadMagic, pp.string());
    if (r.get<std::uint32_t>() != kFormatVersion) fail(ErrorKind::VersionUnsupported, pp.string());
    if (r.get<std::uint32_t>() != w || r.get<std::uint32_t>() != writer_count)
      fail(ErrorKind::InvalidShardConfig, pp.string() + " was written for a different writer layout");
    const auto nsub = r.get<std::uint32_t>();
    const auto schema_len = r.get<std::uint64_t>();
    ByteReader sr(r.get_span(static_cast<std::size_t>(schema_len)), ErrorKind::CorruptIndex);
    GpackSchema schema = detail::decode_schema(sr);
    if (first) {
      d.schema = schema;
      d.num_subfiles = nsub;
      extents.resize(nsub);
      first = false;
    } else if (!(schema == d.schema) || nsub != d.num_subfiles) {
      fail(ErrorKind::SchemaMismatch, "writers disagree on schema or subfile count");
    }

    const auto n = r.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < n; ++i) {
      const auto sub = r.get<std::uint32_t>();
      const auto off = r.get<std::uint64_t>();
      const auto nodes = r.get<std::int64_t>();
      const auto edges = r.get<std::int64_t>();
      const auto id = r.get<std::int64_t>();
      d.subfile.push_back(static_cast<std::int32_t>(sub));
      d.byte_offset.push_back(static_cast<std::int64_t>(off));
      d.node_offset.push_back(d.node_offset.back() + nodes);
      d.edge_offset.push_back(d.edge_offset.back() + edges);
      d.ids.push_back(id);
    }
    const auto nowned = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < nowned; ++i) {
      const auto sub = r.get<std::uint32_t>();
      SubfileExtent e;
      e.bytes = r.get<std::uint64_t>();
      e.crc = r.get<std::uint32_t>();
      e.graphs = r.get<std::uint64_t>();
      e.nodes = r.get<std::uint64_t>();
      e.edges = r.get<std::uint64_t>();
      if (sub >= d.num_subfiles || extents[sub]) fail(ErrorKind::CorruptIndex, "subfile claimed twice");
      extents[sub] = e;
    }
    if (!r.done()) fail(ErrorKind::CorruptIndex, pp.string() + " has trailing bytes");
  }
  if (first) fail(ErrorKind::InvalidShardConfig, "writer_count must be positive");

  for (std::uint32_t s = 0; s < d.num_subfiles; ++s) {
    if (!extents[s]) fail(ErrorKind::MissingSubfile, "no writer owned subfile " + std::to_string(s));
    const auto dp = data_path(path, s);
    if (!fs::exists(dp)) fail(ErrorKind::MissingSubfile, dp.string());
    if (fs::file_size(dp) != extents[s]->bytes) fail(ErrorKind::CorruptIndex, dp.string() + " has the wrong size");
    d.extents.push_back(*extents[s]);
  }
  d.num_graphs = d.ids.size();

  write_file(path / kIndexFile, detail::encode_index(d));
  for (std::uint32_t w = 0; w < writer_count; ++w) fs::remove(part_path(path, w));
  return d;
}

/// Random-access reader. After construction all state is immutable, so one
/// reader can serve concurrent read_graph calls from many threads.
enum class ReadMode {
  OnDemand,  // one pread per graph
  Preload,   // each subfile mapped and faulted in sequentially at open
};

inline std::string_view to_string(ReadMode m) { return m == ReadMode::Preload ? "preload" : "on-demand"; }

inline ReadMode parse_read_mode(std::string_view s) {
  if (s == "preload") return ReadMode::Preload;
  if (s == "on-demand") return ReadMode::OnDemand;
  fail(ErrorKind::InvalidArgument, "unknown read mode '" + std::string(s) + "'");
}

class GpackReader {
 public:
  explicit GpackReader(const std::filesystem::path& path, ReadMode mode = ReadMode::OnDemand) : mode_(mode) {
    namespace fs = std::filesystem;
    const auto idx = path / kIndexFile;
    if (!fs::exists(idx)) fail(ErrorKind::CorruptIndex, idx.string() + " is missing (container not finalized?)");
    const Bytes bytes = read_file(idx, ErrorKind::CorruptIndex);
    meta_ = detail::decode_index(bytes, path);

    for (std::uint32_t s = 0; s < meta_.num_subfiles; ++s) {
      const auto dp = data_path(path, s);
      FileHandle fh = FileHandle::open_read(dp);
      if (!fh) fail(ErrorKind::MissingSubfile, dp.string());
      struct stat st {};
      if (::fstat(fh.get(), &st) != 0 || static_cast<std::uint64_t>(st.st_size) != meta_.extents[s].bytes)
        fail(ErrorKind::CorruptIndex, dp.string() + " size disagrees with the index (truncated?)");
      std::array<std::byte, kSubfileHeaderBytes> hdr{};
      if (!fh.pread_exact(hdr, 0)) fail(ErrorKind::CorruptIndex, dp.string() + " header unreadable");
      ByteReader hr(hdr, ErrorKind::CorruptIndex);
      if (hr.get_tag(4) != kDataMagic) fail(ErrorKind::BadMagic, dp.string());
      if (hr.get<std::uint32_t>() != kFormatVersion) fail(ErrorKind::VersionUnsupported, dp.string());
      if (hr.get<std::uint32_t>() != s) fail(ErrorKind::CorruptIndex, dp.string() + " has the wrong subfile id");
      if (mode == ReadMode::Preload) images_.emplace_back(fh, static_cast<std::size_t>(meta_.extents[s].bytes));
      files_.push_back(std::move(fh));
    }
    vocab_ = meta_.schema.feature_vocab();
  }

  ReadMode mode() const { return mode_; }

  const GpackDataset& dataset() const { return meta_; }
  const GpackSchema& schema() const { return meta_.schema; }
  const FeatureVocab& vocab() const { return vocab_; }
  std::int64_t num_graphs() const { return static_cast<std::int64_t>(meta_.num_graphs); }

  DatasetSummary summary() const {
    return summarize(meta_.num_graphs, static_cast<std::uint64_t>(meta_.total_nodes()),
                     static_cast<std::uint64_t>(meta_.total_edges()));
  }

  GraphSample read_graph(std::int64_t gid) const {
    if (gid < 0 || gid >= num_graphs())
      fail(ErrorKind::IndexOutOfRange,
           "graph " + std::to_string(gid) + " outside [0, " + std::to_string(num_graphs()) + ")");
    const auto g = static_cast<std::size_t>(gid);
    const auto& sch = meta_.schema;
    GraphSample out;
    out.id = meta_.ids[g];
    out.num_nodes = meta_.node_offset[g + 1] - meta_.node_offset[g];
    out.num_edges = meta_.edge_offset[g + 1] - meta_.edge_offset[g];
    out.node_features = static_cast<int>(sch.node_features);
    out.edge_features = static_cast<int>(sch.edge_features);

    const auto len = sch.record_bytes(out.num_nodes, out.num_edges);
    const auto sub = static_cast<std::size_t>(meta_.subfile[g]);
    const auto off = static_cast<std::uint64_t>(meta_.byte_offset[g]);
    Bytes buf;
    std::span<const std::byte> rec;
    if (mode_ == ReadMode::Preload) {
      const auto image = images_[sub].bytes();
      if (off + len > image.size()) fail(ErrorKind::CorruptIndex, "graph " + std::to_string(gid) + " past end");
      rec = image.subspan(static_cast<std::size_t>(off), len);
    } else {
      buf.resize(len);
      if (!files_[sub].pread_exact(buf, off)) fail(ErrorKind::CorruptIndex, "short read for graph " + std::to_string(gid));
      rec = buf;
    }

    ByteReader r(rec, ErrorKind::CorruptIndex);
    out.x = r.get_vector<float>(static_cast<std::size_t>(out.num_nodes) * sch.node_features);
    out.edge_index = r.get_vector<std::int64_t>(static_cast<std::size_t>(out.num_edges) * 2);
    out.edge_attr = r.get_vector<float>(static_cast<std::size_t>(out.num_edges) * sch.edge_features);
    out.y = r.get_vector<float>(sch.target_count);
    return out;
  }

  /// Full CRC pass over every subfile.
  void verify_data() const {
    for (std::uint32_t s = 0; s < meta_.num_subfiles; ++s) {
      const auto& ext = meta_.extents[s];
      std::uint32_t crc = 0;
      Bytes chunk(1 << 20);
      for (std::uint64_t off = 0; off < ext.bytes; off += chunk.size()) {
        const auto n = static_cast<std::size_t>(std::min<std::uint64_t>(chunk.size(), ext.bytes - off));
        if (!files_[s].pread_exact(std::span(chunk).first(n), off))
          fail(ErrorKind::CorruptIndex, "short read while verifying subfile " + std::to_string(s));
        crc = crc32(std::span(chunk).first(n), crc);
      }
      if (crc != ext.crc) fail(ErrorKind::CorruptIndex, "checksum mismatch in subfile " + std::to_string(s));
    }
  }

 private:
  ReadMode mode_;
  GpackDataset meta_;
  std::vector<FileHandle> files_;
  std::vector<MappedFile> images_;
  FeatureVocab vocab_;
};

inline GpackReader open_reader(const std::filesystem::path& path) { return GpackReader(path); }

/// Writes a whole sample list with `writer_count` writers, each taking a
/// contiguous slice, so global ids follow the input order.
inline GpackDataset write_container(const std::filesystem::path& path, const GpackSchema& schema,
                                    std::span<const GraphSample> samples, std::uint32_t num_subfiles,
                                    std::uint32_t writer_count = 1, bool overwrite = false) {
  const std::size_t n = samples.size();
  // Writers are created up front so shard-config and existing-path errors
  // surface before any thread starts.
  std::vector<GpackWriter> writers;
  for (std::uint32_t w = 0; w < writer_count; ++w)
    writers.emplace_back(path, schema, num_subfiles, w, writer_count, overwrite);
  std::vector<std::exception_ptr> errors(writer_count);
  auto body = [&](std::uint32_t w) {
    try {
      const std::size_t lo = n * w / writer_count, hi = n * (w + 1) / writer_count;
      for (std::size_t i = lo; i < hi; ++i) writers[w].append(samples[i]);
      writers[w].finalize();
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (writer_count == 1) {
    body(0);
  } else {
    std::vector<std::thread> threads;
    for (std::uint32_t w = 0; w < writer_count; ++w) threads.emplace_back(body, w);
    for (auto& t : threads) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return merge_index(path, writer_count);
}

}  // namespace molddp::gpack
