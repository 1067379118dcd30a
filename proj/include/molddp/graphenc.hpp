#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "molddp/elements.hpp"
#include "molddp/error.hpp"
#include "molddp/rng.hpp"
#include "molddp/smiles.hpp"

namespace molddp {

/// Element vocabulary of a dataset, ordered by atomic number.
class FeatureVocab {
 public:
  FeatureVocab() = default;

  const std::vector<int>& elements() const { return elements_; }
  int size() const { return static_cast<int>(elements_.size()); }
  bool empty() const { return elements_.empty(); }

  /// Position of an element in the one-hot block, or -1 when absent.
  int index_of(int atomic_number) const {
    auto it = std::lower_bound(elements_.begin(), elements_.end(), atomic_number);
    return (it != elements_.end() && *it == atomic_number) ? static_cast<int>(it - elements_.begin()) : -1;
  }

  std::vector<std::string> symbols() const {
    std::vector<std::string> out;
    for (int z : elements_) out.emplace_back(element_symbol(z));
    return out;
  }

  static FeatureVocab from_symbols(std::span<const std::string> symbols);

  friend bool operator==(const FeatureVocab&, const FeatureVocab&) = default;

 private:
  friend FeatureVocab build_vocab(std::span<const int> elements_seen);
  std::vector<int> elements_;
};

/// Deduplicates and sorts the observed elements (atomic numbers).
inline FeatureVocab build_vocab(std::span<const int> elements_seen) {
  if (elements_seen.empty()) fail(ErrorKind::EmptyDataset, "no elements observed");
  FeatureVocab v;
  v.elements_.assign(elements_seen.begin(), elements_seen.end());
  std::sort(v.elements_.begin(), v.elements_.end());
  v.elements_.erase(std::unique(v.elements_.begin(), v.elements_.end()), v.elements_.end());
  for (int z : v.elements_)
    if (!find_element(z)) fail(ErrorKind::UnknownElement, "atomic number " + std::to_string(z));
  return v;
}

/// Rebuilds a stored vocabulary. An empty list (a container with no graphs)
/// gives an empty vocabulary.
inline FeatureVocab FeatureVocab::from_symbols(std::span<const std::string> symbols) {
  if (symbols.empty()) return {};
  std::vector<int> z;
  for (const auto& s : symbols) {
    const auto* e = find_element(s);
    if (!e) fail(ErrorKind::UnknownElement, "'" + s + "'");
    z.push_back(e->atomic_number);
  }
  return build_vocab(z);
}

/// Appends the atomic numbers a molecule contributes to a vocabulary,
/// including hydrogen when it will be materialised.
inline void collect_elements(const Molecule& m, std::vector<int>& out) {
  for (const auto& a : m.atoms) out.push_back(a.element);
  if (m.implicit_hydrogens() > 0) out.push_back(1);
}

/// Node feature layout: one-hot element block, then degree, formal charge and
/// aromatic flag.
inline constexpr int kExtraNodeFeatures = 3;
inline constexpr int kEdgeFeatures = kNumBondOrders;

inline int node_feature_count(const FeatureVocab& v) { return v.size() + kExtraNodeFeatures; }

/// One molecular graph: x is (num_nodes x node_features) row-major,
/// edge_index is (2 x num_edges) with the source row first, edge_attr is
/// (num_edges x edge_features), y is graph-level targets in eV.
struct GraphSample {
  std::int64_t id = 0;
  std::int64_t num_nodes = 0;
  std::int64_t num_edges = 0;
  int node_features = 0;
  int edge_features = kEdgeFeatures;
  std::vector<float> x;
  std::vector<std::int64_t> edge_index;
  std::vector<float> edge_attr;
  std::vector<float> y;

  std::int64_t source(std::int64_t e) const { return edge_index[static_cast<std::size_t>(e)]; }
  std::int64_t target(std::int64_t e) const { return edge_index[static_cast<std::size_t>(num_edges + e)]; }

  void check_shapes() const {
    require(num_nodes >= 0 && num_edges >= 0, ErrorKind::ShapeMismatch, "negative sizes");
    require(x.size() == static_cast<std::size_t>(num_nodes * node_features), ErrorKind::ShapeMismatch, "x shape");
    require(edge_index.size() == static_cast<std::size_t>(2 * num_edges), ErrorKind::ShapeMismatch,
            "edge_index shape");
    require(edge_attr.size() == static_cast<std::size_t>(num_edges * edge_features), ErrorKind::ShapeMismatch,
            "edge_attr shape");
    for (auto v : edge_index)
      require(v >= 0 && v < num_nodes, ErrorKind::ShapeMismatch, "edge_index entry out of range");
  }
};

namespace detail {
template <class T>
bool bytes_equal(const std::vector<T>& a, const std::vector<T>& b) {
  return a.size() == b.size() && (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0);
}
}  // namespace detail

/// Bit-level equality of every tensor and the id.
inline bool bit_equal(const GraphSample& a, const GraphSample& b) {
  return a.id == b.id && a.num_nodes == b.num_nodes && a.num_edges == b.num_edges &&
         a.node_features == b.node_features && a.edge_features == b.edge_features && detail::bytes_equal(a.x, b.x) &&
         detail::bytes_equal(a.edge_index, b.edge_index) && detail::bytes_equal(a.edge_attr, b.edge_attr) &&
         detail::bytes_equal(a.y, b.y);
}

/// Encodes a hydrogen-expanded molecule. Directed edges are emitted in both
/// directions and sorted by (source, destination).
inline GraphSample encode_graph(const Molecule& m, const FeatureVocab& vocab, float target, std::int64_t id) {
  for (const auto& a : m.atoms)
    require(a.implicit_h == 0, ErrorKind::InvalidArgument, "molecule must be hydrogen-expanded before encoding");

  GraphSample g;
  g.id = id;
  g.num_nodes = static_cast<std::int64_t>(m.atoms.size());
  g.num_edges = 2 * static_cast<std::int64_t>(m.bonds.size());
  g.node_features = node_feature_count(vocab);
  g.edge_features = kEdgeFeatures;

  struct Directed {
    std::int64_t src, dst;
    BondOrder order;
  };
  std::vector<Directed> edges;
  edges.reserve(static_cast<std::size_t>(g.num_edges));
  std::vector<int> degree(m.atoms.size(), 0);
  for (const auto& b : m.bonds) {
    edges.push_back({b.a, b.b, b.order});
    edges.push_back({b.b, b.a, b.order});
    ++degree[b.a];
    ++degree[b.b];
  }
  std::sort(edges.begin(), edges.end(),
            [](const Directed& l, const Directed& r) { return l.src != r.src ? l.src < r.src : l.dst < r.dst; });

  const int F = g.node_features;
  g.x.assign(static_cast<std::size_t>(g.num_nodes * F), 0.0f);
  for (std::size_t i = 0; i < m.atoms.size(); ++i) {
    const Atom& a = m.atoms[i];
    const int slot = vocab.index_of(a.element);
    if (slot < 0)
      fail(ErrorKind::UnknownElement, std::string(element_symbol(a.element)) + " is not in the vocabulary");
    float* row = g.x.data() + i * static_cast<std::size_t>(F);
    row[slot] = 1.0f;
    row[vocab.size() + 0] = static_cast<float>(degree[i]);
    row[vocab.size() + 1] = static_cast<float>(a.formal_charge);
    row[vocab.size() + 2] = a.aromatic ? 1.0f : 0.0f;
  }

  g.edge_index.resize(static_cast<std::size_t>(2 * g.num_edges));
  g.edge_attr.assign(static_cast<std::size_t>(g.num_edges * kEdgeFeatures), 0.0f);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    g.edge_index[e] = edges[e].src;
    g.edge_index[edges.size() + e] = edges[e].dst;
    g.edge_attr[e * kEdgeFeatures + static_cast<std::size_t>(edges[e].order)] = 1.0f;
  }
  g.y = {target};
  return g;
}

/// Parse, expand and encode in one go.
inline GraphSample smiles_to_graph(std::string_view smiles, const FeatureVocab& vocab, float target,
                                   std::int64_t id) {
  return encode_graph(expand_hydrogens(parse_smiles(smiles)), vocab, target, id);
}

struct SplitSpec {
  double train_fraction = 0.94;
  double val_share_of_rest = 1.0 / 3.0;
  double test_share_of_rest = 2.0 / 3.0;
  std::uint64_t seed = 0;
};

struct DatasetSplit {
  std::vector<std::int64_t> train, val, test;
};

/// Deterministic shuffle of [0, n) followed by contiguous train/val/test cuts.
inline DatasetSplit split_dataset(std::int64_t n, const SplitSpec& spec) {
  if (n < 10) fail(ErrorKind::TooFewSamples, "need at least 10 samples, got " + std::to_string(n));
  require(spec.train_fraction > 0 && spec.train_fraction < 1, ErrorKind::InvalidArgument, "train_fraction");
  require(spec.val_share_of_rest > 0 && spec.test_share_of_rest > 0 &&
              std::abs(spec.val_share_of_rest + spec.test_share_of_rest - 1.0) < 1e-9,
          ErrorKind::InvalidArgument, "validation/test shares must be positive and sum to 1");

  std::vector<std::int64_t> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(mix_seed(spec.seed, 0x5e1177));
  rng.shuffle(std::span<std::int64_t>(perm));

  // The small epsilon keeps e.g. 0.94 * 1000 from flooring to 939.
  const auto n_train = static_cast<std::int64_t>(std::floor(static_cast<double>(n) * spec.train_fraction + 1e-9));
  const std::int64_t rest = n - n_train;
  const auto n_val = static_cast<std::int64_t>(std::floor(static_cast<double>(rest) * spec.val_share_of_rest + 1e-9));

  DatasetSplit s;
  s.train.assign(perm.begin(), perm.begin() + n_train);
  s.val.assign(perm.begin() + n_train, perm.begin() + n_train + n_val);
  s.test.assign(perm.begin() + n_train + n_val, perm.end());
  return s;
}

}  // namespace molddp
