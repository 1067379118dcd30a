#pragma once

// Synthetic molecule corpora. Molecules are assembled from a small fragment
// grammar so every string is valid input for the parser, and targets are
// deterministic functions of structure: either a scaled heavy-atom count or
// a HOMO-LUMO-like gap from a simple Hueckel model of the pi system.

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "molddp/rng.hpp"
#include "molddp/smiles.hpp"

namespace molddp::synth {

enum class Target { HomoLumoGap, HeavyAtoms };

struct Record {
  std::string smiles;
  float target = 0;
};

namespace detail {

// Two-connection units placed along a backbone.
inline constexpr std::array<std::string_view, 24> kLinkers{
    "C",          "C",           "CC",        "N",          "O",         "S",
    "C(=O)",      "C(C)",        "C(F)",      "C(Cl)",      "C(O)",      "C(N)",
    "C=C",        "C#C",         "c1ccc(cc1)", "c1ccc(nc1)", "c1ccc(o1)", "c1ccc(s1)",
    "C1CCC(CC1)", "C(=O)N",      "N=N",       "c1cc(cc(c1)C)", "C(C)(C)", "c1ccc2cc(ccc2c1)"};

// One-connection end groups.
inline constexpr std::array<std::string_view, 18> kCaps{
    "C",      "C",         "O",        "N",      "F",          "Cl",
    "Br",     "C(=O)O",    "C#N",      "c1ccccc1", "N(C)C",   "S",
    "C=O",    "c1ccncc1",  "C(F)(F)F", "OC",     "c1ccc2ccccc2c1", "C=C"};

inline bool ends_with_heteroatom_link(std::string_view s) {
  return s == "O" || s == "S" || s == "N" || s == "N=N";
}

}  // namespace detail

/// One random molecule with `units` backbone linkers between two caps.
inline std::string random_smiles(Rng& rng, int min_units, int max_units) {
  const int units = min_units + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_units - min_units + 1)));
  std::string_view prev = detail::kCaps[rng.below(detail::kCaps.size())];
  std::string s(prev);
  for (int k = 0; k < units; ++k) {
    std::string_view link;
    do {
      link = detail::kLinkers[rng.below(detail::kLinkers.size())];
    } while (detail::ends_with_heteroatom_link(prev) && detail::ends_with_heteroatom_link(link));
    s += link;
    prev = link;
  }
  std::string_view cap;
  do {
    cap = detail::kCaps[rng.below(detail::kCaps.size())];
  } while (units > 0 && detail::ends_with_heteroatom_link(prev) &&
           (cap == "O" || cap == "N" || cap == "S" || cap == "F" || cap == "Cl" || cap == "Br"));
  if (units > 0 || rng.chance(0.5)) s += cap;
  return s;
}

/// Gap in eV from a Hueckel treatment of the pi system of `m` (heavy atoms
/// only). Saturated molecules fall back to a sigma-gap estimate.
inline double huckel_gap(const Molecule& m) {
  const int n = static_cast<int>(m.atoms.size());
  std::vector<std::vector<std::pair<int, BondOrder>>> adj(static_cast<std::size_t>(n));
  for (const auto& b : m.bonds) {
    adj[b.a].push_back({b.b, b.order});
    adj[b.b].push_back({b.a, b.order});
  }
  auto has_multiple = [&](int i) {
    for (auto [j, o] : adj[i])
      if (o == BondOrder::Double || o == BondOrder::Triple || o == BondOrder::Aromatic) return true;
    return false;
  };
  std::vector<char> core(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n; ++i) core[i] = m.atoms[i].aromatic || has_multiple(i);

  struct Site {
    int atom;
    double h;
    int electrons;
  };
  std::vector<Site> sites;
  std::vector<int> site_of(static_cast<std::size_t>(n), -1);
  for (int i = 0; i < n; ++i) {
    const Atom& a = m.atoms[i];
    bool next_to_core = false;
    for (auto [j, o] : adj[i]) next_to_core = next_to_core || core[j];
    std::optional<Site> s;
    switch (a.element) {
      case 6:
        if (core[i]) s = Site{i, 0.0, 1};
        break;
      case 7:
        if (a.aromatic) s = (a.implicit_h > 0 || adj[i].size() == 3) ? Site{i, 1.5, 2} : Site{i, 0.5, 1};
        else if (core[i]) s = Site{i, 0.5, 1};
        else if (next_to_core) s = Site{i, 1.5, 2};
        break;
      case 8:
        if (a.aromatic) s = Site{i, 2.0, 2};
        else if (core[i]) s = Site{i, 1.0, 1};
        else if (next_to_core) s = Site{i, 2.0, 2};
        break;
      case 16:
        if (a.aromatic) s = Site{i, 1.0, 2};
        else if (core[i]) s = Site{i, 0.5, 1};
        else if (next_to_core) s = Site{i, 1.0, 2};
        break;
      case 9:
        if (next_to_core) s = Site{i, 3.0, 2};
        break;
      case 17:
        if (next_to_core) s = Site{i, 2.0, 2};
        break;
      case 35:
        if (next_to_core) s = Site{i, 1.5, 2};
        break;
      default:
        break;
    }
    if (s) {
      site_of[i] = static_cast<int>(sites.size());
      sites.push_back(*s);
    }
  }

  int heteroatoms = 0;
  for (const auto& a : m.atoms) heteroatoms += a.element != 6;
  const double sigma_gap = 8.5 - 1.5 * static_cast<double>(heteroatoms) / std::max(1, n);

  const int k = static_cast<int>(sites.size());
  int electrons = 0;
  for (const auto& s : sites) electrons += s.electrons;
  const int homo = (electrons + 1) / 2 - 1;
  if (k < 2 || homo < 0 || homo + 1 >= k) return sigma_gap;

  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(k, k);
  for (int s = 0; s < k; ++s) h(s, s) = sites[s].h;
  for (const auto& b : m.bonds) {
    const int p = site_of[b.a], q = site_of[b.b];
    if (p < 0 || q < 0) continue;
    const bool hetero = m.atoms[b.a].element != 6 || m.atoms[b.b].element != 6;
    const double coupling = hetero ? 0.8 : 1.0;
    h(p, q) = h(q, p) = coupling;
  }
  // Orbital energy E = alpha + x beta with beta < 0, so energies run
  // opposite to the eigenvalues x.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h, Eigen::EigenvaluesOnly);
  std::vector<double> energy(static_cast<std::size_t>(k));
  for (int s = 0; s < k; ++s) energy[s] = -es.eigenvalues()(s);
  std::sort(energy.begin(), energy.end());
  const double delta = energy[homo + 1] - energy[homo];
  return std::min(sigma_gap, 1.2 + 2.1 * delta);
}

struct CorpusOptions {
  std::int64_t count = 1000;
  std::uint64_t seed = 0;
  int min_units = 0;
  int max_units = 6;
  Target target = Target::HomoLumoGap;
};

/// Heavy-atom targets are divided by the largest heavy-atom count in the
/// corpus so they fall in (0, 1].
inline std::vector<Record> generate_corpus(const CorpusOptions& opt) {
  Rng rng(mix_seed(opt.seed, 0x5e7));
  std::vector<Record> out;
  std::vector<int> heavy;
  out.reserve(static_cast<std::size_t>(opt.count));
  for (std::int64_t i = 0; i < opt.count; ++i) {
    Record r;
    r.smiles = random_smiles(rng, opt.min_units, opt.max_units);
    const Molecule m = parse_smiles(r.smiles);
    if (opt.target == Target::HomoLumoGap) r.target = static_cast<float>(huckel_gap(m));
    heavy.push_back(static_cast<int>(m.atoms.size()));
    out.push_back(std::move(r));
  }
  if (opt.target == Target::HeavyAtoms && !out.empty()) {
    const int top = *std::max_element(heavy.begin(), heavy.end());
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i].target = static_cast<float>(static_cast<double>(heavy[i]) / top);
  }
  return out;
}

/// Writes a `smiles,gap` file readable by the inline backend and preprocess.
inline void write_csv(const std::filesystem::path& path, const std::vector<Record>& records) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot create " + path.string());
  out << "smiles,gap\n";
  char num[32];
  for (const auto& r : records) {
    std::snprintf(num, sizeof num, "%.9g", static_cast<double>(r.target));
    out << r.smiles << ',' << num << '\n';
  }
  if (!out) fail(ErrorKind::Io, "write failed on " + path.string());
}

}  // namespace molddp::synth
