#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "molddp/elements.hpp"
#include "molddp/error.hpp"

namespace molddp {

enum class BondOrder : std::uint8_t { Single = 0, Double = 1, Triple = 2, Aromatic = 3 };

inline constexpr int kNumBondOrders = 4;

/// Contribution of a bond to an atom's valence usage; aromatic bonds count 1.
constexpr int valence_contribution(BondOrder order) {
  switch (order) {
    case BondOrder::Single: return 1;
    case BondOrder::Double: return 2;
    case BondOrder::Triple: return 3;
    case BondOrder::Aromatic: return 1;
  }
  return 1;
}

struct Atom {
  int element = 6;  // atomic number
  int formal_charge = 0;
  bool aromatic = false;
  int implicit_h = 0;

  friend bool operator==(const Atom&, const Atom&) = default;
};

struct Bond {
  int a = 0;
  int b = 0;
  BondOrder order = BondOrder::Single;

  friend bool operator==(const Bond&, const Bond&) = default;
};

struct Molecule {
  std::vector<Atom> atoms;
  std::vector<Bond> bonds;

  int implicit_hydrogens() const {
    int n = 0;
    for (const auto& a : atoms) n += a.implicit_h;
    return n;
  }

  friend bool operator==(const Molecule&, const Molecule&) = default;
};

namespace detail {

class SmilesParser {
 public:
  explicit SmilesParser(std::string_view text) : text_(text) {}

  Molecule parse() {
    if (text_.empty()) fail(ErrorKind::EmptyInput, "empty SMILES");
    for (char c : text_)
      if (static_cast<unsigned char>(c) > 127)
        fail(ErrorKind::SyntaxError, "non-ASCII character in SMILES");

    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (c == '(') {
        if (prev_ < 0) error(ErrorKind::SyntaxError, "branch without a preceding atom");
        if (pending_) error(ErrorKind::SyntaxError, "bond symbol before branch");
        branches_.push_back(prev_);
        ++pos_;
      } else if (c == ')') {
        if (branches_.empty()) error(ErrorKind::UnbalancedBranch, "unmatched ')'");
        if (pending_) error(ErrorKind::SyntaxError, "dangling bond symbol");
        prev_ = branches_.back();
        branches_.pop_back();
        ++pos_;
      } else if (c == '.') {
        if (pending_) error(ErrorKind::SyntaxError, "bond symbol before '.'");
        if (!branches_.empty()) error(ErrorKind::UnbalancedBranch, "'.' inside a branch");
        prev_ = -1;
        ++pos_;
      } else if (c == '-' || c == '=' || c == '#' || c == ':' || c == '/' || c == '\\') {
        if (pending_) error(ErrorKind::SyntaxError, "consecutive bond symbols");
        pending_ = c == '=' ? BondOrder::Double
                 : c == '#' ? BondOrder::Triple
                 : c == ':' ? BondOrder::Aromatic
                            : BondOrder::Single;
        ++pos_;
      } else if (c == '$') {
        error(ErrorKind::Unsupported, "quadruple bonds are not supported");
      } else if ((c >= '0' && c <= '9') || c == '%') {
        ring_closure();
      } else if (c == '[') {
        bracket_atom();
      } else if (c == '*') {
        error(ErrorKind::UnknownElement, "wildcard atom");
      } else if ((c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z')) {
        organic_atom();
      } else {
        error(ErrorKind::SyntaxError, std::string("unexpected character '") + c + "'");
      }
    }

    if (!branches_.empty()) fail(ErrorKind::UnbalancedBranch, "unclosed '('");
    if (!rings_.empty())
      fail(ErrorKind::UnclosedRing, "ring bond " + std::to_string(rings_.begin()->first) + " never closed");
    if (pending_) fail(ErrorKind::SyntaxError, "SMILES ends with a bond symbol");
    if (mol_.atoms.empty()) fail(ErrorKind::EmptyInput, "no atoms");

    assign_implicit_hydrogens();
    return std::move(mol_);
  }

 private:
  struct OpenRing {
    int atom;
    std::optional<BondOrder> order;
  };

  [[noreturn]] void error(ErrorKind kind, const std::string& what) const {
    fail(kind, what + " at position " + std::to_string(pos_));
  }

  BondOrder implicit_order(int a, int b) const {
    return mol_.atoms[a].aromatic && mol_.atoms[b].aromatic ? BondOrder::Aromatic : BondOrder::Single;
  }

  void add_bond(int a, int b, BondOrder order) {
    if (a == b) error(ErrorKind::SyntaxError, "atom bonded to itself");
    for (const auto& bd : mol_.bonds)
      if ((bd.a == a && bd.b == b) || (bd.a == b && bd.b == a))
        error(ErrorKind::SyntaxError, "duplicate bond between atoms");
    mol_.bonds.push_back({a, b, order});
  }

  void add_atom(Atom atom, std::optional<int> explicit_h) {
    const int idx = static_cast<int>(mol_.atoms.size());
    mol_.atoms.push_back(atom);
    explicit_h_.push_back(explicit_h.value_or(-1));
    if (prev_ >= 0) {
      add_bond(prev_, idx, pending_.value_or(implicit_order(prev_, idx)));
    }
    pending_.reset();
    prev_ = idx;
  }

  void organic_atom() {
    static constexpr std::string_view kTwoLetter[] = {"Cl", "Br"};
    static constexpr std::string_view kOne = "BCNOPSFI";
    static constexpr std::string_view kAromatic = "bcnops";

    const std::string_view rest = text_.substr(pos_);
    for (auto sym : kTwoLetter) {
      if (rest.substr(0, 2) == sym) {
        add_atom(Atom{find_element(sym)->atomic_number, 0, false, 0}, std::nullopt);
        pos_ += 2;
        return;
      }
    }
    const char c = text_[pos_];
    if (kOne.find(c) != std::string_view::npos) {
      add_atom(Atom{find_element(std::string_view(&c, 1))->atomic_number, 0, false, 0}, std::nullopt);
      ++pos_;
      return;
    }
    if (kAromatic.find(c) != std::string_view::npos) {
      const char upper = static_cast<char>(c - 'a' + 'A');
      add_atom(Atom{find_element(std::string_view(&upper, 1))->atomic_number, 0, true, 0}, std::nullopt);
      ++pos_;
      return;
    }
    std::size_t len = 1;
    if (pos_ + 1 < text_.size() && text_[pos_ + 1] >= 'a' && text_[pos_ + 1] <= 'z') len = 2;
    error(ErrorKind::UnknownElement, "'" + std::string(text_.substr(pos_, len)) + "' outside brackets");
  }

  int read_number(std::size_t max_digits) {
    int v = 0;
    std::size_t n = 0;
    while (pos_ < text_.size() && n < max_digits && text_[pos_] >= '0' && text_[pos_] <= '9') {
      v = v * 10 + (text_[pos_] - '0');
      ++pos_;
      ++n;
    }
    return n == 0 ? -1 : v;
  }

  void bracket_atom() {
    const std::size_t start = pos_;
    ++pos_;  // '['
    auto at_end = [&] { return pos_ >= text_.size(); };
    auto malformed = [&](const std::string& why) {
      fail(ErrorKind::MalformedBracketAtom, why + " in '" + std::string(text_.substr(start, pos_ - start + 1)) + "'");
    };

    if (!at_end() && text_[pos_] >= '0' && text_[pos_] <= '9')
      error(ErrorKind::Unsupported, "isotope labels are not supported");
    if (at_end()) malformed("unterminated bracket atom");

    Atom atom;
    const char c = text_[pos_];
    if (c >= 'A' && c <= 'Z') {
      // An uppercase letter followed by a lowercase one is always a
      // two-letter symbol inside brackets.
      const bool two = pos_ + 1 < text_.size() && text_[pos_ + 1] >= 'a' && text_[pos_ + 1] <= 'z';
      const std::string_view sym = text_.substr(pos_, two ? 2 : 1);
      const ElementInfo* e = find_element(sym);
      if (!e) error(ErrorKind::UnknownElement, "'" + std::string(sym) + "'");
      pos_ += sym.size();
      atom.element = e->atomic_number;
    } else if (c >= 'a' && c <= 'z') {
      static constexpr std::string_view kAromaticTwo[] = {"se", "as"};
      bool matched = false;
      for (auto sym : kAromaticTwo) {
        if (text_.substr(pos_, 2) == sym) {
          const std::string upper{static_cast<char>(sym[0] - 'a' + 'A'), sym[1]};
          atom.element = find_element(upper)->atomic_number;
          pos_ += 2;
          matched = true;
          break;
        }
      }
      if (!matched) {
        if (std::string_view("bcnops").find(c) == std::string_view::npos)
          error(ErrorKind::UnknownElement, std::string("aromatic '") + c + "'");
        const char upper = static_cast<char>(c - 'a' + 'A');
        atom.element = find_element(std::string_view(&upper, 1))->atomic_number;
        ++pos_;
      }
      atom.aromatic = true;
    } else if (c == '*') {
      error(ErrorKind::UnknownElement, "wildcard atom");
    } else {
      malformed("missing element symbol");
    }

    // Chirality is accepted and discarded.
    bool chiral = false;
    while (!at_end() && text_[pos_] == '@') {
      ++pos_;
      chiral = true;
    }
    if (chiral) {
      static constexpr std::string_view kClasses[] = {"TH", "AL", "SP", "TB", "OH"};
      for (auto cls : kClasses) {
        if (text_.substr(pos_, 2) == cls) {
          pos_ += 2;
          read_number(2);
          break;
        }
      }
    }

    int hcount = 0;
    if (!at_end() && text_[pos_] == 'H') {
      ++pos_;
      const int n = read_number(1);
      hcount = n < 0 ? 1 : n;
    }

    if (!at_end() && (text_[pos_] == '+' || text_[pos_] == '-')) {
      const char sign = text_[pos_];
      ++pos_;
      int magnitude = 1;
      const int n = read_number(2);
      if (n >= 0) {
        magnitude = n;
      } else {
        while (!at_end() && text_[pos_] == sign) {
          ++magnitude;
          ++pos_;
        }
      }
      if (!at_end() && (text_[pos_] == '+' || text_[pos_] == '-'))
        fail(ErrorKind::MalformedCharge, "malformed charge in '" + std::string(text_.substr(start, pos_ - start + 1)) + "'");
      if (magnitude > 15)
        fail(ErrorKind::MalformedCharge, "charge magnitude out of range");
      atom.formal_charge = sign == '+' ? magnitude : -magnitude;
    }

    if (!at_end() && text_[pos_] == ':') {
      ++pos_;
      if (read_number(9) < 0) malformed("atom class without digits");
    }

    if (at_end() || text_[pos_] != ']') malformed("expected ']'");
    ++pos_;
    add_atom(atom, hcount);
  }

  void ring_closure() {
    if (prev_ < 0) error(ErrorKind::SyntaxError, "ring bond without a preceding atom");
    int number;
    if (text_[pos_] == '%') {
      ++pos_;
      if (pos_ + 2 > text_.size() || !std::isdigit(static_cast<unsigned char>(text_[pos_])) ||
          !std::isdigit(static_cast<unsigned char>(text_[pos_ + 1])))
        error(ErrorKind::SyntaxError, "'%' must be followed by two digits");
      number = (text_[pos_] - '0') * 10 + (text_[pos_ + 1] - '0');
      pos_ += 2;
    } else {
      number = text_[pos_] - '0';
      ++pos_;
    }

    auto it = rings_.find(number);
    if (it == rings_.end()) {
      rings_.emplace(number, OpenRing{prev_, pending_});
      pending_.reset();
      return;
    }
    const OpenRing open = it->second;
    rings_.erase(it);
    std::optional<BondOrder> order = pending_;
    if (open.order && order && *open.order != *order)
      error(ErrorKind::SyntaxError, "conflicting ring bond orders");
    if (!order) order = open.order;
    add_bond(open.atom, prev_, order.value_or(implicit_order(open.atom, prev_)));
    pending_.reset();
  }

  void assign_implicit_hydrogens() {
    std::vector<int> usage(mol_.atoms.size(), 0);
    std::vector<int> aromatic_bonds(mol_.atoms.size(), 0);
    for (const auto& b : mol_.bonds) {
      const int v = valence_contribution(b.order);
      usage[b.a] += v;
      usage[b.b] += v;
      if (b.order == BondOrder::Aromatic) {
        ++aromatic_bonds[b.a];
        ++aromatic_bonds[b.b];
      }
    }
    for (std::size_t i = 0; i < mol_.atoms.size(); ++i) {
      Atom& atom = mol_.atoms[i];
      if (explicit_h_[i] >= 0) {
        atom.implicit_h = explicit_h_[i];
        continue;
      }
      const ElementInfo* e = find_element(atom.element);
      if (atom.aromatic) {
        // One shared increment stands in for the delocalised extra bond.
        const int used = usage[i] + 1;
        atom.implicit_h = std::max(0, default_valence(atom.element, atom.formal_charge) - used);
        continue;
      }
      atom.implicit_h = 0;
      for (int v : e->valences) {
        if (v == 0) break;
        if (v >= usage[i]) {
          atom.implicit_h = v - usage[i];
          break;
        }
      }
    }
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  Molecule mol_;
  std::vector<int> explicit_h_;
  std::vector<int> branches_;
  std::map<int, OpenRing> rings_;
  std::optional<BondOrder> pending_;
  int prev_ = -1;
};

}  // namespace detail

/// Parses the supported SMILES subset. Atoms keep first-appearance order;
/// every atom's implicit_h is the number of hydrogens to materialise.
inline Molecule parse_smiles(std::string_view text) { return detail::SmilesParser(text).parse(); }

/// Appends each atom's implicit hydrogens as explicit H nodes, in parent order.
inline Molecule expand_hydrogens(const Molecule& m) {
  Molecule out = m;
  const int heavy = static_cast<int>(m.atoms.size());
  for (int i = 0; i < heavy; ++i) {
    const int k = out.atoms[i].implicit_h;
    out.atoms[i].implicit_h = 0;
    for (int h = 0; h < k; ++h) {
      const int idx = static_cast<int>(out.atoms.size());
      out.atoms.push_back(Atom{1, 0, false, 0});
      out.bonds.push_back(Bond{i, idx, BondOrder::Single});
    }
  }
  return out;
}

}  // namespace molddp
