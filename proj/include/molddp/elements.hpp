#pragma once

#include <array>
#include <optional>
#include <string_view>

namespace molddp {

struct ElementInfo {
  std::string_view symbol;
  int atomic_number;
  // Normal valences, ascending, zero-terminated. Only consulted for atoms
  // written without brackets.
  std::array<int, 3> valences;
  bool organic_subset;
};

namespace detail {

inline constexpr std::array<ElementInfo, 31> kElements{{
    {"H", 1, {1, 0, 0}, false},
    {"He", 2, {0, 0, 0}, false},
    {"Li", 3, {1, 0, 0}, false},
    {"Be", 4, {2, 0, 0}, false},
    {"B", 5, {3, 0, 0}, true},
    {"C", 6, {4, 0, 0}, true},
    {"N", 7, {3, 5, 0}, true},
    {"O", 8, {2, 0, 0}, true},
    {"F", 9, {1, 0, 0}, true},
    {"Ne", 10, {0, 0, 0}, false},
    {"Na", 11, {1, 0, 0}, false},
    {"Mg", 12, {2, 0, 0}, false},
    {"Al", 13, {3, 0, 0}, false},
    {"Si", 14, {4, 0, 0}, false},
    {"P", 15, {3, 5, 0}, true},
    {"S", 16, {2, 4, 6}, true},
    {"Cl", 17, {1, 0, 0}, true},
    {"Ar", 18, {0, 0, 0}, false},
    {"Ca", 20, {2, 0, 0}, false},
    {"Ti", 22, {4, 0, 0}, false},
    {"V", 23, {5, 0, 0}, false},
    {"Ni", 28, {2, 0, 0}, false},
    {"Cu", 29, {1, 0, 0}, false},
    {"Zn", 30, {2, 0, 0}, false},
    {"Ga", 31, {3, 0, 0}, false},
    {"Ge", 32, {4, 0, 0}, false},
    {"As", 33, {3, 5, 0}, false},
    {"Se", 34, {2, 4, 6}, false},
    {"Br", 35, {1, 0, 0}, true},
    {"Kr", 36, {0, 0, 0}, false},
    {"I", 53, {1, 0, 0}, true},
}};

}  // namespace detail

inline const ElementInfo* find_element(std::string_view symbol) {
  for (const auto& e : detail::kElements)
    if (e.symbol == symbol) return &e;
  return nullptr;
}

inline const ElementInfo* find_element(int atomic_number) {
  for (const auto& e : detail::kElements)
    if (e.atomic_number == atomic_number) return &e;
  return nullptr;
}

inline std::string_view element_symbol(int atomic_number) {
  const auto* e = find_element(atomic_number);
  return e ? e->symbol : std::string_view{"?"};
}

/// Lowest normal valence with an additive charge correction: +charge for the
/// nitrogen family, -|charge| for the oxygen family, unchanged otherwise.
inline int default_valence(int atomic_number, int formal_charge = 0) {
  const auto* e = find_element(atomic_number);
  if (!e) return 0;
  int v = e->valences[0];
  switch (atomic_number) {
    case 7: case 15: case 33:
      v += formal_charge;
      break;
    case 8: case 16: case 34:
      v -= formal_charge < 0 ? -formal_charge : formal_charge;
      break;
    default:
      break;
  }
  return v < 0 ? 0 : v;
}

}  // namespace molddp
