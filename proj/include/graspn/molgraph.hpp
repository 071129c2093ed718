#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "graspn/error.hpp"
#include "graspn/tensor.hpp"

namespace graspn {

enum class Element { B, C, N, O, P, S, F, Cl, Br, I, Other };
constexpr int kNumElements = 11;

inline const char* element_symbol(Element e) {
  switch (e) {
    case Element::B: return "B";
    case Element::C: return "C";
    case Element::N: return "N";
    case Element::O: return "O";
    case Element::P: return "P";
    case Element::S: return "S";
    case Element::F: return "F";
    case Element::Cl: return "Cl";
    case Element::Br: return "Br";
    case Element::I: return "I";
    case Element::Other: return "*";
  }
  return "?";
}

struct Atom {
  Element element = Element::C;
  bool aromatic = false;
  int formal_charge = 0;       // clamped to [-2, +2]
  int explicit_hydrogens = 0;  // from brackets; recorded, never materialized
  std::string other_symbol;    // original text for Element::Other, for round-trips
};

enum class BondOrder { Single, Double, Triple, Aromatic };

struct Bond {
  int u = 0;
  int v = 0;
  BondOrder order = BondOrder::Single;
};

// Heavy-atom molecular graph. Node order is creation (SMILES) order.
class MolecularGraph {
 public:
  MolecularGraph() = default;

  static MolecularGraph from_parts(std::vector<Atom> atoms, std::vector<Bond> bonds,
                                   bool allow_disconnected = false) {
    MolecularGraph g;
    g.atoms_ = std::move(atoms);
    for (const Bond& b : bonds) g.push_bond(b);
    g.validate(allow_disconnected);
    return g;
  }

  int num_atoms() const { return static_cast<int>(atoms_.size()); }
  int num_bonds() const { return static_cast<int>(bonds_.size()); }
  const std::vector<Atom>& atoms() const { return atoms_; }
  const std::vector<Bond>& bonds() const { return bonds_; }
  const Atom& atom(int i) const { return atoms_[static_cast<std::size_t>(i)]; }

  // sorted neighbor lists
  const std::vector<int>& neighbors(int i) const { return adj_[static_cast<std::size_t>(i)]; }
  int degree(int i) const { return static_cast<int>(adj_[static_cast<std::size_t>(i)].size()); }

  bool has_bond(int u, int v) const {
    const auto& nb = adj_[static_cast<std::size_t>(u)];
    return std::binary_search(nb.begin(), nb.end(), v);
  }

  BondOrder bond_order(int u, int v) const {
    for (const Bond& b : bonds_)
      if ((b.u == u && b.v == v) || (b.u == v && b.v == u)) return b.order;
    fail(Errc::InvalidIndex, "no bond " + std::to_string(u) + "-" + std::to_string(v));
  }

  std::vector<std::vector<bool>> adjacency_matrix() const {
    const std::size_t n = atoms_.size();
    std::vector<std::vector<bool>> a(n, std::vector<bool>(n, false));
    for (const Bond& b : bonds_) {
      a[static_cast<std::size_t>(b.u)][static_cast<std::size_t>(b.v)] = true;
      a[static_cast<std::size_t>(b.v)][static_cast<std::size_t>(b.u)] = true;
    }
    return a;
  }

  bool is_connected() const {
    if (atoms_.empty()) return true;
    std::vector<bool> seen(atoms_.size(), false);
    std::vector<int> stack = {0};
    seen[0] = true;
    std::size_t count = 1;
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      for (int v : neighbors(u))
        if (!seen[static_cast<std::size_t>(v)]) {
          seen[static_cast<std::size_t>(v)] = true;
          ++count;
          stack.push_back(v);
        }
    }
    return count == atoms_.size();
  }

  EdgeList edge_list() const {
    EdgeList out;
    out.reserve(bonds_.size());
    for (const Bond& b : bonds_) out.emplace_back(b.u, b.v);
    return out;
  }

 private:
  friend MolecularGraph parse_smiles(const std::string&);

  void push_bond(const Bond& b) {
    require(b.u != b.v, Errc::MalformedLine, "self-bond at atom " + std::to_string(b.u));
    require(b.u >= 0 && b.v >= 0 && b.u < num_atoms() && b.v < num_atoms(), Errc::IndexOutOfRange,
            "bond endpoint out of range");
    require(!has_bond_slow(b.u, b.v), Errc::MalformedLine,
            "duplicate bond " + std::to_string(b.u) + "-" + std::to_string(b.v));
    bonds_.push_back(b);
    if (adj_.size() != atoms_.size()) adj_.resize(atoms_.size());
    adj_[static_cast<std::size_t>(b.u)].push_back(b.v);
    adj_[static_cast<std::size_t>(b.v)].push_back(b.u);
  }

  bool has_bond_slow(int u, int v) const {
    for (const Bond& b : bonds_)
      if ((b.u == u && b.v == v) || (b.u == v && b.v == u)) return true;
    return false;
  }

  void validate(bool allow_disconnected) {
    adj_.resize(atoms_.size());
    for (auto& nb : adj_) std::sort(nb.begin(), nb.end());
    for (Atom& a : atoms_) a.formal_charge = std::clamp(a.formal_charge, -2, 2);
    if (!allow_disconnected)
      require(is_connected(), Errc::DisconnectedInput, "graph has multiple components");
  }

  std::vector<Atom> atoms_;
  std::vector<Bond> bonds_;
  std::vector<std::vector<int>> adj_;
};

namespace detail {

inline bool map_organic_aliphatic(const std::string& sym, Element& out) {
  static const std::pair<const char*, Element> table[] = {
      {"B", Element::B}, {"C", Element::C},   {"N", Element::N},   {"O", Element::O}, {"P", Element::P},
      {"S", Element::S}, {"F", Element::F},   {"Cl", Element::Cl}, {"Br", Element::Br}, {"I", Element::I},
  };
  for (const auto& [s, e] : table)
    if (sym == s) {
      out = e;
      return true;
    }
  return false;
}

inline bool map_aromatic(char c, Element& out) {
  switch (c) {
    case 'b': out = Element::B; return true;
    case 'c': out = Element::C; return true;
    case 'n': out = Element::N; return true;
    case 'o': out = Element::O; return true;
    case 'p': out = Element::P; return true;
    case 's': out = Element::S; return true;
    default: return false;
  }
}

struct SmilesParser {
  const std::string& text;
  std::size_t pos = 0;

  // graph under construction (validated at the end)
  std::vector<Atom> atoms;
  std::vector<Bond> bonds;

  int prev_atom = -1;
  std::vector<int> branch_stack;
  // pending bond symbol applies to the next atom or ring closure
  bool has_pending_order = false;
  BondOrder pending_order = BondOrder::Single;
  // open ring closures: number -> (atom index, order-if-specified)
  std::map<int, std::pair<int, int>> open_rings;  // order: -1 unspecified else BondOrder int

  explicit SmilesParser(const std::string& t) : text(t) {}

  bool done() const { return pos >= text.size(); }
  char peek() const { return text[pos]; }
  char take() { return text[pos++]; }

  [[noreturn]] void reject(Errc code, const std::string& msg) {
    fail(code, msg + " at position " + std::to_string(pos));
  }

  void add_bond(int u, int v, BondOrder order) {
    if (u == v) reject(Errc::UnmatchedRingBond, "ring closure forms a self-loop");
    for (const Bond& b : bonds)
      if ((b.u == u && b.v == v) || (b.u == v && b.v == u))
        reject(Errc::UnmatchedRingBond, "ring closure duplicates an existing bond");
    bonds.push_back({u, v, order});
  }

  BondOrder bond_between(int u, int v) {
    if (has_pending_order) {
      has_pending_order = false;
      return pending_order;
    }
    const bool both_aromatic =
        atoms[static_cast<std::size_t>(u)].aromatic && atoms[static_cast<std::size_t>(v)].aromatic;
    return both_aromatic ? BondOrder::Aromatic : BondOrder::Single;
  }

  void on_new_atom(int idx) {
    if (prev_atom >= 0) add_bond(prev_atom, idx, bond_between(prev_atom, idx));
    else if (has_pending_order) reject(Errc::ParseError, "bond symbol before any atom");
    prev_atom = idx;
  }

  void ring_closure(int number) {
    if (prev_atom < 0) reject(Errc::UnmatchedRingBond, "ring closure before any atom");
    int specified = -1;
    if (has_pending_order) {
      specified = static_cast<int>(pending_order);
      has_pending_order = false;
    }
    auto it = open_rings.find(number);
    if (it == open_rings.end()) {
      open_rings[number] = {prev_atom, specified};
      return;
    }
    auto [other, other_order] = it->second;
    open_rings.erase(it);
    int order = -1;
    if (specified >= 0 && other_order >= 0 && specified != other_order)
      reject(Errc::UnmatchedRingBond, "ring bond " + std::to_string(number) + " closed with conflicting order");
    order = specified >= 0 ? specified : other_order;
    BondOrder bo;
    if (order >= 0) {
      bo = static_cast<BondOrder>(order);
    } else {
      const bool both_aromatic = atoms[static_cast<std::size_t>(prev_atom)].aromatic &&
                                 atoms[static_cast<std::size_t>(other)].aromatic;
      bo = both_aromatic ? BondOrder::Aromatic : BondOrder::Single;
    }
    add_bond(other, prev_atom, bo);
  }

  int parse_bracket_atom() {
    take();  // '['
    Atom a;
    if (done()) reject(Errc::ParseError, "unterminated bracket atom");
    if (std::isdigit(static_cast<unsigned char>(peek())))
      reject(Errc::UnsupportedFeature, "isotope specification");
    // element symbol; a lowercase second letter extends it ('H' never does)
    if (std::isupper(static_cast<unsigned char>(peek()))) {
      std::string sym(1, take());
      if (!done() && std::islower(static_cast<unsigned char>(peek()))) sym += take();
      Element e;
      if (map_organic_aliphatic(sym, e)) {
        a.element = e;
      } else {
        a.element = Element::Other;
        a.other_symbol = sym;
      }
    } else if (std::islower(static_cast<unsigned char>(peek()))) {
      Element e;
      if (!map_aromatic(peek(), e)) reject(Errc::UnknownAtom, std::string("atom symbol '") + peek() + "'");
      a.element = e;
      a.aromatic = true;
      take();
    } else {
      reject(Errc::UnknownAtom, "expected element symbol in brackets");
    }
    // optional H count
    if (!done() && peek() == 'H') {
      take();
      int count = 1;
      if (!done() && std::isdigit(static_cast<unsigned char>(peek()))) count = take() - '0';
      a.explicit_hydrogens = count;
    }
    // optional charge
    if (!done() && (peek() == '+' || peek() == '-')) {
      const char sign = take();
      int magnitude = 1;
      if (!done() && std::isdigit(static_cast<unsigned char>(peek()))) {
        magnitude = take() - '0';
      } else {
        while (!done() && peek() == sign) {
          take();
          ++magnitude;
        }
      }
      a.formal_charge = (sign == '+' ? magnitude : -magnitude);
      a.formal_charge = std::clamp(a.formal_charge, -2, 2);
    }
    if (done()) reject(Errc::ParseError, "unterminated bracket atom");
    if (peek() == '@') reject(Errc::UnsupportedFeature, "chirality marker");
    if (peek() != ']') reject(Errc::ParseError, std::string("unexpected '") + peek() + "' in bracket atom");
    take();
    atoms.push_back(a);
    return static_cast<int>(atoms.size()) - 1;
  }

  void run() {
    while (!done()) {
      const char c = peek();
      if (c == '[') {
        on_new_atom(parse_bracket_atom());
      } else if (std::isupper(static_cast<unsigned char>(c))) {
        std::string sym(1, take());
        if (!done() && std::islower(static_cast<unsigned char>(peek()))) {
          Element dummy;
          if (map_organic_aliphatic(sym + peek(), dummy)) sym += take();
        }
        Element e;
        if (!map_organic_aliphatic(sym, e)) reject(Errc::UnknownAtom, "atom symbol '" + sym + "'");
        atoms.push_back(Atom{e, false, 0, 0, {}});
        on_new_atom(static_cast<int>(atoms.size()) - 1);
      } else if (std::islower(static_cast<unsigned char>(c))) {
        Element e;
        if (!map_aromatic(c, e)) reject(Errc::UnknownAtom, std::string("atom symbol '") + c + "'");
        take();
        atoms.push_back(Atom{e, true, 0, 0, {}});
        on_new_atom(static_cast<int>(atoms.size()) - 1);
      } else if (c == '-' || c == '=' || c == '#' || c == ':') {
        take();
        if (has_pending_order) reject(Errc::ParseError, "consecutive bond symbols");
        has_pending_order = true;
        pending_order = c == '-'   ? BondOrder::Single
                        : c == '=' ? BondOrder::Double
                        : c == '#' ? BondOrder::Triple
                                   : BondOrder::Aromatic;
      } else if (std::isdigit(static_cast<unsigned char>(c))) {
        take();
        ring_closure(c - '0');
      } else if (c == '%') {
        take();
        if (pos + 1 >= text.size() || !std::isdigit(static_cast<unsigned char>(text[pos])) ||
            !std::isdigit(static_cast<unsigned char>(text[pos + 1])))
          reject(Errc::ParseError, "'%' needs two digits");
        const int number = (take() - '0') * 10 + (take() - '0');
        ring_closure(number);
      } else if (c == '(') {
        take();
        if (prev_atom < 0) reject(Errc::UnmatchedParenthesis, "branch before any atom");
        branch_stack.push_back(prev_atom);
      } else if (c == ')') {
        take();
        if (branch_stack.empty()) reject(Errc::UnmatchedParenthesis, "unopened ')'");
        if (has_pending_order) reject(Errc::ParseError, "dangling bond symbol before ')'");
        prev_atom = branch_stack.back();
        branch_stack.pop_back();
      } else if (c == '.' || c == '/' || c == '\\' || c == '@') {
        reject(Errc::UnsupportedFeature, std::string("'") + c + "'");
      } else {
        reject(Errc::ParseError, std::string("unexpected character '") + c + "'");
      }
    }
    if (has_pending_order) fail(Errc::ParseError, "dangling bond symbol at end of input");
    if (!branch_stack.empty()) fail(Errc::UnmatchedParenthesis, "unclosed '('");
    if (!open_rings.empty())
      fail(Errc::UnmatchedRingBond, "ring bond " + std::to_string(open_rings.begin()->first) + " never closed");
    if (atoms.empty()) fail(Errc::EmptyInput, "no atoms");
  }
};

}  // namespace detail

// Parses the supported SMILES subset: organic-subset atoms, aromatic
// lowercase, brackets with element / H count / charge, bonds - = # :, ring
// closures (incl. %nn), branches. Stereo markers and '.' are rejected.
inline MolecularGraph parse_smiles(const std::string& text) {
  require(!text.empty(), Errc::EmptyInput, "empty SMILES");
  for (char c : text) {
    require(static_cast<unsigned char>(c) < 128, Errc::ParseError, "non-ASCII input");
    require(!std::isspace(static_cast<unsigned char>(c)), Errc::ParseError, "whitespace in SMILES");
  }
  detail::SmilesParser p(text);
  p.run();
  MolecularGraph g;
  g.atoms_ = std::move(p.atoms);
  for (const Bond& b : p.bonds) g.push_bond(b);
  g.validate(/*allow_disconnected=*/false);
  return g;
}

// Deterministic depth-first SMILES writer; neighbors visited in index order,
// ring-closure numbers are smallest-free. Re-parsing yields an isomorphic
// graph on the supported subset.
inline std::string write_smiles(const MolecularGraph& g) {
  require(g.num_atoms() > 0, Errc::EmptyGraph, "cannot write empty graph");
  const int n = g.num_atoms();

  auto atom_token = [&](int i) {
    const Atom& a = g.atom(i);
    const bool lowercase_ok =
        a.aromatic && (a.element == Element::B || a.element == Element::C || a.element == Element::N ||
                       a.element == Element::O || a.element == Element::P || a.element == Element::S);
    std::string sym = a.element == Element::Other ? a.other_symbol : element_symbol(a.element);
    if (a.element == Element::Other && sym.empty()) sym = "Xx";
    if (lowercase_ok) sym[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(sym[0])));
    const bool needs_bracket = a.element == Element::Other || a.formal_charge != 0 ||
                               a.explicit_hydrogens != 0 || (a.aromatic && !lowercase_ok);
    if (!needs_bracket) return sym;
    std::string out = "[" + sym;
    if (a.explicit_hydrogens == 1) out += "H";
    else if (a.explicit_hydrogens > 1) out += "H" + std::to_string(a.explicit_hydrogens);
    if (a.formal_charge > 0) out += a.formal_charge == 1 ? "+" : "+" + std::to_string(a.formal_charge);
    if (a.formal_charge < 0) out += a.formal_charge == -1 ? "-" : "-" + std::to_string(-a.formal_charge);
    return out + "]";
  };

  auto bond_token = [&](int u, int v) -> std::string {
    switch (g.bond_order(u, v)) {
      case BondOrder::Double: return "=";
      case BondOrder::Triple: return "#";
      case BondOrder::Aromatic:
        return (g.atom(u).aromatic && g.atom(v).aromatic) ? "" : ":";
      case BondOrder::Single:
      default:
        return (g.atom(u).aromatic && g.atom(v).aromatic) ? "-" : "";
    }
  };

  // pass 1: recursive DFS from node 0 (ascending neighbors) for the tree and
  // the back edges; pass 2 re-walks the same tree while emitting text.
  std::vector<int> parent(static_cast<std::size_t>(n), -2);
  std::vector<int> preorder(static_cast<std::size_t>(n), -1);
  std::vector<std::vector<int>> children(static_cast<std::size_t>(n));
  {
    int clock = 0;
    auto dfs = [&](auto&& self, int u) -> void {
      preorder[static_cast<std::size_t>(u)] = clock++;
      for (int v : g.neighbors(u)) {
        if (parent[static_cast<std::size_t>(v)] == -2) {
          parent[static_cast<std::size_t>(v)] = u;
          children[static_cast<std::size_t>(u)].push_back(v);
          self(self, v);
        }
      }
    };
    parent[0] = -1;
    dfs(dfs, 0);
    require(clock == n, Errc::DisconnectedInput, "writer needs a connected graph");
  }
  std::vector<std::vector<std::pair<int, int>>> ring_at(static_cast<std::size_t>(n));
  for (const Bond& b : g.bonds()) {
    if (parent[static_cast<std::size_t>(b.u)] == b.v || parent[static_cast<std::size_t>(b.v)] == b.u) continue;
    auto rb = preorder[static_cast<std::size_t>(b.u)] < preorder[static_cast<std::size_t>(b.v)]
                  ? std::make_pair(b.u, b.v)
                  : std::make_pair(b.v, b.u);
    ring_at[static_cast<std::size_t>(rb.first)].push_back(rb);
    ring_at[static_cast<std::size_t>(rb.second)].push_back(rb);
  }

  std::map<std::pair<int, int>, int> ring_number;
  std::vector<bool> number_in_use(100, false);
  auto ring_digit_text = [](int d) { return d < 10 ? std::to_string(d) : "%" + std::to_string(d); };

  std::string out;
  auto emit_atom = [&](int u) {
    out += atom_token(u);
    for (auto& rb : ring_at[static_cast<std::size_t>(u)]) {
      auto it = ring_number.find(rb);
      if (it == ring_number.end()) {
        int d = 1;
        while (number_in_use[static_cast<std::size_t>(d)]) ++d;
        require(d < 100, Errc::ParseError, "too many simultaneous ring closures");
        number_in_use[static_cast<std::size_t>(d)] = true;
        ring_number[rb] = d;
        out += bond_token(rb.first, rb.second) + ring_digit_text(d);
      } else {
        number_in_use[static_cast<std::size_t>(it->second)] = false;
        out += bond_token(rb.first, rb.second) + ring_digit_text(it->second);
      }
    }
  };

  auto emit = [&](auto&& self, int u) -> void {
    emit_atom(u);
    const auto& ch = children[static_cast<std::size_t>(u)];
    for (std::size_t i = 0; i < ch.size(); ++i) {
      const bool last = i + 1 == ch.size();
      if (!last) out += "(";
      out += bond_token(u, ch[i]);
      self(self, ch[i]);
      if (!last) out += ")";
    }
  };
  emit(emit, 0);
  return out;
}

// one-hot element (11) | one-hot degree 0..6 (7) | one-hot charge -2..+2 (5)
// | aromatic flag (1)
constexpr long kFeatureDim = 24;

inline Tensor featurize(const MolecularGraph& g) {
  Tensor x = Tensor::matrix(g.num_atoms(), kFeatureDim);
  for (int i = 0; i < g.num_atoms(); ++i) {
    const Atom& a = g.atom(i);
    x.at(i, static_cast<long>(a.element)) = 1.0;
    const int deg = std::min(g.degree(i), 6);
    x.at(i, 11 + deg) = 1.0;
    x.at(i, 18 + (a.formal_charge + 2)) = 1.0;
    if (a.aromatic) x.at(i, 23) = 1.0;
  }
  return x;
}

// ---------------------------------------------------------------------------
// generic (non-chemical) labeled graphs

struct GenericGraph {
  int n = 0;
  std::vector<int> labels;                  // nonnegative, default 0
  std::vector<std::pair<int, int>> edges;   // undirected, simple

  std::vector<std::vector<int>> neighbor_lists() const {
    std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
    for (auto [u, v] : edges) {
      adj[static_cast<std::size_t>(u)].push_back(v);
      adj[static_cast<std::size_t>(v)].push_back(u);
    }
    for (auto& nb : adj) std::sort(nb.begin(), nb.end());
    return adj;
  }
};

inline GenericGraph make_generic(int n, std::vector<std::pair<int, int>> edges, std::vector<int> labels = {}) {
  GenericGraph g;
  g.n = n;
  g.labels = labels.empty() ? std::vector<int>(static_cast<std::size_t>(n), 0) : std::move(labels);
  require(static_cast<int>(g.labels.size()) == n, Errc::ShapeMismatch, "label count");
  for (int l : g.labels) require(l >= 0, Errc::MalformedLine, "negative label");
  std::vector<std::pair<int, int>> seen;
  for (auto [u, v] : edges) {
    require(u >= 0 && u < n && v >= 0 && v < n, Errc::IndexOutOfRange, "edge endpoint out of range");
    require(u != v, Errc::MalformedLine, "self-loop");
    auto key = std::minmax(u, v);
    require(std::find(seen.begin(), seen.end(), std::make_pair(key.first, key.second)) == seen.end(),
            Errc::MalformedLine, "duplicate edge");
    seen.emplace_back(key.first, key.second);
  }
  g.edges = std::move(seen);
  return g;
}

// All-carbon molecular graph with the given topology; used to run the
// fragmentation pipeline on abstract graphs.
inline MolecularGraph carbon_skeleton(const GenericGraph& gg) {
  std::vector<Atom> atoms(static_cast<std::size_t>(gg.n));
  std::vector<Bond> bonds;
  for (auto [u, v] : gg.edges) bonds.push_back({u, v, BondOrder::Single});
  return MolecularGraph::from_parts(std::move(atoms), std::move(bonds), /*allow_disconnected=*/true);
}

// ---------------------------------------------------------------------------
// file loaders

struct SmilesRecord {
  std::string smiles;
  MolecularGraph graph;
  std::vector<double> labels;  // NaN marks a missing label
  int line = 0;
};

struct SmilesDataset {
  std::vector<SmilesRecord> records;
  struct Failure {
    int line;
    std::string message;
  };
  std::vector<Failure> failures;
};

// Lines are "SMILES[\tlabel...]"; '#' starts a comment line. In strict mode
// the first bad record throws; lenient mode collects failures and skips.
inline SmilesDataset load_smiles_dataset(const std::string& path, bool strict = false) {
  std::ifstream in(path);
  require(in.good(), Errc::IoError, "cannot open " + path);
  SmilesDataset ds;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      std::size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    try {
      SmilesRecord rec;
      rec.smiles = fields[0];
      rec.graph = parse_smiles(fields[0]);
      rec.line = line_no;
      for (std::size_t i = 1; i < fields.size(); ++i) {
        if (fields[i].empty()) {
          rec.labels.push_back(std::numeric_limits<double>::quiet_NaN());
          continue;
        }
        std::size_t used = 0;
        double v;
        try {
          v = std::stod(fields[i], &used);
        } catch (const std::exception&) {
          fail(Errc::ParseError, "bad label '" + fields[i] + "'");
        }
        require(used == fields[i].size(), Errc::ParseError, "bad label '" + fields[i] + "'");
        rec.labels.push_back(v);
      }
      ds.records.push_back(std::move(rec));
    } catch (const Error& e) {
      if (strict) fail(Errc::ParseError, "line " + std::to_string(line_no) + ": " + e.what());
      ds.failures.push_back({line_no, e.what()});
    }
  }
  return ds;
}

// Format: first line "N M", then M lines "u v", then optional "label u L"
// lines. '#' starts a comment.
inline GenericGraph load_generic_graph(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), Errc::IoError, "cannot open " + path);
  std::vector<std::string> lines;
  std::string raw;
  while (std::getline(in, raw)) {
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    if (raw.empty() || raw[0] == '#') continue;
    lines.push_back(raw);
  }
  require(!lines.empty(), Errc::MalformedLine, "empty graph file");
  std::istringstream head(lines[0]);
  long n = 0, m = 0;
  require(static_cast<bool>(head >> n >> m) && n >= 0 && m >= 0, Errc::MalformedLine, "bad header line");
  require(static_cast<long>(lines.size()) >= 1 + m, Errc::MalformedLine, "fewer edge lines than declared");
  std::vector<std::pair<int, int>> edges;
  for (long i = 0; i < m; ++i) {
    std::istringstream es(lines[static_cast<std::size_t>(1 + i)]);
    long u, v;
    require(static_cast<bool>(es >> u >> v), Errc::MalformedLine, "bad edge line: " + lines[static_cast<std::size_t>(1 + i)]);
    require(u >= 0 && u < n && v >= 0 && v < n, Errc::IndexOutOfRange, "edge endpoint out of range");
    edges.emplace_back(static_cast<int>(u), static_cast<int>(v));
  }
  std::vector<int> labels(static_cast<std::size_t>(n), 0);
  for (std::size_t i = static_cast<std::size_t>(1 + m); i < lines.size(); ++i) {
    std::istringstream ls(lines[i]);
    std::string kw;
    long u, l;
    require(static_cast<bool>(ls >> kw >> u >> l) && kw == "label", Errc::MalformedLine, "bad line: " + lines[i]);
    require(u >= 0 && u < n, Errc::IndexOutOfRange, "label node out of range");
    require(l >= 0, Errc::MalformedLine, "negative label");
    labels[static_cast<std::size_t>(u)] = static_cast<int>(l);
  }
  return make_generic(static_cast<int>(n), std::move(edges), std::move(labels));
}

}  // namespace graspn
