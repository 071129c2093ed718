#pragma once

#include <algorithm>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "graspn/error.hpp"
#include "graspn/fragmenter.hpp"
#include "graspn/molgraph.hpp"

namespace graspn {

// Per-iteration color multisets from 1-WL refinement. Colors are dense ids
// assigned in sorted-signature order, so they are canonical: permuting the
// graph leaves every histogram unchanged.
struct ColorHistogram {
  // iterations[t] = sorted (color id, count); index 0 is the initial labels
  std::vector<std::vector<std::pair<int, long>>> iterations;
  int node_count = 0;

  bool operator==(const ColorHistogram& o) const {
    return node_count == o.node_count && iterations == o.iterations;
  }

  std::string to_csv() const {
    std::ostringstream out;
    out << "iteration,color,count\n";
    for (std::size_t t = 0; t < iterations.size(); ++t)
      for (const auto& [color, count] : iterations[t]) out << t << "," << color << "," << count << "\n";
    return out.str();
  }
};

namespace detail {

// One canonical refinement pass over possibly several graphs sharing a color
// dictionary. `graph_of[v]` marks each node's graph; edges never cross.
struct JointWl {
  std::vector<std::vector<int>> adj;
  std::vector<int> graph_of;
  std::vector<int> colors;
  int num_graphs = 0;

  void add_graph(const GenericGraph& g) {
    const int base = static_cast<int>(adj.size());
    auto lists = g.neighbor_lists();
    for (int v = 0; v < g.n; ++v) {
      std::vector<int> nb = lists[static_cast<std::size_t>(v)];
      for (int& x : nb) x += base;
      adj.push_back(std::move(nb));
      graph_of.push_back(num_graphs);
      colors.push_back(g.labels[static_cast<std::size_t>(v)]);
    }
    ++num_graphs;
  }

  // canonical dense ids for the current colors (iteration 0)
  void canonicalize_initial() {
    std::vector<int> distinct = colors;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    for (int& c : colors)
      c = static_cast<int>(std::lower_bound(distinct.begin(), distinct.end(), c) - distinct.begin());
  }

  // returns false once the partition is stable (color count unchanged)
  bool refine_once() {
    const std::size_t n = adj.size();
    std::vector<std::vector<int>> sigs(n);
    for (std::size_t v = 0; v < n; ++v) {
      std::vector<int> sig;
      sig.push_back(colors[v]);
      std::vector<int> nb_colors;
      for (int u : adj[v]) nb_colors.push_back(colors[static_cast<std::size_t>(u)]);
      std::sort(nb_colors.begin(), nb_colors.end());
      sig.insert(sig.end(), nb_colors.begin(), nb_colors.end());
      sigs[v] = std::move(sig);
    }
    std::vector<std::vector<int>> distinct = sigs;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    int old_count = count_colors();
    for (std::size_t v = 0; v < n; ++v)
      colors[v] = static_cast<int>(std::lower_bound(distinct.begin(), distinct.end(), sigs[v]) - distinct.begin());
    return static_cast<int>(distinct.size()) > old_count;
  }

  int count_colors() const {
    std::vector<int> d = colors;
    std::sort(d.begin(), d.end());
    d.erase(std::unique(d.begin(), d.end()), d.end());
    return static_cast<int>(d.size());
  }

  std::vector<std::pair<int, long>> histogram(int graph_id) const {
    std::map<int, long> h;
    for (std::size_t v = 0; v < adj.size(); ++v)
      if (graph_of[v] == graph_id) h[colors[v]]++;
    return {h.begin(), h.end()};
  }
};

}  // namespace detail

// 1-WL color refinement; stops at stabilization or after max_iters
// (default: node count) refinement passes.
inline ColorHistogram wl_refine(const GenericGraph& g, int max_iters = -1) {
  require(max_iters == -1 || max_iters >= 1, Errc::InvalidIndex, "max_iters must be >= 1");
  if (max_iters < 0) max_iters = std::max(1, g.n);
  detail::JointWl wl;
  wl.add_graph(g);
  wl.canonicalize_initial();
  ColorHistogram out;
  out.node_count = g.n;
  out.iterations.push_back(wl.histogram(0));
  for (int t = 0; t < max_iters; ++t) {
    bool refined = wl.refine_once();
    out.iterations.push_back(wl.histogram(0));
    if (!refined) break;
  }
  return out;
}

// True when 1-WL separates the graphs: node counts differ or some iteration
// of a jointly-refined run yields different color multisets.
inline bool wl_distinguish(const GenericGraph& g1, const GenericGraph& g2, int max_iters = -1) {
  if (g1.n != g2.n) return true;
  if (max_iters < 0) max_iters = std::max(1, g1.n + g2.n);
  detail::JointWl wl;
  wl.add_graph(g1);
  wl.add_graph(g2);
  wl.canonicalize_initial();
  if (wl.histogram(0) != wl.histogram(1)) return true;
  for (int t = 0; t < max_iters; ++t) {
    bool refined = wl.refine_once();
    if (wl.histogram(0) != wl.histogram(1)) return true;
    if (!refined) break;
  }
  return false;
}

// Atom-labeled generic graph for node-level WL; the label packs element,
// aromaticity and formal charge.
inline int atom_wl_label(const Atom& a) {
  return (static_cast<int>(a.element) * 2 + (a.aromatic ? 1 : 0)) * 5 + (a.formal_charge + 2);
}

inline GenericGraph node_graph(const MolecularGraph& m) {
  GenericGraph g;
  g.n = m.num_atoms();
  for (int v = 0; v < g.n; ++v) g.labels.push_back(atom_wl_label(m.atom(v)));
  for (const Bond& b : m.bonds()) g.edges.emplace_back(b.u, b.v);
  return g;
}

// Fragment graph: one node per fragment labeled with its vocabulary index,
// edges from the fragment adjacency.
inline GenericGraph build_fragment_graph(const MolecularGraph& m, const FragmentOptions& opts = {}) {
  FragmentOptions o = opts;
  o.allow_disconnected = true;
  FragmentDecomposition d = fragment(m, o);
  GenericGraph g;
  g.n = d.num_fragments();
  for (const Fragment& f : d.fragments) g.labels.push_back(vocab_index(f));
  g.edges = d.adjacency_edges();
  return g;
}

// Hierarchical test: distinguishable at the atom level or at the fragment
// level.
inline bool fragment_wl_distinguish(const MolecularGraph& m1, const MolecularGraph& m2,
                                    const FragmentOptions& opts = {}) {
  if (wl_distinguish(node_graph(m1), node_graph(m2))) return true;
  return wl_distinguish(build_fragment_graph(m1, opts), build_fragment_graph(m2, opts));
}

// Stable text key for a labeled graph: the raw label multiset (canonical
// refinement alone forgets absolute label values) plus the stabilized
// refinement histogram. Isomorphic graphs always map to the same key.
inline std::string wl_hash(const GenericGraph& g) {
  std::vector<int> labels = g.labels;
  std::sort(labels.begin(), labels.end());
  ColorHistogram h = wl_refine(g);
  std::ostringstream out;
  out << g.n << "[";
  for (int l : labels) out << l << ",";
  out << "]#";
  const auto& last = h.iterations.back();
  for (const auto& [color, count] : last) out << color << ":" << count << ";";
  return out.str();
}

}  // namespace graspn
