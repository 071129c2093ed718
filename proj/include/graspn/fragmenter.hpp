#pragma once

#include <algorithm>
#include <deque>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "graspn/error.hpp"
#include "graspn/molgraph.hpp"

namespace graspn {

enum class FragmentType { Ring, Path, Articulation };

struct FragmentKind {
  FragmentType type;
  int size;  // ring size / path node count / 1
};

struct Fragment {
  FragmentType type = FragmentType::Path;
  // Ring: nodes in cycle order (closing edge last->first); Path: walk order;
  // Articulation: a single node.
  std::vector<int> nodes;

  int size() const { return static_cast<int>(nodes.size()); }
  FragmentKind kind() const { return {type, size()}; }
};

enum class AdjacencyMode { Literal, ArticulationRouted };

struct FragmentOptions {
  AdjacencyMode mode = AdjacencyMode::ArticulationRouted;
  // a connector shared by at least this many fragments becomes an
  // articulation fragment
  int articulation_threshold = 3;
  bool use_articulation = true;
  bool allow_disconnected = false;
};

struct FragmentDecomposition {
  std::vector<Fragment> fragments;
  std::vector<std::vector<bool>> frag_adjacency;  // m x m, zero diagonal
  std::vector<std::vector<bool>> incidence;       // n x m
  std::set<int> connectors;                       // nodes in more than one fragment
  std::vector<int> owner;                         // node -> owning fragment index

  int num_fragments() const { return static_cast<int>(fragments.size()); }

  std::vector<std::pair<int, int>> adjacency_edges() const {
    std::vector<std::pair<int, int>> out;
    const int m = num_fragments();
    for (int i = 0; i < m; ++i)
      for (int j = i + 1; j < m; ++j)
        if (frag_adjacency[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) out.emplace_back(i, j);
    return out;
  }

  SegmentPairs incidence_pairs() const {
    SegmentPairs pairs;
    for (std::size_t v = 0; v < incidence.size(); ++v)
      for (std::size_t p = 0; p < incidence[v].size(); ++p)
        if (incidence[v][p]) pairs.emplace_back(static_cast<long>(v), static_cast<long>(p));
    return pairs;
  }
};

namespace detail {

inline std::pair<int, int> edge_key(int u, int v) { return u < v ? std::make_pair(u, v) : std::make_pair(v, u); }

// Lexicographically-first shortest path from src to dst avoiding the edge
// (src, dst); empty when dst is unreachable (the edge is a bridge).
inline std::vector<int> shortest_detour(const MolecularGraph& g, int src, int dst) {
  const int n = g.num_atoms();
  std::vector<int> dist(static_cast<std::size_t>(n), -1);
  std::deque<int> queue;
  dist[static_cast<std::size_t>(dst)] = 0;
  queue.push_back(dst);
  while (!queue.empty()) {
    int u = queue.front();
    queue.pop_front();
    for (int v : g.neighbors(u)) {
      if ((u == dst && v == src) || (u == src && v == dst)) continue;
      if (dist[static_cast<std::size_t>(v)] < 0) {
        dist[static_cast<std::size_t>(v)] = dist[static_cast<std::size_t>(u)] + 1;
        queue.push_back(v);
      }
    }
  }
  if (dist[static_cast<std::size_t>(src)] < 0) return {};
  std::vector<int> path = {src};
  int cur = src;
  while (cur != dst) {
    const int want = dist[static_cast<std::size_t>(cur)] - 1;
    int next = -1;
    for (int v : g.neighbors(cur)) {
      if ((cur == src && v == dst && want != 0) || (cur == src && v == dst && path.size() == 1)) continue;
      if (dist[static_cast<std::size_t>(v)] == want) {
        next = v;
        break;
      }
    }
    path.push_back(next);
    cur = next;
  }
  return path;
}

// cycle edges as sorted keys, from the cycle node order
inline std::vector<std::pair<int, int>> cycle_edges(const std::vector<int>& cycle) {
  std::vector<std::pair<int, int>> out;
  for (std::size_t i = 0; i < cycle.size(); ++i)
    out.push_back(edge_key(cycle[i], cycle[(i + 1) % cycle.size()]));
  std::sort(out.begin(), out.end());
  return out;
}

// rotate/reflect a cycle so it starts at its smallest node and proceeds
// toward the smaller of that node's two cycle neighbors
inline std::vector<int> canonical_cycle(std::vector<int> cycle) {
  const std::size_t k = cycle.size();
  std::size_t start = 0;
  for (std::size_t i = 1; i < k; ++i)
    if (cycle[i] < cycle[start]) start = i;
  std::vector<int> fwd(k), bwd(k);
  for (std::size_t i = 0; i < k; ++i) {
    fwd[i] = cycle[(start + i) % k];
    bwd[i] = cycle[(start + k - i) % k];
  }
  return fwd <= bwd ? fwd : bwd;
}

inline int count_components(const MolecularGraph& g) {
  const int n = g.num_atoms();
  std::vector<bool> seen(static_cast<std::size_t>(n), false);
  int comps = 0;
  for (int s = 0; s < n; ++s) {
    if (seen[static_cast<std::size_t>(s)]) continue;
    ++comps;
    std::vector<int> stack = {s};
    seen[static_cast<std::size_t>(s)] = true;
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      for (int v : g.neighbors(u))
        if (!seen[static_cast<std::size_t>(v)]) {
          seen[static_cast<std::size_t>(v)] = true;
          stack.push_back(v);
        }
    }
  }
  return comps;
}

}  // namespace detail

// Shortest-cycle-basis ring set: one candidate per non-bridge edge (the
// shortest cycle through it), candidates sorted by (length, node sequence)
// and kept while independent over GF(2) edge vectors. Fundamental cycles of
// a spanning tree back-fill the rare case where the candidates do not span.
inline std::vector<Fragment> find_minimal_rings(const MolecularGraph& g) {
  const int n = g.num_atoms();
  if (n == 0) return {};
  const int dim = g.num_bonds() - n + detail::count_components(g);
  if (dim <= 0) return {};

  std::map<std::pair<int, int>, int> edge_index;
  for (const Bond& b : g.bonds()) {
    auto key = detail::edge_key(b.u, b.v);
    if (!edge_index.count(key)) edge_index[key] = static_cast<int>(edge_index.size());
  }

  std::vector<std::vector<int>> candidates;
  std::set<std::vector<std::pair<int, int>>> seen_edge_sets;
  auto add_candidate = [&](std::vector<int> cycle) {
    cycle = detail::canonical_cycle(std::move(cycle));
    if (seen_edge_sets.insert(detail::cycle_edges(cycle)).second) candidates.push_back(std::move(cycle));
  };

  std::vector<std::pair<int, int>> sorted_edges;
  for (const auto& [key, idx] : edge_index) sorted_edges.push_back(key);
  for (auto [u, v] : sorted_edges) {
    std::vector<int> path = detail::shortest_detour(g, u, v);
    if (!path.empty()) add_candidate(std::move(path));
  }
  // spanning-tree fundamental cycles as a completeness fallback
  {
    std::vector<int> parent(static_cast<std::size_t>(n), -2);
    for (int s = 0; s < n; ++s) {
      if (parent[static_cast<std::size_t>(s)] != -2) continue;
      parent[static_cast<std::size_t>(s)] = -1;
      std::vector<int> stack = {s};
      while (!stack.empty()) {
        int u = stack.back();
        stack.pop_back();
        for (int v : g.neighbors(u))
          if (parent[static_cast<std::size_t>(v)] == -2) {
            parent[static_cast<std::size_t>(v)] = u;
            stack.push_back(v);
          }
      }
    }
    auto tree_path_to_root = [&](int x) {
      std::vector<int> up;
      for (; x >= 0; x = parent[static_cast<std::size_t>(x)]) up.push_back(x);
      return up;
    };
    for (auto [u, v] : sorted_edges) {
      if (parent[static_cast<std::size_t>(u)] == v || parent[static_cast<std::size_t>(v)] == u) continue;
      std::vector<int> pu = tree_path_to_root(u), pv = tree_path_to_root(v);
      std::set<int> on_pu(pu.begin(), pu.end());
      int meet = -1;
      for (int x : pv)
        if (on_pu.count(x)) {
          meet = x;
          break;
        }
      if (meet < 0) continue;  // different components: the edge is in neither tree; skip
      std::vector<int> cycle;
      for (int x : pu) {
        cycle.push_back(x);
        if (x == meet) break;
      }
      std::vector<int> down;
      for (int x : pv) {
        if (x == meet) break;
        down.push_back(x);
      }
      for (auto it = down.rbegin(); it != down.rend(); ++it) cycle.push_back(*it);
      add_candidate(std::move(cycle));
    }
  }

  std::stable_sort(candidates.begin(), candidates.end(), [](const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) return a.size() < b.size();
    std::vector<int> sa = a, sb = b;
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    if (sa != sb) return sa < sb;
    return a < b;
  });

  // greedy GF(2) independence over edge-incidence vectors
  const std::size_t bits = edge_index.size();
  std::vector<std::vector<std::uint64_t>> basis;  // row-reduced
  std::vector<Fragment> rings;
  auto to_bits = [&](const std::vector<int>& cycle) {
    std::vector<std::uint64_t> vec((bits + 63) / 64, 0);
    for (std::size_t i = 0; i < cycle.size(); ++i) {
      int e = edge_index.at(detail::edge_key(cycle[i], cycle[(i + 1) % cycle.size()]));
      vec[static_cast<std::size_t>(e) / 64] ^= 1ULL << (static_cast<std::size_t>(e) % 64);
    }
    return vec;
  };
  for (const auto& cycle : candidates) {
    if (static_cast<int>(rings.size()) == dim) break;
    std::vector<std::uint64_t> vec = to_bits(cycle);
    for (const auto& row : basis) {
      // reduce by the row's leading bit
      int lead = -1;
      for (std::size_t w = 0; w < row.size() && lead < 0; ++w)
        if (row[w]) lead = static_cast<int>(w * 64 + static_cast<std::size_t>(__builtin_ctzll(row[w])));
      if (lead >= 0 && (vec[static_cast<std::size_t>(lead) / 64] >> (static_cast<std::size_t>(lead) % 64)) & 1ULL)
        for (std::size_t w = 0; w < vec.size(); ++w) vec[w] ^= row[w];
    }
    bool zero = true;
    for (std::uint64_t w : vec) zero = zero && w == 0;
    if (zero) continue;
    basis.push_back(vec);
    rings.push_back(Fragment{FragmentType::Ring, cycle});
  }
  return rings;
}

// Maximal chains over the residual (non-ring) edges. Interior nodes have
// residual degree exactly 2 and lie in no ring; ring members and nodes of
// other residual degree only terminate chains. Nodes untouched by both rings
// and residual edges become single-node paths.
inline std::vector<Fragment> extract_paths(const MolecularGraph& g, const std::vector<Fragment>& rings) {
  const int n = g.num_atoms();
  std::set<std::pair<int, int>> ring_edge_set;
  std::vector<bool> in_ring(static_cast<std::size_t>(n), false);
  for (const Fragment& r : rings) {
    for (int v : r.nodes) in_ring[static_cast<std::size_t>(v)] = true;
    for (auto e : detail::cycle_edges(r.nodes)) ring_edge_set.insert(e);
  }

  std::vector<std::vector<int>> residual(static_cast<std::size_t>(n));
  for (const Bond& b : g.bonds())
    if (!ring_edge_set.count(detail::edge_key(b.u, b.v))) {
      residual[static_cast<std::size_t>(b.u)].push_back(b.v);
      residual[static_cast<std::size_t>(b.v)].push_back(b.u);
    }
  for (auto& nb : residual) std::sort(nb.begin(), nb.end());

  auto is_endpoint = [&](int v) {
    return in_ring[static_cast<std::size_t>(v)] || residual[static_cast<std::size_t>(v)].size() != 2;
  };

  std::vector<Fragment> paths;
  std::set<std::pair<int, int>> used;
  for (int start = 0; start < n; ++start) {
    if (!is_endpoint(start)) continue;
    for (int first : residual[static_cast<std::size_t>(start)]) {
      if (used.count(detail::edge_key(start, first))) continue;
      std::vector<int> walk = {start, first};
      used.insert(detail::edge_key(start, first));
      int prev = start, cur = first;
      while (!is_endpoint(cur)) {
        const auto& nb = residual[static_cast<std::size_t>(cur)];
        int next = nb[0] == prev ? nb[1] : nb[0];
        used.insert(detail::edge_key(cur, next));
        walk.push_back(next);
        prev = cur;
        cur = next;
      }
      if (walk.back() < walk.front()) std::reverse(walk.begin(), walk.end());
      paths.push_back(Fragment{FragmentType::Path, std::move(walk)});
    }
  }
  for (int v = 0; v < n; ++v)
    if (!in_ring[static_cast<std::size_t>(v)] && residual[static_cast<std::size_t>(v)].empty())
      paths.push_back(Fragment{FragmentType::Path, {v}});

  std::stable_sort(paths.begin(), paths.end(), [](const Fragment& a, const Fragment& b) { return a.nodes < b.nodes; });
  return paths;
}

// Singleton fragments for junction connectors (shared by >= threshold
// fragments) and for any node the earlier stages left uncovered.
inline std::vector<Fragment> extract_articulation(const MolecularGraph& g, const std::vector<Fragment>& so_far,
                                                  int threshold = 3, bool enabled = true) {
  const int n = g.num_atoms();
  std::vector<int> containing(static_cast<std::size_t>(n), 0);
  for (const Fragment& f : so_far)
    for (int v : f.nodes) containing[static_cast<std::size_t>(v)]++;
  std::vector<Fragment> out;
  for (int v = 0; v < n; ++v) {
    const int c = containing[static_cast<std::size_t>(v)];
    if (c == 0 || (enabled && c >= threshold)) out.push_back(Fragment{FragmentType::Articulation, {v}});
  }
  return out;
}

inline FragmentDecomposition fragment(const MolecularGraph& g, const FragmentOptions& opts = {}) {
  require(g.num_atoms() > 0, Errc::EmptyGraph, "cannot fragment an empty graph");
  if (!opts.allow_disconnected)
    require(g.is_connected(), Errc::DisconnectedInput, "fragment() needs a connected graph");

  FragmentDecomposition d;
  d.fragments = find_minimal_rings(g);
  std::vector<Fragment> paths = extract_paths(g, d.fragments);
  d.fragments.insert(d.fragments.end(), paths.begin(), paths.end());
  std::vector<Fragment> arts =
      extract_articulation(g, d.fragments, opts.articulation_threshold, opts.use_articulation);
  d.fragments.insert(d.fragments.end(), arts.begin(), arts.end());

  const int n = g.num_atoms();
  const int m = d.num_fragments();
  d.incidence.assign(static_cast<std::size_t>(n), std::vector<bool>(static_cast<std::size_t>(m), false));
  for (int p = 0; p < m; ++p)
    for (int v : d.fragments[static_cast<std::size_t>(p)].nodes)
      d.incidence[static_cast<std::size_t>(v)][static_cast<std::size_t>(p)] = true;

  std::vector<int> containing_count(static_cast<std::size_t>(n), 0);
  std::vector<int> articulation_at(static_cast<std::size_t>(n), -1);
  for (int p = 0; p < m; ++p) {
    const Fragment& f = d.fragments[static_cast<std::size_t>(p)];
    for (int v : f.nodes) containing_count[static_cast<std::size_t>(v)]++;
    if (f.type == FragmentType::Articulation) articulation_at[static_cast<std::size_t>(f.nodes[0])] = p;
  }
  for (int v = 0; v < n; ++v)
    if (containing_count[static_cast<std::size_t>(v)] > 1) d.connectors.insert(v);

  d.owner.assign(static_cast<std::size_t>(n), -1);
  for (int v = 0; v < n; ++v) {
    if (articulation_at[static_cast<std::size_t>(v)] >= 0) {
      d.owner[static_cast<std::size_t>(v)] = articulation_at[static_cast<std::size_t>(v)];
      continue;
    }
    for (int p = 0; p < m; ++p)
      if (d.incidence[static_cast<std::size_t>(v)][static_cast<std::size_t>(p)]) {
        d.owner[static_cast<std::size_t>(v)] = p;
        break;
      }
  }

  d.frag_adjacency.assign(static_cast<std::size_t>(m), std::vector<bool>(static_cast<std::size_t>(m), false));
  for (int i = 0; i < m; ++i) {
    for (int j = i + 1; j < m; ++j) {
      std::vector<int> shared;
      const Fragment& fi = d.fragments[static_cast<std::size_t>(i)];
      const Fragment& fj = d.fragments[static_cast<std::size_t>(j)];
      for (int v : fi.nodes)
        if (d.incidence[static_cast<std::size_t>(v)][static_cast<std::size_t>(j)]) shared.push_back(v);
      if (shared.empty()) continue;
      bool adjacent = true;
      if (opts.mode == AdjacencyMode::ArticulationRouted && fi.type != FragmentType::Articulation &&
          fj.type != FragmentType::Articulation) {
        // fragments meeting only at articulation nodes route through them
        bool all_articulation = true;
        for (int v : shared) all_articulation = all_articulation && articulation_at[static_cast<std::size_t>(v)] >= 0;
        adjacent = !all_articulation;
      }
      if (adjacent) {
        d.frag_adjacency[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = true;
        d.frag_adjacency[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = true;
      }
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// fragment-type vocabulary: ring sizes 3..8 + overflow, path lengths 1..8 +
// overflow, articulation; 17 entries total

constexpr int kVocabSize = 17;

inline int vocab_index(const Fragment& f) {
  switch (f.type) {
    case FragmentType::Ring: return f.size() <= 8 ? f.size() - 3 : 6;
    case FragmentType::Path: return f.size() <= 8 ? 7 + (f.size() - 1) : 15;
    case FragmentType::Articulation: return 16;
  }
  return -1;
}

inline std::string vocab_entry_name(int idx) {
  if (idx >= 0 && idx <= 5) return "ring" + std::to_string(idx + 3);
  if (idx == 6) return "ring_big";
  if (idx >= 7 && idx <= 14) return "path" + std::to_string(idx - 6);
  if (idx == 15) return "path_big";
  if (idx == 16) return "articulation";
  fail(Errc::InvalidIndex, "vocab index " + std::to_string(idx));
}

inline std::vector<double> vocab_onehot(const Fragment& f) {
  std::vector<double> v(kVocabSize, 0.0);
  v[static_cast<std::size_t>(vocab_index(f))] = 1.0;
  return v;
}

// ---------------------------------------------------------------------------
// corpus statistics

struct StatsReport {
  std::map<int, long> fragment_size;
  std::map<int, long> ring_size;
  std::map<int, long> path_length;
  std::map<int, long> rings_per_graph;
  std::map<int, long> paths_per_graph;
  std::map<int, long> articulations_per_graph;

  static int modal(const std::map<int, long>& hist) {
    int best = -1;
    long best_count = -1;
    for (const auto& [bucket, count] : hist)
      if (count > best_count) {
        best = bucket;
        best_count = count;
      }
    return best;
  }

  int modal_ring_size() const { return modal(ring_size); }
  int modal_path_length() const { return modal(path_length); }

  std::string to_csv() const {
    std::ostringstream out;
    out << "statistic,bucket,count\n";
    auto dump = [&](const char* name, const std::map<int, long>& hist) {
      for (const auto& [bucket, count] : hist) out << name << "," << bucket << "," << count << "\n";
    };
    dump("fragment_size", fragment_size);
    dump("ring_size", ring_size);
    dump("path_length", path_length);
    dump("rings_per_graph", rings_per_graph);
    dump("paths_per_graph", paths_per_graph);
    dump("articulations_per_graph", articulations_per_graph);
    return out.str();
  }
};

inline StatsReport decomposition_stats(const std::vector<FragmentDecomposition>& decomps) {
  StatsReport r;
  for (const auto& d : decomps) {
    int rings = 0, paths = 0, arts = 0;
    for (const Fragment& f : d.fragments) {
      r.fragment_size[f.size()]++;
      switch (f.type) {
        case FragmentType::Ring:
          r.ring_size[f.size()]++;
          ++rings;
          break;
        case FragmentType::Path:
          r.path_length[f.size()]++;
          ++paths;
          break;
        case FragmentType::Articulation: ++arts; break;
      }
    }
    r.rings_per_graph[rings]++;
    r.paths_per_graph[paths]++;
    r.articulations_per_graph[arts]++;
  }
  return r;
}

}  // namespace graspn
