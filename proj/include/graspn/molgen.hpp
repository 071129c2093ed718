#pragma once

#include <algorithm>
#include <vector>

#include "graspn/molgraph.hpp"
#include "graspn/rng.hpp"

namespace graspn::molgen {

// Assembly knobs for drug-like random molecules: ring systems joined by
// short linkers plus small substituents, sizes tuned so ring sizes peak at
// 5-6 and path fragments at 2-4 nodes.
struct MoleculeParams {
  int min_ring_systems = 1;
  int max_ring_systems = 3;
  double fused_ring_prob = 0.2;
  int max_substituents_per_system = 3;
  double heteroatom_prob = 0.25;
  double charge_prob = 0.03;
  int max_atoms = 40;
};

namespace detail {

struct Builder {
  std::vector<Atom> atoms;
  std::vector<Bond> bonds;

  int add_atom(Element e, bool aromatic = false, int charge = 0) {
    atoms.push_back(Atom{e, aromatic, charge, 0, {}});
    return static_cast<int>(atoms.size()) - 1;
  }

  void add_bond(int u, int v, BondOrder o) { bonds.push_back({u, v, o}); }
};

inline int sample_ring_size(Rng& rng) {
  // favors 5- and 6-rings, 6 modal
  static const std::vector<double> w = {2, 3, 30, 45, 12, 8};  // sizes 3..8
  return 3 + rng.pick_weighted(w);
}

inline Element sample_hetero(Rng& rng, bool aromatic_ring) {
  if (aromatic_ring) {
    static const std::vector<double> w = {60, 25, 15};  // N, O, S
    const Element table[] = {Element::N, Element::O, Element::S};
    return table[rng.pick_weighted(w)];
  }
  static const std::vector<double> w = {45, 35, 15, 5};
  const Element table[] = {Element::N, Element::O, Element::S, Element::P};
  return table[rng.pick_weighted(w)];
}

// ring of `size` fresh atoms; returns their ids in cycle order
inline std::vector<int> add_ring(Builder& b, Rng& rng, int size, const MoleculeParams& p) {
  const bool aromatic = (size == 6 && rng.bernoulli(0.7)) || (size == 5 && rng.bernoulli(0.4));
  std::vector<int> ids;
  for (int i = 0; i < size; ++i) {
    Element e = Element::C;
    if (rng.bernoulli(p.heteroatom_prob * 0.6)) e = sample_hetero(rng, aromatic);
    ids.push_back(b.add_atom(e, aromatic));
  }
  const BondOrder order = aromatic ? BondOrder::Aromatic : BondOrder::Single;
  for (int i = 0; i < size; ++i) b.add_bond(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>((i + 1) % size)], order);
  return ids;
}

// second ring fused along one edge of `host`; returns the new ring's atoms
inline std::vector<int> fuse_ring(Builder& b, Rng& rng, const std::vector<int>& host, const MoleculeParams& p) {
  const int size = sample_ring_size(rng);
  const int k = static_cast<int>(host.size());
  const int edge_at = rng.range(0, k - 1);
  const int a = host[static_cast<std::size_t>(edge_at)];
  const int c = host[static_cast<std::size_t>((edge_at + 1) % k)];
  const bool aromatic = b.atoms[static_cast<std::size_t>(a)].aromatic && rng.bernoulli(0.6);
  std::vector<int> ring = {a, c};
  for (int i = 0; i < size - 2; ++i) {
    Element e = Element::C;
    if (rng.bernoulli(p.heteroatom_prob * 0.5)) e = sample_hetero(rng, aromatic);
    ring.push_back(b.add_atom(e, aromatic));
  }
  const BondOrder order = aromatic ? BondOrder::Aromatic : BondOrder::Single;
  for (std::size_t i = 1; i + 1 < ring.size(); ++i) b.add_bond(ring[i], ring[i + 1], order);
  b.add_bond(ring.back(), ring.front(), order);
  return ring;
}

}  // namespace detail

// Random connected drug-like molecule, parse/write round-trip safe.
inline MolecularGraph random_molecule(Rng& rng, const MoleculeParams& p = {}) {
  detail::Builder b;
  const int systems = rng.range(p.min_ring_systems, p.max_ring_systems);
  std::vector<std::vector<int>> system_atoms;
  for (int s = 0; s < systems; ++s) {
    if (static_cast<int>(b.atoms.size()) + 8 > p.max_atoms) break;
    std::vector<int> ring = detail::add_ring(b, rng, detail::sample_ring_size(rng), p);
    if (rng.bernoulli(p.fused_ring_prob) && static_cast<int>(b.atoms.size()) + 6 <= p.max_atoms) {
      std::vector<int> extra = detail::fuse_ring(b, rng, ring, p);
      ring.insert(ring.end(), extra.begin() + 2, extra.end());
    }
    system_atoms.push_back(ring);
  }
  if (system_atoms.empty()) system_atoms.push_back(detail::add_ring(b, rng, detail::sample_ring_size(rng), p));

  // linkers between consecutive ring systems: 0..3 interior atoms, so the
  // resulting path fragments span 2..5 nodes with 2-4 dominant
  static const std::vector<double> linker_w = {30, 35, 25, 10};
  for (std::size_t s = 1; s < system_atoms.size(); ++s) {
    const int interior = rng.pick_weighted(linker_w);
    int prev = system_atoms[s - 1][static_cast<std::size_t>(rng.range(0, static_cast<int>(system_atoms[s - 1].size()) - 1))];
    for (int i = 0; i < interior; ++i) {
      Element e = rng.bernoulli(p.heteroatom_prob * 0.5) ? detail::sample_hetero(rng, false) : Element::C;
      int mid = b.add_atom(e);
      b.add_bond(prev, mid, BondOrder::Single);
      prev = mid;
    }
    int entry = system_atoms[s][static_cast<std::size_t>(rng.range(0, static_cast<int>(system_atoms[s].size()) - 1))];
    b.add_bond(prev, entry, BondOrder::Single);
  }

  // substituents: short pendant chains, halogens, carbonyls
  for (const auto& ring : system_atoms) {
    const int subs = rng.range(0, p.max_substituents_per_system);
    for (int i = 0; i < subs; ++i) {
      if (static_cast<int>(b.atoms.size()) + 2 > p.max_atoms) break;
      const int anchor = ring[static_cast<std::size_t>(rng.range(0, static_cast<int>(ring.size()) - 1))];
      const int kind = rng.range(0, 4);
      if (kind == 0) {  // methyl-like single atom
        int a = b.add_atom(Element::C);
        b.add_bond(anchor, a, BondOrder::Single);
      } else if (kind == 1) {  // hydroxyl / amine
        int a = b.add_atom(rng.bernoulli(0.5) ? Element::O : Element::N);
        b.add_bond(anchor, a, BondOrder::Single);
      } else if (kind == 2) {  // halogen
        static const Element hal[] = {Element::F, Element::Cl, Element::Br, Element::I};
        int a = b.add_atom(hal[rng.range(0, 3)]);
        b.add_bond(anchor, a, BondOrder::Single);
      } else if (kind == 3 && !b.atoms[static_cast<std::size_t>(anchor)].aromatic) {  // carbonyl
        int a = b.add_atom(Element::O);
        b.add_bond(anchor, a, BondOrder::Double);
      } else {  // ethyl-like 2-chain
        int a = b.add_atom(Element::C);
        int c = b.add_atom(rng.bernoulli(0.3) ? Element::O : Element::C);
        b.add_bond(anchor, a, BondOrder::Single);
        b.add_bond(a, c, BondOrder::Single);
      }
    }
  }

  // rare formal charges on nitrogens
  for (Atom& a : b.atoms)
    if (a.element == Element::N && rng.bernoulli(p.charge_prob)) a.formal_charge = 1;

  return MolecularGraph::from_parts(std::move(b.atoms), std::move(b.bonds));
}

// Random connected all-carbon graph: a random spanning tree plus a few extra
// edges. Exercises fragmentation on junction-heavy topologies molecules
// rarely reach.
inline MolecularGraph random_small_graph(Rng& rng, int min_nodes = 1, int max_nodes = 14) {
  const int n = rng.range(min_nodes, max_nodes);
  std::vector<Atom> atoms(static_cast<std::size_t>(n));
  std::vector<Bond> bonds;
  std::vector<std::pair<int, int>> present;
  for (int v = 1; v < n; ++v) {
    const int u = rng.range(0, v - 1);
    bonds.push_back({u, v, BondOrder::Single});
    present.emplace_back(std::min(u, v), std::max(u, v));
  }
  const long max_extra = static_cast<long>(n) * (n - 1) / 2 - (n - 1);
  const int want_extra = static_cast<int>(std::min<long>(max_extra, rng.range(0, 4)));
  int guard = 0;
  for (int added = 0; added < want_extra && guard < 200; ++guard) {
    int u = rng.range(0, n - 1), v = rng.range(0, n - 1);
    if (u == v) continue;
    auto key = std::make_pair(std::min(u, v), std::max(u, v));
    if (std::find(present.begin(), present.end(), key) != present.end()) continue;
    present.push_back(key);
    bonds.push_back({key.first, key.second, BondOrder::Single});
    ++added;
  }
  return MolecularGraph::from_parts(std::move(atoms), std::move(bonds));
}

}  // namespace graspn::molgen
