// Regenerates the bundled datasets under data/. Deterministic: fixed seeds,
// conditions verified at generation time.

#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "graspn/fragmenter.hpp"
#include "graspn/molgen.hpp"
#include "graspn/molgraph.hpp"
#include "graspn/rng.hpp"

using namespace graspn;

namespace {

int ring6_count(const MolecularGraph& g) {
  int count = 0;
  for (const Fragment& f : fragment(g).fragments)
    if (f.type == FragmentType::Ring && f.size() == 6) ++count;
  return count;
}

bool contains_nitrogen(const MolecularGraph& g) {
  for (const Atom& a : g.atoms())
    if (a.element == Element::N) return true;
  return false;
}

MolecularGraph reparse_checked(const MolecularGraph& g) {
  // everything we ship must round-trip through our own writer and parser
  return parse_smiles(write_smiles(g));
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::trunc);
  if (!out.good()) {
    std::cerr << "cannot write " << path << "\n";
    std::exit(2);
  }
  for (const std::string& l : lines) out << l << "\n";
  std::cout << path << ": " << lines.size() << " lines\n";
}

std::vector<std::string> druglike_sample(int count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::string> lines;
  while (static_cast<int>(lines.size()) < count) {
    MolecularGraph g = molgen::random_molecule(rng);
    std::string smiles = write_smiles(g);
    reparse_checked(g);
    lines.push_back(smiles);
  }
  return lines;
}

std::vector<std::string> toy_sample(int count, std::uint64_t seed) {
  Rng rng(seed);
  molgen::MoleculeParams mp;
  mp.max_ring_systems = 1;
  mp.fused_ring_prob = 0.0;
  mp.max_substituents_per_system = 2;
  mp.max_atoms = 12;
  std::vector<std::string> lines;
  while (static_cast<int>(lines.size()) < count) {
    MolecularGraph g = molgen::random_molecule(rng, mp);
    reparse_checked(g);
    lines.push_back(write_smiles(g));
  }
  return lines;
}

// 50/50 set: exactly one six-ring vs none at all
std::vector<std::string> probe_ring6_sample(int per_class, std::uint64_t seed) {
  Rng rng(seed);
  molgen::MoleculeParams mp;
  mp.max_ring_systems = 2;
  mp.fused_ring_prob = 0.0;
  mp.max_substituents_per_system = 2;
  mp.max_atoms = 18;
  std::vector<std::string> pos, neg;
  while (static_cast<int>(pos.size()) < per_class || static_cast<int>(neg.size()) < per_class) {
    MolecularGraph g = molgen::random_molecule(rng, mp);
    reparse_checked(g);
    const int sixes = ring6_count(g);
    if (sixes == 1 && static_cast<int>(pos.size()) < per_class) pos.push_back(write_smiles(g));
    else if (sixes == 0 && static_cast<int>(neg.size()) < per_class) neg.push_back(write_smiles(g));
  }
  std::vector<std::string> lines;
  for (int i = 0; i < per_class; ++i) {
    lines.push_back(pos[static_cast<std::size_t>(i)]);
    lines.push_back(neg[static_cast<std::size_t>(i)]);
  }
  return lines;
}

// separable binary task: label 1 when the molecule contains nitrogen
std::vector<std::string> classify_sample(int per_class, std::uint64_t seed) {
  Rng rng(seed);
  molgen::MoleculeParams mp;
  mp.max_ring_systems = 1;
  mp.fused_ring_prob = 0.0;
  mp.max_substituents_per_system = 2;
  mp.max_atoms = 14;
  std::vector<std::string> pos, neg;
  while (static_cast<int>(pos.size()) < per_class || static_cast<int>(neg.size()) < per_class) {
    MolecularGraph g = molgen::random_molecule(rng, mp);
    reparse_checked(g);
    if (contains_nitrogen(g) && static_cast<int>(pos.size()) < per_class)
      pos.push_back(write_smiles(g) + "\t1");
    else if (!contains_nitrogen(g) && static_cast<int>(neg.size()) < per_class)
      neg.push_back(write_smiles(g) + "\t0");
  }
  std::vector<std::string> lines;
  for (int i = 0; i < per_class; ++i) {
    lines.push_back(pos[static_cast<std::size_t>(i)]);
    lines.push_back(neg[static_cast<std::size_t>(i)]);
  }
  return lines;
}

}  // namespace

int main(int argc, char** argv) {
  std::string dir = argc > 1 ? argv[1] : "data";

  std::vector<std::string> druglike = druglike_sample(1000, 20240601);
  {
    // the shipped sample must show the expected fragment-size peaks
    std::vector<FragmentDecomposition> decomps;
    for (const std::string& s : druglike) decomps.push_back(fragment(parse_smiles(s)));
    StatsReport stats = decomposition_stats(decomps);
    const int ring_mode = stats.modal_ring_size();
    const int path_mode = stats.modal_path_length();
    std::cout << "druglike sample: modal ring " << ring_mode << ", modal path " << path_mode << "\n";
    if (ring_mode != 5 && ring_mode != 6) {
      std::cerr << "modal ring size outside {5,6}\n";
      return 1;
    }
    if (path_mode < 2 || path_mode > 4) {
      std::cerr << "modal path length outside {2,3,4}\n";
      return 1;
    }
  }
  write_lines(dir + "/druglike_1k.smi", druglike);
  write_lines(dir + "/toy64.smi", toy_sample(64, 771));
  write_lines(dir + "/probe_ring6_200.smi", probe_ring6_sample(100, 4242));
  write_lines(dir + "/toy_classify.smi", classify_sample(30, 515));
  return 0;
}
