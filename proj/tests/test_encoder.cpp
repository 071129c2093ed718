#include <cmath>
#include <functional>

#include "doctest.h"
#include "graspn/encoder.hpp"
#include "graspn/fragmenter.hpp"
#include "graspn/molgen.hpp"
#include "graspn/molgraph.hpp"

using namespace graspn;

namespace {

EncoderConfig small_config() {
  EncoderConfig cfg;
  cfg.node_layers = 3;
  cfg.hidden = 12;
  cfg.fragment_layer_positions = {2};
  cfg.frag_gnn_layers = 1;
  return cfg;
}

GraphBatch batch_of(const MolecularGraph& g, const FragmentDecomposition& d) { return make_batch({{&g, &d}}); }

MolecularGraph permuted_molecule(const MolecularGraph& g, const std::vector<int>& perm) {
  std::vector<Atom> atoms(g.num_atoms());
  for (int v = 0; v < g.num_atoms(); ++v) atoms[perm[v]] = g.atom(v);
  std::vector<Bond> bonds;
  for (const Bond& b : g.bonds()) bonds.push_back({perm[b.u], perm[b.v], b.order});
  return MolecularGraph::from_parts(std::move(atoms), std::move(bonds));
}

}  // namespace

TEST_CASE("config validation") {
  EncoderConfig cfg = small_config();
  cfg.fragment_layer_positions = {5};
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = small_config();
  cfg.hidden = 13;
  CHECK_THROWS_AS(cfg.validate(), Error);
  CHECK_NOTHROW(small_config().validate());
}

TEST_CASE("fragment encoding with identity-like weights") {
  // d/2 = 17 so the encoding maps types through unchanged
  EncoderConfig cfg;
  cfg.node_layers = 1;
  cfg.hidden = 34;
  cfg.fragment_layer_positions = {};
  ParameterStore store;
  Rng rng(1);
  EncoderParams p = EncoderParams::create(store, "enc.", cfg, 1, false, rng);
  p.frag_w1->value = Tensor::identity(17);
  p.frag_w2->value = Tensor::identity(17);

  MolecularGraph bz = parse_smiles("c1ccccc1");
  FragmentDecomposition d = fragment(bz);
  Tape t;
  GraphBatch b = batch_of(bz, d);
  const Tensor& hf = t.value(encode_fragments(t, b, p));
  REQUIRE(hf.rows() == 1);
  REQUIRE(hf.cols() == 34);
  const int slot = vocab_index(d.fragments[0]);
  for (long c = 0; c < 17; ++c) {
    CHECK(hf.at(0, c) == (c == slot ? 1.0 : 0.0));
    CHECK(hf.at(0, 17 + c) == (c == slot ? 6.0 : 0.0));  // scaled by ring size
  }
}

TEST_CASE("fragments of the same kind and size share one encoding row") {
  EncoderConfig cfg = small_config();
  ParameterStore store;
  Rng rng(2);
  EncoderParams p = EncoderParams::create(store, "enc.", cfg, cfg.node_layers, false, rng);
  MolecularGraph naph = parse_smiles("c1ccc2ccccc2c1");
  FragmentDecomposition d = fragment(naph);
  REQUIRE(d.num_fragments() == 2);
  Tape t;
  GraphBatch b = batch_of(naph, d);
  const Tensor& hf = t.value(encode_fragments(t, b, p));
  for (long c = 0; c < hf.cols(); ++c) CHECK(hf.at(0, c) == hf.at(1, c));

  // different path lengths live in different vocabulary slots, so rows differ
  MolecularGraph chain = parse_smiles("CCC");    // Path(3)
  MolecularGraph pair_m = parse_smiles("CC");    // Path(2)
  FragmentDecomposition d3 = fragment(chain), d2 = fragment(pair_m);
  GraphBatch b2 = make_batch({{&chain, &d3}, {&pair_m, &d2}});
  Tape t2;
  const Tensor& hf2 = t2.value(encode_fragments(t2, b2, p));
  bool any_diff = false;
  for (long c = 0; c < hf2.cols(); ++c) any_diff = any_diff || hf2.at(0, c) != hf2.at(1, c);
  CHECK(any_diff);
}

TEST_CASE("embed_nodes is affine") {
  EncoderConfig cfg = small_config();
  ParameterStore store;
  Rng rng(3);
  EncoderParams p = EncoderParams::create(store, "enc.", cfg, cfg.node_layers, false, rng);
  MolecularGraph g = parse_smiles("CCO");
  FragmentDecomposition d = fragment(g);
  GraphBatch b = batch_of(g, d);

  Tape t;
  const Tensor h1 = t.value(embed_nodes(t, b, p));
  CHECK(h1.rows() == 3);
  CHECK(h1.cols() == cfg.hidden);

  // zero input -> every row equals the bias
  GraphBatch zb = b;
  zb.features.fill(0.0);
  Tape tz;
  const Tensor hz = tz.value(embed_nodes(tz, zb, p));
  for (long r = 0; r < hz.rows(); ++r)
    for (long c = 0; c < hz.cols(); ++c) CHECK(hz.at(r, c) == p.embed.b->value[c]);

  // linearity: embed(2x) - embed(x) = embed(x) - embed(0)
  GraphBatch b2 = b;
  for (long i = 0; i < b2.features.size(); ++i) b2.features[i] *= 2.0;
  Tape t2;
  const Tensor h2 = t2.value(embed_nodes(t2, b2, p));
  for (long i = 0; i < h1.size(); ++i) CHECK(h2[i] - h1[i] == doctest::Approx(h1[i] - hz[i]).epsilon(1e-12));
}

TEST_CASE("isolated node aggregates only itself") {
  EncoderConfig cfg = small_config();
  ParameterStore store;
  Rng rng(4);
  EncoderParams p = EncoderParams::create(store, "enc.", cfg, cfg.node_layers, false, rng);
  MolecularGraph g = parse_smiles("C");
  FragmentDecomposition d = fragment(g);
  GraphBatch b = batch_of(g, d);
  Tape t;
  Tape::Id h = embed_nodes(t, b, p);
  // neighbor_sum over an empty edge list is zero, so (1+eps)h is the whole
  // aggregation input
  Tape::Id agg = t.add(t.scale(h, 1.0 + cfg.gin_epsilon), t.neighbor_sum(h, b.edges));
  const Tensor& ha = t.value(agg);
  const Tensor& h0 = t.value(h);
  for (long i = 0; i < ha.size(); ++i) CHECK(ha[i] == doctest::Approx(h0[i]));
}

TEST_CASE("forward shapes under defaults") {
  EncoderConfig cfg;  // 5 layers, d = 300, positions {2, 3}
  ParameterStore store;
  Rng rng(5);
  EncoderParams p = EncoderParams::create(store, "enc.", cfg, cfg.node_layers, true, rng);
  MolecularGraph bz = parse_smiles("c1ccccc1");
  FragmentDecomposition d = fragment(bz);
  GraphBatch b = batch_of(bz, d);
  Tape t;
  EncoderTapeOutput out = encoder_forward(t, p, b, nullptr, true);
  CHECK(t.value(out.z_nodes).rows() == 6);
  CHECK(t.value(out.z_nodes).cols() == 300);
  CHECK(t.value(out.z_frags).rows() == 1);
  CHECK(t.value(out.z_frags).cols() == 300);
  CHECK(t.value(out.h_graphs).rows() == 1);
  CHECK(t.value(out.h_graphs).cols() == 300);
  CHECK(t.value(out.z_nodes).all_finite());

  // readout equals the row mean of node embeddings
  Tensor manual = readout(t.value(out.z_nodes));
  for (long c = 0; c < 300; ++c) CHECK(manual[c] == doctest::Approx(t.value(out.h_graphs).at(0, c)).epsilon(1e-12));
}

TEST_CASE("readout basics") {
  Tensor z = Tensor::matrix(2, 3);
  for (long c = 0; c < 3; ++c) {
    z.at(0, c) = 1.0 + static_cast<double>(c);
    z.at(1, c) = -z.at(0, c);
  }
  Tensor h = readout(z);
  for (long c = 0; c < 3; ++c) CHECK(h[c] == 0.0);
  Tensor single = Tensor::matrix(1, 3);
  single.at(0, 1) = 4.0;
  CHECK(readout(single)[1] == 4.0);
  CHECK_THROWS_AS(readout(Tensor::matrix(0, 3)), Error);
}

TEST_CASE("permutation equivariance and readout invariance") {
  EncoderConfig cfg = small_config();
  MolecularGraph g = parse_smiles("Cc1ccc(O)cc1CN");
  Rng rng(6);
  // same parameter values regardless of permutation: one store
  ParameterStore store;
  EncoderParams p = EncoderParams::create(store, "enc.", cfg, cfg.node_layers, false, rng);

  FragmentDecomposition d = fragment(g);
  Tape t;
  GraphBatch b = batch_of(g, d);
  EncoderTapeOutput base = encoder_forward(t, p, b, nullptr, true);
  const Tensor zn = t.value(base.z_nodes);
  const Tensor hg = t.value(base.h_graphs);

  Rng perm_rng(1000);
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<int> perm(g.num_atoms());
    for (int i = 0; i < g.num_atoms(); ++i) perm[i] = i;
    perm_rng.shuffle(perm);
    MolecularGraph pg = permuted_molecule(g, perm);
    FragmentDecomposition pd = fragment(pg);
    Tape pt;
    GraphBatch pb = batch_of(pg, pd);
    EncoderTapeOutput out = encoder_forward(pt, p, pb, nullptr, true);
    const Tensor& pzn = pt.value(out.z_nodes);
    for (int v = 0; v < g.num_atoms(); ++v)
      for (long c = 0; c < cfg.hidden; ++c)
        CHECK(pzn.at(perm[v], c) == doctest::Approx(zn.at(v, c)).epsilon(1e-9));
    const Tensor& phg = pt.value(out.h_graphs);
    for (long c = 0; c < cfg.hidden; ++c) CHECK(phg.at(0, c) == doctest::Approx(hg.at(0, c)).epsilon(1e-9));
  }
}

TEST_CASE("use_fragments=false is bit-identical to a plain GIN stack") {
  EncoderConfig cfg = small_config();
  cfg.use_fragments = false;
  ParameterStore store;
  Rng rng(7);
  EncoderParams p = EncoderParams::create(store, "enc.", cfg, cfg.node_layers, true, rng);
  MolecularGraph g = parse_smiles("Cc1ccccc1O");
  FragmentDecomposition d = fragment(g);
  GraphBatch b = batch_of(g, d);

  Tape t;
  EncoderTapeOutput out = encoder_forward(t, p, b, nullptr, true);
  CHECK(out.z_frags == -1);

  // hand-built plain stack with the same parameters; batch-norm states are
  // restored so both passes see identical running statistics
  for (BnParams* bn : p.bn_entries()) {
    bn->state.running_mean.fill(0.0);
    bn->state.running_var.fill(1.0);
  }
  Tape ref;
  Tape::Id h = embed_nodes(ref, b, p);
  for (int l = 1; l <= cfg.node_layers; ++l)
    h = node_mp_layer(ref, h, b.edges, p.node_layers[l - 1], cfg.gin_epsilon, true);
  const Tensor& want = ref.value(h);
  const Tensor& got = t.value(out.z_nodes);
  REQUIRE(want.size() == got.size());
  for (long i = 0; i < want.size(); ++i) CHECK(want[i] == got[i]);  // exact
}

TEST_CASE("mask token substitution hides the original features exactly") {
  EncoderConfig cfg = small_config();
  ParameterStore store;
  Rng rng(8);
  EncoderParams p = EncoderParams::create(store, "enc.", cfg, cfg.node_layers, true, rng);
  MolecularGraph g = parse_smiles("CCOc1ccccc1");
  FragmentDecomposition d = fragment(g);

  MaskIndices mask;
  mask.nodes = {0, 2};
  mask.fragments = {0};

  auto run = [&](const GraphBatch& b) {
    for (BnParams* bn : p.bn_entries()) {
      bn->state.running_mean.fill(0.0);
      bn->state.running_var.fill(1.0);
    }
    Tape t;
    EncoderTapeOutput out = encoder_forward(t, p, b, &mask, true);
    return std::make_pair(t.value(out.z_nodes), t.value(out.z_frags));
  };

  GraphBatch b1 = batch_of(g, d);
  auto [zn1, zf1] = run(b1);
  // scramble the true features of the masked nodes; outputs must not move
  GraphBatch b2 = b1;
  for (long c = 0; c < b2.features.cols(); ++c) {
    b2.features.at(0, c) = 17.5;
    b2.features.at(2, c) = -3.25;
  }
  for (long c = 0; c < b2.frag_onehots.cols(); ++c) b2.frag_onehots.at(0, c) = 9.0;
  auto [zn2, zf2] = run(b2);
  CHECK(zn1 == zn2);
  CHECK(zf1 == zf2);

  // an unmasked node's features still matter
  GraphBatch b3 = b1;
  b3.features.at(1, 0) += 1.0;
  auto [zn3, zf3] = run(b3);
  CHECK_FALSE(zn1 == zn3);
}

TEST_CASE("use_fragment_mp=false skips fragment-level message passing") {
  EncoderConfig with_mp = small_config();
  EncoderConfig no_mp = small_config();
  no_mp.use_fragment_mp = false;
  MolecularGraph g = parse_smiles("Cc1ccccc1");
  FragmentDecomposition d = fragment(g);
  GraphBatch b = batch_of(g, d);

  ParameterStore s1, s2;
  Rng r1(9), r2(9);
  EncoderParams p1 = EncoderParams::create(s1, "enc.", with_mp, with_mp.node_layers, false, r1);
  EncoderParams p2 = EncoderParams::create(s2, "enc.", no_mp, no_mp.node_layers, false, r2);
  Tape t1, t2;
  EncoderTapeOutput o1 = encoder_forward(t1, p1, b, nullptr, true);
  EncoderTapeOutput o2 = encoder_forward(t2, p2, b, nullptr, true);
  // same seeds, same parameters; only the fragment GIN stack differs
  CHECK_FALSE(t1.value(o1.z_frags) == t2.value(o2.z_frags));
}

TEST_CASE("every parameter receives gradient somewhere in a randomized suite") {
  EncoderConfig cfg = small_config();
  ParameterStore store;
  Rng rng(10);
  EncoderParams p = EncoderParams::create(store, "enc.", cfg, cfg.node_layers, true, rng);
  store.zero_grads();

  Rng data_rng(11);
  for (int trial = 0; trial < 6; ++trial) {
    MolecularGraph g = molgen::random_molecule(data_rng);
    FragmentDecomposition d = fragment(g);
    GraphBatch b = batch_of(g, d);
    MaskIndices mask;
    for (long v = 0; v < b.num_nodes; v += 3) mask.nodes.push_back(v);
    for (long f = 0; f < b.num_frags; f += 2) mask.fragments.push_back(f);
    Tape t;
    EncoderTapeOutput out = encoder_forward(t, p, b, &mask, true);
    Tape::Id loss = t.mse_masked(out.z_nodes, t.constant(Tensor(t.value(out.z_nodes).shape())), mask.nodes);
    Tape::Id floss =
        t.mse_masked(out.z_frags, t.constant(Tensor(t.value(out.z_frags).shape())), mask.fragments);
    t.backward(t.add(loss, floss));
  }
  for (Parameter* param : store.all()) {
    double norm = 0.0;
    for (long i = 0; i < param->grad.size(); ++i) norm += std::fabs(param->grad[i]);
    CAPTURE(param->name);
    CHECK(norm > 0.0);
  }
}
