#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "graspn/error.hpp"
#include "graspn/fragmenter.hpp"
#include "graspn/molgraph.hpp"
#include "graspn/tensor.hpp"

namespace graspn {

struct EncoderConfig {
  int node_layers = 5;  // L
  long hidden = 300;    // d
  std::set<int> fragment_layer_positions = {2, 3};
  int frag_gnn_layers = 2;
  bool use_fragments = true;
  bool use_fragment_mp = true;
  double gin_epsilon = 0.0;

  void validate() const {
    require(node_layers >= 1, Errc::ConfigMismatch, "node_layers must be >= 1");
    require(hidden >= 2 && hidden % 2 == 0, Errc::ConfigMismatch, "hidden must be even and positive");
    require(frag_gnn_layers >= 0, Errc::ConfigMismatch, "frag_gnn_layers must be >= 0");
    for (int p : fragment_layer_positions)
      require(p >= 1 && p <= node_layers, Errc::ConfigMismatch,
              "fragment layer position " + std::to_string(p) + " outside 1..L");
  }
};

// Disjoint union of molecules plus fragment bookkeeping, in encoder-ready
// form. A single molecule is a batch of one.
struct GraphBatch {
  long num_nodes = 0;
  long num_frags = 0;
  long num_graphs = 0;
  Tensor features;              // num_nodes x 24
  EdgeList edges;               // union node adjacency
  Tensor frag_onehots;          // num_frags x |Voc|
  std::vector<double> frag_sizes;
  EdgeList frag_edges;          // union fragment adjacency
  SegmentPairs node_frag_pairs;  // (node row, fragment segment)
  SegmentPairs frag_node_pairs;  // (fragment row, node segment)
  SegmentPairs node_graph_pairs; // (node row, graph segment)
  std::vector<long> node_offset; // per graph
  std::vector<long> frag_offset;
  std::vector<long> nodes_per_graph;
  std::vector<long> frags_per_graph;
};

struct BatchItem {
  const MolecularGraph* graph;
  const FragmentDecomposition* decomp;
};

inline GraphBatch make_batch(const std::vector<BatchItem>& items) {
  require(!items.empty(), Errc::EmptyDataset, "empty batch");
  GraphBatch b;
  for (const BatchItem& it : items) {
    b.node_offset.push_back(b.num_nodes);
    b.frag_offset.push_back(b.num_frags);
    b.nodes_per_graph.push_back(it.graph->num_atoms());
    b.frags_per_graph.push_back(it.decomp->num_fragments());
    b.num_nodes += it.graph->num_atoms();
    b.num_frags += it.decomp->num_fragments();
    b.num_graphs += 1;
  }
  b.features = Tensor::matrix(b.num_nodes, kFeatureDim);
  b.frag_onehots = Tensor::matrix(b.num_frags, kVocabSize);
  b.frag_sizes.assign(static_cast<std::size_t>(b.num_frags), 0.0);
  for (std::size_t g = 0; g < items.size(); ++g) {
    const MolecularGraph& mol = *items[g].graph;
    const FragmentDecomposition& dec = *items[g].decomp;
    const long no = b.node_offset[g], fo = b.frag_offset[g];
    Tensor x = featurize(mol);
    for (long r = 0; r < x.rows(); ++r)
      for (long c = 0; c < x.cols(); ++c) b.features.at(no + r, c) = x.at(r, c);
    for (const Bond& bond : mol.bonds()) b.edges.emplace_back(no + bond.u, no + bond.v);
    for (int p = 0; p < dec.num_fragments(); ++p) {
      const Fragment& f = dec.fragments[static_cast<std::size_t>(p)];
      b.frag_onehots.at(fo + p, vocab_index(f)) = 1.0;
      b.frag_sizes[static_cast<std::size_t>(fo + p)] = static_cast<double>(f.size());
    }
    for (auto [i, j] : dec.adjacency_edges()) b.frag_edges.emplace_back(fo + i, fo + j);
    for (auto [v, p] : dec.incidence_pairs()) {
      b.node_frag_pairs.emplace_back(no + v, fo + p);
      b.frag_node_pairs.emplace_back(fo + p, no + v);
    }
    for (long v = 0; v < mol.num_atoms(); ++v) b.node_graph_pairs.emplace_back(no + v, static_cast<long>(g));
  }
  return b;
}

// ---------------------------------------------------------------------------
// parameter bundles

struct LinearParams {
  Parameter* w = nullptr;  // in x out
  Parameter* b = nullptr;
};

struct BnParams {
  Parameter* gamma = nullptr;
  Parameter* beta = nullptr;
  BatchNormState state;
  std::string name;
};

struct GinLayerParams {
  LinearParams lin1, lin2;
  BnParams bn;
};

struct FragInteractionParams {
  LinearParams nf1, nf2;               // node->fragment combine MLP (2d -> d -> d)
  std::vector<GinLayerParams> frag_gnn;  // fragment-level GIN stack
  LinearParams fn1, fn2;               // fragment->node MLP (d -> d -> d)
};

namespace detail {

inline LinearParams make_linear(ParameterStore& store, const std::string& name, long in, long out, Rng& rng) {
  LinearParams lp;
  lp.w = store.add(name + ".W", glorot_init(in, out, rng));
  lp.b = store.add(name + ".b", Tensor::vector(out));
  return lp;
}

inline GinLayerParams make_gin(ParameterStore& store, const std::string& name, long d, Rng& rng) {
  GinLayerParams g;
  g.lin1 = make_linear(store, name + ".lin1", d, d, rng);
  g.lin2 = make_linear(store, name + ".lin2", d, d, rng);
  g.bn.gamma = store.add(name + ".bn.gamma", Tensor::vector(d, 1.0));
  g.bn.beta = store.add(name + ".bn.beta", Tensor::vector(d));
  g.bn.state = BatchNormState(d);
  g.bn.name = name + ".bn";
  return g;
}

}  // namespace detail

// All learnable state of one hierarchical encoder. `active_layers` is L for
// the context encoder and the prefix depth for the EMA target.
struct EncoderParams {
  EncoderConfig cfg;
  std::string prefix;
  int active_layers = 0;
  LinearParams embed;
  Parameter* frag_w1 = nullptr;
  Parameter* frag_w2 = nullptr;
  std::vector<GinLayerParams> node_layers;
  std::map<int, FragInteractionParams> frag_layers;
  Parameter* mask_node = nullptr;
  Parameter* mask_frag = nullptr;

  static EncoderParams create(ParameterStore& store, const std::string& prefix, const EncoderConfig& cfg,
                              int active_layers, bool with_mask_tokens, Rng& rng) {
    cfg.validate();
    require(active_layers >= 1 && active_layers <= cfg.node_layers, Errc::ConfigMismatch,
            "active layer count outside 1..L");
    EncoderParams e;
    e.cfg = cfg;
    e.prefix = prefix;
    e.active_layers = active_layers;
    const long d = cfg.hidden;
    e.embed = detail::make_linear(store, prefix + "embed", kFeatureDim, d, rng);
    e.frag_w1 = store.add(prefix + "fragenc.W1", glorot_init(kVocabSize, d / 2, rng));
    e.frag_w2 = store.add(prefix + "fragenc.W2", glorot_init(kVocabSize, d / 2, rng));
    for (int l = 1; l <= active_layers; ++l)
      e.node_layers.push_back(detail::make_gin(store, prefix + "node" + std::to_string(l), d, rng));
    for (int p : cfg.fragment_layer_positions) {
      if (p > active_layers) continue;
      FragInteractionParams fi;
      const std::string base = prefix + "fi" + std::to_string(p);
      fi.nf1 = detail::make_linear(store, base + ".nf.lin1", 2 * d, d, rng);
      fi.nf2 = detail::make_linear(store, base + ".nf.lin2", d, d, rng);
      for (int k = 1; k <= cfg.frag_gnn_layers; ++k)
        fi.frag_gnn.push_back(detail::make_gin(store, base + ".frag" + std::to_string(k), d, rng));
      fi.fn1 = detail::make_linear(store, base + ".fn.lin1", d, d, rng);
      fi.fn2 = detail::make_linear(store, base + ".fn.lin2", d, d, rng);
      e.frag_layers[p] = std::move(fi);
    }
    if (with_mask_tokens) {
      const double bound = std::sqrt(6.0 / static_cast<double>(1 + d));
      Tensor mn = Tensor::vector(d), mf = Tensor::vector(d);
      for (long i = 0; i < d; ++i) mn[i] = rng.uniform(-bound, bound);
      for (long i = 0; i < d; ++i) mf[i] = rng.uniform(-bound, bound);
      e.mask_node = store.add(prefix + "mask.node", std::move(mn));
      e.mask_frag = store.add(prefix + "mask.frag", std::move(mf));
    }
    return e;
  }

  // batch-norm states in a fixed order, for checkpointing
  std::vector<BnParams*> bn_entries() {
    std::vector<BnParams*> out;
    for (auto& g : node_layers) out.push_back(&g.bn);
    for (auto& [pos, fi] : frag_layers)
      for (auto& g : fi.frag_gnn) out.push_back(&g.bn);
    return out;
  }
};

// masked row indices in batch (union) space
struct MaskIndices {
  IndexList nodes;
  IndexList fragments;
};

struct EncoderTapeOutput {
  Tape::Id z_nodes = -1;
  Tape::Id z_frags = -1;   // -1 when fragments are disabled
  Tape::Id h_graphs = -1;  // num_graphs x d mean-pooled readout
};

namespace detail {

inline Tape::Id linear(Tape& t, Tape::Id x, const LinearParams& lp) {
  return t.add_rowvec(t.matmul(x, t.param(*lp.w)), t.param(*lp.b));
}

inline Tape::Id mlp2(Tape& t, Tape::Id x, const LinearParams& l1, const LinearParams& l2) {
  return linear(t, t.relu(linear(t, x, l1)), l2);
}

}  // namespace detail

// H' = BatchNorm(ReLU(MLP((1 + eps) * H + sum_neighbors H)))
inline Tape::Id node_mp_layer(Tape& t, Tape::Id h, const EdgeList& edges, GinLayerParams& layer, double eps,
                              bool train) {
  Tape::Id agg = t.add(t.scale(h, 1.0 + eps), t.neighbor_sum(h, edges));
  Tape::Id out = t.relu(detail::mlp2(t, agg, layer.lin1, layer.lin2));
  return t.batchnorm(out, t.param(*layer.bn.gamma), t.param(*layer.bn.beta), layer.bn.state, train);
}

// h_f = [W1 x_f || size(f) * (W2 x_f)]
inline Tape::Id encode_fragments(Tape& t, const GraphBatch& b, const EncoderParams& p) {
  Tape::Id onehots = t.constant(b.frag_onehots);
  Tape::Id left = t.matmul(onehots, t.param(*p.frag_w1));
  Tape::Id right = t.scale_rows(t.matmul(onehots, t.param(*p.frag_w2)), b.frag_sizes);
  return t.concat_cols(left, right);
}

inline Tape::Id embed_nodes(Tape& t, const GraphBatch& b, const EncoderParams& p) {
  return detail::linear(t, t.constant(b.features), p.embed);
}

// Three stages: pool member nodes into fragments, message-pass over the
// fragment graph, inject fragment state back into nodes (residual add; a
// connector averages over all fragments containing it).
inline std::pair<Tape::Id, Tape::Id> fragment_interaction(Tape& t, Tape::Id h, Tape::Id f, const GraphBatch& b,
                                                          FragInteractionParams& fi, const EncoderConfig& cfg,
                                                          bool train) {
  Tape::Id pooled = t.segment_mean(h, b.node_frag_pairs, b.num_frags);
  f = detail::mlp2(t, t.concat_cols(f, pooled), fi.nf1, fi.nf2);
  if (cfg.use_fragment_mp)
    for (auto& layer : fi.frag_gnn) f = node_mp_layer(t, f, b.frag_edges, layer, cfg.gin_epsilon, train);
  Tape::Id injected = detail::mlp2(t, f, fi.fn1, fi.fn2);
  Tape::Id per_node = t.segment_mean(injected, b.frag_node_pairs, b.num_nodes);
  return {t.add(h, per_node), f};
}

// Full pass: embed, mask substitution, interleaved node / fragment layers,
// mean-pool readout per graph.
inline EncoderTapeOutput encoder_forward(Tape& t, EncoderParams& p, const GraphBatch& b,
                                         const MaskIndices* mask = nullptr, bool train = false) {
  for (long count : b.nodes_per_graph) require(count > 0, Errc::EmptyGraph, "graph without nodes");
  Tape::Id h = embed_nodes(t, b, p);
  if (mask && !mask->nodes.empty()) {
    require(p.mask_node != nullptr, Errc::ConfigMismatch, "encoder has no node mask token");
    h = t.replace_rows(h, t.param(*p.mask_node), mask->nodes);
  }
  Tape::Id f = -1;
  if (p.cfg.use_fragments && b.num_frags > 0) {
    f = encode_fragments(t, b, p);
    if (mask && !mask->fragments.empty()) {
      require(p.mask_frag != nullptr, Errc::ConfigMismatch, "encoder has no fragment mask token");
      f = t.replace_rows(f, t.param(*p.mask_frag), mask->fragments);
    }
  }
  for (int l = 1; l <= p.active_layers; ++l) {
    h = node_mp_layer(t, h, b.edges, p.node_layers[static_cast<std::size_t>(l - 1)], p.cfg.gin_epsilon, train);
    if (f >= 0 && p.frag_layers.count(l)) {
      auto [h2, f2] = fragment_interaction(t, h, f, b, p.frag_layers[l], p.cfg, train);
      h = h2;
      f = f2;
    }
  }
  EncoderTapeOutput out;
  out.z_nodes = h;
  out.z_frags = f;
  out.h_graphs = t.segment_mean(h, b.node_graph_pairs, b.num_graphs);
  return out;
}

// Arithmetic mean of embedding rows (single-graph readout).
inline Tensor readout(const Tensor& z_nodes) {
  require(z_nodes.rows() >= 1, Errc::EmptyGraph, "readout of an empty graph");
  Tensor out = Tensor::vector(z_nodes.cols());
  for (long r = 0; r < z_nodes.rows(); ++r)
    for (long c = 0; c < z_nodes.cols(); ++c) out[c] += z_nodes.at(r, c);
  for (long c = 0; c < z_nodes.cols(); ++c) out[c] /= static_cast<double>(z_nodes.rows());
  return out;
}

}  // namespace graspn
