#pragma once

#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "graspn/encoder.hpp"
#include "graspn/error.hpp"
#include "graspn/fragmenter.hpp"
#include "graspn/molgraph.hpp"
#include "graspn/rng.hpp"
#include "graspn/tensor.hpp"

namespace graspn {

struct MaskPlan {
  IndexList nodes;      // V_m
  IndexList fragments;  // V^F_m
  double ratio = 0.0;
};

// Independent Bernoulli(p) draws per node, then per fragment.
inline MaskPlan sample_mask(const MolecularGraph& g, const FragmentDecomposition& d, double p, Rng& rng) {
  require(p >= 0.0 && p < 1.0, Errc::InvalidRatio, "masking ratio must be in [0, 1)");
  MaskPlan plan;
  plan.ratio = p;
  for (int v = 0; v < g.num_atoms(); ++v)
    if (rng.bernoulli(p)) plan.nodes.push_back(v);
  for (int f = 0; f < d.num_fragments(); ++f)
    if (rng.bernoulli(p)) plan.fragments.push_back(f);
  return plan;
}

struct TrainerConfig {
  double mask_ratio = 0.35;  // p
  double lr = 1e-4;
  int batch_size = 32;
  int epochs = 100;
  double ema_start = 0.996;
  double ema_end = 1.0;
  double loss_weight = 0.5;  // alpha: node term weight, fragments get 1 - alpha
  int predictor_depth = 2;   // k
  int target_layers = 1;     // T
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // epochs between periodic checkpoints, 0 = final only

  void validate(const EncoderConfig& enc) const {
    require(mask_ratio >= 0.0 && mask_ratio < 1.0, Errc::InvalidRatio, "mask_ratio outside [0, 1)");
    require(loss_weight >= 0.0 && loss_weight <= 1.0, Errc::ConfigMismatch, "loss_weight outside [0, 1]");
    require(target_layers >= 1 && target_layers <= enc.node_layers, Errc::ConfigMismatch,
            "target_layers must be in 1..node_layers");
    require(ema_start >= 0.0 && ema_start <= 1.0 && ema_end >= 0.0 && ema_end <= 1.0 && ema_start <= ema_end,
            Errc::ConfigMismatch, "ema schedule must be within [0, 1] and non-decreasing");
    require(batch_size >= 1, Errc::ConfigMismatch, "batch_size must be >= 1");
    require(epochs >= 1, Errc::ConfigMismatch, "epochs must be >= 1");
    require(predictor_depth >= 1, Errc::ConfigMismatch, "predictor_depth must be >= 1");
    require(lr > 0.0, Errc::ConfigMismatch, "lr must be positive");
  }
};

// Linear interpolation from ema_start to ema_end over steps 1..total.
inline double tau_for_step(const TrainerConfig& cfg, long step, long total_steps) {
  if (total_steps <= 1) return cfg.ema_start;
  const double frac = static_cast<double>(step - 1) / static_cast<double>(total_steps - 1);
  return cfg.ema_start + (cfg.ema_end - cfg.ema_start) * frac;
}

// Context encoder + EMA target prefix + node/fragment predictors, with the
// optimizer state. All tensors live in `store`.
struct PretrainModel {
  EncoderConfig enc_cfg;
  TrainerConfig tr_cfg;
  ParameterStore store;
  EncoderParams context;
  EncoderParams target;
  Parameter* pred_token = nullptr;
  // k-layer node predictor: k-1 full GIN blocks, then one message-passing
  // layer with a linear output (a regression head needs an unconstrained
  // final layer)
  std::vector<GinLayerParams> node_pred_hidden;
  LinearParams node_pred_out1, node_pred_out2;
  std::vector<LinearParams> frag_pred_layers;
  std::vector<Parameter*> trainable;   // context + predictors
  std::vector<Parameter*> ema_target;  // target params, registration order
  std::vector<Parameter*> ema_source;  // positionally matching context params
  AdamState adam;
  long step_count = 0;
  long total_steps = 0;

  static PretrainModel create(const EncoderConfig& enc, const TrainerConfig& tr) {
    enc.validate();
    tr.validate(enc);
    PretrainModel m;
    m.enc_cfg = enc;
    m.tr_cfg = tr;
    Rng rng(tr.seed ^ 0x9E3779B97F4A7C15ULL);
    m.context = EncoderParams::create(m.store, "context.", enc, enc.node_layers, /*with_mask_tokens=*/true, rng);
    m.target = EncoderParams::create(m.store, "target.", enc, tr.target_layers, /*with_mask_tokens=*/false, rng);
    const long d = enc.hidden;
    {
      const double bound = std::sqrt(6.0 / static_cast<double>(1 + d));
      Tensor tok = Tensor::vector(d);
      for (long i = 0; i < d; ++i) tok[i] = rng.uniform(-bound, bound);
      m.pred_token = m.store.add("pred.token", std::move(tok));
    }
    for (int k = 1; k < tr.predictor_depth; ++k)
      m.node_pred_hidden.push_back(detail::make_gin(m.store, "pred.node" + std::to_string(k), d, rng));
    m.node_pred_out1 = detail::make_linear(m.store, "pred.node_out.lin1", d, d, rng);
    m.node_pred_out2 = detail::make_linear(m.store, "pred.node_out.lin2", d, d, rng);
    for (int k = 1; k <= tr.predictor_depth; ++k)
      m.frag_pred_layers.push_back(detail::make_linear(m.store, "pred.frag" + std::to_string(k), d, d, rng));

    // target starts as a copy of the matching context prefix
    m.ema_target = m.store.with_prefix("target.");
    for (Parameter* tp : m.ema_target) {
      const std::string suffix = tp->name.substr(std::string("target.").size());
      Parameter* cp = m.store.find("context." + suffix);
      require(cp != nullptr, Errc::ConfigMismatch, "no context twin for " + tp->name);
      tp->value = cp->value;
      m.ema_source.push_back(cp);
    }
    for (Parameter* p : m.store.with_prefix("context.")) m.trainable.push_back(p);
    for (Parameter* p : m.store.with_prefix("pred.")) m.trainable.push_back(p);
    m.adam.init(m.trainable);
    return m;
  }

  // fixed-order batch-norm states for checkpointing
  std::vector<BnParams*> bn_entries() {
    std::vector<BnParams*> out = context.bn_entries();
    for (BnParams* b : target.bn_entries()) out.push_back(b);
    for (auto& g : node_pred_hidden) out.push_back(&g.bn);
    return out;
  }
};

struct TrainItem {
  MolecularGraph graph;
  FragmentDecomposition decomp;
};

// Masked context rows are replaced by the prediction token, then k rounds of
// message passing over the full adjacency; rows at masked positions are the
// predictions. The final round has a linear output.
inline Tape::Id predict_nodes_full(Tape& t, PretrainModel& m, Tape::Id z_context, const GraphBatch& b,
                                   const IndexList& masked, bool train) {
  Tape::Id h = t.replace_rows(z_context, t.param(*m.pred_token), masked);
  for (auto& layer : m.node_pred_hidden) h = node_mp_layer(t, h, b.edges, layer, m.enc_cfg.gin_epsilon, train);
  Tape::Id agg = t.add(t.scale(h, 1.0 + m.enc_cfg.gin_epsilon), t.neighbor_sum(h, b.edges));
  return detail::mlp2(t, agg, m.node_pred_out1, m.node_pred_out2);
}

inline Tensor predict_nodes(Tape& t, PretrainModel& m, Tape::Id z_context, const GraphBatch& b,
                            const IndexList& masked, bool train) {
  if (masked.empty()) return Tensor::matrix(0, m.enc_cfg.hidden);
  Tape::Id full = predict_nodes_full(t, m, z_context, b, masked, train);
  return t.value(t.gather_rows(full, masked));
}

// k-layer per-row MLP over the context fragment embeddings.
inline Tape::Id predict_fragments_full(Tape& t, PretrainModel& m, Tape::Id z_frags) {
  Tape::Id h = z_frags;
  for (std::size_t k = 0; k < m.frag_pred_layers.size(); ++k) {
    h = detail::linear(t, h, m.frag_pred_layers[k]);
    if (k + 1 < m.frag_pred_layers.size()) h = t.relu(h);
  }
  return h;
}

inline Tensor predict_fragments(Tape& t, PretrainModel& m, Tape::Id z_frags, const IndexList& masked) {
  if (masked.empty()) return Tensor::matrix(0, m.enc_cfg.hidden);
  return t.value(t.gather_rows(predict_fragments_full(t, m, z_frags), masked));
}

// L = alpha * mean_{V_m} ||Zhat - Z||^2 + (1 - alpha) * mean_{V_m^F} ||Zhat - Z||^2,
// empty masked sets contribute zero.
inline double masked_prediction_loss(const Tensor& pred_nodes, const Tensor& target_nodes,
                                     const Tensor& pred_frags, const Tensor& target_frags, double alpha) {
  auto term = [](const Tensor& p, const Tensor& t) {
    require(p.same_shape(t), Errc::ShapeMismatch, "loss term shapes differ");
    if (p.rows() == 0) return 0.0;
    double total = 0.0;
    for (long i = 0; i < p.size(); ++i) {
      const double d = p[i] - t[i];
      total += d * d;
    }
    return total / static_cast<double>(p.rows());
  };
  return alpha * term(pred_nodes, target_nodes) + (1.0 - alpha) * term(pred_frags, target_frags);
}

// Architecture view used for the target pass. With T below the first
// fragment position, the target has no fragment-interaction layer and its
// fragment output is the initial fragment encoding under target weights.
inline EncoderParams& build_target_encoder(PretrainModel& m, int target_layers) {
  require(target_layers == m.tr_cfg.target_layers, Errc::ConfigMismatch,
          "target depth fixed at construction time");
  require(target_layers <= m.enc_cfg.node_layers, Errc::ConfigMismatch, "target deeper than context");
  return m.target;
}

struct StepStats {
  double loss = 0.0;
  double tau = 0.0;
  double target_variance = 0.0;  // mean per-dimension variance of target node rows
};

namespace detail {

inline double mean_row_variance(const Tensor& z) {
  if (z.rows() <= 1) return 0.0;
  double acc = 0.0;
  for (long c = 0; c < z.cols(); ++c) {
    double mean = 0.0;
    for (long r = 0; r < z.rows(); ++r) mean += z.at(r, c);
    mean /= static_cast<double>(z.rows());
    double var = 0.0;
    for (long r = 0; r < z.rows(); ++r) {
      const double d = z.at(r, c) - mean;
      var += d * d;
    }
    acc += var / static_cast<double>(z.rows());
  }
  return acc / static_cast<double>(z.cols());
}

}  // namespace detail

// One optimization step over a batch: mask, masked context pass, clean
// gradient-free target pass, predictors, per-graph masked MSE, Adam on the
// context + predictors, then the EMA update of the target.
inline StepStats train_step(PretrainModel& m, const std::vector<const TrainItem*>& batch, Rng& rng) {
  require(!batch.empty(), Errc::EmptyDataset, "empty training batch");
  const double alpha = m.tr_cfg.loss_weight;

  std::vector<BatchItem> items;
  items.reserve(batch.size());
  for (const TrainItem* it : batch) items.push_back({&it->graph, &it->decomp});
  GraphBatch gb = make_batch(items);

  MaskIndices mask;
  std::vector<IndexList> node_masks(batch.size()), frag_masks(batch.size());
  for (std::size_t g = 0; g < batch.size(); ++g) {
    MaskPlan plan = sample_mask(batch[g]->graph, batch[g]->decomp, m.tr_cfg.mask_ratio, rng);
    for (long v : plan.nodes) {
      node_masks[g].push_back(gb.node_offset[g] + v);
      mask.nodes.push_back(gb.node_offset[g] + v);
    }
    for (long f : plan.fragments) {
      frag_masks[g].push_back(gb.frag_offset[g] + f);
      mask.fragments.push_back(gb.frag_offset[g] + f);
    }
  }

  // clean target pass, no gradients recorded against it
  Tensor target_nodes, target_frags;
  {
    Tape tt;
    EncoderTapeOutput out = encoder_forward(tt, m.target, gb, nullptr, /*train=*/true);
    target_nodes = tt.value(out.z_nodes);
    if (out.z_frags >= 0) target_frags = tt.value(out.z_frags);
  }

  m.store.zero_grads();
  Tape t;
  EncoderTapeOutput ctx = encoder_forward(t, m.context, gb, &mask, /*train=*/true);

  Tape::Id loss = t.constant(Tensor::scalar(0.0));
  Tape::Id node_target_const = t.constant(target_nodes);
  Tape::Id node_pred = predict_nodes_full(t, m, ctx.z_nodes, gb, mask.nodes, /*train=*/true);
  Tape::Id frag_pred = -1, frag_target_const = -1;
  const bool frag_loss_active = ctx.z_frags >= 0 && target_frags.rows() > 0;
  if (frag_loss_active) {
    frag_target_const = t.constant(target_frags);
    frag_pred = predict_fragments_full(t, m, ctx.z_frags);
  }
  for (std::size_t g = 0; g < batch.size(); ++g) {
    Tape::Id lg = t.scale(t.mse_masked(node_pred, node_target_const, node_masks[g]), alpha);
    if (frag_loss_active)
      lg = t.add(lg, t.scale(t.mse_masked(frag_pred, frag_target_const, frag_masks[g]), 1.0 - alpha));
    loss = t.add(loss, lg);
  }
  loss = t.scale(loss, 1.0 / static_cast<double>(batch.size()));

  t.backward(loss);
  adam_step(m.trainable, m.adam, m.tr_cfg.lr);

  m.step_count += 1;
  const long schedule_total = m.total_steps > 0 ? m.total_steps : m.step_count;
  StepStats st;
  st.tau = tau_for_step(m.tr_cfg, m.step_count, schedule_total);
  ema_update(m.ema_target, m.ema_source, st.tau);
  st.loss = t.value(loss).item();
  st.target_variance = detail::mean_row_variance(target_nodes);
  return st;
}

// ---------------------------------------------------------------------------
// checkpoint format: "GRSP" magic, u32 version, u64 config length + text,
// then [u32 name_len, name, u32 rank, u64 dims..., f64 payload] blocks,
// everything little-endian

constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_f64(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(out, bits);
}

struct ByteReader {
  const std::string& buf;
  std::size_t pos = 0;

  explicit ByteReader(const std::string& b) : buf(b) {}

  bool done() const { return pos >= buf.size(); }

  std::uint32_t u32() {
    require(pos + 4 <= buf.size(), Errc::IoError, "truncated checkpoint");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    require(pos + 8 <= buf.size(), Errc::IoError, "truncated checkpoint");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
    return v;
  }
  double f64() {
    std::uint64_t bits = u64();
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }
  std::string bytes(std::size_t n) {
    require(pos + n <= buf.size(), Errc::IoError, "truncated checkpoint");
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void put_tensor_block(std::string& out, const std::string& name, const Tensor& t) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (long d : t.shape()) put_u64(out, static_cast<std::uint64_t>(d));
  for (long i = 0; i < t.size(); ++i) put_f64(out, t[i]);
}

}  // namespace detail

inline std::string serialize_encoder_config(const EncoderConfig& c) {
  std::ostringstream out;
  out << "node_layers=" << c.node_layers << "\n";
  out << "hidden=" << c.hidden << "\n";
  out << "fragment_layer_positions=";
  bool first = true;
  for (int p : c.fragment_layer_positions) {
    if (!first) out << ",";
    out << p;
    first = false;
  }
  out << "\n";
  out << "frag_gnn_layers=" << c.frag_gnn_layers << "\n";
  out << "use_fragments=" << (c.use_fragments ? 1 : 0) << "\n";
  out << "use_fragment_mp=" << (c.use_fragment_mp ? 1 : 0) << "\n";
  out << "gin_epsilon=" << detail::format_double(c.gin_epsilon) << "\n";
  return out.str();
}

inline std::string serialize_trainer_config(const TrainerConfig& c) {
  std::ostringstream out;
  out << "mask_ratio=" << detail::format_double(c.mask_ratio) << "\n";
  out << "lr=" << detail::format_double(c.lr) << "\n";
  out << "batch_size=" << c.batch_size << "\n";
  out << "epochs=" << c.epochs << "\n";
  out << "ema_start=" << detail::format_double(c.ema_start) << "\n";
  out << "ema_end=" << detail::format_double(c.ema_end) << "\n";
  out << "loss_weight=" << detail::format_double(c.loss_weight) << "\n";
  out << "predictor_depth=" << c.predictor_depth << "\n";
  out << "target_layers=" << c.target_layers << "\n";
  out << "seed=" << c.seed << "\n";
  out << "checkpoint_every=" << c.checkpoint_every << "\n";
  return out.str();
}

// key=value lines -> (EncoderConfig, TrainerConfig); unknown keys rejected
inline std::pair<EncoderConfig, TrainerConfig> parse_configs(const std::string& text) {
  EncoderConfig enc;
  TrainerConfig tr;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    require(eq != std::string::npos, Errc::ParseError, "expected key=value: " + line);
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    auto as_long = [&]() {
      try {
        return std::stol(val);
      } catch (const std::exception&) {
        fail(Errc::ParseError, "bad integer for " + key + ": " + val);
      }
    };
    auto as_double = [&]() {
      try {
        return std::stod(val);
      } catch (const std::exception&) {
        fail(Errc::ParseError, "bad number for " + key + ": " + val);
      }
    };
    auto as_bool = [&]() {
      if (val == "1" || val == "true") return true;
      if (val == "0" || val == "false") return false;
      fail(Errc::ParseError, "bad boolean for " + key + ": " + val);
    };
    if (key == "node_layers") enc.node_layers = static_cast<int>(as_long());
    else if (key == "hidden") enc.hidden = as_long();
    else if (key == "fragment_layer_positions") {
      enc.fragment_layer_positions.clear();
      if (!val.empty()) {
        std::istringstream ps(val);
        std::string tok;
        while (std::getline(ps, tok, ',')) {
          try {
            enc.fragment_layer_positions.insert(std::stoi(tok));
          } catch (const std::exception&) {
            fail(Errc::ParseError, "bad position list: " + val);
          }
        }
      }
    } else if (key == "frag_gnn_layers") enc.frag_gnn_layers = static_cast<int>(as_long());
    else if (key == "use_fragments") enc.use_fragments = as_bool();
    else if (key == "use_fragment_mp") enc.use_fragment_mp = as_bool();
    else if (key == "gin_epsilon") enc.gin_epsilon = as_double();
    else if (key == "mask_ratio") tr.mask_ratio = as_double();
    else if (key == "lr") tr.lr = as_double();
    else if (key == "batch_size") tr.batch_size = static_cast<int>(as_long());
    else if (key == "epochs") tr.epochs = static_cast<int>(as_long());
    else if (key == "ema_start") tr.ema_start = as_double();
    else if (key == "ema_end") tr.ema_end = as_double();
    else if (key == "loss_weight") tr.loss_weight = as_double();
    else if (key == "predictor_depth") tr.predictor_depth = static_cast<int>(as_long());
    else if (key == "target_layers") tr.target_layers = static_cast<int>(as_long());
    else if (key == "seed") tr.seed = static_cast<std::uint64_t>(std::stoull(val));
    else if (key == "checkpoint_every") tr.checkpoint_every = static_cast<int>(as_long());
    else fail(Errc::ParseError, "unknown config key: " + key);
  }
  return {enc, tr};
}

inline std::string serialize_checkpoint(PretrainModel& m) {
  std::string out = "GRSP";
  detail::put_u32(out, kCheckpointVersion);
  const std::string config = serialize_encoder_config(m.enc_cfg) + serialize_trainer_config(m.tr_cfg);
  detail::put_u64(out, config.size());
  out += config;
  for (const Parameter* p : m.store.all()) detail::put_tensor_block(out, p->name, p->value);
  for (BnParams* bn : m.bn_entries()) {
    detail::put_tensor_block(out, bn->name + ".running_mean", bn->state.running_mean);
    detail::put_tensor_block(out, bn->name + ".running_var", bn->state.running_var);
  }
  for (std::size_t i = 0; i < m.trainable.size(); ++i) {
    detail::put_tensor_block(out, "adam.m." + m.trainable[i]->name, m.adam.m[i]);
    detail::put_tensor_block(out, "adam.v." + m.trainable[i]->name, m.adam.v[i]);
  }
  detail::put_tensor_block(out, "adam.step", Tensor::scalar(static_cast<double>(m.adam.step)));
  detail::put_tensor_block(out, "ema.step", Tensor::scalar(static_cast<double>(m.step_count)));
  detail::put_tensor_block(out, "total.steps", Tensor::scalar(static_cast<double>(m.total_steps)));
  return out;
}

inline PretrainModel deserialize_checkpoint(const std::string& bytes) {
  require(bytes.size() >= 4, Errc::BadMagic, "file too short for magic");
  require(bytes.compare(0, 4, "GRSP") == 0, Errc::BadMagic, "bad checkpoint magic");
  detail::ByteReader r(bytes);
  r.pos = 4;
  const std::uint32_t version = r.u32();
  require(version == kCheckpointVersion, Errc::VersionMismatch,
          "checkpoint version " + std::to_string(version) + ", expected " + std::to_string(kCheckpointVersion));
  const std::uint64_t config_len = r.u64();
  const std::string config_text = r.bytes(config_len);
  auto [enc, tr] = parse_configs(config_text);
  PretrainModel m = PretrainModel::create(enc, tr);

  std::map<std::string, Tensor> blocks;
  while (!r.done()) {
    const std::uint32_t name_len = r.u32();
    const std::string name = r.bytes(name_len);
    const std::uint32_t rank = r.u32();
    std::vector<long> shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<long>(r.u64()));
    Tensor t(shape);
    for (long i = 0; i < t.size(); ++i) t[i] = r.f64();
    blocks.emplace(name, std::move(t));
  }
  auto take = [&](const std::string& name) {
    auto it = blocks.find(name);
    require(it != blocks.end(), Errc::ShapeMismatch, "checkpoint missing tensor " + name);
    Tensor t = std::move(it->second);
    return t;
  };
  for (Parameter* p : m.store.all()) {
    Tensor t = take(p->name);
    require(t.same_shape(p->value), Errc::ShapeMismatch, "shape mismatch for " + p->name);
    p->value = std::move(t);
  }
  for (BnParams* bn : m.bn_entries()) {
    Tensor rm = take(bn->name + ".running_mean");
    Tensor rv = take(bn->name + ".running_var");
    require(rm.same_shape(bn->state.running_mean) && rv.same_shape(bn->state.running_var), Errc::ShapeMismatch,
            "shape mismatch for " + bn->name + " running stats");
    bn->state.running_mean = std::move(rm);
    bn->state.running_var = std::move(rv);
  }
  for (std::size_t i = 0; i < m.trainable.size(); ++i) {
    Tensor mm = take("adam.m." + m.trainable[i]->name);
    Tensor vv = take("adam.v." + m.trainable[i]->name);
    require(mm.same_shape(m.adam.m[i]) && vv.same_shape(m.adam.v[i]), Errc::ShapeMismatch,
            "shape mismatch for adam state of " + m.trainable[i]->name);
    m.adam.m[i] = std::move(mm);
    m.adam.v[i] = std::move(vv);
  }
  m.adam.step = static_cast<long>(take("adam.step").item());
  m.step_count = static_cast<long>(take("ema.step").item());
  m.total_steps = static_cast<long>(take("total.steps").item());
  return m;
}

inline void write_file_atomic(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), Errc::IoError, "cannot open " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(out.good(), Errc::IoError, "write failed for " + tmp);
  }
  require(std::rename(tmp.c_str(), path.c_str()) == 0, Errc::IoError, "rename failed for " + path);
}

inline void save_checkpoint(PretrainModel& m, const std::string& path) {
  write_file_atomic(path, serialize_checkpoint(m));
}

inline PretrainModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Errc::IoError, "cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_checkpoint(buf.str());
}

// ---------------------------------------------------------------------------
// full pretraining loop

struct PretrainRunResult {
  std::string metrics_csv;  // step,epoch,loss,tau,target_var
  double first_loss = 0.0;
  double last_loss = 0.0;
};

inline PretrainRunResult run_pretraining(PretrainModel& m, const std::vector<TrainItem>& data,
                                         const std::string& checkpoint_path = "") {
  require(!data.empty(), Errc::EmptyDataset, "pretraining needs at least one molecule");
  const int batch = m.tr_cfg.batch_size;
  const long steps_per_epoch = (static_cast<long>(data.size()) + batch - 1) / batch;
  m.total_steps = steps_per_epoch * m.tr_cfg.epochs;

  Rng rng(m.tr_cfg.seed);
  std::ostringstream csv;
  csv << "step,epoch,loss,tau,target_var\n";
  PretrainRunResult result;
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= m.tr_cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (long s = 0; s < steps_per_epoch; ++s) {
      std::vector<const TrainItem*> chunk;
      for (long i = s * batch; i < std::min<long>((s + 1) * batch, static_cast<long>(data.size())); ++i)
        chunk.push_back(&data[order[static_cast<std::size_t>(i)]]);
      StepStats st = train_step(m, chunk, rng);
      if (m.step_count == 1) result.first_loss = st.loss;
      result.last_loss = st.loss;
      csv << m.step_count << "," << epoch << "," << detail::format_double(st.loss) << ","
          << detail::format_double(st.tau) << "," << detail::format_double(st.target_variance) << "\n";
    }
    if (!checkpoint_path.empty() && m.tr_cfg.checkpoint_every > 0 && epoch % m.tr_cfg.checkpoint_every == 0)
      save_checkpoint(m, checkpoint_path);
  }
  if (!checkpoint_path.empty()) save_checkpoint(m, checkpoint_path);
  result.metrics_csv = csv.str();
  return result;
}

}  // namespace graspn
