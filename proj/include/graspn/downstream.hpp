#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "graspn/encoder.hpp"
#include "graspn/error.hpp"
#include "graspn/fragwl.hpp"
#include "graspn/pretrain.hpp"

namespace graspn {

struct TaskSpec {
  enum class Kind { Classification, Regression };
  Kind kind = Kind::Classification;
  int num_tasks = 1;
};

struct LabeledItem {
  MolecularGraph graph;
  FragmentDecomposition decomp;
  std::vector<double> labels;  // NaN = missing
};

// ---------------------------------------------------------------------------
// metrics

// Probability that a random positive outscores a random negative, ties 1/2
// (rank formulation).
inline double roc_auc(const std::vector<double>& scores, const std::vector<double>& labels) {
  require(scores.size() == labels.size(), Errc::LengthMismatch, "score/label lengths differ");
  long pos = 0, neg = 0;
  for (double y : labels) (y > 0.5 ? pos : neg) += 1;
  require(pos > 0 && neg > 0, Errc::DegenerateLabels, "need at least one positive and one negative");
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // tie-averaged ranks, 1-based
  std::vector<double> rank(scores.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double pos_rank_sum = 0.0;
  for (std::size_t k = 0; k < labels.size(); ++k)
    if (labels[k] > 0.5) pos_rank_sum += rank[k];
  const double p = static_cast<double>(pos);
  return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

inline double rmse(const std::vector<double>& pred, const std::vector<double>& target) {
  require(pred.size() == target.size(), Errc::LengthMismatch, "prediction/target lengths differ");
  require(!pred.empty(), Errc::LengthMismatch, "rmse of empty vectors");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(pred.size()));
}

// ---------------------------------------------------------------------------
// simplified scaffold split

struct SplitAssignment {
  std::vector<int> part;  // 0 train, 1 valid, 2 test
  std::vector<std::size_t> indices(int which) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < part.size(); ++i)
      if (part[i] == which) out.push_back(i);
    return out;
  }
};

// Scaffold key: sorted ring-size multiset plus the stabilized WL hash of the
// fragment graph. Structurally alike molecules share a key and co-partition.
inline std::string scaffold_key(const FragmentDecomposition& d) {
  std::vector<int> ring_sizes;
  for (const Fragment& f : d.fragments)
    if (f.type == FragmentType::Ring) ring_sizes.push_back(f.size());
  std::sort(ring_sizes.begin(), ring_sizes.end());
  std::ostringstream key;
  key << "R:";
  for (int s : ring_sizes) key << s << ",";
  GenericGraph fg;
  fg.n = d.num_fragments();
  for (const Fragment& f : d.fragments) fg.labels.push_back(vocab_index(f));
  fg.edges = d.adjacency_edges();
  key << "|" << wl_hash(fg);
  return key.str();
}

// Groups molecules by scaffold key, orders groups by descending size with a
// seeded tie order, then greedily fills train, valid, test.
inline SplitAssignment scaffold_split(const std::vector<LabeledItem>& data, double train_frac, double valid_frac,
                                      std::uint64_t seed) {
  require(!data.empty(), Errc::EmptyDataset, "cannot split an empty dataset");
  require(train_frac > 0 && valid_frac >= 0 && train_frac + valid_frac <= 1.0, Errc::ConfigMismatch,
          "bad split fractions");
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < data.size(); ++i) groups[scaffold_key(data[i].decomp)].push_back(i);

  struct GroupRef {
    const std::string* key;
    const std::vector<std::size_t>* members;
    std::uint64_t tie;
  };
  std::vector<GroupRef> refs;
  for (const auto& [key, members] : groups) {
    std::uint64_t h = 1469598103934665603ULL ^ seed;
    for (char c : key) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
    Rng mix(h);
    refs.push_back({&key, &members, mix.next_u64()});
  }
  std::sort(refs.begin(), refs.end(), [](const GroupRef& a, const GroupRef& b) {
    if (a.members->size() != b.members->size()) return a.members->size() > b.members->size();
    if (a.tie != b.tie) return a.tie < b.tie;
    return *a.key < *b.key;
  });

  const long n = static_cast<long>(data.size());
  const long want_train = std::lround(train_frac * static_cast<double>(n));
  const long want_valid = std::lround(valid_frac * static_cast<double>(n));
  SplitAssignment out;
  out.part.assign(data.size(), 2);
  long in_train = 0, in_valid = 0;
  for (const GroupRef& g : refs) {
    int dest;
    if (in_train < want_train) {
      dest = 0;
      in_train += static_cast<long>(g.members->size());
    } else if (in_valid < want_valid) {
      dest = 1;
      in_valid += static_cast<long>(g.members->size());
    } else {
      dest = 2;
    }
    for (std::size_t idx : *g.members) out.part[idx] = dest;
  }
  return out;
}

// ---------------------------------------------------------------------------
// fine-tuning: mean-pooled graph embedding + linear head

struct FinetuneConfig {
  double lr = 1e-4;  // per the published sweep {1e-4, 5e-3, 1e-3}
  int epochs = 100;
  int batch_size = 32;
  std::uint64_t seed = 0;
  double train_frac = 0.8;
  double valid_frac = 0.1;
};

struct FinetuneReport {
  std::string metric_name;  // "roc_auc" or "rmse"
  // metrics at the best-validation epoch (ties resolve to the latest epoch)
  double train_metric = 0.0;
  double valid_metric = 0.0;
  double test_metric = 0.0;
  int best_epoch = 0;
  double final_train_metric = 0.0;  // training-split metric after the last epoch
  std::vector<double> per_task_test;
  std::string csv;  // task,split,metric,value
};

namespace detail {

// per-graph embeddings in eval mode; batch-norm uses running statistics so
// chunking does not change results
inline Tensor eval_embeddings(EncoderParams& enc, const std::vector<const LabeledItem*>& items, long chunk = 64) {
  Tensor out = Tensor::matrix(static_cast<long>(items.size()), enc.cfg.hidden);
  for (std::size_t start = 0; start < items.size(); start += static_cast<std::size_t>(chunk)) {
    std::vector<BatchItem> bi;
    const std::size_t end = std::min(items.size(), start + static_cast<std::size_t>(chunk));
    for (std::size_t i = start; i < end; ++i) bi.push_back({&items[i]->graph, &items[i]->decomp});
    GraphBatch gb = make_batch(bi);
    Tape t;
    EncoderTapeOutput o = encoder_forward(t, enc, gb, nullptr, /*train=*/false);
    const Tensor& h = t.value(o.h_graphs);
    for (std::size_t i = start; i < end; ++i)
      for (long c = 0; c < h.cols(); ++c) out.at(static_cast<long>(i), c) = h.at(static_cast<long>(i - start), c);
  }
  return out;
}

inline std::pair<Tensor, Tensor> labels_and_mask(const std::vector<const LabeledItem*>& items, int num_tasks) {
  Tensor y = Tensor::matrix(static_cast<long>(items.size()), num_tasks);
  Tensor mask = Tensor::matrix(static_cast<long>(items.size()), num_tasks);
  for (std::size_t i = 0; i < items.size(); ++i) {
    require(static_cast<int>(items[i]->labels.size()) == num_tasks, Errc::ConfigMismatch,
            "label count differs from task count");
    for (int t = 0; t < num_tasks; ++t) {
      const double v = items[i]->labels[static_cast<std::size_t>(t)];
      if (std::isnan(v)) continue;
      y.at(static_cast<long>(i), t) = v;
      mask.at(static_cast<long>(i), t) = 1.0;
    }
  }
  return {y, mask};
}

// mean metric over tasks that have usable labels; returns NaN when none do
inline double split_metric(const TaskSpec& task, const Tensor& scores, const Tensor& y, const Tensor& mask,
                           std::vector<double>* per_task = nullptr) {
  double acc = 0.0;
  int used = 0;
  for (int t = 0; t < task.num_tasks; ++t) {
    std::vector<double> s, l;
    for (long r = 0; r < scores.rows(); ++r)
      if (mask.at(r, t) != 0.0) {
        s.push_back(scores.at(r, t));
        l.push_back(y.at(r, t));
      }
    double value = std::numeric_limits<double>::quiet_NaN();
    if (task.kind == TaskSpec::Kind::Classification) {
      try {
        value = roc_auc(s, l);
      } catch (const Error&) {
        // single-class task on this split: skip
      }
    } else if (!s.empty()) {
      value = rmse(s, l);
    }
    if (per_task) per_task->push_back(value);
    if (!std::isnan(value)) {
      acc += value;
      ++used;
    }
  }
  return used == 0 ? std::numeric_limits<double>::quiet_NaN() : acc / used;
}

}  // namespace detail

// Fine-tunes the pretrained context encoder plus a fresh linear head on
// scaffold-split data; reports the test metric at the best validation epoch.
inline FinetuneReport finetune(PretrainModel& model, const std::vector<LabeledItem>& data, const TaskSpec& task,
                               const FinetuneConfig& cfg) {
  require(!data.empty(), Errc::EmptyDataset, "finetune needs data");
  require(task.num_tasks >= 1, Errc::ConfigMismatch, "num_tasks must be >= 1");
  const long d = model.enc_cfg.hidden;

  SplitAssignment split = scaffold_split(data, cfg.train_frac, cfg.valid_frac, cfg.seed);
  std::vector<const LabeledItem*> splits[3];
  for (std::size_t i = 0; i < data.size(); ++i) splits[split.part[i]].push_back(&data[i]);
  require(!splits[0].empty(), Errc::EmptyDataset, "empty training split");

  ParameterStore head_store;
  Rng rng(cfg.seed ^ 0xA5A5A5A5DEADBEEFULL);
  LinearParams head = detail::make_linear(head_store, "head", d, task.num_tasks, rng);
  std::vector<Parameter*> trainable = model.store.with_prefix("context.");
  trainable.push_back(head.w);
  trainable.push_back(head.b);
  AdamState adam;
  adam.init(trainable);

  auto forward_scores = [&](const std::vector<const LabeledItem*>& items) {
    Tensor h = detail::eval_embeddings(model.context, items);
    Tensor scores = Tensor::matrix(h.rows(), task.num_tasks);
    matmul_accumulate(h.data(), head.w->value.data(), scores.data(), h.rows(), d, task.num_tasks);
    for (long r = 0; r < scores.rows(); ++r)
      for (int t = 0; t < task.num_tasks; ++t) scores.at(r, t) += head.b->value[t];
    return scores;
  };

  auto evaluate = [&](const std::vector<const LabeledItem*>& items, std::vector<double>* per_task = nullptr) {
    if (items.empty()) return std::numeric_limits<double>::quiet_NaN();
    auto [y, mask] = detail::labels_and_mask(items, task.num_tasks);
    return detail::split_metric(task, forward_scores(items), y, mask, per_task);
  };

  FinetuneReport report;
  report.metric_name = task.kind == TaskSpec::Kind::Classification ? "roc_auc" : "rmse";
  const bool higher_better = task.kind == TaskSpec::Kind::Classification;
  double best_valid = higher_better ? -1.0 : std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order(splits[0].size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<const LabeledItem*> chunk;
      for (std::size_t i = start; i < end; ++i) chunk.push_back(splits[0][order[i]]);
      std::vector<BatchItem> bi;
      for (const LabeledItem* it : chunk) bi.push_back({&it->graph, &it->decomp});
      GraphBatch gb = make_batch(bi);
      auto [y, mask] = detail::labels_and_mask(chunk, task.num_tasks);

      model.store.zero_grads();
      head_store.zero_grads();
      Tape t;
      EncoderTapeOutput out = encoder_forward(t, model.context, gb, nullptr, /*train=*/true);
      Tape::Id logits = t.add_rowvec(t.matmul(out.h_graphs, t.param(*head.w)), t.param(*head.b));
      Tape::Id loss = task.kind == TaskSpec::Kind::Classification
                          ? t.logistic_loss(logits, y, mask)
                          : t.squared_loss(logits, y, mask);
      t.backward(loss);
      adam_step(trainable, adam, cfg.lr);
    }
    const double valid = evaluate(splits[1]);
    const double score = std::isnan(valid) ? evaluate(splits[0]) : valid;  // fall back to train on tiny sets
    const bool better = higher_better ? score >= best_valid : score <= best_valid;
    if (!std::isnan(score) && better) {
      best_valid = score;
      report.best_epoch = epoch;
      report.train_metric = evaluate(splits[0]);
      report.valid_metric = valid;
      std::vector<double> per_task;
      report.test_metric = evaluate(splits[2], &per_task);
      report.per_task_test = std::move(per_task);
    }
  }
  report.final_train_metric = evaluate(splits[0]);

  std::ostringstream csv;
  csv << "task,split,metric,value\n";
  auto row = [&](const std::string& tname, const char* split_name, double v) {
    csv << tname << "," << split_name << "," << report.metric_name << "," << detail::format_double(v) << "\n";
  };
  for (std::size_t t = 0; t < report.per_task_test.size(); ++t)
    row("task" + std::to_string(t), "test", report.per_task_test[t]);
  row("mean", "train", report.train_metric);
  row("mean", "valid", report.valid_metric);
  row("mean", "test", report.test_metric);
  report.csv = csv.str();
  return report;
}

// ---------------------------------------------------------------------------
// frozen-representation fragment probing

struct ProbeReport {
  struct Row {
    std::string query;
    double accuracy = 0.0;
    bool degenerate = false;
    long n_pos = 0;
  };
  std::vector<Row> rows;

  std::string to_csv() const {
    std::ostringstream out;
    out << "query,accuracy,n_pos\n";
    for (const Row& r : rows) {
      out << r.query << ",";
      if (r.degenerate) out << "DegenerateLabels";
      else out << detail::format_double(r.accuracy);
      out << "," << r.n_pos << "\n";
    }
    return out.str();
  }
};

namespace detail {

// full-batch multinomial logistic regression on fixed features; plain
// gradient descent with per-feature standardization
inline double linear_probe_accuracy(const Tensor& features, const std::vector<int>& labels,
                                    const std::vector<std::size_t>& train_idx,
                                    const std::vector<std::size_t>& test_idx, int num_classes) {
  const long d = features.cols();
  Tensor mean = Tensor::vector(d), stdev = Tensor::vector(d, 1.0);
  for (std::size_t i : train_idx)
    for (long c = 0; c < d; ++c) mean[c] += features.at(static_cast<long>(i), c);
  for (long c = 0; c < d; ++c) mean[c] /= static_cast<double>(train_idx.size());
  for (std::size_t i : train_idx)
    for (long c = 0; c < d; ++c) {
      const double diff = features.at(static_cast<long>(i), c) - mean[c];
      stdev[c] += diff * diff;
    }
  for (long c = 0; c < d; ++c) stdev[c] = std::sqrt(stdev[c] / static_cast<double>(train_idx.size())) + 1e-8;

  auto standardized = [&](std::size_t i, long c) { return (features.at(static_cast<long>(i), c) - mean[c]) / stdev[c]; };

  Tensor w = Tensor::matrix(d, num_classes), b = Tensor::vector(num_classes);
  Tensor gw(w.shape()), gb(b.shape());
  const double lr = 0.1;
  const int iters = 300;
  const double l2 = 1e-4;
  std::vector<double> logits(static_cast<std::size_t>(num_classes));
  for (int it = 0; it < iters; ++it) {
    gw.fill(0.0);
    gb.fill(0.0);
    for (std::size_t i : train_idx) {
      double maxz = -1e300;
      for (int k = 0; k < num_classes; ++k) {
        double z = b[k];
        for (long c = 0; c < d; ++c) z += standardized(i, c) * w.at(c, k);
        logits[static_cast<std::size_t>(k)] = z;
        maxz = std::max(maxz, z);
      }
      double denom = 0.0;
      for (int k = 0; k < num_classes; ++k) denom += std::exp(logits[static_cast<std::size_t>(k)] - maxz);
      for (int k = 0; k < num_classes; ++k) {
        const double p = std::exp(logits[static_cast<std::size_t>(k)] - maxz) / denom;
        const double g = (p - (labels[i] == k ? 1.0 : 0.0)) / static_cast<double>(train_idx.size());
        gb[k] += g;
        for (long c = 0; c < d; ++c) gw.at(c, k) += g * standardized(i, c);
      }
    }
    for (long j = 0; j < w.size(); ++j) w[j] -= lr * (gw[j] + l2 * w[j]);
    for (long j = 0; j < b.size(); ++j) b[j] -= lr * gb[j];
  }

  long correct = 0;
  for (std::size_t i : test_idx) {
    int best = 0;
    double best_z = -1e300;
    for (int k = 0; k < num_classes; ++k) {
      double z = b[k];
      for (long c = 0; c < d; ++c) z += standardized(i, c) * w.at(c, k);
      if (z > best_z) {
        best_z = z;
        best = k;
      }
    }
    if (best == labels[i]) ++correct;
  }
  return test_idx.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(test_idx.size());
}

}  // namespace detail

// Frozen-encoder probing: a linear classifier on the graph embedding
// predicts the count bucket {0, 1, 2, >=3} of each queried fragment type.
inline ProbeReport probe_fragment_counts(PretrainModel& model, const std::vector<LabeledItem>& data,
                                         const std::vector<int>& query_vocab_indices, std::uint64_t seed = 0,
                                         double train_frac = 0.8) {
  require(!data.empty(), Errc::EmptyDataset, "probe needs data");
  std::vector<const LabeledItem*> items;
  for (const LabeledItem& it : data) items.push_back(&it);
  Tensor h = detail::eval_embeddings(model.context, items);

  Rng rng(seed ^ 0x5851F42D4C957F2DULL);
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  const std::size_t n_train = static_cast<std::size_t>(train_frac * static_cast<double>(order.size()));
  std::vector<std::size_t> train_idx(order.begin(), order.begin() + static_cast<long>(n_train));
  std::vector<std::size_t> test_idx(order.begin() + static_cast<long>(n_train), order.end());

  ProbeReport report;
  for (int q : query_vocab_indices) {
    ProbeReport::Row row;
    row.query = vocab_entry_name(q);
    std::vector<int> labels(data.size(), 0);
    for (std::size_t i = 0; i < data.size(); ++i) {
      int count = 0;
      for (const Fragment& f : data[i].decomp.fragments)
        if (vocab_index(f) == q) ++count;
      labels[i] = std::min(count, 3);
      if (count >= 1) ++row.n_pos;
    }
    const bool all_same = std::all_of(labels.begin(), labels.end(), [&](int l) { return l == labels[0]; });
    if (all_same) {
      row.degenerate = true;
    } else {
      row.accuracy = detail::linear_probe_accuracy(h, labels, train_idx, test_idx, 4);
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace graspn
