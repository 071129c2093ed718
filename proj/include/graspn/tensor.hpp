#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "graspn/error.hpp"
#include "graspn/rng.hpp"

namespace graspn {

// Dense row-major f64 tensor. Rank 1 and 2 cover everything this project
// needs; rank-1 tensors act as row vectors where a matrix is expected.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<long> shape, double fill = 0.0) : shape_(std::move(shape)) {
    long n = 1;
    for (long d : shape_) {
      require(d >= 0, Errc::ShapeMismatch, "negative dimension");
      n *= d;
    }
    data_.assign(static_cast<std::size_t>(n), fill);
  }

  static Tensor matrix(long rows, long cols, double fill = 0.0) { return Tensor({rows, cols}, fill); }
  static Tensor vector(long n, double fill = 0.0) { return Tensor({n}, fill); }
  static Tensor scalar(double v) {
    Tensor t({1});
    t.data_[0] = v;
    return t;
  }
  static Tensor identity(long n) {
    Tensor t = matrix(n, n);
    for (long i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
  }

  const std::vector<long>& shape() const { return shape_; }
  long rank() const { return static_cast<long>(shape_.size()); }
  long size() const { return static_cast<long>(data_.size()); }

  // rows/cols view: rank-1 tensors are 1 x n rows.
  long rows() const { return rank() == 2 ? shape_[0] : (rank() == 1 ? 1 : 0); }
  long cols() const { return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : 0); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](long i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](long i) const { return data_[static_cast<std::size_t>(i)]; }

  double& at(long r, long c) { return data_[static_cast<std::size_t>(r * cols() + c)]; }
  double at(long r, long c) const { return data_[static_cast<std::size_t>(r * cols() + c)]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void fill(double v) {
    for (double& x : data_) x = v;
  }

  double item() const {
    require(size() == 1, Errc::ShapeMismatch, "item() needs a single-element tensor");
    return data_[0];
  }

  bool all_finite() const {
    for (double x : data_)
      if (!std::isfinite(x)) return false;
    return true;
  }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  std::vector<long> shape_;
  std::vector<double> data_;
};

// C += A * B on row-major buffers. Four output rows share each loaded B row
// and the inner loops stay vectorizable axpys.
inline void matmul_accumulate(const double* a, const double* b, double* c, long n, long m, long p) {
  long i = 0;
  for (; i + 4 <= n; i += 4) {
    const double* a0 = a + i * m;
    const double* a1 = a0 + m;
    const double* a2 = a1 + m;
    const double* a3 = a2 + m;
    double* __restrict c0 = c + i * p;
    double* __restrict c1 = c0 + p;
    double* __restrict c2 = c1 + p;
    double* __restrict c3 = c2 + p;
    for (long k = 0; k < m; ++k) {
      const double f0 = a0[k], f1 = a1[k], f2 = a2[k], f3 = a3[k];
      const double* __restrict brow = b + k * p;
      for (long j = 0; j < p; ++j) {
        const double bj = brow[j];
        c0[j] += f0 * bj;
        c1[j] += f1 * bj;
        c2[j] += f2 * bj;
        c3[j] += f3 * bj;
      }
    }
  }
  for (; i < n; ++i) {
    const double* arow = a + i * m;
    double* __restrict crow = c + i * p;
    for (long k = 0; k < m; ++k) {
      const double aik = arow[k];
      const double* __restrict brow = b + k * p;
      for (long j = 0; j < p; ++j) crow[j] += aik * brow[j];
    }
  }
}

// C += A^T * B, A is n x m, B is n x p, C is m x p. Blocked over four A/B
// rows per pass so each C row is loaded once per block.
inline void matmul_at_b_accumulate(const double* a, const double* b, double* c, long n, long m, long p) {
  long i = 0;
  for (; i + 4 <= n; i += 4) {
    const double* a0 = a + i * m;
    const double* a1 = a0 + m;
    const double* a2 = a1 + m;
    const double* a3 = a2 + m;
    const double* __restrict b0 = b + i * p;
    const double* __restrict b1 = b0 + p;
    const double* __restrict b2 = b1 + p;
    const double* __restrict b3 = b2 + p;
    for (long k = 0; k < m; ++k) {
      const double f0 = a0[k], f1 = a1[k], f2 = a2[k], f3 = a3[k];
      double* __restrict crow = c + k * p;
      for (long j = 0; j < p; ++j) crow[j] += f0 * b0[j] + f1 * b1[j] + f2 * b2[j] + f3 * b3[j];
    }
  }
  for (; i < n; ++i) {
    const double* arow = a + i * m;
    const double* __restrict brow = b + i * p;
    for (long k = 0; k < m; ++k) {
      const double aik = arow[k];
      double* __restrict crow = c + k * p;
      for (long j = 0; j < p; ++j) crow[j] += aik * brow[j];
    }
  }
}

// C += A * B^T, A is n x m, B is p x m, C is n x p. B is transposed into a
// scratch buffer so the multiply reuses the blocked row kernel.
inline void matmul_a_bt_accumulate(const double* a, const double* b, double* c, long n, long m, long p) {
  static thread_local std::vector<double> bt;
  bt.resize(static_cast<std::size_t>(m * p));
  for (long j = 0; j < p; ++j)
    for (long k = 0; k < m; ++k) bt[static_cast<std::size_t>(k * p + j)] = b[j * m + k];
  matmul_accumulate(a, bt.data(), c, n, m, p);
}

// Named trainable (or tracked) tensor. Gradients accumulate across backward
// passes until zero_grad().
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
    grad = Tensor(value.shape());
  }

  void zero_grad() { grad.fill(0.0); }
};

// Owns parameters with stable addresses; iteration follows registration
// order, which keeps checkpoints and optimizer sweeps deterministic.
class ParameterStore {
 public:
  Parameter* add(const std::string& name, Tensor init) {
    for (const auto& p : params_)
      require(p->name != name, Errc::ConfigMismatch, "duplicate parameter " + name);
    params_.push_back(std::make_unique<Parameter>(name, std::move(init)));
    return params_.back().get();
  }

  Parameter* find(const std::string& name) const {
    for (const auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }

  std::vector<Parameter*> all() const {
    std::vector<Parameter*> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.get());
    return out;
  }

  std::vector<Parameter*> with_prefix(const std::string& prefix) const {
    std::vector<Parameter*> out;
    for (const auto& p : params_)
      if (p->name.rfind(prefix, 0) == 0) out.push_back(p.get());
    return out;
  }

  void zero_grads() {
    for (auto& p : params_) p->zero_grad();
  }

  std::size_t count() const { return params_.size(); }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

// Running statistics for one batch-norm layer. Not trainable; tracked so
// eval-mode forwards and checkpoints are reproducible.
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.9;

  explicit BatchNormState(long dim = 0) : running_mean(Tensor::vector(dim)), running_var(Tensor::vector(dim, 1.0)) {}
};

using IndexList = std::vector<long>;
// (row, segment) membership pairs for segment_mean.
using SegmentPairs = std::vector<std::pair<long, long>>;
// undirected edges; neighbor_sum adds both directions.
using EdgeList = std::vector<std::pair<long, long>>;

// Reverse-mode tape. Nodes are appended in construction order, which is a
// topological order, so backward() is a single reverse sweep.
class Tape {
  enum class Op {
    Constant,
    Param,
    MatMul,
    Add,
    AddRowVec,
    Scale,
    ScaleRows,
    ConcatCols,
    Relu,
    NeighborSum,
    SegmentMean,
    GatherRows,
    ScatterAddRows,
    ReplaceRows,
    BatchNorm,
    MseMasked,
    LogisticLoss,
    SquaredLoss,
  };

  struct Node {
    Op op;
    std::vector<int> inputs;
    Tensor value;
    Tensor grad;
    Parameter* param = nullptr;
    // op-specific payloads
    double scalar = 0.0;
    IndexList indices;
    SegmentPairs pairs;
    EdgeList edges;
    std::vector<double> row_scales;
    std::vector<long> segment_counts;
    long out_rows = 0;
    Tensor aux_a;  // batchnorm: xhat; mse: diff
    Tensor aux_b;  // batchnorm: inv_std
    bool flag = false;
  };

 public:
  using Id = int;

  Id constant(Tensor t) {
    Node n;
    n.op = Op::Constant;
    n.value = std::move(t);
    return push(std::move(n));
  }

  Id param(Parameter& p) {
    Node n;
    n.op = Op::Param;
    n.value = p.value;
    n.param = &p;
    return push(std::move(n));
  }

  const Tensor& value(Id id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Tensor& grad(Id id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

  // out = a * b
  Id matmul(Id a, Id b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require(ta.cols() == tb.rows(), Errc::ShapeMismatch,
            "matmul inner dims " + std::to_string(ta.cols()) + " vs " + std::to_string(tb.rows()));
    Node n;
    n.op = Op::MatMul;
    n.inputs = {a, b};
    n.value = Tensor::matrix(ta.rows(), tb.cols());
    matmul_accumulate(ta.data(), tb.data(), n.value.data(), ta.rows(), ta.cols(), tb.cols());
    return push(std::move(n));
  }

  Id add(Id a, Id b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require(ta.same_shape(tb), Errc::ShapeMismatch, "add shapes differ");
    Node n;
    n.op = Op::Add;
    n.inputs = {a, b};
    n.value = ta;
    for (long i = 0; i < n.value.size(); ++i) n.value[i] += tb[i];
    return push(std::move(n));
  }

  // out[i, :] = a[i, :] + v   (v is rank-1 of length cols)
  Id add_rowvec(Id a, Id v) {
    const Tensor& ta = value(a);
    const Tensor& tv = value(v);
    require(tv.rank() == 1 && tv.size() == ta.cols(), Errc::ShapeMismatch, "add_rowvec length");
    Node n;
    n.op = Op::AddRowVec;
    n.inputs = {a, v};
    n.value = ta;
    for (long r = 0; r < ta.rows(); ++r)
      for (long c = 0; c < ta.cols(); ++c) n.value.at(r, c) += tv[c];
    return push(std::move(n));
  }

  Id scale(Id a, double s) {
    Node n;
    n.op = Op::Scale;
    n.inputs = {a};
    n.scalar = s;
    n.value = value(a);
    for (long i = 0; i < n.value.size(); ++i) n.value[i] *= s;
    return push(std::move(n));
  }

  // out[i, :] = scales[i] * a[i, :]; scales are data, not differentiated.
  Id scale_rows(Id a, std::vector<double> scales) {
    const Tensor& ta = value(a);
    require(static_cast<long>(scales.size()) == ta.rows(), Errc::ShapeMismatch, "scale_rows length");
    Node n;
    n.op = Op::ScaleRows;
    n.inputs = {a};
    n.row_scales = std::move(scales);
    n.value = ta;
    for (long r = 0; r < ta.rows(); ++r)
      for (long c = 0; c < ta.cols(); ++c) n.value.at(r, c) *= n.row_scales[static_cast<std::size_t>(r)];
    return push(std::move(n));
  }

  // last-dim concat of two matrices with equal row counts
  Id concat_cols(Id a, Id b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require(ta.rows() == tb.rows(), Errc::ShapeMismatch, "concat rows differ");
    Node n;
    n.op = Op::ConcatCols;
    n.inputs = {a, b};
    n.value = Tensor::matrix(ta.rows(), ta.cols() + tb.cols());
    for (long r = 0; r < ta.rows(); ++r) {
      for (long c = 0; c < ta.cols(); ++c) n.value.at(r, c) = ta.at(r, c);
      for (long c = 0; c < tb.cols(); ++c) n.value.at(r, ta.cols() + c) = tb.at(r, c);
    }
    return push(std::move(n));
  }

  Id relu(Id a) {
    Node n;
    n.op = Op::Relu;
    n.inputs = {a};
    n.value = value(a);
    for (long i = 0; i < n.value.size(); ++i)
      if (n.value[i] < 0.0) n.value[i] = 0.0;
    return push(std::move(n));
  }

  // out[u, :] = sum over undirected neighbors v of a[v, :]
  Id neighbor_sum(Id a, EdgeList edges) {
    const Tensor& ta = value(a);
    Node n;
    n.op = Op::NeighborSum;
    n.inputs = {a};
    n.value = Tensor::matrix(ta.rows(), ta.cols());
    const long c = ta.cols();
    for (const auto& [u, v] : edges) {
      require(u >= 0 && v >= 0 && u < ta.rows() && v < ta.rows(), Errc::InvalidIndex, "neighbor_sum edge");
      for (long j = 0; j < c; ++j) n.value.at(u, j) += ta.at(v, j);
      for (long j = 0; j < c; ++j) n.value.at(v, j) += ta.at(u, j);
    }
    n.edges = std::move(edges);
    return push(std::move(n));
  }

  // out[s, :] = mean of a[r, :] over pairs (r, s). Every segment < nseg must
  // have at least one member.
  Id segment_mean(Id a, SegmentPairs pairs, long nseg) {
    const Tensor& ta = value(a);
    Node n;
    n.op = Op::SegmentMean;
    n.inputs = {a};
    n.value = Tensor::matrix(nseg, ta.cols());
    n.segment_counts.assign(static_cast<std::size_t>(nseg), 0);
    for (const auto& [r, s] : pairs) {
      require(r >= 0 && r < ta.rows(), Errc::InvalidIndex, "segment_mean row");
      require(s >= 0 && s < nseg, Errc::InvalidIndex, "segment_mean segment");
      n.segment_counts[static_cast<std::size_t>(s)]++;
    }
    for (long s = 0; s < nseg; ++s)
      require(n.segment_counts[static_cast<std::size_t>(s)] > 0, Errc::EmptySegment,
              "segment " + std::to_string(s) + " has no members");
    for (const auto& [r, s] : pairs)
      for (long j = 0; j < ta.cols(); ++j) n.value.at(s, j) += ta.at(r, j);
    for (long s = 0; s < nseg; ++s)
      for (long j = 0; j < ta.cols(); ++j) n.value.at(s, j) /= static_cast<double>(n.segment_counts[static_cast<std::size_t>(s)]);
    n.pairs = std::move(pairs);
    return push(std::move(n));
  }

  Id gather_rows(Id a, IndexList idx) {
    const Tensor& ta = value(a);
    Node n;
    n.op = Op::GatherRows;
    n.inputs = {a};
    n.value = Tensor::matrix(static_cast<long>(idx.size()), ta.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      require(idx[i] >= 0 && idx[i] < ta.rows(), Errc::InvalidIndex, "gather_rows index");
      for (long j = 0; j < ta.cols(); ++j) n.value.at(static_cast<long>(i), j) = ta.at(idx[i], j);
    }
    n.indices = std::move(idx);
    return push(std::move(n));
  }

  // out has out_rows rows; out[idx[i], :] += a[i, :]
  Id scatter_add_rows(Id a, IndexList idx, long out_rows) {
    const Tensor& ta = value(a);
    require(static_cast<long>(idx.size()) == ta.rows(), Errc::ShapeMismatch, "scatter_add_rows index count");
    Node n;
    n.op = Op::ScatterAddRows;
    n.inputs = {a};
    n.out_rows = out_rows;
    n.value = Tensor::matrix(out_rows, ta.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      require(idx[i] >= 0 && idx[i] < out_rows, Errc::InvalidIndex, "scatter_add_rows index");
      for (long j = 0; j < ta.cols(); ++j) n.value.at(idx[i], j) += ta.at(static_cast<long>(i), j);
    }
    n.indices = std::move(idx);
    return push(std::move(n));
  }

  // copy of a with rows at idx replaced by the rank-1 vector v
  Id replace_rows(Id a, Id v, IndexList idx) {
    const Tensor& ta = value(a);
    const Tensor& tv = value(v);
    require(tv.rank() == 1 && tv.size() == ta.cols(), Errc::ShapeMismatch, "replace_rows vector length");
    Node n;
    n.op = Op::ReplaceRows;
    n.inputs = {a, v};
    n.value = ta;
    for (long r : idx) {
      require(r >= 0 && r < ta.rows(), Errc::InvalidIndex, "replace_rows index");
      for (long j = 0; j < ta.cols(); ++j) n.value.at(r, j) = tv[j];
    }
    n.indices = std::move(idx);
    return push(std::move(n));
  }

  // Per-feature batch norm over rows. Train mode normalizes with batch
  // statistics and advances `state`; eval mode is an affine map using the
  // running statistics.
  Id batchnorm(Id x, Id gamma, Id beta, BatchNormState& state, bool train) {
    const Tensor& tx = value(x);
    const Tensor& tg = value(gamma);
    const Tensor& tb = value(beta);
    const long rows = tx.rows(), c = tx.cols();
    require(tg.size() == c && tb.size() == c, Errc::ShapeMismatch, "batchnorm gamma/beta length");
    require(state.running_mean.size() == c, Errc::ShapeMismatch, "batchnorm state dim");
    require(rows > 0, Errc::ShapeMismatch, "batchnorm on empty input");
    Node n;
    n.op = Op::BatchNorm;
    n.inputs = {x, gamma, beta};
    n.flag = train;
    n.value = Tensor::matrix(rows, c);
    n.aux_a = Tensor::matrix(rows, c);  // xhat
    n.aux_b = Tensor::vector(c);        // inv_std
    const double eps = 1e-5;
    Tensor mean = Tensor::vector(c), var = Tensor::vector(c);
    if (train) {
      for (long r = 0; r < rows; ++r)
        for (long j = 0; j < c; ++j) mean[j] += tx.at(r, j);
      for (long j = 0; j < c; ++j) mean[j] /= static_cast<double>(rows);
      for (long r = 0; r < rows; ++r)
        for (long j = 0; j < c; ++j) {
          double d = tx.at(r, j) - mean[j];
          var[j] += d * d;
        }
      for (long j = 0; j < c; ++j) var[j] /= static_cast<double>(rows);
      const double m = state.momentum;
      for (long j = 0; j < c; ++j) {
        state.running_mean[j] = m * state.running_mean[j] + (1.0 - m) * mean[j];
        state.running_var[j] = m * state.running_var[j] + (1.0 - m) * var[j];
      }
    } else {
      mean = state.running_mean;
      var = state.running_var;
    }
    for (long j = 0; j < c; ++j) n.aux_b[j] = 1.0 / std::sqrt(var[j] + eps);
    for (long r = 0; r < rows; ++r)
      for (long j = 0; j < c; ++j) {
        double xh = (tx.at(r, j) - mean[j]) * n.aux_b[j];
        n.aux_a.at(r, j) = xh;
        n.value.at(r, j) = tg[j] * xh + tb[j];
      }
    return push(std::move(n));
  }

  // scalar: mean over idx of squared row distance ||pred_i - target_i||^2;
  // empty idx gives 0.
  Id mse_masked(Id pred, Id target, IndexList idx) {
    const Tensor& tp = value(pred);
    const Tensor& tt = value(target);
    require(tp.same_shape(tt), Errc::ShapeMismatch, "mse_masked shapes differ");
    Node n;
    n.op = Op::MseMasked;
    n.inputs = {pred, target};
    n.aux_a = Tensor::matrix(tp.rows(), tp.cols());
    double total = 0.0;
    for (long r : idx) {
      require(r >= 0 && r < tp.rows(), Errc::InvalidIndex, "mse_masked index");
      for (long j = 0; j < tp.cols(); ++j) {
        double d = tp.at(r, j) - tt.at(r, j);
        n.aux_a.at(r, j) = d;
        total += d * d;
      }
    }
    n.value = Tensor::scalar(idx.empty() ? 0.0 : total / static_cast<double>(idx.size()));
    n.indices = std::move(idx);
    return push(std::move(n));
  }

  // scalar: mean over entries with mask != 0 of log(1 + exp(-(2y - 1) z)),
  // labels y in {0, 1}; entries with mask 0 (missing labels) contribute
  // nothing. An all-zero mask gives 0.
  Id logistic_loss(Id logits, Tensor labels, Tensor mask) {
    const Tensor& tz = value(logits);
    require(tz.same_shape(labels) && tz.same_shape(mask), Errc::ShapeMismatch, "logistic_loss shapes differ");
    Node n;
    n.op = Op::LogisticLoss;
    n.inputs = {logits};
    long k = 0;
    double total = 0.0;
    for (long i = 0; i < tz.size(); ++i) {
      if (mask[i] == 0.0) continue;
      ++k;
      const double z = tz[i];
      const double sgn = labels[i] > 0.5 ? 1.0 : -1.0;
      const double a = -sgn * z;
      // log(1 + exp(a)) without overflow
      total += a > 0.0 ? a + std::log1p(std::exp(-a)) : std::log1p(std::exp(a));
    }
    n.value = Tensor::scalar(k == 0 ? 0.0 : total / static_cast<double>(k));
    n.aux_a = std::move(labels);
    n.aux_b = std::move(mask);
    n.out_rows = k;
    return push(std::move(n));
  }

  // scalar: mean over entries with mask != 0 of (z - y)^2
  Id squared_loss(Id pred, Tensor target, Tensor mask) {
    const Tensor& tz = value(pred);
    require(tz.same_shape(target) && tz.same_shape(mask), Errc::ShapeMismatch, "squared_loss shapes differ");
    Node n;
    n.op = Op::SquaredLoss;
    n.inputs = {pred};
    long k = 0;
    double total = 0.0;
    for (long i = 0; i < tz.size(); ++i) {
      if (mask[i] == 0.0) continue;
      ++k;
      const double d = tz[i] - target[i];
      total += d * d;
    }
    n.value = Tensor::scalar(k == 0 ? 0.0 : total / static_cast<double>(k));
    n.aux_a = std::move(target);
    n.aux_b = std::move(mask);
    n.out_rows = k;
    return push(std::move(n));
  }

  // Seeds d(seed)/d(seed) = 1 and sweeps the tape once in reverse, adding
  // leaf gradients into their Parameter accumulators.
  void backward(Id seed) {
    auto& nodes = nodes_;
    for (auto& n : nodes) n.grad = Tensor(n.value.shape());
    Node& s = nodes[static_cast<std::size_t>(seed)];
    require(s.value.size() == 1, Errc::ShapeMismatch, "backward seed must be scalar");
    s.grad[0] = 1.0;
    for (int id = seed; id >= 0; --id) {
      Node& n = nodes[static_cast<std::size_t>(id)];
      bool any = false;
      for (long i = 0; i < n.grad.size() && !any; ++i) any = n.grad[i] != 0.0;
      if (!any && n.op != Op::Param) continue;
      backward_node(n);
    }
  }

  void backward_node(Node& n) {
    switch (n.op) {
      case Op::Constant:
        break;
      case Op::Param:
        if (n.param)
          for (long i = 0; i < n.grad.size(); ++i) n.param->grad[i] += n.grad[i];
        break;
      case Op::MatMul: {
        Node& a = nodes_[static_cast<std::size_t>(n.inputs[0])];
        Node& b = nodes_[static_cast<std::size_t>(n.inputs[1])];
        // dA += dC * B^T ; dB += A^T * dC
        matmul_a_bt_accumulate(n.grad.data(), b.value.data(), a.grad.data(), a.value.rows(), b.value.cols(),
                               b.value.rows());
        matmul_at_b_accumulate(a.value.data(), n.grad.data(), b.grad.data(), a.value.rows(), a.value.cols(),
                               n.grad.cols());
        break;
      }
      case Op::Add: {
        Node& a = nodes_[static_cast<std::size_t>(n.inputs[0])];
        Node& b = nodes_[static_cast<std::size_t>(n.inputs[1])];
        for (long i = 0; i < n.grad.size(); ++i) {
          a.grad[i] += n.grad[i];
          b.grad[i] += n.grad[i];
        }
        break;
      }
      case Op::AddRowVec: {
        Node& a = nodes_[static_cast<std::size_t>(n.inputs[0])];
        Node& v = nodes_[static_cast<std::size_t>(n.inputs[1])];
        for (long i = 0; i < n.grad.size(); ++i) a.grad[i] += n.grad[i];
        for (long r = 0; r < n.grad.rows(); ++r)
          for (long c = 0; c < n.grad.cols(); ++c) v.grad[c] += n.grad.at(r, c);
        break;
      }
      case Op::Scale: {
        Node& a = nodes_[static_cast<std::size_t>(n.inputs[0])];
        for (long i = 0; i < n.grad.size(); ++i) a.grad[i] += n.scalar * n.grad[i];
        break;
      }
      case Op::ScaleRows: {
        Node& a = nodes_[static_cast<std::size_t>(n.inputs[0])];
        for (long r = 0; r < n.grad.rows(); ++r)
          for (long c = 0; c < n.grad.cols(); ++c)
            a.grad.at(r, c) += n.row_scales[static_cast<std::size_t>(r)] * n.grad.at(r, c);
        break;
      }
      case Op::ConcatCols: {
        Node& a = nodes_[static_cast<std::size_t>(n.inputs[0])];
        Node& b = nodes_[static_cast<std::size_t>(n.inputs[1])];
        const long ca = a.value.cols();
        for (long r = 0; r < n.grad.rows(); ++r) {
          for (long c = 0; c < ca; ++c) a.grad.at(r, c) += n.grad.at(r, c);
          for (long c = 0; c < b.value.cols(); ++c) b.grad.at(r, c) += n.grad.at(r, ca + c);
        }
        break;
      }
      case Op::Relu: {
        Node& a = nodes_[static_cast<std::size_t>(n.inputs[0])];
        for (long i = 0; i < n.grad.size(); ++i)
          if (a.value[i] > 0.0) a.grad[i] += n.grad[i];
        break;
      }
      case Op::NeighborSum: {
        Node& a = nodes_[static_cast<std::size_t>(n.inputs[0])];
        const long c = n.grad.cols();
        for (const auto& [u, v] : n.edges) {
          for (long j = 0; j < c; ++j) a.grad.at(v, j) += n.grad.at(u, j);
          for (long j = 0; j < c; ++j) a.grad.at(u, j) += n.grad.at(v, j);
        }
        break;
      }
      case Op::SegmentMean: {
        Node& a = nodes_[static_cast<std::size_t>(n.inputs[0])];
        for (const auto& [r, s] : n.pairs) {
          const double inv = 1.0 / static_cast<double>(n.segment_counts[static_cast<std::size_t>(s)]);
          for (long j = 0; j < n.grad.cols(); ++j) a.grad.at(r, j) += inv * n.grad.at(s, j);
        }
        break;
      }
      case Op::GatherRows: {
        Node& a = nodes_[static_cast<std::size_t>(n.inputs[0])];
        for (std::size_t i = 0; i < n.indices.size(); ++i)
          for (long j = 0; j < n.grad.cols(); ++j) a.grad.at(n.indices[i], j) += n.grad.at(static_cast<long>(i), j);
        break;
      }
      case Op::ScatterAddRows: {
        Node& a = nodes_[static_cast<std::size_t>(n.inputs[0])];
        for (std::size_t i = 0; i < n.indices.size(); ++i)
          for (long j = 0; j < n.grad.cols(); ++j) a.grad.at(static_cast<long>(i), j) += n.grad.at(n.indices[i], j);
        break;
      }
      case Op::ReplaceRows: {
        Node& a = nodes_[static_cast<std::size_t>(n.inputs[0])];
        Node& v = nodes_[static_cast<std::size_t>(n.inputs[1])];
        std::vector<bool> replaced(static_cast<std::size_t>(n.grad.rows()), false);
        for (long r : n.indices) replaced[static_cast<std::size_t>(r)] = true;
        for (long r = 0; r < n.grad.rows(); ++r) {
          if (replaced[static_cast<std::size_t>(r)]) {
            for (long j = 0; j < n.grad.cols(); ++j) v.grad[j] += n.grad.at(r, j);
          } else {
            for (long j = 0; j < n.grad.cols(); ++j) a.grad.at(r, j) += n.grad.at(r, j);
          }
        }
        break;
      }
      case Op::BatchNorm: {
        Node& x = nodes_[static_cast<std::size_t>(n.inputs[0])];
        Node& g = nodes_[static_cast<std::size_t>(n.inputs[1])];
        Node& b = nodes_[static_cast<std::size_t>(n.inputs[2])];
        const long rows = n.value.rows(), c = n.value.cols();
        const Tensor& gamma = g.value;
        for (long r = 0; r < rows; ++r)
          for (long j = 0; j < c; ++j) {
            g.grad[j] += n.grad.at(r, j) * n.aux_a.at(r, j);
            b.grad[j] += n.grad.at(r, j);
          }
        if (!n.flag) {
          // eval mode: y is affine in x
          for (long r = 0; r < rows; ++r)
            for (long j = 0; j < c; ++j) x.grad.at(r, j) += n.grad.at(r, j) * gamma[j] * n.aux_b[j];
          break;
        }
        // train mode: propagate through batch mean/var
        Tensor sum_dy = Tensor::vector(c), sum_dy_xhat = Tensor::vector(c);
        for (long r = 0; r < rows; ++r)
          for (long j = 0; j < c; ++j) {
            const double dyh = n.grad.at(r, j) * gamma[j];
            sum_dy[j] += dyh;
            sum_dy_xhat[j] += dyh * n.aux_a.at(r, j);
          }
        const double inv_n = 1.0 / static_cast<double>(rows);
        for (long r = 0; r < rows; ++r)
          for (long j = 0; j < c; ++j) {
            const double dyh = n.grad.at(r, j) * gamma[j];
            x.grad.at(r, j) +=
                n.aux_b[j] * (dyh - inv_n * sum_dy[j] - n.aux_a.at(r, j) * inv_n * sum_dy_xhat[j]);
          }
        break;
      }
      case Op::MseMasked: {
        Node& p = nodes_[static_cast<std::size_t>(n.inputs[0])];
        Node& t = nodes_[static_cast<std::size_t>(n.inputs[1])];
        if (n.indices.empty()) break;
        const double scale = 2.0 / static_cast<double>(n.indices.size()) * n.grad[0];
        for (long r : n.indices)
          for (long j = 0; j < p.grad.cols(); ++j) {
            const double d = scale * n.aux_a.at(r, j);
            p.grad.at(r, j) += d;
            t.grad.at(r, j) -= d;
          }
        break;
      }
      case Op::LogisticLoss: {
        Node& z = nodes_[static_cast<std::size_t>(n.inputs[0])];
        if (n.out_rows == 0) break;
        const double scale = n.grad[0] / static_cast<double>(n.out_rows);
        for (long i = 0; i < z.grad.size(); ++i) {
          if (n.aux_b[i] == 0.0) continue;
          const double sigma = 1.0 / (1.0 + std::exp(-z.value[i]));
          z.grad[i] += scale * (sigma - n.aux_a[i]);
        }
        break;
      }
      case Op::SquaredLoss: {
        Node& z = nodes_[static_cast<std::size_t>(n.inputs[0])];
        if (n.out_rows == 0) break;
        const double scale = 2.0 * n.grad[0] / static_cast<double>(n.out_rows);
        for (long i = 0; i < z.grad.size(); ++i) {
          if (n.aux_b[i] == 0.0) continue;
          z.grad[i] += scale * (z.value[i] - n.aux_a[i]);
        }
        break;
      }
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  Id push(Node&& n) {
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

// Uniform in +-sqrt(6 / (fan_in + fan_out)) for a rows x cols weight.
inline Tensor glorot_init(long rows, long cols, Rng& rng) {
  require(rows > 0 && cols > 0, Errc::ShapeMismatch, "glorot_init needs a 2-D shape");
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Tensor t = Tensor::matrix(rows, cols);
  for (long i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void init(const std::vector<Parameter*>& params) {
    m.clear();
    v.clear();
    for (const Parameter* p : params) {
      m.emplace_back(p->value.shape());
      v.emplace_back(p->value.shape());
    }
    step = 0;
  }
};

// Bias-corrected Adam over `params`, reading each Parameter's grad.
inline void adam_step(const std::vector<Parameter*>& params, AdamState& state, double lr) {
  require(params.size() == state.m.size(), Errc::ShapeMismatch, "adam state size");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    require(p.value.same_shape(state.m[i]), Errc::ShapeMismatch, "adam moment shape for " + p.name);
    for (long j = 0; j < p.value.size(); ++j) {
      const double g = p.grad[j];
      state.m[i][j] = state.beta1 * state.m[i][j] + (1.0 - state.beta1) * g;
      state.v[i][j] = state.beta2 * state.v[i][j] + (1.0 - state.beta2) * g * g;
      const double mhat = state.m[i][j] / bc1;
      const double vhat = state.v[i][j] / bc2;
      p.value[j] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

// target <- tau * target + (1 - tau) * source, elementwise over paired lists.
inline void ema_update(const std::vector<Parameter*>& target, const std::vector<Parameter*>& source, double tau) {
  require(target.size() == source.size(), Errc::ShapeMismatch, "ema list sizes differ");
  for (std::size_t i = 0; i < target.size(); ++i) {
    Parameter& t = *target[i];
    const Parameter& s = *source[i];
    require(t.value.same_shape(s.value), Errc::ShapeMismatch, "ema shape for " + t.name);
    for (long j = 0; j < t.value.size(); ++j) t.value[j] = tau * t.value[j] + (1.0 - tau) * s.value[j];
  }
}

}  // namespace graspn
