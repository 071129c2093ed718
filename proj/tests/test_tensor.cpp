#include <cmath>
#include <functional>

#include "doctest.h"
#include "graspn/rng.hpp"
#include "graspn/tensor.hpp"
#include "support/gradcheck.hpp"

using namespace graspn;

namespace {

Tensor random_tensor(std::vector<long> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (long i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// keep relu inputs away from the kink so finite differences stay clean
Tensor random_tensor_off_zero(std::vector<long> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (long i = 0; i < t.size(); ++i) {
    const double mag = rng.uniform(0.2, 1.2);
    t[i] = rng.bernoulli(0.5) ? mag : -mag;
  }
  return t;
}

IndexList all_rows(long n) {
  IndexList idx;
  for (long i = 0; i < n; ++i) idx.push_back(i);
  return idx;
}

}  // namespace

TEST_CASE("matmul against identity") {
  Tape t;
  Rng rng(3);
  Tensor x = random_tensor({3, 5}, rng);
  Tape::Id xi = t.constant(x);
  Tape::Id out = t.matmul(t.constant(Tensor::identity(3)), xi);
  CHECK(t.value(out) == x);
  Tape::Id bad = t.constant(Tensor::matrix(4, 2));
  CHECK_THROWS_AS((void)t.matmul(xi, bad), Error);
}

TEST_CASE("relu forward and backward values") {
  Tape t;
  Parameter p("x", Tensor::vector(2));
  p.value[0] = -1.0;
  p.value[1] = 2.0;
  Tape::Id x = t.param(p);
  Tape::Id y = t.relu(x);
  CHECK(t.value(y)[0] == 0.0);
  CHECK(t.value(y)[1] == 2.0);
  Tape::Id loss = t.mse_masked(y, t.constant(Tensor::vector(2)), {0});
  t.backward(loss);
  // loss = ||relu(x)||^2 over the single row; d/dx0 = 0, d/dx1 = 2*2
  CHECK(p.grad[0] == 0.0);
  CHECK(p.grad[1] == doctest::Approx(4.0));
}

TEST_CASE("segment_mean of identical rows returns the row") {
  Tape t;
  Tensor x = Tensor::matrix(3, 4);
  for (long r = 0; r < 3; ++r)
    for (long c = 0; c < 4; ++c) x.at(r, c) = 0.5 * static_cast<double>(c) - 1.0;
  Tape::Id out = t.segment_mean(t.constant(x), {{0, 0}, {1, 0}, {2, 0}}, 1);
  for (long c = 0; c < 4; ++c) CHECK(t.value(out).at(0, c) == doctest::Approx(x.at(0, c)));
  CHECK_THROWS_AS((void)t.segment_mean(t.constant(x), {{0, 0}}, 2), Error);
}

TEST_CASE("mse_masked arithmetic") {
  Tape t;
  Tensor pred = Tensor::matrix(2, 3);
  pred.at(1, 0) = 1.0;
  Tape::Id loss = t.mse_masked(t.constant(pred), t.constant(Tensor::matrix(2, 3)), {1});
  CHECK(t.value(loss).item() == doctest::Approx(1.0));
  Tape::Id empty = t.mse_masked(t.constant(pred), t.constant(Tensor::matrix(2, 3)), {});
  CHECK(t.value(empty).item() == 0.0);
}

TEST_CASE("every op matches central finite differences") {
  Rng rng(17);
  const double tol = 1e-4;

  // per-op fixture: parameters feed a tape, output reduces to a scalar with
  // mse_masked over all rows; one backward pass fills grads, then the
  // finite-difference oracle re-evaluates the forward value only
  auto check_op = [&](const char* name, std::vector<Parameter*> params,
                      const std::function<Tape::Id(Tape&)>& build) {
    auto reduce = [&](Tape& t, Tape::Id out) {
      const Tensor& v = t.value(out);
      return v.size() == 1 ? out : t.mse_masked(out, t.constant(Tensor(v.shape())), all_rows(v.rows()));
    };
    for (Parameter* p : params) p->zero_grad();
    {
      Tape t;
      t.backward(reduce(t, build(t)));
    }
    auto forward = [&]() {
      Tape t;
      return t.value(reduce(t, build(t))).item();
    };
    gradcheck::Result r = gradcheck::check(params, forward);
    CAPTURE(name);
    CAPTURE(r.worst);
    CHECK(r.max_rel_error < tol);
  };

  Parameter a("a", random_tensor({4, 3}, rng));
  Parameter b("b", random_tensor({3, 5}, rng));
  check_op("matmul", {&a, &b}, [&](Tape& t) { return t.matmul(t.param(a), t.param(b)); });

  Parameter c("c", random_tensor({4, 3}, rng));
  check_op("add", {&a, &c}, [&](Tape& t) { return t.add(t.param(a), t.param(c)); });

  Parameter v("v", random_tensor({3}, rng));
  check_op("add_rowvec", {&a, &v}, [&](Tape& t) { return t.add_rowvec(t.param(a), t.param(v)); });

  check_op("scale", {&a}, [&](Tape& t) { return t.scale(t.param(a), -1.7); });

  check_op("scale_rows", {&a}, [&](Tape& t) { return t.scale_rows(t.param(a), {2.0, -0.5, 3.0, 1.0}); });

  Parameter d("d", random_tensor({4, 2}, rng));
  check_op("concat_cols", {&a, &d}, [&](Tape& t) { return t.concat_cols(t.param(a), t.param(d)); });

  Parameter e("e", random_tensor_off_zero({4, 3}, rng));
  check_op("relu", {&e}, [&](Tape& t) { return t.relu(t.param(e)); });

  EdgeList edges = {{0, 1}, {1, 2}, {2, 3}, {0, 3}, {1, 3}};
  check_op("neighbor_sum", {&a}, [&](Tape& t) { return t.neighbor_sum(t.param(a), edges); });

  SegmentPairs pairs = {{0, 0}, {1, 0}, {2, 1}, {3, 1}, {1, 1}};
  check_op("segment_mean", {&a}, [&](Tape& t) { return t.segment_mean(t.param(a), pairs, 2); });

  check_op("gather_rows", {&a}, [&](Tape& t) { return t.gather_rows(t.param(a), {2, 0, 2}); });

  check_op("scatter_add_rows", {&a}, [&](Tape& t) { return t.scatter_add_rows(t.param(a), {1, 0, 1, 4}, 5); });

  Parameter tok("tok", random_tensor({3}, rng));
  check_op("replace_rows", {&a, &tok}, [&](Tape& t) { return t.replace_rows(t.param(a), t.param(tok), {1, 3}); });

  Parameter gamma("gamma", random_tensor({3}, rng, 0.5, 1.5));
  Parameter beta("beta", random_tensor({3}, rng));
  BatchNormState bn_state(3);
  check_op("batchnorm_train", {&a, &gamma, &beta}, [&](Tape& t) {
    return t.batchnorm(t.param(a), t.param(gamma), t.param(beta), bn_state, true);
  });
  check_op("batchnorm_eval", {&a, &gamma, &beta}, [&](Tape& t) {
    return t.batchnorm(t.param(a), t.param(gamma), t.param(beta), bn_state, false);
  });

  Parameter pm("pm", random_tensor({4, 3}, rng));
  Parameter pt("pt", random_tensor({4, 3}, rng));
  check_op("mse_masked", {&pm, &pt}, [&](Tape& t) { return t.mse_masked(t.param(pm), t.param(pt), {0, 2}); });

  Tensor labels = Tensor::matrix(4, 2);
  Tensor lmask = Tensor::matrix(4, 2);
  for (long i = 0; i < labels.size(); ++i) {
    labels[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    lmask[i] = rng.bernoulli(0.75) ? 1.0 : 0.0;
  }
  Parameter logits("logits", random_tensor({4, 2}, rng));
  check_op("logistic_loss", {&logits},
           [&](Tape& t) { return t.logistic_loss(t.param(logits), labels, lmask); });
  Rng target_rng(5);
  Tensor sq_target = random_tensor({4, 2}, target_rng);
  check_op("squared_loss", {&logits},
           [&](Tape& t) { return t.squared_loss(t.param(logits), sq_target, lmask); });
}

TEST_CASE("three random composite graphs match finite differences") {
  for (std::uint64_t seed : {101ull, 202ull, 303ull}) {
    Rng rng(seed);
    Parameter w1("w1", random_tensor({6, 4}, rng));
    Parameter w2("w2", random_tensor({4, 4}, rng));
    Parameter bias("bias", random_tensor({4}, rng));
    Parameter gamma("gamma", random_tensor({4}, rng, 0.5, 1.5));
    Parameter beta("beta", random_tensor({4}, rng));
    Parameter tok("tok", random_tensor({4}, rng));
    BatchNormState bn(4);
    Tensor x = random_tensor({5, 6}, rng);
    EdgeList edges = {{0, 1}, {1, 2}, {3, 4}, {0, 4}};
    SegmentPairs seg = {{0, 0}, {1, 0}, {2, 1}, {3, 1}, {4, 1}, {1, 1}};
    Tensor target = random_tensor({2, 8}, rng);

    auto build = [&](Tape& t) {
      Tape::Id h = t.add_rowvec(t.matmul(t.constant(x), t.param(w1)), t.param(bias));
      h = t.replace_rows(h, t.param(tok), {2});
      h = t.add(t.scale(h, 1.3), t.neighbor_sum(h, edges));
      h = t.relu(t.matmul(h, t.param(w2)));
      h = t.batchnorm(h, t.param(gamma), t.param(beta), bn, true);
      Tape::Id pooled = t.segment_mean(h, seg, 2);
      Tape::Id joined = t.concat_cols(pooled, t.gather_rows(h, {0, 3}));
      return t.mse_masked(joined, t.constant(target), {0, 1});
    };
    std::vector<Parameter*> params = {&w1, &w2, &bias, &gamma, &beta, &tok};
    for (Parameter* p : params) p->zero_grad();
    {
      Tape t;
      t.backward(build(t));
    }
    auto forward = [&]() {
      Tape t;
      return t.value(build(t)).item();
    };
    gradcheck::Result r = gradcheck::check(params, forward);
    CAPTURE(seed);
    CAPTURE(r.worst);
    CHECK(r.max_rel_error < 1e-4);
    CHECK(r.checked > 0);
  }
}

TEST_CASE("backward is linear in the loss") {
  Rng rng(7);
  Parameter w("w", random_tensor({3, 3}, rng));
  Tensor x = random_tensor({2, 3}, rng);
  Tensor t1 = random_tensor({2, 3}, rng);
  Tensor t2 = random_tensor({2, 3}, rng);
  const double ca = 1.7, cb = -0.6;

  auto grads_of = [&](const std::function<Tape::Id(Tape&)>& build) {
    w.zero_grad();
    Tape t;
    t.backward(build(t));
    return w.grad;
  };
  auto f = [&](Tape& t) { return t.mse_masked(t.matmul(t.constant(x), t.param(w)), t.constant(t1), {0, 1}); };
  auto g = [&](Tape& t) { return t.mse_masked(t.matmul(t.constant(x), t.param(w)), t.constant(t2), {1}); };
  Tensor gf = grads_of(f);
  Tensor gg = grads_of(g);
  Tensor combined = grads_of([&](Tape& t) { return t.add(t.scale(f(t), ca), t.scale(g(t), cb)); });
  for (long i = 0; i < combined.size(); ++i)
    CHECK(combined[i] == doctest::Approx(ca * gf[i] + cb * gg[i]).epsilon(1e-10));
}

TEST_CASE("glorot_init: bounds, mean, determinism") {
  Rng rng(42);
  const long rows = 200, cols = 300;
  Tensor t = glorot_init(rows, cols, rng);
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  double mean = 0.0;
  for (long i = 0; i < t.size(); ++i) {
    CHECK(std::fabs(t[i]) <= bound);
    mean += t[i];
  }
  mean /= static_cast<double>(t.size());
  // 3 sigma of the sample mean for uniform(-b, b): sigma = b / sqrt(3 n)
  const double sigma = bound / std::sqrt(3.0 * static_cast<double>(t.size()));
  CHECK(std::fabs(mean) < 3.0 * sigma);

  Rng r1(9), r2(9);
  CHECK(glorot_init(8, 16, r1) == glorot_init(8, 16, r2));
}

TEST_CASE("adam: zero gradient leaves parameters untouched") {
  Parameter p("p", Tensor::vector(4, 1.5));
  AdamState st;
  st.init({&p});
  Tensor before = p.value;
  adam_step({&p}, st, 0.1);
  CHECK(p.value == before);
  CHECK(st.step == 1);
  adam_step({&p}, st, 0.1);
  CHECK(st.step == 2);
}

TEST_CASE("adam first step from zero state is -lr * sign(g)") {
  Parameter p("p", Tensor::vector(2));
  p.value[0] = 0.7;
  p.value[1] = -0.2;
  p.grad[0] = 1.0;
  p.grad[1] = -1.0;
  AdamState st;
  st.init({&p});
  const double lr = 0.05;
  adam_step({&p}, st, lr);
  CHECK(p.value[0] == doctest::Approx(0.7 - lr).epsilon(1e-6));
  CHECK(p.value[1] == doctest::Approx(-0.2 + lr).epsilon(1e-6));
}

TEST_CASE("ema_update arithmetic") {
  Parameter t1("t", Tensor::vector(3, 1.0));
  Parameter s1("s", Tensor::vector(3, 0.0));
  ema_update({&t1}, {&s1}, 1.0);
  CHECK(t1.value == Tensor::vector(3, 1.0));
  ema_update({&t1}, {&s1}, 0.0);
  CHECK(t1.value == Tensor::vector(3, 0.0));
  Parameter t2("t2", Tensor::vector(1, 1.0));
  Parameter s2("s2", Tensor::vector(1, 0.0));
  ema_update({&t2}, {&s2}, 0.996);
  CHECK(t2.value[0] == doctest::Approx(0.996).epsilon(1e-15));
}

TEST_CASE("rng streams are deterministic") {
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(124);
  CHECK(a.next_u64() != c.next_u64());
}
