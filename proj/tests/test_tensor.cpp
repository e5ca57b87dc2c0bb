#include "doctest.h"

#include <cmath>
#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"

using namespace graphrep;

namespace {

// Independent triple-loop product used as the matmul oracle.
Tensor mm_ref(const Tensor& a, const Tensor& b) {
  Tensor out(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < b.cols; ++j) {
      double acc = 0.0;
      for (int k = 0; k < a.cols; ++k) acc += a(i, k) * b(k, j);
      out(i, j) = acc;
    }
  return out;
}

Tensor random_tensor(Rng& rng, int r, int c) {
  Tensor t(r, c);
  for (double& x : t.data) x = rng.uniform(-2.0, 2.0);
  return t;
}

}  // namespace

TEST_CASE("matmul matches hand cases and a brute-force oracle") {
  Tape tape;
  Value eye = tape.constant(Tensor::from_rows({{1, 0}, {0, 1}}));
  Value m = tape.constant(Tensor::from_rows({{3, 4}, {5, 6}}));
  const Tensor& prod = tape.value(tape.matmul(eye, m));
  CHECK(prod(0, 0) == 3.0);
  CHECK(prod(0, 1) == 4.0);
  CHECK(prod(1, 0) == 5.0);
  CHECK(prod(1, 1) == 6.0);

  Value r = tape.constant(Tensor::from_rows({{1, 2}}));
  Value c = tape.constant(Tensor::from_rows({{3}, {4}}));
  CHECK(tape.value(tape.matmul(r, c))(0, 0) == 11.0);

  Rng rng(42);
  Tensor a = random_tensor(rng, 3, 4);
  Tensor b = random_tensor(rng, 4, 2);
  Tensor expect = mm_ref(a, b);
  const Tensor& got = tape.value(tape.matmul(tape.constant(a), tape.constant(b)));
  for (int i = 0; i < expect.size(); ++i) CHECK(got.data[i] == doctest::Approx(expect.data[i]).epsilon(1e-14));
}

TEST_CASE("matmul rejects mismatched shapes naming both") {
  Tape tape;
  Value a = tape.constant(Tensor(3, 4));
  Value b = tape.constant(Tensor(5, 2));
  CHECK_THROWS_WITH_AS(tape.matmul(a, b), doctest::Contains("3x4"), ShapeError);
}

TEST_CASE("elementwise kinds") {
  Tape tape;
  Value z = tape.constant(Tensor(1, 1));
  CHECK(tape.value(tape.elementwise(EwKind::Sigmoid, z))(0, 0) == 0.5);

  Value v = tape.constant(Tensor::from_rows({{-1, 2}}));
  const Tensor& r = tape.value(tape.elementwise(EwKind::Relu, v));
  CHECK(r(0, 0) == 0.0);
  CHECK(r(0, 1) == 2.0);

  // -logsigmoid(0) = ln 2
  const Tensor& ls = tape.value(tape.logsigmoid(z));
  CHECK(-ls(0, 0) == doctest::Approx(0.6931471805599453).epsilon(1e-15));

  // stable for large magnitudes
  Value big = tape.constant(Tensor::from_rows({{-1000.0, 1000.0}}));
  const Tensor& lb = tape.value(tape.logsigmoid(big));
  CHECK(lb(0, 0) == doctest::Approx(-1000.0));
  CHECK(lb(0, 1) == doctest::Approx(0.0));
  CHECK(tape.value(tape.sigmoid(big)).all_finite());

  Value x = tape.constant(Tensor::from_rows({{1, 2}}));
  Value y = tape.constant(Tensor::from_rows({{3, 5}}));
  CHECK(tape.value(tape.elementwise(EwKind::Add, x, y))(0, 1) == 7.0);
  CHECK(tape.value(tape.elementwise(EwKind::Hadamard, x, y))(0, 1) == 10.0);
  Value bad = tape.constant(Tensor(1, 3));
  CHECK_THROWS_AS(tape.add(x, bad), ShapeError);
  CHECK_THROWS_AS(tape.elementwise(EwKind::Add, x), ConfigError);
}

TEST_CASE("layer_norm normalizes rows") {
  Tape tape;
  Value gamma = tape.constant(Tensor::from_rows({{1, 1, 1}}));
  Value beta = tape.constant(Tensor(1, 3));
  Value x = tape.constant(Tensor::from_rows({{1, 1, 1}}));
  const Tensor& out = tape.value(tape.layer_norm(x, gamma, beta));
  for (int j = 0; j < 3; ++j) CHECK(out(0, j) == doctest::Approx(0.0));

  Tape t2;
  Value g2 = t2.constant(Tensor::from_rows({{1, 1}}));
  Value b2 = t2.constant(Tensor(1, 2));
  Value x2 = t2.constant(Tensor::from_rows({{1, 3}}));
  const Tensor& o2 = t2.value(t2.layer_norm(x2, g2, b2, 1e-12));
  CHECK(o2(0, 0) == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(o2(0, 1) == doctest::Approx(1.0).epsilon(1e-9));

  // derived: recompute output moments
  Rng rng(7);
  Tape t3;
  Value g3 = t3.constant(Tensor(1, 16, 1.0));
  Value b3 = t3.constant(Tensor(1, 16));
  Tensor xr = random_tensor(rng, 1, 16);
  const Tensor& o3 = t3.value(t3.layer_norm(t3.constant(xr), g3, b3, 1e-12));
  double mean = 0.0, var = 0.0;
  for (int j = 0; j < 16; ++j) mean += o3(0, j);
  mean /= 16;
  for (int j = 0; j < 16; ++j) var += (o3(0, j) - mean) * (o3(0, j) - mean);
  var /= 16;
  CHECK(std::fabs(mean) < 1e-9);
  CHECK(std::fabs(var - 1.0) < 1e-9);
}

TEST_CASE("l2_normalize_rows") {
  Tape tape;
  Value x = tape.constant(Tensor::from_rows({{3, 4}}));
  const Tensor& out = tape.value(tape.l2_normalize_rows(x));
  CHECK(out(0, 0) == doctest::Approx(0.6));
  CHECK(out(0, 1) == doctest::Approx(0.8));

  Value z = tape.constant(Tensor(2, 3));
  const Tensor& oz = tape.value(tape.l2_normalize_rows(z));
  CHECK(oz.all_finite());
  for (double v : oz.data) CHECK(v == 0.0);

  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Tape t;
    Tensor xr = random_tensor(rng, 4, 6);
    const Tensor& o = t.value(t.l2_normalize_rows(t.constant(xr)));
    for (int i = 0; i < o.rows; ++i) {
      double sq = 0.0;
      for (int j = 0; j < o.cols; ++j) sq += o(i, j) * o(i, j);
      CHECK(std::fabs(std::sqrt(sq) - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("grouped_linear: g=1 is a dense layer bit-for-bit") {
  Rng rng(11);
  Tensor x = random_tensor(rng, 5, 8);
  Tensor w = random_tensor(rng, 8, 12);
  Tensor b = random_tensor(rng, 1, 12);

  Tape t1;
  const Tensor& dense =
      t1.value(t1.add_rowvec(t1.matmul(t1.constant(x), t1.constant(w)), t1.constant(b)));
  Tape t2;
  const Tensor& grouped =
      t2.value(t2.grouped_linear(t2.constant(x), t2.constant(w), t2.constant(b), 1));
  REQUIRE(dense.same_shape(grouped));
  for (int i = 0; i < dense.size(); ++i) CHECK(dense.data[i] == grouped.data[i]);
}

TEST_CASE("grouped_linear: weight footprint shrinks by the group factor") {
  // d_in=8, d_out=32: g=8 stores one (1x4) block per group.
  Tensor w_g8(8, 4);
  Tensor w_g1(8, 32);
  CHECK(w_g8.size() * 8 == w_g1.size());
  CHECK(w_g8.size() == 32);
  CHECK(w_g1.size() == 256);
}

TEST_CASE("grouped_linear equals matmul with an assembled block-diagonal weight") {
  Rng rng(13);
  const int g = 2, d_in = 6, d_out = 10;
  Tensor x = random_tensor(rng, 4, d_in);
  Tensor w = random_tensor(rng, d_in, d_out / g);  // row block j = group j
  Tensor b(1, d_out);

  Tensor block_diag(d_in, d_out);
  const int in_per = d_in / g, out_per = d_out / g;
  for (int j = 0; j < g; ++j)
    for (int r = 0; r < in_per; ++r)
      for (int c = 0; c < out_per; ++c)
        block_diag(j * in_per + r, j * out_per + c) = w(j * in_per + r, c);

  Tape t1;
  const Tensor& got = t1.value(t1.grouped_linear(t1.constant(x), t1.constant(w), t1.constant(b), g));
  Tensor expect = mm_ref(x, block_diag);
  for (int i = 0; i < expect.size(); ++i)
    CHECK(got.data[i] == doctest::Approx(expect.data[i]).epsilon(1e-14));

  Tape t2;
  CHECK_THROWS_AS(t2.grouped_linear(t2.constant(Tensor(2, 7)), t2.constant(Tensor(7, 2)),
                                    t2.constant(Tensor(1, 4)), 2),
                  ConfigError);
}

TEST_CASE("backward: linear map, chain rule, and shape guards") {
  // loss = sum(W x), x fixed -> dW = x^T broadcast to each row
  {
    Tape tape;
    Value w = tape.leaf(Tensor::from_rows({{1, 2, 3}, {4, 5, 6}}));
    Value x = tape.constant(Tensor::from_rows({{0.5}, {-1.0}, {2.0}}));
    Value loss = tape.sum_all(tape.matmul(w, x));
    Gradients g = tape.backward(loss);
    const Tensor& dw = g.at(w);
    for (int i = 0; i < 2; ++i) {
      CHECK(dw(i, 0) == 0.5);
      CHECK(dw(i, 1) == -1.0);
      CHECK(dw(i, 2) == 2.0);
    }
  }
  // loss = sigmoid(w)*sigmoid(w) at w=0 -> grad = 2 * 0.5 * 0.25 = 0.25
  {
    Tape tape;
    Value w = tape.leaf(Tensor(1, 1));
    Value s = tape.sigmoid(w);
    Value loss = tape.hadamard(s, s);
    Gradients g = tape.backward(loss);
    CHECK(g.at(w)(0, 0) == 0.25);
  }
  // loss must be scalar; foreign handles are rejected
  {
    Tape tape;
    Value v = tape.leaf(Tensor(2, 2));
    CHECK_THROWS_AS(tape.backward(v), ValidationError);
    CHECK_THROWS_AS(tape.backward(Value{99}), ValidationError);
  }
  // untouched parameters map to zero
  {
    Tape tape;
    Value used = tape.leaf(Tensor::from_rows({{2.0}}));
    Value unused = tape.leaf(Tensor(3, 3, 1.0));
    Value loss = tape.hadamard(used, used);
    Gradients g = tape.backward(loss);
    CHECK(g.contains(unused));
    for (double v : g.at(unused).data) CHECK(v == 0.0);
    CHECK(g.at(used)(0, 0) == 4.0);
  }
}

TEST_CASE("finite differences: quadratic sanity check") {
  FdProblem f;
  f.loss = [](const std::vector<Tensor>& p) { return p[0](0, 0) * p[0](0, 0); };
  f.grad = [](const std::vector<Tensor>& p) {
    Tensor g(1, 1);
    g(0, 0) = 2.0 * p[0](0, 0);
    return std::vector<Tensor>{g};
  };
  Tensor w(1, 1);
  w(0, 0) = 3.0;
  CHECK(finite_difference_check(f, {w}, 1e-5) < 1e-9);
  CHECK_THROWS_AS(finite_difference_check(f, {w}, 1e-2), ConfigError);
}

TEST_CASE("finite differences flag a non-deterministic objective") {
  int calls = 0;
  FdProblem f;
  f.loss = [&calls](const std::vector<Tensor>&) { return static_cast<double>(calls++); };
  f.grad = [](const std::vector<Tensor>&) { return std::vector<Tensor>{Tensor(1, 1)}; };
  CHECK_THROWS_AS(finite_difference_check(f, {Tensor(1, 1)}, 1e-5), NumericError);
}

namespace {

// Builds a composite expression through every differentiable primitive and
// returns the scalar loss; used to property-test backward against FD.
double composite_loss(Tape& tape, const std::vector<Value>& p, const Tensor& mask) {
  Value x = p[0], w = p[1], b = p[2], gamma = p[3], beta = p[4], gw = p[5], gb = p[6], s = p[7];
  Value lin = tape.add_rowvec(tape.matmul(x, w), b);
  Value act = tape.sigmoid(lin);
  Value scores = tape.scale(tape.matmul(act, tape.transpose(act)), 0.37);
  Value masked = tape.hadamard(scores, tape.constant(mask));
  Value weights = tape.row_normalize(masked);
  Value mixed = tape.matmul(weights, act);
  Value res = tape.l2_normalize_rows(tape.add(mixed, act), 1e-12);
  Value ln = tape.layer_norm(res, gamma, beta, 1e-5);
  Value ff = tape.grouped_linear(ln, gw, gb, 2);
  Value rl = tape.relu(ff);
  Value gated = tape.scale_rows(rl, s);
  Value sm = tape.softmax_rows(gated);
  Value pooled = tape.mean_rows(sm);
  Value stacked = tape.concat_cols({pooled, tape.sum_rows(gated)});
  Value ls = tape.logsigmoid(stacked);
  Value diff = tape.sub(ls, tape.constant(Tensor(1, tape.value(ls).cols, 0.25)));
  Value sq = tape.hadamard(diff, diff);
  Value loss = tape.mean_all(sq);
  return tape.value(loss)(0, 0);
}

}  // namespace

TEST_CASE("backward agrees with central differences on composite expressions") {
  Rng rng(1234);
  for (int trial = 0; trial < 4; ++trial) {
    const int n = 3 + trial;  // nodes
    const int d = 4;
    Tensor mask(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) mask(i, j) = (std::abs(i - j) <= 1) ? 1.0 : 0.0;

    std::vector<Tensor> params = {
        random_tensor(rng, n, d),       // x
        random_tensor(rng, d, d),       // w
        random_tensor(rng, 1, d),       // b
        random_tensor(rng, 1, d),       // gamma
        random_tensor(rng, 1, d),       // beta
        random_tensor(rng, d, d / 2),   // grouped weight, g=2
        random_tensor(rng, 1, d),       // grouped bias
        random_tensor(rng, n, 1),       // row gate
    };

    FdProblem f;
    f.loss = [&mask](const std::vector<Tensor>& p) {
      Tape tape;
      std::vector<Value> vals;
      for (const Tensor& t : p) vals.push_back(tape.leaf(t));
      return composite_loss(tape, vals, mask);
    };
    f.grad = [&mask](const std::vector<Tensor>& p) {
      Tape tape;
      std::vector<Value> vals;
      for (const Tensor& t : p) vals.push_back(tape.leaf(t));
      composite_loss(tape, vals, mask);
      Value loss{static_cast<int>(tape.size()) - 1};
      Gradients g = tape.backward(loss);
      std::vector<Tensor> out;
      for (Value v : vals) out.push_back(g.at(v));
      return out;
    };
    CHECK(finite_difference_check(f, params, 1e-5) < 1e-4);
  }
}

TEST_CASE("forward evaluation is bit-deterministic across runs") {
  auto run = [] {
    Rng rng(99);
    Tape tape;
    Value x = tape.leaf(randn(rng, 6, 8, 0.3));
    Value w = tape.leaf(randn(rng, 8, 8, 0.3));
    Value y = tape.mean_all(tape.sigmoid(tape.matmul(x, w)));
    Gradients g = tape.backward(y);
    return std::make_pair(tape.value(y)(0, 0), g.at(w).data);
  };
  auto a = run();
  auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("row_normalize: rows sum to one, isolated rows fall back to self") {
  Tape tape;
  Tensor s(3, 3);
  s(0, 0) = 2.0;
  s(0, 1) = 6.0;  // row 1 is all zero
  s(2, 2) = 4.0;
  const Tensor& out = tape.value(tape.row_normalize(tape.constant(s)));
  CHECK(out(0, 0) == doctest::Approx(0.25));
  CHECK(out(0, 1) == doctest::Approx(0.75));
  CHECK(out(1, 1) == 1.0);
  CHECK(out(1, 0) == 0.0);
  CHECK(out(2, 2) == 1.0);
  for (int i = 0; i < 3; ++i) {
    double sum = 0.0;
    for (int j = 0; j < 3; ++j) sum += out(i, j);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}
