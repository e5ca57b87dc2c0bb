#pragma once

// Dense 2-D double tensors plus a tape-based reverse-mode gradient engine.
// A Tape records every primitive applied through it; backward() replays the
// records once in reverse. Tapes are single-threaded; run one per graph.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <string>
#include <unordered_map>
#include <vector>

#include "core/errors.hpp"

namespace graphrep {

class Rng;

struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;  // row-major

  Tensor() = default;
  Tensor(int r, int c, double fill = 0.0);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(int n);
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.rows, t.cols); }

  double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

  int size() const { return rows * cols; }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
  bool all_finite() const;
  std::string shape_str() const;
};

enum class EwKind { Sigmoid, Relu, LogSigmoid, Add, Hadamard };

// Handle into a Tape.
struct Value {
  int id = -1;
  bool valid() const { return id >= 0; }
};

struct Gradients {
  std::unordered_map<int, Tensor> by_leaf;

  const Tensor& at(Value leaf) const;
  bool contains(Value leaf) const { return by_leaf.count(leaf.id) > 0; }
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaves. Gradients are collected for every requires_grad leaf.
  Value leaf(Tensor v, bool requires_grad = true);
  Value constant(Tensor v) { return leaf(std::move(v), false); }
  Value scalar_constant(double x);

  Value matmul(Value a, Value b);
  Value transpose(Value a);
  Value add(Value a, Value b);
  Value sub(Value a, Value b);
  Value hadamard(Value a, Value b);
  Value scale(Value a, double c);
  Value add_rowvec(Value x, Value b);   // b is 1 x cols, broadcast over rows
  Value scale_rows(Value x, Value s);   // s is rows x 1, row i scaled by s[i]
  Value sigmoid(Value a);
  Value relu(Value a);
  Value logsigmoid(Value a);
  Value elementwise(EwKind kind, Value x);            // unary kinds
  Value elementwise(EwKind kind, Value x, Value y);   // add / hadamard

  // Rows normalized to zero mean / unit population variance, then gamma,beta.
  Value layer_norm(Value x, Value gamma, Value beta, double eps = 1e-5);
  // Rows divided by max(l2 norm, eps); zero rows stay zero.
  Value l2_normalize_rows(Value x, double eps = 1e-12);
  // Square score matrix; each row divided by its sum. A row whose sum falls
  // below 1e-12 falls back to weight 1 on the diagonal.
  Value row_normalize(Value s);
  // Weight w has shape (d_in, d_out/groups); group j owns the row block
  // [j*d_in/g, (j+1)*d_in/g). groups == 1 is a plain dense layer.
  Value grouped_linear(Value x, Value w, Value b, int groups);
  Value softmax_rows(Value x);

  Value mean_rows(Value x);  // N x C -> 1 x C
  Value sum_rows(Value x);
  Value mean_all(Value x);   // -> 1 x 1
  Value sum_all(Value x);
  Value concat_rows(const std::vector<Value>& parts);
  Value concat_cols(const std::vector<Value>& parts);

  const Tensor& value(Value v) const;
  std::size_t size() const { return nodes_.size(); }

  // Exact reverse-mode gradients of a 1x1 loss with respect to every
  // requires_grad leaf on the tape; untouched leaves map to zeros.
  Gradients backward(Value loss) const;

 private:
  enum class Op {
    Leaf, MatMul, Transpose, Add, Sub, Hadamard, Scale, AddRowVec, ScaleRows,
    Sigmoid, Relu, LogSigmoid, LayerNorm, L2NormalizeRows, RowNormalize,
    GroupedLinear, SoftmaxRows, MeanRows, SumRows, MeanAll, SumAll,
    ConcatRows, ConcatCols
  };

  struct Node {
    Op op = Op::Leaf;
    std::vector<int> in;
    Tensor val;
    std::vector<Tensor> saved;  // forward by-products needed by the backward rule
    double scalar = 0.0;        // Scale factor, or eps for the norm ops
    int groups = 1;
    bool requires_grad = false;
  };

  const Node& node(Value v) const;
  Value push(Node n);

  std::vector<Node> nodes_;
};

Tensor randn(Rng& rng, int rows, int cols, double stddev);

// Central-difference gradient check. `loss` must be deterministic; `grad`
// returns analytic gradients in the same order as `params`. Returns the max
// over coordinates of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
struct FdProblem {
  std::function<double(const std::vector<Tensor>&)> loss;
  std::function<std::vector<Tensor>(const std::vector<Tensor>&)> grad;
};
double finite_difference_check(const FdProblem& f, std::vector<Tensor> params, double h);

}  // namespace graphrep
