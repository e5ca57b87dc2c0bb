#include "core/tensor.hpp"

#include <cmath>
#include <cstdlib>

#include "core/rng.hpp"

namespace graphrep {

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(sigmoid(x)) = -softplus(-x), branch form so |x| up to ~1e3 is safe.
double stable_logsigmoid(double x) {
  const double t = -x;
  const double m = t > 0.0 ? t : 0.0;
  return -(m + std::log1p(std::exp(-std::fabs(t))));
}

}  // namespace

Tensor::Tensor(int r, int c, double fill)
    : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows_init) {
  Tensor t;
  t.rows = static_cast<int>(rows_init.size());
  t.cols = t.rows > 0 ? static_cast<int>(rows_init.begin()->size()) : 0;
  t.data.reserve(static_cast<std::size_t>(t.rows) * t.cols);
  for (const auto& row : rows_init) {
    if (static_cast<int>(row.size()) != t.cols) {
      throw ShapeError("from_rows: ragged initializer");
    }
    t.data.insert(t.data.end(), row.begin(), row.end());
  }
  return t;
}

Tensor Tensor::identity(int n) {
  Tensor t(n, n);
  for (int i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

bool Tensor::all_finite() const {
  for (double x : data) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

const Tensor& Gradients::at(Value leaf) const {
  auto it = by_leaf.find(leaf.id);
  if (it == by_leaf.end()) {
    throw ValidationError("no gradient recorded for leaf " + std::to_string(leaf.id));
  }
  return it->second;
}

const Tape::Node& Tape::node(Value v) const {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
    throw ValidationError("value is not on this tape");
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

Value Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return Value{static_cast<int>(nodes_.size()) - 1};
}

Value Tape::leaf(Tensor v, bool requires_grad) {
  Node n;
  n.op = Op::Leaf;
  n.val = std::move(v);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

Value Tape::scalar_constant(double x) {
  Tensor t(1, 1);
  t(0, 0) = x;
  return constant(std::move(t));
}

Value Tape::matmul(Value a, Value b) {
  const Tensor& A = node(a).val;
  const Tensor& B = node(b).val;
  if (A.cols != B.rows) {
    throw ShapeError("matmul: incompatible shapes " + A.shape_str() + " and " + B.shape_str());
  }
  Node n;
  n.op = Op::MatMul;
  n.in = {a.id, b.id};
  n.val = Tensor(A.rows, B.cols);
  for (int i = 0; i < A.rows; ++i) {
    for (int j = 0; j < B.cols; ++j) {
      double acc = 0.0;
      for (int k = 0; k < A.cols; ++k) acc += A(i, k) * B(k, j);
      n.val(i, j) = acc;
    }
  }
  return push(std::move(n));
}

Value Tape::transpose(Value a) {
  const Tensor& A = node(a).val;
  Node n;
  n.op = Op::Transpose;
  n.in = {a.id};
  n.val = Tensor(A.cols, A.rows);
  for (int i = 0; i < A.rows; ++i)
    for (int j = 0; j < A.cols; ++j) n.val(j, i) = A(i, j);
  return push(std::move(n));
}

Value Tape::add(Value a, Value b) {
  const Tensor& A = node(a).val;
  const Tensor& B = node(b).val;
  if (!A.same_shape(B)) {
    throw ShapeError("add: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
  }
  Node n;
  n.op = Op::Add;
  n.in = {a.id, b.id};
  n.val = A;
  for (int i = 0; i < A.size(); ++i) n.val.data[i] += B.data[i];
  return push(std::move(n));
}

Value Tape::sub(Value a, Value b) {
  const Tensor& A = node(a).val;
  const Tensor& B = node(b).val;
  if (!A.same_shape(B)) {
    throw ShapeError("sub: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
  }
  Node n;
  n.op = Op::Sub;
  n.in = {a.id, b.id};
  n.val = A;
  for (int i = 0; i < A.size(); ++i) n.val.data[i] -= B.data[i];
  return push(std::move(n));
}

Value Tape::hadamard(Value a, Value b) {
  const Tensor& A = node(a).val;
  const Tensor& B = node(b).val;
  if (!A.same_shape(B)) {
    throw ShapeError("hadamard: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
  }
  Node n;
  n.op = Op::Hadamard;
  n.in = {a.id, b.id};
  n.val = A;
  for (int i = 0; i < A.size(); ++i) n.val.data[i] *= B.data[i];
  return push(std::move(n));
}

Value Tape::scale(Value a, double c) {
  const Tensor& A = node(a).val;
  Node n;
  n.op = Op::Scale;
  n.in = {a.id};
  n.scalar = c;
  n.val = A;
  for (double& x : n.val.data) x *= c;
  return push(std::move(n));
}

Value Tape::add_rowvec(Value x, Value b) {
  const Tensor& X = node(x).val;
  const Tensor& B = node(b).val;
  if (B.rows != 1 || B.cols != X.cols) {
    throw ShapeError("add_rowvec: bias " + B.shape_str() + " does not broadcast over " + X.shape_str());
  }
  Node n;
  n.op = Op::AddRowVec;
  n.in = {x.id, b.id};
  n.val = X;
  for (int i = 0; i < X.rows; ++i)
    for (int j = 0; j < X.cols; ++j) n.val(i, j) += B(0, j);
  return push(std::move(n));
}

Value Tape::scale_rows(Value x, Value s) {
  const Tensor& X = node(x).val;
  const Tensor& S = node(s).val;
  if (S.cols != 1 || S.rows != X.rows) {
    throw ShapeError("scale_rows: gate " + S.shape_str() + " does not broadcast over " + X.shape_str());
  }
  Node n;
  n.op = Op::ScaleRows;
  n.in = {x.id, s.id};
  n.val = X;
  for (int i = 0; i < X.rows; ++i)
    for (int j = 0; j < X.cols; ++j) n.val(i, j) *= S(i, 0);
  return push(std::move(n));
}

Value Tape::sigmoid(Value a) {
  Node n;
  n.op = Op::Sigmoid;
  n.in = {a.id};
  n.val = node(a).val;
  for (double& x : n.val.data) x = stable_sigmoid(x);
  return push(std::move(n));
}

Value Tape::relu(Value a) {
  Node n;
  n.op = Op::Relu;
  n.in = {a.id};
  n.val = node(a).val;
  for (double& x : n.val.data) x = x > 0.0 ? x : 0.0;
  return push(std::move(n));
}

Value Tape::logsigmoid(Value a) {
  Node n;
  n.op = Op::LogSigmoid;
  n.in = {a.id};
  n.val = node(a).val;
  for (double& x : n.val.data) x = stable_logsigmoid(x);
  return push(std::move(n));
}

Value Tape::elementwise(EwKind kind, Value x) {
  switch (kind) {
    case EwKind::Sigmoid: return sigmoid(x);
    case EwKind::Relu: return relu(x);
    case EwKind::LogSigmoid: return logsigmoid(x);
    default:
      throw ConfigError("elementwise: binary kind used with one operand");
  }
}

Value Tape::elementwise(EwKind kind, Value x, Value y) {
  switch (kind) {
    case EwKind::Add: return add(x, y);
    case EwKind::Hadamard: return hadamard(x, y);
    default:
      throw ConfigError("elementwise: unary kind used with two operands");
  }
}

Value Tape::layer_norm(Value x, Value gamma, Value beta, double eps) {
  const Tensor& X = node(x).val;
  const Tensor& G = node(gamma).val;
  const Tensor& B = node(beta).val;
  if (G.rows != 1 || G.cols != X.cols || B.rows != 1 || B.cols != X.cols) {
    throw ShapeError("layer_norm: gamma/beta must be 1x" + std::to_string(X.cols));
  }
  if (eps <= 0.0) throw ConfigError("layer_norm: eps must be positive");

  Node n;
  n.op = Op::LayerNorm;
  n.in = {x.id, gamma.id, beta.id};
  n.scalar = eps;
  n.val = Tensor(X.rows, X.cols);
  Tensor invstd(X.rows, 1);
  Tensor xhat(X.rows, X.cols);
  for (int i = 0; i < X.rows; ++i) {
    double mean = 0.0;
    for (int j = 0; j < X.cols; ++j) mean += X(i, j);
    mean /= X.cols;
    double var = 0.0;
    for (int j = 0; j < X.cols; ++j) {
      const double d = X(i, j) - mean;
      var += d * d;
    }
    var /= X.cols;
    const double inv = 1.0 / std::sqrt(var + eps);
    invstd(i, 0) = inv;
    for (int j = 0; j < X.cols; ++j) {
      const double h = (X(i, j) - mean) * inv;
      xhat(i, j) = h;
      n.val(i, j) = G(0, j) * h + B(0, j);
    }
  }
  n.saved = {std::move(invstd), std::move(xhat)};
  return push(std::move(n));
}

Value Tape::l2_normalize_rows(Value x, double eps) {
  if (eps <= 0.0) throw ConfigError("l2_normalize_rows: eps must be positive");
  const Tensor& X = node(x).val;
  Node n;
  n.op = Op::L2NormalizeRows;
  n.in = {x.id};
  n.scalar = eps;
  n.val = Tensor(X.rows, X.cols);
  Tensor norms(X.rows, 1);
  for (int i = 0; i < X.rows; ++i) {
    double sq = 0.0;
    for (int j = 0; j < X.cols; ++j) sq += X(i, j) * X(i, j);
    const double norm = std::sqrt(sq);
    norms(i, 0) = norm;
    const double denom = norm > eps ? norm : eps;
    for (int j = 0; j < X.cols; ++j) n.val(i, j) = X(i, j) / denom;
  }
  n.saved = {std::move(norms)};
  return push(std::move(n));
}

Value Tape::row_normalize(Value s) {
  const Tensor& S = node(s).val;
  if (S.rows != S.cols) {
    throw ShapeError("row_normalize: expected a square score matrix, got " + S.shape_str());
  }
  constexpr double kFallback = 1e-12;
  Node n;
  n.op = Op::RowNormalize;
  n.in = {s.id};
  n.val = Tensor(S.rows, S.cols);
  Tensor sums(S.rows, 1);
  for (int i = 0; i < S.rows; ++i) {
    double sum = 0.0;
    for (int j = 0; j < S.cols; ++j) sum += S(i, j);
    sums(i, 0) = sum;
    if (sum < kFallback) {
      n.val(i, i) = 1.0;  // isolated row: attend to self only
    } else {
      for (int j = 0; j < S.cols; ++j) n.val(i, j) = S(i, j) / sum;
    }
  }
  n.saved = {std::move(sums)};
  return push(std::move(n));
}

Value Tape::grouped_linear(Value x, Value w, Value b, int groups) {
  const Tensor& X = node(x).val;
  const Tensor& W = node(w).val;
  const Tensor& B = node(b).val;
  if (groups < 1) throw ConfigError("grouped_linear: groups must be >= 1");
  if (W.rows != X.cols) {
    throw ShapeError("grouped_linear: weight " + W.shape_str() + " does not match input " + X.shape_str());
  }
  if (X.cols % groups != 0) {
    throw ConfigError("grouped_linear: input width " + std::to_string(X.cols) +
                      " not divisible by " + std::to_string(groups) + " groups");
  }
  const int d_out = W.cols * groups;
  if (B.rows != 1 || B.cols != d_out) {
    throw ShapeError("grouped_linear: bias " + B.shape_str() + " must be 1x" + std::to_string(d_out));
  }
  const int in_per = X.cols / groups;
  const int out_per = W.cols;

  Node n;
  n.op = Op::GroupedLinear;
  n.in = {x.id, w.id, b.id};
  n.groups = groups;
  n.val = Tensor(X.rows, d_out);
  for (int i = 0; i < X.rows; ++i) {
    for (int g = 0; g < groups; ++g) {
      for (int oc = 0; oc < out_per; ++oc) {
        double acc = 0.0;
        for (int k = 0; k < in_per; ++k) acc += X(i, g * in_per + k) * W(g * in_per + k, oc);
        n.val(i, g * out_per + oc) = acc + B(0, g * out_per + oc);
      }
    }
  }
  return push(std::move(n));
}

Value Tape::softmax_rows(Value x) {
  const Tensor& X = node(x).val;
  Node n;
  n.op = Op::SoftmaxRows;
  n.in = {x.id};
  n.val = Tensor(X.rows, X.cols);
  for (int i = 0; i < X.rows; ++i) {
    double mx = X(i, 0);
    for (int j = 1; j < X.cols; ++j) mx = std::max(mx, X(i, j));
    double sum = 0.0;
    for (int j = 0; j < X.cols; ++j) {
      const double e = std::exp(X(i, j) - mx);
      n.val(i, j) = e;
      sum += e;
    }
    for (int j = 0; j < X.cols; ++j) n.val(i, j) /= sum;
  }
  return push(std::move(n));
}

Value Tape::mean_rows(Value x) {
  const Tensor& X = node(x).val;
  if (X.rows == 0) throw ValidationError("mean_rows: empty tensor");
  Node n;
  n.op = Op::MeanRows;
  n.in = {x.id};
  n.val = Tensor(1, X.cols);
  for (int j = 0; j < X.cols; ++j) {
    double acc = 0.0;
    for (int i = 0; i < X.rows; ++i) acc += X(i, j);
    n.val(0, j) = acc / X.rows;
  }
  return push(std::move(n));
}

Value Tape::sum_rows(Value x) {
  const Tensor& X = node(x).val;
  Node n;
  n.op = Op::SumRows;
  n.in = {x.id};
  n.val = Tensor(1, X.cols);
  for (int j = 0; j < X.cols; ++j) {
    double acc = 0.0;
    for (int i = 0; i < X.rows; ++i) acc += X(i, j);
    n.val(0, j) = acc;
  }
  return push(std::move(n));
}

Value Tape::mean_all(Value x) {
  const Tensor& X = node(x).val;
  if (X.size() == 0) throw ValidationError("mean_all: empty tensor");
  Node n;
  n.op = Op::MeanAll;
  n.in = {x.id};
  n.val = Tensor(1, 1);
  double acc = 0.0;
  for (double v : X.data) acc += v;
  n.val(0, 0) = acc / X.size();
  return push(std::move(n));
}

Value Tape::sum_all(Value x) {
  const Tensor& X = node(x).val;
  Node n;
  n.op = Op::SumAll;
  n.in = {x.id};
  n.val = Tensor(1, 1);
  double acc = 0.0;
  for (double v : X.data) acc += v;
  n.val(0, 0) = acc;
  return push(std::move(n));
}

Value Tape::concat_rows(const std::vector<Value>& parts) {
  if (parts.empty()) throw ConfigError("concat_rows: no parts");
  const int cols = node(parts[0]).val.cols;
  int rows = 0;
  for (Value p : parts) {
    const Tensor& T = node(p).val;
    if (T.cols != cols) throw ShapeError("concat_rows: column mismatch");
    rows += T.rows;
  }
  Node n;
  n.op = Op::ConcatRows;
  for (Value p : parts) n.in.push_back(p.id);
  n.val = Tensor(rows, cols);
  int r = 0;
  for (Value p : parts) {
    const Tensor& T = node(p).val;
    for (int i = 0; i < T.rows; ++i, ++r)
      for (int j = 0; j < cols; ++j) n.val(r, j) = T(i, j);
  }
  return push(std::move(n));
}

Value Tape::concat_cols(const std::vector<Value>& parts) {
  if (parts.empty()) throw ConfigError("concat_cols: no parts");
  const int rows = node(parts[0]).val.rows;
  int cols = 0;
  for (Value p : parts) {
    const Tensor& T = node(p).val;
    if (T.rows != rows) throw ShapeError("concat_cols: row mismatch");
    cols += T.cols;
  }
  Node n;
  n.op = Op::ConcatCols;
  for (Value p : parts) n.in.push_back(p.id);
  n.val = Tensor(rows, cols);
  int c = 0;
  for (Value p : parts) {
    const Tensor& T = node(p).val;
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < T.cols; ++j) n.val(i, c + j) = T(i, j);
    c += node(p).val.cols;
  }
  return push(std::move(n));
}

const Tensor& Tape::value(Value v) const { return node(v).val; }

Gradients Tape::backward(Value loss) const {
  const Node& ln = node(loss);
  if (ln.val.rows != 1 || ln.val.cols != 1) {
    throw ValidationError("backward: loss must be 1x1, got " + ln.val.shape_str());
  }

  std::vector<Tensor> bar(static_cast<std::size_t>(loss.id) + 1);
  auto bar_of = [&](int id) -> Tensor& {
    Tensor& t = bar[static_cast<std::size_t>(id)];
    if (t.size() == 0 && nodes_[static_cast<std::size_t>(id)].val.size() != 0) {
      t = Tensor::zeros_like(nodes_[static_cast<std::size_t>(id)].val);
    }
    return t;
  };
  bar_of(loss.id)(0, 0) = 1.0;

  for (int k = loss.id; k >= 0; --k) {
    const Node& n = nodes_[static_cast<std::size_t>(k)];
    const Tensor& g = bar[static_cast<std::size_t>(k)];
    if (g.size() == 0) continue;  // never reached from the loss

    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::MatMul: {
        const Tensor& A = nodes_[n.in[0]].val;
        const Tensor& B = nodes_[n.in[1]].val;
        Tensor& dA = bar_of(n.in[0]);
        Tensor& dB = bar_of(n.in[1]);
        for (int i = 0; i < A.rows; ++i)
          for (int kk = 0; kk < A.cols; ++kk) {
            double acc = 0.0;
            for (int j = 0; j < B.cols; ++j) acc += g(i, j) * B(kk, j);
            dA(i, kk) += acc;
          }
        for (int kk = 0; kk < B.rows; ++kk)
          for (int j = 0; j < B.cols; ++j) {
            double acc = 0.0;
            for (int i = 0; i < A.rows; ++i) acc += A(i, kk) * g(i, j);
            dB(kk, j) += acc;
          }
        break;
      }
      case Op::Transpose: {
        Tensor& dA = bar_of(n.in[0]);
        for (int i = 0; i < dA.rows; ++i)
          for (int j = 0; j < dA.cols; ++j) dA(i, j) += g(j, i);
        break;
      }
      case Op::Add: {
        Tensor& dA = bar_of(n.in[0]);
        Tensor& dB = bar_of(n.in[1]);
        for (int i = 0; i < g.size(); ++i) {
          dA.data[i] += g.data[i];
          dB.data[i] += g.data[i];
        }
        break;
      }
      case Op::Sub: {
        Tensor& dA = bar_of(n.in[0]);
        Tensor& dB = bar_of(n.in[1]);
        for (int i = 0; i < g.size(); ++i) {
          dA.data[i] += g.data[i];
          dB.data[i] -= g.data[i];
        }
        break;
      }
      case Op::Hadamard: {
        const Tensor& A = nodes_[n.in[0]].val;
        const Tensor& B = nodes_[n.in[1]].val;
        Tensor& dA = bar_of(n.in[0]);
        Tensor& dB = bar_of(n.in[1]);
        for (int i = 0; i < g.size(); ++i) {
          dA.data[i] += g.data[i] * B.data[i];
          dB.data[i] += g.data[i] * A.data[i];
        }
        break;
      }
      case Op::Scale: {
        Tensor& dA = bar_of(n.in[0]);
        for (int i = 0; i < g.size(); ++i) dA.data[i] += n.scalar * g.data[i];
        break;
      }
      case Op::AddRowVec: {
        Tensor& dX = bar_of(n.in[0]);
        Tensor& dB = bar_of(n.in[1]);
        for (int i = 0; i < g.rows; ++i)
          for (int j = 0; j < g.cols; ++j) {
            dX(i, j) += g(i, j);
            dB(0, j) += g(i, j);
          }
        break;
      }
      case Op::ScaleRows: {
        const Tensor& X = nodes_[n.in[0]].val;
        const Tensor& S = nodes_[n.in[1]].val;
        Tensor& dX = bar_of(n.in[0]);
        Tensor& dS = bar_of(n.in[1]);
        for (int i = 0; i < g.rows; ++i) {
          double acc = 0.0;
          for (int j = 0; j < g.cols; ++j) {
            dX(i, j) += g(i, j) * S(i, 0);
            acc += g(i, j) * X(i, j);
          }
          dS(i, 0) += acc;
        }
        break;
      }
      case Op::Sigmoid: {
        Tensor& dX = bar_of(n.in[0]);
        for (int i = 0; i < g.size(); ++i) {
          const double y = n.val.data[i];
          dX.data[i] += g.data[i] * y * (1.0 - y);
        }
        break;
      }
      case Op::Relu: {
        const Tensor& X = nodes_[n.in[0]].val;
        Tensor& dX = bar_of(n.in[0]);
        for (int i = 0; i < g.size(); ++i) {
          if (X.data[i] > 0.0) dX.data[i] += g.data[i];
        }
        break;
      }
      case Op::LogSigmoid: {
        const Tensor& X = nodes_[n.in[0]].val;
        Tensor& dX = bar_of(n.in[0]);
        for (int i = 0; i < g.size(); ++i) {
          dX.data[i] += g.data[i] * stable_sigmoid(-X.data[i]);
        }
        break;
      }
      case Op::LayerNorm: {
        const Tensor& G = nodes_[n.in[1]].val;
        const Tensor& invstd = n.saved[0];
        const Tensor& xhat = n.saved[1];
        Tensor& dX = bar_of(n.in[0]);
        Tensor& dG = bar_of(n.in[1]);
        Tensor& dB = bar_of(n.in[2]);
        const int C = g.cols;
        for (int i = 0; i < g.rows; ++i) {
          double mean_gy = 0.0;
          double mean_gyx = 0.0;
          for (int j = 0; j < C; ++j) {
            const double gy = g(i, j) * G(0, j);
            mean_gy += gy;
            mean_gyx += gy * xhat(i, j);
            dG(0, j) += g(i, j) * xhat(i, j);
            dB(0, j) += g(i, j);
          }
          mean_gy /= C;
          mean_gyx /= C;
          for (int j = 0; j < C; ++j) {
            const double gy = g(i, j) * G(0, j);
            dX(i, j) += invstd(i, 0) * (gy - mean_gy - xhat(i, j) * mean_gyx);
          }
        }
        break;
      }
      case Op::L2NormalizeRows: {
        const Tensor& X = nodes_[n.in[0]].val;
        const Tensor& norms = n.saved[0];
        const double eps = n.scalar;
        Tensor& dX = bar_of(n.in[0]);
        for (int i = 0; i < g.rows; ++i) {
          const double norm = norms(i, 0);
          if (norm > eps) {
            double dot = 0.0;
            for (int j = 0; j < g.cols; ++j) dot += X(i, j) * g(i, j);
            const double n3 = norm * norm * norm;
            for (int j = 0; j < g.cols; ++j) {
              dX(i, j) += g(i, j) / norm - X(i, j) * dot / n3;
            }
          } else {
            for (int j = 0; j < g.cols; ++j) dX(i, j) += g(i, j) / eps;
          }
        }
        break;
      }
      case Op::RowNormalize: {
        const Tensor& sums = n.saved[0];
        Tensor& dS = bar_of(n.in[0]);
        for (int i = 0; i < g.rows; ++i) {
          const double sum = sums(i, 0);
          if (sum < 1e-12) continue;  // fallback rows are locally constant
          double dot = 0.0;
          for (int j = 0; j < g.cols; ++j) dot += g(i, j) * n.val(i, j);
          for (int j = 0; j < g.cols; ++j) dS(i, j) += (g(i, j) - dot) / sum;
        }
        break;
      }
      case Op::GroupedLinear: {
        const Tensor& X = nodes_[n.in[0]].val;
        const Tensor& W = nodes_[n.in[1]].val;
        Tensor& dX = bar_of(n.in[0]);
        Tensor& dW = bar_of(n.in[1]);
        Tensor& dB = bar_of(n.in[2]);
        const int groups = n.groups;
        const int in_per = X.cols / groups;
        const int out_per = W.cols;
        for (int i = 0; i < X.rows; ++i) {
          for (int gg = 0; gg < groups; ++gg) {
            for (int oc = 0; oc < out_per; ++oc) {
              const double go = g(i, gg * out_per + oc);
              if (go == 0.0) continue;
              for (int k = 0; k < in_per; ++k) {
                dX(i, gg * in_per + k) += go * W(gg * in_per + k, oc);
                dW(gg * in_per + k, oc) += go * X(i, gg * in_per + k);
              }
            }
          }
        }
        for (int c = 0; c < g.cols; ++c) {
          double acc = 0.0;
          for (int i = 0; i < g.rows; ++i) acc += g(i, c);
          dB(0, c) += acc;
        }
        break;
      }
      case Op::SoftmaxRows: {
        Tensor& dX = bar_of(n.in[0]);
        for (int i = 0; i < g.rows; ++i) {
          double dot = 0.0;
          for (int j = 0; j < g.cols; ++j) dot += g(i, j) * n.val(i, j);
          for (int j = 0; j < g.cols; ++j) {
            dX(i, j) += n.val(i, j) * (g(i, j) - dot);
          }
        }
        break;
      }
      case Op::MeanRows: {
        Tensor& dX = bar_of(n.in[0]);
        for (int i = 0; i < dX.rows; ++i)
          for (int j = 0; j < dX.cols; ++j) dX(i, j) += g(0, j) / dX.rows;
        break;
      }
      case Op::SumRows: {
        Tensor& dX = bar_of(n.in[0]);
        for (int i = 0; i < dX.rows; ++i)
          for (int j = 0; j < dX.cols; ++j) dX(i, j) += g(0, j);
        break;
      }
      case Op::MeanAll: {
        Tensor& dX = bar_of(n.in[0]);
        const double go = g(0, 0) / dX.size();
        for (double& v : dX.data) v += go;
        break;
      }
      case Op::SumAll: {
        Tensor& dX = bar_of(n.in[0]);
        for (double& v : dX.data) v += g(0, 0);
        break;
      }
      case Op::ConcatRows: {
        int r = 0;
        for (int src : n.in) {
          Tensor& d = bar_of(src);
          for (int i = 0; i < d.rows; ++i, ++r)
            for (int j = 0; j < d.cols; ++j) d(i, j) += g(r, j);
        }
        break;
      }
      case Op::ConcatCols: {
        int c = 0;
        for (int src : n.in) {
          Tensor& d = bar_of(src);
          for (int i = 0; i < d.rows; ++i)
            for (int j = 0; j < d.cols; ++j) d(i, j) += g(i, c + j);
          c += d.cols;
        }
        break;
      }
    }
  }

  Gradients out;
  for (int k = 0; k < static_cast<int>(nodes_.size()); ++k) {
    const Node& n = nodes_[static_cast<std::size_t>(k)];
    if (n.op != Op::Leaf || !n.requires_grad) continue;
    if (k <= loss.id && bar[static_cast<std::size_t>(k)].size() != 0) {
      out.by_leaf.emplace(k, std::move(bar[static_cast<std::size_t>(k)]));
    } else {
      out.by_leaf.emplace(k, Tensor::zeros_like(n.val));
    }
  }
  return out;
}

Tensor randn(Rng& rng, int rows, int cols, double stddev) {
  Tensor t(rows, cols);
  for (double& x : t.data) x = stddev * rng.normal();
  return t;
}

double finite_difference_check(const FdProblem& f, std::vector<Tensor> params, double h) {
  if (h < 1e-7 || h > 1e-3) {
    throw ConfigError("finite_difference_check: h must lie in [1e-7, 1e-3]");
  }
  const double l0 = f.loss(params);
  const double l1 = f.loss(params);
  if (l0 != l1) {
    throw NumericError("finite_difference_check: objective is not deterministic");
  }

  const std::vector<Tensor> analytic = f.grad(params);
  if (analytic.size() != params.size()) {
    throw ValidationError("finite_difference_check: gradient count mismatch");
  }

  double max_rel = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (!analytic[p].same_shape(params[p])) {
      throw ShapeError("finite_difference_check: gradient shape mismatch for parameter " +
                       std::to_string(p));
    }
    for (int i = 0; i < params[p].size(); ++i) {
      const double saved = params[p].data[i];
      params[p].data[i] = saved + h;
      const double lp = f.loss(params);
      params[p].data[i] = saved - h;
      const double lm = f.loss(params);
      params[p].data[i] = saved;
      const double numeric = (lp - lm) / (2.0 * h);
      const double a = analytic[p].data[i];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      max_rel = std::max(max_rel, std::fabs(a - numeric) / denom);
    }
  }
  return max_rel;
}

}  // namespace graphrep
