#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hyperipc/geometry.hpp"

namespace hyperipc {

// Reverse-mode tape over small dense tensors. Values are computed eagerly at
// emission; backward() walks the record once in reverse. A tape belongs to a
// single thread; any number of tapes may live on different threads.

enum class Op : uint8_t {
  Leaf, Const,
  Add, Sub, Neg, AffScalar,   // AffScalar: k1*x + k0, elementwise
  Mul, Div, Recip,
  Dot, Sum, Mean,
  Norm,        // euclidean norm -> scalar (zero-guarded)
  ClampNorm,   // rescale to norm k0 if above it, else identity
  ScalarMul,   // scalar node * tensor node
  Affine,      // (W, bias, X): Y = X W^T + bias, row-wise
  MaxPool,     // column-wise max over rows
  MeanPool,    // column-wise mean over rows
  Concat2,     // two row vectors side by side
  Stack,       // scalar nodes -> vector
  LogSumExp,   // vector -> scalar, max-shifted
  Softplus, Sigmoid, Tanh, Arctanh, Exp, Log, Sqrt,
  TanhRatio,        // (a, n) -> tanh(a*n)/n, limit a as n -> 0
  MobiusScaleCoef,  // u -> tanh(k0 * arctanh(u))/u, limit k0 as u -> 0
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Const: return "const";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Neg: return "neg";
    case Op::AffScalar: return "aff_scalar";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Recip: return "recip";
    case Op::Dot: return "dot";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::Norm: return "norm";
    case Op::ClampNorm: return "clamp_norm";
    case Op::ScalarMul: return "scalar_mul";
    case Op::Affine: return "affine";
    case Op::MaxPool: return "max_pool";
    case Op::MeanPool: return "mean_pool";
    case Op::Concat2: return "concat2";
    case Op::Stack: return "stack";
    case Op::LogSumExp: return "log_sum_exp";
    case Op::Softplus: return "softplus";
    case Op::Sigmoid: return "sigmoid";
    case Op::Tanh: return "tanh";
    case Op::Arctanh: return "arctanh";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Sqrt: return "sqrt";
    case Op::TanhRatio: return "tanh_ratio";
    case Op::MobiusScaleCoef: return "mobius_scale_coef";
  }
  return "?";
}

namespace detail {

inline double softplus0(double t) {
  // ln(1+e^t) - ln 2, a smooth ramp through the origin
  constexpr double kLn2 = 0.6931471805599453;
  if (t > 30.0) return t - kLn2;
  if (t < -30.0) return std::exp(t) - kLn2;
  return std::log1p(std::exp(t)) - kLn2;
}
inline double sigmoid(double t) {
  if (t >= 0.0) {
    double e = std::exp(-t);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(t);
  return e / (1.0 + e);
}

}  // namespace detail

class Tape {
 public:
  struct Node {
    Op op;
    int a = -1, b = -1, c = -1;
    int rows = 1, cols = 1;
    double k0 = 0.0, k1 = 0.0;
    size_t val = 0;   // offset into vals_
    int aux = -1;     // offset into aux_ (MaxPool argmax)
    int list = -1;    // offset into extra_ (Stack)
    int nlist = 0;
    size_t size() const { return size_t(rows) * size_t(cols); }
  };

  int size() const { return int(nodes_.size()); }
  const Node& node(int id) const { return nodes_[id]; }

  std::span<const double> value(int id) const {
    const Node& n = nodes_[id];
    return {vals_.data() + n.val, n.size()};
  }
  double scalar(int id) const {
    const Node& n = nodes_[id];
    if (n.size() != 1) throw std::logic_error("Tape::scalar: node is not scalar");
    return vals_[n.val];
  }
  std::span<const double> grad(int id) const {
    const Node& n = nodes_[id];
    return {grads_.data() + n.val, n.size()};
  }

  // --- emission ---------------------------------------------------------

  int leaf(std::span<const double> v, int rows = 1, int cols = -1) {
    if (cols < 0) cols = int(v.size()), rows = 1;
    int id = push(Op::Leaf, rows, cols);
    std::copy(v.begin(), v.end(), vals_.begin() + long(nodes_[id].val));
    return id;
  }
  int leaf(const Vec& v) { return leaf(std::span<const double>(v)); }

  int constant(std::span<const double> v, int rows = 1, int cols = -1) {
    if (cols < 0) cols = int(v.size()), rows = 1;
    int id = push(Op::Const, rows, cols);
    std::copy(v.begin(), v.end(), vals_.begin() + long(nodes_[id].val));
    return id;
  }
  int constant(double v) { return constant(std::span<const double>(&v, 1)); }

  int add(int a, int b) { return ew2(Op::Add, a, b); }
  int sub(int a, int b) { return ew2(Op::Sub, a, b); }
  int mul(int a, int b) { return ew2(Op::Mul, a, b); }
  int div(int a, int b) { return ew2(Op::Div, a, b); }

  int neg(int a) { return ew1(Op::Neg, a); }
  int recip(int a) { return ew1(Op::Recip, a); }
  int softplus(int a) { return ew1(Op::Softplus, a); }
  int sigmoid(int a) { return ew1(Op::Sigmoid, a); }
  int tanh_(int a) { return ew1(Op::Tanh, a); }
  int arctanh(int a) { return ew1(Op::Arctanh, a); }
  int exp_(int a) { return ew1(Op::Exp, a); }
  int log_(int a) { return ew1(Op::Log, a); }
  int sqrt_(int a) { return ew1(Op::Sqrt, a); }

  // k1*x + k0 elementwise
  int aff_scalar(int a, double k1, double k0) {
    int id = ew1(Op::AffScalar, a);
    nodes_[id].k1 = k1;
    nodes_[id].k0 = k0;
    recompute(id);
    return id;
  }

  int dot(int a, int b) {
    check_same_size(a, b, "dot");
    int id = push(Op::Dot, 1, 1, a, b);
    recompute(id);
    return id;
  }
  int sum(int a) {
    int id = push(Op::Sum, 1, 1, a);
    recompute(id);
    return id;
  }
  int mean(int a) {
    int id = push(Op::Mean, 1, 1, a);
    recompute(id);
    return id;
  }
  int norm(int a) {
    int id = push(Op::Norm, 1, 1, a);
    recompute(id);
    return id;
  }
  int clamp_norm(int a, double max_norm) {
    const Node& na = nodes_[a];
    int id = push(Op::ClampNorm, na.rows, na.cols, a);
    nodes_[id].k0 = max_norm;
    recompute(id);
    return id;
  }
  int scalar_mul(int s, int x) {
    if (nodes_[s].size() != 1) throw std::logic_error("scalar_mul: s must be scalar");
    int id = push(Op::ScalarMul, nodes_[x].rows, nodes_[x].cols, s, x);
    recompute(id);
    return id;
  }

  // W: (out x in), bias: (1 x out), X: (M x in) -> (M x out)
  int affine(int w, int bias, int x) {
    const Node& nw = nodes_[w];
    const Node& nx = nodes_[x];
    const Node& nb = nodes_[bias];
    if (nw.cols != nx.cols) throw std::logic_error("affine: W/X inner dim mismatch");
    if (int(nb.size()) != nw.rows) throw std::logic_error("affine: bias dim mismatch");
    int id = push(Op::Affine, nx.rows, nw.rows, w, bias, x);
    recompute(id);
    return id;
  }

  int max_pool(int x) {
    const Node& nx = nodes_[x];
    int id = push(Op::MaxPool, 1, nx.cols, x);
    nodes_[id].aux = int(aux_.size());
    aux_.resize(aux_.size() + size_t(nx.cols));
    recompute(id);
    return id;
  }

  int mean_pool(int x) {
    const Node& nx = nodes_[x];
    int id = push(Op::MeanPool, 1, nx.cols, x);
    recompute(id);
    return id;
  }

  int concat2(int a, int b) {
    const Node& na = nodes_[a];
    const Node& nb = nodes_[b];
    if (na.rows != 1 || nb.rows != 1) throw std::logic_error("concat2: row vectors only");
    int id = push(Op::Concat2, 1, na.cols + nb.cols, a, b);
    recompute(id);
    return id;
  }

  int stack(std::span<const int> scalars) {
    for (int s : scalars)
      if (nodes_[s].size() != 1) throw std::logic_error("stack: inputs must be scalars");
    int id = push(Op::Stack, 1, int(scalars.size()));
    nodes_[id].list = int(extra_.size());
    nodes_[id].nlist = int(scalars.size());
    extra_.insert(extra_.end(), scalars.begin(), scalars.end());
    recompute(id);
    return id;
  }

  int log_sum_exp(int a) {
    int id = push(Op::LogSumExp, 1, 1, a);
    recompute(id);
    return id;
  }

  // tanh(a*n)/n with the n->0 limit a; both inputs scalar
  int tanh_ratio(int a, int n) {
    if (nodes_[a].size() != 1 || nodes_[n].size() != 1)
      throw std::logic_error("tanh_ratio: scalar inputs required");
    int id = push(Op::TanhRatio, 1, 1, a, n);
    recompute(id);
    return id;
  }

  // tanh(r*arctanh(u))/u with the u->0 limit r; u scalar in [0,1)
  int mobius_scale_coef(int u, double r) {
    if (nodes_[u].size() != 1) throw std::logic_error("mobius_scale_coef: scalar input");
    int id = push(Op::MobiusScaleCoef, 1, 1, u);
    nodes_[id].k0 = r;
    recompute(id);
    return id;
  }

  // --- execution ----------------------------------------------------------

  void backward(int loss) {
    if (nodes_[loss].size() != 1) throw std::logic_error("backward: loss must be scalar");
    grads_.assign(vals_.size(), 0.0);
    grads_[nodes_[loss].val] = 1.0;
    run_backward();
  }

  // Seeds adjoints at several nodes (used to pull a loss gradient computed on
  // another tape back through this one).
  void backward_seeded(std::span<const std::pair<int, std::span<const double>>> seeds) {
    grads_.assign(vals_.size(), 0.0);
    for (const auto& [id, g] : seeds) {
      const Node& n = nodes_[id];
      if (g.size() != n.size()) throw std::logic_error("backward_seeded: seed size mismatch");
      for (size_t i = 0; i < g.size(); ++i) grads_[n.val + i] += g[i];
    }
    run_backward();
  }

  // Recomputes every non-leaf value from the record and reports whether the
  // replay reproduces the stored forward bit-for-bit.
  bool replay_matches() {
    Vec snapshot = vals_;
    for (int i = 0; i < size(); ++i)
      if (nodes_[i].op != Op::Leaf && nodes_[i].op != Op::Const) recompute(i);
    return snapshot == vals_;
  }

 private:
  std::vector<Node> nodes_;
  Vec vals_, grads_;
  std::vector<int> aux_;
  std::vector<int> extra_;

  int push(Op op, int rows, int cols, int a = -1, int b = -1, int c = -1) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.c = c;
    n.rows = rows;
    n.cols = cols;
    n.val = vals_.size();
    vals_.resize(vals_.size() + n.size(), 0.0);
    nodes_.push_back(n);
    return int(nodes_.size()) - 1;
  }

  int ew1(Op op, int a) {
    const Node& na = nodes_[a];
    int id = push(op, na.rows, na.cols, a);
    recompute(id);
    return id;
  }
  int ew2(Op op, int a, int b) {
    check_same_size(a, b, op_name(op));
    const Node& na = nodes_[a];
    int id = push(op, na.rows, na.cols, a, b);
    recompute(id);
    return id;
  }
  void check_same_size(int a, int b, const char* who) const {
    if (nodes_[a].size() != nodes_[b].size())
      throw std::logic_error(std::string(who) + ": operand size mismatch");
  }

  double* vp(int id) { return vals_.data() + nodes_[id].val; }
  const double* vp(int id) const { return vals_.data() + nodes_[id].val; }
  double* gp(int id) { return grads_.data() + nodes_[id].val; }

  void recompute(int id) {
    Node& n = nodes_[id];
    double* out = vals_.data() + n.val;
    const size_t sz = n.size();
    switch (n.op) {
      case Op::Leaf:
      case Op::Const:
        break;
      case Op::Add: {
        const double *a = vp(n.a), *b = vp(n.b);
        for (size_t i = 0; i < sz; ++i) out[i] = a[i] + b[i];
        break;
      }
      case Op::Sub: {
        const double *a = vp(n.a), *b = vp(n.b);
        for (size_t i = 0; i < sz; ++i) out[i] = a[i] - b[i];
        break;
      }
      case Op::Neg: {
        const double* a = vp(n.a);
        for (size_t i = 0; i < sz; ++i) out[i] = -a[i];
        break;
      }
      case Op::AffScalar: {
        const double* a = vp(n.a);
        for (size_t i = 0; i < sz; ++i) out[i] = n.k1 * a[i] + n.k0;
        break;
      }
      case Op::Mul: {
        const double *a = vp(n.a), *b = vp(n.b);
        for (size_t i = 0; i < sz; ++i) out[i] = a[i] * b[i];
        break;
      }
      case Op::Div: {
        const double *a = vp(n.a), *b = vp(n.b);
        for (size_t i = 0; i < sz; ++i) out[i] = a[i] / b[i];
        break;
      }
      case Op::Recip: {
        const double* a = vp(n.a);
        for (size_t i = 0; i < sz; ++i) out[i] = 1.0 / a[i];
        break;
      }
      case Op::Dot: {
        const double *a = vp(n.a), *b = vp(n.b);
        double s = 0.0;
        for (size_t i = 0; i < nodes_[n.a].size(); ++i) s += a[i] * b[i];
        out[0] = s;
        break;
      }
      case Op::Sum: {
        const double* a = vp(n.a);
        double s = 0.0;
        for (size_t i = 0; i < nodes_[n.a].size(); ++i) s += a[i];
        out[0] = s;
        break;
      }
      case Op::Mean: {
        const double* a = vp(n.a);
        double s = 0.0;
        const size_t m = nodes_[n.a].size();
        for (size_t i = 0; i < m; ++i) s += a[i];
        out[0] = s / double(m);
        break;
      }
      case Op::Norm: {
        const double* a = vp(n.a);
        double s = 0.0;
        for (size_t i = 0; i < nodes_[n.a].size(); ++i) s += a[i] * a[i];
        out[0] = std::sqrt(s);
        break;
      }
      case Op::ClampNorm: {
        const double* a = vp(n.a);
        double s = 0.0;
        for (size_t i = 0; i < sz; ++i) s += a[i] * a[i];
        double nrm = std::sqrt(s);
        double scale = nrm > n.k0 ? n.k0 / nrm : 1.0;
        for (size_t i = 0; i < sz; ++i) out[i] = scale * a[i];
        break;
      }
      case Op::ScalarMul: {
        const double s = vp(n.a)[0];
        const double* x = vp(n.b);
        for (size_t i = 0; i < sz; ++i) out[i] = s * x[i];
        break;
      }
      case Op::Affine: {
        const Node& nw = nodes_[n.a];
        const double* W = vp(n.a);
        const double* bias = vp(n.b);
        const double* X = vp(n.c);
        const int M = n.rows, O = n.cols, I = nw.cols;
        for (int m = 0; m < M; ++m)
          for (int o = 0; o < O; ++o) {
            double s = bias[o];
            const double* wr = W + size_t(o) * I;
            const double* xr = X + size_t(m) * I;
            for (int i = 0; i < I; ++i) s += wr[i] * xr[i];
            out[size_t(m) * O + o] = s;
          }
        break;
      }
      case Op::MaxPool: {
        const Node& nx = nodes_[n.a];
        const double* X = vp(n.a);
        const int M = nx.rows, D = nx.cols;
        for (int j = 0; j < D; ++j) {
          double best = X[j];
          int arg = 0;
          for (int m = 1; m < M; ++m) {
            double v = X[size_t(m) * D + j];
            if (v > best) best = v, arg = m;
          }
          out[j] = best;
          aux_[size_t(n.aux) + j] = arg;
        }
        break;
      }
      case Op::MeanPool: {
        const Node& nx = nodes_[n.a];
        const double* X = vp(n.a);
        const int M = nx.rows, D = nx.cols;
        for (int j = 0; j < D; ++j) {
          double s = 0.0;
          for (int m = 0; m < M; ++m) s += X[size_t(m) * D + j];
          out[j] = s / double(M);
        }
        break;
      }
      case Op::Concat2: {
        const double* a = vp(n.a);
        const double* b = vp(n.b);
        const size_t na = nodes_[n.a].size();
        for (size_t i = 0; i < na; ++i) out[i] = a[i];
        for (size_t i = 0; i < nodes_[n.b].size(); ++i) out[na + i] = b[i];
        break;
      }
      case Op::Stack: {
        for (int i = 0; i < n.nlist; ++i) out[i] = vp(extra_[n.list + i])[0];
        break;
      }
      case Op::LogSumExp: {
        const double* a = vp(n.a);
        const size_t m = nodes_[n.a].size();
        double mx = a[0];
        for (size_t i = 1; i < m; ++i) mx = std::max(mx, a[i]);
        double s = 0.0;
        for (size_t i = 0; i < m; ++i) s += std::exp(a[i] - mx);
        out[0] = mx + std::log(s);
        break;
      }
      case Op::Softplus: {
        const double* a = vp(n.a);
        for (size_t i = 0; i < sz; ++i) out[i] = detail::softplus0(a[i]);
        break;
      }
      case Op::Sigmoid: {
        const double* a = vp(n.a);
        for (size_t i = 0; i < sz; ++i) out[i] = detail::sigmoid(a[i]);
        break;
      }
      case Op::Tanh: {
        const double* a = vp(n.a);
        for (size_t i = 0; i < sz; ++i) out[i] = std::tanh(a[i]);
        break;
      }
      case Op::Arctanh: {
        const double* a = vp(n.a);
        for (size_t i = 0; i < sz; ++i)
          out[i] = std::atanh(std::clamp(a[i], -kAtanhClamp, kAtanhClamp));
        break;
      }
      case Op::Exp: {
        const double* a = vp(n.a);
        for (size_t i = 0; i < sz; ++i) out[i] = std::exp(a[i]);
        break;
      }
      case Op::Log: {
        const double* a = vp(n.a);
        for (size_t i = 0; i < sz; ++i) out[i] = std::log(a[i]);
        break;
      }
      case Op::Sqrt: {
        const double* a = vp(n.a);
        for (size_t i = 0; i < sz; ++i) out[i] = std::sqrt(a[i]);
        break;
      }
      case Op::TanhRatio: {
        const double a = vp(n.a)[0], t = vp(n.b)[0];
        if (std::abs(t) < 1e-6) {
          double at = a * t;
          out[0] = a - a * at * at / 3.0;
        } else {
          out[0] = std::tanh(a * t) / t;
        }
        break;
      }
      case Op::MobiusScaleCoef: {
        const double u = vp(n.a)[0];
        const double r = n.k0;
        if (std::abs(u) < 1e-6) {
          out[0] = r + (r - r * r * r) * u * u / 3.0;
        } else {
          double uc = std::clamp(u, -kAtanhClamp, kAtanhClamp);
          out[0] = std::tanh(r * std::atanh(uc)) / u;
        }
        break;
      }
      default:
        throw std::logic_error("Tape: unregistered primitive in forward");
    }
  }

  void run_backward() {
    for (int id = size() - 1; id >= 0; --id) {
      const Node& n = nodes_[id];
      const double* g = grads_.data() + n.val;
      const size_t sz = n.size();
      switch (n.op) {
        case Op::Leaf:
        case Op::Const:
          break;
        case Op::Add: {
          double *ga = gp(n.a), *gb = gp(n.b);
          for (size_t i = 0; i < sz; ++i) ga[i] += g[i], gb[i] += g[i];
          break;
        }
        case Op::Sub: {
          double *ga = gp(n.a), *gb = gp(n.b);
          for (size_t i = 0; i < sz; ++i) ga[i] += g[i], gb[i] -= g[i];
          break;
        }
        case Op::Neg: {
          double* ga = gp(n.a);
          for (size_t i = 0; i < sz; ++i) ga[i] -= g[i];
          break;
        }
        case Op::AffScalar: {
          double* ga = gp(n.a);
          for (size_t i = 0; i < sz; ++i) ga[i] += n.k1 * g[i];
          break;
        }
        case Op::Mul: {
          double *ga = gp(n.a), *gb = gp(n.b);
          const double *a = vp(n.a), *b = vp(n.b);
          for (size_t i = 0; i < sz; ++i) {
            ga[i] += g[i] * b[i];
            gb[i] += g[i] * a[i];
          }
          break;
        }
        case Op::Div: {
          double *ga = gp(n.a), *gb = gp(n.b);
          const double *a = vp(n.a), *b = vp(n.b);
          for (size_t i = 0; i < sz; ++i) {
            ga[i] += g[i] / b[i];
            gb[i] -= g[i] * a[i] / (b[i] * b[i]);
          }
          break;
        }
        case Op::Recip: {
          double* ga = gp(n.a);
          const double* a = vp(n.a);
          for (size_t i = 0; i < sz; ++i) ga[i] -= g[i] / (a[i] * a[i]);
          break;
        }
        case Op::Dot: {
          double *ga = gp(n.a), *gb = gp(n.b);
          const double *a = vp(n.a), *b = vp(n.b);
          for (size_t i = 0; i < nodes_[n.a].size(); ++i) {
            ga[i] += g[0] * b[i];
            gb[i] += g[0] * a[i];
          }
          break;
        }
        case Op::Sum: {
          double* ga = gp(n.a);
          for (size_t i = 0; i < nodes_[n.a].size(); ++i) ga[i] += g[0];
          break;
        }
        case Op::Mean: {
          double* ga = gp(n.a);
          const size_t m = nodes_[n.a].size();
          for (size_t i = 0; i < m; ++i) ga[i] += g[0] / double(m);
          break;
        }
        case Op::Norm: {
          const double nrm = vp(id)[0];
          if (nrm > 1e-150) {
            double* ga = gp(n.a);
            const double* a = vp(n.a);
            for (size_t i = 0; i < nodes_[n.a].size(); ++i)
              ga[i] += g[0] * a[i] / nrm;
          }
          break;
        }
        case Op::ClampNorm: {
          const double* a = vp(n.a);
          double s = 0.0;
          for (size_t i = 0; i < sz; ++i) s += a[i] * a[i];
          double nrm = std::sqrt(s);
          double* ga = gp(n.a);
          if (nrm <= n.k0) {
            for (size_t i = 0; i < sz; ++i) ga[i] += g[i];
          } else {
            // y = k0 * a / ||a||; dy/da = (k0/||a||)(I - aa^T/||a||^2)
            double ag = 0.0;
            for (size_t i = 0; i < sz; ++i) ag += a[i] * g[i];
            const double scale = n.k0 / nrm;
            for (size_t i = 0; i < sz; ++i)
              ga[i] += scale * (g[i] - a[i] * ag / s);
          }
          break;
        }
        case Op::ScalarMul: {
          const double s = vp(n.a)[0];
          const double* x = vp(n.b);
          double* gs = gp(n.a);
          double* gx = gp(n.b);
          double acc = 0.0;
          for (size_t i = 0; i < sz; ++i) {
            acc += g[i] * x[i];
            gx[i] += s * g[i];
          }
          gs[0] += acc;
          break;
        }
        case Op::Affine: {
          const Node& nw = nodes_[n.a];
          const double* W = vp(n.a);
          const double* X = vp(n.c);
          double* gW = gp(n.a);
          double* gB = gp(n.b);
          double* gX = gp(n.c);
          const int M = n.rows, O = n.cols, I = nw.cols;
          for (int m = 0; m < M; ++m) {
            const double* gr = g + size_t(m) * O;
            const double* xr = X + size_t(m) * I;
            double* gxr = gX + size_t(m) * I;
            for (int o = 0; o < O; ++o) {
              const double go = gr[o];
              if (go == 0.0) continue;
              gB[o] += go;
              const double* wr = W + size_t(o) * I;
              double* gwr = gW + size_t(o) * I;
              for (int i = 0; i < I; ++i) {
                gwr[i] += go * xr[i];
                gxr[i] += go * wr[i];
              }
            }
          }
          break;
        }
        case Op::MaxPool: {
          const Node& nx = nodes_[n.a];
          double* gX = gp(n.a);
          const int D = nx.cols;
          for (int j = 0; j < D; ++j)
            gX[size_t(aux_[size_t(n.aux) + j]) * D + j] += g[j];
          break;
        }
        case Op::MeanPool: {
          const Node& nx = nodes_[n.a];
          double* gX = gp(n.a);
          const int M = nx.rows, D = nx.cols;
          for (int j = 0; j < D; ++j)
            for (int m = 0; m < M; ++m) gX[size_t(m) * D + j] += g[j] / double(M);
          break;
        }
        case Op::Concat2: {
          double* ga = gp(n.a);
          double* gb = gp(n.b);
          const size_t na = nodes_[n.a].size();
          for (size_t i = 0; i < na; ++i) ga[i] += g[i];
          for (size_t i = 0; i < nodes_[n.b].size(); ++i) gb[i] += g[na + i];
          break;
        }
        case Op::Stack: {
          for (int i = 0; i < n.nlist; ++i) gp(extra_[n.list + i])[0] += g[i];
          break;
        }
        case Op::LogSumExp: {
          const double y = vp(id)[0];
          const double* a = vp(n.a);
          double* ga = gp(n.a);
          for (size_t i = 0; i < nodes_[n.a].size(); ++i)
            ga[i] += g[0] * std::exp(a[i] - y);
          break;
        }
        case Op::Softplus: {
          const double* a = vp(n.a);
          double* ga = gp(n.a);
          for (size_t i = 0; i < sz; ++i) ga[i] += g[i] * detail::sigmoid(a[i]);
          break;
        }
        case Op::Sigmoid: {
          const double* y = vp(id);
          double* ga = gp(n.a);
          for (size_t i = 0; i < sz; ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
          break;
        }
        case Op::Tanh: {
          const double* y = vp(id);
          double* ga = gp(n.a);
          for (size_t i = 0; i < sz; ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
          break;
        }
        case Op::Arctanh: {
          const double* a = vp(n.a);
          double* ga = gp(n.a);
          for (size_t i = 0; i < sz; ++i) {
            // saturate: no gradient once the clamp is active
            if (std::abs(a[i]) < kAtanhClamp) ga[i] += g[i] / (1.0 - a[i] * a[i]);
          }
          break;
        }
        case Op::Exp: {
          const double* y = vp(id);
          double* ga = gp(n.a);
          for (size_t i = 0; i < sz; ++i) ga[i] += g[i] * y[i];
          break;
        }
        case Op::Log: {
          const double* a = vp(n.a);
          double* ga = gp(n.a);
          for (size_t i = 0; i < sz; ++i) ga[i] += g[i] / a[i];
          break;
        }
        case Op::Sqrt: {
          const double* y = vp(id);
          double* ga = gp(n.a);
          for (size_t i = 0; i < sz; ++i)
            if (y[i] > 1e-150) ga[i] += g[i] * 0.5 / y[i];
          break;
        }
        case Op::TanhRatio: {
          const double a = vp(n.a)[0], t = vp(n.b)[0];
          double da, dt;
          if (std::abs(t) < 1e-6) {
            da = 1.0 - a * a * t * t;
            dt = -2.0 * a * a * a * t / 3.0;
          } else {
            const double th = std::tanh(a * t);
            da = 1.0 - th * th;
            dt = ((1.0 - th * th) * a * t - th) / (t * t);
          }
          gp(n.a)[0] += g[0] * da;
          gp(n.b)[0] += g[0] * dt;
          break;
        }
        case Op::MobiusScaleCoef: {
          const double u = vp(n.a)[0];
          const double r = n.k0;
          double du;
          if (std::abs(u) < 1e-6) {
            du = 2.0 * (r - r * r * r) * u / 3.0;
          } else if (std::abs(u) >= kAtanhClamp) {
            du = 0.0;
          } else {
            const double T = std::tanh(r * std::atanh(u));
            du = (r * (1.0 - T * T) / (1.0 - u * u) * u - T) / (u * u);
          }
          gp(n.a)[0] += g[0] * du;
          break;
        }
        default:
          throw std::logic_error("Tape: unregistered primitive in backward");
      }
    }
  }
};

// --- geometry composites ----------------------------------------------------
// Each emits the named operation as elementary nodes; the adjoint of the whole
// composite is exact because every elementary rule is.

inline int t_conformal(Tape& t, int x, Curvature c) {
  int n2 = t.dot(x, x);
  int d = t.aff_scalar(n2, -c.value, 1.0);
  return t.aff_scalar(t.recip(d), 2.0, 0.0);
}

inline int t_mobius_add(Tape& t, int x, int y, Curvature c) {
  const double cv = c.value;
  int xy = t.dot(x, y);
  int x2 = t.dot(x, x);
  int y2 = t.dot(y, y);
  int base = t.aff_scalar(xy, 2.0 * cv, 1.0);            // 1 + 2c<x,y>
  int acoef = t.add(base, t.aff_scalar(y2, cv, 0.0));     // + c||y||^2
  int bcoef = t.aff_scalar(x2, -cv, 1.0);                 // 1 - c||x||^2
  int den = t.add(base, t.aff_scalar(t.mul(x2, y2), cv * cv, 0.0));
  int num = t.add(t.scalar_mul(acoef, x), t.scalar_mul(bcoef, y));
  int raw = t.scalar_mul(t.recip(den), num);
  return t.clamp_norm(raw, (1.0 - kBallEps) / c.sqrt_c());
}

inline int t_mobius_scalar_mul(Tape& t, double r, int x, Curvature c) {
  int n = t.norm(x);
  int u = t.aff_scalar(n, c.sqrt_c(), 0.0);
  int coef = t.mobius_scale_coef(u, r);
  return t.clamp_norm(t.scalar_mul(coef, x), (1.0 - kBallEps) / c.sqrt_c());
}

inline int t_hyp_distance(Tape& t, int x, int y, Curvature c) {
  int w = t_mobius_add(t, t.neg(x), y, c);
  int u = t.aff_scalar(t.norm(w), c.sqrt_c(), 0.0);
  return t.aff_scalar(t.arctanh(u), 2.0 / c.sqrt_c(), 0.0);
}

inline int t_hyp_distance_to_origin(Tape& t, int x, Curvature c) {
  int u = t.aff_scalar(t.norm(x), c.sqrt_c(), 0.0);
  return t.aff_scalar(t.arctanh(u), 2.0 / c.sqrt_c(), 0.0);
}

inline int t_exp_map(Tape& t, int x, int v, Curvature c) {
  int lam = t_conformal(t, x, c);
  int a = t.aff_scalar(lam, c.sqrt_c() / 2.0, 0.0);
  int n = t.norm(v);
  int coef = t.aff_scalar(t.tanh_ratio(a, n), 1.0 / c.sqrt_c(), 0.0);
  int sv = t.scalar_mul(coef, v);
  return t_mobius_add(t, x, sv, c);
}

// exp map based at the origin (lambda = 2): the lift used by the encoders
inline int t_exp_map_origin(Tape& t, int v, Curvature c) {
  int a = t.constant(c.sqrt_c());
  int n = t.norm(v);
  int coef = t.aff_scalar(t.tanh_ratio(a, n), 1.0 / c.sqrt_c(), 0.0);
  return t.clamp_norm(t.scalar_mul(coef, v), (1.0 - kBallEps) / c.sqrt_c());
}

inline int t_gyromidpoint(Tape& t, std::span<const int> zs, Curvature c) {
  if (zs.empty()) throw std::domain_error("t_gyromidpoint: empty input");
  int num = -1, den = -1;
  for (int z : zs) {
    int lam = t_conformal(t, z, c);
    int term = t.scalar_mul(lam, z);
    int dterm = t.aff_scalar(lam, 1.0, -1.0);
    num = num < 0 ? term : t.add(num, term);
    den = den < 0 ? dterm : t.add(den, dterm);
  }
  int u = t.clamp_norm(t.scalar_mul(t.recip(den), num), (1.0 - kBallEps) / c.sqrt_c());
  return t_mobius_scalar_mul(t, 0.5, u, c);
}

// --- finite-difference validation -------------------------------------------

struct GradientReport {
  struct Row {
    std::string name;
    double max_rel_err = 0.0;
    int params = 0;
  };
  std::vector<Row> rows;
  double step = 0.0;
  double max_rel_err() const {
    double m = 0.0;
    for (const auto& r : rows) m = std::max(m, r.max_rel_err);
    return m;
  }
};

inline double rel_err(double analytic, double fd) {
  return std::abs(analytic - fd) /
         std::max({std::abs(analytic), std::abs(fd), 1e-8});
}

// Central finite differences of a scalar function against a supplied analytic
// gradient, reported as the max relative error over coordinates.
inline GradientReport::Row finite_diff_check(
    const std::string& name, const std::function<double(const Vec&)>& f,
    const Vec& point, std::span<const double> analytic, double step = 1e-5) {
  GradientReport::Row row;
  row.name = name;
  row.params = int(point.size());
  Vec p = point;
  for (size_t i = 0; i < p.size(); ++i) {
    const double save = p[i];
    p[i] = save + step;
    const double fp = f(p);
    p[i] = save - step;
    const double fm = f(p);
    p[i] = save;
    const double fd = (fp - fm) / (2.0 * step);
    row.max_rel_err = std::max(row.max_rel_err, rel_err(analytic[i], fd));
  }
  return row;
}

}  // namespace hyperipc
