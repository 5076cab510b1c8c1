// SPDX-License-Identifier: Apache-2.0
//
// ngso-bf: user-terminal receive beamforming for NGSO co-frequency
// interference mitigation.
//
// Minimal reverse-mode differentiation over dense f64 tensors. Operations
// are recorded on a tape in execution order; backward() traverses the tape
// in exact reverse. Complex quantities elsewhere in the project are carried
// as paired real/imaginary tensors.

#ifndef NGSOBF_AUTODIFF_HPP
#define NGSOBF_AUTODIFF_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ngsobf::ad {

inline constexpr double kSeluLambda = 1.0507009873554805;
inline constexpr double kSeluAlpha = 1.6732632423543772;

/// Dense row-major f64 tensor, rank 0 (scalar) to 3.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> v;

  static Tensor zeros(std::vector<int> shape) {
    Tensor t;
    t.shape = std::move(shape);
    t.v.assign(numel_of(t.shape), 0.0);
    return t;
  }
  static Tensor scalar(double x) { return {{}, {x}}; }
  static Tensor from(std::vector<int> shape, std::vector<double> vals) {
    Tensor t{std::move(shape), std::move(vals)};
    if (static_cast<int>(t.v.size()) != numel_of(t.shape))
      throw std::invalid_argument("tensor: shape/value size mismatch");
    return t;
  }

  static int numel_of(const std::vector<int>& shape) {
    int n = 1;
    for (int d : shape) {
      if (d < 0) throw std::invalid_argument("tensor: negative dimension");
      n *= d;
    }
    return n;
  }

  int numel() const { return static_cast<int>(v.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
};

using NodeId = int;

enum class Op : std::uint8_t {
  kLeaf,
  kConst,
  kAdd,
  kMul,
  kDiv,
  kMatmul,
  kConv1d,
  kMaxPool1d,
  kSelu,
  kSigmoid,
  kTanh,
  kSum,
  kMean,
  kSquare,
  kSqrt,
  kLog,
  kConcat,
  kSlice,
  kReshape,
  kBatchStatsNormalize,
};

/// Normalization group layout for batch_stats_normalize.
enum class NormMode {
  kGlobal,      // one group: every entry
  kPerChannel,  // rank-2 (C, T): one group per row
};

/// Define-by-run tape. Building an op evaluates it immediately and records
/// the node; backward() fills per-node gradient buffers. Leaf tensors are
/// referenced, not copied, and must outlive the tape.
class Tape {
 public:
  void reserve(int nodes) { nodes_.reserve(nodes); }

  NodeId leaf(const Tensor& t) {
    Node n;
    n.op = Op::kLeaf;
    n.shape = t.shape;
    n.val = t.v.data();
    n.numel = t.numel();
    n.needs_grad = true;
    return push(std::move(n));
  }

  NodeId constant(Tensor t) {
    Node n;
    n.op = Op::kConst;
    n.shape = std::move(t.shape);
    n.owned = std::move(t.v);
    n.val = n.owned.data();
    n.numel = static_cast<int>(n.owned.size());
    n.needs_grad = false;
    return push(std::move(n));
  }

  /// Constant that references external storage instead of copying it; like a
  /// leaf, the tensor must outlive the tape.
  NodeId constant_ref(const Tensor& t) {
    Node n;
    n.op = Op::kConst;
    n.shape = t.shape;
    n.val = t.v.data();
    n.numel = t.numel();
    n.needs_grad = false;
    return push(std::move(n));
  }

  NodeId scalar_const(double x) { return constant(Tensor::scalar(x)); }

  NodeId add(NodeId a, NodeId b) { return binary(Op::kAdd, a, b); }
  NodeId mul(NodeId a, NodeId b) { return binary(Op::kMul, a, b); }
  NodeId div(NodeId a, NodeId b) { return binary(Op::kDiv, a, b); }

  /// (m,k) x (k,n) -> (m,n); a rank-1 right operand is treated as a column,
  /// giving a rank-1 result.
  NodeId matmul(NodeId a, NodeId b) {
    const Node& na = at(a);
    const Node& nb = at(b);
    if (na.rank() != 2) throw std::invalid_argument("matmul: lhs must be rank 2");
    const bool vec = nb.rank() == 1;
    if (!vec && nb.rank() != 2)
      throw std::invalid_argument("matmul: rhs must be rank 1 or 2");
    const int m = na.shape[0], k = na.shape[1];
    const int k2 = nb.shape[0], ncols = vec ? 1 : nb.shape[1];
    if (k != k2) throw std::invalid_argument("matmul: inner dims differ");
    Node n = make(Op::kMatmul, {a, b}, vec ? std::vector<int>{m}
                                           : std::vector<int>{m, ncols});
    const double* av = at(a).val;
    const double* bv = at(b).val;
    double* out = n.owned.data();
    if (ncols == 1) {
      for (int i = 0; i < m; ++i) {
        const double* arow = av + i * k;
        double acc = 0.0;
        for (int l = 0; l < k; ++l) acc += arow[l] * bv[l];
        out[i] = acc;
      }
    } else {
      for (int i = 0; i < m; ++i) {
        double* orow = out + i * ncols;
        const double* arow = av + i * k;
        for (int l = 0; l < k; ++l) {
          const double x = arow[l];
          const double* brow = bv + l * ncols;
          for (int j = 0; j < ncols; ++j) orow[j] += x * brow[j];
        }
      }
    }
    return push(std::move(n));
  }

  /// 1-D convolution, stride 1, zero "same" padding: x (C_in, T) with kernel
  /// (C_out, C_in, k) gives (C_out, T). Left pad is (k-1)/2.
  NodeId conv1d(NodeId x, NodeId kernel) {
    const Node& nx = at(x);
    const Node& nw = at(kernel);
    if (nx.rank() != 2 || nw.rank() != 3)
      throw std::invalid_argument("conv1d: wants x (C,T), kernel (Co,C,k)");
    const int cin = nx.shape[0], t = nx.shape[1];
    const int cout = nw.shape[0], k = nw.shape[2];
    if (nw.shape[1] != cin) throw std::invalid_argument("conv1d: channel mismatch");
    Node n = make(Op::kConv1d, {x, kernel}, {cout, t});
    const int pad = (k - 1) / 2;
    const double* xv = nx.val;
    const double* wv = nw.val;
    double* out = n.owned.data();
    for (int co = 0; co < cout; ++co) {
      double* orow = out + co * t;
      for (int ci = 0; ci < cin; ++ci) {
        const double* xrow = xv + ci * t;
        const double* wrow = wv + (co * cin + ci) * k;
        for (int dk = 0; dk < k; ++dk) {
          const double w = wrow[dk];
          const int shift = dk - pad;
          const int lo = std::max(0, -shift);
          const int hi = std::min(t, t - shift);
          for (int j = lo; j < hi; ++j) orow[j] += w * xrow[j + shift];
        }
      }
    }
    return push(std::move(n));
  }

  /// Max pooling over the time axis of (C, T). Ties go to the lowest index.
  NodeId maxpool1d(NodeId x, int kernel, int stride) {
    const Node& nx = at(x);
    if (nx.rank() != 2) throw std::invalid_argument("maxpool1d: wants (C,T)");
    if (kernel < 1 || stride < 1)
      throw std::invalid_argument("maxpool1d: kernel and stride must be >= 1");
    const int c = nx.shape[0], t = nx.shape[1];
    if (t < kernel) throw std::invalid_argument("maxpool1d: T < kernel");
    const int to = (t - kernel) / stride + 1;
    Node n = make(Op::kMaxPool1d, {x}, {c, to});
    n.a0 = kernel;
    n.a1 = stride;
    n.saved_i.resize(static_cast<std::size_t>(c) * to);
    const double* xv = nx.val;
    for (int i = 0; i < c; ++i) {
      for (int j = 0; j < to; ++j) {
        const int base = j * stride;
        int best = base;
        double bv = xv[i * t + base];
        for (int u = 1; u < kernel; ++u) {
          const double cand = xv[i * t + base + u];
          if (cand > bv) {
            bv = cand;
            best = base + u;
          }
        }
        n.owned[i * to + j] = bv;
        n.saved_i[i * to + j] = best;
      }
    }
    return push(std::move(n));
  }

  NodeId selu(NodeId x) {
    return unary(Op::kSelu, x, [](double v) {
      return v > 0.0 ? kSeluLambda * v
                     : kSeluLambda * kSeluAlpha * (std::exp(v) - 1.0);
    });
  }
  NodeId sigmoid(NodeId x) {
    return unary(Op::kSigmoid, x,
                 [](double v) { return 1.0 / (1.0 + std::exp(-v)); });
  }
  NodeId tanh(NodeId x) {
    return unary(Op::kTanh, x, [](double v) { return std::tanh(v); });
  }
  NodeId square(NodeId x) {
    return unary(Op::kSquare, x, [](double v) { return v * v; });
  }
  NodeId sqrt(NodeId x) {
    const Node& nx = at(x);
    for (int i = 0; i < nx.numel; ++i)
      if (nx.val[i] < 0.0)
        throw std::invalid_argument("sqrt: negative input");
    return unary(Op::kSqrt, x, [](double v) { return std::sqrt(v); });
  }
  NodeId log(NodeId x) {
    const Node& nx = at(x);
    for (int i = 0; i < nx.numel; ++i)
      if (!(nx.val[i] > 0.0))
        throw std::invalid_argument("log: non-positive input");
    return unary(Op::kLog, x, [](double v) { return std::log(v); });
  }

  NodeId sum(NodeId x) { return reduce(Op::kSum, x); }
  NodeId mean(NodeId x) { return reduce(Op::kMean, x); }

  NodeId concat(const std::vector<NodeId>& parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    const Node& first = at(parts[0]);
    const int rank = first.rank();
    if (axis < 0 || axis >= rank) throw std::invalid_argument("concat: bad axis");
    std::vector<int> shape = first.shape;
    shape[axis] = 0;
    for (NodeId p : parts) {
      const Node& np = at(p);
      if (np.rank() != rank) throw std::invalid_argument("concat: rank mismatch");
      for (int d = 0; d < rank; ++d)
        if (d != axis && np.shape[d] != first.shape[d])
          throw std::invalid_argument("concat: dim mismatch");
      shape[axis] += np.shape[axis];
    }
    Node n = make(Op::kConcat, parts, shape);
    n.a0 = axis;
    // Copy blocks. For rank 2 / axis 1 this interleaves per row.
    const int rows = rank == 2 ? shape[0] : 1;
    const int out_cols = rank == 2 ? shape[1] : shape[0];
    if (axis == 0 && rank <= 2) {
      double* dst = n.owned.data();
      for (NodeId p : parts) {
        const Node& np = at(p);
        std::copy(np.val, np.val + np.numel, dst);
        dst += np.numel;
      }
    } else {  // rank 2, axis 1
      int col0 = 0;
      for (NodeId p : parts) {
        const Node& np = at(p);
        const int w = np.shape[1];
        for (int r = 0; r < rows; ++r)
          std::copy(np.val + r * w, np.val + (r + 1) * w,
                    n.owned.data() + r * out_cols + col0);
        col0 += w;
      }
    }
    return push(std::move(n));
  }

  NodeId slice(NodeId x, int axis, int start, int len) {
    const Node& nx = at(x);
    const int rank = nx.rank();
    if (rank < 1 || rank > 2) throw std::invalid_argument("slice: rank 1 or 2");
    if (axis < 0 || axis >= rank) throw std::invalid_argument("slice: bad axis");
    if (start < 0 || len < 1 || start + len > nx.shape[axis])
      throw std::invalid_argument("slice: out of range");
    std::vector<int> shape = nx.shape;
    shape[axis] = len;
    Node n = make(Op::kSlice, {x}, shape);
    n.a0 = axis;
    n.a1 = start;
    if (rank == 1 || axis == 0) {
      const int row = rank == 2 ? nx.shape[1] : 1;
      std::copy(nx.val + start * row, nx.val + (start + len) * row,
                n.owned.data());
    } else {
      const int t = nx.shape[1];
      for (int r = 0; r < nx.shape[0]; ++r)
        std::copy(nx.val + r * t + start, nx.val + r * t + start + len,
                  n.owned.data() + r * len);
    }
    return push(std::move(n));
  }

  /// Shape change only; values pass through unchanged.
  NodeId reshape(NodeId x, std::vector<int> shape) {
    const Node& nx = at(x);
    if (Tensor::numel_of(shape) != nx.numel)
      throw std::invalid_argument("reshape: element count mismatch");
    Node n = make(Op::kReshape, {x}, std::move(shape));
    std::copy(nx.val, nx.val + nx.numel, n.owned.data());
    return push(std::move(n));
  }

  /// y = (x - mean) / sqrt(var + eps) with biased variance, per normalization
  /// group. A group whose var + eps is zero yields zeros (and zero gradient).
  /// Saved per group: mean, variance, inverse std.
  NodeId batch_stats_normalize(NodeId x, NormMode mode, double eps) {
    const Node& nx = at(x);
    if (eps < 0.0) throw std::invalid_argument("normalize: eps must be >= 0");
    int groups = 1, span = nx.numel;
    if (mode == NormMode::kPerChannel) {
      if (nx.rank() != 2)
        throw std::invalid_argument("normalize: per-channel wants rank 2");
      groups = nx.shape[0];
      span = nx.shape[1];
    }
    if (span < 1) throw std::invalid_argument("normalize: empty group");
    Node n = make(Op::kBatchStatsNormalize, {x}, nx.shape);
    n.a0 = static_cast<int>(mode);
    n.d0 = eps;
    n.saved.resize(3 * static_cast<std::size_t>(groups));
    for (int gidx = 0; gidx < groups; ++gidx) {
      const double* xg = nx.val + gidx * span;
      double* yg = n.owned.data() + gidx * span;
      double mean = 0.0;
      for (int i = 0; i < span; ++i) mean += xg[i];
      mean /= span;
      double var = 0.0;
      for (int i = 0; i < span; ++i) {
        const double d = xg[i] - mean;
        var += d * d;
      }
      var /= span;
      const double denom2 = var + eps;
      const double inv = denom2 > 0.0 ? 1.0 / std::sqrt(denom2) : 0.0;
      for (int i = 0; i < span; ++i) yg[i] = (xg[i] - mean) * inv;
      n.saved[3 * gidx + 0] = mean;
      n.saved[3 * gidx + 1] = var;
      n.saved[3 * gidx + 2] = inv;
    }
    return push(std::move(n));
  }

  /// Group statistics recorded by a batch_stats_normalize node.
  void normalization_stats(NodeId id, std::vector<double>* mean,
                           std::vector<double>* var) const {
    const Node& n = at(id);
    if (n.op != Op::kBatchStatsNormalize)
      throw std::invalid_argument("normalization_stats: wrong node kind");
    const int groups = static_cast<int>(n.saved.size() / 3);
    mean->resize(groups);
    var->resize(groups);
    for (int g = 0; g < groups; ++g) {
      (*mean)[g] = n.saved[3 * g + 0];
      (*var)[g] = n.saved[3 * g + 1];
    }
  }

  // -- access --------------------------------------------------------------

  std::span<const double> values(NodeId id) const {
    const Node& n = at(id);
    return {n.val, static_cast<std::size_t>(n.numel)};
  }
  const std::vector<int>& shape(NodeId id) const { return at(id).shape; }
  double scalar_value(NodeId id) const {
    const Node& n = at(id);
    if (n.numel != 1) throw std::invalid_argument("scalar_value: not scalar");
    return n.val[0];
  }
  Tensor value_copy(NodeId id) const {
    const Node& n = at(id);
    return Tensor{n.shape, std::vector<double>(n.val, n.val + n.numel)};
  }
  /// Gradient buffer (valid after backward; empty span if the node does not
  /// track gradients).
  std::span<const double> grad(NodeId id) const {
    const Node& n = at(id);
    return {n.grad.data(), n.grad.size()};
  }
  int size() const { return static_cast<int>(nodes_.size()); }

  // -- backward ------------------------------------------------------------

  /// Reverse sweep from a scalar loss. Gradient buffers of every
  /// gradient-tracking node are (re)set to zero first, so leaves that do not
  /// reach the loss end up with exactly zero gradient.
  void backward(NodeId loss) {
    Node& ln = at(loss);
    if (ln.numel != 1)
      throw std::invalid_argument("backward: loss must be scalar");
    for (Node& n : nodes_)
      if (n.needs_grad)
        n.grad.assign(n.numel, 0.0);
      else
        n.grad.clear();
    if (!ln.needs_grad) return;  // loss independent of every leaf
    ln.grad[0] = 1.0;
    for (int i = loss; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.needs_grad || n.op == Op::kLeaf || n.op == Op::kConst) continue;
      dispatch_backward(n);
    }
  }

 private:
  struct Node {
    Op op = Op::kConst;
    std::vector<NodeId> in;
    std::vector<int> shape;
    const double* val = nullptr;
    int numel = 0;
    std::vector<double> owned;
    std::vector<double> saved;
    std::vector<int> saved_i;
    std::vector<double> grad;
    int a0 = 0, a1 = 0;
    double d0 = 0.0;
    bool needs_grad = false;

    int rank() const { return static_cast<int>(shape.size()); }
  };

  enum class Broadcast { kNone, kLhsScalar, kRhsScalar, kLhsRow, kRhsRow };

  std::vector<Node> nodes_;

  const Node& at(NodeId id) const {
    if (id < 0 || id >= size()) throw std::invalid_argument("bad node id");
    return nodes_[id];
  }
  Node& at(NodeId id) {
    if (id < 0 || id >= size()) throw std::invalid_argument("bad node id");
    return nodes_[id];
  }

  NodeId push(Node&& n) {
    nodes_.push_back(std::move(n));
    return size() - 1;
  }

  Node make(Op op, std::vector<NodeId> inputs, std::vector<int> shape) {
    Node n;
    n.op = op;
    n.in = std::move(inputs);
    n.shape = std::move(shape);
    n.numel = Tensor::numel_of(n.shape);
    n.owned.assign(n.numel, 0.0);
    n.val = n.owned.data();
    for (NodeId i : n.in) n.needs_grad = n.needs_grad || at(i).needs_grad;
    return n;
  }

  template <typename F>
  NodeId unary(Op op, NodeId x, F&& f) {
    const Node& nx = at(x);
    Node n = make(op, {x}, nx.shape);
    for (int i = 0; i < n.numel; ++i) n.owned[i] = f(nx.val[i]);
    return push(std::move(n));
  }

  NodeId reduce(Op op, NodeId x) {
    const Node& nx = at(x);
    if (nx.numel < 1) throw std::invalid_argument("reduce: empty input");
    Node n = make(op, {x}, {});
    double acc = 0.0;
    for (int i = 0; i < nx.numel; ++i) acc += nx.val[i];
    n.owned[0] = op == Op::kMean ? acc / nx.numel : acc;
    return push(std::move(n));
  }

  static Broadcast broadcast_kind(const Node& a, const Node& b) {
    if (a.shape == b.shape) return Broadcast::kNone;
    if (b.numel == 1) return Broadcast::kRhsScalar;
    if (a.numel == 1) return Broadcast::kLhsScalar;
    if (a.rank() == 2 && b.rank() == 1 && b.shape[0] == a.shape[0])
      return Broadcast::kRhsRow;  // (C,T) op (C): b indexed by row
    if (b.rank() == 2 && a.rank() == 1 && a.shape[0] == b.shape[0])
      return Broadcast::kLhsRow;
    throw std::invalid_argument("elementwise: incompatible shapes");
  }

  NodeId binary(Op op, NodeId a, NodeId b) {
    const Node& na = at(a);
    const Node& nb = at(b);
    const Broadcast bc = broadcast_kind(na, nb);
    const bool out_is_a =
        bc == Broadcast::kNone || bc == Broadcast::kRhsScalar ||
        bc == Broadcast::kRhsRow;
    Node n = make(op, {a, b}, out_is_a ? na.shape : nb.shape);
    n.a0 = static_cast<int>(bc);
    const int cols = n.rank() == 2 ? n.shape[1] : n.numel;
    for (int i = 0; i < n.numel; ++i) {
      const double x = na.val[map_index(bc, true, i, cols)];
      const double y = nb.val[map_index(bc, false, i, cols)];
      n.owned[i] = op == Op::kAdd ? x + y : op == Op::kMul ? x * y : x / y;
    }
    return push(std::move(n));
  }

  // Maps an output index to the operand index under the broadcast kind.
  static int map_index(Broadcast bc, bool lhs, int i, int cols) {
    switch (bc) {
      case Broadcast::kNone: return i;
      case Broadcast::kLhsScalar: return lhs ? 0 : i;
      case Broadcast::kRhsScalar: return lhs ? i : 0;
      case Broadcast::kLhsRow: return lhs ? i / cols : i;
      case Broadcast::kRhsRow: return lhs ? i : i / cols;
    }
    return i;
  }

  void accumulate(NodeId target, int index, double g) {
    Node& t = nodes_[target];
    if (!t.grad.empty()) t.grad[index] += g;
  }

  void dispatch_backward(Node& n) {
    const std::span<const double> g{n.grad.data(), n.grad.size()};
    switch (n.op) {
      case Op::kAdd:
      case Op::kMul:
      case Op::kDiv: {
        Node& a = nodes_[n.in[0]];
        Node& b = nodes_[n.in[1]];
        const Broadcast bc = static_cast<Broadcast>(n.a0);
        const int cols = n.rank() == 2 ? n.shape[1] : n.numel;
        for (int i = 0; i < n.numel; ++i) {
          const int ia = map_index(bc, true, i, cols);
          const int ib = map_index(bc, false, i, cols);
          const double gv = g[i];
          if (n.op == Op::kAdd) {
            accumulate(n.in[0], ia, gv);
            accumulate(n.in[1], ib, gv);
          } else if (n.op == Op::kMul) {
            accumulate(n.in[0], ia, gv * b.val[ib]);
            accumulate(n.in[1], ib, gv * a.val[ia]);
          } else {
            const double bv = b.val[ib];
            accumulate(n.in[0], ia, gv / bv);
            accumulate(n.in[1], ib, -gv * a.val[ia] / (bv * bv));
          }
        }
        break;
      }
      case Op::kMatmul: {
        Node& a = nodes_[n.in[0]];
        Node& b = nodes_[n.in[1]];
        const int m = a.shape[0], k = a.shape[1];
        const int ncols = b.rank() == 1 ? 1 : b.shape[1];
        if (!a.grad.empty()) {
          // gA[i,l] = sum_j g[i,j] * B[l,j]
          if (ncols == 1) {
            for (int i = 0; i < m; ++i) {
              const double gi = g[i];
              double* garow = a.grad.data() + i * k;
              for (int l = 0; l < k; ++l) garow[l] += gi * b.val[l];
            }
          } else {
            for (int i = 0; i < m; ++i) {
              const double* grow = g.data() + i * ncols;
              for (int l = 0; l < k; ++l) {
                const double* brow = b.val + l * ncols;
                double acc = 0.0;
                for (int j = 0; j < ncols; ++j) acc += grow[j] * brow[j];
                a.grad[i * k + l] += acc;
              }
            }
          }
        }
        if (!b.grad.empty()) {
          // gB[l,j] = sum_i A[i,l] * g[i,j]
          if (ncols == 1) {
            double* gb = b.grad.data();
            for (int i = 0; i < m; ++i) {
              const double gi = g[i];
              const double* arow = a.val + i * k;
              for (int l = 0; l < k; ++l) gb[l] += gi * arow[l];
            }
          } else {
            for (int i = 0; i < m; ++i) {
              const double* arow = a.val + i * k;
              const double* grow = g.data() + i * ncols;
              for (int l = 0; l < k; ++l) {
                const double x = arow[l];
                double* brow = b.grad.data() + l * ncols;
                for (int j = 0; j < ncols; ++j) brow[j] += x * grow[j];
              }
            }
          }
        }
        break;
      }
      case Op::kConv1d: {
        Node& x = nodes_[n.in[0]];
        Node& w = nodes_[n.in[1]];
        const int cin = x.shape[0], t = x.shape[1];
        const int cout = w.shape[0], k = w.shape[2];
        const int pad = (k - 1) / 2;
        for (int co = 0; co < cout; ++co) {
          const double* grow = g.data() + co * t;
          for (int ci = 0; ci < cin; ++ci) {
            const double* xrow = x.val + ci * t;
            for (int dk = 0; dk < k; ++dk) {
              const int shift = dk - pad;
              const int lo = std::max(0, -shift);
              const int hi = std::min(t, t - shift);
              if (!w.grad.empty()) {
                double acc = 0.0;
                for (int j = lo; j < hi; ++j) acc += grow[j] * xrow[j + shift];
                w.grad[(co * cin + ci) * k + dk] += acc;
              }
              if (!x.grad.empty()) {
                const double wv = w.val[(co * cin + ci) * k + dk];
                double* gx = x.grad.data() + ci * t;
                for (int j = lo; j < hi; ++j) gx[j + shift] += wv * grow[j];
              }
            }
          }
        }
        break;
      }
      case Op::kMaxPool1d: {
        // Gradient flows only to the argmax positions.
        Node& x = nodes_[n.in[0]];
        if (x.grad.empty()) break;
        const int to = n.shape[1];
        for (int i = 0; i < n.shape[0]; ++i)
          for (int j = 0; j < to; ++j)
            x.grad[i * x.shape[1] + n.saved_i[i * to + j]] += g[i * to + j];
        break;
      }
      case Op::kSelu: {
        Node& x = nodes_[n.in[0]];
        if (x.grad.empty()) break;
        for (int i = 0; i < n.numel; ++i)
          x.grad[i] += g[i] * (x.val[i] > 0.0
                                   ? kSeluLambda
                                   : n.val[i] + kSeluLambda * kSeluAlpha);
        break;
      }
      case Op::kSigmoid: {
        Node& x = nodes_[n.in[0]];
        if (x.grad.empty()) break;
        for (int i = 0; i < n.numel; ++i)
          x.grad[i] += g[i] * n.val[i] * (1.0 - n.val[i]);
        break;
      }
      case Op::kTanh: {
        Node& x = nodes_[n.in[0]];
        if (x.grad.empty()) break;
        for (int i = 0; i < n.numel; ++i)
          x.grad[i] += g[i] * (1.0 - n.val[i] * n.val[i]);
        break;
      }
      case Op::kSum: {
        Node& x = nodes_[n.in[0]];
        if (x.grad.empty()) break;
        for (int i = 0; i < x.numel; ++i) x.grad[i] += g[0];
        break;
      }
      case Op::kMean: {
        Node& x = nodes_[n.in[0]];
        if (x.grad.empty()) break;
        const double s = g[0] / x.numel;
        for (int i = 0; i < x.numel; ++i) x.grad[i] += s;
        break;
      }
      case Op::kSquare: {
        Node& x = nodes_[n.in[0]];
        if (x.grad.empty()) break;
        for (int i = 0; i < n.numel; ++i) x.grad[i] += g[i] * 2.0 * x.val[i];
        break;
      }
      case Op::kSqrt: {
        Node& x = nodes_[n.in[0]];
        if (x.grad.empty()) break;
        for (int i = 0; i < n.numel; ++i) x.grad[i] += g[i] * 0.5 / n.val[i];
        break;
      }
      case Op::kLog: {
        Node& x = nodes_[n.in[0]];
        if (x.grad.empty()) break;
        for (int i = 0; i < n.numel; ++i) x.grad[i] += g[i] / x.val[i];
        break;
      }
      case Op::kConcat: {
        const int axis = n.a0;
        if (axis == 0 || n.rank() == 1) {
          int offset = 0;
          for (NodeId p : n.in) {
            Node& np = nodes_[p];
            if (!np.grad.empty())
              for (int i = 0; i < np.numel; ++i) np.grad[i] += g[offset + i];
            offset += np.numel;
          }
        } else {
          const int rows = n.shape[0], out_cols = n.shape[1];
          int col0 = 0;
          for (NodeId p : n.in) {
            Node& np = nodes_[p];
            const int w = np.shape[1];
            if (!np.grad.empty())
              for (int r = 0; r < rows; ++r)
                for (int c = 0; c < w; ++c)
                  np.grad[r * w + c] += g[r * out_cols + col0 + c];
            col0 += w;
          }
        }
        break;
      }
      case Op::kSlice: {
        Node& x = nodes_[n.in[0]];
        if (x.grad.empty()) break;
        const int axis = n.a0, start = n.a1;
        if (x.rank() == 1 || axis == 0) {
          const int row = x.rank() == 2 ? x.shape[1] : 1;
          for (int i = 0; i < n.numel; ++i) x.grad[start * row + i] += g[i];
        } else {
          const int t = x.shape[1], len = n.shape[1];
          for (int r = 0; r < x.shape[0]; ++r)
            for (int c = 0; c < len; ++c)
              x.grad[r * t + start + c] += g[r * len + c];
        }
        break;
      }
      case Op::kReshape: {
        Node& x = nodes_[n.in[0]];
        if (x.grad.empty()) break;
        for (int i = 0; i < n.numel; ++i) x.grad[i] += g[i];
        break;
      }
      case Op::kBatchStatsNormalize: {
        Node& x = nodes_[n.in[0]];
        if (x.grad.empty()) break;
        const int groups = static_cast<int>(n.saved.size() / 3);
        const int span = n.numel / groups;
        for (int gidx = 0; gidx < groups; ++gidx) {
          const double inv = n.saved[3 * gidx + 2];
          const double* yg = n.val + gidx * span;
          const double* gg = g.data() + gidx * span;
          double mg = 0.0, mgy = 0.0;
          for (int i = 0; i < span; ++i) {
            mg += gg[i];
            mgy += gg[i] * yg[i];
          }
          mg /= span;
          mgy /= span;
          double* gx = x.grad.data() + gidx * span;
          for (int i = 0; i < span; ++i)
            gx[i] += inv * (gg[i] - mg - yg[i] * mgy);
        }
        break;
      }
      case Op::kLeaf:
      case Op::kConst:
        break;
    }
  }
};

/// Central-difference check of backward() for a scalar-valued builder.
/// `build` receives a tape plus the leaf ids of `points` (in order) and
/// returns the loss node. The relative error of coordinate j is
/// |ad - fd| / max(1, |ad|, |fd|).
template <typename BuildFn>
double gradient_check_max_rel_error(std::vector<Tensor> points, BuildFn&& build,
                                    double h = 1e-6) {
  auto eval = [&](const std::vector<Tensor>& pts) {
    Tape tape;
    std::vector<NodeId> ids;
    ids.reserve(pts.size());
    for (const Tensor& p : pts) ids.push_back(tape.leaf(p));
    return tape.scalar_value(build(tape, ids));
  };

  Tape tape;
  std::vector<NodeId> ids;
  for (const Tensor& p : points) ids.push_back(tape.leaf(p));
  const NodeId loss = build(tape, ids);
  tape.backward(loss);
  std::vector<std::vector<double>> ad;
  for (NodeId id : ids) {
    auto g = tape.grad(id);
    ad.emplace_back(g.begin(), g.end());
  }

  double worst = 0.0;
  for (std::size_t p = 0; p < points.size(); ++p) {
    for (int j = 0; j < points[p].numel(); ++j) {
      const double x0 = points[p].v[j];
      points[p].v[j] = x0 + h;
      const double fp = eval(points);
      points[p].v[j] = x0 - h;
      const double fm = eval(points);
      points[p].v[j] = x0;
      const double fd = (fp - fm) / (2.0 * h);
      const double a = ad[p][j];
      const double rel =
          std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace ngsobf::ad

#endif  // NGSOBF_AUTODIFF_HPP
