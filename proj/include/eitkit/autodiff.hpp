#pragma once

// Minimal reverse-mode automatic differentiation over dense rank <= 4
// tensors, scalar-templated so the same graphs run in float for training and
// in double for finite-difference verification. The layer vocabulary is the
// closed set needed by the forward-operator and reconstruction networks.

#include <array>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "eitkit/common.hpp"

namespace eitkit::ad {

template <class S>
using ArrayX = Eigen::Array<S, Eigen::Dynamic, 1>;
template <class S>
using MatrixRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Shape {
  std::array<int, 4> d{0, 0, 0, 0};
  int rank = 0;

  static Shape of(std::initializer_list<int> dims) {
    Shape s;
    if (dims.size() > 4) throw ShapeError("Shape: rank exceeds 4");
    for (int v : dims) {
      if (v <= 0) throw ShapeError("Shape: dimensions must be positive");
      s.d[static_cast<std::size_t>(s.rank++)] = v;
    }
    return s;
  }

  int count() const {
    int n = 1;
    for (int i = 0; i < rank; ++i) n *= d[static_cast<std::size_t>(i)];
    return n;
  }

  bool operator==(const Shape& o) const { return rank == o.rank && d == o.d; }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    std::string s = "(";
    for (int i = 0; i < rank; ++i) {
      if (i) s += ",";
      s += std::to_string(d[static_cast<std::size_t>(i)]);
    }
    return s + ")";
  }
};

template <class S>
struct Tensor {
  Shape shape;
  ArrayX<S> v;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(s), v(ArrayX<S>::Zero(s.count())) {}

  static Tensor zeros(Shape s) { return Tensor(s); }
  static Tensor zeros(std::initializer_list<int> dims) { return Tensor(Shape::of(dims)); }

  int count() const { return shape.count(); }

  S& at(std::initializer_list<int> idx) {
    int flat = 0, i = 0;
    for (int k : idx) flat = flat * shape.d[static_cast<std::size_t>(i)] + k, ++i;
    return v[flat];
  }

  template <class T>
  Tensor<T> cast() const {
    Tensor<T> out;
    out.shape = shape;
    out.v = v.template cast<T>();
    return out;
  }

  bool all_finite() const { return v.isFinite().all(); }
};

enum class OpKind : std::uint8_t {
  input,
  dense,
  conv3x3,
  conv1x1,
  relu,
  maxpool2,
  upsample2,
  concat_channels,
  global_mean,
  reshape,
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::input: return "input";
    case OpKind::dense: return "dense";
    case OpKind::conv3x3: return "conv3x3";
    case OpKind::conv1x1: return "conv1x1";
    case OpKind::relu: return "relu";
    case OpKind::maxpool2: return "maxpool2";
    case OpKind::upsample2: return "upsample2";
    case OpKind::concat_channels: return "concat_channels";
    case OpKind::global_mean: return "global_mean";
    case OpKind::reshape: return "reshape";
  }
  return "?";
}

struct Node {
  OpKind kind = OpKind::input;
  int a = -1, b = -1;    // operand node ids
  int w = -1, bias = -1; // parameter slots
  Shape out;             // per-sample shape (no batch dimension)
};

/// Static computation graph. Nodes are added in topological order; every
/// shape is validated at construction so ill-formed graphs never reach
/// training. Parameters are registered with the graph (name + shape) and
/// valued separately in a ParameterSet.
class Graph {
 public:
  int add_param(const std::string& name, Shape shape) {
    params_.emplace_back(name, shape);
    return static_cast<int>(params_.size()) - 1;
  }

  int add_input(Shape per_sample) {
    if (input_ >= 0) throw ShapeError("graph: only one input node is supported");
    input_ = push({OpKind::input, -1, -1, -1, -1, per_sample});
    return input_;
  }

  int add_dense(int a, int out_features, const std::string& name) {
    const Shape in = node_shape(a, OpKind::dense, 1);
    const int w = add_param(name + ".w", Shape::of({out_features, in.d[0]}));
    const int b = add_param(name + ".b", Shape::of({out_features}));
    return push({OpKind::dense, a, -1, w, b, Shape::of({out_features})});
  }

  int add_conv3x3(int a, int out_channels, const std::string& name) {
    const Shape in = node_shape(a, OpKind::conv3x3, 3);
    const int w = add_param(name + ".w", Shape::of({out_channels, in.d[0], 3, 3}));
    const int b = add_param(name + ".b", Shape::of({out_channels}));
    return push({OpKind::conv3x3, a, -1, w, b, Shape::of({out_channels, in.d[1], in.d[2]})});
  }

  int add_conv1x1(int a, int out_channels, const std::string& name) {
    const Shape in = node_shape(a, OpKind::conv1x1, 3);
    const int w = add_param(name + ".w", Shape::of({out_channels, in.d[0]}));
    const int b = add_param(name + ".b", Shape::of({out_channels}));
    return push({OpKind::conv1x1, a, -1, w, b, Shape::of({out_channels, in.d[1], in.d[2]})});
  }

  int add_relu(int a) {
    const Shape in = node_shape(a, OpKind::relu, -1);
    return push({OpKind::relu, a, -1, -1, -1, in});
  }

  int add_maxpool2(int a) {
    const Shape in = node_shape(a, OpKind::maxpool2, 3);
    if (in.d[1] % 2 != 0 || in.d[2] % 2 != 0)
      throw ShapeError("maxpool2: spatial dims must be even, got " + in.str());
    return push({OpKind::maxpool2, a, -1, -1, -1, Shape::of({in.d[0], in.d[1] / 2, in.d[2] / 2})});
  }

  int add_upsample2(int a) {
    const Shape in = node_shape(a, OpKind::upsample2, 3);
    return push({OpKind::upsample2, a, -1, -1, -1, Shape::of({in.d[0], in.d[1] * 2, in.d[2] * 2})});
  }

  int add_concat_channels(int a, int b) {
    const Shape sa = node_shape(a, OpKind::concat_channels, 3);
    const Shape sb = node_shape(b, OpKind::concat_channels, 3);
    if (sa.d[1] != sb.d[1] || sa.d[2] != sb.d[2])
      throw ShapeError("concat_channels: spatial dims differ, " + sa.str() + " vs " + sb.str());
    return push({OpKind::concat_channels, a, b, -1, -1,
                 Shape::of({sa.d[0] + sb.d[0], sa.d[1], sa.d[2]})});
  }

  int add_global_mean(int a) {
    const Shape in = node_shape(a, OpKind::global_mean, 3);
    return push({OpKind::global_mean, a, -1, -1, -1, Shape::of({in.d[0]})});
  }

  int add_reshape(int a, Shape target) {
    const Shape in = node_shape(a, OpKind::reshape, -1);
    if (in.count() != target.count())
      throw ShapeError("reshape: element count mismatch, " + in.str() + " -> " + target.str());
    return push({OpKind::reshape, a, -1, -1, -1, target});
  }

  void set_output(int id) {
    check_node(id);
    output_ = id;
  }

  int output() const { return output_ >= 0 ? output_ : static_cast<int>(nodes_.size()) - 1; }
  int input() const { return input_; }
  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<std::pair<std::string, Shape>>& params() const { return params_; }

 private:
  int push(Node n) {
    nodes_.push_back(n);
    return static_cast<int>(nodes_.size()) - 1;
  }

  void check_node(int id) const {
    if (id < 0 || id >= static_cast<int>(nodes_.size()))
      throw ShapeError("graph: node id " + std::to_string(id) + " out of range");
  }

  Shape node_shape(int id, OpKind for_op, int want_rank) const {
    check_node(id);
    const Shape s = nodes_[static_cast<std::size_t>(id)].out;
    if (want_rank > 0 && s.rank != want_rank)
      throw ShapeError(std::string(op_name(for_op)) + ": operand must have per-sample rank " +
                       std::to_string(want_rank) + ", got " + s.str());
    return s;
  }

  std::vector<Node> nodes_;
  std::vector<std::pair<std::string, Shape>> params_;
  int input_ = -1;
  int output_ = -1;
};

template <class S>
struct ParameterSet {
  std::vector<Tensor<S>> values;
  std::uint64_t revision = 0;

  static ParameterSet zeros(const Graph& g) {
    ParameterSet p;
    p.values.reserve(g.params().size());
    for (const auto& [name, shape] : g.params()) p.values.emplace_back(shape);
    return p;
  }

  Tensor<S>& operator[](int slot) { return values[static_cast<std::size_t>(slot)]; }
  const Tensor<S>& operator[](int slot) const { return values[static_cast<std::size_t>(slot)]; }

  std::uint64_t byte_hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& t : values) {
      const std::uint64_t hh =
          fnv1a64(t.v.data(), static_cast<std::size_t>(t.count()) * sizeof(S));
      h = splitmix64(h ^ hh);
    }
    return h;
  }

  template <class T>
  ParameterSet<T> cast() const {
    ParameterSet<T> out;
    out.revision = revision;
    out.values.reserve(values.size());
    for (const auto& t : values) out.values.push_back(t.template cast<T>());
    return out;
  }
};

template <class S>
void he_normal_init(Tensor<S>& t, int fan_in, Rng& rng) {
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (Eigen::Index i = 0; i < t.v.size(); ++i) t.v[i] = static_cast<S>(std * rng.normal());
}

/// He initialization for every weight the graph registered; biases stay zero.
/// Slots listed in `zero_slots` are left at zero (e.g. a final layer that
/// must start as the identity-free branch).
template <class S>
ParameterSet<S> init_parameters(const Graph& g, Rng& rng, const std::vector<int>& zero_slots = {}) {
  ParameterSet<S> p = ParameterSet<S>::zeros(g);
  for (std::size_t slot = 0; slot < g.params().size(); ++slot) {
    const auto& [name, shape] = g.params()[slot];
    if (name.size() >= 2 && name.compare(name.size() - 2, 2, ".b") == 0) continue;
    bool zero = false;
    for (int z : zero_slots)
      if (z == static_cast<int>(slot)) zero = true;
    if (zero) continue;
    int fan_in = shape.rank >= 2 ? shape.count() / shape.d[0] : shape.count();
    he_normal_init(p.values[slot], fan_in, rng);
  }
  return p;
}

template <class S>
struct Tape {
  const Graph* graph = nullptr;
  std::uint64_t params_revision = 0;
  int batch = 0;
  std::vector<Tensor<S>> val;
  std::vector<std::vector<int>> aux;  // maxpool argmax offsets
};

template <class S>
struct Gradients {
  std::vector<Tensor<S>> params;
  Tensor<S> input;

  static Gradients zeros(const Graph& g, int batch) {
    Gradients out;
    out.params.reserve(g.params().size());
    for (const auto& [name, shape] : g.params()) out.params.emplace_back(shape);
    Shape in = g.nodes()[static_cast<std::size_t>(g.input())].out;
    Shape batched;
    batched.rank = in.rank + 1;
    batched.d[0] = batch;
    for (int i = 0; i < in.rank; ++i) batched.d[static_cast<std::size_t>(i + 1)] = in.d[static_cast<std::size_t>(i)];
    out.input = Tensor<S>(batched);
    return out;
  }

  void accumulate(const Gradients& other) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i].v += other.params[i].v;
  }
};

namespace detail {

inline Shape batched(Shape per_sample, int batch) {
  Shape s;
  s.rank = per_sample.rank + 1;
  if (s.rank > 4) throw ShapeError("tensor rank would exceed 4");
  s.d[0] = batch;
  for (int i = 0; i < per_sample.rank; ++i)
    s.d[static_cast<std::size_t>(i + 1)] = per_sample.d[static_cast<std::size_t>(i)];
  return s;
}

// im2col for 3x3, stride 1, zero pad 1: M(c*9 + ky*3 + kx, h*W + w) =
// x(c, h+ky-1, w+kx-1). Row-major (C*9, H*W).
template <class S>
void im2col_3x3(const S* x, int C, int H, int W, S* m) {
  const int hw = H * W;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        S* row = m + (static_cast<std::ptrdiff_t>(c) * 9 + ky * 3 + kx) * hw;
        const int dy = ky - 1, dx = kx - 1;
        for (int h = 0; h < H; ++h) {
          S* dst = row + static_cast<std::ptrdiff_t>(h) * W;
          const int hs = h + dy;
          if (hs < 0 || hs >= H) {
            std::memset(dst, 0, static_cast<std::size_t>(W) * sizeof(S));
            continue;
          }
          const S* src = x + (static_cast<std::ptrdiff_t>(c) * H + hs) * W;
          const int lo = std::max(0, -dx), hi = std::min(W, W - dx);
          if (lo > 0) std::memset(dst, 0, static_cast<std::size_t>(lo) * sizeof(S));
          if (hi < W) std::memset(dst + hi, 0, static_cast<std::size_t>(W - hi) * sizeof(S));
          if (hi > lo)
            std::memcpy(dst + lo, src + lo + dx, static_cast<std::size_t>(hi - lo) * sizeof(S));
        }
      }
    }
  }
}

// Transpose of im2col: scatter-adds column gradients back onto the image.
template <class S>
void col2im_3x3(const S* m, int C, int H, int W, S* x_adj) {
  const int hw = H * W;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const S* row = m + (static_cast<std::ptrdiff_t>(c) * 9 + ky * 3 + kx) * hw;
        const int dy = ky - 1, dx = kx - 1;
        for (int h = 0; h < H; ++h) {
          const int hs = h + dy;
          if (hs < 0 || hs >= H) continue;
          const S* src = row + static_cast<std::ptrdiff_t>(h) * W;
          S* dst = x_adj + (static_cast<std::ptrdiff_t>(c) * H + hs) * W;
          const int lo = std::max(0, -dx), hi = std::min(W, W - dx);
          for (int w = lo; w < hi; ++w) dst[w + dx] += src[w];
        }
      }
    }
  }
}

}  // namespace detail

/// Evaluates the graph on a batched input and records every activation; the
/// returned reference points into the tape. check_finite adds a NaN/Inf scan
/// after every op.
template <class S>
const Tensor<S>& forward_eval(const Graph& g, const ParameterSet<S>& params,
                              const Tensor<S>& input, Tape<S>& tape, bool check_finite = false) {
  const auto& nodes = g.nodes();
  if (g.input() < 0) throw ShapeError("graph has no input node");
  if (params.values.size() != g.params().size())
    throw ShapeError("parameter set does not match graph registry");

  const Shape want = detail::batched(nodes[static_cast<std::size_t>(g.input())].out,
                                     input.shape.d[0]);
  if (input.shape != want)
    throw ShapeError("input: expected " + want.str() + ", got " + input.shape.str());
  const int B = input.shape.d[0];

  tape.graph = &g;
  tape.params_revision = params.revision;
  tape.batch = B;
  tape.val.assign(nodes.size(), Tensor<S>{});
  tape.aux.assign(nodes.size(), {});

  for (std::size_t id = 0; id < nodes.size(); ++id) {
    const Node& node = nodes[id];
    Tensor<S>& out = tape.val[id];
    out = Tensor<S>(detail::batched(node.out, B));

    switch (node.kind) {
      case OpKind::input:
        out.v = input.v;
        break;

      case OpKind::dense: {
        const Tensor<S>& x = tape.val[static_cast<std::size_t>(node.a)];
        const int fin = x.shape.d[1], fout = node.out.d[0];
        Eigen::Map<const MatrixRM<S>> X(x.v.data(), B, fin);
        Eigen::Map<const MatrixRM<S>> W(params[node.w].v.data(), fout, fin);
        Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>> b(params[node.bias].v.data(), fout);
        Eigen::Map<MatrixRM<S>> Y(out.v.data(), B, fout);
        Y.noalias() = X * W.transpose();
        Y.rowwise() += b.transpose();
        break;
      }

      case OpKind::conv3x3: {
        const Tensor<S>& x = tape.val[static_cast<std::size_t>(node.a)];
        const int C = x.shape.d[1], H = x.shape.d[2], W_ = x.shape.d[3];
        const int Cout = node.out.d[0], hw = H * W_;
        Eigen::Map<const MatrixRM<S>> Wm(params[node.w].v.data(), Cout, C * 9);
        Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>> b(params[node.bias].v.data(), Cout);
        MatrixRM<S> col(C * 9, hw);
        for (int s = 0; s < B; ++s) {
          detail::im2col_3x3(x.v.data() + static_cast<std::ptrdiff_t>(s) * C * hw, C, H, W_,
                             col.data());
          Eigen::Map<MatrixRM<S>> Y(out.v.data() + static_cast<std::ptrdiff_t>(s) * Cout * hw,
                                    Cout, hw);
          Y.noalias() = Wm * col;
          Y.colwise() += b;
        }
        break;
      }

      case OpKind::conv1x1: {
        const Tensor<S>& x = tape.val[static_cast<std::size_t>(node.a)];
        const int C = x.shape.d[1], hw = x.shape.d[2] * x.shape.d[3];
        const int Cout = node.out.d[0];
        Eigen::Map<const MatrixRM<S>> Wm(params[node.w].v.data(), Cout, C);
        Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>> b(params[node.bias].v.data(), Cout);
        for (int s = 0; s < B; ++s) {
          Eigen::Map<const MatrixRM<S>> X(x.v.data() + static_cast<std::ptrdiff_t>(s) * C * hw, C,
                                          hw);
          Eigen::Map<MatrixRM<S>> Y(out.v.data() + static_cast<std::ptrdiff_t>(s) * Cout * hw,
                                    Cout, hw);
          Y.noalias() = Wm * X;
          Y.colwise() += b;
        }
        break;
      }

      case OpKind::relu: {
        const Tensor<S>& x = tape.val[static_cast<std::size_t>(node.a)];
        out.v = x.v.max(S(0));
        break;
      }

      case OpKind::maxpool2: {
        const Tensor<S>& x = tape.val[static_cast<std::size_t>(node.a)];
        const int C = x.shape.d[1], H = x.shape.d[2], W_ = x.shape.d[3];
        const int Ho = H / 2, Wo = W_ / 2;
        auto& arg = tape.aux[id];
        arg.resize(static_cast<std::size_t>(B) * C * Ho * Wo);
        const S* xv = x.v.data();
        S* ov = out.v.data();
        std::ptrdiff_t o = 0;
        for (int s = 0; s < B; ++s) {
          for (int c = 0; c < C; ++c) {
            const S* plane = xv + (static_cast<std::ptrdiff_t>(s) * C + c) * H * W_;
            const std::ptrdiff_t plane_off = (static_cast<std::ptrdiff_t>(s) * C + c) * H * W_;
            for (int i = 0; i < Ho; ++i) {
              for (int j = 0; j < Wo; ++j) {
                // row-major first-match tie-break
                const int cand[4] = {(2 * i) * W_ + 2 * j, (2 * i) * W_ + 2 * j + 1,
                                     (2 * i + 1) * W_ + 2 * j, (2 * i + 1) * W_ + 2 * j + 1};
                int best = cand[0];
                S bv = plane[cand[0]];
                for (int k = 1; k < 4; ++k)
                  if (plane[cand[k]] > bv) bv = plane[cand[k]], best = cand[k];
                ov[o] = bv;
                arg[static_cast<std::size_t>(o)] = static_cast<int>(plane_off) + best;
                ++o;
              }
            }
          }
        }
        break;
      }

      case OpKind::upsample2: {
        const Tensor<S>& x = tape.val[static_cast<std::size_t>(node.a)];
        const int C = x.shape.d[1], H = x.shape.d[2], W_ = x.shape.d[3];
        const S* xv = x.v.data();
        S* ov = out.v.data();
        for (int s = 0; s < B; ++s)
          for (int c = 0; c < C; ++c) {
            const S* plane = xv + (static_cast<std::ptrdiff_t>(s) * C + c) * H * W_;
            S* op = ov + (static_cast<std::ptrdiff_t>(s) * C + c) * 4 * H * W_;
            for (int i = 0; i < H; ++i)
              for (int j = 0; j < W_; ++j) {
                const S val = plane[i * W_ + j];
                const std::ptrdiff_t base = (2 * i) * (2 * W_) + 2 * j;
                op[base] = val;
                op[base + 1] = val;
                op[base + 2 * W_] = val;
                op[base + 2 * W_ + 1] = val;
              }
          }
        break;
      }

      case OpKind::concat_channels: {
        const Tensor<S>& xa = tape.val[static_cast<std::size_t>(node.a)];
        const Tensor<S>& xb = tape.val[static_cast<std::size_t>(node.b)];
        const std::ptrdiff_t na = xa.count() / B, nb = xb.count() / B;
        for (int s = 0; s < B; ++s) {
          std::memcpy(out.v.data() + s * (na + nb), xa.v.data() + s * na,
                      static_cast<std::size_t>(na) * sizeof(S));
          std::memcpy(out.v.data() + s * (na + nb) + na, xb.v.data() + s * nb,
                      static_cast<std::size_t>(nb) * sizeof(S));
        }
        break;
      }

      case OpKind::global_mean: {
        const Tensor<S>& x = tape.val[static_cast<std::size_t>(node.a)];
        const int C = x.shape.d[1], hw = x.shape.d[2] * x.shape.d[3];
        Eigen::Map<const MatrixRM<S>> X(x.v.data(), B * C, hw);
        Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> Y(out.v.data(), B * C);
        Y = X.rowwise().mean();
        break;
      }

      case OpKind::reshape: {
        const Tensor<S>& x = tape.val[static_cast<std::size_t>(node.a)];
        out.v = x.v;  // row-major layout: reshape is a relabeling
        break;
      }
    }

    if (check_finite && !out.all_finite())
      throw NonFiniteError(std::string("non-finite values after ") + op_name(node.kind) +
                           " node " + std::to_string(id));
  }
  return tape.val[static_cast<std::size_t>(g.output())];
}

/// Exact reverse-mode gradients for all parameters and the input.
/// `upstream` must match the output shape of the taped forward pass.
template <class S>
void backward(const Graph& g, const ParameterSet<S>& params, const Tape<S>& tape,
              const Tensor<S>& upstream, Gradients<S>& grads) {
  if (tape.graph != &g || tape.val.size() != g.nodes().size())
    throw StaleTapeError("backward: tape does not belong to this graph");
  if (tape.params_revision != params.revision)
    throw StaleTapeError("backward: parameters changed since forward_eval");
  const int B = tape.batch;
  const auto& nodes = g.nodes();
  if (upstream.shape != tape.val[static_cast<std::size_t>(g.output())].shape)
    throw ShapeError("backward: upstream shape " + upstream.shape.str() + " does not match output");

  grads = Gradients<S>::zeros(g, B);
  std::vector<Tensor<S>> adj(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) adj[i] = Tensor<S>(tape.val[i].shape);
  adj[static_cast<std::size_t>(g.output())].v = upstream.v;

  for (int id = static_cast<int>(nodes.size()) - 1; id >= 0; --id) {
    const Node& node = nodes[static_cast<std::size_t>(id)];
    const Tensor<S>& dy = adj[static_cast<std::size_t>(id)];

    switch (node.kind) {
      case OpKind::input:
        grads.input.v = dy.v;
        break;

      case OpKind::dense: {
        const Tensor<S>& x = tape.val[static_cast<std::size_t>(node.a)];
        const int fin = x.shape.d[1], fout = node.out.d[0];
        Eigen::Map<const MatrixRM<S>> X(x.v.data(), B, fin);
        Eigen::Map<const MatrixRM<S>> W(params[node.w].v.data(), fout, fin);
        Eigen::Map<const MatrixRM<S>> dY(dy.v.data(), B, fout);
        Eigen::Map<MatrixRM<S>> dW(grads.params[static_cast<std::size_t>(node.w)].v.data(), fout, fin);
        Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> db(
            grads.params[static_cast<std::size_t>(node.bias)].v.data(), fout);
        Eigen::Map<MatrixRM<S>> dX(adj[static_cast<std::size_t>(node.a)].v.data(), B, fin);
        dW.noalias() += dY.transpose() * X;
        db += dY.colwise().sum().transpose();
        dX.noalias() += dY * W;
        break;
      }

      case OpKind::conv3x3: {
        const Tensor<S>& x = tape.val[static_cast<std::size_t>(node.a)];
        const int C = x.shape.d[1], H = x.shape.d[2], W_ = x.shape.d[3];
        const int Cout = node.out.d[0], hw = H * W_;
        Eigen::Map<const MatrixRM<S>> Wm(params[node.w].v.data(), Cout, C * 9);
        Eigen::Map<MatrixRM<S>> dWm(grads.params[static_cast<std::size_t>(node.w)].v.data(), Cout,
                                    C * 9);
        Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> db(
            grads.params[static_cast<std::size_t>(node.bias)].v.data(), Cout);
        MatrixRM<S> col(C * 9, hw);
        MatrixRM<S> dcol(C * 9, hw);
        for (int s = 0; s < B; ++s) {
          const S* xs = x.v.data() + static_cast<std::ptrdiff_t>(s) * C * hw;
          Eigen::Map<const MatrixRM<S>> dY(dy.v.data() + static_cast<std::ptrdiff_t>(s) * Cout * hw,
                                           Cout, hw);
          detail::im2col_3x3(xs, C, H, W_, col.data());
          dWm.noalias() += dY * col.transpose();
          db += dY.rowwise().sum();
          dcol.noalias() = Wm.transpose() * dY;
          detail::col2im_3x3(dcol.data(), C, H, W_,
                             adj[static_cast<std::size_t>(node.a)].v.data() +
                                 static_cast<std::ptrdiff_t>(s) * C * hw);
        }
        break;
      }

      case OpKind::conv1x1: {
        const Tensor<S>& x = tape.val[static_cast<std::size_t>(node.a)];
        const int C = x.shape.d[1], hw = x.shape.d[2] * x.shape.d[3];
        const int Cout = node.out.d[0];
        Eigen::Map<const MatrixRM<S>> Wm(params[node.w].v.data(), Cout, C);
        Eigen::Map<MatrixRM<S>> dWm(grads.params[static_cast<std::size_t>(node.w)].v.data(), Cout, C);
        Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> db(
            grads.params[static_cast<std::size_t>(node.bias)].v.data(), Cout);
        for (int s = 0; s < B; ++s) {
          Eigen::Map<const MatrixRM<S>> X(x.v.data() + static_cast<std::ptrdiff_t>(s) * C * hw, C, hw);
          Eigen::Map<const MatrixRM<S>> dY(dy.v.data() + static_cast<std::ptrdiff_t>(s) * Cout * hw,
                                           Cout, hw);
          Eigen::Map<MatrixRM<S>> dX(adj[static_cast<std::size_t>(node.a)].v.data() +
                                         static_cast<std::ptrdiff_t>(s) * C * hw,
                                     C, hw);
          dWm.noalias() += dY * X.transpose();
          db += dY.rowwise().sum();
          dX.noalias() += Wm.transpose() * dY;
        }
        break;
      }

      case OpKind::relu: {
        const Tensor<S>& x = tape.val[static_cast<std::size_t>(node.a)];
        adj[static_cast<std::size_t>(node.a)].v += (x.v > S(0)).template cast<S>() * dy.v;
        break;
      }

      case OpKind::maxpool2: {
        const auto& arg = tape.aux[static_cast<std::size_t>(id)];
        S* dx = adj[static_cast<std::size_t>(node.a)].v.data();
        const S* dv = dy.v.data();
        for (std::size_t k = 0; k < arg.size(); ++k) dx[arg[k]] += dv[k];
        break;
      }

      case OpKind::upsample2: {
        const Tensor<S>& x = tape.val[static_cast<std::size_t>(node.a)];
        const int C = x.shape.d[1], H = x.shape.d[2], W_ = x.shape.d[3];
        S* dx = adj[static_cast<std::size_t>(node.a)].v.data();
        const S* dv = dy.v.data();
        for (int s = 0; s < B; ++s)
          for (int c = 0; c < C; ++c) {
            S* dplane = dx + (static_cast<std::ptrdiff_t>(s) * C + c) * H * W_;
            const S* dop = dv + (static_cast<std::ptrdiff_t>(s) * C + c) * 4 * H * W_;
            for (int i = 0; i < H; ++i)
              for (int j = 0; j < W_; ++j) {
                const std::ptrdiff_t base = (2 * i) * (2 * W_) + 2 * j;
                dplane[i * W_ + j] +=
                    dop[base] + dop[base + 1] + dop[base + 2 * W_] + dop[base + 2 * W_ + 1];
              }
          }
        break;
      }

      case OpKind::concat_channels: {
        Tensor<S>& da = adj[static_cast<std::size_t>(node.a)];
        Tensor<S>& db_ = adj[static_cast<std::size_t>(node.b)];
        const std::ptrdiff_t na = da.count() / B, nb = db_.count() / B;
        for (int s = 0; s < B; ++s) {
          Eigen::Map<const ArrayX<S>> dya(dy.v.data() + s * (na + nb), na);
          Eigen::Map<const ArrayX<S>> dyb(dy.v.data() + s * (na + nb) + na, nb);
          Eigen::Map<ArrayX<S>>(da.v.data() + s * na, na) += dya;
          Eigen::Map<ArrayX<S>>(db_.v.data() + s * nb, nb) += dyb;
        }
        break;
      }

      case OpKind::global_mean: {
        const Tensor<S>& x = tape.val[static_cast<std::size_t>(node.a)];
        const int C = x.shape.d[1], hw = x.shape.d[2] * x.shape.d[3];
        Eigen::Map<MatrixRM<S>> dX(adj[static_cast<std::size_t>(node.a)].v.data(), B * C, hw);
        Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>> dY(dy.v.data(), B * C);
        dX.colwise() += dY / static_cast<S>(hw);
        break;
      }

      case OpKind::reshape:
        adj[static_cast<std::size_t>(node.a)].v += dy.v;
        break;
    }
  }
}

template <class S>
struct AdamState {
  std::vector<Tensor<S>> m, v;
  std::int64_t step = 0;

  static AdamState init(const ParameterSet<S>& params) {
    AdamState st;
    st.m.reserve(params.values.size());
    st.v.reserve(params.values.size());
    for (const auto& p : params.values) {
      st.m.emplace_back(p.shape);
      st.v.emplace_back(p.shape);
    }
    return st;
  }
};

/// Standard bias-corrected Adam update; bumps the parameter revision.
template <class S>
void adam_step(ParameterSet<S>& params, const Gradients<S>& grads, AdamState<S>& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
  if (state.m.size() != params.values.size())
    throw ShapeError("adam_step: state does not match parameters");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.values.size(); ++i) {
    auto& p = params.values[i].v;
    auto& m = state.m[i].v;
    auto& v = state.v[i].v;
    const auto& g = grads.params[i].v;
    m = static_cast<S>(beta1) * m + static_cast<S>(1.0 - beta1) * g;
    v = static_cast<S>(beta2) * v + static_cast<S>(1.0 - beta2) * g.square();
    p -= (static_cast<S>(lr) * (m / static_cast<S>(bc1))) /
         ((v / static_cast<S>(bc2)).sqrt() + static_cast<S>(eps));
  }
  params.revision += 1;
}

}  // namespace eitkit::ad
