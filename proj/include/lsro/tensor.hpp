#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "lsro/rng.hpp"

namespace lsro {

enum class OpKind {
  leaf,
  matmul,
  add,
  add_bias,
  sub,
  scale,
  relu,
  tanh,
  sigmoid,
  log,
  safe_log,
  softmax_rows,
  sum,
  mean,
  elementwise_mul,
  dropout,
};

inline std::string_view op_name(OpKind op) {
  switch (op) {
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::add_bias: return "add_bias";
    case OpKind::sub: return "sub";
    case OpKind::scale: return "scale";
    case OpKind::relu: return "relu";
    case OpKind::tanh: return "tanh";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::log: return "log";
    case OpKind::safe_log: return "safe_log";
    case OpKind::softmax_rows: return "softmax_rows";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::elementwise_mul: return "elementwise_mul";
    case OpKind::dropout: return "dropout";
  }
  return "?";
}

// Floor applied wherever a probability is logged.
inline constexpr double kLogFloor = 1e-12;

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  std::vector<std::shared_ptr<Node>> parents;
  // Adds the contribution of this node's grad into its parents' grads.
  std::function<void(Node&)> backward;
  OpKind op = OpKind::leaf;
  bool requires_grad = false;
  std::uint64_t id = 0;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

inline std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

}  // namespace detail

/// Handle to a node of a reverse-mode differentiation graph.
///
/// Copies share the underlying node. Leaves created with requires_grad=true
/// accumulate gradients across backward() calls until zero_grad().
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (shape.empty()) throw std::invalid_argument("tensor: empty shape");
    for (auto d : shape) {
      if (d == 0) throw std::invalid_argument("tensor: zero dimension in shape " + shape_str(shape));
    }
    if (shape_numel(shape) != data.size()) {
      throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match " +
                                  std::to_string(data.size()) + " values");
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
    node_->id = detail::next_node_id();
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(Shape shape, double value) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return Tensor({1}, {v}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->data.size(); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t rows() const { return node_->shape[0]; }
  std::size_t cols() const { return rank() >= 2 ? node_->shape[1] : 1; }
  bool is_scalar() const { return numel() == 1; }
  bool requires_grad() const { return node_->requires_grad; }
  OpKind op() const { return node_->op; }
  std::uint64_t id() const { return node_->id; }

  std::span<double> data() { return node_->data; }
  std::span<const double> data() const { return node_->data; }
  const std::vector<double>& values() const { return node_->data; }
  double item() const {
    if (!is_scalar()) throw std::logic_error("item: tensor is not scalar " + shape_str(shape()));
    return node_->data[0];
  }
  double at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }

  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

  // Same values, no graph history, no gradient tracking.
  Tensor detach() const { return Tensor(node_->shape, node_->data, false); }

  detail::Node& node() const { return *node_; }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline Tensor make_result(OpKind op, Shape shape, std::vector<double> data,
                          std::vector<Tensor> inputs,
                          std::function<void(Node&)> backward) {
  Tensor out(std::move(shape), std::move(data));
  Node& n = out.node();
  n.op = op;
  for (const auto& t : inputs) {
    n.requires_grad = n.requires_grad || t.requires_grad();
  }
  if (n.requires_grad) {
    for (auto& t : inputs) n.parents.push_back(t.node_ptr());
    n.backward = std::move(backward);
  }
  return out;
}

inline void require_same_shape(OpKind op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op_name(op)) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

inline void require_matrix(OpKind op, const Tensor& a) {
  if (a.rank() != 2) {
    throw std::invalid_argument(std::string(op_name(op)) + ": expected a matrix, got " +
                                shape_str(a.shape()));
  }
}

// Elementwise unary op with local derivative f'(x, y).
template <typename F, typename DF>
Tensor unary(OpKind op, const Tensor& x, F f, DF df) {
  std::vector<double> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return make_result(op, x.shape(), std::move(out), {x}, [df](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      p.grad[i] += self.grad[i] * df(p.data[i], self.data[i]);
    }
  });
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_matrix(OpKind::matmul, a);
  detail::require_matrix(OpKind::matmul, b);
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions differ " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  std::vector<double> out(n * m, 0.0);
  const auto A = a.data();
  const auto B = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    double* row = out.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (av == 0.0) continue;
      const double* brow = B.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) row[j] += av * brow[j];
    }
  }
  return detail::make_result(OpKind::matmul, {n, m}, std::move(out), {a, b},
                             [n, k, m](detail::Node& self) {
    detail::Node& pa = *self.parents[0];
    detail::Node& pb = *self.parents[1];
    const double* G = self.grad.data();
    if (pa.requires_grad) {
      pa.ensure_grad();
      // dA = G * B^T
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* brow = pb.data.data() + p * m;
          const double* grow = G + i * m;
          for (std::size_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
          pa.grad[i * k + p] += acc;
        }
      }
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      // dB = A^T * G
      for (std::size_t i = 0; i < n; ++i) {
        const double* grow = G + i * m;
        for (std::size_t p = 0; p < k; ++p) {
          const double av = pa.data[i * k + p];
          if (av == 0.0) continue;
          double* gb = pb.grad.data() + p * m;
          for (std::size_t j = 0; j < m; ++j) gb[j] += av * grow[j];
        }
      }
    }
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(OpKind::add, a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return detail::make_result(OpKind::add, a.shape(), std::move(out), {a, b},
                             [](detail::Node& self) {
    for (auto& parent : self.parents) {
      if (!parent->requires_grad) continue;
      parent->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) parent->grad[i] += self.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(OpKind::sub, a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return detail::make_result(OpKind::sub, a.shape(), std::move(out), {a, b},
                             [](detail::Node& self) {
    for (std::size_t side = 0; side < 2; ++side) {
      detail::Node& parent = *self.parents[side];
      if (!parent.requires_grad) continue;
      parent.ensure_grad();
      const double sign = side == 0 ? 1.0 : -1.0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) parent.grad[i] += sign * self.grad[i];
    }
  });
}

// x (N x C) plus a bias row (1 x C) broadcast over rows.
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  detail::require_matrix(OpKind::add_bias, x);
  if (bias.numel() != x.cols()) {
    throw std::invalid_argument("add_bias: bias " + shape_str(bias.shape()) +
                                " does not broadcast over " + shape_str(x.shape()));
  }
  const std::size_t n = x.rows(), c = x.cols();
  std::vector<double> out(n * c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x.data()[i * c + j] + bias.data()[j];
  return detail::make_result(OpKind::add_bias, x.shape(), std::move(out), {x, bias},
                             [n, c](detail::Node& self) {
    detail::Node& px = *self.parents[0];
    detail::Node& pb = *self.parents[1];
    if (px.requires_grad) {
      px.ensure_grad();
      for (std::size_t i = 0; i < n * c; ++i) px.grad[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) pb.grad[j] += self.grad[i * c + j];
    }
  });
}

inline Tensor scale(const Tensor& x, double factor) {
  return detail::unary(
      OpKind::scale, x, [factor](double v) { return factor * v; },
      [factor](double, double) { return factor; });
}

inline Tensor relu(const Tensor& x) {
  return detail::unary(
      OpKind::relu, x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

inline Tensor tanh(const Tensor& x) {
  return detail::unary(
      OpKind::tanh, x, [](double v) { return std::tanh(v); },
      [](double, double out) { return 1.0 - out * out; });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(
      OpKind::sigmoid, x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double out) { return out * (1.0 - out); });
}

// Natural log; every entry must be strictly positive.
inline Tensor log(const Tensor& x) {
  const auto d = x.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!(d[i] > 0.0)) {
      throw std::domain_error("log: non-positive entry " + std::to_string(d[i]) + " at index " +
                              std::to_string(i) + " of " + shape_str(x.shape()) +
                              "; use safe_log for probabilities");
    }
  }
  return detail::unary(
      OpKind::log, x, [](double v) { return std::log(v); },
      [](double in, double) { return 1.0 / in; });
}

// log(max(x, floor)); the floor region has zero derivative.
inline Tensor safe_log(const Tensor& x, double floor = kLogFloor) {
  return detail::unary(
      OpKind::safe_log, x, [floor](double v) { return std::log(std::max(v, floor)); },
      [floor](double in, double) { return in > floor ? 1.0 / in : 0.0; });
}

inline Tensor softmax_rows(const Tensor& x) {
  detail::require_matrix(OpKind::softmax_rows, x);
  const std::size_t n = x.rows(), c = x.cols();
  std::vector<double> out(n * c);
  const auto in = x.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = in.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out[i * c + j] = std::exp(row[j] - mx);
      total += out[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= total;
  }
  return detail::make_result(OpKind::softmax_rows, x.shape(), std::move(out), {x},
                             [n, c](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < n; ++i) {
      const double* y = self.data.data() + i * c;
      const double* g = self.grad.data() + i * c;
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < c; ++j) p.grad[i * c + j] += y[j] * (g[j] - dot);
    }
  });
}

inline Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return detail::make_result(OpKind::sum, {1}, {total}, {x}, [](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (auto& g : p.grad) g += self.grad[0];
  });
}

inline Tensor mean(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  const double inv = 1.0 / static_cast<double>(x.numel());
  return detail::make_result(OpKind::mean, {1}, {total * inv}, {x}, [inv](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (auto& g : p.grad) g += self.grad[0] * inv;
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(OpKind::elementwise_mul, a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return detail::make_result(OpKind::elementwise_mul, a.shape(), std::move(out), {a, b},
                             [](detail::Node& self) {
    detail::Node& pa = *self.parents[0];
    detail::Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * pb.data[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += self.grad[i] * pa.data[i];
    }
  });
}

/// Inverted dropout. In train mode each entry is zeroed with probability
/// `rate` and survivors are scaled by 1/(1-rate); otherwise the identity.
inline Tensor dropout(const Tensor& x, double rate, bool train, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw std::invalid_argument("dropout: rate must lie in [0,1), got " + std::to_string(rate));
  }
  if (!train || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.numel());
  for (auto& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * mask[i];
  return detail::make_result(OpKind::dropout, x.shape(), std::move(out), {x},
                             [mask = std::move(mask)](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i] * mask[i];
  });
}

struct OpParams {
  double factor = 1.0;       // scale
  double rate = 0.0;         // dropout
  bool train = false;        // dropout
  Rng* rng = nullptr;        // dropout
  double floor = kLogFloor;  // safe_log
};

// Generic dispatcher over OpKind.
inline Tensor apply(OpKind op, std::span<const Tensor> inputs, const OpParams& params = {}) {
  const auto need = [&](std::size_t n) {
    if (inputs.size() != n) {
      throw std::invalid_argument(std::string(op_name(op)) + ": expected " + std::to_string(n) +
                                  " inputs, got " + std::to_string(inputs.size()));
    }
  };
  switch (op) {
    case OpKind::matmul: need(2); return matmul(inputs[0], inputs[1]);
    case OpKind::add: need(2); return add(inputs[0], inputs[1]);
    case OpKind::add_bias: need(2); return add_bias(inputs[0], inputs[1]);
    case OpKind::sub: need(2); return sub(inputs[0], inputs[1]);
    case OpKind::elementwise_mul: need(2); return mul(inputs[0], inputs[1]);
    case OpKind::scale: need(1); return scale(inputs[0], params.factor);
    case OpKind::relu: need(1); return relu(inputs[0]);
    case OpKind::tanh: need(1); return tanh(inputs[0]);
    case OpKind::sigmoid: need(1); return sigmoid(inputs[0]);
    case OpKind::log: need(1); return log(inputs[0]);
    case OpKind::safe_log: need(1); return safe_log(inputs[0], params.floor);
    case OpKind::softmax_rows: need(1); return softmax_rows(inputs[0]);
    case OpKind::sum: need(1); return sum(inputs[0]);
    case OpKind::mean: need(1); return mean(inputs[0]);
    case OpKind::dropout:
      need(1);
      if (params.train && params.rng == nullptr) {
        throw std::invalid_argument("dropout: train mode requires a generator");
      }
      if (!params.train) return inputs[0];
      return dropout(inputs[0], params.rate, params.train, *params.rng);
    case OpKind::leaf: break;
  }
  throw std::invalid_argument("apply: leaf is not an operation");
}

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate;
/// intermediate gradients are recomputed from scratch on each call.
inline void backward(const Tensor& loss) {
  if (!loss.defined() || !loss.is_scalar()) {
    throw std::invalid_argument("backward: loss must be a scalar, got " +
                                (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(&loss.node(), 0);
  visited.insert(&loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (detail::Node* n : order) {
    if (!n->parents.empty()) n->grad.assign(n->data.size(), 0.0);
  }
  detail::Node& root = loss.node();
  root.ensure_grad();
  root.grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

/// Compares reverse-mode gradients against central differences.
///
/// `build` maps leaf tensors (created from `point`, one per entry) to a scalar
/// loss. Returns max |analytic - numeric| / max(1, |analytic|) over all
/// coordinates.
inline double finite_difference_check(
    const std::function<Tensor(const std::vector<Tensor>&)>& build,
    const std::vector<Tensor>& point, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_difference_check: step must be > 0");

  const auto leaves_from = [&](std::size_t which, std::size_t coord, double delta) {
    std::vector<Tensor> leaves;
    leaves.reserve(point.size());
    for (std::size_t i = 0; i < point.size(); ++i) {
      std::vector<double> values(point[i].values());
      if (i == which) values[coord] += delta;
      leaves.emplace_back(point[i].shape(), std::move(values), true);
    }
    return leaves;
  };

  auto leaves = leaves_from(point.size(), 0, 0.0);
  Tensor loss = build(leaves);
  backward(loss);

  double worst = 0.0;
  for (std::size_t i = 0; i < point.size(); ++i) {
    for (std::size_t j = 0; j < point[i].numel(); ++j) {
      const double analytic = leaves[i].has_grad() ? leaves[i].grad()[j] : 0.0;
      const double plus = build(leaves_from(i, j, step)).item();
      const double minus = build(leaves_from(i, j, -step)).item();
      const double numeric = (plus - minus) / (2.0 * step);
      worst = std::max(worst, std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic)));
    }
  }
  return worst;
}

}  // namespace lsro
