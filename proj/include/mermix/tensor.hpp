#ifndef MERMIX_TENSOR_HPP
#define MERMIX_TENSOR_HPP

// Reverse-mode automatic differentiation over dense Eigen matrices.
//
// A BasicTape owns every value produced during one forward pass. Tensors are
// lightweight handles (tape pointer + node index) so expressions can be written
// with free functions and operators, Eigen style:
//
//   Tape tape;
//   auto x = tape.leaf(x0, true);
//   auto y = softmax_lastdim(x * tape.constant(w));
//   tape.backward(sum(y));
//
// Values are rank-2 (rows x cols). A batch is a list of per-sample graphs on
// the same tape; no broadcasting exists beyond the explicit row-broadcast add.

#include <Eigen/Dense>

#include "mermix/errors.hpp"

#include <array>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mermix {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Matrix = MatrixX<double>;
using Index = Eigen::Index;
using Shape = std::array<Index, 2>;

inline std::string shape_string(Shape s) {
  std::ostringstream os;
  os << "(" << s[0] << "x" << s[1] << ")";
  return os.str();
}

template <typename Scalar>
class BasicTape;

template <typename Scalar>
class BasicTensor {
 public:
  using Mat = MatrixX<Scalar>;

  BasicTensor() = default;

  BasicTape<Scalar>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Mat& value() const { return tape_->node(id_).value; }
  // Empty until backward() reaches this node.
  const Mat& grad() const { return tape_->node(id_).grad; }
  bool requires_grad() const { return tape_->node(id_).requires_grad; }

  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Shape shape() const { return {rows(), cols()}; }
  Scalar item() const {
    if (rows() != 1 || cols() != 1) {
      throw ShapeError("item() on non-scalar tensor " + shape_string(shape()));
    }
    return value()(0, 0);
  }

 private:
  friend class BasicTape<Scalar>;
  BasicTensor(BasicTape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  BasicTape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename Scalar>
class BasicTape {
 public:
  using Mat = MatrixX<Scalar>;
  using Tensor = BasicTensor<Scalar>;
  // Reads the node's own grad and accumulates into its inputs.
  using BackwardFn = std::function<void(BasicTape&, std::size_t)>;

  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    bool is_leaf = true;
    BackwardFn backward;
  };

  BasicTape() = default;
  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;
  BasicTape(BasicTape&&) = delete;
  BasicTape& operator=(BasicTape&&) = delete;

  Tensor leaf(Mat value, bool requires_grad = false) {
    check_shape(value);
    nodes_.push_back(Node{std::move(value), Mat(), requires_grad, true, nullptr});
    return Tensor(this, nodes_.size() - 1);
  }

  Tensor constant(Mat value) { return leaf(std::move(value), false); }

  // Records an op output. The node requires grad iff any input does; a node
  // that does not require grad drops its backward rule.
  Tensor record(Mat value, std::span<const Tensor> inputs, BackwardFn backward) {
    check_shape(value);
    bool needs = false;
    for (const auto& in : inputs) {
      if (in.tape_ != this) throw GraphError("tensor from a different tape");
      needs = needs || nodes_[in.id_].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), Mat(), needs, false, needs ? std::move(backward) : nullptr});
    return Tensor(this, nodes_.size() - 1);
  }

  Tensor record(Mat value, std::initializer_list<Tensor> inputs, BackwardFn backward) {
    return record(std::move(value), std::span<const Tensor>(inputs.begin(), inputs.size()), std::move(backward));
  }

  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }

  bool needs_grad(const Tensor& t) const { return nodes_[t.id_].requires_grad; }

  template <typename Derived>
  void accumulate(const Tensor& t, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[t.id_];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  // Interior gradients are recomputed per call; leaf gradients accumulate
  // until zero_grads().
  void backward(const Tensor& loss) {
    if (loss.tape_ != this) throw GraphError("loss from a different tape");
    if (loss.rows() != 1 || loss.cols() != 1) {
      throw GraphError("backward() needs a scalar loss, got " + shape_string(loss.shape()));
    }
    for (auto& n : nodes_) {
      if (!n.is_leaf) n.grad.resize(0, 0);
    }
    accumulate(loss, Mat::Ones(1, 1));
    for (std::size_t i = loss.id_ + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.is_leaf || !n.backward || n.grad.size() == 0) continue;
      n.backward(*this, i);
    }
    for (auto& n : nodes_) {
      if (n.is_leaf && n.requires_grad && n.grad.size() == 0) {
        n.grad = Mat::Zero(n.value.rows(), n.value.cols());
      }
    }
  }

  void zero_grads() {
    for (auto& n : nodes_) {
      if (n.requires_grad) n.grad.resize(0, 0);
    }
  }

  // Debug sabotage: scales the softmax input gradient by (1 + 1e-3). Used to
  // prove the gradient checker catches a broken backward rule.
  void set_break_softmax_grad(bool on) { break_softmax_grad_ = on; }
  bool break_softmax_grad() const { return break_softmax_grad_; }

 private:
  friend class BasicTensor<Scalar>;

  static void check_shape(const Mat& v) {
    if (v.rows() < 1 || v.cols() < 1) {
      throw ShapeError("tensor dimensions must be >= 1, got " + shape_string({v.rows(), v.cols()}));
    }
  }

  std::deque<Node> nodes_;
  bool break_softmax_grad_ = false;
};

using Tape = BasicTape<double>;
using Tensor = BasicTensor<double>;

namespace detail {

template <typename Scalar>
void require_same_tape(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  if (&a.tape() != &b.tape()) throw GraphError("tensors live on different tapes");
}

template <typename Scalar>
void require_same_shape(const char* op, const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

}  // namespace detail

/// Matrix product; dA = dC Bᵀ, dB = Aᵀ dC.
template <typename Scalar>
BasicTensor<Scalar> matmul(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  detail::require_same_tape(a, b);
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  MatrixX<Scalar> out = a.value() * b.value();
  return a.tape().record(std::move(out), {a, b}, [a, b](BasicTape<Scalar>& t, std::size_t self) {
    const auto& g = t.node(self).grad;
    if (t.needs_grad(a)) t.accumulate(a, g * b.value().transpose());
    if (t.needs_grad(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

template <typename Scalar>
BasicTensor<Scalar> operator*(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  return matmul(a, b);
}

template <typename Scalar>
BasicTensor<Scalar> transpose(const BasicTensor<Scalar>& x) {
  MatrixX<Scalar> out = x.value().transpose();
  return x.tape().record(std::move(out), {x}, [x](BasicTape<Scalar>& t, std::size_t self) {
    t.accumulate(x, t.node(self).grad.transpose());
  });
}

template <typename Scalar>
BasicTensor<Scalar> add(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape("add", a, b);
  MatrixX<Scalar> out = a.value() + b.value();
  return a.tape().record(std::move(out), {a, b}, [a, b](BasicTape<Scalar>& t, std::size_t self) {
    const auto& g = t.node(self).grad;
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

template <typename Scalar>
BasicTensor<Scalar> operator+(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  return add(a, b);
}

template <typename Scalar>
BasicTensor<Scalar> operator-(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape("sub", a, b);
  MatrixX<Scalar> out = a.value() - b.value();
  return a.tape().record(std::move(out), {a, b}, [a, b](BasicTape<Scalar>& t, std::size_t self) {
    const auto& g = t.node(self).grad;
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

/// x (n x m) plus a 1 x m row added to every row.
template <typename Scalar>
BasicTensor<Scalar> add_row_broadcast(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& row) {
  detail::require_same_tape(x, row);
  if (row.rows() != 1 || row.cols() != x.cols()) {
    throw ShapeError("add_row_broadcast: " + shape_string(x.shape()) + " + " + shape_string(row.shape()));
  }
  MatrixX<Scalar> out = x.value().rowwise() + row.value().row(0);
  return x.tape().record(std::move(out), {x, row}, [x, row](BasicTape<Scalar>& t, std::size_t self) {
    const auto& g = t.node(self).grad;
    t.accumulate(x, g);
    if (t.needs_grad(row)) t.accumulate(row, g.colwise().sum());
  });
}

template <typename Scalar>
BasicTensor<Scalar> scale(const BasicTensor<Scalar>& x, Scalar s) {
  MatrixX<Scalar> out = x.value() * s;
  return x.tape().record(std::move(out), {x}, [x, s](BasicTape<Scalar>& t, std::size_t self) {
    t.accumulate(x, t.node(self).grad * s);
  });
}

template <typename Scalar>
BasicTensor<Scalar> operator*(Scalar s, const BasicTensor<Scalar>& x) {
  return scale(x, s);
}

template <typename Scalar>
BasicTensor<Scalar> cwise_product(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape("cwise_product", a, b);
  MatrixX<Scalar> out = a.value().cwiseProduct(b.value());
  return a.tape().record(std::move(out), {a, b}, [a, b](BasicTape<Scalar>& t, std::size_t self) {
    const auto& g = t.node(self).grad;
    if (t.needs_grad(a)) t.accumulate(a, g.cwiseProduct(b.value()));
    if (t.needs_grad(b)) t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

template <typename Scalar>
BasicTensor<Scalar> tanh(const BasicTensor<Scalar>& x) {
  MatrixX<Scalar> out = x.value().array().tanh().matrix();
  return x.tape().record(out, {x}, [x](BasicTape<Scalar>& t, std::size_t self) {
    const auto& y = t.node(self).value;
    t.accumulate(x, t.node(self).grad.cwiseProduct((1 - y.array().square()).matrix()));
  });
}

template <typename Scalar>
BasicTensor<Scalar> sum(const BasicTensor<Scalar>& x) {
  MatrixX<Scalar> out(1, 1);
  out(0, 0) = x.value().sum();
  return x.tape().record(std::move(out), {x}, [x](BasicTape<Scalar>& t, std::size_t self) {
    const Scalar g = t.node(self).grad(0, 0);
    t.accumulate(x, MatrixX<Scalar>::Constant(x.rows(), x.cols(), g));
  });
}

/// axis 0 averages rows into a 1 x cols row; axis 1 averages columns into rows x 1.
template <typename Scalar>
BasicTensor<Scalar> mean_over_axis(const BasicTensor<Scalar>& x, int axis) {
  if (axis != 0 && axis != 1) throw ShapeError("mean_over_axis: axis must be 0 or 1");
  const Index n = axis == 0 ? x.rows() : x.cols();
  MatrixX<Scalar> out = axis == 0 ? MatrixX<Scalar>(x.value().colwise().mean())
                                  : MatrixX<Scalar>(x.value().rowwise().mean());
  return x.tape().record(std::move(out), {x}, [x, axis, n](BasicTape<Scalar>& t, std::size_t self) {
    const auto& g = t.node(self).grad;
    const Scalar inv = Scalar(1) / static_cast<Scalar>(n);
    if (axis == 0) {
      t.accumulate(x, (g.replicate(x.rows(), 1) * inv).eval());
    } else {
      t.accumulate(x, (g.replicate(1, x.cols()) * inv).eval());
    }
  });
}

template <typename Scalar>
BasicTensor<Scalar> slice_cols(const BasicTensor<Scalar>& x, Index begin, Index count) {
  if (begin < 0 || count < 1 || begin + count > x.cols()) {
    throw ShapeError("slice_cols: [" + std::to_string(begin) + ", +" + std::to_string(count) + ") out of " +
                     shape_string(x.shape()));
  }
  MatrixX<Scalar> out = x.value().middleCols(begin, count);
  return x.tape().record(std::move(out), {x}, [x, begin, count](BasicTape<Scalar>& t, std::size_t self) {
    MatrixX<Scalar> g = MatrixX<Scalar>::Zero(x.rows(), x.cols());
    g.middleCols(begin, count) = t.node(self).grad;
    t.accumulate(x, g);
  });
}

/// Concatenates along the last dimension (columns); all parts share a row count.
template <typename Scalar>
BasicTensor<Scalar> concat_lastdim(std::span<const BasicTensor<Scalar>> parts) {
  if (parts.empty()) throw ShapeError("concat_lastdim: no inputs");
  const Index rows = parts[0].rows();
  Index cols = 0;
  for (const auto& p : parts) {
    detail::require_same_tape(parts[0], p);
    if (p.rows() != rows) {
      throw ShapeError("concat_lastdim: row mismatch " + shape_string(parts[0].shape()) + " vs " +
                       shape_string(p.shape()));
    }
    cols += p.cols();
  }
  MatrixX<Scalar> out(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  std::vector<BasicTensor<Scalar>> inputs(parts.begin(), parts.end());
  return parts[0].tape().record(std::move(out), parts, [inputs](BasicTape<Scalar>& t, std::size_t self) {
    const auto& g = t.node(self).grad;
    Index offset = 0;
    for (const auto& p : inputs) {
      if (t.needs_grad(p)) t.accumulate(p, g.middleCols(offset, p.cols()));
      offset += p.cols();
    }
  });
}

template <typename Scalar>
BasicTensor<Scalar> concat_lastdim(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  const std::array<BasicTensor<Scalar>, 2> parts{a, b};
  return concat_lastdim(std::span<const BasicTensor<Scalar>>(parts));
}

/// Stacks parts vertically; all parts share a column count.
template <typename Scalar>
BasicTensor<Scalar> concat_rows(std::span<const BasicTensor<Scalar>> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const Index cols = parts[0].cols();
  Index rows = 0;
  for (const auto& p : parts) {
    detail::require_same_tape(parts[0], p);
    if (p.cols() != cols) {
      throw ShapeError("concat_rows: column mismatch " + shape_string(parts[0].shape()) + " vs " +
                       shape_string(p.shape()));
    }
    rows += p.rows();
  }
  MatrixX<Scalar> out(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  std::vector<BasicTensor<Scalar>> inputs(parts.begin(), parts.end());
  return parts[0].tape().record(std::move(out), parts, [inputs](BasicTape<Scalar>& t, std::size_t self) {
    const auto& g = t.node(self).grad;
    Index offset = 0;
    for (const auto& p : inputs) {
      if (t.needs_grad(p)) t.accumulate(p, g.middleRows(offset, p.rows()));
      offset += p.rows();
    }
  });
}

/// Row-wise softmax with max subtraction. Entries equal to -inf get exactly 0.
template <typename Scalar>
BasicTensor<Scalar> softmax_lastdim(const BasicTensor<Scalar>& x) {
  const auto& v = x.value();
  MatrixX<Scalar> out(v.rows(), v.cols());
  for (Index r = 0; r < v.rows(); ++r) {
    const Scalar m = v.row(r).maxCoeff();
    if (m == -std::numeric_limits<Scalar>::infinity()) {
      throw ShapeError("fully masked attention row");
    }
    out.row(r) = (v.row(r).array() - m).exp().matrix();
    // Eigen's vectorised exp clamps its argument, so -inf would give a denormal.
    for (Index c = 0; c < v.cols(); ++c) {
      if (v(r, c) == -std::numeric_limits<Scalar>::infinity()) out(r, c) = Scalar(0);
    }
    out.row(r) /= out.row(r).sum();
  }
  return x.tape().record(std::move(out), {x}, [x](BasicTape<Scalar>& t, std::size_t self) {
    const auto& y = t.node(self).value;
    const auto& g = t.node(self).grad;
    // dx = y * (g - <g, y>) per row
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dots = g.cwiseProduct(y).rowwise().sum();
    MatrixX<Scalar> dx = y.cwiseProduct((g.colwise() - dots).eval());
    if (t.break_softmax_grad()) dx *= Scalar(1.001);
    t.accumulate(x, dx);
  });
}

/// Row-wise mean of -log softmax(logits)[label]; one label per row.
template <typename Scalar>
BasicTensor<Scalar> cross_entropy(const BasicTensor<Scalar>& logits, std::span<const int> labels) {
  const auto& z = logits.value();
  if (static_cast<Index>(labels.size()) != z.rows()) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                     shape_string(logits.shape()));
  }
  MatrixX<Scalar> probs(z.rows(), z.cols());
  Scalar total = 0;
  for (Index r = 0; r < z.rows(); ++r) {
    const int label = labels[static_cast<std::size_t>(r)];
    if (label < 0 || label >= z.cols()) {
      throw LabelError("cross_entropy: label " + std::to_string(label) + " outside [0, " +
                       std::to_string(z.cols()) + ")");
    }
    const Scalar m = z.row(r).maxCoeff();
    const auto shifted = (z.row(r).array() - m).eval();
    const Scalar log_norm = std::log(shifted.exp().sum());
    probs.row(r) = (shifted - log_norm).exp().matrix();
    total += log_norm - shifted(label);
  }
  const Scalar inv_rows = Scalar(1) / static_cast<Scalar>(z.rows());
  MatrixX<Scalar> out(1, 1);
  out(0, 0) = total * inv_rows;
  std::vector<int> owned(labels.begin(), labels.end());
  return logits.tape().record(
      std::move(out), {logits},
      [logits, probs = std::move(probs), owned = std::move(owned), inv_rows](BasicTape<Scalar>& t, std::size_t self) {
        MatrixX<Scalar> d = probs;
        for (Index r = 0; r < d.rows(); ++r) d(r, owned[static_cast<std::size_t>(r)]) -= Scalar(1);
        t.accumulate(logits, d * (t.node(self).grad(0, 0) * inv_rows));
      });
}

template <typename Scalar>
BasicTensor<Scalar> cross_entropy(const BasicTensor<Scalar>& logits, int label) {
  return cross_entropy(logits, std::span<const int>(&label, 1));
}

}  // namespace mermix

#endif  // MERMIX_TENSOR_HPP
