#include "vift/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace vift::ad {

namespace {

std::size_t element_count(const Tensor::Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " +
                              b.shape_string());
}

void same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument("operands recorded on different tapes");
}

bool is_row_vector_for(const Tensor& b, const Tensor& a) {
  if (b.cols() != a.cols()) return false;
  return b.rank() == 1 || (b.rank() == 2 && b.shape()[0] == 1);
}

}  // namespace

// ---- Tensor -------------------------------------------------------------

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), values_(element_count(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(values.begin(), values.end()) {
  if (values_.size() != element_count(shape_)) {
    throw std::invalid_argument("tensor of shape " + vift::ad::shape_string(shape_) + " cannot hold " +
                                std::to_string(values_.size()) + " values");
  }
}

Tensor Tensor::from_matrix(const RowMatrix& m) {
  Tensor t({std::size_t(m.rows()), std::size_t(m.cols())});
  t.matrix() = m;
  return t;
}

std::size_t Tensor::rows() const {
  if (shape_.size() < 2) return 1;
  return element_count(Shape(shape_.begin(), shape_.end() - 1));
}

std::size_t Tensor::cols() const { return shape_.empty() ? 1 : shape_.back(); }

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

std::string Tensor::shape_string() const { return vift::ad::shape_string(shape_); }

std::string shape_string(const Tensor::Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// ---- Tape ---------------------------------------------------------------

const Tensor& Var::value() const { return tape_->value(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }

Var Tape::parameter(const Tensor& value) {
  Node& n = nodes_.emplace_back();
  n.referenced = &value;
  n.requires_grad = true;
  return {this, nodes_.size() - 1};
}

Var Tape::input(Tensor value) {
  Node& n = nodes_.emplace_back();
  n.owned = std::move(value);
  n.requires_grad = true;
  return {this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  Node& n = nodes_.emplace_back();
  n.owned = std::move(value);
  return {this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  bool needs = false;
  for (std::size_t id : inputs) needs = needs || nodes_.at(id).requires_grad;
  Node& n = nodes_.emplace_back();
  n.owned = std::move(value);
  n.inputs = std::move(inputs);
  n.requires_grad = needs;
  if (needs) n.backward = std::move(backward);
  return {this, nodes_.size() - 1};
}

const Tensor& Tape::value(std::size_t id) const { return nodes_.at(id).value(); }

const Tensor& Tape::grad(std::size_t id) const {
  const Node& n = nodes_.at(id);
  if (!n.grad_ready) throw std::logic_error("gradient requested before backward()");
  return n.grad;
}

void Tape::ensure_grad(Node& node) {
  if (!node.grad_ready) {
    node.grad = Tensor::zeros_like(node.value());
    node.grad_ready = true;
  }
}

void Tape::backward(Var loss) {
  if (loss.value().size() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar, got shape " + loss.value().shape_string());
  }
  backward(loss, Tensor(loss.value().shape(), 1.0));
}

void Tape::backward(Var output, const Tensor& seed) {
  if (&output.tape() != this) throw std::invalid_argument("backward: node belongs to another tape");
  if (!seed.same_shape(output.value())) shape_error("backward seed", seed, output.value());

  for (Node& n : nodes_) {
    n.grad = Tensor();
    n.grad_ready = false;
  }
  Node& out = nodes_[output.id()];
  ensure_grad(out);
  out.grad = seed;

  std::vector<Tensor*> input_grads;
  for (std::size_t id = output.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.grad_ready || !n.backward) continue;
    input_grads.clear();
    for (std::size_t in : n.inputs) {
      Node& src = nodes_[in];
      if (src.requires_grad) {
        ensure_grad(src);
        input_grads.push_back(&src.grad);
      } else {
        input_grads.push_back(nullptr);
      }
    }
    n.backward(n.grad, input_grads);
  }

  for (Node& n : nodes_) {
    if (n.requires_grad) ensure_grad(n);
  }
}

// ---- operations ---------------------------------------------------------

Var matmul(Var a, Var b) {
  same_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows()) shape_error("matmul", A, B);
  Tensor out({A.rows(), B.cols()});
  out.matrix().noalias() = A.matrix() * B.matrix();
  const std::size_t ia = a.id(), ib = b.id();
  Tape& tape = a.tape();
  return tape.record(std::move(out), {ia, ib}, [&tape, ia, ib](const Tensor& g, std::span<Tensor* const> grads) {
    if (grads[0]) grads[0]->matrix().noalias() += g.matrix() * tape.value(ib).matrix().transpose();
    if (grads[1]) grads[1]->matrix().noalias() += tape.value(ia).matrix().transpose() * g.matrix();
  });
}

Var add(Var a, Var b) {
  same_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  Tape& tape = a.tape();
  if (A.same_shape(B)) {
    Tensor out = A;
    out.matrix() += B.matrix();
    return tape.record(std::move(out), {a.id(), b.id()}, [](const Tensor& g, std::span<Tensor* const> grads) {
      for (Tensor* gr : grads)
        if (gr) gr->matrix() += g.matrix();
    });
  }
  if (!is_row_vector_for(B, A)) shape_error("add", A, B);
  Tensor out = A;
  out.matrix().rowwise() += B.matrix().row(0);
  return tape.record(std::move(out), {a.id(), b.id()}, [](const Tensor& g, std::span<Tensor* const> grads) {
    if (grads[0]) grads[0]->matrix() += g.matrix();
    if (grads[1]) grads[1]->matrix().row(0) += g.matrix().colwise().sum();
  });
}

Var mul(Var a, Var b) {
  same_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (!A.same_shape(B)) shape_error("mul", A, B);
  Tensor out = A;
  out.matrix().array() *= B.matrix().array();
  Tape& tape = a.tape();
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {ia, ib}, [&tape, ia, ib](const Tensor& g, std::span<Tensor* const> grads) {
    if (grads[0]) grads[0]->matrix().array() += g.matrix().array() * tape.value(ib).matrix().array();
    if (grads[1]) grads[1]->matrix().array() += g.matrix().array() * tape.value(ia).matrix().array();
  });
}

Var scale(Var x, double s) {
  Tensor out = x.value();
  out.matrix() *= s;
  return x.tape().record(std::move(out), {x.id()}, [s](const Tensor& g, std::span<Tensor* const> grads) {
    if (grads[0]) grads[0]->matrix() += s * g.matrix();
  });
}

Var relu(Var x) {
  Tensor out = x.value();
  out.matrix() = out.matrix().cwiseMax(0.0);
  Tape& tape = x.tape();
  const std::size_t ix = x.id();
  return tape.record(std::move(out), {ix}, [&tape, ix](const Tensor& g, std::span<Tensor* const> grads) {
    if (!grads[0]) return;
    const auto in = tape.value(ix).values();
    auto dst = grads[0]->values();
    const auto src = g.values();
    for (std::size_t i = 0; i < in.size(); ++i)
      if (in[i] > 0.0) dst[i] += src[i];
  });
}

Var transpose(Var x) {
  const Tensor& X = x.value();
  if (X.rank() != 2) throw std::invalid_argument("transpose: expected a matrix, got " + X.shape_string());
  Tensor out({X.cols(), X.rows()});
  out.matrix() = X.matrix().transpose();
  return x.tape().record(std::move(out), {x.id()}, [](const Tensor& g, std::span<Tensor* const> grads) {
    if (grads[0]) grads[0]->matrix() += g.matrix().transpose();
  });
}

Var sum(Var x) {
  const Tensor& X = x.value();
  const double total = X.matrix().sum();
  return x.tape().record(Tensor::scalar(total), {x.id()}, [](const Tensor& g, std::span<Tensor* const> grads) {
    if (grads[0]) grads[0]->matrix().array() += g[0];
  });
}

Var slice_cols(Var x, std::size_t begin, std::size_t count) {
  const Tensor& X = x.value();
  if (X.rank() != 2 || begin + count > X.cols()) {
    throw std::invalid_argument("slice_cols: columns [" + std::to_string(begin) + ", " +
                                std::to_string(begin + count) + ") out of range for " + X.shape_string());
  }
  Tensor out({X.rows(), count});
  out.matrix() = X.matrix().middleCols(Eigen::Index(begin), Eigen::Index(count));
  return x.tape().record(std::move(out), {x.id()}, [begin, count](const Tensor& g, std::span<Tensor* const> grads) {
    if (grads[0]) grads[0]->matrix().middleCols(Eigen::Index(begin), Eigen::Index(count)) += g.matrix();
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::size_t rows = parts.front().value().rows();
  std::size_t cols = 0;
  std::vector<std::size_t> ids, widths;
  for (const Var& p : parts) {
    same_tape(parts.front(), p);
    if (p.value().rank() != 2 || p.value().rows() != rows) shape_error("concat_cols", parts.front().value(), p.value());
    ids.push_back(p.id());
    widths.push_back(p.value().cols());
    cols += p.value().cols();
  }
  Tensor out({rows, cols});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    out.matrix().middleCols(Eigen::Index(offset), Eigen::Index(p.value().cols())) = p.value().matrix();
    offset += p.value().cols();
  }
  return parts.front().tape().record(std::move(out), ids, [widths](const Tensor& g, std::span<Tensor* const> grads) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      if (grads[i]) grads[i]->matrix() += g.matrix().middleCols(Eigen::Index(off), Eigen::Index(widths[i]));
      off += widths[i];
    }
  });
}

namespace {

// In-place row softmax of `m`; rows must contain at least one finite entry.
template <typename Block>
void softmax_rows_inplace(Block&& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double mx = m.row(r).maxCoeff();
    double total = 0.0;
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const double e = std::exp(m(r, c) - mx);
      m(r, c) = e;
      total += e;
    }
    m.row(r) /= total;
  }
}

// Accumulates dS = P .* (dP - rowsum(dP .* P)) into `dx`.
template <typename PBlock, typename GBlock, typename OutBlock>
void softmax_backward(const PBlock& P, const GBlock& dP, OutBlock&& dx) {
  for (Eigen::Index r = 0; r < P.rows(); ++r) {
    const double dot = P.row(r).dot(dP.row(r));
    dx.row(r).array() += P.row(r).array() * (dP.row(r).array() - dot);
  }
}

}  // namespace

Var softmax_rows(Var x) {
  Tensor out = x.value();
  softmax_rows_inplace(out.matrix());
  Tape& tape = x.tape();
  const std::size_t io = tape.size();  // id the output is about to receive
  return tape.record(std::move(out), {x.id()}, [&tape, io](const Tensor& g, std::span<Tensor* const> grads) {
    if (grads[0]) softmax_backward(tape.value(io).matrix(), g.matrix(), grads[0]->matrix());
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  same_tape(x, gain);
  same_tape(x, bias);
  const Tensor& X = x.value();
  const std::size_t d = X.cols();
  if (d < 2) throw std::invalid_argument("layer_norm: feature width must be at least 2");
  if (gain.value().size() != d || bias.value().size() != d) {
    shape_error("layer_norm", X, gain.value().size() != d ? gain.value() : bias.value());
  }
  const std::size_t n = X.rows();
  RowMatrix xhat(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  Eigen::VectorXd inv_std(static_cast<Eigen::Index>(n));
  const auto Xm = X.matrix();
  for (Eigen::Index r = 0; r < Eigen::Index(n); ++r) {
    const double mean = Xm.row(r).mean();
    const double var = (Xm.row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (Xm.row(r).array() - mean) * inv_std(r);
  }
  Tensor out(X.shape());
  const Eigen::Map<const Eigen::RowVectorXd> g(gain.value().data(), Eigen::Index(d));
  const Eigen::Map<const Eigen::RowVectorXd> b(bias.value().data(), Eigen::Index(d));
  out.matrix() = (xhat.array().rowwise() * g.array()).rowwise() + b.array();

  Tape& tape = x.tape();
  const std::size_t ig = gain.id();
  return tape.record(
      std::move(out), {x.id(), gain.id(), bias.id()},
      [&tape, ig, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](const Tensor& go,
                                                                           std::span<Tensor* const> grads) {
        const auto G = go.matrix();
        if (grads[0]) {
          const Eigen::Map<const Eigen::RowVectorXd> gv(tape.value(ig).data(), Eigen::Index(d));
          RowMatrix dxhat = G.array().rowwise() * gv.array();
          auto dX = grads[0]->matrix();
          for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
            const double m1 = dxhat.row(r).mean();
            const double m2 = dxhat.row(r).dot(xhat.row(r)) / double(d);
            dX.row(r).array() += inv_std(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
          }
        }
        if (grads[1]) {
          Eigen::Map<Eigen::RowVectorXd>(grads[1]->data(), Eigen::Index(d)) +=
              (G.array() * xhat.array()).colwise().sum().matrix();
        }
        if (grads[2]) {
          Eigen::Map<Eigen::RowVectorXd>(grads[2]->data(), Eigen::Index(d)) += G.colwise().sum();
        }
      });
}

Var masked_attention(Var q, Var k, Var v, std::size_t window_length, std::size_t heads, const Tensor& mask) {
  same_tape(q, k);
  same_tape(q, v);
  const Tensor& Q = q.value();
  const Tensor& K = k.value();
  const Tensor& V = v.value();
  if (!Q.same_shape(K) || !Q.same_shape(V) || Q.rank() != 2) shape_error("masked_attention", Q, !Q.same_shape(K) ? K : V);
  const std::size_t rows = Q.rows(), d = Q.cols();
  if (window_length == 0 || rows % window_length != 0) {
    throw std::invalid_argument("masked_attention: " + std::to_string(rows) + " rows do not split into windows of " +
                                std::to_string(window_length));
  }
  if (heads == 0 || d % heads != 0) {
    throw std::invalid_argument("masked_attention: width " + std::to_string(d) + " not divisible by " +
                                std::to_string(heads) + " heads");
  }
  if (mask.rows() != window_length || mask.cols() != window_length) {
    throw std::invalid_argument("masked_attention: mask shape " + mask.shape_string() + " does not match window " +
                                std::to_string(window_length));
  }
  const std::size_t windows = rows / window_length, dh = d / heads;
  const double inv_scale = 1.0 / std::sqrt(double(dh));
  const Eigen::Index N = Eigen::Index(window_length), H = Eigen::Index(dh);

  // Probabilities for every (window, head), stacked as [windows*heads*N x N].
  auto probs = std::make_shared<RowMatrix>(Eigen::Index(windows * heads) * N, N);
  Tensor out({rows, d});
  const auto Qm = Q.matrix(), Km = K.matrix(), Vm = V.matrix();
  const auto M = mask.matrix();
  auto Om = out.matrix();
  for (std::size_t w = 0; w < windows; ++w) {
    for (std::size_t h = 0; h < heads; ++h) {
      const Eigen::Index r0 = Eigen::Index(w) * N, c0 = Eigen::Index(h) * H;
      auto P = probs->middleRows(Eigen::Index(w * heads + h) * N, N);
      P.noalias() = inv_scale * Qm.block(r0, c0, N, H) * Km.block(r0, c0, N, H).transpose();
      P += M;
      softmax_rows_inplace(P);
      Om.block(r0, c0, N, H).noalias() = P * Vm.block(r0, c0, N, H);
    }
  }

  Tape& tape = q.tape();
  const std::size_t iq = q.id(), ik = k.id(), iv = v.id();
  return tape.record(std::move(out), {iq, ik, iv},
                     [&tape, iq, ik, iv, probs, windows, heads, N, H, inv_scale](const Tensor& g,
                                                                                 std::span<Tensor* const> grads) {
                       const auto Qm = tape.value(iq).matrix(), Km = tape.value(ik).matrix(),
                                  Vm = tape.value(iv).matrix();
                       const auto G = g.matrix();
                       RowMatrix dP(N, N), dS(N, N);
                       for (std::size_t w = 0; w < windows; ++w) {
                         for (std::size_t h = 0; h < heads; ++h) {
                           const Eigen::Index r0 = Eigen::Index(w) * N, c0 = Eigen::Index(h) * H;
                           const auto P = probs->middleRows(Eigen::Index(w * heads + h) * N, N);
                           const auto Gb = G.block(r0, c0, N, H);
                           if (grads[2]) grads[2]->matrix().block(r0, c0, N, H).noalias() += P.transpose() * Gb;
                           if (!grads[0] && !grads[1]) continue;
                           dP.noalias() = Gb * Vm.block(r0, c0, N, H).transpose();
                           dS.setZero();
                           softmax_backward(P, dP, dS);
                           if (grads[0])
                             grads[0]->matrix().block(r0, c0, N, H).noalias() +=
                                 inv_scale * dS * Km.block(r0, c0, N, H);
                           if (grads[1])
                             grads[1]->matrix().block(r0, c0, N, H).noalias() +=
                                 inv_scale * dS.transpose() * Qm.block(r0, c0, N, H);
                         }
                       }
                     });
}

// ---- verification -------------------------------------------------------

GradientCheck finite_diff_check(const ScalarFunction& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_check: step must be positive");
  GradientCheck result;
  {
    Tape tape;
    Var in = tape.input(x);
    Var out = f(tape, in);
    tape.backward(out);
    result.analytic = in.grad();
  }
  auto evaluate = [&f](const Tensor& at) {
    Tape tape;
    Var in = tape.constant(at);
    return f(tape, in).value()[0];
  };
  result.numeric = Tensor::zeros_like(x);
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = evaluate(probe);
    probe[i] = x[i] - h;
    const double down = evaluate(probe);
    probe[i] = x[i];
    result.numeric[i] = (up - down) / (2.0 * h);
    const double a = result.analytic[i], n = result.numeric[i];
    const double denom = std::max({std::abs(a), std::abs(n), 1e-8});
    result.max_relative_error = std::max(result.max_relative_error, std::abs(a - n) / denom);
  }
  return result;
}

}  // namespace vift::ad
