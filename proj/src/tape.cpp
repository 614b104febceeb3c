#include "finpilot/tape.h"

#include <cmath>
#include <string>

#include "finpilot/errors.h"

namespace finpilot::ad {

const Eigen::VectorXd& Var::value() const { return tape->value(*this); }

double Var::scalar() const {
  const auto& v = value();
  if (v.size() != 1) throw ShapeError("scalar() on a node of size " + std::to_string(v.size()));
  return v[0];
}

void Tape::check_live() const {
  if (consumed_) throw LifecycleError("tape already consumed by backward(); call reset()");
}

void Tape::check_owned(Var v) const {
  if (v.tape != this || v.id >= nodes_.size()) throw LifecycleError("variable does not belong to this tape");
}

Var Tape::push(Node node) {
  check_live();
  nodes_.push_back(std::move(node));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

namespace {

Eigen::Index broadcast_size(Eigen::Index a, Eigen::Index b) {
  if (a == b || b == 1) return a;
  if (a == 1) return b;
  throw ShapeError("incompatible operand sizes " + std::to_string(a) + " and " + std::to_string(b));
}

Eigen::VectorXd expand(const Eigen::VectorXd& v, Eigen::Index n) {
  return v.size() == n ? v : Eigen::VectorXd::Constant(n, v[0]);
}

}  // namespace

Var Tape::constant(const Eigen::VectorXd& value) {
  Node n{Op::constant};
  n.value = value;
  return push(std::move(n));
}

Var Tape::constant(double value) { return constant(Eigen::VectorXd::Constant(1, value)); }

Var Tape::affine(std::size_t layer, Var x) {
  check_owned(x);
  const DenseLayer& l = params_->layers().at(layer);
  if (l.weight.cols() != x.size()) {
    throw ShapeError("layer " + std::to_string(layer) + " expects input of size " +
                     std::to_string(l.weight.cols()) + ", got " + std::to_string(x.size()));
  }
  Node n{Op::affine, x.id};
  n.layer = layer;
  n.value = l.weight * nodes_[x.id].value + l.bias;
  return push(std::move(n));
}

Var Tape::log_std() {
  Node n{Op::log_std};
  n.value = params_->log_std();
  return push(std::move(n));
}

Var Tape::tanh(Var x) {
  check_owned(x);
  Node n{Op::tanh, x.id};
  n.value = nodes_[x.id].value.array().tanh();
  return push(std::move(n));
}

Var Tape::exp(Var x) {
  check_owned(x);
  Node n{Op::exp, x.id};
  n.value = nodes_[x.id].value.array().exp();
  return push(std::move(n));
}

Var Tape::log(Var x) {
  check_owned(x);
  Node n{Op::log, x.id};
  n.value = nodes_[x.id].value.array().log();
  return push(std::move(n));
}

Var Tape::sqrt(Var x) {
  check_owned(x);
  Node n{Op::sqrt, x.id};
  n.value = nodes_[x.id].value.array().sqrt();
  return push(std::move(n));
}

Var Tape::abs(Var x) {
  check_owned(x);
  Node n{Op::abs, x.id};
  n.value = nodes_[x.id].value.array().abs();
  return push(std::move(n));
}

Var Tape::min_zero(Var x) {
  check_owned(x);
  Node n{Op::min_zero, x.id};
  n.value = nodes_[x.id].value.array().min(0.0);
  return push(std::move(n));
}

Var Tape::softmax(Var x) {
  check_owned(x);
  const auto& v = nodes_[x.id].value;
  Node n{Op::softmax, x.id};
  n.value = (v.array() - v.maxCoeff()).exp();
  n.value /= n.value.sum();
  return push(std::move(n));
}

Var Tape::sum(Var x) {
  check_owned(x);
  Node n{Op::sum, x.id};
  n.value = Eigen::VectorXd::Constant(1, nodes_[x.id].value.sum());
  return push(std::move(n));
}

Var Tape::dot(Var a, Var b) {
  check_owned(a);
  check_owned(b);
  if (a.size() != b.size()) throw ShapeError("dot of unequal sizes");
  Node n{Op::dot, a.id, b.id};
  n.value = Eigen::VectorXd::Constant(1, nodes_[a.id].value.dot(nodes_[b.id].value));
  return push(std::move(n));
}

Var Tape::dot_const(Var x, const Eigen::VectorXd& c) {
  check_owned(x);
  if (x.size() != c.size()) throw ShapeError("dot_const of unequal sizes");
  Node n{Op::dot_const, x.id};
  n.aux = c;
  n.value = Eigen::VectorXd::Constant(1, nodes_[x.id].value.dot(c));
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
  check_owned(a);
  check_owned(b);
  const auto sz = broadcast_size(a.size(), b.size());
  Node n{Op::add, a.id, b.id};
  n.value = expand(nodes_[a.id].value, sz) + expand(nodes_[b.id].value, sz);
  return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
  check_owned(a);
  check_owned(b);
  const auto sz = broadcast_size(a.size(), b.size());
  Node n{Op::sub, a.id, b.id};
  n.value = expand(nodes_[a.id].value, sz) - expand(nodes_[b.id].value, sz);
  return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
  check_owned(a);
  check_owned(b);
  const auto sz = broadcast_size(a.size(), b.size());
  Node n{Op::mul, a.id, b.id};
  n.value = expand(nodes_[a.id].value, sz).cwiseProduct(expand(nodes_[b.id].value, sz));
  return push(std::move(n));
}

Var Tape::div(Var a, Var b) {
  check_owned(a);
  check_owned(b);
  const auto sz = broadcast_size(a.size(), b.size());
  Node n{Op::div, a.id, b.id};
  n.value = expand(nodes_[a.id].value, sz).cwiseQuotient(expand(nodes_[b.id].value, sz));
  return push(std::move(n));
}

Var Tape::scale(Var x, double c) {
  check_owned(x);
  Node n{Op::scale, x.id};
  n.c = c;
  n.value = c * nodes_[x.id].value;
  return push(std::move(n));
}

Var Tape::add_const(Var x, double c) {
  check_owned(x);
  Node n{Op::add_const, x.id};
  n.c = c;
  n.value = nodes_[x.id].value.array() + c;
  return push(std::move(n));
}

Var Tape::mul_const(Var x, const Eigen::VectorXd& c) {
  check_owned(x);
  if (x.size() != c.size()) throw ShapeError("mul_const of unequal sizes");
  Node n{Op::mul_const, x.id};
  n.aux = c;
  n.value = nodes_[x.id].value.cwiseProduct(c);
  return push(std::move(n));
}

Eigen::VectorXd Tape::reduce_to(const Eigen::VectorXd& g, Eigen::Index size) {
  if (g.size() == size) return g;
  return Eigen::VectorXd::Constant(1, g.sum());
}

double Tape::backward(Var output, PolicyParams& grad) {
  check_live();
  check_owned(output);
  if (nodes_[output.id].value.size() != 1) throw ShapeError("backward() needs a scalar output");
  if (grad.layers().size() != params_->layers().size()) throw ShapeError("gradient layout mismatch");
  consumed_ = true;

  std::vector<Eigen::VectorXd> adj(nodes_.size());
  auto accumulate = [&](std::uint32_t id, const Eigen::VectorXd& g) {
    if (adj[id].size() == 0) {
      adj[id] = g;
    } else {
      adj[id] += g;
    }
  };
  adj[output.id] = Eigen::VectorXd::Ones(1);

  for (std::size_t k = output.id + 1; k-- > 0;) {
    const Node& n = nodes_[k];
    const Eigen::VectorXd& g = adj[k];
    if (g.size() == 0) continue;
    switch (n.op) {
      case Op::constant:
        break;
      case Op::affine: {
        const Eigen::VectorXd& x = nodes_[n.a].value;
        DenseLayer& gl = grad.layers()[n.layer];
        gl.weight.noalias() += g * x.transpose();
        gl.bias += g;
        accumulate(n.a, params_->layers()[n.layer].weight.transpose() * g);
        break;
      }
      case Op::log_std:
        grad.log_std() += g;
        break;
      case Op::tanh:
        accumulate(n.a, g.cwiseProduct((1.0 - n.value.array().square()).matrix()));
        break;
      case Op::exp:
        accumulate(n.a, g.cwiseProduct(n.value));
        break;
      case Op::log:
        accumulate(n.a, g.cwiseQuotient(nodes_[n.a].value));
        break;
      case Op::sqrt:
        accumulate(n.a, (0.5 * g.array() / n.value.array()).matrix());
        break;
      case Op::abs: {
        const auto& x = nodes_[n.a].value;
        Eigen::VectorXd s(x.size());
        for (Eigen::Index i = 0; i < x.size(); ++i) s[i] = x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0);
        accumulate(n.a, g.cwiseProduct(s));
        break;
      }
      case Op::min_zero: {
        const auto& x = nodes_[n.a].value;
        Eigen::VectorXd s = (x.array() < 0.0).cast<double>();
        accumulate(n.a, g.cwiseProduct(s));
        break;
      }
      case Op::softmax: {
        const double inner = g.dot(n.value);
        accumulate(n.a, n.value.cwiseProduct((g.array() - inner).matrix()));
        break;
      }
      case Op::sum:
        accumulate(n.a, Eigen::VectorXd::Constant(nodes_[n.a].value.size(), g[0]));
        break;
      case Op::dot:
        accumulate(n.a, g[0] * nodes_[n.b].value);
        accumulate(n.b, g[0] * nodes_[n.a].value);
        break;
      case Op::dot_const:
        accumulate(n.a, g[0] * n.aux);
        break;
      case Op::add:
        accumulate(n.a, reduce_to(g, nodes_[n.a].value.size()));
        accumulate(n.b, reduce_to(g, nodes_[n.b].value.size()));
        break;
      case Op::sub:
        accumulate(n.a, reduce_to(g, nodes_[n.a].value.size()));
        accumulate(n.b, reduce_to(-g, nodes_[n.b].value.size()));
        break;
      case Op::mul: {
        const auto sz = n.value.size();
        const Eigen::VectorXd av = expand(nodes_[n.a].value, sz);
        const Eigen::VectorXd bv = expand(nodes_[n.b].value, sz);
        accumulate(n.a, reduce_to(g.cwiseProduct(bv), nodes_[n.a].value.size()));
        accumulate(n.b, reduce_to(g.cwiseProduct(av), nodes_[n.b].value.size()));
        break;
      }
      case Op::div: {
        const auto sz = n.value.size();
        const Eigen::VectorXd bv = expand(nodes_[n.b].value, sz);
        const Eigen::VectorXd ga = g.cwiseQuotient(bv);
        accumulate(n.a, reduce_to(ga, nodes_[n.a].value.size()));
        accumulate(n.b, reduce_to(-ga.cwiseProduct(n.value), nodes_[n.b].value.size()));
        break;
      }
      case Op::scale:
        accumulate(n.a, n.c * g);
        break;
      case Op::add_const:
        accumulate(n.a, g);
        break;
      case Op::mul_const:
        accumulate(n.a, g.cwiseProduct(n.aux));
        break;
    }
  }
  return nodes_[output.id].value[0];
}

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
}

}  // namespace finpilot::ad
