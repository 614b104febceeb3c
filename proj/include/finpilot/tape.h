#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "finpilot/params.h"

namespace finpilot::ad {

class Tape;

// Handle to a vector-valued node on a Tape. Scalars are size-1 vectors.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Eigen::VectorXd& value() const;
  double scalar() const;
  Eigen::Index size() const { return value().size(); }
};

// Reverse-mode tape over a fixed operation set: affine layers bound to a
// PolicyParams instance, tanh, exp, log, sqrt, abs, min(x, 0), softmax,
// broadcasting elementwise arithmetic and reductions.
//
// Lifecycle: record, then backward() exactly once, then reset() before
// recording again. Recording or differentiating a consumed tape throws
// LifecycleError.
class Tape {
 public:
  explicit Tape(const PolicyParams& params) : params_(&params) {}

  Var constant(const Eigen::VectorXd& value);
  Var constant(double value);
  Var affine(std::size_t layer, Var x);
  Var log_std();

  Var tanh(Var x);
  Var exp(Var x);
  Var log(Var x);
  Var sqrt(Var x);
  Var abs(Var x);  // subgradient 0 at 0
  Var min_zero(Var x);
  Var softmax(Var x);
  Var sum(Var x);
  Var dot(Var a, Var b);
  Var dot_const(Var x, const Eigen::VectorXd& c);

  // Elementwise; a size-1 operand broadcasts against the other.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var scale(Var x, double c);
  Var add_const(Var x, double c);
  Var mul_const(Var x, const Eigen::VectorXd& c);

  // Accumulates d(output)/d(params) into `grad` (same layout as the bound
  // params) and consumes the tape. Returns the output value.
  double backward(Var output, PolicyParams& grad);

  void reset();
  bool consumed() const { return consumed_; }
  std::size_t node_count() const { return nodes_.size(); }
  const Eigen::VectorXd& value(Var v) const { return nodes_[v.id].value; }

 private:
  enum class Op : std::uint8_t {
    constant, affine, log_std, tanh, exp, log, sqrt, abs, min_zero, softmax, sum, dot, dot_const,
    add, sub, mul, div, scale, add_const, mul_const,
  };

  struct Node {
    Op op;
    std::uint32_t a = 0;
    std::uint32_t b = 0;
    std::size_t layer = 0;
    double c = 0.0;
    Eigen::VectorXd aux;
    Eigen::VectorXd value;
  };

  Var push(Node node);
  void check_live() const;
  void check_owned(Var v) const;
  static Eigen::VectorXd reduce_to(const Eigen::VectorXd& g, Eigen::Index size);

  const PolicyParams* params_;
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

inline Var operator+(Var a, Var b) { return a.tape->add(a, b); }
inline Var operator-(Var a, Var b) { return a.tape->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.tape->mul(a, b); }
inline Var operator/(Var a, Var b) { return a.tape->div(a, b); }
inline Var operator*(double c, Var x) { return x.tape->scale(x, c); }
inline Var operator*(Var x, double c) { return x.tape->scale(x, c); }
inline Var operator+(Var x, double c) { return x.tape->add_const(x, c); }
inline Var operator-(Var x, double c) { return x.tape->add_const(x, -c); }

}  // namespace finpilot::ad
