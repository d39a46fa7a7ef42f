#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mlvtg/error.hpp"
#include "mlvtg/rng.hpp"

namespace mlvtg {

#ifdef MLVTG_REAL32
using real = float;
#else
using real = double;
#endif

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

namespace detail {

// One tape entry: the buffer, its gradient, and the closure that pushes
// the gradient to the parents. Ops that never need gradients leave
// parents/backward_fn empty so intermediates free as soon as unused.
struct Node {
  Shape shape;
  std::vector<real> value;
  std::vector<real> grad;  // sized like value once gradient flows here
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward_fn;

  Node(Shape s, std::vector<real> v);
  ~Node();
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;

  void ensure_grad();
  void drop_grad();

 private:
  std::size_t tracked_value_ = 0;
  std::size_t tracked_grad_ = 0;
};

bool grad_enabled();

}  // namespace detail

// Scoped switch that turns tape recording off (inference, benchmarking,
// finite-difference probes).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Dense row-major tensor of `real` scalars with reverse-mode gradient
// support. Copying a Tensor copies a handle; the buffer is shared.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape);
  static Tensor full(const Shape& shape, real v);
  static Tensor from(const Shape& shape, std::vector<real> data);
  static Tensor vector(std::vector<real> data);  // rank 1
  static Tensor matrix(std::initializer_list<std::initializer_list<real>> rows);
  static Tensor scalar(real v);  // shape [1]
  static Tensor identity(std::size_t n);
  static Tensor randn(const Shape& shape, Rng& rng, real scale = 1.0);
  static Tensor rand_uniform(const Shape& shape, Rng& rng, real lo, real hi);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  std::size_t rows() const;  // extent 0 (rank >= 1)
  std::size_t cols() const;  // extent 1 (rank 2) or 1

  std::span<const real> data() const;
  // Direct writable view. Mutating a tensor that already participates in a
  // recorded graph is undefined; use only on freshly created tensors or
  // parameters between steps.
  std::span<real> mutable_data();

  real at(std::size_t i) const;
  real at(std::size_t i, std::size_t j) const;
  real item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool enable);

  bool has_grad() const;
  std::span<const real> grad() const;  // throws Error if no gradient buffer
  void zero_grad();

  // Reverse pass from a scalar. Accumulates into the grad buffers of every
  // tensor on the tape that requires grad.
  void backward();

  // Value copy detached from the tape.
  Tensor detach() const;

  std::shared_ptr<detail::Node> node() const { return node_; }
  static Tensor wrap(std::shared_ptr<detail::Node> n);

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

// True when recording is on and at least one input wants a gradient.
bool wants_grad(std::initializer_list<const Tensor*> inputs);

// Mark `out` as grad-requiring and register its parents and backward closure.
void attach(Tensor& out, std::vector<Tensor> parents, std::function<void()> backward_fn);

}  // namespace detail

}  // namespace mlvtg
