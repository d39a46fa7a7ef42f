#include "mlvtg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "mlvtg/memtrack.hpp"

namespace mlvtg {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

namespace detail {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

Node::Node(Shape s, std::vector<real> v) : shape(std::move(s)), value(std::move(v)) {
  if (value.size() != shape_numel(shape)) {
    throw DimensionError("node buffer size " + std::to_string(value.size()) +
                         " does not match shape " + shape_str(shape));
  }
  tracked_value_ = value.size() * sizeof(real);
  memtrack::on_alloc(tracked_value_);
}

Node::~Node() {
  memtrack::on_free(tracked_value_ + tracked_grad_);
}

void Node::ensure_grad() {
  if (grad.empty()) {
    grad.assign(value.size(), real(0));
    tracked_grad_ = grad.size() * sizeof(real);
    memtrack::on_alloc(tracked_grad_);
  }
}

void Node::drop_grad() {
  if (!grad.empty()) {
    grad.clear();
    grad.shrink_to_fit();
    memtrack::on_free(tracked_grad_);
    tracked_grad_ = 0;
  }
}

bool wants_grad(std::initializer_list<const Tensor*> inputs) {
  if (!g_grad_enabled) return false;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

void attach(Tensor& out, std::vector<Tensor> parents, std::function<void()> backward_fn) {
  auto n = out.node();
  n->requires_grad = true;
  n->parents.reserve(parents.size());
  for (auto& p : parents) n->parents.push_back(p.node());
  n->backward_fn = std::move(backward_fn);
}

}  // namespace detail

NoGradGuard::NoGradGuard() : prev_(detail::g_grad_enabled) {
  detail::g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() { detail::g_grad_enabled = prev_; }

Tensor Tensor::wrap(std::shared_ptr<detail::Node> n) {
  Tensor t;
  t.node_ = std::move(n);
  return t;
}

Tensor Tensor::zeros(const Shape& shape) {
  return from(shape, std::vector<real>(shape_numel(shape), real(0)));
}

Tensor Tensor::full(const Shape& shape, real v) {
  return from(shape, std::vector<real>(shape_numel(shape), v));
}

Tensor Tensor::from(const Shape& shape, std::vector<real> data) {
  return wrap(std::make_shared<detail::Node>(shape, std::move(data)));
}

Tensor Tensor::vector(std::vector<real> data) {
  Shape s{data.size()};
  return from(s, std::move(data));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<real>> rows) {
  std::size_t r = rows.size();
  std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<real> buf;
  buf.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix initializer");
    buf.insert(buf.end(), row.begin(), row.end());
  }
  return from({r, c}, std::move(buf));
}

Tensor Tensor::scalar(real v) { return from({1}, {v}); }

Tensor Tensor::identity(std::size_t n) {
  std::vector<real> buf(n * n, real(0));
  for (std::size_t i = 0; i < n; ++i) buf[i * n + i] = real(1);
  return from({n, n}, std::move(buf));
}

Tensor Tensor::randn(const Shape& shape, Rng& rng, real scale) {
  std::vector<real> buf(shape_numel(shape));
  for (auto& x : buf) x = static_cast<real>(rng.normal()) * scale;
  return from(shape, std::move(buf));
}

Tensor Tensor::rand_uniform(const Shape& shape, Rng& rng, real lo, real hi) {
  std::vector<real> buf(shape_numel(shape));
  for (auto& x : buf) x = static_cast<real>(rng.uniform(lo, hi));
  return from(shape, std::move(buf));
}

const Shape& Tensor::shape() const {
  if (!node_) throw Error("shape() on undefined tensor");
  return node_->shape;
}

std::size_t Tensor::numel() const { return node_ ? node_->value.size() : 0; }

std::size_t Tensor::rows() const {
  const Shape& s = shape();
  if (s.empty()) throw DimensionError("rows() on rank-0 tensor");
  return s[0];
}

std::size_t Tensor::cols() const {
  const Shape& s = shape();
  if (s.size() == 1) return 1;
  if (s.size() == 2) return s[1];
  throw DimensionError("cols() expects rank 1 or 2, got " + shape_str(s));
}

std::span<const real> Tensor::data() const {
  if (!node_) throw Error("data() on undefined tensor");
  return node_->value;
}

std::span<real> Tensor::mutable_data() {
  if (!node_) throw Error("mutable_data() on undefined tensor");
  return node_->value;
}

real Tensor::at(std::size_t i) const {
  auto d = data();
  if (i >= d.size()) throw DimensionError("index " + std::to_string(i) + " out of range");
  return d[i];
}

real Tensor::at(std::size_t i, std::size_t j) const {
  std::size_t c = cols();
  return at(i * c + j);
}

real Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() expects 1 element, tensor has " + std::to_string(numel()));
  return data()[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool enable) {
  if (!node_) throw Error("set_requires_grad() on undefined tensor");
  node_->requires_grad = enable;
  return *this;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const real> Tensor::grad() const {
  if (!has_grad()) throw Error("tensor has no gradient buffer; call backward() first");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_ && !node_->grad.empty()) {
    std::fill(node_->grad.begin(), node_->grad.end(), real(0));
  }
}

void Tensor::backward() {
  if (!node_) throw Error("backward() on undefined tensor");
  if (numel() != 1) throw DimensionError("backward() must start from a scalar, got shape " + shape_str(shape()));
  if (!node_->requires_grad) throw Error("backward() on a tensor that does not require grad");

  // Iterative post-order DFS to get a topological order of the tape.
  std::vector<detail::Node*> topo;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      topo.push_back(n);
      stack.pop_back();
    }
  }

  node_->ensure_grad();
  node_->grad[0] = real(1);
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    // A node left without a gradient buffer received no gradient at all
    // (every consumer skipped it, e.g. a hinge with no active pairs), so
    // its contribution is exactly zero and running its backward would read
    // an unallocated buffer.
    if ((*it)->backward_fn && !(*it)->grad.empty()) (*it)->backward_fn();
  }
}

Tensor Tensor::detach() const {
  if (!node_) return Tensor();
  return from(node_->shape, node_->value);
}

}  // namespace mlvtg
