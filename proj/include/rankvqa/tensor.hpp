#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rankvqa/errors.hpp"

namespace rankvqa {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Dense row-major tensor of doubles with an optional recorded computation
// graph for reverse-mode differentiation.
//
// Tensor is a cheap handle (shared state); copying a Tensor aliases the same
// storage. Each operation that involves a graph-connected input records a
// node (operation id, parents, backward rule) on its result. backward() on a
// scalar walks the recorded graph once and adds this pass's gradient into the
// persistent grad buffer of every reachable tensor flagged requires_grad, so
// repeated backward calls accumulate. The graph itself is owned by the result
// handles and is freed when they go out of scope; there is no global tape.
class Tensor {
 public:
  struct Impl;

  // Gives backward rules access to the current pass's parent gradients.
  class GradSink {
   public:
    // Pass-local gradient buffer of parent i to accumulate into; empty span
    // if that parent does not participate in differentiation.
    std::span<double> parent_grad(std::size_t i);
    std::span<const double> parent_data(std::size_t i) const;

   private:
    friend class Tensor;
    GradSink(Impl* node, void* pass) : node_(node), pass_(pass) {}
    Impl* node_;
    void* pass_;
  };

  using BackwardRule =
      std::function<void(std::span<const double> out_grad, GradSink& sink)>;

  Tensor();  // scalar 0

  static Tensor zeros(const Shape& shape);
  static Tensor constant(const Shape& shape, double value);
  static Tensor from_data(Shape shape, std::vector<double> data);
  static Tensor from_rows(const std::vector<std::vector<double>>& rows);
  static Tensor scalar(double value);

  // Records a custom operation node. Used by higher layers for fused ops
  // (cross-entropy, hinge ranking loss) whose backward rules are cheaper to
  // state directly than to compose from primitives.
  static Tensor make_op(std::string op, Shape shape, std::vector<double> data,
                        std::vector<Tensor> parents, BackwardRule rule);

  const Shape& shape() const;
  std::size_t numel() const;
  std::size_t rank() const;
  std::size_t rows() const;  // 2-d only
  std::size_t cols() const;  // 2-d only

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double value() const;  // numel()==1 only
  double at(std::size_t i) const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  // True if this tensor participates in gradient computation (is a parameter
  // or was produced from one).
  bool tracked() const;

  bool has_grad() const;
  std::span<const double> grad() const;       // ContractError if absent
  std::span<double> mutable_grad();           // ContractError if absent
  void zero_grad();
  void accumulate_grad(std::span<const double> g);

  // Reverse-mode pass from a scalar; adds dL/dx into every reachable
  // requires_grad tensor.
  void backward();

  const std::string& op() const;

 private:
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<Impl> impl_;
  friend Tensor detail_wrap(std::shared_ptr<Impl> impl);
  friend const std::shared_ptr<Impl>& detail_impl(const Tensor& t);
};

// --- operations -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax_rows(const Tensor& x);
Tensor relu(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);          // elementwise
Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);
Tensor add_rowwise(const Tensor& m, const Tensor& v);  // m [r x c] + v [c] per row
Tensor transpose(const Tensor& x);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t len);
Tensor reshape(const Tensor& x, Shape shape);
Tensor sum(const Tensor& x);   // scalar
Tensor mean(const Tensor& x);  // scalar
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// Walks the recorded graph from root, visiting each node once with its
// parents. Introspection hook for harnesses (e.g. locating activation inputs).
void for_each_node(
    const Tensor& root,
    const std::function<void(const Tensor& node, const std::vector<Tensor>& parents)>& fn);

// --- gradient checking ------------------------------------------------------

// Central finite differences (f(x+h e_i) - f(x-h e_i)) / 2h per coordinate.
// f must be deterministic; non-finite evaluations raise NumericError.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f,
                        const Tensor& x, double h);

// Max over coordinates of |a-b| / max(|a|, |b|, floor). The floor keeps
// near-zero gradients from amplifying finite-difference noise into spurious
// relative errors.
double max_relative_error(std::span<const double> a, std::span<const double> b,
                          double floor = 1e-5);

}  // namespace rankvqa
