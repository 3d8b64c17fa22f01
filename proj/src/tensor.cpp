#include "rankvqa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace rankvqa {

std::string shape_str(const Shape& shape) {
  if (shape.empty()) return "scalar";
  std::ostringstream os;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

struct Tensor::Impl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty = absent
  bool requires_grad = false;
  std::string op;  // empty for leaves
  std::vector<std::shared_ptr<Impl>> parents;
  BackwardRule rule;

  bool tracked() const { return requires_grad || !parents.empty(); }
};

namespace {

using Impl = Tensor::Impl;
using PassGrads = std::unordered_map<Impl*, std::vector<double>>;

std::shared_ptr<Impl> new_impl(Shape shape, std::vector<double> data) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("zero dimension in shape " + shape_str(shape));
  }
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return impl;
}

void check_2d(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a 2-d tensor, got shape " +
                     shape_str(t.shape()));
  }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes disagree: " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace

Tensor detail_wrap(std::shared_ptr<Impl> impl) { return Tensor(std::move(impl)); }
const std::shared_ptr<Impl>& detail_impl(const Tensor& t) { return t.impl_; }

std::span<double> Tensor::GradSink::parent_grad(std::size_t i) {
  auto& parent = node_->parents.at(i);
  if (!parent->tracked()) return {};
  auto& pass = *static_cast<PassGrads*>(pass_);
  auto& buf = pass[parent.get()];
  if (buf.empty()) buf.assign(parent->data.size(), 0.0);
  return buf;
}

std::span<const double> Tensor::GradSink::parent_data(std::size_t i) const {
  return node_->parents.at(i)->data;
}

Tensor::Tensor() : impl_(new_impl({}, {0.0})) {}

Tensor Tensor::zeros(const Shape& shape) {
  return Tensor(new_impl(shape, std::vector<double>(shape_numel(shape), 0.0)));
}

Tensor Tensor::constant(const Shape& shape, double value) {
  return Tensor(new_impl(shape, std::vector<double>(shape_numel(shape), value)));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  return Tensor(new_impl(std::move(shape), std::move(data)));
}

Tensor Tensor::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw ShapeError("from_rows: no rows");
  const std::size_t c = rows[0].size();
  std::vector<double> flat;
  flat.reserve(rows.size() * c);
  for (const auto& row : rows) {
    if (row.size() != c) {
      throw ShapeError("from_rows: ragged rows: " + std::to_string(c) + " vs " +
                       std::to_string(row.size()));
    }
    flat.insert(flat.end(), row.begin(), row.end());
  }
  return from_data({rows.size(), c}, std::move(flat));
}

Tensor Tensor::scalar(double value) { return Tensor(new_impl({}, {value})); }

Tensor Tensor::make_op(std::string op, Shape shape, std::vector<double> data,
                       std::vector<Tensor> parents, BackwardRule rule) {
  auto impl = new_impl(std::move(shape), std::move(data));
  bool any_tracked = false;
  for (const auto& p : parents) any_tracked = any_tracked || p.tracked();
  if (any_tracked) {
    impl->op = std::move(op);
    impl->rule = std::move(rule);
    impl->parents.reserve(parents.size());
    for (const auto& p : parents) impl->parents.push_back(p.impl_);
  }
  return Tensor(std::move(impl));
}

const Shape& Tensor::shape() const { return impl_->shape; }
std::size_t Tensor::numel() const { return impl_->data.size(); }
std::size_t Tensor::rank() const { return impl_->shape.size(); }

std::size_t Tensor::rows() const {
  check_2d(*this, "rows");
  return impl_->shape[0];
}

std::size_t Tensor::cols() const {
  check_2d(*this, "cols");
  return impl_->shape[1];
}

std::span<const double> Tensor::data() const { return impl_->data; }
std::span<double> Tensor::mutable_data() { return impl_->data; }

double Tensor::value() const {
  if (numel() != 1) {
    throw ContractError("value: tensor of shape " + shape_str(shape()) +
                        " is not a scalar");
  }
  return impl_->data[0];
}

double Tensor::at(std::size_t i) const { return impl_->data.at(i); }

double Tensor::at(std::size_t r, std::size_t c) const {
  check_2d(*this, "at");
  return impl_->data.at(r * impl_->shape[1] + c);
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

bool Tensor::tracked() const { return impl_->tracked(); }

bool Tensor::has_grad() const { return !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) {
    throw ContractError("grad: no gradient accumulated for this tensor");
  }
  return impl_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (!has_grad()) {
    throw ContractError("grad: no gradient accumulated for this tensor");
  }
  return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.clear(); }

void Tensor::accumulate_grad(std::span<const double> g) {
  if (g.size() != impl_->data.size()) {
    throw ShapeError("accumulate_grad: gradient length " +
                     std::to_string(g.size()) + " vs tensor numel " +
                     std::to_string(impl_->data.size()));
  }
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) impl_->grad[i] += g[i];
}

const std::string& Tensor::op() const { return impl_->op; }

void Tensor::backward() {
  if (numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " +
                        shape_str(shape()));
  }
  // Post-order DFS over tracked parents; reversed, this visits each node
  // before any of its inputs.
  std::vector<Impl*> order;
  {
    std::unordered_set<Impl*> visited;
    std::vector<std::pair<Impl*, std::size_t>> stack;
    stack.emplace_back(impl_.get(), 0);
    visited.insert(impl_.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        Impl* parent = node->parents[next++].get();
        if (parent->tracked() && !visited.count(parent)) {
          visited.insert(parent);
          stack.emplace_back(parent, 0);
        }
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
  }

  PassGrads pass;
  pass[impl_.get()] = {1.0};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Impl* node = *it;
    auto found = pass.find(node);
    if (found == pass.end()) continue;
    const std::vector<double>& g = found->second;
    if (node->requires_grad) {
      if (node->grad.empty()) node->grad.assign(node->data.size(), 0.0);
      for (std::size_t i = 0; i < g.size(); ++i) node->grad[i] += g[i];
    }
    if (node->rule) {
      GradSink sink(node, &pass);
      node->rule(g, sink);
    }
  }
}

// --- operations -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_2d(a, "matmul");
  check_2d(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul: inner dimensions disagree: " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  {
    auto pa = a.data();
    auto pb = b.data();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double aik = pa[i * k + kk];
        const double* brow = &pb[kk * n];
        double* orow = &out[i * n];
        for (std::size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
      }
    }
  }
  return Tensor::make_op(
      "matmul", {m, n}, std::move(out), {a, b},
      [m, k, n](std::span<const double> g, Tensor::GradSink& sink) {
        auto pa = sink.parent_data(0);
        auto pb = sink.parent_data(1);
        if (auto da = sink.parent_grad(0); !da.empty()) {
          // dA = G . B^T
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t kk = 0; kk < k; ++kk) {
              double acc = 0.0;
              for (std::size_t j = 0; j < n; ++j)
                acc += g[i * n + j] * pb[kk * n + j];
              da[i * k + kk] += acc;
            }
        }
        if (auto db = sink.parent_grad(1); !db.empty()) {
          // dB = A^T . G
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t kk = 0; kk < k; ++kk) {
              const double aik = pa[i * k + kk];
              for (std::size_t j = 0; j < n; ++j)
                db[kk * n + j] += aik * g[i * n + j];
            }
        }
      });
}

Tensor softmax_rows(const Tensor& x) {
  check_2d(x, "softmax_rows");
  const std::size_t m = x.rows(), n = x.cols();
  auto px = x.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = &px[i * n];
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = std::exp(row[j] - mx);
      z += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
  }
  std::vector<double> saved = out;
  return Tensor::make_op(
      "softmax_rows", {m, n}, std::move(out), {x},
      [m, n, s = std::move(saved)](std::span<const double> g,
                                   Tensor::GradSink& sink) {
        auto dx = sink.parent_grad(0);
        if (dx.empty()) return;
        // dx_j = s_j * (g_j - sum_i g_i s_i), per row
        for (std::size_t i = 0; i < m; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * s[i * n + j];
          for (std::size_t j = 0; j < n; ++j)
            dx[i * n + j] += s[i * n + j] * (g[i * n + j] - dot);
        }
      });
}

Tensor relu(const Tensor& x) {
  auto px = x.data();
  std::vector<double> out(px.size());
  for (std::size_t i = 0; i < px.size(); ++i) out[i] = px[i] > 0.0 ? px[i] : 0.0;
  return Tensor::make_op(
      "relu", x.shape(), std::move(out), {x},
      [](std::span<const double> g, Tensor::GradSink& sink) {
        auto dx = sink.parent_grad(0);
        if (dx.empty()) return;
        auto px = sink.parent_data(0);
        // subgradient at 0 is 0
        for (std::size_t i = 0; i < g.size(); ++i)
          if (px[i] > 0.0) dx[i] += g[i];
      });
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  auto pa = a.data();
  auto pb = b.data();
  std::vector<double> out(pa.size());
  for (std::size_t i = 0; i < pa.size(); ++i) out[i] = pa[i] + pb[i];
  return Tensor::make_op(
      "add", a.shape(), std::move(out), {a, b},
      [](std::span<const double> g, Tensor::GradSink& sink) {
        for (std::size_t p = 0; p < 2; ++p)
          if (auto d = sink.parent_grad(p); !d.empty())
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  auto pa = a.data();
  auto pb = b.data();
  std::vector<double> out(pa.size());
  for (std::size_t i = 0; i < pa.size(); ++i) out[i] = pa[i] - pb[i];
  return Tensor::make_op(
      "sub", a.shape(), std::move(out), {a, b},
      [](std::span<const double> g, Tensor::GradSink& sink) {
        if (auto da = sink.parent_grad(0); !da.empty())
          for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
        if (auto db = sink.parent_grad(1); !db.empty())
          for (std::size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  auto pa = a.data();
  auto pb = b.data();
  std::vector<double> out(pa.size());
  for (std::size_t i = 0; i < pa.size(); ++i) out[i] = pa[i] * pb[i];
  return Tensor::make_op(
      "mul", a.shape(), std::move(out), {a, b},
      [](std::span<const double> g, Tensor::GradSink& sink) {
        auto pa = sink.parent_data(0);
        auto pb = sink.parent_data(1);
        if (auto da = sink.parent_grad(0); !da.empty())
          for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * pb[i];
        if (auto db = sink.parent_grad(1); !db.empty())
          for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * pa[i];
      });
}

Tensor scale(const Tensor& x, double c) {
  auto px = x.data();
  std::vector<double> out(px.size());
  for (std::size_t i = 0; i < px.size(); ++i) out[i] = px[i] * c;
  return Tensor::make_op(
      "scale", x.shape(), std::move(out), {x},
      [c](std::span<const double> g, Tensor::GradSink& sink) {
        if (auto dx = sink.parent_grad(0); !dx.empty())
          for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * c;
      });
}

Tensor add_scalar(const Tensor& x, double c) {
  auto px = x.data();
  std::vector<double> out(px.size());
  for (std::size_t i = 0; i < px.size(); ++i) out[i] = px[i] + c;
  return Tensor::make_op(
      "add_scalar", x.shape(), std::move(out), {x},
      [](std::span<const double> g, Tensor::GradSink& sink) {
        if (auto dx = sink.parent_grad(0); !dx.empty())
          for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
      });
}

Tensor add_rowwise(const Tensor& m, const Tensor& v) {
  check_2d(m, "add_rowwise");
  if (v.rank() != 1 || v.shape()[0] != m.cols()) {
    throw ShapeError("add_rowwise: vector shape " + shape_str(v.shape()) +
                     " does not match matrix " + shape_str(m.shape()));
  }
  const std::size_t r = m.rows(), c = m.cols();
  auto pm = m.data();
  auto pv = v.data();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = pm[i * c + j] + pv[j];
  return Tensor::make_op(
      "add_rowwise", {r, c}, std::move(out), {m, v},
      [r, c](std::span<const double> g, Tensor::GradSink& sink) {
        if (auto dm = sink.parent_grad(0); !dm.empty())
          for (std::size_t i = 0; i < g.size(); ++i) dm[i] += g[i];
        if (auto dv = sink.parent_grad(1); !dv.empty())
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) dv[j] += g[i * c + j];
      });
}

Tensor transpose(const Tensor& x) {
  check_2d(x, "transpose");
  const std::size_t r = x.rows(), c = x.cols();
  auto px = x.data();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = px[i * c + j];
  return Tensor::make_op(
      "transpose", {c, r}, std::move(out), {x},
      [r, c](std::span<const double> g, Tensor::GradSink& sink) {
        if (auto dx = sink.parent_grad(0); !dx.empty())
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += g[j * r + i];
      });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  if (axis > 1) {
    throw ShapeError("concat: axis " + std::to_string(axis) +
                     " out of range for 2-d tensors");
  }
  const std::size_t other = 1 - axis;
  for (const auto& p : parts) check_2d(p, "concat");
  const std::size_t fixed = parts[0].shape()[other];
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.shape()[other] != fixed) {
      throw ShapeError("concat: shapes disagree off-axis: " +
                       shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    }
    total += p.shape()[axis];
  }
  Shape out_shape(2);
  out_shape[axis] = total;
  out_shape[other] = fixed;
  const std::size_t out_rows = out_shape[0], out_cols = out_shape[1];
  std::vector<double> out(out_rows * out_cols);
  std::vector<std::size_t> offsets(parts.size());
  {
    std::size_t off = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      offsets[p] = off;
      const std::size_t pr = parts[p].shape()[0], pc = parts[p].shape()[1];
      auto src = parts[p].data();
      for (std::size_t i = 0; i < pr; ++i)
        for (std::size_t j = 0; j < pc; ++j) {
          const std::size_t oi = axis == 0 ? off + i : i;
          const std::size_t oj = axis == 1 ? off + j : j;
          out[oi * out_cols + oj] = src[i * pc + j];
        }
      off += parts[p].shape()[axis];
    }
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  std::vector<Shape> part_shapes;
  part_shapes.reserve(parts.size());
  for (const auto& p : parts) part_shapes.push_back(p.shape());
  return Tensor::make_op(
      "concat", std::move(out_shape), std::move(out), std::move(parents),
      [axis, out_cols, offsets = std::move(offsets),
       part_shapes = std::move(part_shapes)](std::span<const double> g,
                                             Tensor::GradSink& sink) {
        // split the incoming gradient back to each input
        for (std::size_t p = 0; p < part_shapes.size(); ++p) {
          auto dp = sink.parent_grad(p);
          if (dp.empty()) continue;
          const std::size_t pr = part_shapes[p][0], pc = part_shapes[p][1];
          const std::size_t off = offsets[p];
          for (std::size_t i = 0; i < pr; ++i)
            for (std::size_t j = 0; j < pc; ++j) {
              const std::size_t oi = axis == 0 ? off + i : i;
              const std::size_t oj = axis == 1 ? off + j : j;
              dp[i * pc + j] += g[oi * out_cols + oj];
            }
        }
      });
}

Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis) {
  const Tensor parts[] = {a, b};
  return concat(std::span<const Tensor>(parts, 2), axis);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start,
             std::size_t len) {
  check_2d(x, "slice");
  if (axis > 1) {
    throw ShapeError("slice: axis " + std::to_string(axis) +
                     " out of range for 2-d tensors");
  }
  if (len == 0 || start + len > x.shape()[axis]) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + len) + ") out of bounds for shape " +
                     shape_str(x.shape()) + " axis " + std::to_string(axis));
  }
  const std::size_t c = x.cols();
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  const std::size_t oc = out_shape[1];
  auto px = x.data();
  std::vector<double> out(out_shape[0] * out_shape[1]);
  for (std::size_t i = 0; i < out_shape[0]; ++i)
    for (std::size_t j = 0; j < out_shape[1]; ++j) {
      const std::size_t si = axis == 0 ? start + i : i;
      const std::size_t sj = axis == 1 ? start + j : j;
      out[i * oc + j] = px[si * c + sj];
    }
  return Tensor::make_op(
      "slice", out_shape, std::move(out), {x},
      [axis, start, c, oc,
       out_shape](std::span<const double> g, Tensor::GradSink& sink) {
        auto dx = sink.parent_grad(0);
        if (dx.empty()) return;
        for (std::size_t i = 0; i < out_shape[0]; ++i)
          for (std::size_t j = 0; j < out_shape[1]; ++j) {
            const std::size_t si = axis == 0 ? start + i : i;
            const std::size_t sj = axis == 1 ? start + j : j;
            dx[si * c + sj] += g[i * oc + j];
          }
      });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view shape " + shape_str(x.shape()) +
                     " as " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return Tensor::make_op(
      "reshape", std::move(shape), std::move(out), {x},
      [](std::span<const double> g, Tensor::GradSink& sink) {
        if (auto dx = sink.parent_grad(0); !dx.empty())
          for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
      });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return Tensor::make_op(
      "sum", {}, {acc}, {x},
      [](std::span<const double> g, Tensor::GradSink& sink) {
        if (auto dx = sink.parent_grad(0); !dx.empty())
          for (double& d : dx) d += g[0];
      });
}

Tensor mean(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  const double inv_n = 1.0 / static_cast<double>(x.numel());
  return Tensor::make_op(
      "mean", {}, {acc * inv_n}, {x},
      [inv_n](std::span<const double> g, Tensor::GradSink& sink) {
        if (auto dx = sink.parent_grad(0); !dx.empty())
          for (double& d : dx) d += g[0] * inv_n;
      });
}

Tensor log(const Tensor& x) {
  auto px = x.data();
  std::vector<double> out(px.size());
  for (std::size_t i = 0; i < px.size(); ++i) out[i] = std::log(px[i]);
  return Tensor::make_op(
      "log", x.shape(), std::move(out), {x},
      [](std::span<const double> g, Tensor::GradSink& sink) {
        auto dx = sink.parent_grad(0);
        if (dx.empty()) return;
        auto px = sink.parent_data(0);
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] / px[i];
      });
}

Tensor exp(const Tensor& x) {
  auto px = x.data();
  std::vector<double> out(px.size());
  for (std::size_t i = 0; i < px.size(); ++i) out[i] = std::exp(px[i]);
  std::vector<double> saved = out;
  return Tensor::make_op(
      "exp", x.shape(), std::move(out), {x},
      [s = std::move(saved)](std::span<const double> g, Tensor::GradSink& sink) {
        if (auto dx = sink.parent_grad(0); !dx.empty())
          for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * s[i];
      });
}

void for_each_node(
    const Tensor& root,
    const std::function<void(const Tensor& node, const std::vector<Tensor>& parents)>& fn) {
  std::unordered_set<Impl*> visited;
  std::vector<std::shared_ptr<Impl>> stack{detail_impl(root)};
  visited.insert(stack.back().get());
  while (!stack.empty()) {
    std::shared_ptr<Impl> node = std::move(stack.back());
    stack.pop_back();
    std::vector<Tensor> parents;
    parents.reserve(node->parents.size());
    for (const auto& parent : node->parents) {
      parents.push_back(detail_wrap(parent));
      if (!visited.count(parent.get())) {
        visited.insert(parent.get());
        stack.push_back(parent);
      }
    }
    fn(detail_wrap(std::move(node)), parents);
  }
}

// --- gradient checking ------------------------------------------------------

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f,
                        const Tensor& x, double h) {
  if (!(h > 0.0)) {
    throw ContractError("finite_diff_grad: step must be positive");
  }
  std::vector<double> base(x.data().begin(), x.data().end());
  std::vector<double> out(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    std::vector<double> plus = base, minus = base;
    plus[i] += h;
    minus[i] -= h;
    const double fp = f(Tensor::from_data(x.shape(), std::move(plus)));
    const double fm = f(Tensor::from_data(x.shape(), std::move(minus)));
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("finite_diff_grad: non-finite evaluation at coordinate " +
                         std::to_string(i));
    }
    out[i] = (fp - fm) / (2.0 * h);
  }
  return Tensor::from_data(x.shape(), std::move(out));
}

double max_relative_error(std::span<const double> a, std::span<const double> b,
                          double floor) {
  if (a.size() != b.size()) {
    throw ContractError("max_relative_error: length mismatch " +
                        std::to_string(a.size()) + " vs " +
                        std::to_string(b.size()));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace rankvqa
