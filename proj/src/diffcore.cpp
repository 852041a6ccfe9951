#include "thinkact/diffcore.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "thinkact/error.hpp"

namespace thinkact::diff {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

thread_local bool g_grad_enabled = true;

ConstMap view(const Node& n) {
  return ConstMap(n.data.data(), static_cast<Eigen::Index>(n.shape.rows), static_cast<Eigen::Index>(n.shape.cols));
}

MutMap grad_view(Node& n) {
  n.ensure_grad();
  return MutMap(n.grad.data(), static_cast<Eigen::Index>(n.shape.rows), static_cast<Eigen::Index>(n.shape.cols));
}

ConstMap grad_cview(const Node& n) {
  return ConstMap(n.grad.data(), static_cast<Eigen::Index>(n.shape.rows), static_cast<Eigen::Index>(n.shape.cols));
}

[[noreturn]] void shape_error(const std::string& op, const Shape& a, const Shape& b) {
  throw Error(ErrorKind::shape_mismatch, op + ": " + a.str() + " vs " + b.str());
}

// Creates the result node; parents and the backward rule are kept only when
// gradients are enabled and some parent needs one.
Value make_result(Shape shape, std::vector<double> data, std::vector<Value> parents,
                  std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->data = std::move(data);
  node->is_leaf = false;
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) needs = needs || p.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node_ptr());
    node->backward = std::move(backward);
  }
  return Value(std::move(node));
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

enum class Broadcast { same, row, col, scalar };

Broadcast broadcast_kind(const std::string& op, const Shape& a, const Shape& b) {
  if (a == b) return Broadcast::same;
  if (b.rows == 1 && b.cols == 1) return Broadcast::scalar;
  if (b.rows == 1 && b.cols == a.cols) return Broadcast::row;
  if (b.cols == 1 && b.rows == a.rows) return Broadcast::col;
  shape_error(op, a, b);
}

inline std::size_t bindex(Broadcast k, std::size_t r, std::size_t c, std::size_t cols) {
  switch (k) {
    case Broadcast::same: return r * cols + c;
    case Broadcast::row: return c;
    case Broadcast::col: return r;
    case Broadcast::scalar: return 0;
  }
  return 0;
}

template <typename Fwd, typename GradA, typename GradB>
Value binary(const std::string& op, const Value& a, const Value& b, Fwd fwd, GradA ga, GradB gb) {
  const Broadcast k = broadcast_kind(op, a.shape(), b.shape());
  const Shape s = a.shape();
  std::vector<double> out(s.size());
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t r = 0; r < s.rows; ++r)
    for (std::size_t c = 0; c < s.cols; ++c) out[r * s.cols + c] = fwd(ad[r * s.cols + c], bd[bindex(k, r, c, s.cols)]);
  return make_result(s, std::move(out), {a, b}, [k, s, ga, gb](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) pa.ensure_grad();
    if (pb.requires_grad) pb.ensure_grad();
    for (std::size_t r = 0; r < s.rows; ++r) {
      for (std::size_t c = 0; c < s.cols; ++c) {
        const std::size_t i = r * s.cols + c;
        const std::size_t j = bindex(k, r, c, s.cols);
        const double g = self.grad[i];
        if (pa.requires_grad) pa.grad[i] += ga(g, pa.data[i], pb.data[j]);
        if (pb.requires_grad) pb.grad[j] += gb(g, pa.data[i], pb.data[j]);
      }
    }
  });
}

// y = f(x) elementwise; dy/dx expressed through (x, y).
template <typename Fwd, typename Deriv>
Value unary(const Value& a, Fwd fwd, Deriv deriv) {
  std::vector<double> out(a.size());
  const auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(ad[i]);
  return make_result(a.shape(), std::move(out), {a}, [deriv](Node& self) {
    Node& pa = parent(self, 0);
    pa.ensure_grad();
    for (std::size_t i = 0; i < self.data.size(); ++i) pa.grad[i] += self.grad[i] * deriv(pa.data[i], self.data[i]);
  });
}

// Iterates the independent lines of `s` along `axis`: calls f(offset, stride, length).
template <typename F>
void for_each_line(const Shape& s, int axis, F f) {
  if (axis == 1) {
    for (std::size_t r = 0; r < s.rows; ++r) f(r * s.cols, std::size_t{1}, s.cols);
  } else if (axis == 0) {
    for (std::size_t c = 0; c < s.cols; ++c) f(c, s.cols, s.rows);
  } else {
    throw Error(ErrorKind::invalid_argument, "axis must be 0 or 1");
  }
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

std::string Shape::str() const { return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]"; }

Value Value::constant(Shape shape, std::vector<double> data) { return leaf(shape, std::move(data), false); }

Value Value::constant(Shape shape, double fill) { return leaf(shape, std::vector<double>(shape.size(), fill), false); }

Value Value::leaf(Shape shape, std::vector<double> data, bool requires_grad) {
  if (data.size() != shape.size())
    throw Error(ErrorKind::shape_mismatch,
                "data of length " + std::to_string(data.size()) + " for shape " + shape.str());
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  node->is_leaf = true;
  return Value(std::move(node));
}

double Value::item() const {
  if (size() != 1) throw Error(ErrorKind::shape_mismatch, "item() on " + shape().str());
  return node_->data[0];
}

void Value::backward() const {
  if (!node_->requires_grad) return;
  // Iterative post-order DFS over nodes that need gradients.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  std::vector<std::pair<Node*, std::vector<double>>> accumulated;
  for (Node* n : order) {
    if (n->is_leaf) accumulated.emplace_back(n, std::move(n->grad));
    n->grad.assign(n->data.size(), 0.0);
  }
  std::fill(node_->grad.begin(), node_->grad.end(), 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
  for (auto& [n, before] : accumulated) {
    if (before.size() != n->grad.size()) continue;
    for (std::size_t i = 0; i < before.size(); ++i) n->grad[i] = before[i] + n->grad[i];
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() noexcept { return g_grad_enabled; }

Value matmul(const Value& a, const Value& b) {
  if (a.cols() != b.rows()) shape_error("matmul", a.shape(), b.shape());
  const Shape s{a.rows(), b.cols()};
  std::vector<double> out(s.size());
  MutMap(out.data(), static_cast<Eigen::Index>(s.rows), static_cast<Eigen::Index>(s.cols)).noalias() =
      view(*a.node()) * view(*b.node());
  return make_result(s, std::move(out), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    const auto g = grad_cview(self);
    if (pa.requires_grad) grad_view(pa).noalias() += g * view(pb).transpose();
    if (pb.requires_grad) grad_view(pb).noalias() += view(pa).transpose() * g;
  });
}

Value transpose(const Value& a) {
  const Shape s{a.cols(), a.rows()};
  std::vector<double> out(s.size());
  MutMap(out.data(), static_cast<Eigen::Index>(s.rows), static_cast<Eigen::Index>(s.cols)) = view(*a.node()).transpose();
  return make_result(s, std::move(out), {a}, [](Node& self) {
    grad_view(parent(self, 0)) += grad_cview(self).transpose();
  });
}

Value add(const Value& a, const Value& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double g, double, double) { return g; },
      [](double g, double, double) { return g; });
}

Value sub(const Value& a, const Value& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double g, double, double) { return g; },
      [](double g, double, double) { return -g; });
}

Value mul(const Value& a, const Value& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double g, double, double y) { return g * y; },
      [](double g, double x, double) { return g * x; });
}

Value scale(const Value& a, double factor) {
  return unary(a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Value tanh(const Value& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Value sigmoid(const Value& a) {
  return unary(a, sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

Value relu(const Value& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Value exp(const Value& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Value log(const Value& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Value softmax(const Value& a, int axis) {
  const Shape s = a.shape();
  std::vector<double> out(s.size());
  const auto x = a.data();
  for_each_line(s, axis, [&](std::size_t off, std::size_t stride, std::size_t len) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, x[off + i * stride]);
    double z = 0.0;
    for (std::size_t i = 0; i < len; ++i) z += (out[off + i * stride] = std::exp(x[off + i * stride] - mx));
    for (std::size_t i = 0; i < len; ++i) out[off + i * stride] /= z;
  });
  return make_result(s, std::move(out), {a}, [s, axis](Node& self) {
    Node& pa = parent(self, 0);
    pa.ensure_grad();
    for_each_line(s, axis, [&](std::size_t off, std::size_t stride, std::size_t len) {
      double dot = 0.0;
      for (std::size_t i = 0; i < len; ++i) dot += self.grad[off + i * stride] * self.data[off + i * stride];
      for (std::size_t i = 0; i < len; ++i) {
        const std::size_t k = off + i * stride;
        pa.grad[k] += self.data[k] * (self.grad[k] - dot);
      }
    });
  });
}

Value log_softmax(const Value& a, int axis) {
  const Shape s = a.shape();
  std::vector<double> out(s.size());
  const auto x = a.data();
  for_each_line(s, axis, [&](std::size_t off, std::size_t stride, std::size_t len) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, x[off + i * stride]);
    double z = 0.0;
    for (std::size_t i = 0; i < len; ++i) z += std::exp(x[off + i * stride] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t i = 0; i < len; ++i) out[off + i * stride] = x[off + i * stride] - lse;
  });
  return make_result(s, std::move(out), {a}, [s, axis](Node& self) {
    Node& pa = parent(self, 0);
    pa.ensure_grad();
    for_each_line(s, axis, [&](std::size_t off, std::size_t stride, std::size_t len) {
      double total = 0.0;
      for (std::size_t i = 0; i < len; ++i) total += self.grad[off + i * stride];
      for (std::size_t i = 0; i < len; ++i) {
        const std::size_t k = off + i * stride;
        pa.grad[k] += self.grad[k] - std::exp(self.data[k]) * total;
      }
    });
  });
}

Value sum(const Value& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_result({1, 1}, {total}, {a}, [](Node& self) {
    Node& pa = parent(self, 0);
    pa.ensure_grad();
    for (double& g : pa.grad) g += self.grad[0];
  });
}

Value mean(const Value& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Value sum_rows(const Value& a) {
  const Shape s = a.shape();
  std::vector<double> out(s.cols, 0.0);
  const auto x = a.data();
  for (std::size_t r = 0; r < s.rows; ++r)
    for (std::size_t c = 0; c < s.cols; ++c) out[c] += x[r * s.cols + c];
  return make_result({1, s.cols}, std::move(out), {a}, [s](Node& self) {
    Node& pa = parent(self, 0);
    pa.ensure_grad();
    for (std::size_t r = 0; r < s.rows; ++r)
      for (std::size_t c = 0; c < s.cols; ++c) pa.grad[r * s.cols + c] += self.grad[c];
  });
}

Value mean_rows(const Value& a) { return scale(sum_rows(a), 1.0 / static_cast<double>(a.rows())); }

Value concat(const std::vector<Value>& parts, int axis) {
  if (parts.empty()) throw Error(ErrorKind::invalid_argument, "concat of nothing");
  if (axis != 0 && axis != 1) throw Error(ErrorKind::invalid_argument, "axis must be 0 or 1");
  Shape s = parts.front().shape();
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const Shape& p = parts[i].shape();
    if (axis == 0) {
      if (p.cols != s.cols) shape_error("concat(axis=0)", s, p);
      s.rows += p.rows;
    } else {
      if (p.rows != s.rows) shape_error("concat(axis=1)", s, p);
      s.cols += p.cols;
    }
  }
  std::vector<double> out(s.size());
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const auto d = p.data();
    if (axis == 0) {
      std::copy(d.begin(), d.end(), out.begin() + static_cast<std::ptrdiff_t>(off * s.cols));
      off += p.rows();
    } else {
      for (std::size_t r = 0; r < s.rows; ++r)
        std::copy_n(d.begin() + static_cast<std::ptrdiff_t>(r * p.cols()), p.cols(),
                    out.begin() + static_cast<std::ptrdiff_t>(r * s.cols + off));
      off += p.cols();
    }
  }
  return make_result(s, std::move(out), parts, [s, axis, offsets](Node& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      Node& p = parent(self, i);
      if (!p.requires_grad) continue;
      p.ensure_grad();
      if (axis == 0) {
        const std::size_t base = offsets[i] * s.cols;
        for (std::size_t k = 0; k < p.grad.size(); ++k) p.grad[k] += self.grad[base + k];
      } else {
        for (std::size_t r = 0; r < s.rows; ++r)
          for (std::size_t c = 0; c < p.shape.cols; ++c)
            p.grad[r * p.shape.cols + c] += self.grad[r * s.cols + offsets[i] + c];
      }
    }
  });
}

Value slice_rows(const Value& a, std::size_t begin, std::size_t end) {
  if (begin >= end || end > a.rows())
    throw Error(ErrorKind::shape_mismatch, "slice_rows [" + std::to_string(begin) + "," + std::to_string(end) +
                                               ") of " + a.shape().str());
  const std::size_t cols = a.cols();
  const auto d = a.data();
  std::vector<double> out(d.begin() + static_cast<std::ptrdiff_t>(begin * cols),
                          d.begin() + static_cast<std::ptrdiff_t>(end * cols));
  return make_result({end - begin, cols}, std::move(out), {a}, [begin, cols](Node& self) {
    Node& pa = parent(self, 0);
    pa.ensure_grad();
    for (std::size_t k = 0; k < self.grad.size(); ++k) pa.grad[begin * cols + k] += self.grad[k];
  });
}

Value slice_cols(const Value& a, std::size_t begin, std::size_t end) {
  if (begin >= end || end > a.cols())
    throw Error(ErrorKind::shape_mismatch, "slice_cols [" + std::to_string(begin) + "," + std::to_string(end) +
                                               ") of " + a.shape().str());
  const Shape s{a.rows(), end - begin};
  const std::size_t cols = a.cols();
  const auto d = a.data();
  std::vector<double> out(s.size());
  for (std::size_t r = 0; r < s.rows; ++r)
    for (std::size_t c = 0; c < s.cols; ++c) out[r * s.cols + c] = d[r * cols + begin + c];
  return make_result(s, std::move(out), {a}, [s, begin, cols](Node& self) {
    Node& pa = parent(self, 0);
    pa.ensure_grad();
    for (std::size_t r = 0; r < s.rows; ++r)
      for (std::size_t c = 0; c < s.cols; ++c) pa.grad[r * cols + begin + c] += self.grad[r * s.cols + c];
  });
}

Value reshape(const Value& a, Shape shape) {
  if (shape.size() != a.size()) shape_error("reshape", a.shape(), shape);
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result(shape, std::move(out), {a}, [](Node& self) {
    Node& pa = parent(self, 0);
    pa.ensure_grad();
    for (std::size_t k = 0; k < self.grad.size(); ++k) pa.grad[k] += self.grad[k];
  });
}

Value embedding_lookup(const Value& table, const std::vector<std::size_t>& indices) {
  const std::size_t dim = table.cols();
  std::vector<double> out(indices.size() * dim);
  const auto t = table.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= table.rows())
      throw Error(ErrorKind::unknown_token,
                  "index " + std::to_string(indices[i]) + " outside table " + table.shape().str());
    std::copy_n(t.begin() + static_cast<std::ptrdiff_t>(indices[i] * dim), dim,
                out.begin() + static_cast<std::ptrdiff_t>(i * dim));
  }
  return make_result({indices.size(), dim}, std::move(out), {table}, [indices, dim](Node& self) {
    Node& pt = parent(self, 0);
    pt.ensure_grad();
    for (std::size_t i = 0; i < indices.size(); ++i)
      for (std::size_t c = 0; c < dim; ++c) pt.grad[indices[i] * dim + c] += self.grad[i * dim + c];
  });
}

Value conv2d_same(const Value& input, const Value& weight, const Value& bias, std::size_t height, std::size_t width,
                  std::size_t kernel) {
  if (kernel % 2 == 0) throw Error(ErrorKind::invalid_argument, "kernel size must be odd, got " + std::to_string(kernel));
  const std::size_t cells = height * width;
  const std::size_t in_ch = input.cols();
  const std::size_t patch = kernel * kernel * in_ch;
  if (input.rows() != cells) shape_error("conv2d_same input", input.shape(), Shape{cells, in_ch});
  if (weight.rows() != patch) shape_error("conv2d_same weight", weight.shape(), Shape{patch, weight.cols()});
  const std::size_t out_ch = weight.cols();
  if (bias.shape() != Shape{1, out_ch}) shape_error("conv2d_same bias", bias.shape(), Shape{1, out_ch});

  // im2col with zero padding: patches(cell, (ky*k + kx)*in + c).
  auto patches = std::make_shared<std::vector<double>>(cells * patch, 0.0);
  const auto x = input.data();
  const long half = static_cast<long>(kernel / 2);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      double* row = patches->data() + (r * width + c) * patch;
      for (std::size_t ky = 0; ky < kernel; ++ky) {
        const long sr = static_cast<long>(r) + static_cast<long>(ky) - half;
        if (sr < 0 || sr >= static_cast<long>(height)) continue;
        for (std::size_t kx = 0; kx < kernel; ++kx) {
          const long sc = static_cast<long>(c) + static_cast<long>(kx) - half;
          if (sc < 0 || sc >= static_cast<long>(width)) continue;
          std::copy_n(x.begin() + static_cast<std::ptrdiff_t>((static_cast<std::size_t>(sr) * width +
                                                                static_cast<std::size_t>(sc)) *
                                                               in_ch),
                      in_ch, row + (ky * kernel + kx) * in_ch);
        }
      }
    }
  }
  const auto eidx = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
  std::vector<double> out(cells * out_ch);
  {
    ConstMap p(patches->data(), eidx(cells), eidx(patch));
    MutMap y(out.data(), eidx(cells), eidx(out_ch));
    y.noalias() = p * view(*weight.node());
    y.rowwise() += view(*bias.node()).row(0);
  }
  return make_result({cells, out_ch}, std::move(out), {input, weight, bias},
                     [patches, height, width, kernel, in_ch, patch, cells, out_ch, half, eidx](Node& self) {
                       Node& pin = parent(self, 0);
                       Node& pw = parent(self, 1);
                       Node& pb = parent(self, 2);
                       const auto g = grad_cview(self);
                       ConstMap p(patches->data(), eidx(cells), eidx(patch));
                       if (pw.requires_grad) grad_view(pw).noalias() += p.transpose() * g;
                       if (pb.requires_grad) grad_view(pb) += g.colwise().sum();
                       if (!pin.requires_grad) return;
                       RowMat dp = g * view(pw).transpose();
                       pin.ensure_grad();
                       for (std::size_t r = 0; r < height; ++r) {
                         for (std::size_t c = 0; c < width; ++c) {
                           const double* row = dp.data() + (r * width + c) * patch;
                           for (std::size_t ky = 0; ky < kernel; ++ky) {
                             const long sr = static_cast<long>(r) + static_cast<long>(ky) - half;
                             if (sr < 0 || sr >= static_cast<long>(height)) continue;
                             for (std::size_t kx = 0; kx < kernel; ++kx) {
                               const long sc = static_cast<long>(c) + static_cast<long>(kx) - half;
                               if (sc < 0 || sc >= static_cast<long>(width)) continue;
                               double* dst = pin.grad.data() +
                                             (static_cast<std::size_t>(sr) * width + static_cast<std::size_t>(sc)) * in_ch;
                               const double* src = row + (ky * kernel + kx) * in_ch;
                               for (std::size_t ch = 0; ch < in_ch; ++ch) dst[ch] += src[ch];
                             }
                           }
                         }
                       }
                     });
}

LstmState lstm_cell(const Value& x, const Value& h, const Value& c, const Value& w_x, const Value& w_h,
                    const Value& bias) {
  const std::size_t hidden = h.cols();
  const std::size_t batch = x.rows();
  if (h.rows() != batch || c.shape() != h.shape()) shape_error("lstm_cell state", h.shape(), c.shape());
  if (w_x.shape() != Shape{x.cols(), 4 * hidden}) shape_error("lstm_cell w_x", w_x.shape(), Shape{x.cols(), 4 * hidden});
  if (w_h.shape() != Shape{hidden, 4 * hidden}) shape_error("lstm_cell w_h", w_h.shape(), Shape{hidden, 4 * hidden});
  if (bias.shape() != Shape{1, 4 * hidden}) shape_error("lstm_cell bias", bias.shape(), Shape{1, 4 * hidden});

  const auto eidx = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
  // Activated gates, kept for the backward pass.
  auto gates = std::make_shared<RowMat>(eidx(batch), eidx(4 * hidden));
  gates->noalias() = view(*x.node()) * view(*w_x.node());
  gates->noalias() += view(*h.node()) * view(*w_h.node());
  gates->rowwise() += view(*bias.node()).row(0);

  std::vector<double> out(batch * 2 * hidden);
  const auto cprev = c.data();
  for (std::size_t b = 0; b < batch; ++b) {
    double* g = gates->data() + b * 4 * hidden;
    for (std::size_t j = 0; j < hidden; ++j) {
      const double i_g = g[j] = sigmoid_scalar(g[j]);
      const double f_g = g[hidden + j] = sigmoid_scalar(g[hidden + j]);
      const double c_g = g[2 * hidden + j] = std::tanh(g[2 * hidden + j]);
      const double o_g = g[3 * hidden + j] = sigmoid_scalar(g[3 * hidden + j]);
      const double c_new = f_g * cprev[b * hidden + j] + i_g * c_g;
      out[b * 2 * hidden + j] = o_g * std::tanh(c_new);
      out[b * 2 * hidden + hidden + j] = c_new;
    }
  }

  // Combined node: columns [0, hidden) hold h', [hidden, 2*hidden) hold c'.
  Value state = make_result(
      {batch, 2 * hidden}, std::move(out), {x, h, c, w_x, w_h, bias}, [gates, batch, hidden, eidx](Node& self) {
        Node& px = parent(self, 0);
        Node& ph = parent(self, 1);
        Node& pc = parent(self, 2);
        Node& pwx = parent(self, 3);
        Node& pwh = parent(self, 4);
        Node& pb = parent(self, 5);
        RowMat dz(eidx(batch), eidx(4 * hidden));
        for (std::size_t b = 0; b < batch; ++b) {
          const double* g = gates->data() + b * 4 * hidden;
          double* d = dz.data() + b * 4 * hidden;
          for (std::size_t j = 0; j < hidden; ++j) {
            const double i_g = g[j], f_g = g[hidden + j], c_g = g[2 * hidden + j], o_g = g[3 * hidden + j];
            const double c_new = self.data[b * 2 * hidden + hidden + j];
            const double tc = std::tanh(c_new);
            const double dh = self.grad[b * 2 * hidden + j];
            const double dc = self.grad[b * 2 * hidden + hidden + j] + dh * o_g * (1.0 - tc * tc);
            const double c_old = pc.data[b * hidden + j];
            d[j] = dc * c_g * i_g * (1.0 - i_g);
            d[hidden + j] = dc * c_old * f_g * (1.0 - f_g);
            d[2 * hidden + j] = dc * i_g * (1.0 - c_g * c_g);
            d[3 * hidden + j] = dh * tc * o_g * (1.0 - o_g);
            if (pc.requires_grad) {
              pc.ensure_grad();
              pc.grad[b * hidden + j] += dc * f_g;
            }
          }
        }
        if (pwx.requires_grad) grad_view(pwx).noalias() += view(px).transpose() * dz;
        if (pwh.requires_grad) grad_view(pwh).noalias() += view(ph).transpose() * dz;
        if (pb.requires_grad) grad_view(pb) += dz.colwise().sum();
        if (px.requires_grad) grad_view(px).noalias() += dz * view(pwx).transpose();
        if (ph.requires_grad) grad_view(ph).noalias() += dz * view(pwh).transpose();
      });
  return {slice_cols(state, 0, hidden), slice_cols(state, hidden, 2 * hidden)};
}

Value dropout(const Value& a, double rate, bool train, Rng& rng) {
  if (!train || rate <= 0.0) return a;
  if (rate >= 1.0) throw Error(ErrorKind::invalid_argument, "dropout rate must be < 1");
  const double keep = 1.0 - rate;
  std::vector<double> mask(a.size());
  for (double& m : mask) m = rng.uniform() < keep ? 1.0 / keep : 0.0;
  return mul(a, Value::constant(a.shape(), std::move(mask)));
}

Value cross_entropy(const Value& logits, const std::vector<std::size_t>& targets) {
  if (targets.size() != logits.rows())
    throw Error(ErrorKind::length_mismatch, std::to_string(targets.size()) + " targets for logits " +
                                                logits.shape().str());
  const std::size_t cols = logits.cols();
  const auto x = logits.data();
  auto probs = std::make_shared<std::vector<double>>(logits.size());
  double loss = 0.0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    if (targets[r] >= cols)
      throw Error(ErrorKind::invalid_argument, "target " + std::to_string(targets[r]) + " >= " + std::to_string(cols));
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, x[r * cols + c]);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += ((*probs)[r * cols + c] = std::exp(x[r * cols + c] - mx));
    for (std::size_t c = 0; c < cols; ++c) (*probs)[r * cols + c] /= z;
    loss -= x[r * cols + targets[r]] - mx - std::log(z);
  }
  const double n = static_cast<double>(logits.rows());
  return make_result({1, 1}, {loss / n}, {logits}, [probs, targets, cols, n](Node& self) {
    Node& pl = parent(self, 0);
    pl.ensure_grad();
    const double g = self.grad[0] / n;
    for (std::size_t r = 0; r < targets.size(); ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const double onehot = c == targets[r] ? 1.0 : 0.0;
        pl.grad[r * cols + c] += g * ((*probs)[r * cols + c] - onehot);
      }
    }
  });
}

// ---- parameters -------------------------------------------------------------

Value ParameterStore::add(const std::string& name, Shape shape, std::vector<double> data) {
  if (find(name)) throw Error(ErrorKind::invalid_argument, "duplicate parameter name '" + name + "'");
  Value v = Value::leaf(shape, std::move(data), true);
  params_.push_back({name, v});
  return v;
}

Value ParameterStore::add_uniform(const std::string& name, Shape shape, double bound, Rng& rng) {
  std::vector<double> data(shape.size());
  for (double& x : data) x = rng.uniform(-bound, bound);
  return add(name, shape, std::move(data));
}

Value ParameterStore::add_zeros(const std::string& name, Shape shape) {
  return add(name, shape, std::vector<double>(shape.size(), 0.0));
}

Value ParameterStore::add_weight(const std::string& name, Shape shape, Rng& rng) {
  return add_uniform(name, shape, 1.0 / std::sqrt(static_cast<double>(shape.rows)), rng);
}

const Parameter* ParameterStore::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

Value ParameterStore::get(const std::string& name) const {
  const Parameter* p = find(name);
  if (!p) throw Error(ErrorKind::invalid_argument, "no parameter named '" + name + "'");
  return p->value;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

Adam::Adam(const ParameterStore& store, AdamConfig config) : config_(config) {
  for (const auto& p : store.all()) {
    params_.push_back(p.value);
    m_.emplace_back(p.value.size(), 0.0);
    v_.emplace_back(p.value.size(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto data = params_[k].mutable_data();
    const auto grad = params_[k].grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = grad.empty() ? 0.0 : grad[i];
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
      data[i] -= config_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + config_.eps);
    }
  }
}

GradCheckResult grad_check(const std::function<Value()>& loss, const std::vector<Parameter>& params, double eps,
                           std::size_t max_coordinates, Rng& rng, double floor) {
  for (auto p : params) p.value.zero_grad();
  loss().backward();
  std::vector<std::vector<double>> analytic;
  std::size_t total = 0;
  for (const auto& p : params) {
    const auto g = p.value.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(p.value.size(), 0.0);
    total += p.value.size();
  }

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  if (total <= max_coordinates) {
    for (std::size_t k = 0; k < params.size(); ++k)
      for (std::size_t i = 0; i < params[k].value.size(); ++i) coords.emplace_back(k, i);
  } else {
    for (std::size_t n = 0; n < max_coordinates; ++n) {
      std::size_t flat = rng.below(total);
      std::size_t k = 0;
      while (flat >= params[k].value.size()) flat -= params[k].value.size(), ++k;
      coords.emplace_back(k, flat);
    }
  }

  GradCheckResult result;
  NoGradGuard no_grad;
  for (const auto& [k, i] : coords) {
    Value v = params[k].value;
    double& x = v.mutable_data()[i];
    const double saved = x;
    x = saved + eps;
    const double up = loss().item();
    x = saved - eps;
    const double down = loss().item();
    x = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double a = analytic[k][i];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
    if (result.coordinates == 0 || rel > result.max_relative_error) {
      result.max_relative_error = rel;
      result.worst = params[k].name + "[" + std::to_string(i) + "]";
    }
    ++result.coordinates;
  }
  return result;
}

}  // namespace thinkact::diff
