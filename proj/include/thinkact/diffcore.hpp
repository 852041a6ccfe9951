#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "thinkact/rng.hpp"

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// Every tensor is 2-D (rows x cols); vectors are 1 x n rows. Operations record
// their inputs and a backward rule on the node they create, and
// Value::backward() walks the graph in reverse topological order. Leaf nodes
// that require gradients (parameters) accumulate across backward calls; every
// other node's gradient is recomputed from scratch on each call.
namespace thinkact::diff {

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const noexcept { return rows * cols; }
  std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;
};

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until the first backward pass reaches the node
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  bool requires_grad = false;
  bool is_leaf = true;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

class Value {
 public:
  Value() = default;
  explicit Value(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Value constant(Shape shape, std::vector<double> data);
  static Value constant(Shape shape, double fill);
  static Value leaf(Shape shape, std::vector<double> data, bool requires_grad);
  static Value scalar(double v) { return constant({1, 1}, std::vector<double>{v}); }

  explicit operator bool() const noexcept { return static_cast<bool>(node_); }

  const Shape& shape() const { return node_->shape; }
  std::size_t rows() const { return node_->shape.rows; }
  std::size_t cols() const { return node_->shape.cols; }
  std::size_t size() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  std::span<double> mutable_data() { return node_->data; }
  // Empty span when no gradient has been accumulated yet.
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

  double item() const;
  double at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }
  bool requires_grad() const { return node_->requires_grad; }

  // Seeds d(self)/d(self) = 1 elementwise and propagates to every ancestor.
  void backward() const;

  Node* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const noexcept { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// While alive, new nodes record no parents or backward rules on this thread.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled() noexcept;

// ---- primitives -----------------------------------------------------------
// Binary elementwise ops accept `b` with the same shape as `a`, a 1 x cols
// row, a rows x 1 column, or a 1 x 1 scalar, broadcast over `a`.

Value matmul(const Value& a, const Value& b);
Value transpose(const Value& a);
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value scale(const Value& a, double factor);

Value tanh(const Value& a);
Value sigmoid(const Value& a);
Value relu(const Value& a);
Value exp(const Value& a);
Value log(const Value& a);

// axis 1 normalizes each row, axis 0 each column.
Value softmax(const Value& a, int axis = 1);
Value log_softmax(const Value& a, int axis = 1);

Value sum(const Value& a);
Value mean(const Value& a);
Value sum_rows(const Value& a);   // 1 x cols
Value mean_rows(const Value& a);  // 1 x cols

// axis 0 stacks rows, axis 1 stacks columns.
Value concat(const std::vector<Value>& parts, int axis);
Value slice_rows(const Value& a, std::size_t begin, std::size_t end);
Value slice_cols(const Value& a, std::size_t begin, std::size_t end);
Value reshape(const Value& a, Shape shape);

// Rows of `table` selected by `indices`.
Value embedding_lookup(const Value& table, const std::vector<std::size_t>& indices);

// Same-padded 2-D convolution. `input` holds height*width cells (row-major)
// by in-channels; `weight` is (kernel*kernel*in) x out with rows ordered by
// (kernel row, kernel col, in-channel); `bias` is 1 x out. Kernel must be odd.
Value conv2d_same(const Value& input, const Value& weight, const Value& bias, std::size_t height, std::size_t width,
                  std::size_t kernel);

struct LstmState {
  Value h;
  Value c;
};

// One LSTM step. Gate order in the 4*hidden columns: input, forget, cell, output.
LstmState lstm_cell(const Value& x, const Value& h, const Value& c, const Value& w_x, const Value& w_h,
                    const Value& bias);

// Inverted dropout; identity when !train or rate == 0.
Value dropout(const Value& a, double rate, bool train, Rng& rng);

// Mean over rows of -log softmax(logits[r])[targets[r]].
Value cross_entropy(const Value& logits, const std::vector<std::size_t>& targets);

inline Value operator+(const Value& a, const Value& b) { return add(a, b); }
inline Value operator-(const Value& a, const Value& b) { return sub(a, b); }
inline Value operator*(const Value& a, const Value& b) { return mul(a, b); }

// ---- parameters -----------------------------------------------------------

struct Parameter {
  std::string name;
  Value value;
};

class ParameterStore {
 public:
  // uniform(-bound, +bound)
  Value add_uniform(const std::string& name, Shape shape, double bound, Rng& rng);
  Value add_zeros(const std::string& name, Shape shape);
  // uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) with fan_in = shape.rows.
  Value add_weight(const std::string& name, Shape shape, Rng& rng);

  const std::vector<Parameter>& all() const noexcept { return params_; }
  const Parameter* find(const std::string& name) const;
  Value get(const std::string& name) const;

  void zero_grad();
  std::size_t scalar_count() const;

 private:
  Value add(const std::string& name, Shape shape, std::vector<double> data);
  std::vector<Parameter> params_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(const ParameterStore& store, AdamConfig config);

  // Applies one update from the accumulated gradients (missing gradients count as zero).
  void step();
  std::size_t steps() const noexcept { return t_; }

 private:
  std::vector<Value> params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t t_ = 0;
};

// ---- verification ---------------------------------------------------------

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst;  // parameter name and index of the worst coordinate
};

// Compares reverse-mode gradients with central differences
// (f(x+eps) - f(x-eps)) / (2 eps) on up to `max_coordinates` coordinates drawn
// uniformly over all parameters. Relative error is
// |analytic - numeric| / max(|analytic|, |numeric|, floor).
GradCheckResult grad_check(const std::function<Value()>& loss, const std::vector<Parameter>& params, double eps,
                           std::size_t max_coordinates, Rng& rng, double floor = 1e-6);

}  // namespace thinkact::diff
