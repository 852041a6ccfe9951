#include "thinkact/gradcheck.hpp"

#include <functional>

#include "thinkact/dataset.hpp"
#include "thinkact/trainer.hpp"

namespace thinkact {

using diff::Value;

namespace {

std::vector<double> random_values(Rng& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Random values bounded away from zero, so relu has no kink nearby.
std::vector<double> off_zero(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.1, 1.0);
  return v;
}

struct Harness {
  Rng rng;
  double eps;
  std::vector<NamedCheck> out;

  Value param(diff::Shape s, double lo = -1.0, double hi = 1.0) {
    return Value::leaf(s, random_values(rng, s.size(), lo, hi), true);
  }

  // sum(f(inputs) * R) for a fixed random R.
  void check(const std::string& name, const std::vector<Value>& inputs, const std::function<Value()>& f) {
    const Value probe = f();
    const Value weights = Value::constant(probe.shape(), random_values(rng, probe.size(), -1.0, 1.0));
    std::vector<diff::Parameter> params;
    for (std::size_t i = 0; i < inputs.size(); ++i) params.push_back({name + ".in" + std::to_string(i), inputs[i]});
    Rng pick(rng.next_u64());
    auto loss = [&]() { return diff::sum(diff::mul(f(), weights)); };
    out.push_back({name, diff::grad_check(loss, params, eps, 1000, pick)});
  }
};

}  // namespace

std::vector<NamedCheck> check_primitives(double eps, std::uint64_t seed) {
  Harness h{Rng(seed), eps, {}};
  using namespace diff;

  {
    Value a = h.param({3, 4}), b = h.param({4, 2});
    h.check("matmul", {a, b}, [=]() { return matmul(a, b); });
    h.check("transpose", {a}, [=]() { return transpose(a); });
  }
  {
    Value a = h.param({3, 4}), same = h.param({3, 4}), row = h.param({1, 4}), col = h.param({3, 1}),
          sc = h.param({1, 1});
    h.check("add", {a, same}, [=]() { return add(a, same); });
    h.check("add_row", {a, row}, [=]() { return add(a, row); });
    h.check("add_col", {a, col}, [=]() { return add(a, col); });
    h.check("add_scalar", {a, sc}, [=]() { return add(a, sc); });
    h.check("sub", {a, same}, [=]() { return sub(a, same); });
    h.check("sub_row", {a, row}, [=]() { return sub(a, row); });
    h.check("mul", {a, same}, [=]() { return mul(a, same); });
    h.check("mul_col", {a, col}, [=]() { return mul(a, col); });
    h.check("mul_scalar", {a, sc}, [=]() { return mul(a, sc); });
    h.check("scale", {a}, [=]() { return scale(a, -1.7); });
  }
  {
    Value a = h.param({3, 4}, -2.0, 2.0);
    Value pos = h.param({3, 4}, 0.2, 3.0);
    Value kinkless = Value::leaf({3, 4}, off_zero(h.rng, 12), true);
    h.check("tanh", {a}, [=]() { return tanh(a); });
    h.check("sigmoid", {a}, [=]() { return sigmoid(a); });
    h.check("relu", {kinkless}, [=]() { return relu(kinkless); });
    h.check("exp", {a}, [=]() { return exp(a); });
    h.check("log", {pos}, [=]() { return log(pos); });
    h.check("softmax_rows", {a}, [=]() { return softmax(a, 1); });
    h.check("softmax_cols", {a}, [=]() { return softmax(a, 0); });
    h.check("log_softmax_rows", {a}, [=]() { return log_softmax(a, 1); });
    h.check("log_softmax_cols", {a}, [=]() { return log_softmax(a, 0); });
    h.check("sum", {a}, [=]() { return sum(a); });
    h.check("mean", {a}, [=]() { return mean(a); });
    h.check("sum_rows", {a}, [=]() { return sum_rows(a); });
    h.check("mean_rows", {a}, [=]() { return mean_rows(a); });
    h.check("slice_rows", {a}, [=]() { return slice_rows(a, 1, 3); });
    h.check("slice_cols", {a}, [=]() { return slice_cols(a, 1, 4); });
    h.check("reshape", {a}, [=]() { return reshape(a, {2, 6}); });
  }
  {
    Value a = h.param({2, 3}), b = h.param({2, 2}), c = h.param({1, 3});
    h.check("concat_cols", {a, b}, [=]() { return concat({a, b}, 1); });
    h.check("concat_rows", {a, c}, [=]() { return concat({a, c}, 0); });
  }
  {
    Value table = h.param({5, 3});
    h.check("embedding_lookup", {table}, [=]() { return embedding_lookup(table, {4, 0, 4, 2}); });
  }
  for (std::size_t k : {1, 3, 5}) {
    Value input = h.param({16, 3}), weight = h.param({k * k * 3, 2}), bias = h.param({1, 2});
    h.check("conv2d_same_k" + std::to_string(k), {input, weight, bias},
            [=]() { return conv2d_same(input, weight, bias, 4, 4, k); });
  }
  {
    Value x = h.param({1, 3}), hs = h.param({1, 2}), cs = h.param({1, 2}), wx = h.param({3, 8}), wh = h.param({2, 8}),
          b = h.param({1, 8});
    h.check("lstm_cell", {x, hs, cs, wx, wh, b}, [=]() {
      const LstmState s = lstm_cell(x, hs, cs, wx, wh, b);
      return concat({s.h, s.c}, 1);
    });
  }
  {
    Value a = h.param({3, 4});
    const std::uint64_t mask_seed = h.rng.next_u64();
    h.check("dropout", {a}, [=]() {
      Rng fixed(mask_seed);
      return dropout(a, 0.3, true, fixed);
    });
  }
  {
    Value logits = h.param({4, 5}, -2.0, 2.0);
    h.check("cross_entropy", {logits}, [=]() { return cross_entropy(logits, {0, 3, 4, 3}); });
  }
  return h.out;
}

ModelConfig gradcheck_config(Variant variant, Weighting weighting) {
  ModelConfig c;
  c.d = 4;
  c.embedding_dim = 4;
  c.encoder_hidden = 5;
  c.decoder_hidden = 5;
  c.cnn_channels = 3;
  c.kernels = {1, 3, 3};
  c.variant = variant;
  c.weighting = weighting;
  c.aux_weight = 0.3;
  return c;
}

diff::GradCheckResult check_model(const ModelConfig& config, double eps, std::size_t coordinates, std::uint64_t seed) {
  Rng rng(seed);
  Model model(config, rng.next_u64());
  for (const auto& p : model.parameters().all()) {
    Value v = p.value;
    for (double& x : v.mutable_data()) x = rng.uniform(-0.5, 0.5);
  }
  const std::vector<Example> examples =
      generate_examples(rng, GeneratorConfig{config.d, 2, std::min(8, config.d * config.d - 1)},
                        SplitConstraints{SplitKind::random, Phase::train}, 1);
  const PreparedExample ex = prepare(examples.front(), Vocabulary::commands());
  auto loss = [&]() {
    Rng unused(0);
    ForwardResult f = model.forward(ex, Mode::eval, unused);
    return total_loss(f.logits, ex.gold, f.target, ex.target, config.aux_weight).total;
  };
  return diff::grad_check(loss, model.parameters().all(), eps, coordinates, rng);
}

}  // namespace thinkact
