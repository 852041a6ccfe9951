#include <cmath>
#include <filesystem>
#include <cstring>
#include <fstream>

#include "doctest.h"
#include "thinkact/checkpoint.hpp"
#include "thinkact/diffcore.hpp"
#include "thinkact/error.hpp"
#include "thinkact/gradcheck.hpp"

using namespace thinkact;
using namespace thinkact::diff;

namespace {

Value random_leaf(Rng& rng, diff::Shape s, bool grad = true) {
  std::vector<double> v(s.size());
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return Value::leaf(s, std::move(v), grad);
}

double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<double> copy(std::span<const double> s) { return {s.begin(), s.end()}; }

}  // namespace

TEST_SUITE("diffcore") {
  TEST_CASE("softmax of equal logits is uniform") {
    const auto s = softmax(Value::constant({1, 3}, 0.0));
    for (double v : s.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  }

  TEST_CASE("log_softmax is non-positive and exp-sums to one along either axis") {
    Rng rng(1);
    const auto x = scale(random_leaf(rng, {4, 7}), 10.0);
    const auto rows = log_softmax(x, 1);
    for (std::size_t r = 0; r < 4; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < 7; ++c) {
        CHECK(rows.at(r, c) <= 0.0);
        total += std::exp(rows.at(r, c));
      }
      CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
    const auto cols = softmax(x, 0);
    for (std::size_t c = 0; c < 7; ++c) {
      double total = 0.0;
      for (std::size_t r = 0; r < 4; ++r) total += cols.at(r, c);
      CHECK(std::abs(total - 1.0) < 1e-6);
    }
  }

  TEST_CASE("matmul agrees with a naive triple loop") {
    Rng rng(2);
    const auto a = random_leaf(rng, {3, 5});
    const auto b = random_leaf(rng, {5, 4});
    const auto c = matmul(a, b);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        double ref = 0.0;
        for (std::size_t k = 0; k < 5; ++k) ref += a.at(i, k) * b.at(k, j);
        CHECK(c.at(i, j) == doctest::Approx(ref).epsilon(1e-14));
      }
  }

  TEST_CASE("conv2d_same keeps the spatial shape and matches a direct loop") {
    Rng rng(3);
    const std::size_t d = 6, in = 3, out = 2;
    const auto x = random_leaf(rng, {d * d, in});
    for (std::size_t k : {1u, 3u, 5u, 7u}) {
      const auto w = random_leaf(rng, {k * k * in, out});
      const auto b = random_leaf(rng, {1, out});
      const auto y = conv2d_same(x, w, b, d, d, k);
      CHECK(y.shape() == diff::Shape{d * d, out});
      const int half = static_cast<int>(k / 2);
      for (int r = 0; r < static_cast<int>(d); ++r)
        for (int c = 0; c < static_cast<int>(d); ++c)
          for (std::size_t o = 0; o < out; ++o) {
            double ref = b.at(0, o);
            for (int kr = 0; kr < static_cast<int>(k); ++kr)
              for (int kc = 0; kc < static_cast<int>(k); ++kc) {
                const int rr = r + kr - half, cc = c + kc - half;
                if (rr < 0 || cc < 0 || rr >= static_cast<int>(d) || cc >= static_cast<int>(d)) continue;
                for (std::size_t i = 0; i < in; ++i)
                  ref += x.at(static_cast<std::size_t>(rr) * d + static_cast<std::size_t>(cc), i) *
                         w.at((static_cast<std::size_t>(kr) * k + static_cast<std::size_t>(kc)) * in + i, o);
              }
            CHECK(y.at(static_cast<std::size_t>(r) * d + static_cast<std::size_t>(c), o) ==
                  doctest::Approx(ref).epsilon(1e-12));
          }
    }
    CHECK_THROWS_AS(conv2d_same(x, random_leaf(rng, {4 * in, out}), random_leaf(rng, {1, out}), d, d, 2), Error);
  }

  TEST_CASE("lstm_cell matches the gate equations") {
    Rng rng(4);
    const std::size_t in = 3, hid = 2;
    const auto x = random_leaf(rng, {1, in});
    const auto h = random_leaf(rng, {1, hid});
    const auto c = random_leaf(rng, {1, hid});
    const auto wx = random_leaf(rng, {in, 4 * hid});
    const auto wh = random_leaf(rng, {hid, 4 * hid});
    const auto bias = random_leaf(rng, {1, 4 * hid});
    const auto out = lstm_cell(x, h, c, wx, wh, bias);
    for (std::size_t j = 0; j < hid; ++j) {
      auto pre = [&](std::size_t gate) {
        const std::size_t col = gate * hid + j;
        double v = bias.at(0, col);
        for (std::size_t k = 0; k < in; ++k) v += x.at(0, k) * wx.at(k, col);
        for (std::size_t k = 0; k < hid; ++k) v += h.at(0, k) * wh.at(k, col);
        return v;
      };
      const double i = sigmoid_ref(pre(0)), f = sigmoid_ref(pre(1)), g = std::tanh(pre(2)), o = sigmoid_ref(pre(3));
      const double c_new = f * c.at(0, j) + i * g;
      CHECK(out.c.at(0, j) == doctest::Approx(c_new).epsilon(1e-14));
      CHECK(out.h.at(0, j) == doctest::Approx(o * std::tanh(c_new)).epsilon(1e-14));
    }
  }

  TEST_CASE("cross_entropy matches a scalar recomputation") {
    Rng rng(5);
    const auto logits = random_leaf(rng, {3, 4});
    const std::vector<std::size_t> t{2, 0, 3};
    double ref = 0.0;
    for (std::size_t r = 0; r < 3; ++r) {
      double z = 0.0;
      for (std::size_t c = 0; c < 4; ++c) z += std::exp(logits.at(r, c));
      ref += -(logits.at(r, t[r]) - std::log(z));
    }
    CHECK(cross_entropy(logits, t).item() == doctest::Approx(ref / 3.0).epsilon(1e-14));
    CHECK_THROWS_AS(cross_entropy(logits, {1, 2}), Error);
    CHECK_THROWS_AS(cross_entropy(logits, {1, 2, 4}), Error);
  }

  TEST_CASE("shape mismatch names both shapes") {
    Rng rng(6);
    try {
      matmul(random_leaf(rng, {2, 3}), random_leaf(rng, {4, 5}));
      FAIL("expected shape mismatch");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::shape_mismatch);
      const std::string msg = e.what();
      CHECK(msg.find(diff::Shape{2, 3}.str()) != std::string::npos);
      CHECK(msg.find(diff::Shape{4, 5}.str()) != std::string::npos);
    }
    CHECK_THROWS_AS(add(random_leaf(rng, {2, 3}), random_leaf(rng, {3, 2})), Error);
    CHECK_THROWS_AS(concat({random_leaf(rng, {2, 3}), random_leaf(rng, {3, 2})}, 0), Error);
  }

  TEST_CASE("embedding lookup selects rows and rejects unknown indices") {
    Rng rng(7);
    const auto table = random_leaf(rng, {5, 3});
    const auto rows = embedding_lookup(table, {4, 0, 4});
    CHECK(rows.at(0, 1) == table.at(4, 1));
    CHECK(rows.at(1, 2) == table.at(0, 2));
    CHECK(rows.at(2, 0) == table.at(4, 0));
    CHECK_THROWS_AS(embedding_lookup(table, {5}), Error);
  }

  TEST_CASE("quadratic grad check") {
    Rng rng(8);
    ParameterStore store;
    const auto theta = store.add_uniform("theta", {3, 4}, 1.0, rng);
    const auto result = grad_check([&] { return sum(theta * theta); }, store.all(), 1e-5, 12, rng);
    CHECK(result.max_relative_error < 1e-8);
    store.zero_grad();
    sum(theta * theta).backward();
    for (std::size_t i = 0; i < theta.size(); ++i) CHECK(theta.grad()[i] == doctest::Approx(2.0 * theta.data()[i]));
  }

  TEST_CASE("lstm step grad check") {
    Rng rng(9);
    ParameterStore store;
    const auto wx = store.add_weight("w_x", {3, 8}, rng);
    const auto wh = store.add_weight("w_h", {2, 8}, rng);
    const auto b = store.add_uniform("bias", {1, 8}, 0.5, rng);
    const auto x = random_leaf(rng, {1, 3}, false);
    const auto h = random_leaf(rng, {1, 2}, false);
    const auto c = random_leaf(rng, {1, 2}, false);
    const auto proj = random_leaf(rng, {1, 2}, false);
    const auto loss = [&] {
      const auto s = lstm_cell(x, h, c, wx, wh, b);
      return sum(mul(s.h, proj)) + sum(mul(s.c, proj));
    };
    CHECK(grad_check(loss, store.all(), 1e-5, 40, rng).max_relative_error < 1e-4);
  }

  TEST_CASE("every primitive passes a finite-difference check") {
    for (const auto& check : check_primitives(1e-5, 13)) {
      INFO(check.name);
      CHECK(check.result.max_relative_error < 1e-6);
    }
  }

  TEST_CASE("unused parameters get exactly zero gradient") {
    Rng rng(10);
    ParameterStore store;
    const auto used = store.add_uniform("used", {2, 2}, 1.0, rng);
    const auto unused = store.add_uniform("unused", {2, 2}, 1.0, rng);
    sum(tanh(used)).backward();
    auto g = unused.grad();
    for (std::size_t i = 0; i < unused.size(); ++i) CHECK((g.empty() ? 0.0 : g[i]) == 0.0);
  }

  TEST_CASE("two backward passes double the gradient") {
    Rng rng(11);
    ParameterStore store;
    const auto w = store.add_uniform("w", {3, 3}, 1.0, rng);
    const auto x = random_leaf(rng, {2, 3}, false);
    const auto loss = sum(sigmoid(matmul(x, w)));
    loss.backward();
    const auto once = copy(w.grad());
    loss.backward();
    for (std::size_t i = 0; i < once.size(); ++i) CHECK(w.grad()[i] == 2.0 * once[i]);
    store.zero_grad();
    for (double v : w.grad()) CHECK(v == 0.0);
  }

  TEST_CASE("no-grad guard records no graph") {
    Rng rng(12);
    const auto w = random_leaf(rng, {2, 2});
    {
      NoGradGuard guard;
      CHECK_FALSE(grad_enabled());
      const auto y = tanh(w);
      CHECK(y.node()->parents.empty());
    }
    CHECK(grad_enabled());
    CHECK_FALSE(tanh(w).node()->parents.empty());
  }

  TEST_CASE("dropout is identity in eval and inverted-scaled in train") {
    Rng rng(13);
    const auto x = Value::constant({200, 500}, 1.0);
    const auto eval = dropout(x, 0.5, false, rng);
    for (double v : eval.data()) CHECK(v == 1.0);
    const auto train = dropout(x, 0.5, true, rng);
    double total = 0.0;
    for (double v : train.data()) {
      CHECK((v == 0.0 || v == 2.0));
      total += v;
    }
    CHECK(std::abs(total / static_cast<double>(train.size()) - 1.0) < 0.02);
    const auto none = dropout(x, 0.0, true, rng);
    for (double v : none.data()) CHECK(v == 1.0);
  }

  TEST_CASE("parameter store rules") {
    Rng rng(14);
    ParameterStore store;
    const auto w = store.add_weight("w", {16, 3}, rng);
    for (double v : w.data()) CHECK(std::abs(v) <= 0.25);
    const auto b = store.add_zeros("b", {1, 3});
    for (double v : b.data()) CHECK(v == 0.0);
    CHECK_THROWS_AS(store.add_zeros("w", {1, 1}), Error);
    CHECK(store.scalar_count() == 51u);
    CHECK(store.find("b") != nullptr);
    CHECK(store.find("missing") == nullptr);
  }

  TEST_CASE("adam with zero learning rate leaves parameters unchanged") {
    Rng rng(15);
    ParameterStore store;
    const auto w = store.add_uniform("w", {3, 3}, 1.0, rng);
    const auto before = copy(w.data());
    Adam adam(store, AdamConfig{0.0});
    for (int i = 0; i < 5; ++i) {
      store.zero_grad();
      sum(w * w).backward();
      adam.step();
    }
    CHECK(copy(w.data()) == before);
  }

  TEST_CASE("adam first step matches the bias-corrected update") {
    Rng rng(16);
    ParameterStore store;
    const auto w = store.add_uniform("w", {2, 3}, 1.0, rng);
    const auto before = copy(w.data());
    sum(scale(w * w, 0.5)).backward();
    Adam adam(store, AdamConfig{0.01});
    adam.step();
    for (std::size_t i = 0; i < before.size(); ++i) {
      const double g = before[i];
      CHECK(w.data()[i] == doctest::Approx(before[i] - 0.01 * g / (std::abs(g) + 1e-8)).epsilon(1e-12));
    }
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("round trip restores identical values") {
    Rng rng(20);
    ParameterStore a;
    a.add_uniform("x", {3, 4}, 1.0, rng);
    a.add_uniform("y", {1, 5}, 1.0, rng);
    const auto dir = std::filesystem::temp_directory_path() / "thinkact_ckpt";
    std::filesystem::create_directories(dir);
    save_checkpoint(dir / "model.json", a, 42, Json{{"tag", "t"}});
    ParameterStore b;
    b.add_zeros("x", {3, 4});
    b.add_zeros("y", {1, 5});
    const auto info = load_checkpoint(dir / "model.json", b);
    CHECK(info.global_step == 42u);
    CHECK(info.meta["tag"] == "t");
    for (std::size_t i = 0; i < 2; ++i) CHECK(copy(a.all()[i].value.data()) == copy(b.all()[i].value.data()));

    const auto manifest = read_manifest(dir / "model.json");
    CHECK(manifest["dtype"] == "float64");
    CHECK(manifest["tensors"][1]["name"] == "y");
    CHECK(manifest["tensors"][1]["offset"] == 96);

    std::ifstream bin(dir / "model.bin", std::ios::binary);
    unsigned char bytes[8];
    bin.read(reinterpret_cast<char*>(bytes), 8);
    std::uint64_t bits = 0;
    for (int i = 7; i >= 0; --i) bits = (bits << 8) | bytes[i];
    double first;
    std::memcpy(&first, &bits, 8);
    CHECK(first == a.all()[0].value.data()[0]);
  }

  TEST_CASE("shape mismatch on load") {
    Rng rng(21);
    ParameterStore a;
    a.add_uniform("x", {3, 4}, 1.0, rng);
    const auto dir = std::filesystem::temp_directory_path() / "thinkact_ckpt_bad";
    std::filesystem::create_directories(dir);
    save_checkpoint(dir / "model.json", a, 1);
    ParameterStore b;
    b.add_zeros("x", {4, 3});
    try {
      load_checkpoint(dir / "model.json", b);
      FAIL("expected shape mismatch");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::shape_mismatch);
    }
  }
}
