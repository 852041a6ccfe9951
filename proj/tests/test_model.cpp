#include <cmath>

#include "doctest.h"
#include "support.hpp"
#include "thinkact/error.hpp"
#include "thinkact/model.hpp"
#include "thinkact/trainer.hpp"

using namespace thinkact;
using diff::Value;
using testing::values;

namespace {

ModelConfig small(Variant v, Weighting w) {
  ModelConfig c = ModelConfig::micro();
  c.variant = v;
  c.weighting = w;
  return c;
}

std::vector<double> eval_logits(const Model& m, const PreparedExample& ex) {
  Rng rng(0);
  return values(m.forward(ex, Mode::eval, rng).logits);
}

void perturb(Model& m, const std::string& name, double delta) {
  auto v = m.parameters().get(name);
  for (auto& x : v.mutable_data()) x += delta;
}

double row_sum(const Value& v) {
  double s = 0.0;
  for (double x : v.data()) s += x;
  return s;
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("command encoder shapes and determinism") {
    const Model m(small(Variant::world, Weighting::on), 1);
    Rng rng(0);
    const auto one = m.encode_command({3}, Mode::eval, rng);
    CHECK(one.states.rows() == 1u);
    CHECK(one.states.cols() == 2 * m.config().encoder_hidden);
    CHECK(one.summary.cols() == m.config().encoder_hidden);
    const std::vector<std::size_t> tokens{3, 4, 6, 7, 9, 13};
    const auto a = m.encode_command(tokens, Mode::eval, rng);
    const auto b = m.encode_command(tokens, Mode::eval, rng);
    CHECK(values(a.states) == values(b.states));
    CHECK(values(a.summary) == values(b.summary));
    auto swapped = tokens;
    std::swap(swapped[2], swapped[3]);
    const auto c = m.encode_command(swapped, Mode::eval, rng);
    for (std::size_t row : {2u, 3u}) {
      bool differs = false;
      for (std::size_t k = 0; k < a.states.cols(); ++k) differs |= a.states.at(row, k) != c.states.at(row, k);
      CHECK(differs);
    }
    CHECK_THROWS_AS(m.encode_command({99}, Mode::eval, rng), Error);
  }

  TEST_CASE("world encoder shape follows the feature formula") {
    ModelConfig cfg = ModelConfig::full();
    const Model m(cfg, 1);
    Rng rng(0);
    WorldState w = testing::make_world(6, {0, 0}, Heading::east, {{{2, 3}, {Shape::circle, Color::red, 1}}});
    const auto hs = m.encode_state(encode_world(w), Mode::eval, rng);
    CHECK(hs.rows() == 36u);
    CHECK(hs.cols() == 150u);
    GridTensor bad = encode_world(testing::make_world(4, {0, 0}, Heading::east, {}));
    CHECK_THROWS_AS(m.encode_state(bad, Mode::eval, rng), Error);
  }

  TEST_CASE("zero grid with zero biases encodes to zeros") {
    Model m(small(Variant::world, Weighting::on), 2);
    for (std::size_t i = 0; i < 3; ++i)
      for (auto& x : m.parameters().get("world.conv" + std::to_string(i) + ".bias").mutable_data()) x = 0.0;
    GridTensor g{4, std::vector<double>(4 * 4 * kCellChannels, 0.0)};
    Rng rng(0);
    for (double v : m.encode_state(g, Mode::eval, rng).data()) CHECK(v == 0.0);
  }

  TEST_CASE("translating an object permutes the kernel-1 feature rows") {
    const Model m(small(Variant::world, Weighting::on), 3);
    REQUIRE(m.config().kernels[0] == 1u);
    Rng rng(0);
    const auto a = m.encode_state(
        encode_world(testing::make_world(4, {3, 3}, Heading::east, {{{1, 1}, {Shape::square, Color::blue, 3}}})),
        Mode::eval, rng);
    const auto b = m.encode_state(
        encode_world(testing::make_world(4, {3, 3}, Heading::east, {{{1, 2}, {Shape::square, Color::blue, 3}}})),
        Mode::eval, rng);
    const std::size_t c_out = m.config().cnn_channels;
    auto perm = [](std::size_t r) -> std::size_t { return r == 5 ? 6 : r == 6 ? 5 : r; };
    for (std::size_t r = 0; r < 16; ++r)
      for (std::size_t k = 0; k < c_out; ++k) CHECK(a.at(r, k) == b.at(perm(r), k));
  }

  TEST_CASE("dot attention closed forms") {
    const auto keys = Value::constant({5, 3}, 0.7);
    const auto uniform = dot_attention(Value::constant({1, 3}, 1.0), keys);
    for (double w : uniform.weights.data()) CHECK(w == doctest::Approx(0.2).epsilon(1e-14));
    const auto aligned = dot_attention(Value::constant({1, 3}, std::vector<double>{10, 0, 0}),
                                       Value::constant({3, 3}, std::vector<double>{10, 0, 0, 0, 10, 0, 0, 0, 10}));
    CHECK(aligned.weights.at(0, 0) > 1.0 - 1e-12);
    const auto single = dot_attention(Value::constant({1, 3}, std::vector<double>{1, 2, 3}),
                                      Value::constant({1, 3}, std::vector<double>{4, 5, 6}));
    CHECK(single.weights.item() == 1.0);
    CHECK(values(single.context) == std::vector<double>{4, 5, 6});
  }

  TEST_CASE("world head sizes at full width") {
    const Model m(ModelConfig::full(), 4);
    Rng rng(0);
    const auto hs = m.encode_state(encode_world(testing::make_world(6, {0, 0}, Heading::east, {})), Mode::eval, rng);
    const auto cmd = m.encode_command({3, 4, 6, 13}, Mode::eval, rng);
    CHECK(m.aux_input_world(hs, cmd.summary).cols() == 5500u);
    const auto scores = m.predict_target_world(hs, cmd.summary);
    CHECK(scores.scores.cols() == 36u);
    double total = 0.0;
    for (double lp : scores.log_probs.data()) {
      CHECK(lp <= 0.0);
      total += std::exp(lp);
    }
    CHECK(std::abs(total - 1.0) < 1e-6);
  }

  TEST_CASE("zero world features give the linear response to the command summary") {
    const Model m(small(Variant::world, Weighting::on), 5);
    Rng rng(0);
    const auto cmd = m.encode_command({3, 4, 5, 12}, Mode::eval, rng);
    const auto zeros = Value::constant({16, m.config().world_features()}, 0.0);
    const auto scores = m.predict_target_world(zeros, cmd.summary);
    const auto w = m.parameters().get("aux.linear.weight");
    const auto b = m.parameters().get("aux.linear.bias");
    const std::size_t offset = 16 * m.config().world_features();
    for (std::size_t j = 0; j < 16; ++j) {
      double ref = b.at(0, j);
      for (std::size_t k = 0; k < m.config().encoder_hidden; ++k) ref += cmd.summary.at(0, k) * w.at(offset + k, j);
      CHECK(scores.scores.at(0, j) == doctest::Approx(ref).epsilon(1e-12));
    }
  }

  TEST_CASE("both head: single token gives the projected state") {
    const Model m(small(Variant::both, Weighting::on), 6);
    Rng rng(0);
    const auto hs = m.encode_state(
        encode_world(testing::make_world(4, {0, 0}, Heading::east, {{{2, 2}, {Shape::circle, Color::red, 2}}})),
        Mode::eval, rng);
    const auto cmd = m.encode_command({9}, Mode::eval, rng);
    const auto v = m.aux_input_both(hs, cmd.states);
    const auto pw = m.parameters().get("aux.pool.weight");
    const auto pb = m.parameters().get("aux.pool.bias");
    const std::size_t he = m.config().encoder_hidden;
    const std::size_t offset = v.cols() - he;
    for (std::size_t j = 0; j < he; ++j) {
      double ref = pb.at(0, j);
      for (std::size_t k = 0; k < cmd.states.cols(); ++k) ref += cmd.states.at(0, k) * pw.at(k, j);
      CHECK(v.at(0, offset + j) == doctest::Approx(ref).epsilon(1e-12));
    }
    for (std::size_t n : {1u, 4u, 6u}) {
      std::vector<std::size_t> tokens(n, 13);
      CHECK(m.predict_target_both(hs, m.encode_command(tokens, Mode::eval, rng).states).scores.cols() == 16u);
    }
  }

  TEST_CASE("classifier input length over a grid of widths") {
    Rng rng(0);
    for (int d : {3, 4, 6})
      for (std::size_t c_out : {2u, 5u})
        for (std::size_t he : {3u, 7u})
          for (Variant variant : {Variant::world, Variant::both}) {
            ModelConfig cfg = small(variant, Weighting::on);
            cfg.d = d;
            cfg.cnn_channels = c_out;
            cfg.encoder_hidden = he;
            const Model m(cfg, 7);
            const auto hs =
                m.encode_state(encode_world(testing::make_world(d, {0, 0}, Heading::east, {})), Mode::eval, rng);
            const auto cmd = m.encode_command({3, 4, 5, 12}, Mode::eval, rng);
            const auto v = variant == Variant::world ? m.aux_input_world(hs, cmd.summary)
                                                     : m.aux_input_both(hs, cmd.states);
            CHECK(v.cols() == static_cast<std::size_t>(d * d) * 3 * c_out + he);
            CHECK(v.cols() == cfg.aux_input_size());
          }
  }

  TEST_CASE("baseline target scores from decoder attention") {
    const auto uniform = predict_target_baseline_aux({Value::constant({1, 16}, 1.0 / 16.0)});
    for (double lp : uniform.log_probs.data()) CHECK(lp == doctest::Approx(std::log(1.0 / 16.0)));
    const auto two = predict_target_baseline_aux(
        {Value::constant({1, 4}, std::vector<double>{0.1, 0.2, 0.3, 0.4}),
         Value::constant({1, 4}, std::vector<double>{0.25, 0.25, 0.25, 0.25})});
    CHECK(row_sum(two.scores) == doctest::Approx(2.0));
    std::vector<double> spike(16, 0.01);
    spike[11] = 0.85;
    const auto s = predict_target_baseline_aux(
        {Value::constant({1, 16}, spike), Value::constant({1, 16}, spike), Value::constant({1, 16}, spike)});
    std::size_t best = 0;
    for (std::size_t j = 1; j < 16; ++j)
      if (s.log_probs.at(0, j) > s.log_probs.at(0, best)) best = j;
    CHECK(best == 11u);
    try {
      predict_target_baseline_aux({});
      FAIL("expected called-before-decode");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::called_before_decode);
    }
  }

  TEST_CASE("uniform log-probabilities scale every row by log(1/d^2)") {
    Rng rng(1);
    std::vector<double> feats(16 * 3);
    for (auto& x : feats) x = rng.uniform(-1.0, 1.0);
    const auto hs = Value::constant({16, 3}, feats);
    const auto lp = diff::log_softmax(Value::constant({1, 16}, 0.0));
    const auto weighted = weight_world_encodings(hs, lp);
    for (std::size_t r = 0; r < 16; ++r)
      for (std::size_t k = 0; k < 3; ++k)
        CHECK(weighted.at(r, k) == doctest::Approx(std::log(1.0 / 16.0) * hs.at(r, k)).epsilon(1e-14));
  }

  TEST_CASE("ablated weighting leaves decoder memory identical to the encoder output") {
    const auto ex = testing::micro_examples(1, 3).front();
    const Model m(small(Variant::world, Weighting::ablated), 8);
    Rng rng(0);
    const auto hs = m.encode_state(ex.grid, Mode::eval, rng);
    const auto cmd = m.encode_command(ex.command, Mode::eval, rng);
    ModelConfig base = small(Variant::baseline_aux, Weighting::ablated);
    const Model baseline(base, 8);
    CHECK(values(baseline.encode_state(ex.grid, Mode::eval, rng)) == values(hs));
    // decoder logits do not depend on the aux classifier when ablated
    Model ablated(small(Variant::world, Weighting::ablated), 8);
    const auto before = eval_logits(ablated, ex);
    perturb(ablated, "aux.linear.weight", 0.3);
    perturb(ablated, "aux.linear.bias", -0.2);
    CHECK(eval_logits(ablated, ex) == before);
    Model weighted(small(Variant::world, Weighting::on), 8);
    const auto before_on = eval_logits(weighted, ex);
    perturb(weighted, "aux.linear.weight", 0.3);
    CHECK(eval_logits(weighted, ex) != before_on);
  }

  TEST_CASE("weighting on and ablated differ on shared parameters") {
    const auto ex = testing::micro_examples(1, 4).front();
    for (Variant v : {Variant::world, Variant::both}) {
      const Model on(small(v, Weighting::on), 9);
      const Model off(small(v, Weighting::ablated), 9);
      REQUIRE(on.parameters().scalar_count() == off.parameters().scalar_count());
      CHECK(eval_logits(on, ex) != eval_logits(off, ex));
    }
  }

  TEST_CASE("decoder steps normalize both attentions and cover the gold length") {
    const auto examples = testing::micro_examples(5, 5);
    for (Variant v : {Variant::baseline_no_aux, Variant::baseline_aux, Variant::world, Variant::both}) {
      const Model m(small(v, v == Variant::world || v == Variant::both ? Weighting::on : Weighting::ablated), 10);
      for (const auto& ex : examples) {
        Rng rng(0);
        const auto out = m.forward(ex, Mode::train, rng);
        CHECK(out.logits.rows() == ex.gold.size());
        CHECK(out.logits.cols() == kOutputTokens);
        REQUIRE(out.world_attention.size() == ex.gold.size());
        for (std::size_t j = 0; j < ex.gold.size(); ++j) {
          CHECK(std::abs(row_sum(out.world_attention[j]) - 1.0) < 1e-6);
          CHECK(std::abs(row_sum(out.command_attention[j]) - 1.0) < 1e-6);
        }
        CHECK(out.target.has_value() == (v != Variant::baseline_no_aux));
        if (out.target) {
          double total = 0.0;
          for (double lp : out.target->log_probs.data()) total += std::exp(lp);
          CHECK(std::abs(total - 1.0) < 1e-6);
        }
      }
    }
  }

  TEST_CASE("baseline without aux has no aux parameters") {
    const Model m(small(Variant::baseline_no_aux, Weighting::ablated), 11);
    for (const auto& p : m.parameters().all()) CHECK(p.name.rfind("aux.", 0) != 0);
    const Model w(small(Variant::world, Weighting::on), 11);
    CHECK(w.parameters().find("aux.linear.weight") != nullptr);
  }

  TEST_CASE("aux gradients are nonzero for world and both") {
    const auto ex = testing::micro_examples(1, 6).front();
    for (Variant v : {Variant::world, Variant::both}) {
      Model m(small(v, Weighting::on), 12);
      Rng rng(0);
      const auto out = m.forward(ex, Mode::train, rng);
      total_loss(out.logits, ex.gold, out.target, ex.target, 0.3).total.backward();
      double norm = 0.0;
      for (double g : m.parameters().get("aux.linear.weight").grad()) norm += g * g;
      CHECK(norm > 0.0);
    }
  }

  TEST_CASE("eval mode is deterministic even with dropout configured") {
    ModelConfig cfg = small(Variant::both, Weighting::on);
    cfg.encoder_dropout = cfg.decoder_dropout = cfg.cnn_dropout = 0.3;
    const Model m(cfg, 13);
    const auto ex = testing::micro_examples(1, 7).front();
    Rng a(1), b(2);
    CHECK(values(m.forward(ex, Mode::eval, a).logits) == values(m.forward(ex, Mode::eval, b).logits));
    const auto g1 = m.greedy_decode(ex, 20);
    const auto g2 = m.greedy_decode(ex, 20);
    CHECK(g1.tokens == g2.tokens);
    CHECK(g1.tokens.size() <= 20u);
  }

  TEST_CASE("config validation") {
    ModelConfig c = small(Variant::baseline_aux, Weighting::on);
    CHECK_THROWS_AS(c.validate(), Error);
    c = small(Variant::world, Weighting::on);
    CHECK_NOTHROW(c.validate());
    c.kernels = {1, 4, 7};
    CHECK_THROWS_AS(c.validate(), Error);
    c = small(Variant::world, Weighting::on);
    c.aux_weight = 1.5;
    CHECK_THROWS_AS(c.validate(), Error);
    c = small(Variant::both, Weighting::ablated);
    CHECK(ModelConfig::from_json(c.to_json()).to_json() == c.to_json());
    CHECK(parse_variant("baseline-aux") == Variant::baseline_aux);
    CHECK(parse_weighting("ablated") == Weighting::ablated);
    CHECK_FALSE(parse_variant("gru").has_value());
  }
}
