#include "thinkact/model.hpp"

#include <cmath>

#include "thinkact/error.hpp"

namespace thinkact {

using diff::Value;

std::string_view to_string(Variant v) noexcept {
  switch (v) {
    case Variant::baseline_no_aux: return "baseline_no_aux";
    case Variant::baseline_aux: return "baseline_aux";
    case Variant::world: return "world";
    case Variant::both: return "both";
  }
  return "";
}

std::string_view to_string(Weighting w) noexcept { return w == Weighting::on ? "on" : "ablated"; }

std::optional<Variant> parse_variant(std::string_view s) noexcept {
  for (Variant v : {Variant::baseline_no_aux, Variant::baseline_aux, Variant::world, Variant::both}) {
    std::string hyphen(to_string(v));
    for (char& ch : hyphen)
      if (ch == '_') ch = '-';
    if (s == to_string(v) || s == hyphen) return v;
  }
  return std::nullopt;
}

std::optional<Weighting> parse_weighting(std::string_view s) noexcept {
  if (s == "on") return Weighting::on;
  if (s == "ablated") return Weighting::ablated;
  return std::nullopt;
}

ModelConfig ModelConfig::full() { return ModelConfig{}; }

ModelConfig ModelConfig::micro() {
  ModelConfig c;
  c.d = 4;
  c.embedding_dim = 6;
  c.encoder_hidden = 25;
  c.decoder_hidden = 25;
  c.cnn_channels = 12;
  c.kernels = {1, 3, 3};
  return c;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::invalid_argument, msg); };
  if (d < 1) fail("d must be >= 1");
  if (command_vocab == 0 || embedding_dim == 0 || encoder_hidden == 0 || decoder_hidden == 0 || cnn_channels == 0)
    fail("model widths must be >= 1");
  for (std::size_t k : kernels)
    if (k % 2 == 0) fail("kernel sizes must be odd, got " + std::to_string(k));
  for (double r : {encoder_dropout, decoder_dropout, cnn_dropout})
    if (!(r >= 0.0 && r < 1.0)) fail("dropout rates must lie in [0, 1)");
  if (!(aux_weight >= 0.0 && aux_weight <= 1.0)) fail("aux_weight must lie in [0, 1]");
  if (weighting == Weighting::on && variant != Variant::world && variant != Variant::both)
    fail("weighting=on requires variant world or both, got " + std::string(to_string(variant)));
}

Json ModelConfig::to_json() const {
  return Json{{"d", d},
              {"command_vocab", command_vocab},
              {"embedding_dim", embedding_dim},
              {"encoder_hidden", encoder_hidden},
              {"decoder_hidden", decoder_hidden},
              {"cnn_channels", cnn_channels},
              {"kernels", kernels},
              {"encoder_dropout", encoder_dropout},
              {"decoder_dropout", decoder_dropout},
              {"cnn_dropout", cnn_dropout},
              {"variant", to_string(variant)},
              {"weighting", to_string(weighting)},
              {"aux_weight", aux_weight}};
}

ModelConfig ModelConfig::from_json(const Json& j, const ModelConfig& base) {
  ModelConfig c = base;
  try {
    if (!j.is_object()) throw Error(ErrorKind::parse_error, "model config must be a JSON object");
    auto take = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    take("d", c.d);
    take("command_vocab", c.command_vocab);
    take("embedding_dim", c.embedding_dim);
    take("encoder_hidden", c.encoder_hidden);
    take("decoder_hidden", c.decoder_hidden);
    take("cnn_channels", c.cnn_channels);
    take("kernels", c.kernels);
    take("encoder_dropout", c.encoder_dropout);
    take("decoder_dropout", c.decoder_dropout);
    take("cnn_dropout", c.cnn_dropout);
    take("aux_weight", c.aux_weight);
    if (j.contains("variant")) {
      const auto v = parse_variant(j.at("variant").get<std::string>());
      if (!v) throw Error(ErrorKind::parse_error, "unknown variant " + j.at("variant").dump());
      c.variant = *v;
    }
    if (j.contains("weighting")) {
      const auto w = parse_weighting(j.at("weighting").get<std::string>());
      if (!w) throw Error(ErrorKind::parse_error, "unknown weighting " + j.at("weighting").dump());
      c.weighting = *w;
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse_error, e.what());
  }
  return c;
}

ModelConfig ModelConfig::from_json(const Json& j) { return from_json(j, ModelConfig{}); }

std::size_t action_token(Action a) noexcept {
  switch (a) {
    case Action::walk: return kWalkToken;
    case Action::turn_left: return kTurnLeftToken;
    case Action::turn_right: return kTurnRightToken;
  }
  return kWalkToken;
}

Action token_action(std::size_t token) {
  switch (token) {
    case kWalkToken: return Action::walk;
    case kTurnLeftToken: return Action::turn_left;
    case kTurnRightToken: return Action::turn_right;
    default: throw Error(ErrorKind::unknown_token, "token " + std::to_string(token) + " is not an action");
  }
}

PreparedExample prepare(const Example& ex, const Vocabulary& vocab) {
  PreparedExample p;
  p.command = vocab.encode(ex.command);
  p.grid = encode_world(ex.world);
  p.target = static_cast<std::size_t>(ex.target);
  p.gold.reserve(ex.actions.size() + 1);
  for (Action a : ex.actions) p.gold.push_back(action_token(a));
  p.gold.push_back(kEosToken);
  p.referent = ex.referent;
  return p;
}

std::vector<PreparedExample> prepare_all(const std::vector<Example>& examples, const Vocabulary& vocab) {
  std::vector<PreparedExample> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(prepare(ex, vocab));
  return out;
}

AttentionResult dot_attention(const Value& query, const Value& keys) {
  if (query.rows() != 1 || query.cols() != keys.cols())
    throw Error(ErrorKind::shape_mismatch,
                "dot_attention query " + query.shape().str() + " vs keys " + keys.shape().str());
  const double scale = 1.0 / std::sqrt(static_cast<double>(keys.cols()));
  Value weights = diff::softmax(diff::scale(diff::matmul(query, diff::transpose(keys)), scale), 1);
  return {weights, diff::matmul(weights, keys)};
}

TargetScores predict_target_baseline_aux(const std::vector<Value>& world_attention) {
  if (world_attention.empty())
    throw Error(ErrorKind::called_before_decode, "baseline target scores need at least one decoder step");
  Value total = world_attention.front();
  for (std::size_t i = 1; i < world_attention.size(); ++i) total = diff::add(total, world_attention[i]);
  return {total, diff::log_softmax(total, 1)};
}

Value weight_world_encodings(const Value& world_features, const Value& log_probs) {
  if (log_probs.size() != world_features.rows())
    throw Error(ErrorKind::shape_mismatch, "log_probs " + log_probs.shape().str() + " for world features " +
                                               world_features.shape().str());
  return diff::mul(world_features, diff::reshape(log_probs, {world_features.rows(), 1}));
}

namespace {

Value linear(const Value& x, const Value& w, const Value& b) { return diff::add(diff::matmul(x, w), b); }

// Scales row i of `rows` by weights[i] (weights is 1 x rows).
Value scale_rows(const Value& rows, const Value& weights) {
  return diff::mul(rows, diff::transpose(weights));
}

}  // namespace

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const std::size_t emb = config_.embedding_dim;
  const std::size_t he = config_.encoder_hidden;
  const std::size_t hd = config_.decoder_hidden;
  const std::size_t feat = config_.world_features();
  const std::size_t cmd = 2 * he;
  auto& p = params_;

  command_embedding_ = p.add_weight("encoder.embedding", {config_.command_vocab, emb}, rng);
  auto make_lstm = [&](const std::string& prefix, std::size_t in, std::size_t hidden) {
    Lstm l{p.add_weight(prefix + ".w_x", {in, 4 * hidden}, rng), p.add_weight(prefix + ".w_h", {hidden, 4 * hidden}, rng),
           p.add_zeros(prefix + ".bias", {1, 4 * hidden})};
    // forget gate starts open
    auto bias = l.bias.mutable_data();
    std::fill(bias.begin() + static_cast<std::ptrdiff_t>(hidden), bias.begin() + static_cast<std::ptrdiff_t>(2 * hidden), 1.0);
    return l;
  };
  auto make_linear = [&](const std::string& prefix, std::size_t in, std::size_t out) {
    return Linear{p.add_weight(prefix + ".weight", {in, out}, rng), p.add_zeros(prefix + ".bias", {1, out})};
  };
  forward_lstm_ = make_lstm("encoder.forward", emb, he);
  backward_lstm_ = make_lstm("encoder.backward", emb, he);
  summary_ = make_linear("encoder.summary", cmd, he);

  for (std::size_t i = 0; i < config_.kernels.size(); ++i) {
    const std::size_t k = config_.kernels[i];
    convs_.push_back(make_linear("world.conv" + std::to_string(i), k * k * kCellChannels, config_.cnn_channels));
  }

  if (config_.variant == Variant::world || config_.variant == Variant::both) {
    aux_query_ = p.add_weight("aux.query", {he, he}, rng);
    aux_key_ = p.add_weight("aux.key", {feat, he}, rng);
    if (config_.variant == Variant::both) {
      aux_pool_query_ = p.add_weight("aux.pool_query", {feat, he}, rng);
      aux_pool_key_ = p.add_weight("aux.pool_key", {cmd, he}, rng);
      aux_pool_ = make_linear("aux.pool", cmd, he);
    }
    aux_linear_ = make_linear("aux.linear", config_.aux_input_size(), config_.cells());
  }

  action_embedding_ = p.add_weight("decoder.embedding", {kInputTokens, emb}, rng);
  init_ = make_linear("decoder.init", he + feat, hd);
  command_attention_ = Additive{p.add_weight("decoder.command_attention.query", {hd, hd}, rng),
                                p.add_weight("decoder.command_attention.key", {cmd, hd}, rng),
                                p.add_weight("decoder.command_attention.score", {hd, 1}, rng)};
  world_attention_ = Additive{p.add_weight("decoder.world_attention.query", {cmd + hd, hd}, rng),
                              p.add_weight("decoder.world_attention.key", {feat, hd}, rng),
                              p.add_weight("decoder.world_attention.score", {hd, 1}, rng)};
  decoder_lstm_ = make_lstm("decoder.lstm", emb + cmd + feat, hd);
  output_ = make_linear("decoder.output", hd + cmd + feat, kOutputTokens);
}

CommandEncoding Model::encode_command(const std::vector<std::size_t>& tokens, Mode mode, Rng& rng) const {
  if (tokens.empty()) throw Error(ErrorKind::invalid_argument, "command must contain at least one token");
  const std::size_t n = tokens.size();
  const std::size_t he = config_.encoder_hidden;
  Value embedded = diff::embedding_lookup(command_embedding_, tokens);
  embedded = diff::dropout(embedded, config_.encoder_dropout, mode == Mode::train, rng);

  const Value zero = Value::constant({1, he}, 0.0);
  std::vector<Value> fwd(n), bwd(n);
  diff::LstmState s{zero, zero};
  for (std::size_t t = 0; t < n; ++t) {
    s = diff::lstm_cell(diff::slice_rows(embedded, t, t + 1), s.h, s.c, forward_lstm_.w_x, forward_lstm_.w_h,
                        forward_lstm_.bias);
    fwd[t] = s.h;
  }
  s = {zero, zero};
  for (std::size_t t = n; t-- > 0;) {
    s = diff::lstm_cell(diff::slice_rows(embedded, t, t + 1), s.h, s.c, backward_lstm_.w_x, backward_lstm_.w_h,
                        backward_lstm_.bias);
    bwd[t] = s.h;
  }
  std::vector<Value> rows;
  rows.reserve(n);
  for (std::size_t t = 0; t < n; ++t) rows.push_back(diff::concat({fwd[t], bwd[t]}, 1));
  Value states = n == 1 ? rows.front() : diff::concat(rows, 0);
  Value summary = linear(diff::concat({fwd[n - 1], bwd[0]}, 1), summary_.weight, summary_.bias);
  return {states, summary};
}

Value Model::encode_state(const GridTensor& grid, Mode mode, Rng& rng) const {
  const std::size_t cells = config_.cells();
  if (grid.d != config_.d || grid.values.size() != cells * kCellChannels)
    throw Error(ErrorKind::shape_mismatch, "grid of side " + std::to_string(grid.d) + " with " +
                                               std::to_string(grid.values.size()) + " values for a model with d=" +
                                               std::to_string(config_.d));
  const Value input = Value::constant({cells, kCellChannels}, grid.values);
  const auto side = static_cast<std::size_t>(config_.d);
  std::vector<Value> maps;
  for (std::size_t i = 0; i < convs_.size(); ++i)
    maps.push_back(diff::relu(diff::conv2d_same(input, convs_[i].weight, convs_[i].bias, side, side, config_.kernels[i])));
  return diff::dropout(diff::concat(maps, 1), config_.cnn_dropout, mode == Mode::train, rng);
}

Value Model::aux_input_world(const Value& world, const Value& command_summary) const {
  if (!aux_linear_.weight) throw Error(ErrorKind::invalid_argument, "model has no world/both target head");
  const AttentionResult attn =
      dot_attention(diff::matmul(command_summary, aux_query_), diff::matmul(world, aux_key_));
  const Value weighted = scale_rows(world, attn.weights);
  return diff::concat({diff::reshape(weighted, {1, weighted.size()}), command_summary}, 1);
}

Value Model::aux_input_both(const Value& world, const Value& command_states) const {
  if (!aux_pool_.weight) throw Error(ErrorKind::invalid_argument, "model has no both target head");
  const Value pooled_world = diff::mean_rows(world);
  const AttentionResult over_command =
      dot_attention(diff::matmul(pooled_world, aux_pool_query_), diff::matmul(command_states, aux_pool_key_));
  const Value command_vector =
      linear(diff::matmul(over_command.weights, command_states), aux_pool_.weight, aux_pool_.bias);
  const AttentionResult over_world =
      dot_attention(diff::matmul(command_vector, aux_query_), diff::matmul(world, aux_key_));
  const Value weighted = scale_rows(world, over_world.weights);
  return diff::concat({diff::reshape(weighted, {1, weighted.size()}), command_vector}, 1);
}

TargetScores Model::predict_target_world(const Value& world, const Value& command_summary) const {
  Value scores = linear(aux_input_world(world, command_summary), aux_linear_.weight, aux_linear_.bias);
  return {scores, diff::log_softmax(scores, 1)};
}

TargetScores Model::predict_target_both(const Value& world, const Value& command_states) const {
  Value scores = linear(aux_input_both(world, command_states), aux_linear_.weight, aux_linear_.bias);
  return {scores, diff::log_softmax(scores, 1)};
}

DecoderState Model::initial_state(const Value& command_summary, const Value& world) const {
  Value h = linear(diff::concat({command_summary, diff::mean_rows(world)}, 1), init_.weight, init_.bias);
  return {h, Value::constant({1, config_.decoder_hidden}, 0.0)};
}

DecoderMemory Model::memory(const Value& command_states, const Value& world_effective) const {
  return {command_states, diff::matmul(command_states, command_attention_.key), world_effective,
          diff::matmul(world_effective, world_attention_.key)};
}

StepOutput Model::decode_step(std::size_t previous_token, const DecoderState& state, const DecoderMemory& memory,
                              Mode mode, Rng& rng) const {
  const bool train = mode == Mode::train;
  Value embedded = diff::embedding_lookup(action_embedding_, {previous_token});
  embedded = diff::dropout(embedded, config_.decoder_dropout, train, rng);

  auto attend = [](const Additive& a, const Value& query, const Value& keys) {
    Value energy = diff::tanh(diff::add(keys, diff::matmul(query, a.query)));
    return diff::softmax(diff::transpose(diff::matmul(energy, a.score)), 1);
  };
  Value command_weights = attend(command_attention_, state.h, memory.command_keys);
  Value command_context = diff::matmul(command_weights, memory.command_states);
  Value world_weights = attend(world_attention_, diff::concat({command_context, state.h}, 1), memory.world_keys);
  Value world_context = diff::matmul(world_weights, memory.world);

  const diff::LstmState next =
      diff::lstm_cell(diff::concat({embedded, command_context, world_context}, 1), state.h, state.c, decoder_lstm_.w_x,
                      decoder_lstm_.w_h, decoder_lstm_.bias);
  Value features = diff::dropout(diff::concat({next.h, command_context, world_context}, 1), config_.decoder_dropout,
                                 train, rng);
  return {linear(features, output_.weight, output_.bias), {next.h, next.c}, command_weights, world_weights};
}

Model::Encoded Model::encode(const PreparedExample& ex, Mode mode, Rng& rng) const {
  Encoded e;
  e.command = encode_command(ex.command, mode, rng);
  e.world = encode_state(ex.grid, mode, rng);
  e.world_effective = e.world;
  if (config_.variant == Variant::world)
    e.target = predict_target_world(e.world, e.command.summary);
  else if (config_.variant == Variant::both)
    e.target = predict_target_both(e.world, e.command.states);
  if (e.target && config_.weighting == Weighting::on)
    e.world_effective = weight_world_encodings(e.world, e.target->log_probs);
  return e;
}

ForwardResult Model::forward(const PreparedExample& ex, Mode mode, Rng& rng) const {
  if (ex.gold.empty()) throw Error(ErrorKind::invalid_argument, "gold sequence must end with EOS");
  Encoded e = encode(ex, mode, rng);
  const DecoderMemory mem = memory(e.command.states, e.world_effective);
  DecoderState state = initial_state(e.command.summary, e.world);

  ForwardResult out;
  std::vector<Value> logits;
  logits.reserve(ex.gold.size());
  std::size_t previous = kSosToken;
  for (std::size_t token : ex.gold) {
    StepOutput step = decode_step(previous, state, mem, mode, rng);
    logits.push_back(step.logits);
    out.world_attention.push_back(step.world_attention);
    out.command_attention.push_back(step.command_attention);
    state = step.state;
    previous = token;
  }
  out.logits = logits.size() == 1 ? logits.front() : diff::concat(logits, 0);
  if (config_.variant == Variant::baseline_aux)
    out.target = predict_target_baseline_aux(out.world_attention);
  else
    out.target = std::move(e.target);
  return out;
}

DecodeResult Model::greedy_decode(const PreparedExample& ex, std::size_t max_steps) const {
  diff::NoGradGuard guard;
  Rng unused(0);
  Encoded e = encode(ex, Mode::eval, unused);
  const DecoderMemory mem = memory(e.command.states, e.world_effective);
  DecoderState state = initial_state(e.command.summary, e.world);

  DecodeResult out;
  std::vector<Value> world_attention;
  std::size_t previous = kSosToken;
  while (out.tokens.size() < max_steps) {
    StepOutput step = decode_step(previous, state, mem, Mode::eval, unused);
    world_attention.push_back(step.world_attention);
    state = step.state;
    const auto logits = step.logits.data();
    std::size_t best = 0;
    for (std::size_t k = 1; k < logits.size(); ++k)
      if (logits[k] > logits[best]) best = k;
    out.tokens.push_back(best);
    if (best == kEosToken) {
      out.terminated = true;
      break;
    }
    previous = best;
  }
  if (config_.variant == Variant::baseline_aux)
    out.target = predict_target_baseline_aux(world_attention);
  else
    out.target = std::move(e.target);
  return out;
}

}  // namespace thinkact
