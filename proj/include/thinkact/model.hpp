#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "thinkact/dataset.hpp"
#include "thinkact/diffcore.hpp"
#include "thinkact/json_types.hpp"
#include "thinkact/language.hpp"
#include "thinkact/rng.hpp"

namespace thinkact {

// How the target position is predicted.
//   baseline_no_aux: no auxiliary head.
//   baseline_aux:    log-softmax over decoder world-attention weights summed over steps.
//   world:           attention from the command summary over cells, then a linear layer.
//   both:            world-to-command attention first, then command-to-world attention.
enum class Variant { baseline_no_aux, baseline_aux, world, both };

// Whether world/both feed their log-probabilities back into decoder attention.
enum class Weighting { on, ablated };

std::string_view to_string(Variant v) noexcept;
std::string_view to_string(Weighting w) noexcept;
std::optional<Variant> parse_variant(std::string_view s) noexcept;
std::optional<Weighting> parse_weighting(std::string_view s) noexcept;

enum class Mode { train, eval };

struct ModelConfig {
  int d = 6;
  std::size_t command_vocab = 16;
  std::size_t embedding_dim = 25;
  std::size_t encoder_hidden = 100;  // h_e
  std::size_t decoder_hidden = 100;  // h_d
  std::size_t cnn_channels = 50;     // feature maps per kernel size
  std::array<std::size_t, 3> kernels{1, 5, 7};
  double encoder_dropout = 0.0;
  double decoder_dropout = 0.0;
  double cnn_dropout = 0.0;
  Variant variant = Variant::world;
  Weighting weighting = Weighting::on;
  double aux_weight = 0.3;

  static ModelConfig full();
  static ModelConfig micro();  // d = 4, widths divided by four, kernels {1, 3, 3}

  std::size_t cells() const noexcept { return static_cast<std::size_t>(d * d); }
  std::size_t world_features() const noexcept { return 3 * cnn_channels; }
  // Length of the concatenated classifier input for world/both: d^2 * 3 * c_out + h_e.
  std::size_t aux_input_size() const noexcept { return cells() * world_features() + encoder_hidden; }
  bool has_aux() const noexcept { return variant != Variant::baseline_no_aux; }
  bool weights_world() const noexcept {
    return weighting == Weighting::on && (variant == Variant::world || variant == Variant::both);
  }

  // Throws Error(invalid_argument) on inconsistent settings.
  void validate() const;

  Json to_json() const;
  // Missing keys keep the values in `base`.
  static ModelConfig from_json(const Json& j, const ModelConfig& base);
  static ModelConfig from_json(const Json& j);
};

// Decoder vocabulary: three actions, EOS, and SOS (input only).
inline constexpr std::size_t kWalkToken = 0;
inline constexpr std::size_t kTurnLeftToken = 1;
inline constexpr std::size_t kTurnRightToken = 2;
inline constexpr std::size_t kEosToken = 3;
inline constexpr std::size_t kSosToken = 4;
inline constexpr std::size_t kOutputTokens = 4;
inline constexpr std::size_t kInputTokens = 5;

std::size_t action_token(Action a) noexcept;
Action token_action(std::size_t token);

// An Example converted to model inputs once.
struct PreparedExample {
  std::vector<std::size_t> command;
  GridTensor grid;
  std::size_t target = 0;
  std::vector<std::size_t> gold;  // action tokens followed by EOS
  std::string referent;
};

PreparedExample prepare(const Example& ex, const Vocabulary& vocab);
std::vector<PreparedExample> prepare_all(const std::vector<Example>& examples, const Vocabulary& vocab);

struct TargetScores {
  diff::Value scores;     // 1 x d^2
  diff::Value log_probs;  // log_softmax(scores)
};

struct AttentionResult {
  diff::Value weights;  // 1 x n, sums to 1
  diff::Value context;  // 1 x key width
};

// softmax(q K^T / sqrt(k)) and its weighted sum of keys. query is 1 x k, keys n x k.
AttentionResult dot_attention(const diff::Value& query, const diff::Value& keys);

// Sums per-step world-attention weights and normalizes with log-softmax.
// Throws Error(called_before_decode) when no steps are given.
TargetScores predict_target_baseline_aux(const std::vector<diff::Value>& world_attention);

// Row i of the result is log_probs[i] times row i of world_features.
diff::Value weight_world_encodings(const diff::Value& world_features, const diff::Value& log_probs);

struct CommandEncoding {
  diff::Value states;   // n x 2h_e, [forward ; backward] per token
  diff::Value summary;  // 1 x h_e, projection of the final forward and backward states
};

struct DecoderState {
  diff::Value h;
  diff::Value c;
};

// Per-example tensors the decoder attends over.
struct DecoderMemory {
  diff::Value command_states;
  diff::Value command_keys;  // command_states projected for additive attention
  diff::Value world;         // world features after optional log-prob weighting
  diff::Value world_keys;
};

struct StepOutput {
  diff::Value logits;  // 1 x kOutputTokens
  DecoderState state;
  diff::Value command_attention;  // 1 x n
  diff::Value world_attention;    // 1 x d^2
};

struct ForwardResult {
  diff::Value logits;  // (L+1) x kOutputTokens, teacher forced
  std::optional<TargetScores> target;
  std::vector<diff::Value> world_attention;
  std::vector<diff::Value> command_attention;
};

struct DecodeResult {
  std::vector<std::size_t> tokens;  // includes EOS when the decoder emitted it
  bool terminated = false;
  std::optional<TargetScores> target;
};

class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  diff::ParameterStore& parameters() noexcept { return params_; }
  const diff::ParameterStore& parameters() const noexcept { return params_; }

  CommandEncoding encode_command(const std::vector<std::size_t>& tokens, Mode mode, Rng& rng) const;
  diff::Value encode_state(const GridTensor& grid, Mode mode, Rng& rng) const;

  TargetScores predict_target_world(const diff::Value& world, const diff::Value& command_summary) const;
  TargetScores predict_target_both(const diff::Value& world, const diff::Value& command_states) const;

  // The classifier input vector v for the world/both heads (exposed for inspection).
  diff::Value aux_input_world(const diff::Value& world, const diff::Value& command_summary) const;
  diff::Value aux_input_both(const diff::Value& world, const diff::Value& command_states) const;

  DecoderState initial_state(const diff::Value& command_summary, const diff::Value& world) const;
  DecoderMemory memory(const diff::Value& command_states, const diff::Value& world_effective) const;
  StepOutput decode_step(std::size_t previous_token, const DecoderState& state, const DecoderMemory& memory, Mode mode,
                         Rng& rng) const;

  // Teacher-forced pass over ex.gold. For world/both the target head runs
  // before decoding; for baseline_aux it is derived from the decoder attention.
  ForwardResult forward(const PreparedExample& ex, Mode mode, Rng& rng) const;

  // Greedy decode in eval mode, stopping at EOS or after max_steps tokens.
  DecodeResult greedy_decode(const PreparedExample& ex, std::size_t max_steps) const;

 private:
  struct Encoded {
    CommandEncoding command;
    diff::Value world;
    std::optional<TargetScores> target;
    diff::Value world_effective;
  };
  Encoded encode(const PreparedExample& ex, Mode mode, Rng& rng) const;

  struct Lstm {
    diff::Value w_x, w_h, bias;
  };
  struct Additive {
    diff::Value query, key, score;
  };
  struct Linear {
    diff::Value weight, bias;
  };

  ModelConfig config_;
  diff::ParameterStore params_;

  diff::Value command_embedding_;
  Lstm forward_lstm_, backward_lstm_;
  Linear summary_;
  std::vector<Linear> convs_;

  // world / both heads
  diff::Value aux_query_, aux_key_;              // command summary over cells
  diff::Value aux_pool_query_, aux_pool_key_;    // both: pooled world over command states
  Linear aux_pool_;                              // both: pooled command vector to h_e
  Linear aux_linear_;

  diff::Value action_embedding_;
  Linear init_;
  Additive command_attention_, world_attention_;
  Lstm decoder_lstm_;
  Linear output_;
};

}  // namespace thinkact
