#pragma once

// Shared-layer transformer encoder for masked pitch prediction.
//
// One encoder layer (pre-norm attention block + pre-norm feed-forward block)
// is applied num_layers times with the same parameters. Token and learned
// absolute position embeddings are summed at the input; a layer-normed linear
// head maps every position to output_classes pitch logits.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "psae/error.hpp"
#include "psae/nn/adamw.hpp"
#include "psae/nn/ops.hpp"
#include "psae/nn/tensor.hpp"
#include "psae/quantize.hpp"
#include "psae/random.hpp"

namespace psae {

struct ModelConfig {
  int vocab_size = 131;  // output_classes pitches, then REST, MASK, PAD
  int embed_dim = 64;
  int hidden_dim = 64;
  int num_layers = 2;
  int num_heads = 4;
  int ffn_dim = 352;
  int max_position = static_cast<int>(kMaxSeqLen);
  int output_classes = 128;

  int rest_id() const { return output_classes; }
  int mask_id() const { return output_classes + 1; }
  int pad_id() const { return output_classes + 2; }

  void validate() const {
    auto fail = [](const std::string& why) { throw Error(ErrorCode::InvalidConfig, why); };
    if (embed_dim <= 0 || hidden_dim <= 0 || num_layers <= 0 || num_heads <= 0 || ffn_dim <= 0 ||
        max_position <= 0 || output_classes <= 0) {
      fail("all sizes must be positive");
    }
    if (embed_dim != hidden_dim) {
      fail("embed_dim (" + std::to_string(embed_dim) + ") must equal hidden_dim (" + std::to_string(hidden_dim) +
           "); no embedding projection is used");
    }
    if (hidden_dim % num_heads != 0) {
      fail("hidden_dim " + std::to_string(hidden_dim) + " not divisible by num_heads " + std::to_string(num_heads));
    }
    if (vocab_size != output_classes + 3) {
      fail("vocab_size must be output_classes + 3 (REST, MASK, PAD)");
    }
  }

  /// True when token ids coincide with the PitchSequence vocabulary.
  bool uses_pitch_vocabulary() const { return output_classes == kNumPitches; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ParamBreakdown {
  std::int64_t token_embedding, position_embedding, attention, feed_forward, layer_norms, head_norm, head_projection;
  std::int64_t total() const {
    return token_embedding + position_embedding + attention + feed_forward + layer_norms + head_norm + head_projection;
  }
};

/// Parameter counts by block. num_layers does not appear: the layer is shared.
inline ParamBreakdown param_breakdown(const ModelConfig& c) {
  const std::int64_t e = c.embed_dim, h = c.hidden_dim, f = c.ffn_dim;
  return ParamBreakdown{
      .token_embedding = std::int64_t(c.vocab_size) * e,
      .position_embedding = std::int64_t(c.max_position) * e,
      .attention = 4 * (h * h + h),
      .feed_forward = h * f + f + f * h + h,
      .layer_norms = 2 * 2 * h,
      .head_norm = 2 * h,
      .head_projection = h * c.output_classes + c.output_classes,
  };
}

inline std::int64_t param_count(const ModelConfig& c) { return param_breakdown(c).total(); }

inline std::string describe_param_count(const ModelConfig& c) {
  const auto b = param_breakdown(c);
  return std::to_string(b.token_embedding) + " (token emb) + " + std::to_string(b.position_embedding) +
         " (pos emb) + " + std::to_string(b.attention) + " (QKVO) + " + std::to_string(b.feed_forward) +
         " (FFN) + " + std::to_string(b.layer_norms) + " (norms) + " + std::to_string(b.head_norm) +
         " (pre-head norm) + " + std::to_string(b.head_projection) + " (head) = " + std::to_string(b.total());
}

template <typename T>
struct LayerParams {
  nn::Var<T> wq, bq, wk, bk, wv, bv, wo, bo;
  nn::Var<T> ffn_in_w, ffn_in_b, ffn_out_w, ffn_out_b;
  nn::Var<T> attn_norm_gain, attn_norm_bias, ffn_norm_gain, ffn_norm_bias;
};

template <typename T>
struct ModelParams {
  ModelConfig config;
  nn::Var<T> token_embedding, position_embedding;
  LayerParams<T> shared;
  nn::Var<T> head_norm_gain, head_norm_bias, head_projection, head_bias;

  /// Every tensor with its canonical name, in serialisation order.
  std::vector<nn::ParamSlot<T>> slots() const {
    std::vector<nn::ParamSlot<T>> s{
        {"token_embedding", token_embedding, true},
        {"position_embedding", position_embedding, true},
        {"layer.wq", shared.wq, true},
        {"layer.bq", shared.bq, false},
        {"layer.wk", shared.wk, true},
        {"layer.bk", shared.bk, false},
        {"layer.wv", shared.wv, true},
        {"layer.bv", shared.bv, false},
        {"layer.wo", shared.wo, true},
        {"layer.bo", shared.bo, false},
        {"layer.ffn_in_w", shared.ffn_in_w, true},
        {"layer.ffn_in_b", shared.ffn_in_b, false},
        {"layer.ffn_out_w", shared.ffn_out_w, true},
        {"layer.ffn_out_b", shared.ffn_out_b, false},
        {"layer.attn_norm_gain", shared.attn_norm_gain, false},
        {"layer.attn_norm_bias", shared.attn_norm_bias, false},
        {"layer.ffn_norm_gain", shared.ffn_norm_gain, false},
        {"layer.ffn_norm_bias", shared.ffn_norm_bias, false},
        {"head.norm_gain", head_norm_gain, false},
        {"head.norm_bias", head_norm_bias, false},
        {"head.projection", head_projection, true},
        {"head.bias", head_bias, false},
    };
    return s;
  }

  std::int64_t count() const {
    std::int64_t n = 0;
    for (const auto& s : slots()) n += static_cast<std::int64_t>(s.param.value().size());
    return n;
  }
};

namespace detail {

template <typename T>
nn::Var<T> param_tensor(nn::Shape shape, T fill) {
  return nn::Var<T>::leaf(nn::Tensor<T>(std::move(shape), fill), true);
}

template <typename T>
nn::Var<T> normal_tensor(nn::Shape shape, Rng& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  nn::Tensor<T> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(dist(rng));
  return nn::Var<T>::leaf(std::move(t), true);
}

}  // namespace detail

/// Weights ~ N(0, 0.02), biases 0, norm gains 1. Draws are made in double
/// and cast, so float and double models built from one seed agree.
template <typename T>
ModelParams<T> init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const std::size_t v = config.vocab_size, p = config.max_position, h = config.hidden_dim, f = config.ffn_dim,
                    c = config.output_classes;
  constexpr double kStd = 0.02;
  ModelParams<T> m;
  m.config = config;
  m.token_embedding = detail::normal_tensor<T>({v, h}, rng, kStd);
  m.position_embedding = detail::normal_tensor<T>({p, h}, rng, kStd);
  auto& L = m.shared;
  L.wq = detail::normal_tensor<T>({h, h}, rng, kStd);
  L.wk = detail::normal_tensor<T>({h, h}, rng, kStd);
  L.wv = detail::normal_tensor<T>({h, h}, rng, kStd);
  L.wo = detail::normal_tensor<T>({h, h}, rng, kStd);
  L.ffn_in_w = detail::normal_tensor<T>({h, f}, rng, kStd);
  L.ffn_out_w = detail::normal_tensor<T>({f, h}, rng, kStd);
  m.head_projection = detail::normal_tensor<T>({h, c}, rng, kStd);
  L.bq = detail::param_tensor<T>({h}, T(0));
  L.bk = detail::param_tensor<T>({h}, T(0));
  L.bv = detail::param_tensor<T>({h}, T(0));
  L.bo = detail::param_tensor<T>({h}, T(0));
  L.ffn_in_b = detail::param_tensor<T>({f}, T(0));
  L.ffn_out_b = detail::param_tensor<T>({h}, T(0));
  L.attn_norm_gain = detail::param_tensor<T>({h}, T(1));
  L.attn_norm_bias = detail::param_tensor<T>({h}, T(0));
  L.ffn_norm_gain = detail::param_tensor<T>({h}, T(1));
  L.ffn_norm_bias = detail::param_tensor<T>({h}, T(0));
  m.head_norm_gain = detail::param_tensor<T>({h}, T(1));
  m.head_norm_bias = detail::param_tensor<T>({h}, T(0));
  m.head_bias = detail::param_tensor<T>({c}, T(0));
  return m;
}

/// Deep copy into another scalar type (one tape-free leaf per tensor).
template <typename To, typename From>
ModelParams<To> convert_params(const ModelParams<From>& src) {
  ModelParams<To> dst = init_model<To>(src.config, 0);
  auto from = src.slots();
  auto to = dst.slots();
  for (std::size_t i = 0; i < from.size(); ++i) {
    auto& d = to[i].param.mutable_value().data;
    const auto& s = from[i].param.value().data;
    std::transform(s.begin(), s.end(), d.begin(), [](From x) { return static_cast<To>(x); });
  }
  return dst;
}

/// Token ids and padding flags for B sequences of common length L.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<int> tokens;         // B*L
  std::vector<std::uint8_t> pad;   // B*L, 1 = PAD
};

/// One encoder layer application.
template <typename T>
nn::Var<T> encoder_layer(const LayerParams<T>& p, const nn::Var<T>& x, std::size_t heads,
                         std::span<const std::uint8_t> pad) {
  using namespace nn;
  auto h = layer_norm(x, p.attn_norm_gain, p.attn_norm_bias);
  auto q = add_bias(matmul(h, p.wq), p.bq);
  auto k = add_bias(matmul(h, p.wk), p.bk);
  auto v = add_bias(matmul(h, p.wv), p.bv);
  auto attn = scaled_dot_product_attention(q, k, v, heads, pad);
  auto x1 = add(x, add_bias(matmul(attn, p.wo), p.bo));
  auto h2 = layer_norm(x1, p.ffn_norm_gain, p.ffn_norm_bias);
  auto ff = add_bias(matmul(gelu(add_bias(matmul(h2, p.ffn_in_w), p.ffn_in_b)), p.ffn_out_w), p.ffn_out_b);
  return add(x1, ff);
}

/// Forward pass with an explicit list of per-pass layer parameters. The
/// shared model passes the same LayerParams num_layers times.
template <typename T>
nn::Var<T> forward_with_layers(const ModelParams<T>& params, std::span<const LayerParams<T>* const> passes,
                               const TokenBatch& input) {
  const auto& c = params.config;
  if (input.length > static_cast<std::size_t>(c.max_position)) {
    throw Error(ErrorCode::SequenceTooLong, "length " + std::to_string(input.length) + " exceeds max_position " +
                                                std::to_string(c.max_position));
  }
  if (input.tokens.size() != input.batch * input.length || input.pad.size() != input.tokens.size()) {
    throw Error(ErrorCode::ShapeMismatch, "token batch buffers do not match B*L");
  }
  for (int t : input.tokens) {
    if (t < 0 || t >= c.vocab_size) throw Error(ErrorCode::UnknownToken, "token id " + std::to_string(t));
  }
  std::vector<int> positions(input.tokens.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i % input.length);
  const nn::Shape prefix{input.batch, input.length};
  auto x = nn::add(nn::embedding_lookup(params.token_embedding, std::span<const int>(input.tokens), prefix),
                   nn::embedding_lookup(params.position_embedding, std::span<const int>(positions), prefix));
  for (const auto* layer : passes) {
    x = encoder_layer(*layer, x, static_cast<std::size_t>(c.num_heads), std::span<const std::uint8_t>(input.pad));
  }
  auto h = nn::layer_norm(x, params.head_norm_gain, params.head_norm_bias);
  return nn::add_bias(nn::matmul(h, params.head_projection), params.head_bias);
}

/// Logits [B, L, output_classes].
template <typename T>
nn::Var<T> forward(const ModelParams<T>& params, const TokenBatch& input) {
  std::vector<const LayerParams<T>*> passes(static_cast<std::size_t>(params.config.num_layers), &params.shared);
  return forward_with_layers(params, std::span<const LayerParams<T>* const>(passes), input);
}

// ---------------------------------------------------------------------------
// Masked-LM batches
// ---------------------------------------------------------------------------

enum class MaskingStrategy {
  Replace,      // every selected position becomes MASK
  BertMixed,    // 80% MASK, 10% random pitch, 10% unchanged
};

struct TrainingBatch {
  TokenBatch input;
  std::vector<int> targets;               // B*L, pitch id or kIgnoreTarget
  std::vector<std::uint8_t> mask_positions;  // B*L
};

/// Number of positions to mask among `eligible`: ceil(rate * eligible), at least 1.
inline std::size_t masked_count(std::size_t eligible, double rate) {
  auto n = static_cast<std::size_t>(std::ceil(rate * static_cast<double>(eligible) - 1e-9));
  return std::clamp<std::size_t>(n, 1, eligible);
}

/// Pads to the longest sequence and masks ceil(rate * eligible) uniformly
/// chosen pitch positions per sequence (PAD and REST are never chosen).
inline TrainingBatch make_mlm_batch(std::span<const PitchSequence* const> sequences, double rate, Rng& rng,
                                    MaskingStrategy strategy = MaskingStrategy::Replace) {
  if (sequences.empty()) throw Error(ErrorCode::EmptyBatch, "no sequences");
  if (!(rate > 0.0 && rate < 1.0)) throw Error(ErrorCode::InvalidConfig, "mask rate must lie in (0, 1)");
  std::size_t len = 0;
  for (const auto* s : sequences) len = std::max(len, s->tokens.size());

  TrainingBatch b;
  b.input.batch = sequences.size();
  b.input.length = len;
  b.input.tokens.assign(b.input.batch * len, kPad);
  b.input.pad.assign(b.input.batch * len, 1);
  b.targets.assign(b.input.batch * len, nn::kIgnoreTarget);
  b.mask_positions.assign(b.input.batch * len, 0);

  std::vector<std::size_t> eligible;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_int_distribution<int> any_pitch(0, kNumPitches - 1);
  for (std::size_t r = 0; r < sequences.size(); ++r) {
    const auto& toks = sequences[r]->tokens;
    eligible.clear();
    for (std::size_t i = 0; i < toks.size(); ++i) {
      b.input.tokens[r * len + i] = toks[i];
      b.input.pad[r * len + i] = 0;
      if (is_pitch(toks[i])) eligible.push_back(i);
    }
    if (eligible.empty()) {
      throw Error(ErrorCode::NoEligiblePositions, "sequence '" + sequences[r]->source_id + "' has no pitch tokens");
    }
    const std::size_t n = masked_count(eligible.size(), rate);
    for (std::size_t i = 0; i < n; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, eligible.size() - 1);
      std::swap(eligible[i], eligible[pick(rng)]);
      const std::size_t at = r * len + eligible[i];
      b.targets[at] = toks[eligible[i]];
      b.mask_positions[at] = 1;
      int replacement = kMask;
      if (strategy == MaskingStrategy::BertMixed) {
        const double roll = u01(rng);
        if (roll >= 0.9) {
          replacement = toks[eligible[i]];
        } else if (roll >= 0.8) {
          replacement = any_pitch(rng);
        }
      }
      b.input.tokens[at] = replacement;
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainHyper {
  int batch_size = 64;
  double learning_rate = 1e-3;
  int epochs = 0;  // required; 0 is rejected
  std::uint64_t seed = 0;
  double flood_b = 0.05;
  double mask_rate = 0.15;
  double weight_decay = 0.01;
  MaskingStrategy masking = MaskingStrategy::Replace;

  void validate() const {
    if (batch_size < 1) throw Error(ErrorCode::InvalidConfig, "batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw Error(ErrorCode::InvalidConfig, "learning_rate must be > 0");
    if (epochs < 1) throw Error(ErrorCode::InvalidConfig, "epochs must be set (>= 1)");
    if (!(flood_b >= 0.0)) throw Error(ErrorCode::InvalidConfig, "flood_b must be >= 0");
    if (!(mask_rate > 0.0 && mask_rate < 1.0)) throw Error(ErrorCode::InvalidConfig, "mask_rate must lie in (0,1)");
    if (!(weight_decay >= 0.0)) throw Error(ErrorCode::InvalidConfig, "weight_decay must be >= 0");
  }
};

struct EpochMetrics {
  int epoch = 0;
  double raw_loss = 0;
  double flooded_loss = 0;
  double masked_accuracy = 0;
  std::size_t steps = 0;
};

struct Checkpoint {
  ModelConfig config;
  ModelParams<float> params;
  TrainHyper hyper;
  std::uint64_t steps = 0;
  std::vector<EpochMetrics> history;
};

struct StepResult {
  double raw_loss = 0;
  double flooded_loss = 0;
  std::size_t correct = 0;
  std::size_t masked = 0;
};

/// Forward, masked cross entropy, flooding, backward and one AdamW update.
template <typename T>
StepResult train_step(ModelParams<T>& params, std::vector<nn::ParamSlot<T>>& slots, nn::OptimizerState<T>& opt,
                      const TrainingBatch& batch, double flood_b) {
  auto logits = forward(params, batch.input);
  auto raw = nn::softmax_cross_entropy(logits, std::span<const int>(batch.targets));
  auto flooded = nn::flooded_loss(raw, static_cast<T>(flood_b));
  StepResult r;
  r.raw_loss = static_cast<double>(raw.value()[0]);
  r.flooded_loss = static_cast<double>(flooded.value()[0]);
  if (!std::isfinite(r.raw_loss)) {
    throw Error(ErrorCode::NonFiniteLoss, "raw loss " + std::to_string(r.raw_loss) + " at optimizer step " +
                                              std::to_string(opt.step_count + 1));
  }
  const std::size_t classes = static_cast<std::size_t>(params.config.output_classes);
  const auto& lv = logits.value().data;
  for (std::size_t i = 0; i < batch.targets.size(); ++i) {
    if (batch.targets[i] == nn::kIgnoreTarget) continue;
    const auto* row = lv.data() + i * classes;
    const auto best = std::max_element(row, row + classes) - row;
    r.correct += best == batch.targets[i] ? 1 : 0;
    ++r.masked;
  }
  nn::backward(flooded);
  nn::adamw_step(slots, opt);
  nn::zero_grads(slots);
  return r;
}

/// Seeded shuffle -> mask -> step loop over `corpus`. `on_epoch` (optional)
/// sees each epoch's averages as they complete.
inline Checkpoint train(const std::vector<PitchSequence>& corpus, const ModelConfig& config, const TrainHyper& hyper,
                        const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
  config.validate();
  hyper.validate();
  if (!config.uses_pitch_vocabulary()) {
    throw Error(ErrorCode::InvalidConfig, "training on pitch sequences needs output_classes = 128");
  }
  if (corpus.empty()) throw Error(ErrorCode::EmptyBatch, "empty training corpus");
  for (const auto& s : corpus) {
    if (s.tokens.size() > static_cast<std::size_t>(config.max_position)) {
      throw Error(ErrorCode::SequenceTooLong, "'" + s.source_id + "' has " + std::to_string(s.tokens.size()) +
                                                  " steps, max_position is " + std::to_string(config.max_position));
    }
  }

  Checkpoint ckpt;
  ckpt.config = config;
  ckpt.hyper = hyper;
  ckpt.params = init_model<float>(config, derive_seed(hyper.seed, "init"));
  auto slots = ckpt.params.slots();
  nn::AdamWHyper opt_hyper;
  opt_hyper.learning_rate = hyper.learning_rate;
  opt_hyper.weight_decay = hyper.weight_decay;
  auto opt = nn::make_optimizer_state(slots, opt_hyper);

  std::vector<std::size_t> order(corpus.size());
  std::vector<const PitchSequence*> members;
  for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(hyper.seed, "shuffle/" + std::to_string(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochMetrics m;
    m.epoch = epoch;
    std::size_t correct = 0, masked = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(hyper.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(hyper.batch_size));
      members.clear();
      for (std::size_t i = start; i < stop; ++i) members.push_back(&corpus[order[i]]);
      Rng mask_rng(derive_seed(hyper.seed, "mask/" + std::to_string(ckpt.steps)));
      auto batch = make_mlm_batch(std::span<const PitchSequence* const>(members), hyper.mask_rate, mask_rng,
                                  hyper.masking);
      const auto r = train_step(ckpt.params, slots, opt, batch, hyper.flood_b);
      m.raw_loss += r.raw_loss;
      m.flooded_loss += r.flooded_loss;
      correct += r.correct;
      masked += r.masked;
      ++m.steps;
      ++ckpt.steps;
    }
    m.raw_loss /= static_cast<double>(m.steps);
    m.flooded_loss /= static_cast<double>(m.steps);
    m.masked_accuracy = masked ? static_cast<double>(correct) / static_cast<double>(masked) : 0.0;
    ckpt.history.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return ckpt;
}

}  // namespace psae
