#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "owl/attention.hpp"
#include "owl/tensor.hpp"

namespace owl {

struct ModelConfig {
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t dim = 32;
  std::size_t mlp_dim = 64;
  std::size_t vocab = 0;
  std::size_t feature_dim = 0;
  std::size_t visual_slots = 8;
  std::size_t max_seq = 96;

  void validate() const;
  std::size_t head_dim() const { return dim / heads; }
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerParams {
  Matrix ln1_gain, ln1_bias;  // 1 x d
  Matrix wq, wk, wv, wo;      // d x d
  Matrix ln2_gain, ln2_bias;  // 1 x d
  Matrix w1, b1;              // d x m, 1 x m
  Matrix w2, b2;              // m x d, 1 x d
  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

// Pre-norm decoder-only transformer with learned positional embeddings and a
// linear projector for the visual prefix. logits = W_o * LN(h_t).
struct ModelParams {
  ModelConfig config;
  Matrix token_embedding;     // vocab x d
  Matrix position_embedding;  // max_seq x d
  Matrix projector;           // feature_dim x d
  Matrix projector_bias;      // 1 x d
  std::vector<LayerParams> layers;
  Matrix final_gain, final_bias;  // 1 x d
  Matrix output;                  // vocab x d (W_o)

  static ModelParams zeros_like(const ModelConfig& config);
  static ModelParams init(const ModelConfig& config, std::uint64_t seed);

  // Every tensor with a stable name, in serialization order.
  std::vector<std::pair<std::string, Matrix*>> named_tensors();
  std::vector<std::pair<std::string, const Matrix*>> named_tensors() const;
  std::size_t parameter_count() const;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

// Incremental decode session: the visual prefix and text tokens seen so far
// with per-layer key/value caches that always cover every position.
class DecodeState {
 public:
  DecodeState(const ModelParams& params, Matrix visual_features, std::vector<int> prompt);

  // Appends a token and fills its cache rows (no hooks).
  void push(const ModelParams& params, int token);

  std::size_t length() const { return visual_slots_ + tokens_.size(); }
  std::size_t visual_slots() const { return visual_slots_; }
  const std::vector<int>& tokens() const { return tokens_; }
  const Matrix& visual_features() const { return features_; }
  std::size_t cache_length(std::size_t layer) const { return cached_[layer]; }
  TokenPartition partition(bool self_in_text = true) const;

 private:
  friend struct StepKernel;
  std::size_t visual_slots_;
  Matrix features_;
  std::vector<int> tokens_;
  std::vector<Matrix> keys_;    // per layer, max_seq x d
  std::vector<Matrix> values_;  // per layer, max_seq x d
  std::vector<std::size_t> cached_;
};

struct StepOutput {
  std::vector<Real> logits;
  std::vector<AttentionRecord> records;  // one per layer
};

// Logits and attention of the last position of `state`, recomputed against
// the cached prefix. With a hook, the captured records and the value mixing
// both use the rewritten weights.
StepOutput forward_step(const ModelParams& params, const DecodeState& state,
                        const AttentionHook* hook = nullptr);

struct TrainingExample {
  Matrix features;          // visual_slots x feature_dim
  std::vector<int> input;   // text tokens fed after the visual prefix
  std::vector<int> target;  // same length as input; -1 = no loss
};

struct LossAndGrads {
  Real loss = 0.0;  // mean cross-entropy over targeted positions
  std::size_t targets = 0;
  ModelParams grads;
};

LossAndGrads loss_and_grads(const ModelParams& params,
                            std::span<const TrainingExample> batch,
                            std::size_t threads = 1);

// Full-sequence teacher-forced logits (seq_len x vocab), text positions only.
Matrix sequence_logits(const ModelParams& params, const TrainingExample& example);

struct TrainOptions {
  std::size_t epochs = 12;
  double learning_rate = 3e-3;
  std::size_t batch_size = 32;
  std::uint64_t seed = 7;
  std::size_t threads = 1;
  double grad_clip = 1.0;
  // Called after every optimizer step with (step, loss).
  std::function<void(std::size_t, Real)> on_step;
};

struct TrainResult {
  ModelParams params;
  std::vector<Real> loss_trace;  // one entry per optimizer step
};

TrainResult train(ModelParams params, std::span<const TrainingExample> corpus,
                  const TrainOptions& options);

}  // namespace owl
