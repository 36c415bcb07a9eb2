#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "divlab/bpe.hpp"
#include "divlab/graph.hpp"
#include "divlab/tensor.hpp"

namespace divlab::model {

/// Factor label ids. BEGIN only appears as the shifted target and decoder
/// input at position 0.
inline constexpr int kFactorEq = 0;
inline constexpr int kFactorDiv = 1;
inline constexpr int kFactorBegin = 2;
inline constexpr int kFactorVocab = 3;

struct ModelConfig {
  int src_vocab = 0;
  int tgt_vocab = 0;
  int d_token_embed = 28;
  int d_factor_embed = 4;
  int n_layers = 1;
  int n_heads = 4;
  int d_ff = 64;
  double dropout = 0.1;
  double label_smoothing = 0.1;
  bool tie_target_embeddings = false;
  /// Size of the factor label set. 0 removes the factor streams entirely.
  int factor_vocab = kFactorVocab;

  int d_model() const { return d_token_embed + d_factor_embed; }
  bool factored() const { return factor_vocab > 0; }
  /// Throws Error on an inconsistent configuration.
  void validate() const;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

/// The same configuration with the factor streams removed and the token
/// embedding widened to the full model width.
ModelConfig unfactored(const ModelConfig& config);

template <typename T>
struct NormWeights {
  Matrix<T> gamma, beta;
};

template <typename T>
struct AttentionWeights {
  Matrix<T> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <typename T>
struct FeedForwardWeights {
  Matrix<T> w1, b1, w2, b2;
};

template <typename T>
struct EncoderLayer {
  NormWeights<T> norm1;
  AttentionWeights<T> self_attn;
  NormWeights<T> norm2;
  FeedForwardWeights<T> ffn;
};

template <typename T>
struct DecoderLayer {
  NormWeights<T> norm1;
  AttentionWeights<T> self_attn;
  NormWeights<T> norm2;
  AttentionWeights<T> cross_attn;
  NormWeights<T> norm3;
  FeedForwardWeights<T> ffn;
};

/// Every trainable tensor of the factored transformer. A second instance of
/// the same shape doubles as the gradient buffer.
template <typename T>
struct ModelParams {
  ModelConfig config;
  Matrix<T> src_embed, tgt_embed;
  Matrix<T> src_factor_embed, tgt_factor_embed;  // empty when unfactored
  std::vector<EncoderLayer<T>> encoder;
  NormWeights<T> encoder_norm;
  std::vector<DecoderLayer<T>> decoder;
  NormWeights<T> decoder_norm;
  Matrix<T> out_w, out_b;        // token head; out_w empty when tied
  Matrix<T> factor_w, factor_b;  // factor head; empty when unfactored

  /// Zero-filled tensors with the shapes implied by config.
  static ModelParams zeros(const ModelConfig& config);

  /// Visits every tensor with a stable dotted name, in a fixed order.
  void for_each(const std::function<void(const std::string&, Matrix<T>&)>& fn);
  void for_each(const std::function<void(const std::string&, const Matrix<T>&)>& fn) const;

  std::size_t parameter_count() const;
  void set_zero();

  template <typename U>
  ModelParams<U> cast() const;
};

/// Xavier-uniform projections, N(0, d_model^-1/2) embeddings, unit norms and
/// zero biases, all drawn from the given seed.
ModelParams<float> init_params(const ModelConfig& config, std::uint64_t seed);

/// Integer grids of shape (batch, time), padded with mask 0.
struct FactoredBatch {
  int batch = 0;
  int src_time = 0;
  int tgt_time = 0;
  std::vector<int> src_ids, src_factor_ids, src_mask;
  std::vector<int> tgt_ids, tgt_factor_ids, shifted_factor_targets, tgt_mask;

  int src(int b, int t) const { return src_ids[static_cast<std::size_t>(b) * src_time + t]; }
  int tgt(int b, int t) const { return tgt_ids[static_cast<std::size_t>(b) * tgt_time + t]; }
  int src_len(int b) const;
  int tgt_len(int b) const;
  int target_tokens() const;

  /// Throws Error when a grid has the wrong size, masks are not left-aligned
  /// prefixes, or the shifted factor stream breaks its definition.
  void validate() const;
};

/// Builds a batch from encoded pairs. The shifted stream is BEGIN followed by
/// the target factors delayed one step.
FactoredBatch make_batch(const std::vector<corpus::EncodedPair>& pairs);

/// One sentence of a batch, with the decoder inputs derived from the targets:
/// tokens [BOS, y_0 .. y_{T-2}] and factors [BEGIN, s_0 .. s_{T-2}] where s is
/// the shifted factor stream.
struct Example {
  std::vector<int> src_ids, src_factors;
  std::vector<int> dec_tokens, dec_factors;
  std::vector<int> tgt_ids, factor_targets;
};

Example example_at(const FactoredBatch& batch, int b);

template <typename T>
struct Logits {
  Tensor3<T> token;   // (batch, time, |V_tgt|)
  Tensor3<T> factor;  // (batch, time, factor_vocab); width 0 when unfactored
};

/// Concatenated [token | factor] source embeddings before scaling and
/// positional encoding, shape (batch, time, d_model). Padding rows are zero.
template <typename T>
Tensor3<T> embed_source(const FactoredBatch& batch, const ModelParams<T>& params);
template <typename T>
Tensor3<T> embed_target(const FactoredBatch& batch, const ModelParams<T>& params);

/// Full forward pass. Sentences run independently, so padding never enters a
/// computation; padded positions of the outputs are zero.
template <typename T>
Logits<T> forward(const FactoredBatch& batch, const ModelParams<T>& params, bool train_mode,
                  std::uint64_t dropout_seed = 0);

struct LossBreakdown {
  double mt_loss = 0.0;
  double factor_loss = 0.0;
  double total() const { return mt_loss + factor_loss; }
};

/// Label-smoothed token cross-entropy plus label-smoothed cross-entropy of the
/// factor head against the shifted factor stream, each divided by the number
/// of non-pad target positions.
template <typename T>
LossBreakdown divergent_aware_loss(const Logits<T>& logits, const FactoredBatch& batch, double label_smoothing);

/// Gradients of the batch loss for every tensor, in a buffer shaped like
/// params. Throws Error naming the first tensor with a non-finite gradient.
template <typename T>
struct LossAndGrad {
  LossBreakdown loss;
  ModelParams<T> grad;
};

template <typename T>
LossAndGrad<T> loss_and_grad(const FactoredBatch& batch, const ModelParams<T>& params, double label_smoothing,
                             bool train_mode, std::uint64_t dropout_seed = 0, double loss_scale = 1.0);

/// Loss only, through the same graph code path (no gradient recording).
template <typename T>
LossBreakdown batch_loss(const FactoredBatch& batch, const ModelParams<T>& params, double label_smoothing);

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t nonzero = 0;  // sampled scalars whose analytic gradient exceeds the floor
  std::string worst_parameter;
};

/// Central finite differences against the analytic gradient on `samples`
/// randomly drawn scalar parameters, with dropout off. The relative error of
/// one scalar is |a - n| / max(|a| + |n|, floor).
GradCheckResult grad_check(const ModelParams<double>& params, const FactoredBatch& batch, double eps = 1e-4,
                           std::size_t samples = 200, std::uint64_t seed = 0, double floor = 1e-6);

// ---------------------------------------------------------------------------
// Encoder/decoder entry points for inference.

/// Encoder output (time, d_model) for one source sentence.
template <typename T>
Matrix<T> encode(const ModelParams<T>& params, std::span<const int> src_ids, std::span<const int> src_factors);

struct StepOutput {
  std::vector<double> token_log_probs;   // |V_tgt|
  std::vector<double> factor_log_probs;  // factor_vocab; empty when unfactored
};

/// Runs the decoder over a full prefix and returns the distributions at every
/// position.
template <typename T>
std::vector<StepOutput> decode_prefix(const ModelParams<T>& params, const Matrix<T>& memory,
                                      std::span<const int> dec_tokens, std::span<const int> dec_factors);

// ---------------------------------------------------------------------------
// Training.

struct OptimConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_tokens = 512;
  int checkpoint_every = 50;
  double lr_reduce_factor = 0.7;
  int lr_patience = 4;
  int stop_patience = 20;
  int max_updates = 5000;

  /// Schedule used for the full-size experiments.
  static OptimConfig full_scale();
  std::string to_json() const;
  static OptimConfig from_json(const std::string& text);
};

struct CheckpointRecord {
  int checkpoint = 0;
  int updates = 0;
  double mt_loss = 0.0;
  double factor_loss = 0.0;
  double dev_ppl = 0.0;
  double lr = 0.0;
};

struct TrainingLog {
  std::vector<CheckpointRecord> records;
  int best_checkpoint = 0;
  std::string to_csv() const;
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(int checkpoint, const std::string& what);
  int checkpoint() const { return checkpoint_; }

 private:
  int checkpoint_;
};

struct TrainResult {
  ModelParams<float> params;  // best checkpoint on dev perplexity
  TrainingLog log;
};

/// Called after every optimizer update with the update index and batch loss.
using UpdateHook = std::function<void(int, const LossBreakdown&)>;

/// Adam over token-count batches, evaluated on the dev set every
/// checkpoint_every updates; the learning rate is multiplied by
/// lr_reduce_factor after lr_patience checkpoints without dev-perplexity
/// improvement and training stops after stop_patience such checkpoints or at
/// max_updates.
TrainResult train(const std::vector<corpus::EncodedPair>& train_set, const std::vector<corpus::EncodedPair>& dev_set,
                  const ModelConfig& config, const OptimConfig& optim, std::uint64_t seed,
                  const UpdateHook& hook = nullptr);

/// Same pipeline without factor streams; factor columns of the data are ignored.
TrainResult train_unfactored(const std::vector<corpus::EncodedPair>& train_set,
                             const std::vector<corpus::EncodedPair>& dev_set, const ModelConfig& config,
                             const OptimConfig& optim, std::uint64_t seed, const UpdateHook& hook = nullptr);

/// exp of the mean unsmoothed token NLL over all target positions.
double perplexity(const ModelParams<float>& params, const std::vector<corpus::EncodedPair>& pairs);

// ---------------------------------------------------------------------------
// Checkpoints: JSON with the config header and every tensor by name.

std::string params_to_json(const ModelParams<float>& params);
ModelParams<float> params_from_json(const std::string& text);

}  // namespace divlab::model
