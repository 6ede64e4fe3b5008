#pragma once

// Alternate-sequence causal decoder.
//
// Question tokens are embedded through a question table, response tokens as
// emb_right / emb_wrong plus normalized time times a learned vector. A stack of
// pre-norm blocks runs causal multi-head attention (rotary positions on the
// leading `rotary_dim` channels of every head) and a GELU feed-forward branch
// in parallel from the same normalized input:
//
//   x <- x + Attn(LN(x)) + FFN(LN(x))
//
// A final layer norm and a dim->2 head produce (v_correct, v_incorrect) at every
// question token; the correctness probability is sigmoid(v_correct - v_incorrect).
// In the auxiliary skill mode a separate dim->|T| head predicts each question's
// skill distribution from its raw embedding row.
//
// The model is templated on the scalar type: float for training, double for
// finite-difference gradient checks. Forward returns a WindowTrace holding every
// activation the hand-written backward pass needs.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "aakt/seqbuild.hpp"

namespace aakt {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// How skill information reaches the model.
enum class SkillMode {
  kAuxiliary,  // skill-distribution head trained with KL on question embeddings
  kAdditive,   // mean skill embedding added to the question token (ablation)
  kNone,       // skills ignored (ablation)
};

const char* to_string(SkillMode mode);
SkillMode skill_mode_from_string(const std::string& name);

struct ModelConfig {
  std::size_t num_questions = 0;
  std::size_t num_skills = 0;
  std::size_t dim = 64;
  std::size_t num_blocks = 2;
  std::size_t num_heads = 8;
  /// 0 selects dim / (2 * num_heads).
  std::size_t rotary_dim = 0;
  std::size_t ffn_mult = 4;
  double dropout = 0.1;
  double rope_base = 10000.0;
  double init_std = 0.02;
  SkillMode skill_mode = SkillMode::kAuxiliary;
  bool use_time = true;
  TimeNormalization time;

  std::size_t head_dim() const { return dim / num_heads; }
  std::size_t effective_rotary_dim() const;
  std::size_t ffn_dim() const { return ffn_mult * dim; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct BlockParams {
  Matrix<T> ln_gain, ln_bias;          // 1 x dim
  Matrix<T> w_qkv;                     // dim x 3 dim
  Matrix<T> w_attn_out;                // dim x dim
  Matrix<T> ffn_in_w, ffn_in_b;        // dim x ffn, 1 x ffn
  Matrix<T> ffn_out_w, ffn_out_b;      // ffn x dim, 1 x dim
};

template <typename T>
struct ModelParams {
  Matrix<T> question_emb;              // |Q| x dim
  Matrix<T> skill_emb;                 // |T| x dim (additive mode), else 0 x dim
  Matrix<T> emb_right, emb_wrong;      // 1 x dim
  Matrix<T> time_vec;                  // 1 x dim
  Matrix<T> aux_w, aux_b;              // dim x |T|, 1 x |T| (auxiliary mode)
  std::vector<BlockParams<T>> blocks;
  Matrix<T> final_ln_gain, final_ln_bias;
  Matrix<T> head_w, head_b;            // dim x 2, 1 x 2

  /// All tensors in a fixed order with stable names.
  std::vector<std::pair<std::string, Matrix<T>*>> named_tensors();
  std::vector<std::pair<std::string, const Matrix<T>*>> named_tensors() const;

  /// Same shapes, every entry zero.
  static ModelParams zeros(const ModelConfig& config);
  void set_zero();
  std::size_t num_scalars() const;

  template <typename U>
  ModelParams<U> cast() const;
};

/// Truncated-normal (2 sigma) tables and projections, unit gains, zero biases.
template <typename T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed);

/// Rotates consecutive coordinate pairs (2j, 2j+1), j < rotary_dim / 2, of
/// `vec` by position * base^(-2j / rotary_dim). `inverse` applies the
/// transpose rotation.
template <typename T>
void rope_rotate(std::span<T> vec, std::size_t position, std::size_t rotary_dim,
                 double base = 10000.0, bool inverse = false);

/// Uniform mass over the question's skills, zero elsewhere. Throws DataError on
/// an empty or out-of-range skill set.
std::vector<double> true_skill_distribution(std::span<const SkillId> skills,
                                            std::size_t num_skills);

/// 1 / (1 + exp(v_incorrect - v_correct)), evaluated without overflow.
template <typename T>
T predict_prob(T v_correct, T v_incorrect);

template <typename T>
struct BlockTrace {
  Matrix<T> xhat;                      // normalized input, n x dim
  std::vector<T> rstd;
  Matrix<T> xn;                        // xhat * gain + bias
  Matrix<T> q, k, v;                   // post-rotary q/k, n x dim
  std::vector<Matrix<T>> probs;        // per head, n x n (row-stochastic)
  std::vector<Matrix<T>> attn_drop;    // per head dropout scale (empty if none)
  Matrix<T> concat;                    // per-head outputs, n x dim
  Matrix<T> ffn_pre, ffn_act;          // n x ffn
  Matrix<T> resid_drop;                // n x dim dropout scale (empty if none)
};

/// Everything produced by one window's forward pass.
template <typename T>
struct WindowTrace {
  std::size_t n = 0;                         // attn_len
  std::vector<Token> tokens;                 // the n non-pad tokens
  std::vector<std::size_t> question_pos;     // token index of each question
  std::vector<BlockTrace<T>> blocks;
  Matrix<T> hidden;                          // final residual stream, n x dim
  Matrix<T> final_xhat;
  std::vector<T> final_rstd;
  Matrix<T> final_norm;                      // n x dim
  Matrix<T> logits;                          // questions x 2
  std::vector<T> probs;                      // per question
  Matrix<T> aux_logits, aux_probs;           // questions x |T| (auxiliary mode)
};

/// Batch-level forward output. Grids are indexed [window][question slot];
/// slots past a window's last question hold NaN.
template <typename T>
struct ForwardOutput {
  std::vector<std::vector<T>> probs;
  std::vector<Matrix<T>> aux_probs;                       // per window
  std::vector<Matrix<T>> hidden;                          // per window, n x dim
  std::vector<std::vector<std::vector<Matrix<T>>>> attn;  // [window][block][head]
};

template <typename T>
class Decoder {
 public:
  Decoder(ModelConfig config, ModelParams<T> params);

  const ModelConfig& config() const { return config_; }
  const ModelParams<T>& params() const { return params_; }
  ModelParams<T>& params() { return params_; }

  /// Row `question` of the question table. Throws std::out_of_range.
  Matrix<T> embed_question(QuestionId question) const;
  /// time_norm * time_vec + (correct ? emb_right : emb_wrong).
  Matrix<T> embed_response(int correct, double time_norm) const;
  /// Softmax of the auxiliary head applied to rows of `question_embedding`.
  Matrix<T> aux_skill_distribution(const Matrix<T>& question_embedding) const;

  /// Forward pass over the non-pad prefix of `window`. Dropout is applied only
  /// when `dropout_rng` is non-null. Throws DataError on alternation violations.
  WindowTrace<T> forward(const Window& window, std::mt19937_64* dropout_rng = nullptr) const;

  /// Accumulates parameter gradients into `grads` given dL/d(v_correct -
  /// v_incorrect) per question and dL/d(aux logits) (questions x |T|, may be
  /// empty when the auxiliary loss is off).
  void backward(const WindowTrace<T>& trace, std::span<const T> d_logit_diff,
                const Matrix<T>& d_aux_logits, ModelParams<T>& grads) const;

  /// Inference over a batch; no dropout.
  ForwardOutput<T> forward_batch(const Batch& batch) const;

 private:
  ModelConfig config_;
  ModelParams<T> params_;
};

}  // namespace aakt
