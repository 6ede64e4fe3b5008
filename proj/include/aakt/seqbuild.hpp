#pragma once

// Alternate question/response token sequences and the sliding-window cut used
// for training and evaluation.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "aakt/ingest.hpp"

namespace aakt {

enum class TokenKind : std::uint8_t { kQuestion, kResponse, kPad };

/// One element of an alternate sequence. A question token carries the question,
/// its skills and the supervision label (the correctness of the response that
/// follows it); a response token carries correctness and normalized time.
struct Token {
  TokenKind kind = TokenKind::kPad;
  QuestionId question = 0;
  std::vector<SkillId> skills;
  int label = 0;
  int correct = 0;
  double time_norm = 0.0;

  static Token pad() { return Token{}; }
  bool operator==(const Token&) const = default;
};

struct TimeNormalization {
  double time_factor_ms = 60000.0;
  double clip_max_ms = 200000.0;

  /// Clips to [0, clip_max_ms] then divides by the time factor.
  double normalize(std::int64_t time_ms) const;
  void validate() const;
  bool operator==(const TimeNormalization&) const = default;
};

/// [Q1, R1, Q2, R2, ...]; length is twice the interaction count.
std::vector<Token> build_alternate_sequence(const StudentSequence& seq,
                                            const TimeNormalization& time);

/// Inverse of build_alternate_sequence. Times come back post-clipping; order
/// keys are the interaction positions.
std::vector<Interaction> reconstruct_interactions(std::span<const Token> tokens,
                                                  const TimeNormalization& time);

/// Window length and overlap ratio, both in alternate-token units.
struct WindowSpec {
  std::size_t max_len = 100;
  double overlap = 0.5;

  /// max_len * (1 - overlap); throws ConfigError unless a positive even integer.
  std::size_t step() const;
  void validate() const;
};

struct Window {
  /// Exactly max_len tokens; positions >= attn_len are padding.
  std::vector<Token> tokens;
  std::size_t attn_len = 0;
  /// One flag per question slot (max_len / 2). In evaluation windows a slot is
  /// fresh only in the first window that covers its interaction.
  std::vector<bool> fresh;
  /// Provenance: index of the source sequence and token offset of tokens[0].
  std::size_t student = 0;
  std::size_t start = 0;

  std::size_t max_len() const { return tokens.size(); }
  std::size_t num_questions() const { return (attn_len + 1) / 2; }
  std::size_t interaction_index(std::size_t slot) const { return start / 2 + slot; }
};

/// Windows start at 0, step, 2*step, ... while start < token count; the tail of
/// the last window is padded. Every non-pad question is marked fresh.
std::vector<Window> window_train(std::span<const Token> tokens, const WindowSpec& spec,
                                 std::size_t student = 0);

/// Same cut as window_train, but overlapping questions already covered by an
/// earlier window are not fresh.
std::vector<Window> window_eval(std::span<const Token> tokens, const WindowSpec& spec,
                                std::size_t student = 0);

enum class WindowMode { kTrain, kEval };

/// Windows every sequence of a corpus; provenance indexes `sequences`.
std::vector<Window> window_corpus(const std::vector<std::vector<Token>>& sequences,
                                  const WindowSpec& spec, WindowMode mode);

std::vector<std::vector<Token>> build_corpus_tokens(const Dataset& dataset,
                                                    const TimeNormalization& time);

/// after / before; roughly 1 / (1 - overlap) on long sequences.
double dataset_growth_ratio(std::size_t windows_without_overlap,
                            std::size_t windows_with_overlap);

struct Batch {
  std::vector<Window> windows;

  std::size_t size() const { return windows.size(); }
};

/// Groups windows into batches of at most `batch_size`. With a seed the window
/// order is shuffled deterministically; without one corpus order is kept.
std::vector<Batch> pad_and_batch(std::vector<Window> windows, std::size_t batch_size,
                                 std::optional<std::uint64_t> shuffle_seed);

}  // namespace aakt
