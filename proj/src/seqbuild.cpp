#include "aakt/seqbuild.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "aakt/errors.hpp"

namespace aakt {

double TimeNormalization::normalize(std::int64_t time_ms) const {
  double t = std::clamp(static_cast<double>(time_ms), 0.0, clip_max_ms);
  return t / time_factor_ms;
}

void TimeNormalization::validate() const {
  if (!(time_factor_ms > 0.0)) throw ConfigError("time factor must be positive");
  if (!(clip_max_ms > 0.0)) throw ConfigError("time clip must be positive");
}

std::vector<Token> build_alternate_sequence(const StudentSequence& seq,
                                            const TimeNormalization& time) {
  time.validate();
  std::vector<Token> tokens;
  tokens.reserve(2 * seq.size());
  for (const auto& it : seq.interactions) {
    Token q;
    q.kind = TokenKind::kQuestion;
    q.question = it.question;
    q.skills = it.skills;
    q.label = it.correct;
    tokens.push_back(std::move(q));

    Token r;
    r.kind = TokenKind::kResponse;
    r.correct = it.correct;
    r.time_norm = time.normalize(it.time_ms);
    tokens.push_back(std::move(r));
  }
  return tokens;
}

std::vector<Interaction> reconstruct_interactions(std::span<const Token> tokens,
                                                  const TimeNormalization& time) {
  if (tokens.size() % 2 != 0)
    throw DataError("alternate sequence has odd length");
  std::vector<Interaction> out;
  out.reserve(tokens.size() / 2);
  for (std::size_t i = 0; i < tokens.size(); i += 2) {
    const Token& q = tokens[i];
    const Token& r = tokens[i + 1];
    if (q.kind != TokenKind::kQuestion || r.kind != TokenKind::kResponse)
      throw DataError("alternation violated at token " + std::to_string(i));
    Interaction it;
    it.question = q.question;
    it.skills = q.skills;
    it.correct = r.correct;
    it.time_ms = std::llround(r.time_norm * time.time_factor_ms);
    it.order_key = static_cast<std::int64_t>(i / 2);
    out.push_back(std::move(it));
  }
  return out;
}

std::size_t WindowSpec::step() const {
  if (max_len == 0 || max_len % 2 != 0)
    throw ConfigError("max sequence length must be a positive even token count");
  if (!(overlap >= 0.0 && overlap < 1.0))
    throw ConfigError("overlap ratio must lie in [0, 1)");
  double raw = static_cast<double>(max_len) * (1.0 - overlap);
  double rounded = std::round(raw);
  if (std::abs(raw - rounded) > 1e-9 || rounded < 1.0)
    throw ConfigError("window step max_len*(1-overlap) = " + std::to_string(raw) +
                      " is not a positive integer");
  auto s = static_cast<std::size_t>(rounded);
  if (s % 2 != 0)
    throw ConfigError("window step " + std::to_string(s) +
                      " is odd; a step must cover whole interactions");
  return s;
}

void WindowSpec::validate() const { (void)step(); }

namespace {

std::vector<Window> cut_windows(std::span<const Token> tokens, const WindowSpec& spec,
                                std::size_t student, WindowMode mode) {
  const std::size_t step = spec.step();
  const std::size_t L = spec.max_len;
  std::vector<Window> windows;
  std::size_t covered_until = 0;  // one past the last token of the previous window
  for (std::size_t start = 0; start < tokens.size(); start += step) {
    Window w;
    w.student = student;
    w.start = start;
    w.attn_len = std::min(L, tokens.size() - start);
    w.tokens.reserve(L);
    w.tokens.insert(w.tokens.end(), tokens.begin() + static_cast<std::ptrdiff_t>(start),
                    tokens.begin() + static_cast<std::ptrdiff_t>(start + w.attn_len));
    w.tokens.resize(L, Token::pad());
    w.fresh.assign(L / 2, false);
    for (std::size_t slot = 0; slot < w.num_questions(); ++slot) {
      std::size_t token_index = start + 2 * slot;
      w.fresh[slot] = mode == WindowMode::kTrain || token_index >= covered_until;
    }
    covered_until = start + w.attn_len;
    windows.push_back(std::move(w));
  }
  return windows;
}

}  // namespace

std::vector<Window> window_train(std::span<const Token> tokens, const WindowSpec& spec,
                                 std::size_t student) {
  return cut_windows(tokens, spec, student, WindowMode::kTrain);
}

std::vector<Window> window_eval(std::span<const Token> tokens, const WindowSpec& spec,
                                std::size_t student) {
  return cut_windows(tokens, spec, student, WindowMode::kEval);
}

std::vector<Window> window_corpus(const std::vector<std::vector<Token>>& sequences,
                                  const WindowSpec& spec, WindowMode mode) {
  std::vector<Window> out;
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    auto w = cut_windows(sequences[s], spec, s, mode);
    out.insert(out.end(), std::make_move_iterator(w.begin()),
               std::make_move_iterator(w.end()));
  }
  return out;
}

std::vector<std::vector<Token>> build_corpus_tokens(const Dataset& dataset,
                                                    const TimeNormalization& time) {
  std::vector<std::vector<Token>> out;
  out.reserve(dataset.sequences.size());
  for (const auto& s : dataset.sequences) out.push_back(build_alternate_sequence(s, time));
  return out;
}

double dataset_growth_ratio(std::size_t windows_without_overlap,
                            std::size_t windows_with_overlap) {
  if (windows_without_overlap == 0)
    throw DataError("growth ratio undefined for an empty corpus");
  return static_cast<double>(windows_with_overlap) /
         static_cast<double>(windows_without_overlap);
}

std::vector<Batch> pad_and_batch(std::vector<Window> windows, std::size_t batch_size,
                                 std::optional<std::uint64_t> shuffle_seed) {
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (shuffle_seed) {
    std::mt19937_64 rng(*shuffle_seed);
    std::shuffle(windows.begin(), windows.end(), rng);
  }
  std::vector<Batch> batches;
  for (std::size_t i = 0; i < windows.size(); i += batch_size) {
    Batch b;
    auto end = std::min(windows.size(), i + batch_size);
    b.windows.assign(std::make_move_iterator(windows.begin() + static_cast<std::ptrdiff_t>(i)),
                     std::make_move_iterator(windows.begin() + static_cast<std::ptrdiff_t>(end)));
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace aakt
