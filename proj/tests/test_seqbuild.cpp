#include <gtest/gtest.h>

#include <algorithm>
#include <optional>
#include <vector>

#include "aakt/errors.hpp"
#include "aakt/seqbuild.hpp"

using namespace aakt;

namespace {

StudentSequence seq_of(std::size_t n) {
  StudentSequence s{"x", {}};
  for (std::size_t i = 0; i < n; ++i)
    s.interactions.push_back({static_cast<QuestionId>(i % 7),
                              {static_cast<SkillId>(i % 3)},
                              static_cast<int>(i % 2),
                              static_cast<std::int64_t>(1000 * (i + 1)),
                              static_cast<std::int64_t>(i)});
  return s;
}

std::vector<Token> tokens_of(std::size_t n_interactions) {
  return build_alternate_sequence(seq_of(n_interactions), TimeNormalization{});
}

std::vector<std::size_t> starts(const std::vector<Window>& ws) {
  std::vector<std::size_t> out;
  for (const auto& w : ws) out.push_back(w.start);
  return out;
}

}  // namespace

TEST(Alternate, InterleavesQuestionsAndResponses) {
  StudentSequence s{"a", {{1, {0}, 1, 100, 0}, {2, {0}, 0, 100, 1}}};
  auto t = build_alternate_sequence(s, TimeNormalization{});
  ASSERT_EQ(t.size(), 4u);
  EXPECT_EQ(t[0].kind, TokenKind::kQuestion);
  EXPECT_EQ(t[0].question, 1);
  EXPECT_EQ(t[0].label, 1);
  EXPECT_EQ(t[1].kind, TokenKind::kResponse);
  EXPECT_EQ(t[1].correct, 1);
  EXPECT_EQ(t[2].question, 2);
  EXPECT_EQ(t[3].correct, 0);
}

TEST(Alternate, EmptySequence) {
  EXPECT_TRUE(build_alternate_sequence(StudentSequence{}, TimeNormalization{}).empty());
}

TEST(Time, FactorNormalizes) {
  EXPECT_DOUBLE_EQ(TimeNormalization{}.normalize(60000), 1.0);
}

TEST(Time, ClipsBeforeDividing) {
  EXPECT_NEAR(TimeNormalization{}.normalize(300000), 200000.0 / 60000.0, 1e-12);
  EXPECT_NEAR(TimeNormalization{}.normalize(300000), 3.3333, 1e-4);
}

TEST(Time, InvalidConstantsRejected) {
  EXPECT_THROW((TimeNormalization{0.0, 200000.0}.validate()), ConfigError);
  EXPECT_THROW((TimeNormalization{60000.0, 0.0}.validate()), ConfigError);
}

TEST(Alternate, RoundTrip) {
  auto s = seq_of(30);
  s.interactions[4].time_ms = 500000;
  TimeNormalization tn;
  auto back = reconstruct_interactions(build_alternate_sequence(s, tn), tn);
  ASSERT_EQ(back.size(), s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_EQ(back[i].question, s.interactions[i].question);
    EXPECT_EQ(back[i].skills, s.interactions[i].skills);
    EXPECT_EQ(back[i].correct, s.interactions[i].correct);
    EXPECT_EQ(back[i].time_ms,
              std::min<std::int64_t>(s.interactions[i].time_ms, 200000));
  }
}

TEST(Windows, TrainStartsWithHalfOverlap) {
  auto ws = window_train(tokens_of(10), WindowSpec{8, 0.5});
  EXPECT_EQ(starts(ws), (std::vector<std::size_t>{0, 4, 8, 12, 16}));
  EXPECT_EQ(ws.back().attn_len, 4u);
  for (const auto& w : ws) EXPECT_EQ(w.tokens.size(), 8u);
  for (std::size_t i = 4; i < 8; ++i)
    EXPECT_EQ(ws.back().tokens[i].kind, TokenKind::kPad);
}

TEST(Windows, TrainStartsWithoutOverlap) {
  auto ws = window_train(tokens_of(10), WindowSpec{8, 0.0});
  EXPECT_EQ(starts(ws), (std::vector<std::size_t>{0, 8, 16}));
}

TEST(Windows, ShortSequenceSingleWindow) {
  auto ws = window_train(tokens_of(3), WindowSpec{8, 0.0});
  ASSERT_EQ(ws.size(), 1u);
  EXPECT_EQ(ws[0].attn_len, 6u);
}

TEST(Windows, ShortSequenceWithOverlapKeepsStartRule) {
  auto ws = window_train(tokens_of(3), WindowSpec{8, 0.5});
  EXPECT_EQ(starts(ws), (std::vector<std::size_t>{0, 4}));
  EXPECT_EQ(ws[0].attn_len, 6u);
  EXPECT_EQ(ws[1].attn_len, 2u);
}

TEST(Windows, BadStepRejected) {
  EXPECT_EQ((WindowSpec{8, 0.25}.step()), 6u);
  EXPECT_THROW((WindowSpec{10, 0.5}.step()), ConfigError);
  EXPECT_THROW((WindowSpec{8, 1.0}.step()), ConfigError);
  EXPECT_THROW((WindowSpec{0, 0.5}.step()), ConfigError);
}

TEST(Windows, EvalFreshCoversEachInteractionOnce) {
  auto tokens = tokens_of(10);
  auto ws = window_eval(tokens, WindowSpec{8, 0.5});
  // Oracle: a question token is owned by the first window whose span holds it.
  std::vector<std::optional<std::size_t>> owner(tokens.size());
  for (std::size_t w = 0; w < ws.size(); ++w)
    for (std::size_t i = ws[w].start; i < std::min(tokens.size(), ws[w].start + 8); ++i)
      if (!owner[i]) owner[i] = w;
  std::vector<std::size_t> expected(ws.size(), 0);
  for (std::size_t i = 0; i < tokens.size(); i += 2) ++expected[*owner[i]];

  std::vector<std::size_t> counts;
  std::size_t total = 0;
  for (const auto& w : ws) {
    std::size_t c = 0;
    for (std::size_t slot = 0; slot < w.num_questions(); ++slot) c += w.fresh[slot];
    counts.push_back(c);
    total += c;
  }
  EXPECT_EQ(counts, expected);
  EXPECT_EQ(counts, (std::vector<std::size_t>{4, 2, 2, 2, 0}));
  EXPECT_EQ(total, 10u);
}

TEST(Windows, NoOverlapAllFresh) {
  auto ws = window_eval(tokens_of(13), WindowSpec{8, 0.0});
  for (const auto& w : ws)
    for (std::size_t slot = 0; slot < w.num_questions(); ++slot) EXPECT_TRUE(w.fresh[slot]);
}

TEST(Windows, GrowthRatio) {
  std::vector<std::vector<Token>> corpus(20, tokens_of(1000));
  auto n0 = window_corpus(corpus, WindowSpec{200, 0.0}, WindowMode::kTrain).size();
  auto n5 = window_corpus(corpus, WindowSpec{200, 0.5}, WindowMode::kTrain).size();
  auto n75 = window_corpus(corpus, WindowSpec{200, 0.75}, WindowMode::kTrain).size();
  EXPECT_DOUBLE_EQ(dataset_growth_ratio(n0, n0), 1.0);
  EXPECT_GE(dataset_growth_ratio(n0, n5), 1.9);
  EXPECT_LE(dataset_growth_ratio(n0, n5), 2.1);
  EXPECT_GE(dataset_growth_ratio(n0, n75), 3.8);
  EXPECT_LE(dataset_growth_ratio(n0, n75), 4.2);
  EXPECT_THROW(dataset_growth_ratio(0, 5), DataError);
}

TEST(Batching, SizesAndDeterminism) {
  std::vector<Window> ws = window_train(tokens_of(20), WindowSpec{4, 0.0});
  ASSERT_EQ(ws.size(), 10u);
  auto b = pad_and_batch(ws, 4, std::nullopt);
  ASSERT_EQ(b.size(), 3u);
  EXPECT_EQ(b[0].size(), 4u);
  EXPECT_EQ(b[1].size(), 4u);
  EXPECT_EQ(b[2].size(), 2u);
  auto x = pad_and_batch(ws, 4, 11);
  auto y = pad_and_batch(ws, 4, 11);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < x[i].size(); ++j)
      EXPECT_EQ(x[i].windows[j].start, y[i].windows[j].start);
}
