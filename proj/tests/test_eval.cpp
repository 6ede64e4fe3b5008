#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "aakt/errors.hpp"
#include "aakt/eval.hpp"

using namespace aakt;

namespace {

double naive_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        den += 1;
        num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return num / den;
}

PredictionRecord rec(std::size_t pos, double p, int y) {
  PredictionRecord r;
  r.position = pos;
  r.prob = p;
  r.label = y;
  return r;
}

}  // namespace

TEST(Auc, Examples) {
  EXPECT_DOUBLE_EQ(*auc(std::vector<double>{0.9, 0.1}, std::vector<int>{1, 0}), 1.0);
  EXPECT_DOUBLE_EQ(*auc(std::vector<double>{0.3, 0.3, 0.3}, std::vector<int>{1, 0, 1}), 0.5);
  EXPECT_DOUBLE_EQ(
      *auc(std::vector<double>{0.8, 0.4, 0.6, 0.2}, std::vector<int>{1, 1, 0, 0}), 0.75);
}

TEST(Auc, SingleClassIsAbsent) {
  EXPECT_FALSE(auc(std::vector<double>{0.2, 0.7}, std::vector<int>{1, 1}).has_value());
  StreamingAuc s;
  s.add(0.1, 0);
  EXPECT_FALSE(s.value().has_value());
}

TEST(Auc, StreamingMatchesNaive) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> grid(0, 200);
  std::bernoulli_distribution coin(0.4);
  std::vector<double> s;
  std::vector<int> y;
  StreamingAuc a, b;
  for (int i = 0; i < 3000; ++i) {
    s.push_back(grid(rng) / 200.0);
    y.push_back(coin(rng));
    (i % 2 ? a : b).add(s.back(), y.back());
  }
  a.merge(b);
  EXPECT_NEAR(*a.value(), naive_auc(s, y), 1e-12);
  EXPECT_NEAR(*auc(s, y), naive_auc(s, y), 1e-12);
}

TEST(Acc, Examples) {
  EXPECT_DOUBLE_EQ(acc(std::vector<double>{0.9, 0.1}, std::vector<int>{1, 0}), 1.0);
  EXPECT_DOUBLE_EQ(acc(std::vector<double>{0.5}, std::vector<int>{1}), 1.0);
  EXPECT_DOUBLE_EQ(acc(std::vector<double>{0.6, 0.6, 0.4}, std::vector<int>{1, 0, 0}), 2.0 / 3.0);
  EXPECT_THROW(acc(std::vector<double>{}, std::vector<int>{}), DataError);
}

TEST(Rmse, Examples) {
  EXPECT_DOUBLE_EQ(rmse(std::vector<double>{1, 0}, std::vector<int>{1, 0}), 0.0);
  EXPECT_DOUBLE_EQ(rmse(std::vector<double>{0.5, 0.5}, std::vector<int>{1, 0}), 0.5);
  EXPECT_NEAR(rmse(std::vector<double>{0.8}, std::vector<int>{1}), 0.2, 1e-12);
  EXPECT_THROW(rmse(std::vector<double>{}, std::vector<int>{}), DataError);
}

TEST(Records, OnlyFreshCount) {
  std::vector<PredictionRecord> r{rec(1, 0.9, 1), rec(2, 0.1, 0), rec(3, 0.95, 0)};
  r[2].fresh = false;
  EXPECT_DOUBLE_EQ(*auc(std::span<const PredictionRecord>(r)), 1.0);
  EXPECT_DOUBLE_EQ(acc(std::span<const PredictionRecord>(r)), 1.0);
}

TEST(Position, RisesWhenLatePositionsAreRanked) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<PredictionRecord> r;
  for (std::size_t pos = 1; pos <= 10; ++pos)
    for (int i = 0; i < 400; ++i) {
      int y = i % 2;
      double p = pos <= 5 ? u(rng) : (y ? 0.5 + 0.5 * u(rng) : 0.5 * u(rng));
      r.push_back(rec(pos, p, y));
    }
  auto series = per_position_auc(r, 10);
  ASSERT_EQ(series.size(), 10u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(*series[i], 0.5, 0.1);
  for (std::size_t i = 5; i < 10; ++i) EXPECT_DOUBLE_EQ(*series[i], 1.0);
}

TEST(Position, SingleClassPositionAbsent) {
  std::vector<PredictionRecord> r{rec(1, 0.2, 1), rec(1, 0.3, 0), rec(2, 0.4, 1)};
  auto series = per_position_auc(r, 2);
  EXPECT_TRUE(series[0].has_value());
  EXPECT_FALSE(series[1].has_value());
}

TEST(Smoothing, ConstantAndAlternating) {
  std::vector<std::optional<double>> c(6, 0.7);
  for (auto v : smoothed_auc(c, 3)) EXPECT_DOUBLE_EQ(*v, 0.7);
  std::vector<std::optional<double>> alt;
  for (int i = 0; i < 8; ++i) alt.push_back(i % 2);
  auto s = smoothed_auc(alt, 2);
  EXPECT_EQ(s.size(), 7u);
  for (auto v : s) EXPECT_DOUBLE_EQ(*v, 0.5);
  auto shorter = smoothed_auc(std::vector<std::optional<double>>{0.2, 0.4}, 5);
  ASSERT_EQ(shorter.size(), 1u);
  EXPECT_DOUBLE_EQ(*shorter[0], 0.3);
  EXPECT_EQ(smoothing_window(50), 10u);
}

TEST(Correlation, Examples) {
  std::vector<MetricReport> reps(4);
  double aucs[] = {0.7, 0.75, 0.72, 0.8};
  for (int i = 0; i < 4; ++i) {
    reps[i].auc = aucs[i];
    reps[i].acc = aucs[i];
    reps[i].rmse = 1.0 - aucs[i];
  }
  auto c = metric_correlations(reps);
  EXPECT_NEAR(*c.acc_auc, 1.0, 1e-12);
  EXPECT_NEAR(*c.auc_rmse, -1.0, 1e-12);
}

TEST(Correlation, MatchesCovarianceFormula) {
  std::vector<double> x{1, 2, 4, 7}, y{2, 1, 5, 4};
  double mx = 3.5, my = 3.0, sxy = 0, sxx = 0, syy = 0;
  for (int i = 0; i < 4; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  EXPECT_NEAR(*pearson(x, y), sxy / std::sqrt(sxx * syy), 1e-12);
  EXPECT_FALSE(pearson(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}).has_value());
}

namespace {

class ConstantPredictor final : public Predictor {
 public:
  std::vector<double> predict(const Window& w) const override {
    return std::vector<double>(w.num_questions(), 0.5);
  }
};

}  // namespace

TEST(Sweep, ConstantModelFlatAtHalf) {
  std::vector<std::vector<Token>> corpus;
  for (int s = 0; s < 5; ++s) {
    StudentSequence seq{"s", {}};
    for (int i = 0; i < 37; ++i) seq.interactions.push_back({i % 4, {0}, (i + s) % 2, 1000, i});
    corpus.push_back(build_alternate_sequence(seq, TimeNormalization{}));
  }
  std::vector<double> ratios{0.0, 0.5, 0.75};
  auto sweep = overlap_ratio_sweep(ConstantPredictor{}, corpus, 16, ratios);
  ASSERT_EQ(sweep.size(), 3u);
  for (const auto& pt : sweep) {
    EXPECT_DOUBLE_EQ(*pt.auc, 0.5);
    EXPECT_EQ(pt.count, 5u * 37u);
  }
  auto plain = evaluate_corpus(ConstantPredictor{}, corpus, WindowSpec{16, 0.0});
  EXPECT_EQ(*sweep[0].auc, *plain.auc);
}
