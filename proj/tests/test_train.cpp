#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>

#include "aakt/checkpoint.hpp"
#include "aakt/errors.hpp"
#include "aakt/synthgen.hpp"
#include "aakt/train.hpp"
#include "support.hpp"

using namespace aakt;
using aakt::testing::random_window;
using aakt::testing::small_config;

namespace {

Matrix<double> rows(std::initializer_list<std::initializer_list<double>> r) {
  Matrix<double> m(static_cast<Eigen::Index>(r.size()),
                   static_cast<Eigen::Index>(r.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& row : r) {
    Eigen::Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

}  // namespace

TEST(Bce, HalfProbability) {
  std::vector<double> p{0.5};
  std::vector<int> y{1};
  std::vector<std::uint8_t> mask{1};
  EXPECT_NEAR(bce_loss(p, y, mask), -std::log(0.5), 1e-12);
  EXPECT_NEAR(bce_loss(p, y, mask), 0.69315, 1e-5);
}

TEST(Bce, TwoRecordMean) {
  std::vector<double> p{0.9, 0.2};
  std::vector<int> y{1, 0};
  std::vector<std::uint8_t> mask{1, 1};
  EXPECT_NEAR(bce_loss(p, y, mask), -(std::log(0.9) + std::log(0.8)) / 2, 1e-12);
  EXPECT_NEAR(bce_loss(p, y, mask), 0.16425, 1e-5);
}

TEST(Bce, PerfectPredictionNearZero) {
  std::vector<double> p{1.0, 0.0};
  std::vector<int> y{1, 0};
  std::vector<std::uint8_t> mask{1, 1};
  EXPECT_LE(bce_loss(p, y, mask), 1e-6);
}

TEST(Bce, MaskExcludesEntriesAndEmptyThrows) {
  std::vector<double> p{0.5, 0.01};
  std::vector<int> y{1, 1};
  std::vector<std::uint8_t> mask{1, 0};
  EXPECT_NEAR(bce_loss(p, y, mask), std::log(2.0), 1e-12);
  std::vector<std::uint8_t> none{0, 0};
  EXPECT_THROW(bce_loss(p, y, none), DataError);
}

TEST(Kl, Identity) {
  auto t = rows({{0.2, 0.3, 0.5}});
  std::vector<std::uint8_t> mask{1};
  EXPECT_NEAR(kl_aux_loss(t, t, mask).value, 0.0, 1e-15);
}

TEST(Kl, Examples) {
  std::vector<std::uint8_t> mask{1};
  EXPECT_NEAR(kl_aux_loss(rows({{0.5, 0.5}}), rows({{0.9, 0.1}}), mask).value,
              0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1), 1e-12);
  EXPECT_NEAR(kl_aux_loss(rows({{0.5, 0.5}}), rows({{0.9, 0.1}}), mask).value, 0.51083, 1e-5);
  EXPECT_NEAR(kl_aux_loss(rows({{1.0, 0.0}}), rows({{0.5, 0.5}}), mask).value, std::log(2.0),
              1e-12);
}

TEST(Kl, ZeroPredictionIsClampedAndFlagged) {
  std::vector<std::uint8_t> mask{1};
  auto r = kl_aux_loss(rows({{0.5, 0.5}}), rows({{1.0, 0.0}}), mask);
  EXPECT_EQ(r.clamped, 1u);
  EXPECT_NEAR(r.value, 0.5 * std::log(0.5) + 0.5 * std::log(0.5 / kKlClamp), 1e-9);
}

TEST(Total, UnweightedSum) {
  EXPECT_EQ(total_loss(0.0, 0.0).total, 0.0);
  EXPECT_DOUBLE_EQ(total_loss(0.7, 0.3).total, 1.0);
  EXPECT_THROW(total_loss(std::numeric_limits<double>::quiet_NaN(), 0.1), NumericError);
  EXPECT_THROW(total_loss(0.1, std::numeric_limits<double>::infinity()), NumericError);
}

TEST(Total, BatchLossIsPredPlusAux) {
  auto cfg = small_config(16, 1, 2);
  Decoder<double> m(cfg, init_params<double>(cfg, 1));
  std::mt19937_64 rng(1);
  Batch b{{random_window(6, 12, 12, 4, rng), random_window(2, 12, 12, 4, rng)}};
  auto l = batch_loss(m, b);
  EXPECT_GT(l.aux_loss, 0.0);
  EXPECT_EQ(l.total, l.pred_loss + l.aux_loss);
  auto pred_only = batch_loss(m, b, LossOptions{true, false});
  EXPECT_EQ(pred_only.aux_loss, 0.0);
  EXPECT_EQ(pred_only.pred_loss, l.pred_loss);
}

TEST(Adam, ZeroLearningRateLeavesParamsUnchanged) {
  auto cfg = small_config(16, 1, 2);
  Decoder<float> m(cfg, init_params<float>(cfg, 2));
  auto before = m.params();
  Adam<float> opt(m.params(), 0.0);
  std::mt19937_64 rng(2);
  Batch b{{random_window(6, 12, 12, 4, rng)}};
  auto g = ModelParams<float>::zeros(cfg);
  loss_and_gradient(m, b, LossOptions{}, g);
  opt.step(m.params(), g);
  auto x = before.named_tensors();
  auto y = m.params().named_tensors();
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(*x[i].second, *y[i].second) << x[i].first;
}

TEST(Adam, UnusedQuestionRowUntouchedAfterOneStep) {
  auto cfg = small_config(16, 1, 2);
  Decoder<float> m(cfg, init_params<float>(cfg, 3));
  std::mt19937_64 rng(3);
  Window w = random_window(6, 12, 12, 4, rng);
  std::vector<bool> used(cfg.num_questions);
  for (const auto& t : w.tokens)
    if (t.kind == TokenKind::kQuestion) used[static_cast<std::size_t>(t.question)] = true;
  std::size_t unused = 0;
  while (used[unused]) ++unused;
  Matrix<float> row = m.params().question_emb.row(static_cast<Eigen::Index>(unused));
  Adam<float> opt(m.params(), 0.01);
  auto g = ModelParams<float>::zeros(cfg);
  loss_and_gradient(m, Batch{{w}}, LossOptions{}, g);
  opt.step(m.params(), g);
  EXPECT_EQ(Matrix<float>(m.params().question_emb.row(static_cast<Eigen::Index>(unused))), row);
  EXPECT_NE(m.params().head_w, init_params<float>(cfg, 3).head_w);
}

TEST(Epoch, DeterministicTrajectory) {
  auto cfg = small_config(16, 1, 2);
  cfg.dropout = 0.1;
  std::mt19937_64 rng(4);
  std::vector<Window> ws;
  for (int i = 0; i < 6; ++i) ws.push_back(random_window(8, 16, 12, 4, rng));
  TrainConfig tc;
  tc.batch_size = 2;
  auto run = [&] {
    Decoder<float> m(cfg, init_params<float>(cfg, 5));
    Adam<float> opt(m.params(), tc.learning_rate);
    std::vector<double> losses;
    for (std::size_t e = 0; e < 3; ++e) losses.push_back(train_epoch(m, opt, ws, tc, e).loss.total);
    return losses;
  };
  EXPECT_EQ(run(), run());
}

TEST(Epoch, OverfitsTinyFixture) {
  auto cfg = small_config(32, 2, 4);
  std::mt19937_64 rng(5);
  std::vector<Window> ws;
  for (int i = 0; i < 4; ++i) ws.push_back(random_window(10, 20, 12, 4, rng));
  TrainConfig tc;
  tc.batch_size = 4;
  tc.learning_rate = 0.01;
  Decoder<float> m(cfg, init_params<float>(cfg, 6));
  Adam<float> opt(m.params(), tc.learning_rate);
  double pred = 1.0;
  for (std::size_t e = 0; e < 200 && pred >= 0.1; ++e)
    pred = train_epoch(m, opt, ws, tc, e).loss.pred_loss;
  EXPECT_LT(pred, 0.1);
}

TEST(TrainConfig, Validation) {
  TrainConfig tc;
  tc.learning_rate = -1;
  EXPECT_THROW(tc.validate(), ConfigError);
  tc = TrainConfig{};
  tc.batch_size = 0;
  EXPECT_THROW(tc.validate(), ConfigError);
}

TEST(Checkpoint, RoundTrip) {
  auto cfg = small_config(16, 2, 2, SkillMode::kAdditive);
  cfg.num_questions = 7;
  auto p = init_params<float>(cfg, 7);
  auto path = std::filesystem::temp_directory_path() / "aakt_ckpt_rt" / "m.ckpt";
  save_checkpoint(path, cfg, p);
  auto ck = load_checkpoint(path);
  cfg.rotary_dim = cfg.effective_rotary_dim();
  EXPECT_EQ(ck.config, cfg);
  auto a = p.named_tensors();
  auto b = ck.params.named_tensors();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i].second, *b[i].second);
  std::filesystem::remove_all(path.parent_path());
}

TEST(Fit, FoldsProduceCheckpointsAndReport) {
  SynthConfig sc;
  sc.n_students = 30;
  sc.min_length = 10;
  sc.max_length = 20;
  auto synth = generate(sc);
  auto splits = split_cross_validation(synth.dataset.sequences.size(), 3, 1);
  ModelConfig mc;
  mc.dim = 16;
  mc.num_blocks = 1;
  mc.num_heads = 2;
  TrainConfig tc;
  tc.max_epochs = 2;
  tc.batch_size = 8;
  tc.window = WindowSpec{20, 0.5};
  auto dir = std::filesystem::temp_directory_path() / "aakt_fit_ckpts";
  std::filesystem::remove_all(dir);
  FitOptions opts;
  opts.checkpoint_dir = dir;
  auto report = fit(synth.dataset, splits, mc, tc, opts);
  ASSERT_EQ(report.folds.size(), 3u);
  for (const auto& f : report.folds) {
    EXPECT_FALSE(f.failed) << f.error;
    EXPECT_TRUE(std::filesystem::exists(f.checkpoint));
  }
  EXPECT_TRUE(report.mean_auc.has_value());
  auto again = fit(synth.dataset, splits, mc, tc, opts);
  EXPECT_EQ(fit_report_to_json(report), fit_report_to_json(again));
  std::filesystem::remove_all(dir);
}
