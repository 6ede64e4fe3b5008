#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <set>
#include <sstream>

#include "aakt/errors.hpp"
#include "aakt/ingest.hpp"

using namespace aakt;

namespace {

ParseResult parse(const std::string& text, ColumnMap cols = {}) {
  std::istringstream in(text);
  return parse_interactions(in, cols);
}

Dataset with_lengths(std::initializer_list<std::size_t> lengths) {
  Dataset d;
  std::size_t s = 0;
  for (auto n : lengths) {
    StudentSequence seq{"s" + std::to_string(s++), {}};
    for (std::size_t i = 0; i < n; ++i)
      seq.interactions.push_back({0, {0}, 1, 1000, static_cast<std::int64_t>(i)});
    d.sequences.push_back(seq);
  }
  d.vocab = Vocabulary::identity(1, 1);
  return d;
}

}  // namespace

TEST(Parse, GroupsRowsByStudent) {
  auto r = parse(
      "user_id,problem_id,skill_id,correct,ms_first_response\n"
      "A,10,1,1,500\n"
      "B,11,2,0,700\n"
      "A,12,1,0,900\n");
  ASSERT_EQ(r.dataset.sequences.size(), 2u);
  EXPECT_EQ(r.dataset.sequences[0].student_id, "A");
  EXPECT_EQ(r.dataset.sequences[0].size(), 2u);
  EXPECT_EQ(r.dataset.sequences[1].size(), 1u);
  EXPECT_EQ(r.accepted_rows, 3u);
  EXPECT_TRUE(r.rejected.empty());
}

TEST(Parse, SplitsSkillList) {
  auto r = parse(
      "user_id,problem_id,skill_id,correct,ms_first_response\n"
      "A,10,3;7,1,500\n");
  const auto& it = r.dataset.sequences.at(0).interactions.at(0);
  ASSERT_EQ(it.skills.size(), 2u);
  EXPECT_EQ(r.dataset.vocab.skills()[it.skills[0]], "3");
  EXPECT_EQ(r.dataset.vocab.skills()[it.skills[1]], "7");
}

TEST(Parse, RejectsNonBinaryCorrectness) {
  auto r = parse(
      "user_id,problem_id,skill_id,correct,ms_first_response\n"
      "A,10,1,1,500\n"
      "A,11,1,2,500\n"
      "A,12,1,0,500\n");
  EXPECT_EQ(r.rejected.size(), 1u);
  EXPECT_EQ(r.rejected[0].line, 3u);
  EXPECT_EQ(r.accepted_rows, 2u);
  EXPECT_EQ(r.dataset.sequences.at(0).size(), 2u);
}

TEST(Parse, MalformedRowReportsLine) {
  try {
    parse("user_id,problem_id,skill_id,correct,ms_first_response\nA,10,1,1,500\nA,11,1\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(Parse, UnknownColumnIsConfigError) {
  ColumnMap cols;
  cols.time = "duration";
  EXPECT_THROW(parse("user_id,problem_id,skill_id,correct,ms_first_response\n", cols),
               ConfigError);
}

TEST(Parse, TabDelimitedWithOrderColumn) {
  ColumnMap cols;
  cols.delimiter = '\t';
  cols.order = "order_id";
  auto r = parse(
      "order_id\tuser_id\tproblem_id\tskill_id\tcorrect\tms_first_response\n"
      "3\tA\t12\t1\t0\t900\n"
      "1\tA\t10\t1\t1\t500\n",
      cols);
  const auto& seq = r.dataset.sequences.at(0);
  EXPECT_EQ(r.dataset.vocab.questions()[seq.interactions[0].question], "10");
  EXPECT_EQ(r.dataset.vocab.questions()[seq.interactions[1].question], "12");
}

TEST(Merge, CombinesDuplicateRows) {
  StudentSequence s{"A", {{5, {1}, 1, 100, 0}, {5, {2}, 1, 100, 0}}};
  auto m = merge_multiskill_rows(s);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m.interactions[0].question, 5);
  EXPECT_EQ(m.interactions[0].skills, (std::vector<SkillId>{1, 2}));
}

TEST(Merge, IdentityWithoutDuplicates) {
  StudentSequence s{"A", {{5, {1}, 1, 100, 0}, {6, {2}, 0, 100, 1}}};
  EXPECT_EQ(merge_multiskill_rows(s), s);
}

TEST(Merge, ThreeWayGroupDropsTwo) {
  StudentSequence s{"A",
                    {{1, {0}, 0, 50, 0},
                     {5, {3}, 1, 100, 1},
                     {5, {1}, 1, 100, 1},
                     {5, {2}, 1, 100, 1},
                     {2, {0}, 1, 70, 2}}};
  auto m = merge_multiskill_rows(s);
  EXPECT_EQ(m.size(), s.size() - 2);
  EXPECT_EQ(m.interactions[1].skills, (std::vector<SkillId>{1, 2, 3}));
}

TEST(Merge, ConflictingCorrectnessThrows) {
  StudentSequence s{"A", {{5, {1}, 1, 100, 0}, {5, {2}, 0, 100, 0}}};
  EXPECT_THROW(merge_multiskill_rows(s), DataError);
}

TEST(Filter, DropsShortSequences) {
  auto d = filter_short_sequences(with_lengths({1, 9, 10, 50}), 10);
  std::vector<std::size_t> lens;
  for (const auto& s : d.sequences) lens.push_back(s.size());
  EXPECT_EQ(lens, (std::vector<std::size_t>{10, 50}));
}

TEST(Filter, ZeroIsIdentity) {
  auto d = with_lengths({1, 9, 10, 50});
  EXPECT_EQ(filter_short_sequences(d, 0).sequences, d.sequences);
}

TEST(Filter, AllShortGivesEmpty) {
  EXPECT_TRUE(filter_short_sequences(with_lengths({1, 2, 3}), 10).sequences.empty());
}

TEST(Split, TenStudentsFiveFolds) {
  auto folds = split_cross_validation(10, 5, 1);
  ASSERT_EQ(folds.size(), 5u);
  std::set<std::size_t> seen;
  for (const auto& f : folds) {
    EXPECT_EQ(f.test.size(), 2u);
    EXPECT_EQ(f.train.size(), 8u);
    for (auto s : f.test) EXPECT_TRUE(seen.insert(s).second);
    for (auto s : f.train)
      EXPECT_EQ(std::count(f.test.begin(), f.test.end(), s), 0);
  }
  EXPECT_EQ(seen.size(), 10u);
}

TEST(Split, DeterministicForSeed) {
  auto a = split_cross_validation(100, 5, 9);
  auto b = split_cross_validation(100, 5, 9);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].test, b[i].test);
}

TEST(Split, FoldSizesFor4151Students) {
  auto folds = split_cross_validation(4151, 5, 3);
  std::multiset<std::size_t> sizes;
  for (const auto& f : folds) sizes.insert(f.test.size());
  EXPECT_EQ(sizes, (std::multiset<std::size_t>{830, 830, 830, 830, 831}));
}

TEST(Split, FewerStudentsThanFoldsThrows) {
  EXPECT_THROW(split_cross_validation(3, 5, 1), ConfigError);
}

TEST(Stats, CorrectRate) {
  Dataset d = with_lengths({4});
  d.sequences[0].interactions[3].correct = 0;
  EXPECT_DOUBLE_EQ(compute_dataset_stats(d).correct_rate, 0.75);
}

TEST(Stats, LengthBuckets) {
  auto st = compute_dataset_stats(with_lengths({5, 50}));
  EXPECT_DOUBLE_EQ(st.length_share_pct[0], 50.0);
  EXPECT_DOUBLE_EQ(st.length_share_pct[1], 50.0);
  EXPECT_DOUBLE_EQ(st.length_share_pct[2], 0.0);
}

TEST(Stats, JunyiCorrectShare) {
  // 10000 records with 8279 correct, spread over 100 students.
  Dataset d;
  d.vocab = Vocabulary::identity(1, 1);
  std::size_t k = 0;
  for (int s = 0; s < 100; ++s) {
    StudentSequence seq{"s" + std::to_string(s), {}};
    for (int i = 0; i < 100; ++i, ++k)
      seq.interactions.push_back({0, {0}, k < 8279 ? 1 : 0, 10, i});
    d.sequences.push_back(seq);
  }
  EXPECT_NEAR(compute_dataset_stats(d).correct_rate * 100.0, 82.79, 0.01);
}

TEST(Stats, EmptyDatasetThrows) {
  EXPECT_THROW(compute_dataset_stats(Dataset{}), DataError);
}

TEST(Canonical, RoundTripsThroughDirectory) {
  auto r = parse(
      "user_id,problem_id,skill_id,correct,ms_first_response\n"
      "A,10,3;7,1,500\n"
      "B,11,2,0,700\n"
      "A,12,7,0,900\n");
  auto dir = std::filesystem::temp_directory_path() / "aakt_canonical_rt";
  std::filesystem::remove_all(dir);
  save_dataset(dir, r.dataset);
  auto back = load_dataset(dir);
  ASSERT_EQ(back.sequences.size(), r.dataset.sequences.size());
  for (std::size_t s = 0; s < back.sequences.size(); ++s) {
    EXPECT_EQ(back.sequences[s].student_id, r.dataset.sequences[s].student_id);
    for (std::size_t i = 0; i < back.sequences[s].size(); ++i) {
      const auto& a = back.sequences[s].interactions[i];
      const auto& b = r.dataset.sequences[s].interactions[i];
      EXPECT_EQ(a.question, b.question);
      EXPECT_EQ(a.skills, b.skills);
      EXPECT_EQ(a.correct, b.correct);
      EXPECT_EQ(a.time_ms, b.time_ms);
    }
  }
  EXPECT_EQ(back.vocab.questions(), r.dataset.vocab.questions());
  std::filesystem::remove_all(dir);
}
