#pragma once

// Interaction-log ingestion: parsing delimited exercise logs into per-student
// sequences, ASSISTments-style multi-skill row merging, length filtering,
// student-level cross-validation splits and dataset statistics.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace aakt {

using QuestionId = std::int32_t;
using SkillId = std::int32_t;

/// One exercise record. `skills` is sorted, duplicate-free and non-empty.
struct Interaction {
  QuestionId question = 0;
  std::vector<SkillId> skills;
  int correct = 0;
  std::int64_t time_ms = 0;
  std::int64_t order_key = 0;

  bool operator==(const Interaction&) const = default;
};

struct StudentSequence {
  std::string student_id;
  std::vector<Interaction> interactions;

  std::size_t size() const { return interactions.size(); }
  bool operator==(const StudentSequence&) const = default;
};

/// Dense 0-based indices for raw question and skill identifiers. Indices are
/// assigned in first-seen order and persisted so that train and test data
/// share one embedding table.
class Vocabulary {
 public:
  QuestionId intern_question(std::string_view raw);
  SkillId intern_skill(std::string_view raw);

  std::optional<QuestionId> find_question(std::string_view raw) const;
  std::optional<SkillId> find_skill(std::string_view raw) const;

  const std::vector<std::string>& questions() const { return questions_; }
  const std::vector<std::string>& skills() const { return skills_; }
  std::size_t num_questions() const { return questions_.size(); }
  std::size_t num_skills() const { return skills_.size(); }

  /// Vocabulary whose raw ids are "0".."n-1".
  static Vocabulary identity(std::size_t n_questions, std::size_t n_skills);

  std::string to_json() const;
  static Vocabulary from_json(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  std::vector<std::string> questions_;
  std::vector<std::string> skills_;
  std::unordered_map<std::string, QuestionId> question_index_;
  std::unordered_map<std::string, SkillId> skill_index_;
};

struct Dataset {
  std::vector<StudentSequence> sequences;
  Vocabulary vocab;

  std::size_t num_interactions() const;
  /// Union of skills observed for each question, indexed by question id.
  std::vector<std::vector<SkillId>> question_skills() const;
};

/// Column names of a raw log. An empty `order` means file order.
struct ColumnMap {
  std::string student = "user_id";
  std::string question = "problem_id";
  std::string skills = "skill_id";
  std::string correct = "correct";
  std::string time = "ms_first_response";
  std::string order;
  char delimiter = ',';
  char skill_delimiter = ';';
};

struct RejectedRow {
  std::size_t line = 0;
  std::string reason;
};

struct ParseResult {
  Dataset dataset;
  std::vector<RejectedRow> rejected;
  std::size_t accepted_rows = 0;
};

/// Parses a delimited log with a header row. Rows whose correctness is not 0/1,
/// whose time is negative or whose skill list is empty are rejected and
/// recorded; structurally malformed rows throw ParseError. Passing an existing
/// vocabulary extends it, keeping previously assigned indices.
ParseResult parse_interactions(std::istream& in, const ColumnMap& columns,
                               Vocabulary vocab = {});

/// Collapses consecutive rows sharing (order_key, question, time_ms) into one
/// interaction carrying the union of their skills. Throws DataError when such
/// a group disagrees on correctness.
StudentSequence merge_multiskill_rows(const StudentSequence& seq);
Dataset merge_multiskill_rows(Dataset dataset);

Dataset filter_short_sequences(Dataset dataset, std::size_t min_interactions);

/// Student indices (into Dataset::sequences) of one cross-validation fold.
struct FoldSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Partitions students (never interactions) into `folds` disjoint test sets.
std::vector<FoldSplit> split_cross_validation(std::size_t n_students, int folds,
                                              std::uint64_t seed);

Dataset select_students(const Dataset& dataset,
                        std::span<const std::size_t> indices);

struct DatasetStats {
  static constexpr std::array<std::size_t, 4> kBucketEdges = {10, 100, 1000,
                                                              10000};

  std::size_t students = 0;
  std::size_t questions = 0;
  std::size_t skills = 0;
  std::size_t records = 0;
  std::size_t correct_records = 0;
  double correct_rate = 0.0;
  double avg_questions_per_skill = 0.0;
  double avg_skills_per_question = 0.0;
  /// Percent of sequences with length in (0,10), [10,100), [100,1000),
  /// [1000,10000), [10000,inf).
  std::array<double, 5> length_share_pct{};
};

DatasetStats compute_dataset_stats(const Dataset& dataset);
std::string format_stats_table(const DatasetStats& stats);
std::string stats_to_json(const DatasetStats& stats);

/// Canonical dataset file: tab-separated, header
/// `student_id  question_idx  skill_idx  correct  time_ms`, skill list joined
/// by ';', records grouped by student in interaction order.
void write_canonical(std::ostream& out, const Dataset& dataset);
Dataset read_canonical(std::istream& in, const Vocabulary& vocab);

void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace aakt
