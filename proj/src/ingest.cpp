#include "aakt/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "aakt/errors.hpp"
#include "json.hpp"

namespace aakt {

namespace {

constexpr const char* kDatasetFile = "dataset.tsv";
constexpr const char* kVocabFile = "vocab.json";

// Splits one delimited record, honoring double-quoted fields ("" escapes a
// quote inside a quoted field).
std::vector<std::string> split_record(std::string_view line, char delim) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == delim) {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

std::optional<double> to_number(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v))
    return std::nullopt;
  return v;
}

std::optional<std::int64_t> to_int(std::string_view s) {
  s = trim(s);
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
    return std::nullopt;
  return v;
}

std::size_t column_index(const std::vector<std::string>& header,
                         const std::string& name) {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw ConfigError("unknown column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

bool getline_stripped(std::istream& in, std::string& line) {
  if (!std::getline(in, line)) return false;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return true;
}

}  // namespace

// ---------------------------------------------------------------------------
// Vocabulary

QuestionId Vocabulary::intern_question(std::string_view raw) {
  auto [it, inserted] = question_index_.try_emplace(
      std::string(raw), static_cast<QuestionId>(questions_.size()));
  if (inserted) questions_.emplace_back(raw);
  return it->second;
}

SkillId Vocabulary::intern_skill(std::string_view raw) {
  auto [it, inserted] = skill_index_.try_emplace(
      std::string(raw), static_cast<SkillId>(skills_.size()));
  if (inserted) skills_.emplace_back(raw);
  return it->second;
}

std::optional<QuestionId> Vocabulary::find_question(std::string_view raw) const {
  auto it = question_index_.find(std::string(raw));
  if (it == question_index_.end()) return std::nullopt;
  return it->second;
}

std::optional<SkillId> Vocabulary::find_skill(std::string_view raw) const {
  auto it = skill_index_.find(std::string(raw));
  if (it == skill_index_.end()) return std::nullopt;
  return it->second;
}

Vocabulary Vocabulary::identity(std::size_t n_questions, std::size_t n_skills) {
  Vocabulary v;
  for (std::size_t i = 0; i < n_questions; ++i) v.intern_question(std::to_string(i));
  for (std::size_t i = 0; i < n_skills; ++i) v.intern_skill(std::to_string(i));
  return v;
}

std::string Vocabulary::to_json() const {
  nlohmann::json j;
  j["questions"] = questions_;
  j["skills"] = skills_;
  return j.dump(1);
}

Vocabulary Vocabulary::from_json(std::string_view text) {
  auto j = nlohmann::json::parse(text);
  Vocabulary v;
  for (const auto& q : j.at("questions")) v.intern_question(q.get<std::string>());
  for (const auto& s : j.at("skills")) v.intern_skill(s.get<std::string>());
  if (v.num_questions() != j.at("questions").size() ||
      v.num_skills() != j.at("skills").size())
    throw DataError("vocabulary contains duplicate entries");
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json() << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

// ---------------------------------------------------------------------------
// Dataset

std::size_t Dataset::num_interactions() const {
  std::size_t n = 0;
  for (const auto& s : sequences) n += s.size();
  return n;
}

std::vector<std::vector<SkillId>> Dataset::question_skills() const {
  std::vector<std::set<SkillId>> acc(vocab.num_questions());
  for (const auto& s : sequences)
    for (const auto& it : s.interactions) {
      if (static_cast<std::size_t>(it.question) >= acc.size())
        acc.resize(static_cast<std::size_t>(it.question) + 1);
      acc[it.question].insert(it.skills.begin(), it.skills.end());
    }
  std::vector<std::vector<SkillId>> out;
  out.reserve(acc.size());
  for (auto& s : acc) out.emplace_back(s.begin(), s.end());
  return out;
}

// ---------------------------------------------------------------------------
// Parsing

ParseResult parse_interactions(std::istream& in, const ColumnMap& columns,
                               Vocabulary vocab) {
  std::string line;
  if (!getline_stripped(in, line)) throw ParseError(1, "missing header row");
  // Tolerate a UTF-8 byte-order mark.
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
  std::vector<std::string> header = split_record(line, columns.delimiter);
  for (auto& h : header) h = std::string(trim(h));

  const std::size_t c_student = column_index(header, columns.student);
  const std::size_t c_question = column_index(header, columns.question);
  const std::size_t c_skills = column_index(header, columns.skills);
  const std::size_t c_correct = column_index(header, columns.correct);
  const std::size_t c_time = column_index(header, columns.time);
  std::optional<std::size_t> c_order;
  if (!columns.order.empty()) c_order = column_index(header, columns.order);

  ParseResult result;
  std::unordered_map<std::string, std::size_t> student_index;
  auto& seqs = result.dataset.sequences;

  std::size_t line_no = 1;
  while (getline_stripped(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_record(line, columns.delimiter);
    if (fields.size() != header.size())
      throw ParseError(line_no, "expected " + std::to_string(header.size()) +
                                    " fields, found " +
                                    std::to_string(fields.size()));

    auto correct = to_number(fields[c_correct]);
    if (!correct) throw ParseError(line_no, "non-numeric correctness");
    auto time = to_number(fields[c_time]);
    if (!time) throw ParseError(line_no, "non-numeric time");
    std::int64_t order_key = static_cast<std::int64_t>(line_no);
    if (c_order) {
      auto ok = to_int(fields[*c_order]);
      if (!ok) throw ParseError(line_no, "non-integer order key");
      order_key = *ok;
    }
    std::string_view student = trim(fields[c_student]);
    std::string_view question = trim(fields[c_question]);
    if (student.empty() || question.empty())
      throw ParseError(line_no, "empty student or question id");

    if (*correct != 0.0 && *correct != 1.0) {
      result.rejected.push_back({line_no, "correctness not in {0,1}"});
      continue;
    }
    if (*time < 0.0) {
      result.rejected.push_back({line_no, "negative time"});
      continue;
    }
    std::vector<std::string_view> skill_tokens;
    {
      std::string_view rest = fields[c_skills];
      while (true) {
        auto pos = rest.find(columns.skill_delimiter);
        auto tok = trim(rest.substr(0, pos));
        if (!tok.empty()) skill_tokens.push_back(tok);
        if (pos == std::string_view::npos) break;
        rest.remove_prefix(pos + 1);
      }
    }
    if (skill_tokens.empty()) {
      result.rejected.push_back({line_no, "empty skill list"});
      continue;
    }

    Interaction it;
    it.question = vocab.intern_question(question);
    for (auto tok : skill_tokens) it.skills.push_back(vocab.intern_skill(tok));
    std::sort(it.skills.begin(), it.skills.end());
    it.skills.erase(std::unique(it.skills.begin(), it.skills.end()),
                    it.skills.end());
    it.correct = static_cast<int>(*correct);
    it.time_ms = static_cast<std::int64_t>(std::llround(*time));
    it.order_key = order_key;

    auto [sit, inserted] =
        student_index.try_emplace(std::string(student), seqs.size());
    if (inserted) seqs.push_back(StudentSequence{std::string(student), {}});
    seqs[sit->second].interactions.push_back(std::move(it));
    ++result.accepted_rows;
  }

  for (auto& s : seqs)
    std::stable_sort(s.interactions.begin(), s.interactions.end(),
                     [](const Interaction& a, const Interaction& b) {
                       return a.order_key < b.order_key;
                     });
  for (const auto& r : result.rejected)
    spdlog::warn("rejected row at line {}: {}", r.line, r.reason);
  result.dataset.vocab = std::move(vocab);
  return result;
}

// ---------------------------------------------------------------------------
// Cleaning

StudentSequence merge_multiskill_rows(const StudentSequence& seq) {
  StudentSequence out{seq.student_id, {}};
  out.interactions.reserve(seq.size());
  for (const auto& it : seq.interactions) {
    if (!out.interactions.empty()) {
      auto& prev = out.interactions.back();
      if (prev.order_key == it.order_key && prev.question == it.question &&
          prev.time_ms == it.time_ms) {
        if (prev.correct != it.correct)
          throw DataError("student " + seq.student_id + ": duplicate rows for question " +
                          std::to_string(it.question) + " at order " +
                          std::to_string(it.order_key) +
                          " disagree on correctness");
        std::vector<SkillId> merged;
        std::set_union(prev.skills.begin(), prev.skills.end(), it.skills.begin(),
                       it.skills.end(), std::back_inserter(merged));
        prev.skills = std::move(merged);
        continue;
      }
    }
    out.interactions.push_back(it);
  }
  return out;
}

Dataset merge_multiskill_rows(Dataset dataset) {
  for (auto& s : dataset.sequences) s = merge_multiskill_rows(s);
  return dataset;
}

Dataset filter_short_sequences(Dataset dataset, std::size_t min_interactions) {
  auto& seqs = dataset.sequences;
  std::erase_if(seqs, [&](const StudentSequence& s) {
    return s.size() < min_interactions;
  });
  if (seqs.empty() && min_interactions > 0)
    spdlog::warn("no sequence has at least {} interactions; dataset is empty",
                 min_interactions);
  return dataset;
}

std::vector<FoldSplit> split_cross_validation(std::size_t n_students, int folds,
                                              std::uint64_t seed) {
  if (folds < 2) throw ConfigError("folds must be >= 2");
  if (n_students < static_cast<std::size_t>(folds))
    throw ConfigError("fewer students (" + std::to_string(n_students) +
                      ") than folds (" + std::to_string(folds) + ")");
  std::vector<std::size_t> order(n_students);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::size_t> fold_of(n_students);
  for (std::size_t i = 0; i < n_students; ++i)
    fold_of[order[i]] = i % static_cast<std::size_t>(folds);

  std::vector<FoldSplit> splits(static_cast<std::size_t>(folds));
  for (std::size_t s = 0; s < n_students; ++s)
    for (std::size_t f = 0; f < splits.size(); ++f)
      (fold_of[s] == f ? splits[f].test : splits[f].train).push_back(s);
  return splits;
}

Dataset select_students(const Dataset& dataset,
                        std::span<const std::size_t> indices) {
  Dataset out;
  out.vocab = dataset.vocab;
  out.sequences.reserve(indices.size());
  for (auto i : indices) out.sequences.push_back(dataset.sequences.at(i));
  return out;
}

// ---------------------------------------------------------------------------
// Statistics

DatasetStats compute_dataset_stats(const Dataset& dataset) {
  if (dataset.sequences.empty()) throw DataError("statistics of an empty dataset");
  DatasetStats st;
  st.students = dataset.sequences.size();
  std::map<QuestionId, std::set<SkillId>> q_skills;
  std::map<SkillId, std::set<QuestionId>> s_questions;
  std::array<std::size_t, 5> buckets{};
  for (const auto& seq : dataset.sequences) {
    std::size_t b = 0;
    while (b < DatasetStats::kBucketEdges.size() &&
           seq.size() >= DatasetStats::kBucketEdges[b])
      ++b;
    ++buckets[b];
    for (const auto& it : seq.interactions) {
      ++st.records;
      st.correct_records += static_cast<std::size_t>(it.correct);
      for (auto s : it.skills) {
        q_skills[it.question].insert(s);
        s_questions[s].insert(it.question);
      }
    }
  }
  st.questions = q_skills.size();
  st.skills = s_questions.size();
  st.correct_rate = st.records ? static_cast<double>(st.correct_records) /
                                     static_cast<double>(st.records)
                               : 0.0;
  double sum_q = 0.0;
  for (const auto& [s, qs] : s_questions) sum_q += static_cast<double>(qs.size());
  double sum_s = 0.0;
  for (const auto& [q, ss] : q_skills) sum_s += static_cast<double>(ss.size());
  st.avg_questions_per_skill = st.skills ? sum_q / static_cast<double>(st.skills) : 0.0;
  st.avg_skills_per_question =
      st.questions ? sum_s / static_cast<double>(st.questions) : 0.0;
  for (std::size_t b = 0; b < buckets.size(); ++b)
    st.length_share_pct[b] =
        100.0 * static_cast<double>(buckets[b]) / static_cast<double>(st.students);
  return st;
}

std::string format_stats_table(const DatasetStats& st) {
  static constexpr std::array<const char*, 5> kBucketNames = {
      "(0,10)", "[10,100)", "[100,1000)", "[1000,10000)", "[10000,+inf)"};
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  auto row = [&os](std::string label, auto value, const char* unit = "") {
    label.resize(40, ' ');
    os << label << value << unit << '\n';
  };
  row("#Students", st.students);
  row("#Questions", st.questions);
  row("#Skills", st.skills);
  row("#Records", st.records);
  row("#Avg. Questions per Skill", st.avg_questions_per_skill);
  row("#Avg. Skills per Question", st.avg_skills_per_question);
  row("%Correct Answering Records", 100.0 * st.correct_rate, "%");
  row("%Incorrect Answering Records", 100.0 * (1.0 - st.correct_rate), "%");
  for (std::size_t b = 0; b < kBucketNames.size(); ++b)
    row(std::string("%Sequences within Length ") + kBucketNames[b], st.length_share_pct[b], "%");
  return os.str();
}

std::string stats_to_json(const DatasetStats& st) {
  nlohmann::json j;
  j["students"] = st.students;
  j["questions"] = st.questions;
  j["skills"] = st.skills;
  j["records"] = st.records;
  j["correct_records"] = st.correct_records;
  j["correct_rate"] = st.correct_rate;
  j["avg_questions_per_skill"] = st.avg_questions_per_skill;
  j["avg_skills_per_question"] = st.avg_skills_per_question;
  j["length_share_pct"] = st.length_share_pct;
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// Canonical format

void write_canonical(std::ostream& out, const Dataset& dataset) {
  out << "student_id\tquestion_idx\tskill_idx\tcorrect\ttime_ms\n";
  for (const auto& seq : dataset.sequences)
    for (const auto& it : seq.interactions) {
      out << seq.student_id << '\t' << it.question << '\t';
      for (std::size_t i = 0; i < it.skills.size(); ++i)
        out << (i ? ";" : "") << it.skills[i];
      out << '\t' << it.correct << '\t' << it.time_ms << '\n';
    }
}

Dataset read_canonical(std::istream& in, const Vocabulary& vocab) {
  ColumnMap cm;
  cm.student = "student_id";
  cm.question = "question_idx";
  cm.skills = "skill_idx";
  cm.correct = "correct";
  cm.time = "time_ms";
  cm.delimiter = '\t';
  // Indices are already dense; parse into a scratch vocabulary and translate
  // the scratch indices back to the numeric values they spell.
  ParseResult parsed = parse_interactions(in, cm);
  if (!parsed.rejected.empty())
    throw DataError("canonical dataset contains " +
                    std::to_string(parsed.rejected.size()) + " invalid rows");
  const auto& scratch = parsed.dataset.vocab;
  auto numeric = [](const std::string& raw, std::size_t limit, const char* what) {
    auto v = to_int(raw);
    if (!v || *v < 0 || static_cast<std::size_t>(*v) >= limit)
      throw DataError(std::string(what) + " index '" + raw +
                      "' outside the vocabulary");
    return static_cast<std::int32_t>(*v);
  };
  std::vector<QuestionId> q_map;
  for (const auto& raw : scratch.questions())
    q_map.push_back(numeric(raw, vocab.num_questions(), "question"));
  std::vector<SkillId> s_map;
  for (const auto& raw : scratch.skills())
    s_map.push_back(numeric(raw, vocab.num_skills(), "skill"));

  Dataset out;
  out.vocab = vocab;
  out.sequences = std::move(parsed.dataset.sequences);
  for (auto& seq : out.sequences) {
    std::int64_t pos = 0;
    for (auto& it : seq.interactions) {
      it.question = q_map[it.question];
      for (auto& s : it.skills) s = s_map[s];
      std::sort(it.skills.begin(), it.skills.end());
      it.order_key = pos++;
    }
  }
  return out;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& dataset) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / kDatasetFile);
  if (!out) throw std::runtime_error("cannot write " + (dir / kDatasetFile).string());
  write_canonical(out, dataset);
  dataset.vocab.save(dir / kVocabFile);
}

Dataset load_dataset(const std::filesystem::path& dir) {
  auto vocab = Vocabulary::load(dir / kVocabFile);
  std::ifstream in(dir / kDatasetFile);
  if (!in) throw std::runtime_error("cannot read " + (dir / kDatasetFile).string());
  return read_canonical(in, vocab);
}

}  // namespace aakt
