#include "aakt/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "aakt/errors.hpp"
#include "aakt/eval.hpp"

namespace aakt {

const SkillParams& SynthConfig::skill(std::size_t s) const {
  return per_skill.empty() ? skill_defaults : per_skill.at(s);
}

void SynthConfig::validate() const {
  if (n_students == 0 || n_questions == 0 || n_skills == 0)
    throw ConfigError("synthetic corpus needs students, questions and skills");
  if (!per_skill.empty() && per_skill.size() != n_skills)
    throw ConfigError("per-skill parameters must cover every skill");
  if (skills_per_question.empty() || skills_per_question.size() > n_skills)
    throw ConfigError("skills-per-question weights must cover 1..n_skills at most");
  if (std::any_of(skills_per_question.begin(), skills_per_question.end(),
                  [](double w) { return w < 0.0; }) ||
      std::accumulate(skills_per_question.begin(), skills_per_question.end(), 0.0) <= 0.0)
    throw ConfigError("skills-per-question weights must be non-negative with positive sum");
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  for (std::size_t s = 0; s < n_skills; ++s) {
    const auto& k = skill(s);
    if (!prob(k.p_init) || !prob(k.p_learn) || !prob(k.p_guess) || !prob(k.p_slip))
      throw ConfigError("skill probabilities must lie in [0, 1]");
  }
  if (min_length == 0 || min_length > max_length)
    throw ConfigError("sequence lengths must satisfy 1 <= min <= max");
  if (time_log_sd_correct < 0.0 || time_log_sd_incorrect < 0.0)
    throw ConfigError("time spreads must be non-negative");
}

SynthOutput generate(const SynthConfig& config) {
  config.validate();
  SynthOutput out;
  out.dataset.vocab = Vocabulary::identity(config.n_questions, config.n_skills);

  std::mt19937_64 master(config.seed);
  std::discrete_distribution<std::size_t> n_skill_dist(config.skills_per_question.begin(),
                                                       config.skills_per_question.end());
  std::vector<SkillId> all_skills(config.n_skills);
  std::iota(all_skills.begin(), all_skills.end(), SkillId{0});
  out.question_skills.resize(config.n_questions);
  for (auto& qs : out.question_skills) {
    std::size_t k = n_skill_dist(master) + 1;
    std::vector<SkillId> pool = all_skills;
    std::shuffle(pool.begin(), pool.end(), master);
    qs.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(qs.begin(), qs.end());
  }

  const int width = static_cast<int>(std::to_string(config.n_students).size());
  for (std::size_t st = 0; st < config.n_students; ++st) {
    // Per-student stream so students can be generated independently.
    std::seed_seq seq{config.seed, static_cast<std::uint64_t>(st), std::uint64_t{0x53594e54}};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> len_dist(config.min_length, config.max_length);
    std::uniform_int_distribution<QuestionId> q_dist(
        0, static_cast<QuestionId>(config.n_questions - 1));
    std::normal_distribution<double> z(0.0, 1.0);

    std::vector<bool> mastered(config.n_skills);
    for (std::size_t s = 0; s < config.n_skills; ++s) mastered[s] = u(rng) < config.skill(s).p_init;

    char id[32];
    std::snprintf(id, sizeof id, "s%0*zu", width, st);
    StudentSequence seq_out{id, {}};
    std::vector<TruthRecord> truth;
    const std::size_t len = len_dist(rng);
    for (std::size_t t = 0; t < len; ++t) {
      QuestionId q = q_dist(rng);
      const auto& skills = out.question_skills[static_cast<std::size_t>(q)];
      bool all = true;
      double guess = 0.0, slip = 0.0;
      for (auto s : skills) {
        all = all && mastered[static_cast<std::size_t>(s)];
        guess += config.skill(static_cast<std::size_t>(s)).p_guess;
        slip += config.skill(static_cast<std::size_t>(s)).p_slip;
      }
      guess /= static_cast<double>(skills.size());
      slip /= static_cast<double>(skills.size());
      const double p = all ? 1.0 - slip : guess;
      const int correct = u(rng) < p ? 1 : 0;
      const double log_ms = correct
          ? config.time_log_mean_correct + config.time_log_sd_correct * z(rng)
          : config.time_log_mean_incorrect + config.time_log_sd_incorrect * z(rng);

      Interaction it;
      it.question = q;
      it.skills = skills;
      it.correct = correct;
      it.time_ms = std::llround(std::exp(log_ms));
      it.order_key = static_cast<std::int64_t>(t);
      seq_out.interactions.push_back(std::move(it));
      truth.push_back({all, p});

      for (auto s : skills) {
        auto si = static_cast<std::size_t>(s);
        if (!mastered[si] && u(rng) < config.skill(si).p_learn) mastered[si] = true;
      }
    }
    out.dataset.sequences.push_back(std::move(seq_out));
    out.truth.push_back(std::move(truth));
  }
  return out;
}

std::optional<double> bayes_optimal_auc(const SynthOutput& synth,
                                        std::span<const std::size_t> students) {
  std::vector<std::size_t> all;
  if (students.empty()) {
    all.resize(synth.dataset.sequences.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    students = all;
  }
  std::vector<double> scores;
  std::vector<int> labels;
  for (auto s : students) {
    const auto& seq = synth.dataset.sequences.at(s);
    const auto& tr = synth.truth.at(s);
    for (std::size_t i = 0; i < seq.size(); ++i) {
      scores.push_back(tr[i].p_correct);
      labels.push_back(seq.interactions[i].correct);
    }
  }
  return auc(scores, labels);
}

void save_synth(const std::filesystem::path& dir, const SynthOutput& synth) {
  save_dataset(dir, synth.dataset);
  std::ofstream out(dir / "truth.tsv");
  if (!out) throw std::runtime_error("cannot write " + (dir / "truth.tsv").string());
  out.precision(17);
  out << "student_id\tinteraction\tmastered\tp_correct\n";
  for (std::size_t s = 0; s < synth.truth.size(); ++s)
    for (std::size_t i = 0; i < synth.truth[s].size(); ++i)
      out << synth.dataset.sequences[s].student_id << '\t' << i << '\t'
          << (synth.truth[s][i].mastered ? 1 : 0) << '\t' << synth.truth[s][i].p_correct
          << '\n';
}

std::vector<std::vector<TruthRecord>> load_truth(const std::filesystem::path& path,
                                                 const Dataset& dataset) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t s = 0; s < dataset.sequences.size(); ++s)
    index[dataset.sequences[s].student_id] = s;
  std::vector<std::vector<TruthRecord>> truth(dataset.sequences.size());
  for (std::size_t s = 0; s < truth.size(); ++s) truth[s].resize(dataset.sequences[s].size());
  std::string line;
  std::getline(in, line);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string student;
    std::size_t i = 0;
    int mastered = 0;
    double p = 0.0;
    if (!std::getline(ls, student, '\t') || !(ls >> i >> mastered >> p))
      throw ParseError(line_no, "malformed truth row");
    auto it = index.find(student);
    if (it == index.end() || i >= truth[it->second].size())
      throw ParseError(line_no, "truth row does not match the dataset");
    truth[it->second][i] = {mastered != 0, p};
  }
  return truth;
}

}  // namespace aakt
