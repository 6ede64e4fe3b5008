#pragma once

// BKT-style synthetic student logs with known ground truth.
//
// Each skill has initial-mastery, learn, guess and slip probabilities. A
// question is answered correctly with probability (1 - slip) when every one of
// its skills is mastered and with probability guess otherwise (guess and slip
// averaged over the question's skills). After each attempt every unmastered
// skill of the question becomes mastered with its learn probability; mastery is
// never lost. Response times are log-normal with parameters chosen by
// correctness.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aakt/ingest.hpp"

namespace aakt {

struct SkillParams {
  double p_init = 0.1;
  double p_learn = 0.15;
  double p_guess = 0.2;
  double p_slip = 0.1;
};

struct SynthConfig {
  std::size_t n_students = 500;
  std::size_t n_questions = 50;
  std::size_t n_skills = 5;
  /// Relative weight of a question having 1, 2, 3, ... skills.
  std::vector<double> skills_per_question = {0.6, 0.3, 0.1};
  SkillParams skill_defaults;
  /// Optional per-skill overrides; empty means skill_defaults everywhere.
  std::vector<SkillParams> per_skill;
  /// Log-normal time model, parameters of ln(ms).
  double time_log_mean_correct = 9.9;    // ~20 s
  double time_log_sd_correct = 0.5;
  double time_log_mean_incorrect = 10.6; // ~40 s
  double time_log_sd_incorrect = 0.6;
  /// Sequence lengths uniform in [min_length, max_length].
  std::size_t min_length = 50;
  std::size_t max_length = 150;
  std::uint64_t seed = 7;

  const SkillParams& skill(std::size_t s) const;
  void validate() const;
};

struct TruthRecord {
  bool mastered = false;
  double p_correct = 0.0;
};

struct SynthOutput {
  Dataset dataset;
  /// Aligned with dataset.sequences[i].interactions.
  std::vector<std::vector<TruthRecord>> truth;
  std::vector<std::vector<SkillId>> question_skills;
};

SynthOutput generate(const SynthConfig& config);

/// AUC of the generative correctness probability against observed labels,
/// optionally restricted to a subset of students.
std::optional<double> bayes_optimal_auc(const SynthOutput& synth,
                                        std::span<const std::size_t> students = {});

/// Writes dataset.tsv, vocab.json and truth.tsv into `dir`.
void save_synth(const std::filesystem::path& dir, const SynthOutput& synth);
std::vector<std::vector<TruthRecord>> load_truth(const std::filesystem::path& path,
                                                 const Dataset& dataset);

}  // namespace aakt
