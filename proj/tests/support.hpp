#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

#include "aakt/ingest.hpp"
#include "aakt/model.hpp"
#include "aakt/seqbuild.hpp"

namespace aakt::testing {

inline StudentSequence random_sequence(std::size_t n, std::size_t n_questions,
                                       std::size_t n_skills, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> q(0, static_cast<int>(n_questions) - 1);
  std::uniform_int_distribution<int> sk(0, static_cast<int>(n_skills) - 1);
  std::uniform_int_distribution<int> c(0, 1);
  std::uniform_int_distribution<int> t(0, 300000);
  StudentSequence s{"r", {}};
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<SkillId> skills{sk(rng)};
    if (c(rng)) {
      SkillId extra = sk(rng);
      if (extra != skills[0]) skills.push_back(extra);
    }
    std::sort(skills.begin(), skills.end());
    s.interactions.push_back({q(rng), skills, c(rng), t(rng), static_cast<std::int64_t>(i)});
  }
  return s;
}

/// Single window holding `n` interactions padded to `max_len` tokens.
inline Window random_window(std::size_t n, std::size_t max_len, std::size_t n_questions,
                            std::size_t n_skills, std::mt19937_64& rng) {
  auto tokens = build_alternate_sequence(random_sequence(n, n_questions, n_skills, rng),
                                         TimeNormalization{});
  return window_train(tokens, WindowSpec{max_len, 0.0}).at(0);
}

inline ModelConfig small_config(std::size_t dim, std::size_t blocks, std::size_t heads,
                                SkillMode mode = SkillMode::kAuxiliary) {
  ModelConfig c;
  c.num_questions = 12;
  c.num_skills = 4;
  c.dim = dim;
  c.num_blocks = blocks;
  c.num_heads = heads;
  c.skill_mode = mode;
  c.dropout = 0.0;
  return c;
}

}  // namespace aakt::testing
