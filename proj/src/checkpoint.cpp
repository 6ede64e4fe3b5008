#include "aakt/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "aakt/errors.hpp"
#include "json.hpp"

namespace aakt {

namespace {

constexpr std::array<char, 8> kMagic = {'A', 'A', 'K', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<std::uint8_t, sizeof(U)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<U>(bytes);
  }
  return v;
}

void put_u32(std::ostream& out, std::uint32_t v) {
  v = to_little(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
    throw DataError("truncated checkpoint");
  return to_little(v);
}

std::string get_bytes(std::istream& in, std::uint32_t n) {
  std::string s(n, '\0');
  if (n && !in.read(s.data(), n)) throw DataError("truncated checkpoint");
  return s;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["num_questions"] = c.num_questions;
  j["num_skills"] = c.num_skills;
  j["dim"] = c.dim;
  j["num_blocks"] = c.num_blocks;
  j["num_heads"] = c.num_heads;
  j["rotary_dim"] = c.effective_rotary_dim();
  j["ffn_mult"] = c.ffn_mult;
  j["dropout"] = c.dropout;
  j["rope_base"] = c.rope_base;
  j["init_std"] = c.init_std;
  j["skill_mode"] = to_string(c.skill_mode);
  j["use_time"] = c.use_time;
  j["time_factor_ms"] = c.time.time_factor_ms;
  j["time_clip_ms"] = c.time.clip_max_ms;
  return j.dump();
}

ModelConfig model_config_from_json(std::string_view text) {
  auto j = nlohmann::json::parse(text);
  ModelConfig c;
  c.num_questions = j.at("num_questions");
  c.num_skills = j.at("num_skills");
  c.dim = j.at("dim");
  c.num_blocks = j.at("num_blocks");
  c.num_heads = j.at("num_heads");
  c.rotary_dim = j.at("rotary_dim");
  c.ffn_mult = j.at("ffn_mult");
  c.dropout = j.at("dropout");
  c.rope_base = j.at("rope_base");
  c.init_std = j.value("init_std", 0.02);
  c.skill_mode = skill_mode_from_string(j.at("skill_mode"));
  c.use_time = j.at("use_time");
  c.time.time_factor_ms = j.at("time_factor_ms");
  c.time.clip_max_ms = j.at("time_clip_ms");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config,
                     const ModelParams<float>& params) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMagic.data(), kMagic.size());
  put_u32(out, kVersion);
  std::string header = model_config_to_json(config);
  put_u32(out, static_cast<std::uint32_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  auto tensors = params.named_tensors();
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, m] : tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(m->rows()));
    put_u32(out, static_cast<std::uint32_t>(m->cols()));
    for (Eigen::Index i = 0; i < m->size(); ++i) {
      auto bits = to_little(std::bit_cast<std::uint32_t>(m->data()[i]));
      out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic)
    throw DataError(path.string() + " is not a checkpoint");
  if (auto v = get_u32(in); v != kVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(v));
  Checkpoint ck;
  ck.config = model_config_from_json(get_bytes(in, get_u32(in)));
  ck.config.validate();
  ck.params = ModelParams<float>::zeros(ck.config);
  auto tensors = ck.params.named_tensors();
  if (get_u32(in) != tensors.size())
    throw DataError("checkpoint tensor count does not match its config");
  for (auto& [name, m] : tensors) {
    std::string stored = get_bytes(in, get_u32(in));
    if (stored != name)
      throw DataError("checkpoint tensor '" + stored + "' where '" + name + "' expected");
    auto rows = get_u32(in);
    auto cols = get_u32(in);
    if (rows != m->rows() || cols != m->cols())
      throw DataError("checkpoint tensor '" + name + "' has the wrong shape");
    for (Eigen::Index i = 0; i < m->size(); ++i)
      m->data()[i] = std::bit_cast<float>(get_u32(in));
  }
  return ck;
}

}  // namespace aakt
