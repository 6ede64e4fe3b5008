#include "aakt/model.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "aakt/errors.hpp"

namespace aakt {

const char* to_string(SkillMode mode) {
  switch (mode) {
    case SkillMode::kAuxiliary: return "auxiliary";
    case SkillMode::kAdditive: return "additive";
    case SkillMode::kNone: return "none";
  }
  return "?";
}

SkillMode skill_mode_from_string(const std::string& name) {
  if (name == "auxiliary") return SkillMode::kAuxiliary;
  if (name == "additive") return SkillMode::kAdditive;
  if (name == "none") return SkillMode::kNone;
  throw ConfigError("unknown skill mode '" + name + "'");
}

std::size_t ModelConfig::effective_rotary_dim() const {
  if (rotary_dim != 0) return rotary_dim;
  return num_heads ? dim / (2 * num_heads) : 0;
}

void ModelConfig::validate() const {
  if (num_questions == 0) throw ConfigError("model needs at least one question");
  if (dim == 0 || num_heads == 0 || dim % num_heads != 0)
    throw ConfigError("dim must be a positive multiple of the head count");
  if (num_blocks == 0) throw ConfigError("model needs at least one block");
  if (ffn_mult == 0) throw ConfigError("ffn multiplier must be positive");
  std::size_t rd = effective_rotary_dim();
  if (rd % 2 != 0) throw ConfigError("rotary dimension must be even");
  if (rd > head_dim()) throw ConfigError("rotary dimension exceeds head dimension");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (skill_mode != SkillMode::kNone && num_skills == 0)
    throw ConfigError("skill mode requires a non-empty skill set");
  time.validate();
}

// ---------------------------------------------------------------------------
// Parameters

template <typename T>
std::vector<std::pair<std::string, Matrix<T>*>> ModelParams<T>::named_tensors() {
  std::vector<std::pair<std::string, Matrix<T>*>> out = {
      {"question_emb", &question_emb}, {"skill_emb", &skill_emb},
      {"emb_right", &emb_right},       {"emb_wrong", &emb_wrong},
      {"time_vec", &time_vec},         {"aux_w", &aux_w},
      {"aux_b", &aux_b},
  };
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    auto p = "block" + std::to_string(b) + ".";
    auto& bl = blocks[b];
    out.insert(out.end(), {{p + "ln_gain", &bl.ln_gain},
                           {p + "ln_bias", &bl.ln_bias},
                           {p + "w_qkv", &bl.w_qkv},
                           {p + "w_attn_out", &bl.w_attn_out},
                           {p + "ffn_in_w", &bl.ffn_in_w},
                           {p + "ffn_in_b", &bl.ffn_in_b},
                           {p + "ffn_out_w", &bl.ffn_out_w},
                           {p + "ffn_out_b", &bl.ffn_out_b}});
  }
  out.insert(out.end(), {{"final_ln_gain", &final_ln_gain},
                         {"final_ln_bias", &final_ln_bias},
                         {"head_w", &head_w},
                         {"head_b", &head_b}});
  return out;
}

template <typename T>
std::vector<std::pair<std::string, const Matrix<T>*>> ModelParams<T>::named_tensors() const {
  auto mut = const_cast<ModelParams<T>*>(this)->named_tensors();
  std::vector<std::pair<std::string, const Matrix<T>*>> out;
  out.reserve(mut.size());
  for (auto& [n, p] : mut) out.emplace_back(std::move(n), p);
  return out;
}

template <typename T>
ModelParams<T> ModelParams<T>::zeros(const ModelConfig& c) {
  const auto d = static_cast<Eigen::Index>(c.dim);
  const auto f = static_cast<Eigen::Index>(c.ffn_dim());
  const auto k = static_cast<Eigen::Index>(c.num_skills);
  ModelParams<T> p;
  p.question_emb = Matrix<T>::Zero(static_cast<Eigen::Index>(c.num_questions), d);
  p.skill_emb = Matrix<T>::Zero(c.skill_mode == SkillMode::kAdditive ? k : 0, d);
  p.emb_right = Matrix<T>::Zero(1, d);
  p.emb_wrong = Matrix<T>::Zero(1, d);
  p.time_vec = Matrix<T>::Zero(1, d);
  const bool aux = c.skill_mode == SkillMode::kAuxiliary;
  p.aux_w = Matrix<T>::Zero(aux ? d : 0, aux ? k : 0);
  p.aux_b = Matrix<T>::Zero(aux ? 1 : 0, aux ? k : 0);
  p.blocks.resize(c.num_blocks);
  for (auto& b : p.blocks) {
    b.ln_gain = Matrix<T>::Zero(1, d);
    b.ln_bias = Matrix<T>::Zero(1, d);
    b.w_qkv = Matrix<T>::Zero(d, 3 * d);
    b.w_attn_out = Matrix<T>::Zero(d, d);
    b.ffn_in_w = Matrix<T>::Zero(d, f);
    b.ffn_in_b = Matrix<T>::Zero(1, f);
    b.ffn_out_w = Matrix<T>::Zero(f, d);
    b.ffn_out_b = Matrix<T>::Zero(1, d);
  }
  p.final_ln_gain = Matrix<T>::Zero(1, d);
  p.final_ln_bias = Matrix<T>::Zero(1, d);
  p.head_w = Matrix<T>::Zero(d, 2);
  p.head_b = Matrix<T>::Zero(1, 2);
  return p;
}

template <typename T>
void ModelParams<T>::set_zero() {
  for (auto& [name, m] : named_tensors()) m->setZero();
}

template <typename T>
std::size_t ModelParams<T>::num_scalars() const {
  std::size_t n = 0;
  for (const auto& [name, m] : named_tensors()) n += static_cast<std::size_t>(m->size());
  return n;
}

template <typename T>
template <typename U>
ModelParams<U> ModelParams<T>::cast() const {
  ModelParams<U> out;
  out.blocks.resize(blocks.size());
  auto src = named_tensors();
  auto dst = out.named_tensors();
  for (std::size_t i = 0; i < src.size(); ++i)
    *dst[i].second = src[i].second->template cast<U>();
  return out;
}

template <typename T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  auto p = ModelParams<T>::zeros(config);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill = [&](Matrix<T>& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      double z;
      do z = normal(rng); while (std::abs(z) > 2.0);
      m.data()[i] = static_cast<T>(z * config.init_std);
    }
  };
  fill(p.question_emb);
  fill(p.skill_emb);
  fill(p.emb_right);
  fill(p.emb_wrong);
  fill(p.time_vec);
  fill(p.aux_w);
  for (auto& b : p.blocks) {
    b.ln_gain.setOnes();
    fill(b.w_qkv);
    fill(b.w_attn_out);
    fill(b.ffn_in_w);
    fill(b.ffn_out_w);
  }
  p.final_ln_gain.setOnes();
  fill(p.head_w);
  return p;
}

// ---------------------------------------------------------------------------
// Elementwise pieces

template <typename T>
void rope_rotate(std::span<T> vec, std::size_t position, std::size_t rotary_dim,
                 double base, bool inverse) {
  if (rotary_dim % 2 != 0) throw ConfigError("rotary dimension must be even");
  if (rotary_dim > vec.size()) throw ConfigError("rotary dimension exceeds vector size");
  for (std::size_t j = 0; j < rotary_dim / 2; ++j) {
    double theta = std::pow(base, -2.0 * static_cast<double>(j) /
                                      static_cast<double>(rotary_dim));
    double angle = static_cast<double>(position) * theta;
    T c = static_cast<T>(std::cos(angle));
    T s = static_cast<T>(std::sin(angle));
    if (inverse) s = -s;
    T a = vec[2 * j], b = vec[2 * j + 1];
    vec[2 * j] = a * c - b * s;
    vec[2 * j + 1] = a * s + b * c;
  }
}

std::vector<double> true_skill_distribution(std::span<const SkillId> skills,
                                            std::size_t num_skills) {
  if (skills.empty()) throw DataError("question has no skills");
  std::vector<double> dist(num_skills, 0.0);
  for (auto s : skills) {
    if (s < 0 || static_cast<std::size_t>(s) >= num_skills)
      throw DataError("skill id " + std::to_string(s) + " outside the skill set");
    dist[static_cast<std::size_t>(s)] = 1.0;
  }
  // Duplicates collapse to one member.
  double members = 0.0;
  for (double v : dist) members += v;
  for (double& v : dist) v /= members;
  return dist;
}

template <typename T>
T predict_prob(T v_correct, T v_incorrect) {
  T z = v_correct - v_incorrect;
  if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
  T e = std::exp(z);
  return e / (T(1) + e);
}

namespace {

constexpr double kLayerNormEps = 1e-5;

template <typename T>
struct RopeTable {
  std::size_t half = 0;
  std::vector<T> cos, sin;  // [position * half + j]

  RopeTable(std::size_t rotary_dim, double base, std::size_t n) : half(rotary_dim / 2) {
    cos.resize(n * half);
    sin.resize(n * half);
    for (std::size_t j = 0; j < half; ++j) {
      double theta = std::pow(base, -2.0 * static_cast<double>(j) /
                                        static_cast<double>(rotary_dim));
      for (std::size_t pos = 0; pos < n; ++pos) {
        double a = static_cast<double>(pos) * theta;
        cos[pos * half + j] = static_cast<T>(std::cos(a));
        sin[pos * half + j] = static_cast<T>(std::sin(a));
      }
    }
  }

  void apply(T* v, std::size_t pos, bool inverse) const {
    for (std::size_t j = 0; j < half; ++j) {
      T c = cos[pos * half + j];
      T s = inverse ? -sin[pos * half + j] : sin[pos * half + j];
      T a = v[2 * j], b = v[2 * j + 1];
      v[2 * j] = a * c - b * s;
      v[2 * j + 1] = a * s + b * c;
    }
  }
};

template <typename T>
void layer_norm(const Matrix<T>& x, const Matrix<T>& gain, const Matrix<T>& bias,
                Matrix<T>& xhat, std::vector<T>& rstd, Matrix<T>& y) {
  const auto n = x.rows();
  const auto d = x.cols();
  xhat.resize(n, d);
  y.resize(n, d);
  rstd.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    T mean = x.row(i).mean();
    T var = (x.row(i).array() - mean).square().mean();
    T r = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
    rstd[static_cast<std::size_t>(i)] = r;
    xhat.row(i) = (x.row(i).array() - mean) * r;
    y.row(i) = xhat.row(i).cwiseProduct(gain) + bias;
  }
}

template <typename T>
Matrix<T> layer_norm_backward(const Matrix<T>& dy, const Matrix<T>& xhat,
                              const std::vector<T>& rstd, const Matrix<T>& gain,
                              Matrix<T>& d_gain, Matrix<T>& d_bias) {
  const auto n = dy.rows();
  const auto d = static_cast<T>(dy.cols());
  d_gain += dy.cwiseProduct(xhat).colwise().sum();
  d_bias += dy.colwise().sum();
  Matrix<T> dx(n, dy.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Matrix<T, 1, Eigen::Dynamic> dxhat = dy.row(i).cwiseProduct(gain);
    T mean_dxhat = dxhat.sum() / d;
    T mean_dxhat_xhat = dxhat.cwiseProduct(xhat.row(i)).sum() / d;
    dx.row(i) = (dxhat.array() - mean_dxhat - xhat.row(i).array() * mean_dxhat_xhat) *
                rstd[static_cast<std::size_t>(i)];
  }
  return dx;
}

template <typename T>
constexpr T kGeluC = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)

template <typename T>
T gelu(T x) {
  T u = kGeluC<T> * (x + T(0.044715) * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
T gelu_grad(T x) {
  T u = kGeluC<T> * (x + T(0.044715) * x * x * x);
  T t = std::tanh(u);
  return T(0.5) * (T(1) + t) +
         T(0.5) * x * (T(1) - t * t) * kGeluC<T> * (T(1) + T(3) * T(0.044715) * x * x);
}

template <typename T>
Matrix<T> dropout_scale(Eigen::Index rows, Eigen::Index cols, double p,
                        std::mt19937_64& rng) {
  // Drop decisions use 16-bit slices of each 64-bit draw.
  Matrix<T> m(rows, cols);
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  const auto threshold = static_cast<std::uint64_t>(std::llround(p * 65536.0));
  std::uint64_t bits = 0;
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    if (i % 4 == 0) bits = rng();
    m.data()[i] = (bits & 0xFFFF) < threshold ? T(0) : keep;
    bits >>= 16;
  }
  return m;
}

void check_alternation(const Window& w) {
  if (w.attn_len > w.tokens.size())
    throw DataError("window attn_len exceeds its length");
  for (std::size_t i = 0; i < w.tokens.size(); ++i) {
    TokenKind expected = i >= w.attn_len ? TokenKind::kPad
                         : i % 2 == 0    ? TokenKind::kQuestion
                                         : TokenKind::kResponse;
    if (w.tokens[i].kind != expected)
      throw DataError("token " + std::to_string(i) + " breaks question/response alternation");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Decoder

template <typename T>
Decoder<T>::Decoder(ModelConfig config, ModelParams<T> params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const auto reference = ModelParams<T>::zeros(config_);
  auto expected = reference.named_tensors();
  auto actual = params_.named_tensors();
  if (expected.size() != actual.size())
    throw ConfigError("parameter set does not match the model configuration");
  for (std::size_t i = 0; i < actual.size(); ++i)
    if (actual[i].second->rows() != expected[i].second->rows() ||
        actual[i].second->cols() != expected[i].second->cols())
      throw ConfigError("parameter '" + actual[i].first + "' has the wrong shape");
}

template <typename T>
Matrix<T> Decoder<T>::embed_question(QuestionId question) const {
  if (question < 0 || static_cast<std::size_t>(question) >= config_.num_questions)
    throw std::out_of_range("question id " + std::to_string(question) +
                            " outside [0, " + std::to_string(config_.num_questions) + ")");
  return params_.question_emb.row(question);
}

template <typename T>
Matrix<T> Decoder<T>::embed_response(int correct, double time_norm) const {
  Matrix<T> e = correct ? params_.emb_right : params_.emb_wrong;
  if (config_.use_time) e += static_cast<T>(time_norm) * params_.time_vec;
  return e;
}

template <typename T>
Matrix<T> Decoder<T>::aux_skill_distribution(const Matrix<T>& question_embedding) const {
  if (config_.skill_mode != SkillMode::kAuxiliary)
    throw ConfigError("auxiliary head is only present in auxiliary skill mode");
  Matrix<T> logits = question_embedding * params_.aux_w;
  logits.rowwise() += params_.aux_b.row(0);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    T mx = logits.row(i).maxCoeff();
    logits.row(i) = (logits.row(i).array() - mx).exp();
    logits.row(i) /= logits.row(i).sum();
  }
  return logits;
}

template <typename T>
WindowTrace<T> Decoder<T>::forward(const Window& window, std::mt19937_64* dropout_rng) const {
  check_alternation(window);
  const auto& c = config_;
  const auto& P = params_;
  const std::size_t n = window.attn_len;
  const auto N = static_cast<Eigen::Index>(n);
  const auto d = static_cast<Eigen::Index>(c.dim);
  const auto hd = static_cast<Eigen::Index>(c.head_dim());
  const std::size_t rd = c.effective_rotary_dim();
  const bool drop = dropout_rng != nullptr && c.dropout > 0.0;
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));

  WindowTrace<T> tr;
  tr.n = n;
  tr.tokens.assign(window.tokens.begin(), window.tokens.begin() + static_cast<std::ptrdiff_t>(n));

  Matrix<T> x(N, d);
  for (std::size_t i = 0; i < n; ++i) {
    const Token& t = tr.tokens[i];
    const auto row = static_cast<Eigen::Index>(i);
    if (t.kind == TokenKind::kQuestion) {
      x.row(row) = embed_question(t.question);
      if (c.skill_mode == SkillMode::kAdditive && !t.skills.empty()) {
        Eigen::Matrix<T, 1, Eigen::Dynamic> s = Eigen::Matrix<T, 1, Eigen::Dynamic>::Zero(d);
        for (auto sk : t.skills) {
          if (sk < 0 || static_cast<std::size_t>(sk) >= c.num_skills)
            throw std::out_of_range("skill id " + std::to_string(sk) + " out of range");
          s += P.skill_emb.row(sk);
        }
        x.row(row) += s / static_cast<T>(t.skills.size());
      }
      tr.question_pos.push_back(i);
    } else {
      x.row(row) = embed_response(t.correct, t.time_norm);
    }
  }

  RopeTable<T> rope(rd, c.rope_base, n);
  tr.blocks.resize(c.num_blocks);
  for (std::size_t b = 0; b < c.num_blocks; ++b) {
    const auto& bp = P.blocks[b];
    auto& bt = tr.blocks[b];
    layer_norm(x, bp.ln_gain, bp.ln_bias, bt.xhat, bt.rstd, bt.xn);

    Matrix<T> qkv = bt.xn * bp.w_qkv;
    bt.q = qkv.leftCols(d);
    bt.k = qkv.middleCols(d, d);
    bt.v = qkv.rightCols(d);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t h = 0; h < c.num_heads; ++h) {
        rope.apply(bt.q.row(static_cast<Eigen::Index>(i)).data() + h * c.head_dim(), i, false);
        rope.apply(bt.k.row(static_cast<Eigen::Index>(i)).data() + h * c.head_dim(), i, false);
      }

    bt.concat.resize(N, d);
    bt.probs.resize(c.num_heads);
    if (drop) bt.attn_drop.resize(c.num_heads);
    for (std::size_t h = 0; h < c.num_heads; ++h) {
      const auto off = static_cast<Eigen::Index>(h) * hd;
      Matrix<T> s = (bt.q.middleCols(off, hd) * bt.k.middleCols(off, hd).transpose()) * scale;
      for (Eigen::Index i = 0; i < N; ++i) {
        T mx = s.row(i).head(i + 1).maxCoeff();
        T sum = 0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          s(i, j) = std::exp(s(i, j) - mx);
          sum += s(i, j);
        }
        for (Eigen::Index j = 0; j <= i; ++j) s(i, j) /= sum;
        for (Eigen::Index j = i + 1; j < N; ++j) s(i, j) = 0;
      }
      bt.probs[h] = std::move(s);
      if (drop) {
        bt.attn_drop[h] = dropout_scale<T>(N, N, c.dropout, *dropout_rng);
        bt.concat.middleCols(off, hd) =
            bt.probs[h].cwiseProduct(bt.attn_drop[h]) * bt.v.middleCols(off, hd);
      } else {
        bt.concat.middleCols(off, hd) = bt.probs[h] * bt.v.middleCols(off, hd);
      }
    }

    bt.ffn_pre = bt.xn * bp.ffn_in_w;
    bt.ffn_pre.rowwise() += bp.ffn_in_b.row(0);
    bt.ffn_act = bt.ffn_pre.unaryExpr([](T v) { return gelu(v); });
    Matrix<T> branch = bt.concat * bp.w_attn_out + bt.ffn_act * bp.ffn_out_w;
    branch.rowwise() += bp.ffn_out_b.row(0);
    if (drop) {
      bt.resid_drop = dropout_scale<T>(N, d, c.dropout, *dropout_rng);
      branch = branch.cwiseProduct(bt.resid_drop);
    }
    x += branch;
  }

  tr.hidden = x;
  layer_norm(x, P.final_ln_gain, P.final_ln_bias, tr.final_xhat, tr.final_rstd, tr.final_norm);

  const auto nq = static_cast<Eigen::Index>(tr.question_pos.size());
  Matrix<T> hq(nq, d);
  for (Eigen::Index j = 0; j < nq; ++j)
    hq.row(j) = tr.final_norm.row(static_cast<Eigen::Index>(tr.question_pos[static_cast<std::size_t>(j)]));
  tr.logits = hq * P.head_w;
  tr.logits.rowwise() += P.head_b.row(0);
  tr.probs.resize(static_cast<std::size_t>(nq));
  for (Eigen::Index j = 0; j < nq; ++j)
    tr.probs[static_cast<std::size_t>(j)] = predict_prob(tr.logits(j, 0), tr.logits(j, 1));

  if (c.skill_mode == SkillMode::kAuxiliary) {
    Matrix<T> e(nq, d);
    for (Eigen::Index j = 0; j < nq; ++j)
      e.row(j) = P.question_emb.row(tr.tokens[tr.question_pos[static_cast<std::size_t>(j)]].question);
    tr.aux_logits = e * P.aux_w;
    tr.aux_logits.rowwise() += P.aux_b.row(0);
    tr.aux_probs = aux_skill_distribution(e);
  }
  return tr;
}

template <typename T>
void Decoder<T>::backward(const WindowTrace<T>& tr, std::span<const T> d_logit_diff,
                          const Matrix<T>& d_aux_logits, ModelParams<T>& g) const {
  const auto& c = config_;
  const auto& P = params_;
  const auto N = static_cast<Eigen::Index>(tr.n);
  const auto d = static_cast<Eigen::Index>(c.dim);
  const auto hd = static_cast<Eigen::Index>(c.head_dim());
  const auto nq = static_cast<Eigen::Index>(tr.question_pos.size());
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));
  if (static_cast<Eigen::Index>(d_logit_diff.size()) != nq)
    throw std::invalid_argument("gradient size does not match question count");

  // Output head: z = v_correct - v_incorrect.
  Matrix<T> d_logits(nq, 2);
  Matrix<T> hq(nq, d);
  for (Eigen::Index j = 0; j < nq; ++j) {
    d_logits(j, 0) = d_logit_diff[static_cast<std::size_t>(j)];
    d_logits(j, 1) = -d_logit_diff[static_cast<std::size_t>(j)];
    hq.row(j) = tr.final_norm.row(static_cast<Eigen::Index>(tr.question_pos[static_cast<std::size_t>(j)]));
  }
  g.head_w += hq.transpose() * d_logits;
  g.head_b += d_logits.colwise().sum();
  Matrix<T> d_norm = Matrix<T>::Zero(N, d);
  Matrix<T> d_hq = d_logits * P.head_w.transpose();
  for (Eigen::Index j = 0; j < nq; ++j)
    d_norm.row(static_cast<Eigen::Index>(tr.question_pos[static_cast<std::size_t>(j)])) = d_hq.row(j);
  Matrix<T> dx = layer_norm_backward(d_norm, tr.final_xhat, tr.final_rstd, P.final_ln_gain,
                                     g.final_ln_gain, g.final_ln_bias);

  RopeTable<T> rope(c.effective_rotary_dim(), c.rope_base, tr.n);
  for (std::size_t bi = c.num_blocks; bi-- > 0;) {
    const auto& bp = P.blocks[bi];
    const auto& bt = tr.blocks[bi];
    auto& gb = g.blocks[bi];

    Matrix<T> d_branch = bt.resid_drop.size() ? Matrix<T>(dx.cwiseProduct(bt.resid_drop)) : dx;

    // Feed-forward branch.
    gb.ffn_out_w += bt.ffn_act.transpose() * d_branch;
    gb.ffn_out_b += d_branch.colwise().sum();
    Matrix<T> d_pre = (d_branch * bp.ffn_out_w.transpose())
                          .cwiseProduct(bt.ffn_pre.unaryExpr([](T v) { return gelu_grad(v); }));
    gb.ffn_in_w += bt.xn.transpose() * d_pre;
    gb.ffn_in_b += d_pre.colwise().sum();
    Matrix<T> d_xn = d_pre * bp.ffn_in_w.transpose();

    // Attention branch.
    gb.w_attn_out += bt.concat.transpose() * d_branch;
    Matrix<T> d_concat = d_branch * bp.w_attn_out.transpose();
    Matrix<T> dq(N, d), dk(N, d), dv(N, d);
    for (std::size_t h = 0; h < c.num_heads; ++h) {
      const auto off = static_cast<Eigen::Index>(h) * hd;
      const Matrix<T>& p = bt.probs[h];
      const bool dropped = !bt.attn_drop.empty();
      Matrix<T> d_out = d_concat.middleCols(off, hd);
      Matrix<T> d_p = d_out * bt.v.middleCols(off, hd).transpose();
      if (dropped) {
        dv.middleCols(off, hd) = p.cwiseProduct(bt.attn_drop[h]).transpose() * d_out;
        d_p = d_p.cwiseProduct(bt.attn_drop[h]);
      } else {
        dv.middleCols(off, hd) = p.transpose() * d_out;
      }
      Eigen::Matrix<T, Eigen::Dynamic, 1> row_dot = d_p.cwiseProduct(p).rowwise().sum();
      Matrix<T> d_s = p.cwiseProduct(d_p.colwise() - row_dot) * scale;
      dq.middleCols(off, hd) = d_s * bt.k.middleCols(off, hd);
      dk.middleCols(off, hd) = d_s.transpose() * bt.q.middleCols(off, hd);
    }
    for (std::size_t i = 0; i < tr.n; ++i)
      for (std::size_t h = 0; h < c.num_heads; ++h) {
        rope.apply(dq.row(static_cast<Eigen::Index>(i)).data() + h * c.head_dim(), i, true);
        rope.apply(dk.row(static_cast<Eigen::Index>(i)).data() + h * c.head_dim(), i, true);
      }
    Matrix<T> d_qkv(N, 3 * d);
    d_qkv << dq, dk, dv;
    gb.w_qkv += bt.xn.transpose() * d_qkv;
    d_xn += d_qkv * bp.w_qkv.transpose();

    dx += layer_norm_backward(d_xn, bt.xhat, bt.rstd, bp.ln_gain, gb.ln_gain, gb.ln_bias);
  }

  // Token embeddings.
  for (std::size_t i = 0; i < tr.n; ++i) {
    const Token& t = tr.tokens[i];
    auto row = dx.row(static_cast<Eigen::Index>(i));
    if (t.kind == TokenKind::kQuestion) {
      g.question_emb.row(t.question) += row;
      if (c.skill_mode == SkillMode::kAdditive && !t.skills.empty()) {
        const T w = T(1) / static_cast<T>(t.skills.size());
        for (auto sk : t.skills) g.skill_emb.row(sk) += w * row;
      }
    } else {
      (t.correct ? g.emb_right : g.emb_wrong) += row;
      if (c.use_time) g.time_vec += static_cast<T>(t.time_norm) * row;
    }
  }

  // Auxiliary skill head.
  if (c.skill_mode == SkillMode::kAuxiliary && d_aux_logits.size() > 0) {
    if (d_aux_logits.rows() != nq)
      throw std::invalid_argument("auxiliary gradient rows do not match question count");
    for (Eigen::Index j = 0; j < nq; ++j) {
      QuestionId q = tr.tokens[tr.question_pos[static_cast<std::size_t>(j)]].question;
      g.aux_w += P.question_emb.row(q).transpose() * d_aux_logits.row(j);
      g.question_emb.row(q) += d_aux_logits.row(j) * P.aux_w.transpose();
    }
    g.aux_b += d_aux_logits.colwise().sum();
  }
}

template <typename T>
ForwardOutput<T> Decoder<T>::forward_batch(const Batch& batch) const {
  ForwardOutput<T> out;
  for (const auto& w : batch.windows) {
    auto tr = forward(w);
    std::vector<T> grid(w.max_len() / 2, std::numeric_limits<T>::quiet_NaN());
    std::copy(tr.probs.begin(), tr.probs.end(), grid.begin());
    out.probs.push_back(std::move(grid));
    out.aux_probs.push_back(std::move(tr.aux_probs));
    out.hidden.push_back(std::move(tr.hidden));
    std::vector<std::vector<Matrix<T>>> attn;
    for (auto& bt : tr.blocks) attn.push_back(std::move(bt.probs));
    out.attn.push_back(std::move(attn));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Instantiations

template struct ModelParams<float>;
template struct ModelParams<double>;
template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<double>::cast<float>() const;
template ModelParams<float> ModelParams<float>::cast<float>() const;
template ModelParams<double> ModelParams<double>::cast<double>() const;
template ModelParams<float> init_params<float>(const ModelConfig&, std::uint64_t);
template ModelParams<double> init_params<double>(const ModelConfig&, std::uint64_t);
template void rope_rotate<float>(std::span<float>, std::size_t, std::size_t, double, bool);
template void rope_rotate<double>(std::span<double>, std::size_t, std::size_t, double, bool);
template float predict_prob<float>(float, float);
template double predict_prob<double>(double, double);
template class Decoder<float>;
template class Decoder<double>;

}  // namespace aakt
