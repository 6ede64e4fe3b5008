#include "aakt/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <spdlog/spdlog.h>

#include "aakt/checkpoint.hpp"
#include "aakt/errors.hpp"
#include "json.hpp"

namespace aakt {

namespace {

// splitmix64 finalizer; derives independent stream seeds from (seed, salt).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t kShuffleSalt = 0x5348;
constexpr std::uint64_t kDropoutSalt = 0x4452;

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be non-negative");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
    throw ConfigError("validation fraction must lie in [0, 1)");
  window.validate();
}

// ---------------------------------------------------------------------------
// Losses

double bce_loss(std::span<const double> probs, std::span<const int> labels,
                std::span<const std::uint8_t> mask) {
  if (probs.size() != labels.size() || probs.size() != mask.size())
    throw std::invalid_argument("bce_loss: size mismatch");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!mask[i]) continue;
    double p = std::clamp(probs[i], kProbClamp, 1.0 - kProbClamp);
    sum -= labels[i] ? std::log(p) : std::log(1.0 - p);
    ++n;
  }
  if (n == 0) throw DataError("bce_loss: mask selects no position");
  return sum / static_cast<double>(n);
}

KlResult kl_aux_loss(const Matrix<double>& target, const Matrix<double>& predicted,
                     std::span<const std::uint8_t> mask) {
  if (target.rows() != predicted.rows() || target.cols() != predicted.cols() ||
      static_cast<std::size_t>(target.rows()) != mask.size())
    throw std::invalid_argument("kl_aux_loss: shape mismatch");
  KlResult r;
  std::size_t n = 0;
  for (Eigen::Index i = 0; i < target.rows(); ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    double kl = 0.0;
    for (Eigen::Index t = 0; t < target.cols(); ++t) {
      double p = target(i, t);
      if (p <= 0.0) continue;
      double q = predicted(i, t);
      if (q < kKlClamp) {
        q = kKlClamp;
        ++r.clamped;
      }
      kl += p * (std::log(p) - std::log(q));
    }
    r.value += kl;
    ++n;
  }
  if (n == 0) throw DataError("kl_aux_loss: mask selects no position");
  r.value /= static_cast<double>(n);
  if (r.clamped) spdlog::debug("kl_aux_loss clamped {} predicted entries", r.clamped);
  return r;
}

LossBreakdown total_loss(double pred_loss, double aux_loss) {
  if (!std::isfinite(pred_loss) || !std::isfinite(aux_loss))
    throw NumericError("non-finite loss component");
  return {pred_loss, aux_loss, pred_loss + aux_loss};
}

template <typename T>
LossBreakdown loss_and_gradient(const Decoder<T>& model, const Batch& batch,
                                const LossOptions& options, ModelParams<T>& grads,
                                std::mt19937_64* dropout_rng) {
  const auto& cfg = model.config();
  const bool aux_on = options.aux && cfg.skill_mode == SkillMode::kAuxiliary;
  std::size_t total_q = 0;
  for (const auto& w : batch.windows) total_q += w.num_questions();
  if (total_q == 0) throw DataError("batch contains no questions");
  const double inv_n = 1.0 / static_cast<double>(total_q);

  double pred_sum = 0.0, aux_sum = 0.0;
  const auto K = static_cast<Eigen::Index>(cfg.num_skills);
  for (const auto& w : batch.windows) {
    auto tr = model.forward(w, dropout_rng);
    const std::size_t nq = tr.question_pos.size();
    std::vector<T> d_diff(nq, T(0));
    Matrix<T> d_aux;
    if (aux_on) d_aux = Matrix<T>::Zero(static_cast<Eigen::Index>(nq), K);

    for (std::size_t j = 0; j < nq; ++j) {
      const Token& qt = tr.tokens[tr.question_pos[j]];
      const double p = static_cast<double>(tr.probs[j]);
      const double pc = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
      pred_sum -= qt.label ? std::log(pc) : std::log(1.0 - pc);
      // d/dz of the clamped BCE; zero where the clamp is active.
      if (options.pred && pc == p) d_diff[j] = static_cast<T>((p - qt.label) * inv_n);

      if (aux_on) {
        auto target = true_skill_distribution(qt.skills, cfg.num_skills);
        const auto row = static_cast<Eigen::Index>(j);
        double unclamped_mass = 0.0;
        for (Eigen::Index t = 0; t < K; ++t) {
          double pt = target[static_cast<std::size_t>(t)];
          if (pt <= 0.0) continue;
          double q = static_cast<double>(tr.aux_probs(row, t));
          if (q < kKlClamp) {
            aux_sum += pt * (std::log(pt) - std::log(kKlClamp));
          } else {
            aux_sum += pt * (std::log(pt) - std::log(q));
            unclamped_mass += pt;
          }
        }
        // d/dlogit_k of -sum_{t unclamped} p_t log softmax_t
        //   = q_k * unclamped_mass - p_k [k unclamped].
        for (Eigen::Index t = 0; t < K; ++t) {
          double q = static_cast<double>(tr.aux_probs(row, t));
          double pt = target[static_cast<std::size_t>(t)];
          double g = q * unclamped_mass;
          if (pt > 0.0 && q >= kKlClamp) g -= pt;
          d_aux(row, t) = static_cast<T>(g * inv_n);
        }
      }
    }
    model.backward(tr, d_diff, d_aux, grads);
  }
  double pred = pred_sum * inv_n;
  double aux = aux_on ? aux_sum * inv_n : 0.0;
  return total_loss(options.pred ? pred : 0.0, aux);
}

template <typename T>
LossBreakdown batch_loss(const Decoder<T>& model, const Batch& batch,
                         const LossOptions& options) {
  // Reuses the gradient path; the scratch gradient is discarded.
  auto scratch = ModelParams<T>::zeros(model.config());
  return loss_and_gradient(model, batch, options, scratch, nullptr);
}

// ---------------------------------------------------------------------------
// Adam

template <typename T>
Adam<T>::Adam(const ModelParams<T>& like, double learning_rate, double beta1,
              double beta2, double eps)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps), m_(like), v_(like) {
  if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be non-negative");
  m_.set_zero();
  v_.set_zero();
}

template <typename T>
void Adam<T>::step(ModelParams<T>& params, const ModelParams<T>& grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
  const T step = static_cast<T>(lr_ / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(eps_);
  auto p = params.named_tensors();
  auto g = grads.named_tensors();
  auto m = m_.named_tensors();
  auto v = v_.named_tensors();
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto& pm = *p[i].second;
    const auto& gm = *g[i].second;
    auto& mm = *m[i].second;
    auto& vm = *v[i].second;
    mm = b1 * mm + (T(1) - b1) * gm;
    vm = b2 * vm + (T(1) - b2) * gm.cwiseProduct(gm);
    pm.array() -= step * mm.array() / ((vm.array().sqrt() * inv_sqrt_bc2) + eps);
  }
}

// ---------------------------------------------------------------------------
// Epoch loop

EpochMetrics train_epoch(Decoder<float>& model, Adam<float>& optimizer,
                         const std::vector<Window>& windows, const TrainConfig& config,
                         std::size_t epoch) {
  auto batches = pad_and_batch(windows, config.batch_size, mix_seed(config.seed ^ kShuffleSalt, epoch));
  std::mt19937_64 dropout_rng(mix_seed(config.seed ^ kDropoutSalt, epoch));
  auto grads = ModelParams<float>::zeros(model.config());
  EpochMetrics em;
  double weight = 0.0;
  for (const auto& batch : batches) {
    grads.set_zero();
    LossBreakdown lb;
    bool finite = true;
    try {
      lb = loss_and_gradient(model, batch, LossOptions{}, grads, &dropout_rng);
    } catch (const NumericError&) {
      finite = false;
    }
    if (finite)
      for (const auto& [name, m] : grads.named_tensors())
        if (!m->allFinite()) {
          finite = false;
          break;
        }
    if (!finite) {
      ++em.skipped;
      spdlog::warn("epoch {}: skipped a step with non-finite loss or gradient", epoch);
      continue;
    }
    optimizer.step(model.params(), grads);
    ++em.steps;
    double nq = 0.0;
    for (const auto& w : batch.windows) nq += static_cast<double>(w.num_questions());
    em.loss.pred_loss += lb.pred_loss * nq;
    em.loss.aux_loss += lb.aux_loss * nq;
    weight += nq;
  }
  const std::size_t attempted = em.steps + em.skipped;
  if (attempted && static_cast<double>(em.skipped) >
                       config.max_skipped_fraction * static_cast<double>(attempted))
    throw NumericError("epoch " + std::to_string(epoch) + ": " + std::to_string(em.skipped) +
                       " of " + std::to_string(attempted) + " steps had non-finite gradients");
  if (weight > 0.0) {
    em.loss.pred_loss /= weight;
    em.loss.aux_loss /= weight;
  }
  em.loss.total = em.loss.pred_loss + em.loss.aux_loss;
  return em;
}

std::string epoch_log_to_json(const EpochLog& log) {
  nlohmann::json j;
  j["fold"] = log.fold;
  j["epoch"] = log.epoch;
  j["pred_loss"] = log.train.loss.pred_loss;
  j["aux_loss"] = log.train.loss.aux_loss;
  j["total_loss"] = log.train.loss.total;
  j["steps"] = log.train.steps;
  j["skipped"] = log.train.skipped;
  j["val_auc"] = log.val_auc ? nlohmann::json(*log.val_auc) : nlohmann::json(nullptr);
  return j.dump();
}

// ---------------------------------------------------------------------------
// Cross-validated fitting

TrainedFold fit_fold(const Dataset& dataset, const FoldSplit& split, std::size_t fold,
                     const ModelConfig& model_config, const TrainConfig& config,
                     const FitOptions& options) {
  config.validate();
  ModelConfig mc = model_config;
  if (mc.num_questions == 0) mc.num_questions = dataset.vocab.num_questions();
  if (mc.num_skills == 0) mc.num_skills = dataset.vocab.num_skills();

  std::vector<std::size_t> train_ids = split.train;
  std::vector<std::size_t> val_ids;
  if (config.validation_fraction > 0.0 && train_ids.size() >= 2) {
    std::mt19937_64 rng(mix_seed(config.seed, 0x5641 + fold));
    std::shuffle(train_ids.begin(), train_ids.end(), rng);
    auto n_val = static_cast<std::size_t>(
        std::ceil(config.validation_fraction * static_cast<double>(train_ids.size())));
    n_val = std::clamp<std::size_t>(n_val, 1, train_ids.size() - 1);
    val_ids.assign(train_ids.end() - static_cast<std::ptrdiff_t>(n_val), train_ids.end());
    train_ids.resize(train_ids.size() - n_val);
    std::sort(train_ids.begin(), train_ids.end());
    std::sort(val_ids.begin(), val_ids.end());
  }

  auto train_tokens = build_corpus_tokens(select_students(dataset, train_ids), mc.time);
  auto val_tokens = build_corpus_tokens(select_students(dataset, val_ids), mc.time);
  auto test_tokens = build_corpus_tokens(select_students(dataset, split.test), mc.time);
  auto train_windows = window_corpus(train_tokens, config.window, WindowMode::kTrain);
  if (train_windows.empty()) throw DataError("fold has no training windows");

  Decoder<float> model(mc, init_params<float>(mc, mix_seed(config.seed, fold)));
  Adam<float> adam(model.params(), config.learning_rate, config.beta1, config.beta2,
                   config.adam_eps);

  FoldResult res;
  res.fold = fold;
  ModelParams<float> best = model.params();
  std::size_t since_best = 0;
  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    EpochLog log;
    log.fold = fold;
    log.epoch = epoch;
    log.train = train_epoch(model, adam, train_windows, config, epoch);
    if (!val_tokens.empty()) {
      DecoderPredictor pred(model);
      auto windows = window_corpus(val_tokens, config.window, WindowMode::kEval);
      auto records = collect_predictions(pred, windows);
      log.val_auc = auc(std::span<const PredictionRecord>(records));
    }
    res.history.push_back(log);
    if (options.on_epoch) options.on_epoch(log);
    spdlog::info("fold {} epoch {}: pred {:.5f} aux {:.5f} val_auc {}", fold, epoch,
                 log.train.loss.pred_loss, log.train.loss.aux_loss,
                 log.val_auc ? std::to_string(*log.val_auc) : "n/a");

    bool improved = val_tokens.empty() ||
                    (log.val_auc && (!res.best_val_auc || *log.val_auc > *res.best_val_auc));
    if (improved) {
      res.best_val_auc = log.val_auc;
      res.best_epoch = epoch;
      best = model.params();
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  model.params() = std::move(best);

  if (!test_tokens.empty()) {
    DecoderPredictor pred(model);
    res.test = evaluate_corpus(pred, test_tokens, config.window);
  }
  if (!options.checkpoint_dir.empty()) {
    res.checkpoint = options.checkpoint_dir / ("fold" + std::to_string(fold) + ".ckpt");
    save_checkpoint(res.checkpoint, model.config(), model.params());
  }
  return TrainedFold{std::move(model), std::move(res)};
}

FitReport fit(const Dataset& dataset, const std::vector<FoldSplit>& splits,
              const ModelConfig& model_config, const TrainConfig& config,
              const FitOptions& options) {
  FitReport report;
  std::vector<std::size_t> folds = options.only_folds;
  if (folds.empty()) {
    folds.resize(splits.size());
    std::iota(folds.begin(), folds.end(), std::size_t{0});
  }
  for (auto f : folds) {
    if (f >= splits.size()) throw ConfigError("fold " + std::to_string(f) + " does not exist");
    try {
      report.folds.push_back(
          fit_fold(dataset, splits[f], f, model_config, config, options).result);
    } catch (const std::exception& e) {
      spdlog::error("fold {} failed: {}", f, e.what());
      FoldResult failed;
      failed.fold = f;
      failed.failed = true;
      failed.error = e.what();
      report.folds.push_back(std::move(failed));
    }
  }
  double auc_sum = 0.0;
  std::size_t n_ok = 0, n_auc = 0;
  for (const auto& fr : report.folds) {
    if (fr.failed) continue;
    ++n_ok;
    report.mean_acc += fr.test.acc;
    report.mean_rmse += fr.test.rmse;
    if (fr.test.auc) {
      auc_sum += *fr.test.auc;
      ++n_auc;
    }
  }
  if (n_ok) {
    report.mean_acc /= static_cast<double>(n_ok);
    report.mean_rmse /= static_cast<double>(n_ok);
  }
  if (n_auc) report.mean_auc = auc_sum / static_cast<double>(n_auc);
  return report;
}

std::string fit_report_to_json(const FitReport& report) {
  nlohmann::json j;
  j["mean_auc"] = report.mean_auc ? nlohmann::json(*report.mean_auc) : nlohmann::json(nullptr);
  j["mean_acc"] = report.mean_acc;
  j["mean_rmse"] = report.mean_rmse;
  auto folds = nlohmann::json::array();
  for (const auto& f : report.folds) {
    nlohmann::json fj;
    fj["fold"] = f.fold;
    fj["failed"] = f.failed;
    if (f.failed) {
      fj["error"] = f.error;
    } else {
      fj["test"] = nlohmann::json::parse(report_to_json(f.test));
      fj["best_val_auc"] =
          f.best_val_auc ? nlohmann::json(*f.best_val_auc) : nlohmann::json(nullptr);
      fj["best_epoch"] = f.best_epoch;
      fj["epochs_run"] = f.history.size();
      fj["checkpoint"] = f.checkpoint.string();
    }
    folds.push_back(std::move(fj));
  }
  j["folds"] = std::move(folds);
  return j.dump(2);
}

template LossBreakdown loss_and_gradient<float>(const Decoder<float>&, const Batch&,
                                                const LossOptions&, ModelParams<float>&,
                                                std::mt19937_64*);
template LossBreakdown loss_and_gradient<double>(const Decoder<double>&, const Batch&,
                                                 const LossOptions&, ModelParams<double>&,
                                                 std::mt19937_64*);
template LossBreakdown batch_loss<float>(const Decoder<float>&, const Batch&, const LossOptions&);
template LossBreakdown batch_loss<double>(const Decoder<double>&, const Batch&,
                                          const LossOptions&);
template class Adam<float>;
template class Adam<double>;

}  // namespace aakt
