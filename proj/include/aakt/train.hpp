#pragma once

// Losses (BCE prediction loss, KL auxiliary loss, unweighted sum), Adam, the
// epoch loop and cross-validated fitting with early stopping.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "aakt/eval.hpp"
#include "aakt/ingest.hpp"
#include "aakt/model.hpp"
#include "aakt/seqbuild.hpp"

namespace aakt {

inline constexpr double kProbClamp = 1e-7;
inline constexpr double kKlClamp = 1e-12;

struct TrainConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 100;
  std::size_t patience = 5;
  std::uint64_t seed = 42;
  /// Used for both training and evaluation windows.
  WindowSpec window{100, 0.5};
  /// Share of each fold's training students held out for early stopping.
  double validation_fraction = 0.1;
  /// Abort an epoch when more than this share of steps had non-finite gradients.
  double max_skipped_fraction = 0.01;

  void validate() const;
};

struct LossBreakdown {
  double pred_loss = 0.0;
  double aux_loss = 0.0;
  double total = 0.0;
};

/// Mean binary cross-entropy over entries with mask != 0. Probabilities are
/// clamped to [1e-7, 1 - 1e-7]. Throws DataError when the mask selects nothing.
double bce_loss(std::span<const double> probs, std::span<const int> labels,
                std::span<const std::uint8_t> mask);

struct KlResult {
  double value = 0.0;
  /// Entries where the prediction had to be clamped to 1e-12.
  std::size_t clamped = 0;
};

/// Mean KL(target || predicted) over masked rows; 0 * ln(0 / q) counts as 0.
KlResult kl_aux_loss(const Matrix<double>& target, const Matrix<double>& predicted,
                     std::span<const std::uint8_t> mask);

/// pred + aux, unweighted. Throws NumericError on a non-finite component.
LossBreakdown total_loss(double pred_loss, double aux_loss);

struct LossOptions {
  bool pred = true;
  bool aux = true;
};

/// Batch loss and its gradient (accumulated into `grads`). Both losses are
/// means over the batch's non-pad questions. The auxiliary term is active only
/// in auxiliary skill mode and when `options.aux` is set.
template <typename T>
LossBreakdown loss_and_gradient(const Decoder<T>& model, const Batch& batch,
                                const LossOptions& options, ModelParams<T>& grads,
                                std::mt19937_64* dropout_rng = nullptr);

/// Loss only, no dropout.
template <typename T>
LossBreakdown batch_loss(const Decoder<T>& model, const Batch& batch,
                         const LossOptions& options = {});

template <typename T>
class Adam {
 public:
  Adam(const ModelParams<T>& like, double learning_rate, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8);

  void step(ModelParams<T>& params, const ModelParams<T>& grads);
  std::size_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  ModelParams<T> m_, v_;
};

struct EpochMetrics {
  LossBreakdown loss;  // question-weighted mean over applied steps
  std::size_t steps = 0;
  std::size_t skipped = 0;
};

/// One pass over `windows`, batched and shuffled by (config.seed, epoch).
EpochMetrics train_epoch(Decoder<float>& model, Adam<float>& optimizer,
                         const std::vector<Window>& windows, const TrainConfig& config,
                         std::size_t epoch);

struct EpochLog {
  std::size_t fold = 0;
  std::size_t epoch = 0;
  EpochMetrics train;
  std::optional<double> val_auc;
};

std::string epoch_log_to_json(const EpochLog& log);

struct FoldResult {
  std::size_t fold = 0;
  bool failed = false;
  std::string error;
  MetricReport test;
  std::optional<double> best_val_auc;
  std::size_t best_epoch = 0;
  std::vector<EpochLog> history;
  std::filesystem::path checkpoint;
};

struct FitReport {
  std::vector<FoldResult> folds;
  /// Arithmetic means over successful folds.
  std::optional<double> mean_auc;
  double mean_acc = 0.0;
  double mean_rmse = 0.0;
};

struct FitOptions {
  /// Folds to run; empty runs all.
  std::vector<std::size_t> only_folds;
  /// Where to write fold<k>.ckpt; empty skips checkpointing.
  std::filesystem::path checkpoint_dir;
  /// Called after every epoch (e.g. to append to a log file).
  std::function<void(const EpochLog&)> on_epoch;
};

/// Trained model plus the split it was selected on.
struct TrainedFold {
  Decoder<float> model;
  FoldResult result;
};

/// Trains one model per selected fold on the fold's training students (minus a
/// validation share used for early stopping on AUC), keeps the best epoch and
/// scores it on the fold's test students. A fold that throws is reported as
/// failed; the others proceed.
FitReport fit(const Dataset& dataset, const std::vector<FoldSplit>& splits,
              const ModelConfig& model_config, const TrainConfig& config,
              const FitOptions& options = {});

/// Single-fold variant returning the model as well.
TrainedFold fit_fold(const Dataset& dataset, const FoldSplit& split, std::size_t fold,
                     const ModelConfig& model_config, const TrainConfig& config,
                     const FitOptions& options = {});

std::string fit_report_to_json(const FitReport& report);

}  // namespace aakt
