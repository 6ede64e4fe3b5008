#pragma once

// Overlap-aware evaluation: per-interaction prediction records, AUC / ACC /
// RMSE over fresh records, per-position and smoothed AUC series, overlap-ratio
// sweeps and cross-report metric correlations.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "aakt/model.hpp"
#include "aakt/seqbuild.hpp"

namespace aakt {

struct PredictionRecord {
  std::size_t student = 0;
  std::size_t interaction = 0;
  /// 1-based question slot inside the window.
  std::size_t position = 0;
  double prob = 0.0;
  int label = 0;
  bool fresh = true;
};

/// Anything that scores the question tokens of a window.
class Predictor {
 public:
  virtual ~Predictor() = default;
  /// One probability per non-pad question of `window`, in slot order.
  virtual std::vector<double> predict(const Window& window) const = 0;
};

class DecoderPredictor final : public Predictor {
 public:
  explicit DecoderPredictor(const Decoder<float>& model) : model_(model) {}
  std::vector<double> predict(const Window& window) const override;

 private:
  const Decoder<float>& model_;
};

std::vector<PredictionRecord> collect_predictions(const Predictor& predictor,
                                                  std::span<const Window> windows);

/// Exact one-pass AUC accumulator: score -> (positives, negatives). Mergeable,
/// so partial accumulators can be reduced in any order.
class StreamingAuc {
 public:
  void add(double score, int label);
  void merge(const StreamingAuc& other);
  std::uint64_t positives() const { return positives_; }
  std::uint64_t negatives() const { return negatives_; }
  /// Absent unless both classes were seen.
  std::optional<double> value() const;

 private:
  std::map<double, std::pair<std::uint64_t, std::uint64_t>> counts_;
  std::uint64_t positives_ = 0;
  std::uint64_t negatives_ = 0;
};

/// Mann-Whitney AUC with ties counted half. Absent for single-class input.
std::optional<double> auc(std::span<const double> scores, std::span<const int> labels);
/// Accuracy with threshold 0.5 (prob >= 0.5 predicts correct). Throws on empty.
double acc(std::span<const double> scores, std::span<const int> labels);
/// Throws on empty input.
double rmse(std::span<const double> scores, std::span<const int> labels);

// Record overloads consider fresh records only.
std::optional<double> auc(std::span<const PredictionRecord> records);
double acc(std::span<const PredictionRecord> records);
double rmse(std::span<const PredictionRecord> records);

/// AUC per 1-based window position (index 0 holds position 1) over all given
/// records; absent where a position has fewer than two classes.
std::vector<std::optional<double>> per_position_auc(std::span<const PredictionRecord> records,
                                                    std::size_t positions);

/// Moving average with window `window`; absent entries are skipped and a
/// window with no present entry is absent. Output length is
/// size - window + 1, or 1 when the series is shorter than the window.
std::vector<std::optional<double>> smoothed_auc(std::span<const std::optional<double>> series,
                                                std::size_t window);
/// round(fraction * positions), at least 1.
std::size_t smoothing_window(std::size_t positions, double fraction = 0.2);

struct MetricReport {
  std::optional<double> auc;
  double acc = 0.0;
  double rmse = 0.0;
  std::size_t count = 0;
  std::size_t positives = 0;
  std::vector<std::optional<double>> per_position_auc;
  std::vector<std::optional<double>> smoothed_auc;
};

/// Corpus-level metrics over fresh records plus positional series.
MetricReport make_report(std::span<const PredictionRecord> records, std::size_t positions,
                         double smoothing_fraction = 0.2);

/// Windows the corpus in eval mode at `spec`, scores it and reports.
MetricReport evaluate_corpus(const Predictor& predictor,
                             const std::vector<std::vector<Token>>& corpus,
                             const WindowSpec& spec);

struct SweepPoint {
  double overlap = 0.0;
  std::optional<double> auc;
  std::size_t count = 0;
};

std::vector<SweepPoint> overlap_ratio_sweep(const Predictor& predictor,
                                            const std::vector<std::vector<Token>>& corpus,
                                            std::size_t max_len, std::span<const double> ratios);

struct MetricCorrelations {
  std::optional<double> acc_auc;
  std::optional<double> auc_rmse;
  std::optional<double> acc_rmse;
};

/// Pearson correlation; absent when either side has zero variance.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);
/// Needs at least three reports with a defined AUC.
MetricCorrelations metric_correlations(std::span<const MetricReport> reports);

std::string report_to_json(const MetricReport& report);
/// position,auc rows; absent values are left empty.
std::string series_to_csv(std::span<const std::optional<double>> series,
                          const std::string& index_name);
std::string sweep_to_csv(std::span<const SweepPoint> sweep);

}  // namespace aakt
