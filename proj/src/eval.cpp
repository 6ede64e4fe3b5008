#include "aakt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "aakt/errors.hpp"
#include "json.hpp"

namespace aakt {

std::vector<double> DecoderPredictor::predict(const Window& window) const {
  auto tr = model_.forward(window);
  return {tr.probs.begin(), tr.probs.end()};
}

std::vector<PredictionRecord> collect_predictions(const Predictor& predictor,
                                                  std::span<const Window> windows) {
  std::vector<PredictionRecord> out;
  for (const auto& w : windows) {
    auto probs = predictor.predict(w);
    if (probs.size() != w.num_questions())
      throw std::logic_error("predictor returned the wrong number of probabilities");
    for (std::size_t slot = 0; slot < probs.size(); ++slot) {
      PredictionRecord r;
      r.student = w.student;
      r.interaction = w.interaction_index(slot);
      r.position = slot + 1;
      r.prob = probs[slot];
      r.label = w.tokens[2 * slot].label;
      r.fresh = w.fresh[slot];
      out.push_back(r);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// AUC

void StreamingAuc::add(double score, int label) {
  auto& c = counts_[score];
  if (label) {
    ++c.first;
    ++positives_;
  } else {
    ++c.second;
    ++negatives_;
  }
}

void StreamingAuc::merge(const StreamingAuc& other) {
  for (const auto& [score, c] : other.counts_) {
    auto& mine = counts_[score];
    mine.first += c.first;
    mine.second += c.second;
  }
  positives_ += other.positives_;
  negatives_ += other.negatives_;
}

std::optional<double> StreamingAuc::value() const {
  if (positives_ == 0 || negatives_ == 0) return std::nullopt;
  // Sum over score groups of pos * (neg strictly below + neg tied / 2), in
  // doubled integer units to stay exact.
  unsigned __int128 twice_u = 0;
  std::uint64_t neg_below = 0;
  for (const auto& [score, c] : counts_) {
    twice_u += static_cast<unsigned __int128>(c.first) * (2 * neg_below + c.second);
    neg_below += c.second;
  }
  return static_cast<double>(twice_u) /
         (2.0 * static_cast<double>(positives_) * static_cast<double>(negatives_));
}

std::optional<double> auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auc: size mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Midranks, doubled to keep them integral.
  double twice_rank_sum_pos = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double twice_mid = static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) {
        twice_rank_sum_pos += twice_mid;
        ++n_pos;
      }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const double np = static_cast<double>(n_pos);
  const double u = 0.5 * twice_rank_sum_pos - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

double acc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("acc: size mismatch");
  if (scores.empty()) throw DataError("accuracy of an empty record set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    hits += static_cast<std::size_t>((scores[i] >= 0.5 ? 1 : 0) == labels[i]);
  return static_cast<double>(hits) / static_cast<double>(scores.size());
}

double rmse(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("rmse: size mismatch");
  if (scores.empty()) throw DataError("RMSE of an empty record set");
  double sq = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    double e = scores[i] - labels[i];
    sq += e * e;
  }
  return std::sqrt(sq / static_cast<double>(scores.size()));
}

namespace {

void split_fresh(std::span<const PredictionRecord> records, std::vector<double>& scores,
                 std::vector<int>& labels) {
  for (const auto& r : records)
    if (r.fresh) {
      scores.push_back(r.prob);
      labels.push_back(r.label);
    }
}

}  // namespace

std::optional<double> auc(std::span<const PredictionRecord> records) {
  std::vector<double> s;
  std::vector<int> l;
  split_fresh(records, s, l);
  return auc(s, l);
}

double acc(std::span<const PredictionRecord> records) {
  std::vector<double> s;
  std::vector<int> l;
  split_fresh(records, s, l);
  return acc(s, l);
}

double rmse(std::span<const PredictionRecord> records) {
  std::vector<double> s;
  std::vector<int> l;
  split_fresh(records, s, l);
  return rmse(s, l);
}

// ---------------------------------------------------------------------------
// Positional analyses

std::vector<std::optional<double>> per_position_auc(std::span<const PredictionRecord> records,
                                                    std::size_t positions) {
  std::vector<StreamingAuc> acc_by_pos(positions);
  for (const auto& r : records)
    if (r.position >= 1 && r.position <= positions)
      acc_by_pos[r.position - 1].add(r.prob, r.label);
  std::vector<std::optional<double>> out;
  out.reserve(positions);
  for (const auto& a : acc_by_pos) out.push_back(a.value());
  return out;
}

std::vector<std::optional<double>> smoothed_auc(std::span<const std::optional<double>> series,
                                                std::size_t window) {
  if (window == 0) throw ConfigError("smoothing window must be >= 1");
  auto mean_of = [&](std::size_t begin, std::size_t end) -> std::optional<double> {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = begin; i < end; ++i)
      if (series[i]) {
        sum += *series[i];
        ++n;
      }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
  };
  if (series.size() < window) return {mean_of(0, series.size())};
  std::vector<std::optional<double>> out;
  out.reserve(series.size() - window + 1);
  for (std::size_t s = 0; s + window <= series.size(); ++s) out.push_back(mean_of(s, s + window));
  return out;
}

std::size_t smoothing_window(std::size_t positions, double fraction) {
  auto w = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(positions)));
  return std::max<std::size_t>(1, w);
}

MetricReport make_report(std::span<const PredictionRecord> records, std::size_t positions,
                         double smoothing_fraction) {
  MetricReport rep;
  std::vector<double> s;
  std::vector<int> l;
  split_fresh(records, s, l);
  rep.count = s.size();
  rep.positives = static_cast<std::size_t>(std::count(l.begin(), l.end(), 1));
  rep.auc = auc(s, l);
  rep.acc = acc(s, l);
  rep.rmse = rmse(s, l);
  rep.per_position_auc = per_position_auc(records, positions);
  rep.smoothed_auc =
      smoothed_auc(rep.per_position_auc, smoothing_window(positions, smoothing_fraction));
  return rep;
}

MetricReport evaluate_corpus(const Predictor& predictor,
                             const std::vector<std::vector<Token>>& corpus,
                             const WindowSpec& spec) {
  auto windows = window_corpus(corpus, spec, WindowMode::kEval);
  auto records = collect_predictions(predictor, windows);
  return make_report(records, spec.max_len / 2);
}

std::vector<SweepPoint> overlap_ratio_sweep(const Predictor& predictor,
                                            const std::vector<std::vector<Token>>& corpus,
                                            std::size_t max_len, std::span<const double> ratios) {
  std::vector<SweepPoint> out;
  for (double r : ratios) {
    WindowSpec spec{max_len, r};
    auto windows = window_corpus(corpus, spec, WindowMode::kEval);
    auto records = collect_predictions(predictor, windows);
    SweepPoint p;
    p.overlap = r;
    p.auc = auc(std::span<const PredictionRecord>(records));
    p.count = static_cast<std::size_t>(
        std::count_if(records.begin(), records.end(), [](const auto& x) { return x.fresh; }));
    out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Correlations

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.empty()) throw std::invalid_argument("pearson: size mismatch");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

MetricCorrelations metric_correlations(std::span<const MetricReport> reports) {
  std::vector<double> a, c, r;
  for (const auto& rep : reports) {
    if (!rep.auc) continue;
    a.push_back(*rep.auc);
    c.push_back(rep.acc);
    r.push_back(rep.rmse);
  }
  if (a.size() < 3) throw DataError("metric correlations need at least three reports");
  return {pearson(c, a), pearson(a, r), pearson(c, r)};
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

nlohmann::json optional_series(const std::vector<std::optional<double>>& s) {
  auto j = nlohmann::json::array();
  for (const auto& v : s) j.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
  return j;
}

}  // namespace

std::string report_to_json(const MetricReport& r) {
  nlohmann::json j;
  j["auc"] = r.auc ? nlohmann::json(*r.auc) : nlohmann::json(nullptr);
  j["acc"] = r.acc;
  j["rmse"] = r.rmse;
  j["count"] = r.count;
  j["positives"] = r.positives;
  j["per_position_auc"] = optional_series(r.per_position_auc);
  j["smoothed_auc"] = optional_series(r.smoothed_auc);
  return j.dump(2);
}

std::string series_to_csv(std::span<const std::optional<double>> series,
                          const std::string& index_name) {
  std::ostringstream os;
  os.precision(10);
  os << index_name << ",auc\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    os << i + 1 << ',';
    if (series[i]) os << *series[i];
    os << '\n';
  }
  return os.str();
}

std::string sweep_to_csv(std::span<const SweepPoint> sweep) {
  std::ostringstream os;
  os.precision(10);
  os << "overlap,auc,count\n";
  for (const auto& p : sweep) {
    os << p.overlap << ',';
    if (p.auc) os << *p.auc;
    os << ',' << p.count << '\n';
  }
  return os.str();
}

}  // namespace aakt
