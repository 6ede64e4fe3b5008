// aakt: command-line front end for the knowledge-tracing pipeline.

#include <spdlog/spdlog.h>

#include <Eigen/Core>
#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "aakt/checkpoint.hpp"
#include "aakt/errors.hpp"
#include "aakt/eval.hpp"
#include "aakt/ingest.hpp"
#include "aakt/synthgen.hpp"
#include "aakt/train.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace aakt;

namespace {

constexpr int kUsageError = 2;

struct Key {
  const char* name;
  const char* fallback;
  const char* help;
};

// Config keys shared by flags and --config files. Flag names are the keys with
// '_' replaced by '-'.
const std::vector<Key> kModelKeys = {
    {"dim", "64", "Embedding / hidden width"},
    {"blocks", "2", "Number of decoder blocks"},
    {"heads", "8", "Attention heads per block"},
    {"rotary_dim", "0", "Rotary channels per head (0: dim / (2 * heads))"},
    {"ffn_mult", "4", "Feed-forward width multiplier"},
    {"dropout", "0.1", "Dropout probability"},
    {"skill_mode", "auxiliary", "auxiliary | additive | none"},
    {"use_time", "true", "Add normalized response time to response tokens"},
    {"time_factor", "60000", "Time normalization constant in ms"},
    {"time_clip", "200000", "Response time clip in ms"},
};

const std::vector<Key> kTrainKeys = {
    {"lr", "0.001", "Adam learning rate"},
    {"batch_size", "64", "Windows per batch"},
    {"epochs", "100", "Maximum epochs"},
    {"patience", "5", "Early-stopping patience in epochs"},
    {"max_len", "100", "Window length in alternate tokens"},
    {"overlap", "0.5", "Sliding-window overlap ratio"},
    {"val_fraction", "0.1", "Share of training students used for early stopping"},
    {"folds", "5", "Cross-validation folds"},
    {"seed", "42", "Random seed"},
};

const std::vector<Key> kSynthKeys = {
    {"students", "500", "Number of students"},
    {"questions", "50", "Number of questions"},
    {"skills", "5", "Number of skills"},
    {"skills_per_question", "0.6,0.3,0.1", "Weights for 1, 2, 3, ... skills per question"},
    {"p_init", "0.1", "Initial mastery probability"},
    {"p_learn", "0.15", "Learning probability per attempt"},
    {"p_guess", "0.2", "Guess probability"},
    {"p_slip", "0.1", "Slip probability"},
    {"min_length", "50", "Shortest sequence"},
    {"max_length", "150", "Longest sequence"},
    {"seed", "7", "Random seed"},
};

const std::vector<Key> kPreprocessKeys = {
    {"format", "csv", "csv | tsv"},
    {"min_len", "0", "Drop students with fewer interactions"},
    {"folds", "5", "Cross-validation folds written to folds.json"},
    {"seed", "42", "Random seed for the fold split"},
    {"col_student", "user_id", "Student column"},
    {"col_question", "problem_id", "Question column"},
    {"col_skills", "skill_id", "Skill column"},
    {"col_correct", "correct", "Correctness column"},
    {"col_time", "ms_first_response", "Response-time column"},
    {"col_order", "", "Ordering column (empty: file order)"},
    {"skill_delimiter", ";", "Separator inside the skill column"},
    {"merge", "true", "Merge rows that split one attempt across skills"},
};

std::string flag_name(const std::string& key) {
  std::string f = key;
  std::replace(f.begin(), f.end(), '_', '-');
  return "--" + f;
}

std::vector<double> parse_list(const std::string& what, const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::logic_error&) {
      throw ConfigError("'" + what + "' expects a comma-separated list of numbers");
    }
  }
  return out;
}

std::string trim(std::string s) {
  auto ws = [](unsigned char c) { return std::isspace(c); };
  s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), ws));
  s.erase(std::find_if_not(s.rbegin(), s.rend(), ws).base(), s.end());
  return s;
}

// Resolved key=value settings: defaults, then --config file, then flags.
class Settings {
 public:
  void declare(CLI::App* app, const std::vector<Key>& keys) {
    for (const auto& k : keys) {
      if (values_.count(k.name)) continue;
      values_[k.name] = k.fallback;
      options_[k.name] = app->add_option(flag_name(k.name), flags_[k.name], k.help)
                             ->default_str(k.fallback);
    }
    if (!app->get_option_no_throw("--config"))
      app->add_option("--config", config_file_, "File of key=value lines; flags override it")
          ->check(CLI::ExistingFile);
  }

  void resolve() {
    if (!config_file_.empty()) {
      std::ifstream in(config_file_);
      std::string line;
      std::size_t n = 0;
      while (std::getline(in, line)) {
        ++n;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
          throw ConfigError(config_file_ + ":" + std::to_string(n) + ": expected key=value");
        try {
          assign(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
          throw ConfigError(config_file_ + ":" + std::to_string(n) + ": " + e.what());
        }
      }
    }
    for (const auto& [key, opt] : options_)
      if (opt->count() > 0) values_[key] = flags_[key];
  }

  void assign(std::string key, const std::string& value) {
    std::replace(key.begin(), key.end(), '-', '_');
    if (!values_.count(key)) throw ConfigError("unknown key '" + key + "'");
    values_[key] = value;
  }

  const std::string& str(const std::string& key) const { return values_.at(key); }

  double num(const std::string& key) const {
    try {
      std::size_t used = 0;
      double v = std::stod(str(key), &used);
      if (used != str(key).size()) throw std::invalid_argument(key);
      return v;
    } catch (const std::logic_error&) {
      throw ConfigError("'" + key + "' expects a number, got '" + str(key) + "'");
    }
  }

  std::size_t count(const std::string& key) const {
    double v = num(key);
    if (v < 0 || v != static_cast<double>(static_cast<std::size_t>(v)))
      throw ConfigError("'" + key + "' expects a non-negative integer");
    return static_cast<std::size_t>(v);
  }

  bool flag(const std::string& key) const {
    const auto& v = str(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("'" + key + "' expects true or false");
  }

  std::vector<double> list(const std::string& key) const { return parse_list(key, str(key)); }

  const std::map<std::string, std::string>& values() const { return values_; }

  /// 64-bit FNV-1a over the sorted key=value lines.
  std::string hash() const {
    std::uint64_t h = 14695981039346656037ull;
    for (const auto& [k, v] : values_)
      for (char c : k + "=" + v + "\n") {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
      }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, std::string> flags_;
  std::map<std::string, CLI::Option*> options_;
  std::string config_file_;
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return json::parse(in);
}

void write_manifest(const fs::path& path, const std::string& command, const Settings& s,
                    const json& inputs) {
  json m;
  m["command"] = command;
  m["config"] = s.values();
  m["config_hash"] = s.hash();
  m["seed"] = s.values().count("seed") ? s.str("seed") : "";
  m["inputs"] = inputs;
  m["versions"] = {{"aakt", AAKT_VERSION},
                   {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                 std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                 std::to_string(EIGEN_MINOR_VERSION)},
                   {"spdlog", std::to_string(SPDLOG_VER_MAJOR) + "." +
                                  std::to_string(SPDLOG_VER_MINOR) + "." +
                                  std::to_string(SPDLOG_VER_PATCH)},
                   {"compiler", __VERSION__}};
  write_text(path, m.dump(2) + "\n");
}

ModelConfig model_config(const Settings& s) {
  ModelConfig c;
  c.dim = s.count("dim");
  c.num_blocks = s.count("blocks");
  c.num_heads = s.count("heads");
  c.rotary_dim = s.count("rotary_dim");
  c.ffn_mult = s.count("ffn_mult");
  c.dropout = s.num("dropout");
  c.skill_mode = skill_mode_from_string(s.str("skill_mode"));
  c.use_time = s.flag("use_time");
  c.time.time_factor_ms = s.num("time_factor");
  c.time.clip_max_ms = s.num("time_clip");
  return c;
}

TrainConfig train_config(const Settings& s) {
  TrainConfig t;
  t.learning_rate = s.num("lr");
  t.batch_size = s.count("batch_size");
  t.max_epochs = s.count("epochs");
  t.patience = s.count("patience");
  t.window = WindowSpec{s.count("max_len"), s.num("overlap")};
  t.validation_fraction = s.num("val_fraction");
  t.seed = static_cast<std::uint64_t>(s.count("seed"));
  t.validate();
  return t;
}

json folds_to_json(const std::vector<FoldSplit>& splits, const Dataset& d) {
  json j = json::array();
  for (const auto& f : splits) {
    json ids = json::array();
    for (auto i : f.test) ids.push_back(d.sequences[i].student_id);
    j.push_back({{"test", ids}});
  }
  return j;
}

std::vector<FoldSplit> folds_from_json(const json& j, const Dataset& d) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < d.sequences.size(); ++i) index[d.sequences[i].student_id] = i;
  std::vector<FoldSplit> out;
  std::vector<int> fold_of(d.sequences.size(), -1);
  for (std::size_t f = 0; f < j.size(); ++f)
    for (const auto& id : j[f].at("test")) {
      auto it = index.find(id.get<std::string>());
      if (it == index.end())
        throw DataError("fold file names student '" + id.get<std::string>() +
                        "' missing from the dataset");
      fold_of[it->second] = static_cast<int>(f);
    }
  out.resize(j.size());
  for (std::size_t i = 0; i < fold_of.size(); ++i)
    for (std::size_t f = 0; f < out.size(); ++f)
      (static_cast<int>(f) == fold_of[i] ? out[f].test : out[f].train).push_back(i);
  return out;
}

// Settings stored by `train`, reloaded by commands that work on a run.
Settings run_settings(const fs::path& run) {
  Settings s;
  CLI::App scratch;
  s.declare(&scratch, kModelKeys);
  s.declare(&scratch, kTrainKeys);
  json m = read_json(run / "manifest.json");
  for (auto& [k, v] : m.at("config").items()) s.assign(k, v.get<std::string>());
  return s;
}

std::vector<std::size_t> parse_fold_list(const std::vector<std::size_t>& requested,
                                         std::size_t n_folds) {
  std::vector<std::size_t> folds = requested;
  if (folds.empty())
    for (std::size_t f = 0; f < n_folds; ++f) folds.push_back(f);
  for (auto f : folds)
    if (f >= n_folds) throw ConfigError("fold " + std::to_string(f) + " out of range");
  return folds;
}

struct RunContext {
  Settings settings;
  Dataset data;
  std::vector<FoldSplit> splits;
};

RunContext open_run(const fs::path& run, const fs::path& data_dir) {
  RunContext ctx{run_settings(run), load_dataset(data_dir), {}};
  ctx.splits = folds_from_json(read_json(run / "folds.json"), ctx.data);
  return ctx;
}

Decoder<float> load_model(const fs::path& run, std::size_t fold) {
  auto ck = load_checkpoint(run / "checkpoints" / ("fold" + std::to_string(fold) + ".ckpt"));
  return Decoder<float>(ck.config, std::move(ck.params));
}

std::string fold_name(std::size_t f) { return "fold" + std::to_string(f); }

void write_report(const fs::path& metrics, const std::string& stem, const MetricReport& r) {
  write_text(metrics / (stem + ".json"), report_to_json(r) + "\n");
  write_text(metrics / (stem + "_per_position.csv"),
             series_to_csv(r.per_position_auc, "position"));
  write_text(metrics / (stem + "_smoothed.csv"), series_to_csv(r.smoothed_auc, "start"));
}

std::string fmt_auc(const std::optional<double>& v) {
  return v ? std::to_string(*v) : std::string("n/a");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Alternate-sequence knowledge tracing: data preparation, training and analysis"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace | debug | info | warn | error | off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "Parse a raw log into a canonical dataset");
  Settings pre_s;
  std::string pre_in, pre_out;
  pre->add_option("--input", pre_in, "Raw interaction log")->required()->check(CLI::ExistingFile);
  pre->add_option("--out", pre_out, "Output dataset directory")->required();
  pre_s.declare(pre, kPreprocessKeys);

  // synth
  auto* syn = app.add_subcommand("synth", "Generate a synthetic dataset with ground truth");
  Settings syn_s;
  std::string syn_out;
  syn->add_option("--out", syn_out, "Output dataset directory")->required();
  syn_s.declare(syn, kSynthKeys);

  // train
  auto* tr = app.add_subcommand("train", "Cross-validated training into a run directory");
  Settings tr_s;
  std::string tr_data, tr_run;
  std::vector<std::size_t> tr_folds;
  tr->add_option("--data", tr_data, "Canonical dataset directory")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--run", tr_run, "Run directory")->required();
  tr->add_option("--fold", tr_folds, "Train only these folds (repeatable)");
  tr_s.declare(tr, kModelKeys);
  tr_s.declare(tr, kTrainKeys);

  // eval
  auto* ev = app.add_subcommand("eval", "Score checkpoints on their test folds");
  std::string ev_data, ev_run;
  std::vector<std::size_t> ev_folds;
  std::optional<std::size_t> ev_max_len;
  std::optional<double> ev_overlap;
  ev->add_option("--data", ev_data, "Canonical dataset directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--run", ev_run, "Run directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--fold", ev_folds, "Folds to evaluate (default: all)");
  ev->add_option("--max-len", ev_max_len, "Override window length");
  ev->add_option("--overlap", ev_overlap, "Override overlap ratio");

  // sweep
  auto* sw = app.add_subcommand("sweep", "Test AUC as a function of overlap ratio");
  std::string sw_data, sw_run, sw_ratios = "0,0.25,0.5,0.75";
  std::vector<std::size_t> sw_folds;
  sw->add_option("--data", sw_data, "Canonical dataset directory")->required()->check(CLI::ExistingDirectory);
  sw->add_option("--run", sw_run, "Run directory")->required()->check(CLI::ExistingDirectory);
  sw->add_option("--fold", sw_folds, "Folds to sweep (default: all)");
  sw->add_option("--ratios", sw_ratios, "Comma-separated overlap ratios")->capture_default_str();

  // export-attention
  auto* ea = app.add_subcommand("export-attention", "Dump attention weights of one layer");
  std::string ea_data, ea_run;
  std::size_t ea_fold = 0, ea_layer = 0, ea_windows = 1;
  ea->add_option("--data", ea_data, "Canonical dataset directory")->required()->check(CLI::ExistingDirectory);
  ea->add_option("--run", ea_run, "Run directory")->required()->check(CLI::ExistingDirectory);
  ea->add_option("--fold", ea_fold, "Fold whose checkpoint and test students are used")->capture_default_str();
  ea->add_option("--layer", ea_layer, "Decoder block index")->capture_default_str();
  ea->add_option("--windows", ea_windows, "Number of test windows to export")->capture_default_str();

  // export-embeddings
  auto* ee = app.add_subcommand("export-embeddings", "Dump question embedding rows with skill labels");
  std::string ee_data, ee_run;
  std::size_t ee_fold = 0;
  ee->add_option("--data", ee_data, "Canonical dataset directory")->required()->check(CLI::ExistingDirectory);
  ee->add_option("--run", ee_run, "Run directory")->required()->check(CLI::ExistingDirectory);
  ee->add_option("--fold", ee_fold, "Fold checkpoint")->capture_default_str();

  // stats
  auto* st = app.add_subcommand("stats", "Print dataset statistics");
  std::string st_data, st_out;
  bool st_json = false;
  st->add_option("--data", st_data, "Canonical dataset directory")->required()->check(CLI::ExistingDirectory);
  st->add_option("--out", st_out, "Also write stats.json and a manifest here");
  st->add_flag("--json", st_json, "Print JSON instead of a table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*pre) {
      pre_s.resolve();
      ColumnMap cols;
      const auto& format = pre_s.str("format");
      if (format != "csv" && format != "tsv") throw ConfigError("format must be csv or tsv");
      cols.delimiter = format == "tsv" ? '\t' : ',';
      cols.student = pre_s.str("col_student");
      cols.question = pre_s.str("col_question");
      cols.skills = pre_s.str("col_skills");
      cols.correct = pre_s.str("col_correct");
      cols.time = pre_s.str("col_time");
      cols.order = pre_s.str("col_order");
      if (pre_s.str("skill_delimiter").size() != 1)
        throw ConfigError("skill_delimiter must be one character");
      cols.skill_delimiter = pre_s.str("skill_delimiter")[0];
      std::ifstream in(pre_in);
      auto parsed = parse_interactions(in, cols);
      Dataset d = std::move(parsed.dataset);
      if (pre_s.flag("merge")) d = merge_multiskill_rows(std::move(d));
      d = filter_short_sequences(std::move(d), pre_s.count("min_len"));
      fs::path out(pre_out);
      save_dataset(out, d);
      if (!d.sequences.empty()) {
        auto splits = split_cross_validation(d.sequences.size(), static_cast<int>(pre_s.count("folds")),
                                             pre_s.count("seed"));
        write_text(out / "folds.json", folds_to_json(splits, d).dump() + "\n");
        write_text(out / "stats.json", stats_to_json(compute_dataset_stats(d)) + "\n");
      }
      write_manifest(out / "manifest.json", "preprocess", pre_s,
                     {{"input", pre_in},
                      {"accepted_rows", parsed.accepted_rows},
                      {"rejected_rows", parsed.rejected.size()}});
      spdlog::info("{} rows accepted, {} rejected, {} students kept", parsed.accepted_rows,
                   parsed.rejected.size(), d.sequences.size());
    } else if (*syn) {
      syn_s.resolve();
      SynthConfig c;
      c.n_students = syn_s.count("students");
      c.n_questions = syn_s.count("questions");
      c.n_skills = syn_s.count("skills");
      c.skills_per_question = syn_s.list("skills_per_question");
      c.skill_defaults = {syn_s.num("p_init"), syn_s.num("p_learn"), syn_s.num("p_guess"),
                          syn_s.num("p_slip")};
      c.min_length = syn_s.count("min_length");
      c.max_length = syn_s.count("max_length");
      c.seed = syn_s.count("seed");
      auto out = generate(c);
      save_synth(syn_out, out);
      auto oracle = bayes_optimal_auc(out);
      write_manifest(fs::path(syn_out) / "manifest.json", "synth", syn_s,
                     {{"bayes_optimal_auc", oracle ? json(*oracle) : json()}});
      std::cout << "students " << c.n_students << ", records " << out.dataset.num_interactions()
                << ", bayes-optimal AUC " << fmt_auc(oracle) << "\n";
    } else if (*tr) {
      tr_s.resolve();
      auto mc = model_config(tr_s);
      auto tc = train_config(tr_s);
      Dataset d = load_dataset(tr_data);
      fs::path run(tr_run);
      std::vector<FoldSplit> splits;
      splits = split_cross_validation(d.sequences.size(), static_cast<int>(tr_s.count("folds")),
                                      tc.seed);
      fs::create_directories(run / "checkpoints");
      fs::create_directories(run / "metrics");
      fs::create_directories(run / "exports");
      write_text(run / "folds.json", folds_to_json(splits, d).dump() + "\n");
      write_manifest(run / "manifest.json", "train", tr_s, {{"data", tr_data}});
      std::ofstream log(run / "metrics" / "train_log.jsonl");
      FitOptions opts;
      opts.only_folds = parse_fold_list(tr_folds, splits.size());
      opts.checkpoint_dir = run / "checkpoints";
      opts.on_epoch = [&](const EpochLog& e) { log << epoch_log_to_json(e) << "\n" << std::flush; };
      auto report = fit(d, splits, mc, tc, opts);
      write_text(run / "metrics" / "fit_report.json", fit_report_to_json(report) + "\n");
      for (const auto& f : report.folds)
        if (!f.failed) write_report(run / "metrics", fold_name(f.fold) + "_test", f.test);
      std::cout << "mean test AUC " << fmt_auc(report.mean_auc) << ", ACC " << report.mean_acc
                << ", RMSE " << report.mean_rmse << "\n";
      bool any_failed = std::any_of(report.folds.begin(), report.folds.end(),
                                    [](const FoldResult& f) { return f.failed; });
      return any_failed ? 1 : 0;
    } else if (*ev) {
      auto ctx = open_run(ev_run, ev_data);
      auto tc = train_config(ctx.settings);
      WindowSpec spec{ev_max_len.value_or(tc.window.max_len),
                      ev_overlap.value_or(tc.window.overlap)};
      spec.validate();
      std::vector<MetricReport> reports;
      for (auto f : parse_fold_list(ev_folds, ctx.splits.size())) {
        auto model = load_model(ev_run, f);
        auto tokens = build_corpus_tokens(select_students(ctx.data, ctx.splits[f].test),
                                          model.config().time);
        auto r = evaluate_corpus(DecoderPredictor(model), tokens, spec);
        write_report(fs::path(ev_run) / "metrics", "eval_" + fold_name(f), r);
        std::cout << fold_name(f) << ": AUC " << fmt_auc(r.auc) << ", ACC " << r.acc
                  << ", RMSE " << r.rmse << ", n " << r.count << "\n";
        reports.push_back(std::move(r));
      }
      if (reports.size() >= 3) {
        auto c = metric_correlations(reports);
        std::cout << "correlations: acc/auc " << fmt_auc(c.acc_auc) << ", auc/rmse "
                  << fmt_auc(c.auc_rmse) << ", acc/rmse " << fmt_auc(c.acc_rmse) << "\n";
      }
      json in = {{"data", ev_data}, {"max_len", spec.max_len}, {"overlap", spec.overlap}};
      write_manifest(fs::path(ev_run) / "metrics" / "manifest.eval.json", "eval", ctx.settings, in);
    } else if (*sw) {
      auto ctx = open_run(sw_run, sw_data);
      auto tc = train_config(ctx.settings);
      auto ratios = parse_list("ratios", sw_ratios);
      for (auto f : parse_fold_list(sw_folds, ctx.splits.size())) {
        auto model = load_model(sw_run, f);
        auto tokens = build_corpus_tokens(select_students(ctx.data, ctx.splits[f].test),
                                          model.config().time);
        auto sweep = overlap_ratio_sweep(DecoderPredictor(model), tokens, tc.window.max_len, ratios);
        write_text(fs::path(sw_run) / "metrics" / ("sweep_" + fold_name(f) + ".csv"),
                   sweep_to_csv(sweep));
        for (const auto& p : sweep)
          std::cout << fold_name(f) << " r_o=" << p.overlap << ": AUC " << fmt_auc(p.auc) << "\n";
      }
      write_manifest(fs::path(sw_run) / "metrics" / "manifest.sweep.json", "sweep", ctx.settings,
                     {{"data", sw_data}, {"ratios", ratios}});
    } else if (*ea) {
      auto ctx = open_run(ea_run, ea_data);
      auto tc = train_config(ctx.settings);
      if (ea_fold >= ctx.splits.size()) throw ConfigError("fold out of range");
      auto model = load_model(ea_run, ea_fold);
      if (ea_layer >= model.config().num_blocks) throw ConfigError("layer out of range");
      auto tokens = build_corpus_tokens(select_students(ctx.data, ctx.splits[ea_fold].test),
                                        model.config().time);
      auto windows = window_corpus(tokens, tc.window, WindowMode::kEval);
      windows.resize(std::min(windows.size(), ea_windows));
      auto out = model.forward_batch(Batch{windows});
      std::ostringstream csv;
      csv << "window,head,row,col,weight\n";
      csv.precision(9);
      for (std::size_t w = 0; w < windows.size(); ++w)
        for (std::size_t h = 0; h < out.attn[w][ea_layer].size(); ++h) {
          const auto& m = out.attn[w][ea_layer][h];
          for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c)
              csv << w << ',' << h << ',' << r << ',' << c << ',' << m(r, c) << '\n';
        }
      fs::path path = fs::path(ea_run) / "exports" /
                      ("attention_" + fold_name(ea_fold) + "_layer" + std::to_string(ea_layer) + ".csv");
      write_text(path, csv.str());
      write_manifest(fs::path(ea_run) / "exports" / "manifest.export-attention.json",
                     "export-attention", ctx.settings,
                     {{"data", ea_data}, {"fold", ea_fold}, {"layer", ea_layer}, {"windows", windows.size()}});
      std::cout << path.string() << "\n";
    } else if (*ee) {
      auto settings = run_settings(ee_run);
      Dataset d = load_dataset(ee_data);
      auto model = load_model(ee_run, ee_fold);
      auto qs = d.question_skills();
      const auto& emb = model.params().question_emb;
      std::ostringstream csv;
      csv.precision(9);
      csv << "question_idx,question_id,skills";
      for (Eigen::Index c = 0; c < emb.cols(); ++c) csv << ",e" << c;
      csv << '\n';
      for (Eigen::Index q = 0; q < emb.rows(); ++q) {
        csv << q << ',' << d.vocab.questions().at(static_cast<std::size_t>(q)) << ',';
        const auto& sk = qs.at(static_cast<std::size_t>(q));
        for (std::size_t i = 0; i < sk.size(); ++i)
          csv << (i ? ";" : "") << d.vocab.skills().at(static_cast<std::size_t>(sk[i]));
        for (Eigen::Index c = 0; c < emb.cols(); ++c) csv << ',' << emb(q, c);
        csv << '\n';
      }
      fs::path path = fs::path(ee_run) / "exports" / ("embeddings_" + fold_name(ee_fold) + ".csv");
      write_text(path, csv.str());
      write_manifest(fs::path(ee_run) / "exports" / "manifest.export-embeddings.json",
                     "export-embeddings", settings, {{"data", ee_data}, {"fold", ee_fold}});
      std::cout << path.string() << "\n";
    } else if (*st) {
      auto stats = compute_dataset_stats(load_dataset(st_data));
      std::cout << (st_json ? stats_to_json(stats) + "\n" : format_stats_table(stats));
      if (!st_out.empty()) {
        write_text(fs::path(st_out) / "stats.json", stats_to_json(stats) + "\n");
        Settings none;
        write_manifest(fs::path(st_out) / "manifest.json", "stats", none, {{"data", st_data}});
      }
    }
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return kUsageError;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
