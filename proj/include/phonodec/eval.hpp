#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "phonodec/error.hpp"
#include "phonodec/hierarchy.hpp"
#include "phonodec/phonology.hpp"
#include "phonodec/rng.hpp"
#include "phonodec/signal.hpp"

namespace phonodec {

// ---------------------------------------------------------------------------
// Confusion matrices and metrics

// Rows are true classes, columns predictions.
struct ConfusionMatrix {
  std::size_t k = 0;
  std::vector<std::size_t> counts;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t classes) : k(classes), counts(classes * classes, 0) {}

  std::size_t at(std::size_t truth, std::size_t pred) const { return counts[truth * k + pred]; }
  std::size_t& at(std::size_t truth, std::size_t pred) { return counts[truth * k + pred]; }
  std::size_t total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }
  std::size_t row_sum(std::size_t i) const {
    std::size_t s = 0;
    for (std::size_t j = 0; j < k; ++j) s += at(i, j);
    return s;
  }
  std::size_t col_sum(std::size_t j) const {
    std::size_t s = 0;
    for (std::size_t i = 0; i < k; ++i) s += at(i, j);
    return s;
  }
  std::size_t trace() const {
    std::size_t s = 0;
    for (std::size_t i = 0; i < k; ++i) s += at(i, i);
    return s;
  }
  double accuracy() const { return total() ? static_cast<double>(trace()) / static_cast<double>(total()) : 0.0; }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

inline ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> pred, std::size_t k) {
  if (truth.size() != pred.size()) throw ValidationError("confusion: label sequences differ in length");
  ConfusionMatrix cm(k);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || pred[i] < 0 || static_cast<std::size_t>(truth[i]) >= k ||
        static_cast<std::size_t>(pred[i]) >= k) {
      throw ValidationError("confusion: label outside 0.." + std::to_string(k - 1) + " at position " +
                            std::to_string(i));
    }
    ++cm.at(static_cast<std::size_t>(truth[i]), static_cast<std::size_t>(pred[i]));
  }
  return cm;
}

// Fractions in [0, 1] (kappa in [-1, 1]). A ratio with a zero denominator is
// reported as 0 and flagged.
struct Metrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double specificity = 0.0;
  double f1 = 0.0;
  double kappa = 0.0;
  std::size_t support = 0;
  std::vector<std::string> undefined;

  bool is_undefined(std::string_view field) const {
    return std::find(undefined.begin(), undefined.end(), field) != undefined.end();
  }
};

inline double f1_score(double precision, double recall) {
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

namespace detail {

inline double ratio(double num, double den, const char* name, std::vector<std::string>& undefined) {
  if (den > 0.0) return num / den;
  undefined.emplace_back(name);
  return 0.0;
}

}  // namespace detail

// Cohen's kappa on the full matrix, expected agreement from the marginal products.
inline double cohen_kappa(const ConfusionMatrix& cm, bool* undefined = nullptr) {
  const double n = static_cast<double>(cm.total());
  if (n == 0.0) throw ValidationError("kappa: empty confusion matrix");
  const double po = static_cast<double>(cm.trace()) / n;
  double pe = 0.0;
  for (std::size_t i = 0; i < cm.k; ++i) {
    pe += (static_cast<double>(cm.row_sum(i)) / n) * (static_cast<double>(cm.col_sum(i)) / n);
  }
  if (undefined) *undefined = !(pe < 1.0);
  // All mass on one cell of the diagonal: perfect agreement with nothing to correct.
  if (!(pe < 1.0)) return po == 1.0 ? 1.0 : 0.0;
  return (po - pe) / (1.0 - pe);
}

// One-vs-rest metrics for class `positive`.
inline Metrics one_vs_rest(const ConfusionMatrix& cm, std::size_t positive) {
  const double n = static_cast<double>(cm.total());
  if (n == 0.0) throw ValidationError("metrics: empty confusion matrix");
  const double tp = static_cast<double>(cm.at(positive, positive));
  const double fn = static_cast<double>(cm.row_sum(positive)) - tp;
  const double fp = static_cast<double>(cm.col_sum(positive)) - tp;
  const double tn = n - tp - fn - fp;
  Metrics m;
  m.support = cm.row_sum(positive);
  m.accuracy = (tp + tn) / n;
  m.precision = detail::ratio(tp, tp + fp, "precision", m.undefined);
  m.recall = detail::ratio(tp, tp + fn, "recall", m.undefined);
  m.specificity = detail::ratio(tn, tn + fp, "specificity", m.undefined);
  if (m.precision + m.recall > 0.0) {
    m.f1 = f1_score(m.precision, m.recall);
  } else {
    m.undefined.emplace_back("f1");
  }
  ConfusionMatrix b(2);
  b.at(1, 1) = static_cast<std::size_t>(tp);
  b.at(1, 0) = static_cast<std::size_t>(fn);
  b.at(0, 1) = static_cast<std::size_t>(fp);
  b.at(0, 0) = static_cast<std::size_t>(tn);
  bool kappa_undefined = false;
  m.kappa = cohen_kappa(b, &kappa_undefined);
  if (kappa_undefined) m.undefined.emplace_back("kappa");
  return m;
}

// Class 1 is the positive class.
inline Metrics binary_metrics(const ConfusionMatrix& cm) {
  if (cm.k != 2) throw ValidationError("binary_metrics: expected a 2x2 matrix, got " + std::to_string(cm.k));
  return one_vs_rest(cm, 1);
}

struct MulticlassSummary {
  std::vector<Metrics> per_class;
  Metrics macro;  // unweighted means of the per-class values
  double accuracy = 0.0;
  double kappa = 0.0;
};

inline MulticlassSummary multiclass_summary(const ConfusionMatrix& cm) {
  if (cm.k < 2) throw ValidationError("multiclass_summary: need at least 2 classes");
  MulticlassSummary s;
  for (std::size_t c = 0; c < cm.k; ++c) s.per_class.push_back(one_vs_rest(cm, c));
  const double kd = static_cast<double>(cm.k);
  for (const auto& m : s.per_class) {
    s.macro.precision += m.precision / kd;
    s.macro.recall += m.recall / kd;
    s.macro.specificity += m.specificity / kd;
    s.macro.f1 += m.f1 / kd;
    s.macro.support += m.support;
  }
  s.accuracy = cm.accuracy();
  s.macro.accuracy = s.accuracy;
  bool undefined = false;
  s.kappa = cohen_kappa(cm, &undefined);
  s.macro.kappa = s.kappa;
  if (undefined) s.macro.undefined.emplace_back("kappa");
  return s;
}

// Percent with two decimals, halves rounded away from zero.
inline std::string format_percent(double fraction) {
  const double v = fraction * 100.0;
  const double scaled = std::floor(std::abs(v) * 100.0 + 0.5 + 1e-9) / 100.0;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v < 0 && scaled > 0 ? -scaled : scaled);
  return buf;
}

inline double round_percent(double fraction) { return std::stod(format_percent(fraction)); }

// ---------------------------------------------------------------------------
// Splits

struct Partition {
  std::vector<std::size_t> train, dev, test;
};

// Seeded shuffle, then consecutive cuts of round(n * ratio) for train and dev;
// test takes the remainder when the ratios sum to 1.
inline Partition random_split(std::size_t n, const std::array<double, 3>& ratios, std::uint64_t seed) {
  double total = 0.0;
  for (double r : ratios) {
    if (!(r >= 0.0)) throw ValidationError("split: ratios must be non-negative");
    total += r;
  }
  if (total > 1.0 + 1e-9) throw ValidationError("split: ratios sum to more than 1");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng = Rng(seed).fork("split");
  shuffle(idx, rng);
  const auto count = [&](double r) { return static_cast<std::size_t>(std::llround(r * static_cast<double>(n))); };
  const std::size_t n_train = std::min(n, count(ratios[0]));
  const std::size_t n_dev = std::min(n - n_train, count(ratios[1]));
  const std::size_t n_test =
      std::abs(total - 1.0) <= 1e-9 ? n - n_train - n_dev : std::min(n - n_train - n_dev, count(ratios[2]));
  const char* names[] = {"train", "dev", "test"};
  const std::size_t sizes[] = {n_train, n_dev, n_test};
  for (int i = 0; i < 3; ++i) {
    if (ratios[static_cast<std::size_t>(i)] > 0.0 && sizes[i] == 0) {
      throw ValidationError(std::string("split: ratio ") + std::to_string(ratios[static_cast<std::size_t>(i)]) +
                            " over " + std::to_string(n) + " trials leaves the " + names[i] + " part empty");
    }
  }
  Partition p;
  p.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  p.dev.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train),
               idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_dev));
  p.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_dev),
                idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_dev + n_test));
  return p;
}

// Ratio-sweep point: the train fraction, the rest shared equally by dev and test.
inline std::array<double, 3> sweep_ratios(double train) {
  if (!(train > 0.0 && train < 1.0)) throw ValidationError("sweep: train ratio must lie in (0, 1)");
  return {train, (1.0 - train) / 2.0, (1.0 - train) / 2.0};
}

inline std::vector<std::string> subjects_of(std::span<const EegTrial> trials) {
  std::vector<std::string> s;
  for (const auto& t : trials) s.push_back(t.subject_id);
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  return s;
}

// Test = every trial of the held-out subject. The remaining subjects are shuffled
// into train and a dev part of `dev_ratio`.
inline Partition loso_split(std::span<const EegTrial> trials, const std::string& held_out, double dev_ratio,
                            std::uint64_t seed) {
  const auto subjects = subjects_of(trials);
  if (subjects.size() < 2) throw ValidationError("loso: need at least 2 subjects");
  Partition p;
  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < trials.size(); ++i) (trials[i].subject_id == held_out ? p.test : rest).push_back(i);
  Rng rng = Rng(seed).fork("loso:" + held_out);
  shuffle(rest, rng);
  if (rest.size() < 2) throw ValidationError("loso: too few trials outside subject " + held_out);
  std::size_t n_dev = static_cast<std::size_t>(std::llround(dev_ratio * static_cast<double>(rest.size())));
  if (dev_ratio > 0.0) n_dev = std::max<std::size_t>(n_dev, 1);
  n_dev = std::min(n_dev, rest.size() - 1);
  p.dev.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_dev));
  p.train.assign(rest.begin() + static_cast<std::ptrdiff_t>(n_dev), rest.end());
  std::sort(p.train.begin(), p.train.end());
  std::sort(p.dev.begin(), p.dev.end());
  return p;
}

inline std::vector<EegTrial> select(std::span<const EegTrial> trials, std::span<const std::size_t> idx) {
  std::vector<EegTrial> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(trials[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Pipeline evaluation and protocols

struct PipelineEvaluation {
  std::vector<PhonCategory> tasks;
  std::vector<ConfusionMatrix> phase1;  // 2x2 per task
  ConfusionMatrix phase2{kNumTokens};   // 11x11, token order

  double phase1_accuracy(std::size_t i) const { return phase1[i].accuracy(); }
  double phase1_mean_accuracy() const {
    double s = 0.0;
    for (const auto& cm : phase1) s += cm.accuracy();
    return phase1.empty() ? 0.0 : s / static_cast<double>(phase1.size());
  }
  double phase2_accuracy() const { return phase2.accuracy(); }
};

inline PipelineEvaluation evaluate_pipeline(PipelineModel& model, std::span<const EegTrial> trials) {
  if (trials.empty()) throw ValidationError("evaluate: no trials");
  PipelineEvaluation e;
  e.tasks = model.config.tasks;
  e.phase1.assign(e.tasks.size(), ConfusionMatrix(2));
  for (const auto& t : trials) {
    const auto p = predict_token(model, t);
    for (std::size_t i = 0; i < e.tasks.size(); ++i) {
      ++e.phase1[i].at(has_category(t.token, e.tasks[i]) ? 1 : 0, p.phonological[i] > 0.5 ? 1 : 0);
    }
    ++e.phase2.at(index_of(t.token), index_of(p.token));
  }
  return e;
}

struct SweepPoint {
  double train_ratio = 0.0;
  std::size_t n_train = 0, n_dev = 0, n_test = 0;
  TrainSummary summary;
  PipelineEvaluation test;
};

inline std::vector<SweepPoint> ratio_sweep(std::span<const EegTrial> trials, std::span<const double> train_ratios,
                                           const PipelineConfig& cfg) {
  if (train_ratios.empty()) throw ValidationError("sweep: no ratios given");
  std::vector<SweepPoint> out;
  for (double r : train_ratios) {
    const auto part = random_split(trials.size(), sweep_ratios(r), cfg.seed);
    const auto train = select(trials, part.train);
    const auto dev = select(trials, part.dev);
    const auto test = select(trials, part.test);
    auto trained = train_pipeline(train, dev, cfg);
    SweepPoint pt;
    pt.train_ratio = r;
    pt.n_train = train.size();
    pt.n_dev = dev.size();
    pt.n_test = test.size();
    pt.summary = trained.summary;
    pt.test = evaluate_pipeline(trained.model, test);
    out.push_back(std::move(pt));
  }
  return out;
}

struct LosoFold {
  std::string subject;
  std::size_t n_train = 0, n_dev = 0, n_test = 0;
  TrainSummary summary;
  PipelineEvaluation test;
};

struct LosoResult {
  std::vector<LosoFold> folds;
  std::vector<std::string> skipped;  // listed subjects without trials

  static std::pair<double, double> mean_std(const std::vector<double>& v) {
    if (v.empty()) return {0.0, 0.0};
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    if (v.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
  }
  std::pair<double, double> phase1_mean_std() const {
    std::vector<double> v;
    for (const auto& f : folds) v.push_back(f.test.phase1_mean_accuracy());
    return mean_std(v);
  }
  std::pair<double, double> phase2_mean_std() const {
    std::vector<double> v;
    for (const auto& f : folds) v.push_back(f.test.phase2_accuracy());
    return mean_std(v);
  }
};

// One fold per subject. `subjects` may list subjects explicitly (e.g. from a
// manifest); those without trials are skipped and reported.
inline LosoResult loso_protocol(std::span<const EegTrial> trials, const PipelineConfig& cfg,
                                std::vector<std::string> subjects = {}) {
  const auto present = subjects_of(trials);
  if (present.size() < 2) throw ValidationError("loso: need at least 2 subjects with trials");
  if (subjects.empty()) subjects = present;
  LosoResult out;
  for (const auto& s : subjects) {
    if (!std::binary_search(present.begin(), present.end(), s)) {
      out.skipped.push_back(s);
      continue;
    }
    const auto part = loso_split(trials, s, cfg.split[1], cfg.seed);
    const auto train = select(trials, part.train);
    const auto dev = select(trials, part.dev);
    const auto test = select(trials, part.test);
    auto trained = train_pipeline(train, dev, cfg);
    LosoFold f;
    f.subject = s;
    f.n_train = train.size();
    f.n_dev = dev.size();
    f.n_test = test.size();
    f.summary = trained.summary;
    f.test = evaluate_pipeline(trained.model, test);
    out.folds.push_back(std::move(f));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports: CSV tables (one row per cell) and nested JSON.

using ordered_json = nlohmann::ordered_json;

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

inline std::string confusion_csv(const ConfusionMatrix& cm, const std::vector<std::string>& names) {
  std::ostringstream os;
  os << "true\\pred";
  for (const auto& n : names) os << ',' << n;
  os << '\n';
  for (std::size_t i = 0; i < cm.k; ++i) {
    os << names[i];
    for (std::size_t j = 0; j < cm.k; ++j) os << ',' << cm.at(i, j);
    os << '\n';
  }
  return os.str();
}

inline std::vector<std::string> token_names() {
  std::vector<std::string> v;
  for (Token t : kAllTokens) v.emplace_back(token_name(t));
  return v;
}

inline ordered_json confusion_json(const ConfusionMatrix& cm) {
  ordered_json rows = ordered_json::array();
  for (std::size_t i = 0; i < cm.k; ++i) {
    ordered_json r = ordered_json::array();
    for (std::size_t j = 0; j < cm.k; ++j) r.push_back(cm.at(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline ordered_json metrics_json(const Metrics& m) {
  ordered_json j;
  j["accuracy"] = round_percent(m.accuracy);
  j["precision"] = round_percent(m.precision);
  j["recall"] = round_percent(m.recall);
  j["specificity"] = round_percent(m.specificity);
  j["f1"] = round_percent(m.f1);
  j["kappa"] = round_percent(m.kappa);
  j["support"] = m.support;
  j["undefined"] = m.undefined;
  return j;
}

inline std::string metrics_csv_row(const std::string& label, std::size_t n, const Metrics& m) {
  std::string undefined;
  for (const auto& u : m.undefined) undefined += (undefined.empty() ? "" : ";") + u;
  return label + ',' + std::to_string(n) + ',' + format_percent(m.accuracy) + ',' + format_percent(m.precision) +
         ',' + format_percent(m.recall) + ',' + format_percent(m.specificity) + ',' + format_percent(m.f1) + ',' +
         format_percent(m.kappa) + ',' + undefined + '\n';
}

inline ordered_json evaluation_json(const PipelineEvaluation& e) {
  ordered_json j;
  ordered_json p1 = ordered_json::array();
  for (std::size_t i = 0; i < e.tasks.size(); ++i) {
    ordered_json t;
    t["task"] = category_name(e.tasks[i]);
    t["metrics"] = metrics_json(binary_metrics(e.phase1[i]));
    t["confusion"] = confusion_json(e.phase1[i]);
    p1.push_back(std::move(t));
  }
  j["phase1"] = std::move(p1);
  j["phase1_mean_accuracy"] = round_percent(e.phase1_mean_accuracy());
  const auto s = multiclass_summary(e.phase2);
  ordered_json p2;
  p2["accuracy"] = round_percent(s.accuracy);
  p2["kappa"] = round_percent(s.kappa);
  p2["macro"] = metrics_json(s.macro);
  ordered_json per = ordered_json::object();
  for (std::size_t k = 0; k < kNumTokens; ++k) per[std::string(token_name(kAllTokens[k]))] = metrics_json(s.per_class[k]);
  p2["per_token"] = std::move(per);
  p2["confusion"] = confusion_json(e.phase2);
  j["phase2"] = std::move(p2);
  return j;
}

// metrics.csv, per_token.csv, confusion_<task>.csv, confusion_token.csv, report.json
inline void write_evaluation_report(const std::filesystem::path& dir, const PipelineEvaluation& e,
                                    const ordered_json& extra = ordered_json::object()) {
  static const char* header = "task,n,accuracy,precision,recall,specificity,f1,kappa,undefined\n";
  std::string metrics = header;
  for (std::size_t i = 0; i < e.tasks.size(); ++i) {
    const std::string name(category_name(e.tasks[i]));
    metrics += metrics_csv_row(name, e.phase1[i].total(), binary_metrics(e.phase1[i]));
    write_text_file(dir / ("confusion_" + name + ".csv"), confusion_csv(e.phase1[i], {"absent", "present"}));
  }
  const auto s = multiclass_summary(e.phase2);
  metrics += metrics_csv_row("token_macro", e.phase2.total(), s.macro);
  write_text_file(dir / "metrics.csv", metrics);

  std::string per = "token,n,accuracy,precision,recall,specificity,f1,kappa,undefined\n";
  for (std::size_t k = 0; k < kNumTokens; ++k) {
    per += metrics_csv_row(std::string(token_name(kAllTokens[k])), s.per_class[k].support, s.per_class[k]);
  }
  write_text_file(dir / "per_token.csv", per);
  write_text_file(dir / "confusion_token.csv", confusion_csv(e.phase2, token_names()));

  ordered_json j = extra;
  j["evaluation"] = evaluation_json(e);
  write_text_file(dir / "report.json", j.dump(2) + "\n");
}

inline std::string task_columns(const std::vector<PhonCategory>& tasks) {
  std::string s;
  for (PhonCategory c : tasks) s += "," + std::string(category_name(c));
  return s;
}

// sweep.csv (one row per ratio, test-split accuracies in percent), sweep.json
inline void write_sweep_report(const std::filesystem::path& dir, const std::vector<SweepPoint>& points) {
  if (points.empty()) throw ValidationError("sweep report: no points");
  const auto& tasks = points.front().test.tasks;
  std::string csv = "train_ratio,n_train,n_dev,n_test,phase1_mean,phase2" + task_columns(tasks) + "\n";
  ordered_json j = ordered_json::array();
  for (const auto& p : points) {
    char ratio[32];
    std::snprintf(ratio, sizeof ratio, "%.2f", p.train_ratio);
    csv += std::string(ratio) + ',' + std::to_string(p.n_train) + ',' + std::to_string(p.n_dev) + ',' +
           std::to_string(p.n_test) + ',' + format_percent(p.test.phase1_mean_accuracy()) + ',' +
           format_percent(p.test.phase2_accuracy());
    for (std::size_t i = 0; i < tasks.size(); ++i) csv += ',' + format_percent(p.test.phase1_accuracy(i));
    csv += '\n';
    ordered_json row;
    row["train_ratio"] = p.train_ratio;
    row["sizes"] = {{"train", p.n_train}, {"dev", p.n_dev}, {"test", p.n_test}};
    ordered_json dev;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      dev[std::string(category_name(tasks[i]))] = round_percent(p.summary.phase1_dev_accuracy[i]);
    }
    dev["token"] = round_percent(p.summary.phase2_dev_accuracy);
    row["dev_accuracy"] = std::move(dev);
    row["test"] = evaluation_json(p.test);
    j.push_back(std::move(row));
  }
  write_text_file(dir / "sweep.csv", csv);
  ordered_json root;
  root["chance"] = {{"phase1", 50.0}, {"phase2", round_percent(1.0 / static_cast<double>(kNumTokens))}};
  root["points"] = std::move(j);
  write_text_file(dir / "sweep.json", root.dump(2) + "\n");
}

// loso.csv (one row per held-out subject plus mean and std rows), loso.json,
// confusion_token_<subject>.csv
inline void write_loso_report(const std::filesystem::path& dir, const LosoResult& r) {
  if (r.folds.empty()) throw ValidationError("loso report: no folds");
  const auto& tasks = r.folds.front().test.tasks;
  std::string csv = "subject,n_train,n_test,phase1_mean,phase2" + task_columns(tasks) + "\n";
  ordered_json folds = ordered_json::array();
  std::vector<std::vector<double>> per_task(tasks.size());
  for (const auto& f : r.folds) {
    csv += f.subject + ',' + std::to_string(f.n_train) + ',' + std::to_string(f.n_test) + ',' +
           format_percent(f.test.phase1_mean_accuracy()) + ',' + format_percent(f.test.phase2_accuracy());
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      csv += ',' + format_percent(f.test.phase1_accuracy(i));
      per_task[i].push_back(f.test.phase1_accuracy(i));
    }
    csv += '\n';
    write_text_file(dir / ("confusion_token_" + f.subject + ".csv"), confusion_csv(f.test.phase2, token_names()));
    ordered_json fj;
    fj["subject"] = f.subject;
    fj["sizes"] = {{"train", f.n_train}, {"dev", f.n_dev}, {"test", f.n_test}};
    fj["test"] = evaluation_json(f.test);
    folds.push_back(std::move(fj));
  }
  const auto [m1, s1] = r.phase1_mean_std();
  const auto [m2, s2] = r.phase2_mean_std();
  std::string mean_row = "mean,,," + format_percent(m1) + ',' + format_percent(m2);
  std::string std_row = "std,,," + format_percent(s1) + ',' + format_percent(s2);
  for (const auto& v : per_task) {
    const auto [m, s] = LosoResult::mean_std(v);
    mean_row += ',' + format_percent(m);
    std_row += ',' + format_percent(s);
  }
  csv += mean_row + '\n' + std_row + '\n';
  write_text_file(dir / "loso.csv", csv);
  ordered_json root;
  root["folds"] = std::move(folds);
  root["skipped_subjects"] = r.skipped;
  root["phase1"] = {{"mean", round_percent(m1)}, {"std", round_percent(s1)}};
  root["phase2"] = {{"mean", round_percent(m2)}, {"std", round_percent(s2)}};
  write_text_file(dir / "loso.json", root.dump(2) + "\n");
}

}  // namespace phonodec
