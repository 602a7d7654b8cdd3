#include <Eigen/Dense>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "phonodec/data_io.hpp"

using namespace phonodec;
using phonodec::testing::check_gradients;
using phonodec::testing::random_tensor;
using phonodec::testing::random_tensor_off_zero;

namespace {

const std::filesystem::path kSource = PHONODEC_SOURCE_DIR;

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void report(const char* id, const char* what, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::printf("%s %s  %s: %s (%.1f s)\n", id, o.pass ? "PASS" : "FAIL", what, o.detail.c_str(), seconds_since(t0));
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome ac1_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string where;
  std::size_t checked = 0;
  auto track = [&](const char* name, std::uint64_t seed, const testing::GradCheckResult& r) {
    checked += r.checked;
    if (r.max_relative_error > worst) {
      worst = r.max_relative_error;
      where = fmt("%s seed %llu", name, static_cast<unsigned long long>(seed));
    }
  };
  // Central-difference step near the cube root of double epsilon.
  const double h = 1e-5;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    Tensor<double> target({3});
    target[rng.below(3)] = 1.0;
    track("conv2d", seed, check_gradients(
        [](Tape<double>& t, const std::vector<Var>& in) {
          Var y = ops::conv2d(t, in[0], in[1], in[2], 1, Padding::Same);
          return ops::sum(t, ops::mul(t, y, y));
        },
        {random_tensor({5, 4, 2}, rng), random_tensor({3, 3, 2, 3}, rng), random_tensor({3}, rng)}, h));
    track("dilated_conv1d", seed, check_gradients(
        [](Tape<double>& t, const std::vector<Var>& in) {
          Var y = ops::dilated_conv1d(t, in[0], in[1], in[2], 4);
          return ops::sum(t, ops::mul(t, y, y));
        },
        {random_tensor({15, 2}, rng), random_tensor({3, 2, 2}, rng), random_tensor({2}, rng)}, h));
    track("dense+relu", seed, check_gradients(
        [](Tape<double>& t, const std::vector<Var>& in) {
          Var y = ops::relu(t, ops::dense(t, in[0], in[1], in[2]));
          return ops::sum(t, ops::mul(t, y, y));
        },
        {random_tensor_off_zero({4}, rng), random_tensor({4, 3}, rng), random_tensor({3}, rng, 0.5, 1.0)}, h));
    track("sigmoid+tanh", seed, check_gradients(
        [](Tape<double>& t, const std::vector<Var>& in) {
          return ops::sum(t, ops::mul(t, ops::sigmoid(t, in[0]), ops::tanh(t, in[0])));
        },
        {random_tensor({8}, rng, -3, 3)}, h));
    track("softmax+cross_entropy", seed, check_gradients(
        [&](Tape<double>& t, const std::vector<Var>& in) {
          return ops::cross_entropy(t, ops::softmax(t, in[0]), target);
        },
        {random_tensor({3}, rng, -3, 3)}, h));
    track("max_pool2d", seed, check_gradients(
        [](Tape<double>& t, const std::vector<Var>& in) {
          Var y = ops::max_pool2d(t, in[0], 2);
          return ops::sum(t, ops::mul(t, y, y));
        },
        {[&] {
          // Distinct values 0.05 apart: no window holds a near-tie.
          Tensor<double> x({5, 5, 2});
          std::vector<double> vals(x.size());
          for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = -1.0 + 0.05 * static_cast<double>(i);
          shuffle(vals, rng);
          x.storage() = vals;
          return x;
        }()}, h));
    const auto mse_target = random_tensor({6}, rng);
    track("mse", seed, check_gradients(
        [&](Tape<double>& t, const std::vector<Var>& in) { return ops::mean_squared_error(t, in[0], mse_target); },
        {random_tensor({6}, rng)}, h));
    track("two-conv+dense network", seed, check_gradients(
        [&](Tape<double>& t, const std::vector<Var>& in) {
          Var h = ops::tanh(t, ops::conv2d(t, in[0], in[1], in[2], 1, Padding::Same));
          h = ops::sigmoid(t, ops::conv2d(t, h, in[3], in[4], 1, Padding::Valid));
          Var logits = ops::dense(t, h, in[5], in[6]);
          return ops::cross_entropy(t, ops::softmax(t, logits), target);
        },
        {random_tensor({6, 6, 2}, rng), random_tensor({3, 3, 2, 3}, rng, -0.35, 0.35),
         random_tensor({3}, rng, -0.1, 0.1), random_tensor({3, 3, 3, 2}, rng, -0.35, 0.35),
         random_tensor({2}, rng, -0.1, 0.1), random_tensor({32, 3}, rng, -0.4, 0.4),
         random_tensor({3}, rng, -0.1, 0.1)}, h));
  }
  const double elapsed = seconds_since(t0);
  return {worst < 1e-4 && elapsed < 30.0,
          fmt("max rel error %.2e (%s) over %zu partials, 20 seeds, %.1f s", worst, where.c_str(), checked, elapsed)};
}

Outcome ac2_covariance() {
  Rng rng(2);
  double worst = 0.0, min_eig = std::numeric_limits<double>::infinity();
  for (int trial = 0; trial < 100; ++trial) {
    EegTrial t;
    t.channels = 2 + rng.below(7);
    t.samples = 8 + rng.below(120);
    t.data.resize(t.channels * t.samples);
    for (auto& v : t.data) v = rng.normal(0.3, 2.0);
    const int lag = trial % 4 == 0 ? static_cast<int>(rng.below(5)) - 2 : 0;
    const auto m = channel_cross_covariance(t, lag);
    const std::size_t c = t.channels, n = t.samples;
    const std::size_t a = static_cast<std::size_t>(std::abs(lag));
    // Brute force: explicit means and the lagged product sum for every pair.
    for (std::size_t i = 0; i < c; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        double mi = 0.0, mj = 0.0;
        for (std::size_t s = 0; s < n; ++s) {
          mi += t.at(i, s);
          mj += t.at(j, s);
        }
        mi /= static_cast<double>(n);
        mj /= static_cast<double>(n);
        double acc = 0.0;
        for (std::size_t s = 0; s < n; ++s) {
          const long u = static_cast<long>(s) + lag;
          if (u < 0 || u >= static_cast<long>(n)) continue;
          acc += (t.at(i, s) - mi) * (t.at(j, static_cast<std::size_t>(u)) - mj);
        }
        acc /= static_cast<double>(n - a);
        worst = std::max(worst, std::abs(acc - m.at(i, j)));
      }
    }
    if (lag == 0) {
      Eigen::MatrixXd e(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(c));
      for (std::size_t i = 0; i < c; ++i)
        for (std::size_t j = 0; j < c; ++j) e(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m.at(i, j);
      min_eig = std::min(min_eig, Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(e).eigenvalues().minCoeff());
    }
  }
  return {worst <= 1e-10 && min_eig >= -1e-10,
          fmt("max |ccv - brute force| %.2e over 100 trials (C<=8), min lag-0 eigenvalue %.2e", worst, min_eig)};
}

Outcome ac3_shapes() {
  Rng rng(3);
  const std::size_t c = 61;
  SpatialCnnConfig cc;
  cc.height = cc.width = c;
  SpatialCnn<float> cnn(cc, rng);
  TemporalCnnConfig tc;
  tc.length = triangular_length(c);
  TemporalCnn<float> tcnn(tc, rng);
  Tensor<float> image({c, c, 1});
  for (auto& v : image.values()) v = static_cast<float>(rng.normal());
  Tensor<float> seq({tc.length});
  for (auto& v : seq.values()) v = static_cast<float>(rng.normal());
  const auto spatial = extract_penultimate(cnn, image);
  const auto temporal = extract_penultimate(tcnn, seq);
  const auto fused = fuse(spatial, temporal);
  DeepAutoencoder<float> dae(DaeConfig::for_input(fused.size(), 256), rng);
  std::vector<float> stacked;
  for (int task = 0; task < 6; ++task) {
    const auto code = encode(dae, Tensor<float>::vector(fused));
    stacked.insert(stacked.end(), code.begin(), code.end());
  }
  const bool ok = tc.length == 1891 && temporal.size() == 1891 && spatial.size() == 1024 && fused.size() == 2915 &&
                  dae.bottleneck() == 256 && stacked.size() == 1536;
  return {ok, fmt("ccv vector %zu, cnn %zu, tcnn %zu, fused %zu, code %zu, stacked %zu", tc.length, spatial.size(),
                  temporal.size(), fused.size(), dae.bottleneck(), stacked.size())};
}

Outcome ac4_boosting() {
  int mismatches = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed + 1000);
    const std::size_t n = 2 + rng.below(49), d = 1 + rng.below(4);
    gbt::FeatureMatrix x(n, d);
    const bool coarse = seed % 2 == 0;
    for (auto& v : x.values) v = coarse ? std::round(rng.uniform(-3, 3)) : rng.normal();
    std::vector<double> g, h;
    for (std::size_t i = 0; i < n; ++i) {
      const double p = rng.uniform(0.05, 0.95);
      g.push_back(p - (rng.uniform() < 0.5 ? 1.0 : 0.0));
      h.push_back(p * (1 - p));
    }
    std::vector<std::size_t> rows(n), cols(d);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    std::iota(cols.begin(), cols.end(), std::size_t{0});
    const auto fast = gbt::find_best_split(x, rows, cols, g, h, 0.3);
    const auto ref = gbt::best_split_oracle(x, g, h, 0.3);
    if (fast.valid() != ref.valid() || fast.feature != ref.feature || fast.threshold != ref.threshold ||
        std::abs(fast.gain - ref.gain) > 1e-9) {
      ++mismatches;
    }
  }
  int increases = 0;
  for (std::size_t k : {2u, 4u}) {
    Rng rng(40 + k);
    gbt::FeatureMatrix x(120, 4);
    std::vector<int> y;
    for (std::size_t i = 0; i < 120; ++i) {
      for (std::size_t j = 0; j < 4; ++j) x.at(i, j) = rng.normal();
      y.push_back(static_cast<int>((x.at(i, 0) > 0) + (k > 2 ? 2 * (x.at(i, 1) > 0.3) : 0)));
      if (rng.uniform() < 0.15) y.back() = static_cast<int>(rng.below(k));
    }
    gbt::GbtParams p;
    p.rounds = 50;
    p.row_subsample = 1.0;
    p.column_subsample = 1.0;
    const auto m = gbt::fit(x, y, p);
    for (std::size_t r = 1; r < m.train_logloss.size(); ++r) increases += m.train_logloss[r] > m.train_logloss[r - 1];
  }
  return {mismatches == 0 && increases == 0,
          fmt("%d/100 split mismatches vs brute force (N<=50, D<=4), %d log-loss increases over 50 rounds", mismatches,
              increases)};
}

Outcome ac5_metrics() {
  const double f1 = f1_score(86.36, 65.52);
  bool kappa_ok = true;
  for (std::size_t k : {2u, 3u, 11u}) {
    ConfusionMatrix diag(k), constant(k);
    for (std::size_t i = 0; i < k; ++i) {
      diag.at(i, i) = 4 + i;
      constant.at(i, k - 1) = 9;
    }
    kappa_ok = kappa_ok && cohen_kappa(diag) == 1.0 && cohen_kappa(constant) == 0.0;
  }
  return {std::abs(f1 - 74.51) <= 0.01 && kappa_ok,
          fmt("f1(86.36, 65.52) = %.4f, kappa diagonal 1 and constant-prediction 0: %s", f1, kappa_ok ? "yes" : "no")};
}

// ---------------------------------------------------------------------------

struct Benchmark {
  PipelineConfig config;
  Dataset data;
  Partition split;
  std::vector<EegTrial> train, dev, test;
  std::optional<TrainedPipeline> trained;
  double train_seconds = 0.0;
};

Benchmark& benchmark() {
  static Benchmark b = [] {
    Benchmark b;
    b.config = load_config(kSource / "configs/desk.json");
    b.data = generate_synthetic(load_synth_spec(kSource / "configs/synth_desk.json"));
    b.split = random_split(b.data.trials.size(), b.config.split, b.config.seed);
    b.train = select(b.data.trials, b.split.train);
    b.dev = select(b.data.trials, b.split.dev);
    b.test = select(b.data.trials, b.split.test);
    return b;
  }();
  return b;
}

Outcome ac6_benchmark() {
  auto& b = benchmark();
  const auto& c = b.config;
  if (b.data.channels != 8 || b.data.samples != 256 || b.data.trials.size() != 330 || c.dae.bottleneck != 16 ||
      c.cnn.epochs != 5 || c.tcnn.epochs != 5 || c.dae.epochs != 5 || c.gbt.rounds != 100) {
    return {false, "benchmark configuration differs from C=8, T=256, 30/token, B=16, 5 epochs, 100 rounds"};
  }
  const auto t0 = std::chrono::steady_clock::now();
  b.trained = train_pipeline(b.train, b.dev, c);
  b.train_seconds = seconds_since(t0);
  const auto& s = b.trained->summary;
  double worst = 1.0;
  std::string acc;
  for (std::size_t i = 0; i < s.tasks.size(); ++i) {
    worst = std::min(worst, s.phase1_dev_accuracy[i]);
    acc += std::string(category_name(s.tasks[i])) + " " + format_percent(s.phase1_dev_accuracy[i]) + " ";
  }
  return {worst >= 0.9 && s.phase2_dev_accuracy >= 0.6 && b.train_seconds < 600.0,
          fmt("dev %stoken %s, trained in %.0f s", acc.c_str(), format_percent(s.phase2_dev_accuracy).c_str(),
              b.train_seconds)};
}

Outcome ac7_sweep() {
  auto& b = benchmark();
  if (!b.trained) return {false, "benchmark model unavailable"};
  std::vector<std::pair<double, PipelineEvaluation>> points;
  // sweep_ratios(0.8) is the benchmark split, so that point reuses the benchmark model.
  points.emplace_back(0.8, evaluate_pipeline(b.trained->model, b.test));
  for (const auto& p : ratio_sweep(b.data.trials, std::vector<double>{0.6, 0.4}, b.config)) {
    points.emplace_back(p.train_ratio, p.test);
  }
  bool ok = true;
  std::string detail;
  for (const auto& [r, e] : points) {
    double lowest = 1.0;
    for (std::size_t i = 0; i < e.tasks.size(); ++i) lowest = std::min(lowest, e.phase1_accuracy(i));
    ok = ok && lowest > 0.5 && e.phase2_accuracy() > 1.0 / 11.0;
    detail += fmt("%.1f: lowest task %s token %s; ", r, format_percent(lowest).c_str(),
                  format_percent(e.phase2_accuracy()).c_str());
  }
  return {ok, detail + "chance 50.00 / 9.09"};
}

Outcome ac8_shared_signature() {
  const auto cfg = load_config(kSource / "configs/desk.json");
  const auto spec = load_synth_spec(kSource / "configs/synth_patpot.json");
  bool shared = false;
  for (const auto& g : spec.merge_groups) {
    shared = shared || (std::find(g.begin(), g.end(), Token::PAT) != g.end() &&
                        std::find(g.begin(), g.end(), Token::POT) != g.end());
  }
  if (!shared) return {false, "spec does not merge pat and pot"};
  const auto d = generate_synthetic(spec);
  const auto part = random_split(d.trials.size(), cfg.split, cfg.seed);
  auto trained = train_pipeline(select(d.trials, part.train), select(d.trials, part.dev), cfg);
  std::vector<std::size_t> held = part.dev;
  held.insert(held.end(), part.test.begin(), part.test.end());
  const auto e = evaluate_pipeline(trained.model, select(d.trials, held));
  const auto& cm = e.phase2;
  const std::size_t pat = index_of(Token::PAT), pot = index_of(Token::POT);
  const std::size_t pair = cm.at(pat, pot) + cm.at(pot, pat);
  std::size_t vowel = 0;
  for (Token v : {Token::IY, Token::UW}) vowel += cm.at(pat, index_of(v)) + cm.at(index_of(v), pat);
  return {pair > vowel, fmt("held-out pat<->pot confusions %zu vs pat<->{iy,uw} %zu over %zu trials", pair, vowel,
                            held.size())};
}

Outcome ac9_reproducibility() {
  auto& b = benchmark();
  if (!b.trained) return {false, "benchmark model unavailable"};
  const auto root = std::filesystem::temp_directory_path() / "phonodec_acceptance";
  std::filesystem::remove_all(root);
  auto again = train_pipeline(b.train, b.dev, b.config);
  write_evaluation_report(root / "a", evaluate_pipeline(b.trained->model, b.test));
  write_evaluation_report(root / "b", evaluate_pipeline(again.model, b.test));
  std::size_t files = 0, differing = 0;
  for (const auto& entry : std::filesystem::directory_iterator(root / "a")) {
    ++files;
    const auto name = entry.path().filename();
    std::ifstream x(entry.path(), std::ios::binary), y(root / "b" / name, std::ios::binary);
    const std::string sx{std::istreambuf_iterator<char>(x), {}}, sy{std::istreambuf_iterator<char>(y), {}};
    differing += sx != sy;
  }
  save_checkpoint(b.trained->model, root / "m.ckpt");
  auto loaded = load_checkpoint(root / "m.ckpt");
  std::size_t mismatched = 0;
  for (const auto& t : b.data.trials) {
    const auto p = predict_token(b.trained->model, t);
    const auto q = predict_token(loaded.model, t);
    mismatched += p.distribution != q.distribution || p.phonological != q.phonological;
  }
  const bool reserialized = serialize_checkpoint(loaded.model) == serialize_checkpoint(b.trained->model);
  return {files > 0 && differing == 0 && mismatched == 0 && reserialized,
          fmt("%zu/%zu report files identical across same-seed runs; %zu/%zu predictions changed after "
              "save/load; re-serialised checkpoint identical: %s",
              files - differing, files, mismatched, b.data.trials.size(), reserialized ? "yes" : "no")};
}

}  // namespace

int main() {
  report("AC1", "gradients", ac1_gradients);
  report("AC2", "cross-covariance", ac2_covariance);
  report("AC3", "full-scale shapes", ac3_shapes);
  report("AC4", "boosted trees", ac4_boosting);
  report("AC5", "metrics", ac5_metrics);
  report("AC6", "desk benchmark", ac6_benchmark);
  report("AC7", "train-ratio sweep", ac7_sweep);
  report("AC8", "shared covariance signature", ac8_shared_signature);
  report("AC9", "reproducibility", ac9_reproducibility);
  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
