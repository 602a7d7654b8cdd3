#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "phonodec/data_io.hpp"

using namespace phonodec;
using ordered_json = nlohmann::ordered_json;

namespace {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> bottleneck;
  std::optional<int> rounds;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> threads;
  std::vector<double> split;

  void add_to(CLI::App* app, bool with_split) {
    app->add_option("--seed", seed, "Override the config seed");
    app->add_option("--bottleneck", bottleneck, "Bottleneck width B");
    app->add_option("--rounds", rounds, "Boosting rounds");
    app->add_option("--epochs", epochs, "Epochs for every network");
    app->add_option("--threads", threads, "Phase-1 tasks trained in parallel");
    if (with_split) app->add_option("--split", split, "train,dev,test ratios")->delimiter(',')->expected(3);
  }

  PipelineConfig apply(PipelineConfig c) const {
    if (seed) c.seed = *seed;
    if (bottleneck) c.dae.bottleneck = *bottleneck;
    if (rounds) c.gbt.rounds = *rounds;
    if (epochs) c.cnn.epochs = c.tcnn.epochs = c.dae.epochs = *epochs;
    if (threads) c.threads = *threads;
    if (!split.empty()) c.split = {split[0], split[1], split[2]};
    c.validate();
    return c;
  }
};

PipelineConfig load_or_default(const std::string& path) { return path.empty() ? PipelineConfig{} : load_config(path); }

void print_summary(const TrainSummary& s) {
  for (std::size_t i = 0; i < s.tasks.size(); ++i) {
    std::fprintf(stderr, "  %-14s dev %s%%\n", std::string(category_name(s.tasks[i])).c_str(),
                 format_percent(s.phase1_dev_accuracy[i]).c_str());
  }
  std::fprintf(stderr, "  %-14s dev %s%%\n", "token", format_percent(s.phase2_dev_accuracy).c_str());
}

ordered_json summary_json(const TrainSummary& s) {
  ordered_json j;
  for (std::size_t i = 0; i < s.tasks.size(); ++i) {
    j[std::string(category_name(s.tasks[i]))] = round_percent(s.phase1_dev_accuracy[i]);
  }
  j["token"] = round_percent(s.phase2_dev_accuracy);
  return j;
}

int run_synth(const std::string& spec_path, const std::string& out) {
  const auto spec = load_synth_spec(spec_path);
  const auto d = generate_synthetic(spec);
  write_dataset(out, d);
  std::fprintf(stderr, "wrote %zu trials (%zu channels x %zu samples) to %s\n", d.trials.size(), d.channels,
               d.samples, out.c_str());
  return 0;
}

int run_train(const std::string& data, const std::string& config, const std::string& out, const Overrides& o) {
  const auto cfg = o.apply(load_or_default(config));
  const auto d = load_dataset(data);
  const auto part = random_split(d.trials.size(), cfg.split, cfg.seed);
  const auto train = select(d.trials, part.train);
  const auto dev = select(d.trials, part.dev);
  std::fprintf(stderr, "training on %zu trials, dev %zu, test %zu (held back)\n", train.size(), dev.size(),
               part.test.size());
  auto trained = train_pipeline(train, dev, cfg);
  print_summary(trained.summary);
  nlohmann::json meta;
  meta["dataset_fingerprint"] = dataset_fingerprint(d);
  meta["split_sizes"] = {part.train.size(), part.dev.size(), part.test.size()};
  meta["dev_accuracy"] = summary_json(trained.summary);
  save_checkpoint(trained.model, out, meta);
  std::fprintf(stderr, "checkpoint written to %s\n", out.c_str());
  return 0;
}

int run_eval(const std::string& ckpt, const std::string& data, const std::string& report, std::string subset) {
  auto ck = load_checkpoint(ckpt);
  const auto d = load_dataset(data);
  const bool same = ck.meta.value("dataset_fingerprint", "") == dataset_fingerprint(d);
  if (subset == "auto") subset = same ? "test" : "all";
  std::vector<EegTrial> trials;
  if (subset == "all") {
    trials = d.trials;
  } else {
    if (!same) throw ValidationError("--subset " + subset + " needs the dataset the checkpoint was trained on");
    const auto part = random_split(d.trials.size(), ck.model.config.split, ck.model.config.seed);
    const auto& idx = subset == "train" ? part.train : subset == "dev" ? part.dev : part.test;
    trials = select(d.trials, idx);
  }
  if (trials.empty()) throw ValidationError("subset '" + subset + "' is empty");
  const auto e = evaluate_pipeline(ck.model, trials);
  ordered_json extra;
  extra["subset"] = subset;
  extra["trials"] = trials.size();
  extra["bottleneck"] = ck.model.bottleneck();
  write_evaluation_report(report, e, extra);
  std::fprintf(stderr, "%s: %zu trials, phase-1 mean %s%%, token %s%%\n", subset.c_str(), trials.size(),
               format_percent(e.phase1_mean_accuracy()).c_str(), format_percent(e.phase2_accuracy()).c_str());
  return 0;
}

int run_loso(const std::string& data, const std::string& config, const std::string& report, const Overrides& o) {
  const auto cfg = o.apply(load_or_default(config));
  const auto d = load_dataset(data);
  const auto r = loso_protocol(d.trials, cfg, d.subjects);
  for (const auto& s : r.skipped) std::fprintf(stderr, "subject %s has no trials, skipped\n", s.c_str());
  write_loso_report(report, r);
  const auto [m1, s1] = r.phase1_mean_std();
  const auto [m2, s2] = r.phase2_mean_std();
  std::fprintf(stderr, "%zu folds: phase-1 mean %s%% (std %s), token %s%% (std %s)\n", r.folds.size(),
               format_percent(m1).c_str(), format_percent(s1).c_str(), format_percent(m2).c_str(),
               format_percent(s2).c_str());
  return 0;
}

int run_sweep(const std::string& data, const std::string& config, const std::vector<double>& ratios,
              const std::string& report, const Overrides& o) {
  const auto cfg = o.apply(load_or_default(config));
  const auto d = load_dataset(data);
  const auto points = ratio_sweep(d.trials, ratios, cfg);
  write_sweep_report(report, points);
  for (const auto& p : points) {
    std::fprintf(stderr, "train %.2f: phase-1 mean %s%%, token %s%%\n", p.train_ratio,
                 format_percent(p.test.phase1_mean_accuracy()).c_str(), format_percent(p.test.phase2_accuracy()).c_str());
  }
  return 0;
}

int run_predict(const std::string& ckpt, const std::string& trial_path) {
  auto ck = load_checkpoint(ckpt);
  const std::size_t c = ck.model.channels;
  const auto bytes = std::filesystem::exists(trial_path) ? std::filesystem::file_size(trial_path) : 0;
  if (bytes == 0 || bytes % (4 * c) != 0) {
    throw ValidationError(trial_path + ": expected a non-empty float32 file with " + std::to_string(c) +
                          " channel rows");
  }
  EegTrial t;
  t.channels = c;
  t.samples = bytes / (4 * c);
  t.data = read_f32_file(trial_path, c * t.samples);
  t.validate();
  const auto p = predict_token(ck.model, t);
  ordered_json j;
  j["token"] = token_name(p.token);
  ordered_json dist;
  for (Token k : kAllTokens) dist[std::string(token_name(k))] = p.distribution[index_of(k)];
  j["distribution"] = std::move(dist);
  ordered_json phon;
  for (std::size_t i = 0; i < p.tasks.size(); ++i) phon[std::string(category_name(p.tasks[i]))] = p.phonological[i];
  j["phonological"] = std::move(phon);
  std::cout << j.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical phonological decoder for imagined-speech EEG"};
  app.require_subcommand(1);

  std::string spec, out, data, config, ckpt, report, trial, subset = "auto";
  std::vector<double> ratios{0.8, 0.6, 0.4};
  Overrides train_o, loso_o, sweep_o;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--spec", spec, "Synthetic spec JSON")->required();
  synth->add_option("--out", out, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train both phases and write a checkpoint");
  train->add_option("--data", data, "Dataset directory or manifest")->required();
  train->add_option("--config", config, "Pipeline config JSON");
  train->add_option("--out", out, "Checkpoint path")->required();
  train_o.add_to(train, true);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint and write a report");
  eval->add_option("--ckpt", ckpt, "Checkpoint")->required();
  eval->add_option("--data", data, "Dataset directory or manifest")->required();
  eval->add_option("--report", report, "Report directory")->required();
  eval->add_option("--subset", subset, "auto, all, train, dev or test")
      ->check(CLI::IsMember({"auto", "all", "train", "dev", "test"}));

  auto* loso = app.add_subcommand("loso", "Leave-one-subject-out protocol");
  loso->add_option("--data", data, "Dataset directory or manifest")->required();
  loso->add_option("--config", config, "Pipeline config JSON");
  loso->add_option("--report", report, "Report directory")->required();
  loso_o.add_to(loso, true);

  auto* sweep = app.add_subcommand("sweep", "Train-ratio sweep");
  sweep->add_option("--data", data, "Dataset directory or manifest")->required();
  sweep->add_option("--config", config, "Pipeline config JSON");
  sweep->add_option("--ratios", ratios, "Train fractions")->delimiter(',');
  sweep->add_option("--report", report, "Report directory")->required();
  sweep_o.add_to(sweep, false);

  auto* predict = app.add_subcommand("predict", "Classify one raw float32 trial");
  predict->add_option("--ckpt", ckpt, "Checkpoint")->required();
  predict->add_option("--trial", trial, "Trial file, channel-major float32")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth) return run_synth(spec, out);
    if (*train) return run_train(data, config, out, train_o);
    if (*eval) return run_eval(ckpt, data, report, subset);
    if (*loso) return run_loso(data, config, report, loso_o);
    if (*sweep) return run_sweep(data, config, ratios, report, sweep_o);
    if (*predict) return run_predict(ckpt, trial);
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
