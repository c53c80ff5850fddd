// punctasr: data generation, training, decoding, evaluation and the label
// ablation over one experiment config.
//
//   punctasr generate-data --config cfg.json --out run
//   punctasr train --config cfg.json --out run --plan pnct-unpnct --seed 1
//   punctasr train --config cfg.json --out run --plan classifier
//   punctasr evaluate --config cfg.json --out run --e2e run/models/pnct-unpnct-s1/best.ckpt
//       --asr run/models/unpnct-none-s1/best.ckpt --classifier run/models/classifier-s1/best.ckpt
//   punctasr ablate --config cfg.json --out run
//
// Every command appends to <out>/run.log; a failed command writes an [error]
// section there and exits with status 1.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "punctasr/checkpoint.hpp"
#include "punctasr/experiment.hpp"

namespace fs = std::filesystem;
using namespace punctasr;

namespace {

struct Options {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  int threads = 1;
  std::string plan;
  bool resume = false;
  std::string split = "test";
  std::string checkpoint;
  std::vector<std::string> e2e;
  std::string asr;
  std::string classifier;
  std::string hyp;
  std::string output;
  bool reference = false;
};

class RunLog {
 public:
  explicit RunLog(const fs::path& path) : file_(path, std::ios::app) {}

  void line(const std::string& s) {
    std::cout << s << '\n';
    file_ << s << '\n';
    file_.flush();
  }
  void error(const std::string& s) {
    std::cerr << "error: " << s << '\n';
    file_ << "[error]\n" << s << '\n';
    file_.flush();
  }

 private:
  std::ofstream file_;
};

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

fs::path model_dir(const Options& o, const std::string& plan, std::uint64_t seed) {
  return fs::path(o.out) / "models" / (plan + "-s" + std::to_string(seed));
}

void cmd_generate(const Options& o, RunLog& log) {
  ExperimentConfig cfg = load_experiment_config(o.config);
  if (o.seed) {
    cfg.corpus.rng_seed = *o.seed;
    cfg.synth.rng_seed = *o.seed;
  }
  const fs::path dir = fs::path(o.out) / "data";
  const std::string hash = write_data(dir, cfg);
  log.line("data: " + dir.string() + " (train " + std::to_string(cfg.splits.train) + ", dev " +
           std::to_string(cfg.splits.dev) + ", test " + std::to_string(cfg.splits.test) + ")");
  log.line("manifest hash: " + hash);
}

void cmd_train(const Options& o, RunLog& log) {
  const ExperimentConfig cfg = load_experiment_config(o.config);
  const ExperimentData data = load_data(fs::path(o.out) / "data");

  if (o.plan == "classifier") {
    ClassifierTrainConfig tc = cfg.classifier_train;
    if (o.seed) tc.seed = *o.seed;
    ClassifierConfig cc = cfg.classifier;
    cc.vocab = data.vocab.unpunctuated_size();
    const fs::path dir = model_dir(o, "classifier", tc.seed);
    fs::create_directories(dir);
    std::ofstream jl(dir / "train_log.jsonl", std::ios::binary | std::ios::trunc);
    const PunctClassifier clf = train_classifier(
        data.train.pairs, data.dev.pairs, data.vocab, cc, tc, [&](int epoch, double loss, double acc) {
          jl << nlohmann::json{{"epoch", epoch}, {"loss", loss}, {"dev_accuracy", acc}}.dump() << '\n';
        });
    save_classifier(dir / "best.ckpt", clf);
    log.line("classifier: dev token accuracy " + fixed(100.0 * token_accuracy(clf, data.dev.pairs, data.vocab), 2) +
             "%, " + std::to_string(clf.count_params()) + " params");
    log.line("checkpoint: " + (dir / "best.ckpt").string() + " hash " + hex64(hash_file(dir / "best.ckpt")));
    return;
  }

  if (o.plan.empty()) throw InvalidInput("--plan is required");
  TrainConfig tc = cfg.train;
  tc.plan = LabelPlan::parse(o.plan);
  if (o.seed) tc.seed = *o.seed;
  tc.threads = o.threads;
  const ModelConfig& base = tc.plan.last == LastLabels::kUnpnct ? cfg.cascade_model : cfg.model;
  const fs::path dir = model_dir(o, tc.plan.name(), tc.seed);
  fs::create_directories(dir);
  TrainOutputs outs{dir / "train_log.jsonl", dir / "best.ckpt", dir / "state.bin", o.resume};
  const TrainResult r = train(data.train, data.dev, data.vocab, model_config_for_plan(base, tc.plan, data.vocab), tc, outs);
  for (const auto& e : r.epochs) {
    log.line("epoch " + std::to_string(e.epoch) + ": train loss " + fixed(e.train_loss, 4) + ", dev loss " +
             fixed(e.dev.loss, 4) + ", dev WER " + fixed(100.0 * e.dev.report.wer(), 2) + "%, dev F1 " +
             fixed(100.0 * e.dev.report.punct.macro_f1(), 2) + "%, skipped " + std::to_string(e.skipped));
  }
  log.line("best epoch " + std::to_string(r.best_epoch) + ", " + std::to_string(r.steps) + " steps, " +
           std::to_string(r.best.count_params()) + " params");
  if (fs::exists(*outs.checkpoint)) {
    log.line("checkpoint: " + outs.checkpoint->string() + " hash " + hex64(hash_file(*outs.checkpoint)));
  }
}

std::vector<TokenSeq> read_hypotheses(const fs::path& path, const Vocab& vocab) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<TokenSeq> out;
  for (std::string line; std::getline(in, line);) out.push_back(vocab.encode_text(line));
  return out;
}

std::vector<TokenSeq> references(const Dataset& d) {
  std::vector<TokenSeq> refs;
  for (const auto& p : d.pairs) refs.push_back(p.y_pnct);
  return refs;
}

void cmd_decode(const Options& o, RunLog& log) {
  load_experiment_config(o.config);
  const ExperimentData data = load_data(fs::path(o.out) / "data");
  const Dataset& split = split_by_name(data, o.split);
  if (o.checkpoint.empty()) throw InvalidInput("--checkpoint is required");
  const AsrModel model = load_model(o.checkpoint);
  std::optional<PunctClassifier> clf;
  if (!o.classifier.empty()) clf = load_classifier(o.classifier);

  const fs::path dest = o.output.empty() ? fs::path(o.out) / "decode" / (fs::path(o.checkpoint).parent_path().filename().string() + "_" + o.split + ".txt")
                                         : fs::path(o.output);
  if (dest.has_parent_path()) fs::create_directories(dest.parent_path());
  std::ofstream out(dest, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + dest.string());
  for (const auto& x : split.feats) {
    const TokenSeq hyp = clf ? cascade_infer(model, *clf, x, data.vocab) : decode_punctuated(model, x, data.vocab);
    out << data.vocab.decode_text(hyp) << '\n';
  }
  log.line("decoded " + std::to_string(split.size()) + " utterances to " + dest.string());
}

void cmd_evaluate(const Options& o, RunLog& log) {
  load_experiment_config(o.config);
  const ExperimentData data = load_data(fs::path(o.out) / "data");
  const Dataset& split = split_by_name(data, o.split);
  const std::vector<TokenSeq> refs = references(split);

  std::vector<EvalReport> reports;
  if (o.reference) reports.push_back(evaluate_system("reference", refs, refs, data.vocab, 0));

  std::optional<std::int64_t> e2e_params;
  for (const auto& ckpt : o.e2e) {
    const AsrModel model = load_model(ckpt);
    std::vector<TokenSeq> hyps;
    for (const auto& x : split.feats) hyps.push_back(decode_punctuated(model, x, data.vocab));
    const auto params = static_cast<std::int64_t>(model.count_params());
    if (!e2e_params) e2e_params = params;
    reports.push_back(evaluate_system("e2e:" + fs::path(ckpt).parent_path().filename().string(), hyps, refs,
                                      data.vocab, params));
  }

  std::optional<std::int64_t> cascade_params;
  if (!o.asr.empty() || !o.classifier.empty()) {
    if (o.asr.empty() || o.classifier.empty()) throw InvalidInput("the cascade needs both --asr and --classifier");
    const AsrModel asr = load_model(o.asr);
    const PunctClassifier clf = load_classifier(o.classifier);
    std::vector<TokenSeq> hyps;
    for (const auto& x : split.feats) hyps.push_back(cascade_infer(asr, clf, x, data.vocab));
    cascade_params = static_cast<std::int64_t>(asr.count_params() + clf.count_params());
    reports.push_back(evaluate_system("cascade", hyps, refs, data.vocab, *cascade_params));
  }

  if (!o.hyp.empty()) {
    const std::vector<TokenSeq> hyps = read_hypotheses(o.hyp, data.vocab);
    reports.push_back(evaluate_system("hyp:" + fs::path(o.hyp).filename().string(), hyps, refs, data.vocab, 0));
  }
  if (reports.empty()) throw InvalidInput("nothing to evaluate: give --e2e, --asr/--classifier, --hyp or --reference");

  const fs::path dest = o.output.empty() ? fs::path(o.out) / "reports" / ("eval_" + o.split + ".tsv") : fs::path(o.output);
  if (dest.has_parent_path()) fs::create_directories(dest.parent_path());
  write_reports_tsv(dest, reports);
  std::istringstream table(format_report_table(reports));
  for (std::string line; std::getline(table, line);) log.line(line);
  if (e2e_params && cascade_params) {
    log.line("#Params e2e / cascade: " + std::to_string(*e2e_params) + " / " + std::to_string(*cascade_params) +
             " = " + fixed(static_cast<double>(*e2e_params) / static_cast<double>(*cascade_params), 3) +
             " (published full-scale reference ratio: about 1/7; not reproduced here)");
  }
  log.line("report: " + dest.string());
}

void cmd_ablate(const Options& o, RunLog& log) {
  ExperimentConfig cfg = load_experiment_config(o.config);
  if (o.seed) cfg.seeds = {*o.seed};
  const ExperimentData data = load_data(fs::path(o.out) / "data");
  const fs::path dir = fs::path(o.out) / "ablation";
  fs::create_directories(dir);

  std::optional<PunctClassifier> clf;
  bool needs_clf = false;
  for (const auto& p : cfg.plans) needs_clf = needs_clf || p.last == LastLabels::kUnpnct;
  if (needs_clf) {
    ClassifierConfig cc = cfg.classifier;
    cc.vocab = data.vocab.unpunctuated_size();
    clf = train_classifier(data.train.pairs, data.dev.pairs, data.vocab, cc, cfg.classifier_train);
    save_classifier(dir / "classifier.ckpt", *clf);
    log.line("classifier: dev token accuracy " + fixed(100.0 * token_accuracy(*clf, data.dev.pairs, data.vocab), 2) + "%");
  }
  TrainConfig tc = cfg.train;
  tc.threads = o.threads;
  const AblationTable table = run_ablation(
      data.train, data.dev, data.test, data.vocab, cfg.model, tc, cfg.plans, cfg.seeds, clf ? &*clf : nullptr,
      dir / "models", [&](const AblationCell& c) {
        log.line(c.plan.name() + " seed " + std::to_string(c.seed) + ": test WER " + fixed(100.0 * c.test.wer(), 2) +
                 "%, F1 " + fixed(100.0 * c.test.punct.macro_f1(), 2) + "%");
      });
  const std::string tsv = ablation_tsv(table);
  fs::create_directories(fs::path(o.out) / "reports");
  const fs::path dest = fs::path(o.out) / "reports" / "ablation.tsv";
  std::ofstream(dest, std::ios::binary) << tsv;
  std::istringstream lines(tsv);
  for (std::string line; std::getline(lines, line);) log.line(line);
  log.line("report: " + dest.string());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Speech to punctuated text with an intermediate CTC loss, and its cascade baseline"};
  app.require_subcommand(1);
  Options o;

  const auto common = [&](CLI::App* sub, bool with_plan) {
    sub->add_option("--config", o.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "output directory")->capture_default_str();
    sub->add_option("--seed", o.seed, "override the config seed");
    sub->add_option("--threads", o.threads, "worker threads for training")->capture_default_str()->check(CLI::PositiveNumber);
    if (with_plan) sub->add_option("--plan", o.plan, "label plan (e.g. pnct-unpnct) or 'classifier'");
  };

  auto* gen = app.add_subcommand("generate-data", "synthesize corpus, features and manifest");
  common(gen, false);
  auto* tr = app.add_subcommand("train", "train one model");
  common(tr, true);
  tr->add_flag("--resume", o.resume, "continue from the saved trainer state");
  auto* dec = app.add_subcommand("decode", "greedy-decode a split");
  common(dec, false);
  dec->add_option("--checkpoint", o.checkpoint, "ASR checkpoint")->check(CLI::ExistingFile);
  dec->add_option("--classifier", o.classifier, "punctuation classifier for a cascade")->check(CLI::ExistingFile);
  dec->add_option("--split", o.split)->capture_default_str();
  dec->add_option("--output", o.output, "hypothesis file");
  auto* ev = app.add_subcommand("evaluate", "score systems against a split");
  common(ev, false);
  ev->add_option("--e2e", o.e2e, "end-to-end checkpoint(s)")->check(CLI::ExistingFile);
  ev->add_option("--asr", o.asr, "cascade ASR checkpoint")->check(CLI::ExistingFile);
  ev->add_option("--classifier", o.classifier, "cascade punctuation classifier")->check(CLI::ExistingFile);
  ev->add_option("--hyp", o.hyp, "hypothesis text file, one utterance per line")->check(CLI::ExistingFile);
  ev->add_flag("--reference", o.reference, "also score the references against themselves");
  ev->add_option("--split", o.split)->capture_default_str();
  ev->add_option("--output", o.output, "report TSV path");
  auto* abl = app.add_subcommand("ablate", "train every plan x seed and write the ablation table");
  common(abl, false);

  CLI11_PARSE(app, argc, argv);

  std::error_code ec;
  fs::create_directories(o.out, ec);
  RunLog log(fs::path(o.out) / "run.log");
  CLI::App* sub = app.get_subcommands().front();
  log.line("== " + sub->get_name());
  try {
    if (sub == gen) cmd_generate(o, log);
    if (sub == tr) cmd_train(o, log);
    if (sub == dec) cmd_decode(o, log);
    if (sub == ev) cmd_evaluate(o, log);
    if (sub == abl) cmd_ablate(o, log);
  } catch (const std::exception& e) {
    log.error(e.what());
    return 1;
  }
  return 0;
}
