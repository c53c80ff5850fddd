#include "punctasr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "punctasr/checkpoint.hpp"
#include "punctasr/json_reader.hpp"
#include "punctasr/rng.hpp"

namespace punctasr {

namespace {

using Batch = std::vector<std::size_t>;

std::vector<Batch> make_batches(const Dataset& data, const TrainConfig& cfg, int epoch) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed(cfg.seed, {1, static_cast<std::uint64_t>(epoch)}));
  std::shuffle(order.begin(), order.end(), rng);

  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t bucket = bs * static_cast<std::size_t>(cfg.bucket_batches);
  std::vector<Batch> batches;
  for (std::size_t lo = 0; lo < order.size(); lo += bucket) {
    const auto first = order.begin() + static_cast<std::ptrdiff_t>(lo);
    const auto last = order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), lo + bucket));
    std::stable_sort(first, last, [&](std::size_t a, std::size_t b) {
      return data.feats[a].frame_count() < data.feats[b].frame_count();
    });
    for (auto it = first; it < last; it += static_cast<std::ptrdiff_t>(std::min<std::size_t>(bs, last - it))) {
      batches.emplace_back(it, it + static_cast<std::ptrdiff_t>(std::min<std::size_t>(bs, last - it)));
    }
  }
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

struct UtteranceGrad {
  LossResult loss;
  std::optional<ModelParams> grad;
};

UtteranceGrad utterance_grad(const AsrModel& model, const Dataset& data, std::size_t idx, const Vocab& vocab,
                             const TrainConfig& cfg, int epoch) {
  UtteranceGrad u;
  const FeatureSequence* x = &data.feats[idx];
  FeatureSequence augmented;
  if (cfg.augment) {
    std::mt19937_64 rng(mix_seed(cfg.seed, {2, static_cast<std::uint64_t>(epoch), idx}));
    augmented = mask_augment(*x, cfg.mask, rng);
    x = &augmented;
  }
  const ForwardOutputs out = model.forward(*x, true);
  u.loss = total_loss(out, data.pairs[idx], vocab, cfg.plan, cfg.weights);
  if (u.loss.feasible) u.grad = model.backward(out, u.loss.grad_final, u.loss.grad_mid);
  return u;
}

// Per-utterance results land in fixed slots so the summation order, and with
// it every bit of the result, does not depend on the thread count.
std::vector<UtteranceGrad> batch_grads(const AsrModel& model, const Dataset& data, const Batch& batch,
                                       const Vocab& vocab, const TrainConfig& cfg, int epoch) {
  std::vector<UtteranceGrad> slots(batch.size());
  const int workers = std::min<int>(cfg.threads, static_cast<int>(batch.size()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < batch.size(); ++i) slots[i] = utterance_grad(model, data, batch[i], vocab, cfg, epoch);
    return slots;
  }
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < batch.size(); i += workers) {
            slots[i] = utterance_grad(model, data, batch[i], vocab, cfg, epoch);
          }
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return slots;
}

void apply_adam(AsrModel& model, ModelParams& grad, AdamState& state, const AdamHyper& hyper, bool& accepted) {
  auto params = named_tensors(model.mutable_params());
  auto grads = named_tensors(grad);
  std::vector<Matrix*> p;
  std::vector<const Matrix*> g;
  for (std::size_t i = 0; i < params.size(); ++i) {
    p.push_back(params[i].second);
    g.push_back(grads[i].second);
  }
  accepted = adam_step(p, g, state, hyper);
  if (accepted) model.mark_updated();
}

struct TrainerState {
  std::int64_t step = 0;
  int next_epoch = 0;
  double best_dev_loss = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  int bad_epochs = 0;
};

void save_state(const std::filesystem::path& path, const AsrModel& model, const AsrModel& best,
                const AdamState& adam, const TrainerState& s, const TrainConfig& cfg) {
  Container c;
  c.meta = {{"kind", "trainer_state"},     {"model", to_json(model.config())}, {"plan", cfg.plan.name()},
            {"seed", cfg.seed},            {"step", s.step},                   {"next_epoch", s.next_epoch},
            {"best_dev_loss", s.best_dev_loss}, {"best_epoch", s.best_epoch},  {"bad_epochs", s.bad_epochs},
            {"adam_step", adam.step}};
  visit(model.params(), [&](const std::string& n, const Matrix& m) { c.tensors.push_back({"param." + n, m}); });
  visit(best.params(), [&](const std::string& n, const Matrix& m) { c.tensors.push_back({"best." + n, m}); });
  std::size_t i = 0;
  visit(model.params(), [&](const std::string& n, const Matrix&) {
    c.tensors.push_back({"adam_m." + n, adam.m[i]});
    c.tensors.push_back({"adam_v." + n, adam.v[i]});
    ++i;
  });
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  save_container(tmp, c);
  std::filesystem::rename(tmp, path);
}

void load_state(const std::filesystem::path& path, AsrModel& model, AsrModel& best, AdamState& adam,
                TrainerState& s, const TrainConfig& cfg) {
  const Container c = load_container(path);
  if (c.meta.value("kind", "") != "trainer_state") throw InvalidInput(path.string() + " is not a trainer state");
  if (c.meta.at("model") != to_json(model.config()) || c.meta.at("plan") != cfg.plan.name() ||
      c.meta.at("seed").get<std::uint64_t>() != cfg.seed) {
    throw InvalidInput("trainer state " + path.string() + " was written for a different model, plan or seed");
  }
  s.step = c.meta.at("step");
  s.next_epoch = c.meta.at("next_epoch");
  s.best_dev_loss = c.meta.at("best_dev_loss");
  s.best_epoch = c.meta.at("best_epoch");
  s.bad_epochs = c.meta.at("bad_epochs");

  const auto params = named_tensors(model.mutable_params());
  const std::size_t n = params.size();
  if (c.tensors.size() != 4 * n) throw InvalidInput("trainer state: tensor count mismatch");
  std::vector<std::pair<std::string, Matrix*>> targets;
  for (const auto& [name, m] : params) targets.emplace_back("param." + name, m);
  assign_tensors(c.tensors, 0, targets);
  targets.clear();
  for (const auto& [name, m] : named_tensors(best.mutable_params())) targets.emplace_back("best." + name, m);
  assign_tensors(c.tensors, n, targets);

  adam = AdamState{};
  adam.step = c.meta.at("adam_step");
  adam.m.resize(n);
  adam.v.resize(n);
  targets.clear();
  for (std::size_t i = 0; i < n; ++i) {
    adam.m[i] = *params[i].second;
    adam.v[i] = *params[i].second;
    targets.emplace_back("adam_m." + params[i].first, &adam.m[i]);
    targets.emplace_back("adam_v." + params[i].first, &adam.v[i]);
  }
  assign_tensors(c.tensors, 2 * n, targets);
  model.mark_updated();
  best.mark_updated();
}

// Keeps the first `lines` lines so a resumed run does not repeat steps that
// were logged after the last saved state.
void truncate_log(const std::filesystem::path& path, std::int64_t lines) {
  std::vector<std::string> kept;
  {
    std::ifstream in(path);
    for (std::string line; static_cast<std::int64_t>(kept.size()) < lines && std::getline(in, line);) {
      kept.push_back(line);
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  for (const auto& l : kept) out << l << '\n';
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * v);
  return buf;
}

}  // namespace

void Dataset::validate() const {
  if (pairs.size() != feats.size()) {
    throw InvalidInput("dataset: " + std::to_string(pairs.size()) + " transcripts but " +
                       std::to_string(feats.size()) + " feature files");
  }
}

void TrainConfig::validate() const {
  if (max_epochs < 1) throw InvalidInput("train: max_epochs must be >= 1");
  if (batch_size < 1) throw InvalidInput("train: batch_size must be >= 1");
  if (patience < 1) throw InvalidInput("train: patience must be >= 1");
  if (bucket_batches < 1) throw InvalidInput("train: bucket_batches must be >= 1");
  if (threads < 1) throw InvalidInput("train: threads must be >= 1");
  if (mask.time_masks < 0 || mask.freq_masks < 0 || mask.max_width < 0) {
    throw InvalidInput("train: mask counts and width must be >= 0");
  }
  adam.validate();
  plan.validate();
  weights.validate();
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"max_epochs", c.max_epochs},
          {"batch_size", c.batch_size},
          {"lr", c.adam.lr},
          {"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},
          {"eps", c.adam.eps},
          {"warmup_steps", c.adam.warmup_steps},
          {"seed", c.seed},
          {"augment", c.augment},
          {"time_masks", c.mask.time_masks},
          {"freq_masks", c.mask.freq_masks},
          {"mask_width", c.mask.max_width},
          {"lambda_ctc", c.weights.ctc},
          {"lambda_inter", c.weights.inter},
          {"patience", c.patience},
          {"bucket_batches", c.bucket_batches}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  JsonReader r(j, "train");
  r.optional("max_epochs", c.max_epochs)
      .optional("batch_size", c.batch_size)
      .optional("lr", c.adam.lr)
      .optional("beta1", c.adam.beta1)
      .optional("beta2", c.adam.beta2)
      .optional("eps", c.adam.eps)
      .optional("warmup_steps", c.adam.warmup_steps)
      .optional("seed", c.seed)
      .optional("augment", c.augment)
      .optional("time_masks", c.mask.time_masks)
      .optional("freq_masks", c.mask.freq_masks)
      .optional("mask_width", c.mask.max_width)
      .optional("lambda_ctc", c.weights.ctc)
      .optional("lambda_inter", c.weights.inter)
      .optional("patience", c.patience)
      .optional("bucket_batches", c.bucket_batches);
  r.finish();
  return c;
}

ModelConfig model_config_for_plan(ModelConfig base, const LabelPlan& plan, const Vocab& vocab) {
  const auto [final_size, mid_size] = head_vocab_sizes(plan, vocab);
  base.final_vocab = final_size;
  base.mid_vocab = mid_size;
  return base;
}

TokenSeq decode_punctuated(const AsrModel& model, const FeatureSequence& x, const Vocab& vocab) {
  TokenSeq hyp = greedy_decode(model.forward(x, false).final_lattice);
  if (model.config().final_vocab == vocab.unpunctuated_size() && vocab.unpunctuated_size() != vocab.size()) {
    for (TokenId& id : hyp) id = vocab.to_punctuated(id);
  }
  return hyp;
}

DevMetrics evaluate_model(const AsrModel& model, const Dataset& data, const Vocab& vocab, const LabelPlan& plan,
                          const LossWeights& weights, const PunctClassifier* clf, const std::string& system) {
  data.validate();
  const bool use_clf = clf != nullptr && plan.last == LastLabels::kUnpnct;
  DevMetrics m;
  std::vector<TokenSeq> hyps;
  std::vector<TokenSeq> refs;
  std::int64_t feasible = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const ForwardOutputs out = model.forward(data.feats[i], false);
    const LossResult l = total_loss(out, data.pairs[i], vocab, plan, weights);
    if (l.feasible) {
      m.loss += l.total;
      ++feasible;
    } else {
      ++m.skipped;
    }
    TokenSeq hyp = greedy_decode(out.final_lattice);
    if (model.config().final_vocab == vocab.unpunctuated_size()) {
      hyp = use_clf ? punctuate(*clf, hyp, vocab) : [&] {
        for (TokenId& id : hyp) id = vocab.to_punctuated(id);
        return hyp;
      }();
    }
    hyps.push_back(std::move(hyp));
    refs.push_back(data.pairs[i].y_pnct);
  }
  m.loss = feasible == 0 ? std::numeric_limits<double>::infinity() : m.loss / static_cast<double>(feasible);
  const auto params = static_cast<std::int64_t>(model.count_params() + (use_clf ? clf->count_params() : 0));
  m.report = evaluate_system(system.empty() ? plan.name() : system, hyps, refs, vocab, params);
  return m;
}

TrainResult train(const Dataset& train_set, const Dataset& dev_set, const Vocab& vocab, const ModelConfig& model_cfg,
                  const TrainConfig& cfg, const TrainOutputs& outputs) {
  cfg.validate();
  train_set.validate();
  dev_set.validate();
  if (train_set.size() == 0) throw InvalidInput("train: empty training set");
  const auto [final_size, mid_size] = head_vocab_sizes(cfg.plan, vocab);
  if (model_cfg.final_vocab != final_size || model_cfg.mid_vocab != mid_size) {
    throw InvalidInput("train: model head sizes do not match plan " + cfg.plan.name());
  }
  if (outputs.resume && !outputs.state) throw InvalidInput("train: resume needs a state path");

  AsrModel model = AsrModel::init(model_cfg, mix_seed(cfg.seed, {0}));
  AsrModel best = model;
  AdamState adam;
  TrainerState s;
  if (outputs.resume && std::filesystem::exists(*outputs.state)) {
    load_state(*outputs.state, model, best, adam, s, cfg);
  }

  std::ofstream log;
  if (outputs.log) {
    if (outputs.resume && s.step > 0) {
      truncate_log(*outputs.log, s.step);
      log.open(*outputs.log, std::ios::binary | std::ios::app);
    } else {
      log.open(*outputs.log, std::ios::binary | std::ios::trunc);
    }
    if (!log) throw std::runtime_error("cannot write " + outputs.log->string());
  }

  std::vector<EpochSummary> summaries;
  for (int epoch = s.next_epoch; epoch < cfg.max_epochs && s.bad_epochs < cfg.patience; ++epoch) {
    EpochSummary sum;
    sum.epoch = epoch;
    double loss_acc = 0.0;
    const std::vector<Batch> batches = make_batches(train_set, cfg, epoch);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const Batch& batch = batches[b];
      std::vector<UtteranceGrad> slots = batch_grads(model, train_set, batch, vocab, cfg, epoch);

      std::optional<ModelParams> grad;
      double loss = 0.0, ctc = 0.0, inter = 0.0;
      std::int64_t processed = 0;
      for (auto& u : slots) {
        if (!u.loss.feasible) continue;
        ++processed;
        loss += u.loss.total;
        ctc += u.loss.ctc;
        inter += u.loss.inter;
        if (!grad) {
          grad = std::move(*u.grad);
        } else {
          accumulate(*grad, *u.grad);
        }
      }
      const auto skipped = static_cast<std::int64_t>(batch.size()) - processed;
      if (processed == 0) {
        throw std::runtime_error("train: epoch " + std::to_string(epoch) + " batch " + std::to_string(b) +
                                 " has no utterance whose target fits its frames (" + std::to_string(skipped) +
                                 " skipped); check stride and frames per token");
      }
      const double inv = 1.0 / static_cast<double>(processed);
      visit(*grad, [&](const std::string&, Matrix& m) { m *= inv; });
      bool accepted = false;
      apply_adam(model, *grad, adam, cfg.adam, accepted);
      ++s.step;
      sum.processed += processed;
      sum.skipped += skipped;
      sum.rejected_steps += accepted ? 0 : 1;
      loss_acc += loss;

      if (log) {
        nlohmann::json rec = {{"step", s.step},       {"epoch", epoch},          {"loss", loss * inv},
                              {"ctc", ctc * inv},     {"inter", inter * inv},    {"processed", processed},
                              {"skipped", skipped},   {"lr", cfg.adam.rate_at(adam.step)}};
        if (!accepted) rec["rejected"] = true;
        if (b + 1 == batches.size()) {
          sum.dev = evaluate_model(model, dev_set, vocab, cfg.plan, cfg.weights);
          rec["dev_loss"] = sum.dev.loss;
          rec["dev_wer"] = sum.dev.report.wer();
          rec["dev_f1"] = sum.dev.report.punct.macro_f1();
          rec["epoch_skipped"] = sum.skipped;
        }
        log << rec.dump() << '\n';
        log.flush();
      }
    }
    if (!log) sum.dev = evaluate_model(model, dev_set, vocab, cfg.plan, cfg.weights);
    sum.train_loss = loss_acc / static_cast<double>(std::max<std::int64_t>(1, sum.processed));

    if (sum.dev.loss < s.best_dev_loss) {
      s.best_dev_loss = sum.dev.loss;
      s.best_epoch = epoch;
      s.bad_epochs = 0;
      best = model;
      if (outputs.checkpoint) save_model(*outputs.checkpoint, best);
    } else {
      ++s.bad_epochs;
    }
    s.next_epoch = epoch + 1;
    if (outputs.state) save_state(*outputs.state, model, best, adam, s, cfg);
    summaries.push_back(std::move(sum));
  }

  return TrainResult{std::move(best), std::move(model), s.best_dev_loss, s.best_epoch, s.step, std::move(summaries)};
}

const AblationCell& AblationTable::at(const LabelPlan& plan, std::uint64_t seed) const {
  for (const auto& c : cells) {
    if (c.plan == plan && c.seed == seed) return c;
  }
  throw InvalidInput("ablation: no cell for " + plan.name() + " seed " + std::to_string(seed));
}

AblationTable run_ablation(const Dataset& train_set, const Dataset& dev_set, const Dataset& test_set,
                           const Vocab& vocab, const ModelConfig& base_model, const TrainConfig& base_cfg,
                           const std::vector<LabelPlan>& plans, const std::vector<std::uint64_t>& seeds,
                           const PunctClassifier* clf, const std::optional<std::filesystem::path>& out_dir,
                           const AblationProgress& progress) {
  if (plans.empty() || seeds.empty()) throw InvalidInput("ablation: needs at least one plan and one seed");
  AblationTable table{plans, seeds, {}};
  for (const auto& plan : plans) {
    for (std::uint64_t seed : seeds) {
      TrainConfig cfg = base_cfg;
      cfg.plan = plan;
      cfg.seed = seed;
      const std::string name = plan.name() + "-s" + std::to_string(seed);
      TrainOutputs outs;
      if (out_dir) {
        const auto dir = *out_dir / name;
        std::filesystem::create_directories(dir);
        outs.log = dir / "train_log.jsonl";
        outs.checkpoint = dir / "best.ckpt";
      }
      const TrainResult r = train(train_set, dev_set, vocab, model_config_for_plan(base_model, plan, vocab), cfg, outs);
      AblationCell cell;
      cell.plan = plan;
      cell.seed = seed;
      cell.dev = evaluate_model(r.best, dev_set, vocab, plan, cfg.weights, clf, name).report;
      cell.test = evaluate_model(r.best, test_set, vocab, plan, cfg.weights, clf, name).report;
      cell.params = r.best.count_params();
      if (progress) progress(cell);
      table.cells.push_back(std::move(cell));
    }
  }
  return table;
}

std::string ablation_tsv(const AblationTable& table) {
  const auto label = [](LastLabels l) {
    return l == LastLabels::kPnct ? "pnct" : l == LastLabels::kUnpnct ? "unpnct" : "pnct+unpnct";
  };
  const auto middle = [](MiddleLabels m) {
    return m == MiddleLabels::kNone ? "none" : m == MiddleLabels::kPnct ? "pnct" : "unpnct";
  };
  std::ostringstream out;
  out << "last_layer\tmiddle_layer";
  for (std::uint64_t s : table.seeds) out << "\twer_s" << s << "\tf1_s" << s;
  out << "\twer_mean\tf1_mean\tnote\n";
  for (const auto& plan : table.plans) {
    out << label(plan.last) << '\t' << middle(plan.middle);
    double wer_sum = 0.0;
    double f1_sum = 0.0;
    for (std::uint64_t s : table.seeds) {
      const EvalReport& r = table.at(plan, s).test;
      out << '\t' << percent(r.wer()) << '\t' << percent(r.punct.macro_f1());
      wer_sum += r.wer();
      f1_sum += r.punct.macro_f1();
    }
    const double n = static_cast<double>(table.seeds.size());
    out << '\t' << percent(wer_sum / n) << '\t' << percent(f1_sum / n) << '\t';
    if (plan == kProposedPlan) {
      out << "proposed";
    } else if (plan.last == LastLabels::kBoth) {
      out << "expected degraded punctuation";
    } else if (plan.last == LastLabels::kUnpnct) {
      out << "punctuation from cascade classifier";
    } else {
      out << "-";
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace punctasr
