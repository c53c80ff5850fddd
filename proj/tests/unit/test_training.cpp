#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "punctasr/checkpoint.hpp"
#include "punctasr/rng.hpp"
#include "punctasr/trainer.hpp"
#include "test_util.hpp"

using namespace punctasr;
namespace fs = std::filesystem;

namespace {

struct Toy {
  Vocab vocab;
  Dataset train;
  Dataset dev;
};

Toy make_toy(int n_train, int n_dev, std::uint64_t seed = 1) {
  CorpusConfig cc;
  cc.n_utterances = n_train + n_dev;
  cc.rng_seed = seed;
  cc.max_len = 5;
  Corpus corpus = generate_corpus(cc);
  SynthConfig sc;
  sc.dim = 8;
  const Synthesizer synth(corpus.vocab, sc);
  Toy toy{corpus.vocab, {}, {}};
  for (int i = 0; i < n_train + n_dev; ++i) {
    Dataset& d = i < n_train ? toy.train : toy.dev;
    d.pairs.push_back(corpus.utterances[i]);
    d.feats.push_back(synth.synthesize(corpus.utterances[i].y_pnct, mix_seed(sc.rng_seed, {std::uint64_t(i)})));
  }
  return toy;
}

ModelConfig toy_model(const Vocab& vocab, const LabelPlan& plan) {
  ModelConfig c;
  c.layers = 2;
  c.hidden = 16;
  c.heads = 2;
  c.ff_dim = 32;
  c.input_dim = 8;
  c.stride = 2;
  return model_config_for_plan(c, plan, vocab);
}

TrainConfig toy_train(int epochs) {
  TrainConfig t;
  t.max_epochs = epochs;
  t.batch_size = 4;
  t.adam.lr = 3e-3;
  t.adam.warmup_steps = 5;
  t.patience = 100;
  return t;
}

fs::path temp_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("punctasr_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

// Outputs whose two lattices are the same matrix, over the unpunctuated view.
ForwardOutputs twin_outputs(const Vocab& vocab, int frames, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ForwardOutputs out;
  out.final_lattice = punctasr::testing::random_lattice(frames, vocab.unpunctuated_size(), rng);
  out.mid_lattice = out.final_lattice;
  return out;
}

}  // namespace

TEST_CASE("label plans") {
  CHECK(ablation_plans().size() == 6);
  for (const auto& p : ablation_plans()) CHECK(LabelPlan::parse(p.name()) == p);
  CHECK(kProposedPlan.name() == "pnct-unpnct");
  try {
    LabelPlan::parse("pnct-both");
    FAIL("expected an error");
  } catch (const InvalidInput& e) {
    const std::string msg = e.what();
    for (const auto& p : ablation_plans()) CHECK(msg.find(p.name()) != std::string::npos);
  }
  CHECK_THROWS_AS((LabelPlan{LastLabels::kBoth, MiddleLabels::kUnpnct}.validate()), InvalidInput);
  const Vocab v = Vocab::punctuated({"a", "b"});
  CHECK(head_vocab_sizes({LastLabels::kPnct, MiddleLabels::kUnpnct}, v) == std::pair{6, 3});
  CHECK(head_vocab_sizes({LastLabels::kUnpnct, MiddleLabels::kNone}, v) == std::pair{3, 3});
  CHECK(head_vocab_sizes({LastLabels::kPnct, MiddleLabels::kPnct}, v) == std::pair{6, 6});
  CHECK(head_vocab_sizes({LastLabels::kBoth, MiddleLabels::kNone}, v) == std::pair{6, 3});
}

TEST_CASE("total_loss arithmetic") {
  const Vocab v = Vocab::punctuated({"a", "b", "c"});
  const TranscriptPair pair = make_transcript_pair(v.encode_text("a , b c ."), v);
  const LabelPlan uu{LastLabels::kUnpnct, MiddleLabels::kUnpnct};
  const ForwardOutputs out = twin_outputs(v, 8, 1);

  SUBCASE("equal head losses with 0.5 / 0.5 give that loss") {
    const LossResult r = total_loss(out, pair, v, uu, {0.5, 0.5});
    REQUIRE(r.feasible);
    CHECK(r.ctc == r.inter);
    CHECK(r.total == doctest::Approx(r.ctc).epsilon(1e-15));
  }
  SUBCASE("lambda_inter = 0 leaves only the weighted final term") {
    const LossResult r = total_loss(out, pair, v, uu, {0.7, 0.0});
    CHECK(r.total == 0.7 * r.ctc);
    CHECK(r.grad_mid.isZero(0.0));
  }
  SUBCASE("linear in the weights") {
    std::mt19937_64 rng(2);
    ForwardOutputs o2;
    o2.final_lattice = punctasr::testing::random_lattice(8, v.size(), rng);
    o2.mid_lattice = punctasr::testing::random_lattice(8, v.unpunctuated_size(), rng);
    const LossResult a = total_loss(o2, pair, v, kProposedPlan, {1.0, 0.0});
    const LossResult b = total_loss(o2, pair, v, kProposedPlan, {0.0, 1.0});
    for (const LossWeights w : {LossWeights{0.5, 0.5}, LossWeights{0.2, 0.9}, LossWeights{1.0, 0.3}}) {
      const LossResult r = total_loss(o2, pair, v, kProposedPlan, w);
      CHECK(r.total == doctest::Approx(w.ctc * a.total + w.inter * b.total).epsilon(1e-14));
      CHECK((r.grad_final - (w.ctc * a.grad_final)).cwiseAbs().maxCoeff() < 1e-14);
      CHECK((r.grad_mid - (w.inter * b.grad_mid)).cwiseAbs().maxCoeff() < 1e-14);
    }
  }
  SUBCASE("the multitask plan averages both targets at the final head") {
    std::mt19937_64 rng(3);
    ForwardOutputs o;
    o.final_lattice = punctasr::testing::random_lattice(9, v.size(), rng);
    o.mid_lattice = punctasr::testing::random_lattice(9, v.unpunctuated_size(), rng);
    const LossResult r = total_loss(o, pair, v, {LastLabels::kBoth, MiddleLabels::kNone}, {0.5, 0.5});
    const double lp = ctc_loss(o.final_lattice, pair.y_pnct).loss;
    const double lu = ctc_loss(o.final_lattice, v.encode_text("a b c")).loss;
    CHECK(r.ctc == doctest::Approx(0.5 * (lp + lu)).epsilon(1e-14));
    CHECK(r.total == doctest::Approx(0.5 * r.ctc).epsilon(1e-14));
    CHECK(r.grad_mid.size() == 0);
  }
  SUBCASE("infeasible targets mark the utterance") {
    std::mt19937_64 rng(4);
    ForwardOutputs o;
    o.final_lattice = punctasr::testing::random_lattice(3, v.size(), rng);
    o.mid_lattice = punctasr::testing::random_lattice(3, v.unpunctuated_size(), rng);
    CHECK(!total_loss(o, pair, v, kProposedPlan, {}).feasible);
  }
  SUBCASE("head sizes must match the plan") {
    CHECK_THROWS_AS(total_loss(out, pair, v, kProposedPlan, {}), InvalidInput);
  }
}

TEST_CASE("total_loss gradient through the model matches finite differences per plan") {
  const Toy toy = make_toy(1, 0);
  const TranscriptPair& pair = toy.train.pairs[0];
  const FeatureSequence& x = toy.train.feats[0];
  for (const auto& plan : ablation_plans()) {
    CAPTURE(plan.name());
    AsrModel m = AsrModel::init(toy_model(toy.vocab, plan), 5);
    const LossWeights w{0.6, 0.4};
    const ForwardOutputs out = m.forward(x, true);
    const LossResult l = total_loss(out, pair, toy.vocab, plan, w);
    REQUIRE(l.feasible);
    ModelParams g = m.backward(out, l.grad_final, l.grad_mid);
    const auto loss = [&] { return total_loss(m.forward(x, false), pair, toy.vocab, plan, w).total; };
    auto ps = named_tensors(m.mutable_params());
    auto gs = named_tensors(g);
    std::mt19937_64 rng(1);
    for (std::size_t k = 0; k < ps.size(); k += 3) {
      std::uniform_int_distribution<Eigen::Index> pick(0, ps[k].second->size() - 1);
      const Eigen::Index i = pick(rng);
      const double fd = punctasr::testing::five_point_diff(loss, ps[k].second->data()[i], 1e-3);
      CHECK(punctasr::testing::rel_err(gs[k].second->data()[i], fd, 1e-6) <= 1e-4);
    }
  }
}

TEST_CASE("with lambda_inter = 0 the tap head receives no gradient") {
  const Toy toy = make_toy(1, 0);
  const AsrModel m = AsrModel::init(toy_model(toy.vocab, kProposedPlan), 2);
  const ForwardOutputs out = m.forward(toy.train.feats[0], true);
  const LossResult l = total_loss(out, toy.train.pairs[0], toy.vocab, kProposedPlan, {1.0, 0.0});
  const ModelParams g = m.backward(out, l.grad_final, l.grad_mid);
  CHECK(g.mid_head.weight.isZero(0.0));
  CHECK(g.mid_head.bias.isZero(0.0));
  CHECK(g.mid_norm.gain.isZero(0.0));
  CHECK(!g.final_head.weight.isZero(0.0));
}

TEST_CASE("adam") {
  AdamHyper hyper;
  hyper.lr = 0.01;
  hyper.warmup_steps = 0;

  SUBCASE("zero gradient leaves parameters unchanged") {
    Matrix p = Matrix::Constant(2, 3, 1.5);
    const Matrix g = Matrix::Zero(2, 3);
    AdamState s;
    Matrix* pp = &p;
    const Matrix* gp = &g;
    CHECK(adam_step({&pp, 1}, {&gp, 1}, s, hyper));
    CHECK(p == Matrix::Constant(2, 3, 1.5));
  }
  SUBCASE("first step moves by the step size against the gradient sign") {
    Matrix p(1, 3);
    p << 0.0, 0.0, 0.0;
    Matrix g(1, 3);
    g << 2.0, -0.001, 50.0;
    AdamState s;
    Matrix* pp = &p;
    const Matrix* gp = &g;
    adam_step({&pp, 1}, {&gp, 1}, s, hyper);
    CHECK(p(0, 0) == doctest::Approx(-0.01).epsilon(1e-6));
    CHECK(p(0, 1) == doctest::Approx(0.01).epsilon(1e-4));
    CHECK(p(0, 2) == doctest::Approx(-0.01).epsilon(1e-6));
  }
  SUBCASE("quadratic bowl converges") {
    // f(p) = sum c_i (p_i - t_i)^2
    Matrix p(1, 4);
    p << 3.0, -2.0, 0.5, 1.0;
    Matrix c(1, 4);
    c << 1.0, 4.0, 0.5, 2.0;
    Matrix t(1, 4);
    t << 0.3, -0.1, 0.7, -0.4;
    AdamHyper h;
    h.lr = 0.05;
    h.warmup_steps = 0;
    h.beta2 = 0.999;
    AdamState s;
    Matrix g;
    for (int step = 0; step < 500; ++step) {
      g = 2.0 * c.cwiseProduct(p - t);
      Matrix* pp = &p;
      const Matrix* gp = &g;
      adam_step({&pp, 1}, {&gp, 1}, s, h);
    }
    CHECK(c.cwiseProduct((p - t).cwiseAbs2()).sum() < 1e-6);
  }
  SUBCASE("non-finite gradients are rejected without side effects") {
    Matrix p = Matrix::Ones(1, 2);
    Matrix g = Matrix::Ones(1, 2);
    g(0, 1) = std::numeric_limits<double>::quiet_NaN();
    AdamState s;
    Matrix* pp = &p;
    const Matrix* gp = &g;
    CHECK(!adam_step({&pp, 1}, {&gp, 1}, s, hyper));
    CHECK(s.step == 0);
    CHECK(p == Matrix::Ones(1, 2));
  }
  SUBCASE("warmup ramps linearly") {
    AdamHyper h;
    h.lr = 1.0;
    h.warmup_steps = 4;
    CHECK(h.rate_at(1) == 0.25);
    CHECK(h.rate_at(4) == 1.0);
    CHECK(h.rate_at(100) == 1.0);
  }
}

TEST_CASE("overfitting one utterance") {
  const Toy toy = make_toy(1, 0);
  TrainConfig cfg = toy_train(200);
  cfg.batch_size = 1;
  cfg.augment = false;
  cfg.adam.warmup_steps = 0;
  cfg.adam.lr = 3e-3;
  const fs::path dir = temp_dir("overfit");
  const TrainResult r = train(toy.train, toy.train, toy.vocab, toy_model(toy.vocab, cfg.plan), cfg,
                              {dir / "log.jsonl", std::nullopt, std::nullopt, false});
  const auto lines = read_lines(dir / "log.jsonl");
  REQUIRE(lines.size() == 200);
  const double first = nlohmann::json::parse(lines.front()).at("loss");
  const double last = nlohmann::json::parse(lines.back()).at("loss");
  CHECK(last <= 0.1 * first);
  // 50 steps already halve it
  const double at50 = nlohmann::json::parse(lines[49]).at("loss");
  CHECK(at50 <= 0.5 * first);
}

TEST_CASE("training is deterministic and thread-count independent") {
  const Toy toy = make_toy(24, 6);
  const TrainConfig cfg = toy_train(2);
  const ModelConfig mc = toy_model(toy.vocab, cfg.plan);
  const fs::path dir = temp_dir("determinism");
  train(toy.train, toy.dev, toy.vocab, mc, cfg, {dir / "a.jsonl", dir / "a.ckpt", std::nullopt, false});
  train(toy.train, toy.dev, toy.vocab, mc, cfg, {dir / "b.jsonl", dir / "b.ckpt", std::nullopt, false});
  TrainConfig threaded = cfg;
  threaded.threads = 3;
  train(toy.train, toy.dev, toy.vocab, mc, threaded, {dir / "c.jsonl", dir / "c.ckpt", std::nullopt, false});
  CHECK(hash_file(dir / "a.ckpt") == hash_file(dir / "b.ckpt"));
  CHECK(hash_file(dir / "a.ckpt") == hash_file(dir / "c.ckpt"));
  CHECK(read_lines(dir / "a.jsonl") == read_lines(dir / "c.jsonl"));

  TrainConfig other = cfg;
  other.seed = 2;
  train(toy.train, toy.dev, toy.vocab, mc, other, {dir / "d.jsonl", dir / "d.ckpt", std::nullopt, false});
  CHECK(hash_file(dir / "a.ckpt") != hash_file(dir / "d.ckpt"));
}

TEST_CASE("log has one line per step and epoch summaries account for every utterance") {
  Toy toy = make_toy(18, 4);
  // too few frames for its target: infeasible at stride 2
  toy.train.feats[3].frames.conservativeResize(2, Eigen::NoChange);
  const TrainConfig cfg = toy_train(2);
  const fs::path dir = temp_dir("accounting");
  const TrainResult r = train(toy.train, toy.dev, toy.vocab, toy_model(toy.vocab, cfg.plan), cfg,
                              {dir / "log.jsonl", std::nullopt, std::nullopt, false});
  const auto lines = read_lines(dir / "log.jsonl");
  CHECK(static_cast<std::int64_t>(lines.size()) == r.steps);
  CHECK(r.steps == 2 * 5);  // ceil(18 / 4) batches per epoch
  REQUIRE(r.epochs.size() == 2);
  for (const auto& e : r.epochs) {
    CHECK(e.skipped == 1);
    CHECK(e.processed + e.skipped == static_cast<std::int64_t>(toy.train.size()));
  }
  int with_dev = 0;
  for (const auto& l : lines) with_dev += nlohmann::json::parse(l).contains("dev_wer");
  CHECK(with_dev == 2);
}

TEST_CASE("an all-infeasible batch aborts") {
  Toy toy = make_toy(4, 1);
  for (auto& x : toy.train.feats) x.frames.conservativeResize(2, Eigen::NoChange);
  TrainConfig cfg = toy_train(1);
  CHECK_THROWS_WITH_AS(train(toy.train, toy.dev, toy.vocab, toy_model(toy.vocab, cfg.plan), cfg),
                       doctest::Contains("no utterance"), std::runtime_error);
}

TEST_CASE("resuming reproduces an uninterrupted run") {
  const Toy toy = make_toy(20, 5);
  const ModelConfig mc = toy_model(toy.vocab, kProposedPlan);
  const fs::path dir = temp_dir("resume");
  const TrainConfig full = toy_train(3);
  train(toy.train, toy.dev, toy.vocab, mc, full, {dir / "full.jsonl", dir / "full.ckpt", dir / "full.state", false});

  TrainConfig first = full;
  first.max_epochs = 1;
  const TrainOutputs outs{dir / "part.jsonl", dir / "part.ckpt", dir / "part.state", true};
  train(toy.train, toy.dev, toy.vocab, mc, first, outs);
  // stray line from an interrupted epoch is dropped on resume
  std::ofstream(dir / "part.jsonl", std::ios::app) << "{\"step\": 999}\n";
  const TrainResult rest = train(toy.train, toy.dev, toy.vocab, mc, full, outs);
  CHECK(rest.epochs.size() == 2);
  CHECK(rest.epochs.front().epoch == 1);
  CHECK(read_lines(dir / "part.jsonl") == read_lines(dir / "full.jsonl"));
  CHECK(hash_file(dir / "part.ckpt") == hash_file(dir / "full.ckpt"));
  CHECK(hash_file(dir / "part.state") == hash_file(dir / "full.state"));

  TrainConfig other_seed = full;
  other_seed.seed = 9;
  CHECK_THROWS_AS(train(toy.train, toy.dev, toy.vocab, mc, other_seed, outs), InvalidInput);
}

TEST_CASE("a reloaded checkpoint gives identical dev metrics") {
  const Toy toy = make_toy(16, 6);
  const TrainConfig cfg = toy_train(1);
  const fs::path dir = temp_dir("ckpt_metrics");
  const TrainResult r = train(toy.train, toy.dev, toy.vocab, toy_model(toy.vocab, cfg.plan), cfg,
                              {std::nullopt, dir / "best.ckpt", std::nullopt, false});
  const AsrModel back = load_model(dir / "best.ckpt");
  const DevMetrics a = evaluate_model(r.best, toy.dev, toy.vocab, cfg.plan, cfg.weights);
  const DevMetrics b = evaluate_model(back, toy.dev, toy.vocab, cfg.plan, cfg.weights);
  CHECK(a.loss == b.loss);
  CHECK(a.report == b.report);
}

TEST_CASE("train rejects mismatched head sizes and bad configs") {
  const Toy toy = make_toy(4, 1);
  TrainConfig cfg = toy_train(1);
  ModelConfig mc = toy_model(toy.vocab, {LastLabels::kUnpnct, MiddleLabels::kNone});
  CHECK_THROWS_AS(train(toy.train, toy.dev, toy.vocab, mc, cfg), InvalidInput);
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), InvalidInput);
  CHECK_THROWS_AS(train_config_from_json({{"max_epoch", 3}}), InvalidInput);
  const TrainConfig round = train_config_from_json(to_json(toy_train(4)));
  CHECK(round.max_epochs == 4);
  CHECK(round.adam.lr == toy_train(4).adam.lr);
}

TEST_CASE("ablation table has one row per plan and per-seed columns") {
  const Toy toy = make_toy(12, 4);
  ClassifierConfig cc;
  cc.layers = 1;
  cc.hidden = 8;
  cc.heads = 2;
  cc.ff_dim = 8;
  cc.vocab = toy.vocab.unpunctuated_size();
  ClassifierTrainConfig ct;
  ct.epochs = 1;
  const PunctClassifier clf = train_classifier(toy.train.pairs, {}, toy.vocab, cc, ct);
  ModelConfig base;
  base.layers = 2;
  base.hidden = 8;
  base.heads = 2;
  base.ff_dim = 8;
  base.input_dim = 8;
  const AblationTable t = run_ablation(toy.train, toy.dev, toy.dev, toy.vocab, base, toy_train(1), ablation_plans(),
                                       {1, 2}, &clf);
  CHECK(t.cells.size() == 12);
  const std::string tsv = ablation_tsv(t);
  std::istringstream in(tsv);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  REQUIRE(lines.size() == 7);
  CHECK(lines[0] == "last_layer\tmiddle_layer\twer_s1\tf1_s1\twer_s2\tf1_s2\twer_mean\tf1_mean\tnote");
  for (std::size_t i = 1; i < lines.size(); ++i) CHECK(std::count(lines[i].begin(), lines[i].end(), '\t') == 8);
  CHECK(lines[5].starts_with("pnct\tunpnct"));
  CHECK(lines[5].ends_with("proposed"));
  CHECK(lines[6].starts_with("pnct+unpnct\tnone"));
  CHECK(lines[6].ends_with("expected degraded punctuation"));
  CHECK(lines[2].ends_with("punctuation from cascade classifier"));
  // cascade rows are scored with classifier punctuation
  const AblationCell& cascade_row = t.at({LastLabels::kUnpnct, MiddleLabels::kNone}, 1);
  CHECK(cascade_row.test.params == static_cast<std::int64_t>(cascade_row.params + clf.count_params()));
}
