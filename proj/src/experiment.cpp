#include "punctasr/experiment.hpp"

#include <cstdio>
#include <fstream>

#include "punctasr/checkpoint.hpp"
#include "punctasr/json_reader.hpp"
#include "punctasr/rng.hpp"

namespace punctasr {

namespace {

constexpr const char* kSplitNames[] = {"train", "dev", "test"};

json range_json(const FrameRange& r) { return json::array({r.lo, r.hi}); }

FrameRange range_from(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() || !j[1].is_number_integer()) {
    throw InvalidInput(where + ": expected [lo, hi]");
  }
  return {j[0].get<int>(), j[1].get<int>()};
}

json corpus_json(const CorpusConfig& c) {
  return {{"vocab_words", c.vocab_words},
          {"min_len", c.min_len},
          {"max_len", c.max_len},
          {"punct_rates", c.punct_rates},
          {"end_mark_rate", c.end_mark_rate},
          {"seed", c.rng_seed},
          {"symbols", {{"comma", c.symbols.comma}, {"period", c.symbols.period}, {"question", c.symbols.question}}}};
}

CorpusConfig corpus_from(const json& j) {
  CorpusConfig c;
  JsonReader r(j, "corpus");
  r.optional("vocab_words", c.vocab_words)
      .optional("min_len", c.min_len)
      .optional("max_len", c.max_len)
      .optional("punct_rates", c.punct_rates)
      .optional("end_mark_rate", c.end_mark_rate)
      .optional("seed", c.rng_seed);
  if (const json* s = r.child("symbols")) {
    JsonReader sr(*s, "corpus.symbols");
    sr.optional("comma", c.symbols.comma).optional("period", c.symbols.period).optional("question", c.symbols.question);
    sr.finish();
  }
  r.finish();
  return c;
}

json synth_json(const SynthConfig& c) {
  json pauses = json::array();
  for (const auto& p : c.pause_frames) pauses.push_back(range_json(p));
  return {{"dim", c.dim},
          {"frames_per_word", range_json(c.frames_per_word)},
          {"pause_frames", pauses},
          {"cue_levels", c.cue_levels},
          {"prototype_scale", c.prototype_scale},
          {"pause_energy", c.pause_energy},
          {"noise_std", c.noise_std},
          {"seed", c.rng_seed}};
}

SynthConfig synth_from(const json& j) {
  SynthConfig c;
  JsonReader r(j, "synth");
  r.optional("dim", c.dim)
      .optional("cue_levels", c.cue_levels)
      .optional("prototype_scale", c.prototype_scale)
      .optional("pause_energy", c.pause_energy)
      .optional("noise_std", c.noise_std)
      .optional("seed", c.rng_seed);
  if (const json* f = r.child("frames_per_word")) c.frames_per_word = range_from(*f, r.path("frames_per_word"));
  if (const json* p = r.child("pause_frames")) {
    if (!p->is_array() || p->size() != 3) throw InvalidInput("synth.pause_frames: expected three [lo, hi] ranges");
    for (std::size_t k = 0; k < 3; ++k) c.pause_frames[k] = range_from((*p)[k], r.path("pause_frames"));
  }
  r.finish();
  return c;
}

std::string hash_of_files(const std::vector<std::filesystem::path>& files) {
  std::uint64_t h = fnv1a(nullptr, 0);
  for (const auto& f : files) {
    const std::uint64_t fh = hash_file(f);
    h = fnv1a(&fh, sizeof(fh), h);
  }
  return hex64(h);
}

std::string feat_name(const std::string& split, std::size_t i) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%05zu.feat", split.c_str(), i);
  return buf;
}

struct RawData {
  Vocab vocab;
  std::array<Dataset, 3> splits;  // raw features
  Matrix prototypes;
};

RawData generate_raw(const ExperimentConfig& cfg) {
  CorpusConfig cc = cfg.corpus;
  cc.n_utterances = cfg.splits.total();
  Corpus corpus = generate_corpus(cc);
  const Synthesizer synth(corpus.vocab, cfg.synth);

  RawData raw{corpus.vocab, {}, synth.prototypes()};
  const int sizes[3] = {cfg.splits.train, cfg.splits.dev, cfg.splits.test};
  std::size_t next = 0;
  for (int s = 0; s < 3; ++s) {
    for (int i = 0; i < sizes[s]; ++i, ++next) {
      raw.splits[s].pairs.push_back(corpus.utterances[next]);
      raw.splits[s].feats.push_back(synth.synthesize(corpus.utterances[next].y_pnct, mix_seed(cfg.synth.rng_seed, {next})));
    }
  }
  return raw;
}

ExperimentData normalize(RawData raw, FeatureNormalizer norm) {
  for (auto& split : raw.splits) {
    for (auto& x : split.feats) x = norm.apply(x);
  }
  return {std::move(raw.vocab), std::move(raw.splits[0]), std::move(raw.splits[1]), std::move(raw.splits[2]),
          std::move(norm)};
}

}  // namespace

void ExperimentConfig::validate() const {
  CorpusConfig cc = corpus;
  cc.n_utterances = std::max(1, splits.total());
  cc.validate();
  synth.validate();
  if (splits.train < 1 || splits.dev < 1 || splits.test < 1) throw InvalidInput("splits: every split needs >= 1 utterance");
  if (model.input_dim != synth.dim || cascade_model.input_dim != synth.dim) {
    throw InvalidInput("model.input_dim must equal synth.dim (" + std::to_string(synth.dim) + ")");
  }
  const Vocab vocab = make_corpus_vocab(cc);
  for (const auto& p : plans) {
    p.validate();
    model_config_for_plan(model, p, vocab).validate();
  }
  if (plans.empty()) throw InvalidInput("plans: at least one plan is required");
  if (seeds.empty()) throw InvalidInput("seeds: at least one seed is required");
  if (cascade_plan.last != LastLabels::kUnpnct) throw InvalidInput("cascade_plan: last layer must be unpnct");
  model_config_for_plan(cascade_model, cascade_plan, vocab).validate();
  ClassifierConfig cl = classifier;
  cl.vocab = vocab.unpunctuated_size();
  cl.validate();
  TrainConfig t = train;
  t.validate();
  classifier_train.validate();
}

json to_json(const ExperimentConfig& c) {
  json plans = json::array();
  for (const auto& p : c.plans) plans.push_back(p.name());
  json model = to_json(c.model);
  json cascade = to_json(c.cascade_model);
  json classifier = to_json(c.classifier);
  for (json* m : {&model, &cascade}) {
    m->erase("final_vocab");
    m->erase("mid_vocab");
  }
  classifier.erase("vocab");
  return {{"corpus", corpus_json(c.corpus)},
          {"synth", synth_json(c.synth)},
          {"splits", {{"train", c.splits.train}, {"dev", c.splits.dev}, {"test", c.splits.test}}},
          {"model", model},
          {"cascade_model", cascade},
          {"classifier", classifier},
          {"train", to_json(c.train)},
          {"classifier_train", to_json(c.classifier_train)},
          {"plans", plans},
          {"seeds", c.seeds},
          {"cascade_plan", c.cascade_plan.name()}};
}

ExperimentConfig experiment_config_from_json(const json& j) {
  ExperimentConfig c;
  JsonReader r(j, "config");
  if (const json* v = r.child("corpus")) c.corpus = corpus_from(*v);
  if (const json* v = r.child("synth")) c.synth = synth_from(*v);
  if (const json* v = r.child("splits")) {
    JsonReader sr(*v, "splits");
    sr.optional("train", c.splits.train).optional("dev", c.splits.dev).optional("test", c.splits.test);
    sr.finish();
  }
  const auto model_from = [](const json& m, const char* where) {
    if (m.contains("final_vocab") || m.contains("mid_vocab")) {
      throw InvalidInput(std::string(where) + ": head sizes are set by the label plan, not the config");
    }
    return model_config_from_json(m);
  };
  if (const json* v = r.child("model")) c.model = model_from(*v, "model");
  c.cascade_model = c.model;
  if (const json* v = r.child("cascade_model")) c.cascade_model = model_from(*v, "cascade_model");
  if (const json* v = r.child("classifier")) {
    if (v->contains("vocab")) throw InvalidInput("classifier: vocab is set from the corpus");
    c.classifier = classifier_config_from_json(*v);
  }
  if (const json* v = r.child("train")) c.train = train_config_from_json(*v);
  if (const json* v = r.child("classifier_train")) c.classifier_train = classifier_train_config_from_json(*v);
  if (const json* v = r.child("plans")) {
    if (!v->is_array()) throw InvalidInput("plans: expected a list of plan names");
    c.plans.clear();
    for (const auto& p : *v) c.plans.push_back(LabelPlan::parse(p.get<std::string>()));
  }
  r.optional("seeds", c.seeds);
  std::string cascade_plan = c.cascade_plan.name();
  r.optional("cascade_plan", cascade_plan);
  c.cascade_plan = LabelPlan::parse(cascade_plan);
  r.finish();
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw InvalidInput("config " + path.string() + ": " + e.what());
  }
  return experiment_config_from_json(j);
}

ExperimentData build_data(const ExperimentConfig& cfg) {
  cfg.validate();
  RawData raw = generate_raw(cfg);
  FeatureNormalizer norm = FeatureNormalizer::fit(raw.splits[0].feats);
  return normalize(std::move(raw), std::move(norm));
}

std::string write_data(const std::filesystem::path& dir, const ExperimentConfig& cfg) {
  cfg.validate();
  RawData raw = generate_raw(cfg);
  const FeatureNormalizer norm = FeatureNormalizer::fit(raw.splits[0].feats);

  std::filesystem::create_directories(dir / "feats");
  json splits = json::object();
  for (int s = 0; s < 3; ++s) {
    const std::string name = kSplitNames[s];
    const auto txt = dir / (name + ".txt");
    write_transcripts(txt, raw.splits[s].pairs, raw.vocab);
    std::vector<std::filesystem::path> files;
    for (std::size_t i = 0; i < raw.splits[s].size(); ++i) {
      files.push_back(dir / "feats" / feat_name(name, i));
      write_features(files.back(), raw.splits[s].feats[i]);
    }
    splits[name] = {{"utterances", raw.splits[s].size()},
                    {"transcripts_hash", hex64(hash_file(txt))},
                    {"features_hash", hash_of_files(files)}};
  }
  const auto row = [](const Eigen::RowVectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  json prototype_rows = json::array();
  for (Eigen::Index r = 0; r < raw.prototypes.rows(); ++r) prototype_rows.push_back(row(raw.prototypes.row(r)));
  const json manifest = {{"format", 1},
                         {"vocab", raw.vocab.tokens()},
                         {"symbols",
                          {{"comma", raw.vocab.symbols().comma},
                           {"period", raw.vocab.symbols().period},
                           {"question", raw.vocab.symbols().question}}},
                         {"corpus_seed", cfg.corpus.rng_seed},
                         {"synth_seed", cfg.synth.rng_seed},
                         {"splits", splits},
                         {"normalizer", {{"mean", row(norm.mean)}, {"stddev", row(norm.stddev)}}},
                         {"prototypes", prototype_rows},
                         {"config", to_json(cfg)}};
  const auto path = dir / "manifest.json";
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << manifest.dump(2) << '\n';
  }
  return hex64(hash_file(path));
}

ExperimentData load_data(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string() + " (run generate-data first)");
  const json m = json::parse(in);
  PunctSymbols symbols;
  symbols.comma = m.at("symbols").at("comma");
  symbols.period = m.at("symbols").at("period");
  symbols.question = m.at("symbols").at("question");
  RawData raw{Vocab::from_tokens(m.at("vocab").get<std::vector<std::string>>(), symbols), {}, {}};

  for (int s = 0; s < 3; ++s) {
    const std::string name = kSplitNames[s];
    const json& info = m.at("splits").at(name);
    const auto txt = dir / (name + ".txt");
    if (hex64(hash_file(txt)) != info.at("transcripts_hash")) {
      throw InvalidInput(txt.string() + " does not match the manifest hash");
    }
    raw.splits[s].pairs = read_transcripts(txt, raw.vocab);
    const std::size_t n = info.at("utterances");
    if (raw.splits[s].pairs.size() != n) throw InvalidInput(txt.string() + ": utterance count differs from manifest");
    std::vector<std::filesystem::path> files;
    for (std::size_t i = 0; i < n; ++i) {
      files.push_back(dir / "feats" / feat_name(name, i));
      raw.splits[s].feats.push_back(read_features(files.back()));
    }
    if (hash_of_files(files) != info.at("features_hash")) {
      throw InvalidInput("features of split " + name + " do not match the manifest hash");
    }
  }
  const auto mean = m.at("normalizer").at("mean").get<std::vector<double>>();
  const auto stddev = m.at("normalizer").at("stddev").get<std::vector<double>>();
  FeatureNormalizer norm;
  norm.mean = Eigen::Map<const Eigen::RowVectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  norm.stddev = Eigen::Map<const Eigen::RowVectorXd>(stddev.data(), static_cast<Eigen::Index>(stddev.size()));
  return normalize(std::move(raw), std::move(norm));
}

const Dataset& split_by_name(const ExperimentData& data, const std::string& name) {
  if (name == "train") return data.train;
  if (name == "dev") return data.dev;
  if (name == "test") return data.test;
  throw InvalidInput("unknown split '" + name + "'; valid splits: train, dev, test");
}

}  // namespace punctasr
