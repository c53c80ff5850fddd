#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "punctasr/adam.hpp"
#include "punctasr/classifier.hpp"
#include "punctasr/eval.hpp"
#include "punctasr/loss.hpp"
#include "punctasr/model.hpp"

namespace punctasr {

// Transcripts with their (already normalized) features, index-aligned.
struct Dataset {
  std::vector<TranscriptPair> pairs;
  std::vector<FeatureSequence> feats;

  std::size_t size() const { return pairs.size(); }
  void validate() const;
};

struct TrainConfig {
  int max_epochs = 30;
  int batch_size = 16;
  AdamHyper adam{2e-3, 0.9, 0.98, 1e-9, 500};
  std::uint64_t seed = 1;
  bool augment = true;
  MaskSpec mask{};
  LabelPlan plan = kProposedPlan;
  LossWeights weights{};
  int patience = 8;  // epochs without dev-loss improvement before stopping
  int bucket_batches = 8;  // batches per length-sorted bucket
  int threads = 1;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
// Reads every field except the plan, which the caller supplies.
TrainConfig train_config_from_json(const nlohmann::json& j);

// Greedy decode of the final head mapped into the punctuated view. For a
// final head over the unpunctuated vocabulary the result contains no marks.
TokenSeq decode_punctuated(const AsrModel& model, const FeatureSequence& x, const Vocab& vocab);

struct DevMetrics {
  double loss = 0.0;  // mean total loss over feasible utterances
  std::int64_t skipped = 0;
  EvalReport report;
};

// Dev loss under the plan plus greedy-decode WER / F1. When a classifier is
// given and the final head is unpunctuated, punctuation comes from it.
DevMetrics evaluate_model(const AsrModel& model, const Dataset& data, const Vocab& vocab, const LabelPlan& plan,
                          const LossWeights& weights, const PunctClassifier* clf = nullptr,
                          const std::string& system = "");

struct EpochSummary {
  int epoch = 0;
  std::int64_t processed = 0;
  std::int64_t skipped = 0;
  std::int64_t rejected_steps = 0;
  double train_loss = 0.0;
  DevMetrics dev;
};

struct TrainResult {
  AsrModel best;
  AsrModel last;
  double best_dev_loss = 0.0;
  int best_epoch = -1;
  std::int64_t steps = 0;
  std::vector<EpochSummary> epochs;  // epochs run by this call
};

struct TrainOutputs {
  std::optional<std::filesystem::path> log;         // JSONL, one line per optimizer step
  std::optional<std::filesystem::path> checkpoint;  // best model
  std::optional<std::filesystem::path> state;       // resumable trainer state, rewritten every epoch
  bool resume = false;                              // continue from `state` if it exists
};

// Epoch loop: seeded shuffle, length bucketing, augmentation, Adam, per-epoch
// dev metrics, best-dev checkpoint and early stopping. Utterances whose CTC
// target cannot fit their frames are skipped and counted; a batch with no
// feasible utterance aborts. The model configuration's head sizes must match
// the plan.
TrainResult train(const Dataset& train_set, const Dataset& dev_set, const Vocab& vocab,
                  const ModelConfig& model_cfg, const TrainConfig& cfg, const TrainOutputs& outputs = {});

// Model config with both head sizes set for the plan.
ModelConfig model_config_for_plan(ModelConfig base, const LabelPlan& plan, const Vocab& vocab);

struct AblationCell {
  LabelPlan plan;
  std::uint64_t seed = 0;
  EvalReport dev;
  EvalReport test;
  std::size_t params = 0;
};

struct AblationTable {
  std::vector<LabelPlan> plans;
  std::vector<std::uint64_t> seeds;
  std::vector<AblationCell> cells;  // plan-major

  const AblationCell& at(const LabelPlan& plan, std::uint64_t seed) const;
};

using AblationProgress = std::function<void(const AblationCell&)>;

// One model per plan and seed. Rows whose final head is unpunctuated get
// their punctuation from the classifier before scoring. When out_dir is given,
// each run writes its checkpoint and log under out_dir/<plan>-s<seed>/.
AblationTable run_ablation(const Dataset& train_set, const Dataset& dev_set, const Dataset& test_set,
                           const Vocab& vocab, const ModelConfig& base_model, const TrainConfig& base_cfg,
                           const std::vector<LabelPlan>& plans, const std::vector<std::uint64_t>& seeds,
                           const PunctClassifier* clf,
                           const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                           const AblationProgress& progress = {});

// last, middle, then wer / f1 per seed (percent, test split), their means and
// a note column.
std::string ablation_tsv(const AblationTable& table);

}  // namespace punctasr
