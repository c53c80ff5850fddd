#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "punctasr/classifier.hpp"
#include "punctasr/features.hpp"
#include "punctasr/trainer.hpp"

namespace punctasr {

struct SplitSizes {
  int train = 2000;
  int dev = 200;
  int test = 200;

  int total() const { return train + dev + test; }
};

// Everything one experiment needs. Head sizes in `model` and `cascade_model`
// are filled in per plan; the corpus size comes from `splits`.
struct ExperimentConfig {
  CorpusConfig corpus;
  SynthConfig synth;
  SplitSizes splits;
  ModelConfig model;          // end-to-end models
  ModelConfig cascade_model;  // ASR half of the cascade
  ClassifierConfig classifier;
  TrainConfig train;
  ClassifierTrainConfig classifier_train;
  std::vector<LabelPlan> plans = ablation_plans();
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  LabelPlan cascade_plan{LastLabels::kUnpnct, MiddleLabels::kNone};

  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);
// Strict: unknown keys anywhere are rejected and the result is validated.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

struct ExperimentData {
  Vocab vocab;
  Dataset train;
  Dataset dev;
  Dataset test;
  FeatureNormalizer normalizer;
};

// Generates the corpus, splits it in order (train, dev, test), synthesizes
// features with one derived seed per utterance and normalizes every split
// with statistics fitted on train.
ExperimentData build_data(const ExperimentConfig& cfg);

// Layout under dir: manifest.json, {train,dev,test}.txt,
// feats/{split}_NNNNN.feat (raw, before normalization). Returns the manifest
// hash.
std::string write_data(const std::filesystem::path& dir, const ExperimentConfig& cfg);

// Reads a directory written by write_data, checks the recorded hashes and
// returns normalized features.
ExperimentData load_data(const std::filesystem::path& dir);

const Dataset& split_by_name(const ExperimentData& data, const std::string& name);

}  // namespace punctasr
