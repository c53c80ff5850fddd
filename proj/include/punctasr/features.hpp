#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "punctasr/types.hpp"
#include "punctasr/vocab.hpp"

namespace punctasr {

// Acoustic input: T frames by d channels.
struct FeatureSequence {
  Matrix frames;

  int frame_count() const { return static_cast<int>(frames.rows()); }
  int dim() const { return static_cast<int>(frames.cols()); }

  friend bool operator==(const FeatureSequence& a, const FeatureSequence& b) {
    return a.frames.rows() == b.frames.rows() && a.frames.cols() == b.frames.cols() && a.frames == b.frames;
  }
};

struct FrameRange {
  int lo = 1;
  int hi = 1;
};

struct SynthConfig {
  int dim = 16;
  FrameRange frames_per_word{4, 6};
  // Indexed by comma, period, question.
  std::array<FrameRange, 3> pause_frames{{{2, 3}, {3, 4}, {3, 4}}};
  std::array<double, 3> cue_levels = {1.0, 2.0, 3.0};
  double prototype_scale = 1.0;  // norm of each word prototype
  double pause_energy = 0.05;    // std of the non-cue channels during a pause
  double noise_std = 0.3;
  std::uint64_t rng_seed = 7;

  void validate() const;
};

// Renders punctuated transcripts as frame sequences. Word w emits a run of
// noisy copies of prototype(w); a mark emits a low-energy pause whose last
// channel carries the class cue. Word prototypes leave the cue channel at 0.
class Synthesizer {
 public:
  Synthesizer(const Vocab& vocab, SynthConfig config);

  const SynthConfig& config() const { return config_; }
  // Rows indexed by punctuated token id; blank and mark rows are zero.
  const Matrix& prototypes() const { return prototypes_; }
  int cue_channel() const { return config_.dim - 1; }

  FeatureSequence synthesize(const TokenSeq& y_pnct, std::uint64_t utterance_seed) const;

  // Frames contributed by each token, drawn exactly as synthesize would.
  std::vector<int> token_frames(const TokenSeq& y_pnct, std::uint64_t utterance_seed) const;

 private:
  Vocab vocab_;
  SynthConfig config_;
  Matrix prototypes_;
};

struct MaskSpec {
  int time_masks = 2;
  int freq_masks = 2;
  int max_width = 3;
};

// Returns a copy of x with random time spans and channel bands zeroed.
FeatureSequence mask_augment(const FeatureSequence& x, const MaskSpec& spec, std::mt19937_64& rng);

// Per-channel mean / std fitted on one split and applied to all.
struct FeatureNormalizer {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd stddev;

  static FeatureNormalizer fit(std::span<const FeatureSequence> data);
  FeatureSequence apply(const FeatureSequence& x) const;
};

// Flat container: u32 T, u32 d (little-endian), then T*d float32 row-major.
void write_features(const std::filesystem::path& path, const FeatureSequence& x);
FeatureSequence read_features(const std::filesystem::path& path);

}  // namespace punctasr
