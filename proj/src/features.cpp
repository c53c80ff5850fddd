#include "punctasr/features.hpp"

#include <bit>
#include <cmath>
#include <fstream>

#include "punctasr/rng.hpp"

namespace punctasr {

static_assert(std::endian::native == std::endian::little, "feature files assume a little-endian host");

namespace {

double to_float_precision(double v) { return static_cast<double>(static_cast<float>(v)); }

int draw(const FrameRange& r, std::mt19937_64& rng) {
  return std::uniform_int_distribution<int>(r.lo, r.hi)(rng);
}

}  // namespace

void SynthConfig::validate() const {
  if (dim < 2) throw InvalidInput("synth: dim must be >= 2 (one cue channel plus content)");
  const auto check = [](const FrameRange& r, const char* what) {
    if (r.lo < 1 || r.hi < r.lo) throw InvalidInput(std::string("synth: empty range for ") + what);
  };
  check(frames_per_word, "frames_per_word");
  for (const auto& r : pause_frames) check(r, "pause_frames");
  if (!(noise_std >= 0.0) || !(pause_energy >= 0.0)) throw InvalidInput("synth: noise levels must be >= 0");
  if (!(prototype_scale > 0.0)) throw InvalidInput("synth: prototype_scale must be > 0");
}

Synthesizer::Synthesizer(const Vocab& vocab, SynthConfig config) : vocab_(vocab), config_(config) {
  config_.validate();
  const int d = config_.dim;
  prototypes_ = Matrix::Zero(vocab.size(), d);
  std::mt19937_64 rng(mix_seed(config_.rng_seed, {0}));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (TokenId id = 1; id < vocab.size(); ++id) {
    if (vocab.is_punct(id)) continue;
    Eigen::RowVectorXd v(d - 1);
    for (int c = 0; c < d - 1; ++c) v[c] = normal(rng);
    v *= config_.prototype_scale / v.norm();
    for (int c = 0; c < d - 1; ++c) prototypes_(id, c) = to_float_precision(v[c]);
  }
}

std::vector<int> Synthesizer::token_frames(const TokenSeq& y_pnct, std::uint64_t utterance_seed) const {
  std::mt19937_64 rng(utterance_seed);
  std::vector<int> counts;
  counts.reserve(y_pnct.size());
  for (TokenId id : y_pnct) {
    const auto cls = vocab_.punct_class(id);
    if (id == kBlankId) throw InvalidInput("synthesize: blank in transcript");
    counts.push_back(cls ? draw(config_.pause_frames[static_cast<int>(*cls) - 1], rng)
                         : draw(config_.frames_per_word, rng));
  }
  return counts;
}

FeatureSequence Synthesizer::synthesize(const TokenSeq& y_pnct, std::uint64_t utterance_seed) const {
  if (y_pnct.empty()) throw InvalidInput("synthesize: empty transcript");
  const std::vector<int> counts = token_frames(y_pnct, utterance_seed);
  int total = 0;
  for (int c : counts) total += c;

  // counts consumed the head of this stream; noise uses a sibling stream
  std::mt19937_64 rng(mix_seed(utterance_seed, {1}));
  std::normal_distribution<double> normal(0.0, 1.0);
  const int d = config_.dim;
  const int cue = cue_channel();

  FeatureSequence x{Matrix::Zero(total, d)};
  int row = 0;
  for (std::size_t k = 0; k < y_pnct.size(); ++k) {
    const auto cls = vocab_.punct_class(y_pnct[k]);
    for (int f = 0; f < counts[k]; ++f, ++row) {
      if (cls) {
        for (int c = 0; c < d; ++c) x.frames(row, c) = config_.pause_energy * normal(rng);
        x.frames(row, cue) = config_.cue_levels[static_cast<int>(*cls) - 1] + config_.noise_std * normal(rng);
      } else {
        for (int c = 0; c < d; ++c) {
          x.frames(row, c) = prototypes_(y_pnct[k], c) + config_.noise_std * normal(rng);
        }
      }
    }
  }
  x.frames = x.frames.unaryExpr(&to_float_precision);
  return x;
}

FeatureSequence mask_augment(const FeatureSequence& x, const MaskSpec& spec, std::mt19937_64& rng) {
  FeatureSequence out = x;
  const int t_len = x.frame_count();
  const int d = x.dim();
  const auto mask_width = [&](int extent) {
    const int cap = std::min(spec.max_width, extent - 1);
    return cap <= 0 ? 0 : std::uniform_int_distribution<int>(0, cap)(rng);
  };
  for (int m = 0; m < spec.time_masks; ++m) {
    const int w = mask_width(t_len);
    if (w == 0) continue;
    const int start = std::uniform_int_distribution<int>(0, t_len - w)(rng);
    out.frames.middleRows(start, w).setZero();
  }
  for (int m = 0; m < spec.freq_masks; ++m) {
    const int w = mask_width(d);
    if (w == 0) continue;
    const int start = std::uniform_int_distribution<int>(0, d - w)(rng);
    out.frames.middleCols(start, w).setZero();
  }
  return out;
}

FeatureNormalizer FeatureNormalizer::fit(std::span<const FeatureSequence> data) {
  if (data.empty()) throw InvalidInput("normalizer: no data");
  const int d = data.front().dim();
  Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(d);
  Eigen::RowVectorXd sq = Eigen::RowVectorXd::Zero(d);
  double n = 0.0;
  for (const auto& x : data) {
    if (x.dim() != d) throw InvalidInput("normalizer: inconsistent feature dims");
    sum += x.frames.colwise().sum();
    sq += x.frames.array().square().matrix().colwise().sum();
    n += x.frame_count();
  }
  FeatureNormalizer norm;
  norm.mean = sum / n;
  const Eigen::RowVectorXd var = (sq / n).array() - norm.mean.array().square();
  norm.stddev = var.array().max(1e-12).sqrt().matrix();
  return norm;
}

FeatureSequence FeatureNormalizer::apply(const FeatureSequence& x) const {
  if (x.dim() != mean.size()) throw InvalidInput("normalizer: dim mismatch");
  FeatureSequence out{x.frames};
  out.frames.rowwise() -= mean;
  out.frames.array().rowwise() /= stddev.array();
  return out;
}

void write_features(const std::filesystem::path& path, const FeatureSequence& x) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const std::uint32_t header[2] = {static_cast<std::uint32_t>(x.frame_count()),
                                   static_cast<std::uint32_t>(x.dim())};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  std::vector<float> buf(x.frames.size());
  for (Eigen::Index i = 0; i < x.frames.size(); ++i) buf[i] = static_cast<float>(x.frames.data()[i]);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

FeatureSequence read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::uint32_t header[2];
  if (!in.read(reinterpret_cast<char*>(header), sizeof(header))) {
    throw std::runtime_error("truncated feature header in " + path.string());
  }
  std::vector<float> buf(static_cast<std::size_t>(header[0]) * header[1]);
  if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)))) {
    throw std::runtime_error("truncated feature data in " + path.string());
  }
  FeatureSequence x{Matrix(header[0], header[1])};
  for (std::size_t i = 0; i < buf.size(); ++i) x.frames.data()[i] = buf[i];
  return x;
}

}  // namespace punctasr
