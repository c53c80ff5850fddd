#include "punctasr/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "punctasr/vocab.hpp"

namespace punctasr {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp3(double a, double b, double c) {
  const double m = std::max({a, b, c});
  if (m == kNegInf) return kNegInf;
  return m + std::log(std::exp(a - m) + std::exp(b - m) + std::exp(c - m));
}

void check_targets(const LogProbLattice& logp, const TokenSeq& y) {
  if (logp.rows() < 1) throw InvalidInput("ctc: lattice has no frames");
  for (TokenId id : y) {
    if (id == kBlankId) throw InvalidInput("ctc: target contains blank");
    if (id < 0 || id >= logp.cols()) throw InvalidInput("ctc: target id out of range " + std::to_string(id));
  }
}

TokenSeq extend_with_blanks(const TokenSeq& y) {
  TokenSeq ext(2 * y.size() + 1, kBlankId);
  for (std::size_t i = 0; i < y.size(); ++i) ext[2 * i + 1] = y[i];
  return ext;
}

bool can_skip(const TokenSeq& ext, Eigen::Index s) {
  return s >= 2 && ext[s] != kBlankId && ext[s] != ext[s - 2];
}

// log alpha(t, s), emission at t included.
Matrix forward_table(const LogProbLattice& logp, const TokenSeq& ext) {
  const Eigen::Index frames = logp.rows();
  const Eigen::Index states = static_cast<Eigen::Index>(ext.size());
  Matrix alpha = Matrix::Constant(frames, states, kNegInf);
  alpha(0, 0) = logp(0, ext[0]);
  if (states > 1) alpha(0, 1) = logp(0, ext[1]);
  for (Eigen::Index t = 1; t < frames; ++t) {
    for (Eigen::Index s = 0; s < states; ++s) {
      const double stay = alpha(t - 1, s);
      const double step = s >= 1 ? alpha(t - 1, s - 1) : kNegInf;
      const double skip = can_skip(ext, s) ? alpha(t - 1, s - 2) : kNegInf;
      const double prev = log_sum_exp3(stay, step, skip);
      if (prev != kNegInf) alpha(t, s) = prev + logp(t, ext[s]);
    }
  }
  return alpha;
}

// log beta(t, s), emission at t included.
Matrix backward_table(const LogProbLattice& logp, const TokenSeq& ext) {
  const Eigen::Index frames = logp.rows();
  const Eigen::Index states = static_cast<Eigen::Index>(ext.size());
  Matrix beta = Matrix::Constant(frames, states, kNegInf);
  beta(frames - 1, states - 1) = logp(frames - 1, ext[states - 1]);
  if (states > 1) beta(frames - 1, states - 2) = logp(frames - 1, ext[states - 2]);
  for (Eigen::Index t = frames - 2; t >= 0; --t) {
    for (Eigen::Index s = 0; s < states; ++s) {
      const double stay = beta(t + 1, s);
      const double step = s + 1 < states ? beta(t + 1, s + 1) : kNegInf;
      const double skip = s + 2 < states && can_skip(ext, s + 2) ? beta(t + 1, s + 2) : kNegInf;
      const double next = log_sum_exp3(stay, step, skip);
      if (next != kNegInf) beta(t, s) = next + logp(t, ext[s]);
    }
  }
  return beta;
}

double total_log_prob(const Matrix& alpha) {
  const Eigen::Index last = alpha.rows() - 1;
  const Eigen::Index states = alpha.cols();
  return states > 1 ? log_sum_exp(alpha(last, states - 1), alpha(last, states - 2)) : alpha(last, 0);
}

}  // namespace

double log_sum_exp(double a, double b) {
  const double m = std::max(a, b);
  if (m == kNegInf) return kNegInf;
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

void check_lattice(const LogProbLattice& logp, double tol) {
  for (Eigen::Index t = 0; t < logp.rows(); ++t) {
    double acc = kNegInf;
    for (Eigen::Index v = 0; v < logp.cols(); ++v) {
      if (!(logp(t, v) <= tol)) throw InvalidInput("lattice entry above zero at frame " + std::to_string(t));
      acc = log_sum_exp(acc, logp(t, v));
    }
    if (!(std::abs(acc) <= tol)) throw InvalidInput("lattice row not normalized at frame " + std::to_string(t));
  }
}

TokenSeq collapse(const AlignmentPath& path) {
  TokenSeq out;
  TokenId prev = -1;
  for (TokenId id : path) {
    if (id != prev && id != kBlankId) out.push_back(id);
    prev = id;
  }
  return out;
}

int ctc_min_frames(const TokenSeq& y) {
  int frames = static_cast<int>(y.size());
  for (std::size_t i = 1; i < y.size(); ++i) {
    if (y[i] == y[i - 1]) ++frames;
  }
  return frames;
}

CtcResult ctc_loss(const LogProbLattice& logp, const TokenSeq& y) {
  check_targets(logp, y);
  if (logp.rows() < ctc_min_frames(y)) return {};
  const double log_p = total_log_prob(forward_table(logp, extend_with_blanks(y)));
  if (log_p == kNegInf) return {};
  return {-log_p, true};
}

CtcLossGrad ctc_loss_and_grad(const LogProbLattice& logp, const TokenSeq& y) {
  check_targets(logp, y);
  CtcLossGrad out;
  if (logp.rows() < ctc_min_frames(y)) return out;
  const TokenSeq ext = extend_with_blanks(y);
  const Matrix alpha = forward_table(logp, ext);
  const double log_p = total_log_prob(alpha);
  if (log_p == kNegInf) return out;
  const Matrix beta = backward_table(logp, ext);

  // occupancy(t, v) = sum_{s: ext[s] = v} alpha(t, s) beta(t, s) / p(t, v) / P
  Matrix log_occ = Matrix::Constant(logp.rows(), logp.cols(), kNegInf);
  for (Eigen::Index t = 0; t < logp.rows(); ++t) {
    for (Eigen::Index s = 0; s < static_cast<Eigen::Index>(ext.size()); ++s) {
      const double ab = alpha(t, s) + beta(t, s);
      if (ab == kNegInf) continue;
      double& cell = log_occ(t, ext[s]);
      cell = log_sum_exp(cell, ab - logp(t, ext[s]));
    }
  }
  out.result = {-log_p, true};
  out.grad = -(log_occ.array() - log_p).exp().matrix();
  return out;
}

Matrix ctc_grad(const LogProbLattice& logp, const TokenSeq& y) {
  CtcLossGrad lg = ctc_loss_and_grad(logp, y);
  if (!lg.result.feasible) throw InvalidInput("ctc_grad: target is infeasible for this lattice");
  return std::move(lg.grad);
}

double brute_force_ctc(const LogProbLattice& logp, const TokenSeq& y, std::uint64_t max_paths) {
  check_targets(logp, y);
  const auto frames = static_cast<std::size_t>(logp.rows());
  const auto vocab = static_cast<std::uint64_t>(logp.cols());
  std::uint64_t paths = 1;
  for (std::size_t t = 0; t < frames; ++t) {
    if (paths > max_paths / vocab) throw std::length_error("brute_force_ctc: V^T exceeds the enumeration budget");
    paths *= vocab;
  }

  AlignmentPath path(frames, 0);
  double acc = kNegInf;
  for (std::uint64_t n = 0; n < paths; ++n) {
    std::uint64_t code = n;
    for (std::size_t t = 0; t < frames; ++t) {
      path[t] = static_cast<TokenId>(code % vocab);
      code /= vocab;
    }
    if (collapse(path) != y) continue;
    double score = 0.0;
    for (std::size_t t = 0; t < frames; ++t) score += logp(static_cast<Eigen::Index>(t), path[t]);
    acc = log_sum_exp(acc, score);
  }
  return acc == kNegInf ? kInfeasibleLoss : -acc;
}

TokenSeq greedy_decode(const LogProbLattice& logp) {
  AlignmentPath path(logp.rows());
  for (Eigen::Index t = 0; t < logp.rows(); ++t) {
    Eigen::Index best = 0;
    for (Eigen::Index v = 1; v < logp.cols(); ++v) {
      if (logp(t, v) > logp(t, best)) best = v;
    }
    path[t] = static_cast<TokenId>(best);
  }
  return collapse(path);
}

TokenSeq prefix_beam_decode(const LogProbLattice& logp, int beam_width) {
  if (beam_width < 1) throw InvalidInput("prefix_beam_decode: beam_width must be >= 1");
  struct Score {
    double blank = kNegInf;  // paths ending in blank
    double label = kNegInf;  // paths ending in the prefix's last label
    double total() const { return log_sum_exp(blank, label); }
  };
  using Beam = std::map<TokenSeq, Score>;

  const auto prune = [beam_width](const Beam& candidates) {
    std::vector<const Beam::value_type*> order;
    order.reserve(candidates.size());
    for (const auto& entry : candidates) order.push_back(&entry);
    // map order is lexicographic, so stable_sort keeps the smaller prefix first on ties
    std::stable_sort(order.begin(), order.end(),
                     [](const auto* a, const auto* b) { return a->second.total() > b->second.total(); });
    Beam kept;
    for (std::size_t i = 0; i < order.size() && i < static_cast<std::size_t>(beam_width); ++i) {
      kept.insert(*order[i]);
    }
    return kept;
  };

  Beam beam;
  beam[{}] = Score{0.0, kNegInf};
  for (Eigen::Index t = 0; t < logp.rows(); ++t) {
    Beam next;
    for (const auto& [prefix, score] : beam) {
      Score& same = next[prefix];
      same.blank = log_sum_exp(same.blank, score.total() + logp(t, kBlankId));
      if (!prefix.empty()) {
        // repeated last label without an intervening blank stays collapsed
        same.label = log_sum_exp(same.label, score.label + logp(t, prefix.back()));
      }
      for (Eigen::Index v = 1; v < logp.cols(); ++v) {
        const auto label = static_cast<TokenId>(v);
        TokenSeq extended = prefix;
        extended.push_back(label);
        Score& grown = next[extended];
        const double from = !prefix.empty() && prefix.back() == label ? score.blank : score.total();
        grown.label = log_sum_exp(grown.label, from + logp(t, v));
      }
    }
    beam = prune(next);
  }

  const TokenSeq* best = nullptr;
  double best_score = kNegInf;
  for (const auto& [prefix, score] : beam) {
    if (best == nullptr || score.total() > best_score) {
      best = &prefix;
      best_score = score.total();
    }
  }
  return *best;
}

}  // namespace punctasr
