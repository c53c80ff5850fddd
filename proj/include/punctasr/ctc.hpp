#pragma once

#include <cstdint>
#include <limits>

#include "punctasr/types.hpp"

namespace punctasr {

// T x V matrix of per-frame log-probabilities, blank at column 0.
using LogProbLattice = Matrix;

// Alignment path: one token id (blank allowed) per frame.
using AlignmentPath = TokenSeq;

inline constexpr double kInfeasibleLoss = std::numeric_limits<double>::infinity();

// Throws InvalidInput unless every row log-sum-exps to 0 within tol and no
// entry exceeds tol.
void check_lattice(const LogProbLattice& logp, double tol = 1e-6);

double log_sum_exp(double a, double b);

// Merges runs of identical ids, then deletes blanks: [a, blank, a] -> [a, a].
TokenSeq collapse(const AlignmentPath& path);

// Minimum number of frames an alignment of y needs (one per label plus one
// separating blank per adjacent repeat).
int ctc_min_frames(const TokenSeq& y);

struct CtcResult {
  double loss = kInfeasibleLoss;  // -log P(y | lattice)
  bool feasible = false;
};

// Negative log-likelihood of y summed over every alignment, computed with the
// augmented-label forward recursion in log space. An infeasible target gives
// {+inf, false}.
CtcResult ctc_loss(const LogProbLattice& logp, const TokenSeq& y);

// d loss / d logp. Entry (t, v) is minus the posterior occupancy of label v at
// frame t, so each row sums to -1. Throws InvalidInput when y is infeasible.
Matrix ctc_grad(const LogProbLattice& logp, const TokenSeq& y);

struct CtcLossGrad {
  CtcResult result;
  Matrix grad;  // empty when infeasible
};

CtcLossGrad ctc_loss_and_grad(const LogProbLattice& logp, const TokenSeq& y);

// Test oracle: enumerates every length-T path. Throws std::length_error when
// V^T exceeds max_paths.
double brute_force_ctc(const LogProbLattice& logp, const TokenSeq& y, std::uint64_t max_paths = 1u << 22);

// Per-frame argmax (ties to the lowest id) followed by collapse.
TokenSeq greedy_decode(const LogProbLattice& logp);

// Prefix beam search over (ends-in-blank, ends-in-label) prefix scores. Ties
// in pruning and in the final choice go to the lexicographically smaller
// prefix. Width 1 is not guaranteed to match greedy_decode.
TokenSeq prefix_beam_decode(const LogProbLattice& logp, int beam_width);

}  // namespace punctasr
