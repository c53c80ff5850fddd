#include <doctest.h>

#include <map>
#include <random>
#include <set>

#include "punctasr/ctc.hpp"
#include "punctasr/vocab.hpp"
#include "test_util.hpp"

using namespace punctasr;
using punctasr::testing::random_lattice;
using punctasr::testing::random_target;
using punctasr::testing::rel_err;

namespace {

// Every label sequence reachable from some length-T path, with its probability
// summed directly over paths.
std::map<TokenSeq, double> enumerate_outputs(const LogProbLattice& logp) {
  std::map<TokenSeq, double> out;
  const int frames = static_cast<int>(logp.rows());
  const int vocab = static_cast<int>(logp.cols());
  AlignmentPath path(frames, 0);
  while (true) {
    double lp = 0.0;
    for (int t = 0; t < frames; ++t) lp += logp(t, path[t]);
    out[collapse(path)] += std::exp(lp);
    int t = 0;
    while (t < frames && ++path[t] == vocab) path[t++] = 0;
    if (t == frames) break;
  }
  return out;
}

LogProbLattice one_hot_rows(const std::vector<int>& argmax, int vocab) {
  Matrix z = Matrix::Constant(static_cast<Eigen::Index>(argmax.size()), vocab, 0.0);
  for (std::size_t t = 0; t < argmax.size(); ++t) z(static_cast<Eigen::Index>(t), argmax[t]) = 3.0;
  return nn::log_softmax_rows(z);
}

}  // namespace

TEST_CASE("collapse") {
  CHECK(collapse({1, 1, 0, 2}) == TokenSeq{1, 2});
  CHECK(collapse({1, 0, 1}) == TokenSeq{1, 1});
  CHECK(collapse({0, 0}).empty());
  CHECK(collapse({}).empty());
  CHECK(ctc_min_frames({1, 1, 2, 2, 2}) == 8);
  CHECK(ctc_min_frames({}) == 0);
}

TEST_CASE("collapse is invariant under blank insertion and run duplication") {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> tok(0, 3);
  std::uniform_int_distribution<int> len(0, 8);
  for (int i = 0; i < 300; ++i) {
    AlignmentPath a(len(rng));
    for (auto& v : a) v = tok(rng);
    const TokenSeq y = collapse(a);
    for (std::size_t pos = 0; pos <= a.size(); ++pos) {
      AlignmentPath with_blank = a;
      // a blank is safe anywhere except between two equal labels would split a run
      with_blank.insert(with_blank.begin() + static_cast<std::ptrdiff_t>(pos), 0);
      const bool splits_run = pos > 0 && pos < a.size() && a[pos - 1] == a[pos] && a[pos] != 0;
      if (!splits_run) CHECK(collapse(with_blank) == y);
      if (pos < a.size()) {
        AlignmentPath dup = a;
        dup.insert(dup.begin() + static_cast<std::ptrdiff_t>(pos), a[pos]);
        CHECK(collapse(dup) == y);
      }
    }
  }
}

TEST_CASE("ctc_loss matches the path-enumeration oracle") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> frames(1, 6);
  std::uniform_int_distribution<int> vocab(2, 4);
  int infeasible = 0;
  for (int i = 0; i < 400; ++i) {
    const int t = frames(rng);
    const int v = vocab(rng);
    const LogProbLattice logp = random_lattice(t, v, rng);
    const TokenSeq y = random_target(3, v, rng);
    const CtcResult r = ctc_loss(logp, y);
    const double oracle = brute_force_ctc(logp, y);
    if (std::isinf(oracle)) {
      ++infeasible;
      CHECK(!r.feasible);
      CHECK(std::isinf(r.loss));
    } else {
      REQUIRE(r.feasible);
      CHECK(std::abs(r.loss - oracle) <= 1e-9);
    }
  }
  CHECK(infeasible > 0);
}

TEST_CASE("feasibility edge cases") {
  std::mt19937_64 rng(8);
  const LogProbLattice two = random_lattice(2, 3, rng);
  CHECK(std::isinf(brute_force_ctc(two, {1, 1})));
  CHECK(!ctc_loss(two, {1, 1}).feasible);
  CHECK(ctc_loss(two, {1, 2}).feasible);
  const LogProbLattice three = random_lattice(3, 3, rng);
  CHECK(ctc_loss(three, {1, 1}).feasible);
  // the empty target is the all-blank path
  CHECK(ctc_loss(three, {}).loss == doctest::Approx(-(three(0, 0) + three(1, 0) + three(2, 0))));
  CHECK_THROWS_AS(ctc_grad(two, {1, 1}), InvalidInput);
  CHECK_THROWS_AS(ctc_loss(two, {0}), InvalidInput);
  CHECK_THROWS_AS(ctc_loss(two, {3}), InvalidInput);
  CHECK_THROWS_AS(brute_force_ctc(random_lattice(12, 5, rng), {1}), std::length_error);
}

TEST_CASE("single frame fixtures") {
  LogProbLattice logp(1, 2);
  logp << std::log(0.3), std::log(0.7);
  CHECK(ctc_loss(logp, {1}).loss == doctest::Approx(-std::log(0.7)).epsilon(1e-15));
  const Matrix g = ctc_grad(logp, {1});
  CHECK(g(0, 1) == -1.0);
  CHECK(g(0, 0) == 0.0);
  const Matrix g0 = ctc_grad(logp, {});
  CHECK(g0(0, 0) == -1.0);
  CHECK(g0(0, 1) == 0.0);
}

TEST_CASE("the CTC distribution normalizes") {
  std::mt19937_64 rng(77);
  for (int rep = 0; rep < 5; ++rep) {
    const LogProbLattice logp = random_lattice(4, 3, rng);
    double total = 0.0;
    for (const auto& [y, p] : enumerate_outputs(logp)) {
      const CtcResult r = ctc_loss(logp, y);
      REQUIRE(r.feasible);
      CHECK(std::exp(-r.loss) == doctest::Approx(p).epsilon(1e-9));
      total += std::exp(-r.loss);
    }
    CHECK(std::abs(total - 1.0) <= 1e-9);
  }
}

TEST_CASE("ctc_grad matches central differences") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> frames(2, 7);
  std::uniform_int_distribution<int> vocab(2, 5);
  int checked = 0;
  while (checked < 100) {
    const int t = frames(rng);
    const int v = vocab(rng);
    LogProbLattice logp = random_lattice(t, v, rng);
    const TokenSeq y = random_target(std::min(t, 4), v, rng);
    if (!ctc_loss(logp, y).feasible) continue;
    ++checked;
    const Matrix g = ctc_grad(logp, y);
    double worst = 0.0;
    for (Eigen::Index i = 0; i < logp.size(); ++i) {
      const double fd =
          punctasr::testing::five_point_diff([&] { return ctc_loss(logp, y).loss; }, logp.data()[i], 1e-3);
      worst = std::max(worst, rel_err(g.data()[i], fd, 1e-6));
    }
    CHECK(worst <= 1e-6);
    // rows of the occupancy sum to one
    for (Eigen::Index r = 0; r < g.rows(); ++r) CHECK(g.row(r).sum() == doctest::Approx(-1.0).epsilon(1e-12));
  }
}

TEST_CASE("log-space stability with very small entries") {
  Matrix logp = Matrix::Constant(6, 4, -1e4);
  for (int t = 0; t < 6; ++t) logp(t, t % 4) = 0.0;
  for (const TokenSeq& y : {TokenSeq{1}, TokenSeq{1, 2, 3}, TokenSeq{2, 2}, TokenSeq{}}) {
    const CtcLossGrad lg = ctc_loss_and_grad(logp, y);
    if (!lg.result.feasible) continue;
    CHECK(std::isfinite(lg.result.loss));
    CHECK(lg.grad.allFinite());
  }
}

TEST_CASE("greedy_decode") {
  CHECK(greedy_decode(one_hot_rows({1, 1, 0, 2}, 3)) == TokenSeq{1, 2});
  CHECK(greedy_decode(Matrix::Constant(5, 4, -std::log(4.0))).empty());
  // ties go to the lowest id
  Matrix tie = Matrix::Constant(1, 3, -std::log(2.0));
  tie(0, 0) = -1e9;
  CHECK(greedy_decode(tie) == TokenSeq{1});
}

TEST_CASE("prefix beam with a wide beam finds the most probable labeling") {
  std::mt19937_64 rng(31);
  for (int rep = 0; rep < 80; ++rep) {
    const int t = 1 + rep % 5;
    const int v = 2 + rep % 2;
    const LogProbLattice logp = random_lattice(t, v, rng, 1.5);
    TokenSeq best;
    double best_p = -1.0;
    for (const auto& [y, p] : enumerate_outputs(logp)) {
      if (p > best_p + 1e-12) {
        best_p = p;
        best = y;
      }
    }
    const TokenSeq got = prefix_beam_decode(logp, 64);
    CHECK(std::exp(-ctc_loss(logp, got).loss) == doctest::Approx(best_p).epsilon(1e-9));
  }
}

TEST_CASE("prefix beam single frame") {
  Matrix z(1, 3);
  z << 0.0, 1.0, 0.5;
  const LogProbLattice logp = nn::log_softmax_rows(z);
  CHECK(prefix_beam_decode(logp, 4) == TokenSeq{1});
  z << 2.0, 1.0, 0.5;
  CHECK(prefix_beam_decode(nn::log_softmax_rows(z), 4).empty());
}

TEST_CASE("prefix beam beats greedy on most random lattices") {
  std::mt19937_64 rng(12);
  int ok = 0;
  const int n = 300;
  for (int i = 0; i < n; ++i) {
    const LogProbLattice logp = random_lattice(8, 5, rng);
    const double beam = ctc_loss(logp, prefix_beam_decode(logp, 4)).loss;
    const double greedy = ctc_loss(logp, greedy_decode(logp)).loss;
    ok += beam <= greedy + 1e-12;
  }
  CHECK(ok >= 0.95 * n);
}

TEST_CASE("prefix beam is deterministic and rejects a zero width") {
  std::mt19937_64 rng(1);
  const LogProbLattice logp = random_lattice(10, 6, rng);
  CHECK(prefix_beam_decode(logp, 3) == prefix_beam_decode(logp, 3));
  CHECK_THROWS_AS(prefix_beam_decode(logp, 0), InvalidInput);
}

TEST_CASE("check_lattice") {
  std::mt19937_64 rng(1);
  CHECK_NOTHROW(check_lattice(random_lattice(3, 4, rng)));
  CHECK_THROWS_AS(check_lattice(Matrix::Zero(2, 3)), InvalidInput);
}
