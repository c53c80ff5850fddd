#pragma once

#include <string>
#include <vector>

#include "punctasr/corpus.hpp"
#include "punctasr/model.hpp"

namespace punctasr {

enum class LastLabels { kPnct, kUnpnct, kBoth };
enum class MiddleLabels { kNone, kPnct, kUnpnct };

// Which transcript view supervises the final head and the tap head.
struct LabelPlan {
  LastLabels last = LastLabels::kPnct;
  MiddleLabels middle = MiddleLabels::kUnpnct;

  void validate() const;
  bool end_to_end() const { return last != LastLabels::kUnpnct; }
  // "pnct-unpnct", "unpnct-none", "both-none", ...
  std::string name() const;
  static LabelPlan parse(const std::string& name);

  friend bool operator==(const LabelPlan&, const LabelPlan&) = default;
};

// The six label assignments compared in the ablation, in table order.
const std::vector<LabelPlan>& ablation_plans();
inline const LabelPlan kProposedPlan{LastLabels::kPnct, MiddleLabels::kUnpnct};

struct LossWeights {
  double ctc = 0.5;
  double inter = 0.5;

  void validate() const;
};

// Head output sizes a plan needs: {final, mid}. With no middle supervision the
// tap head still exists and is sized for the unpunctuated view.
std::pair<int, int> head_vocab_sizes(const LabelPlan& plan, const Vocab& vocab);

struct LossResult {
  double total = 0.0;
  double ctc = 0.0;    // final-head term before weighting
  double inter = 0.0;  // tap-head term before weighting, 0 without middle labels
  bool feasible = true;
  Matrix grad_final;
  Matrix grad_mid;  // empty when the plan has no middle labels
};

// total = w.ctc * L_final + w.inter * L_mid. L_final is the CTC loss of the
// plan's last-layer target; for kBoth it is the mean of the punctuated and
// unpunctuated CTC losses, both on the final head. An infeasible target makes
// the whole utterance infeasible (zero gradients).
LossResult total_loss(const ForwardOutputs& out, const TranscriptPair& pair, const Vocab& vocab,
                      const LabelPlan& plan, const LossWeights& w);

}  // namespace punctasr
