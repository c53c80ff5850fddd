#include "punctasr/loss.hpp"

namespace punctasr {

namespace {

TokenSeq words_in_punctuated_view(const TokenSeq& y_unpnct, const Vocab& vocab) {
  TokenSeq out;
  out.reserve(y_unpnct.size());
  for (TokenId id : y_unpnct) out.push_back(vocab.to_punctuated(id));
  return out;
}

}  // namespace

void LabelPlan::validate() const {
  if (last == LastLabels::kBoth && middle != MiddleLabels::kNone) {
    throw InvalidInput("label plan: multitask last layer only combines with no middle labels");
  }
}

std::string LabelPlan::name() const {
  const char* l = last == LastLabels::kPnct ? "pnct" : last == LastLabels::kUnpnct ? "unpnct" : "both";
  const char* m = middle == MiddleLabels::kNone ? "none" : middle == MiddleLabels::kPnct ? "pnct" : "unpnct";
  return std::string(l) + "-" + m;
}

const std::vector<LabelPlan>& ablation_plans() {
  static const std::vector<LabelPlan> plans = {
      {LastLabels::kPnct, MiddleLabels::kNone},   {LastLabels::kUnpnct, MiddleLabels::kNone},
      {LastLabels::kUnpnct, MiddleLabels::kUnpnct}, {LastLabels::kPnct, MiddleLabels::kPnct},
      {LastLabels::kPnct, MiddleLabels::kUnpnct}, {LastLabels::kBoth, MiddleLabels::kNone},
  };
  return plans;
}

LabelPlan LabelPlan::parse(const std::string& name) {
  for (const auto& p : ablation_plans()) {
    if (p.name() == name) return p;
  }
  std::string valid;
  for (const auto& p : ablation_plans()) valid += (valid.empty() ? "" : ", ") + p.name();
  throw InvalidInput("unknown plan '" + name + "'; valid plans: " + valid);
}

void LossWeights::validate() const {
  if (!(ctc >= 0.0 && ctc <= 1.0) || !(inter >= 0.0 && inter <= 1.0)) {
    throw InvalidInput("loss weights must lie in [0, 1]");
  }
}

std::pair<int, int> head_vocab_sizes(const LabelPlan& plan, const Vocab& vocab) {
  const int pnct = vocab.size();
  const int unpnct = vocab.unpunctuated_size();
  const int final_size = plan.last == LastLabels::kUnpnct ? unpnct : pnct;
  const int mid_size = plan.middle == MiddleLabels::kPnct ? pnct : unpnct;
  return {final_size, mid_size};
}

LossResult total_loss(const ForwardOutputs& out, const TranscriptPair& pair, const Vocab& vocab,
                      const LabelPlan& plan, const LossWeights& w) {
  plan.validate();
  const auto [final_size, mid_size] = head_vocab_sizes(plan, vocab);
  if (out.final_lattice.cols() != final_size || out.mid_lattice.cols() != mid_size) {
    throw InvalidInput("total_loss: head vocabularies do not match plan " + plan.name());
  }

  LossResult r;
  r.grad_final = Matrix::Zero(out.final_lattice.rows(), out.final_lattice.cols());

  std::vector<TokenSeq> final_targets;
  switch (plan.last) {
    case LastLabels::kPnct:
      final_targets = {pair.y_pnct};
      break;
    case LastLabels::kUnpnct:
      final_targets = {pair.y_unpnct};
      break;
    case LastLabels::kBoth:
      final_targets = {pair.y_pnct, words_in_punctuated_view(pair.y_unpnct, vocab)};
      break;
  }
  const double share = 1.0 / static_cast<double>(final_targets.size());
  for (const auto& target : final_targets) {
    CtcLossGrad lg = ctc_loss_and_grad(out.final_lattice, target);
    if (!lg.result.feasible) {
      r = LossResult{};
      r.feasible = false;
      return r;
    }
    r.ctc += share * lg.result.loss;
    r.grad_final += (w.ctc * share) * lg.grad;
  }

  if (plan.middle != MiddleLabels::kNone) {
    const TokenSeq& target = plan.middle == MiddleLabels::kPnct ? pair.y_pnct : pair.y_unpnct;
    CtcLossGrad lg = ctc_loss_and_grad(out.mid_lattice, target);
    if (!lg.result.feasible) {
      r = LossResult{};
      r.feasible = false;
      return r;
    }
    r.inter = lg.result.loss;
    r.grad_mid = w.inter * lg.grad;
  }
  r.total = w.ctc * r.ctc + (plan.middle != MiddleLabels::kNone ? w.inter * r.inter : 0.0);
  return r;
}

}  // namespace punctasr
