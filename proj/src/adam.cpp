#include "punctasr/adam.hpp"

#include <cmath>

#include "punctasr/vocab.hpp"

namespace punctasr {

void AdamHyper::validate() const {
  if (!(lr > 0.0)) throw InvalidInput("adam: lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw InvalidInput("adam: betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw InvalidInput("adam: eps must be > 0");
  if (warmup_steps < 0) throw InvalidInput("adam: warmup_steps must be >= 0");
}

double AdamHyper::rate_at(std::int64_t step) const {
  if (warmup_steps <= 0 || step >= warmup_steps) return lr;
  return lr * static_cast<double>(step) / warmup_steps;
}

bool adam_step(std::span<Matrix* const> params, std::span<const Matrix* const> grads, AdamState& state,
               const AdamHyper& hyper) {
  if (params.size() != grads.size()) throw InvalidInput("adam: params/grads count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->rows() != grads[i]->rows() || params[i]->cols() != grads[i]->cols()) {
      throw InvalidInput("adam: shape mismatch at tensor " + std::to_string(i));
    }
    if (!grads[i]->allFinite()) return false;
  }
  if (state.m.empty()) {
    for (const Matrix* p : params) {
      state.m.push_back(Matrix::Zero(p->rows(), p->cols()));
      state.v.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  if (state.m.size() != params.size()) throw InvalidInput("adam: state does not match params");

  ++state.step;
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  const double rate = hyper.rate_at(state.step);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& g = *grads[i];
    state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
    state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g.cwiseProduct(g);
    params[i]->array() -=
        rate * (state.m[i].array() / c1) / ((state.v[i].array() / c2).sqrt() + hyper.eps);
  }
  return true;
}

}  // namespace punctasr
