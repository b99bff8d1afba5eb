#pragma once

#include <array>

#include "dgenn/aggregators.hpp"
#include "dgenn/graphs.hpp"

// Collaborative graph convolution with the two-stage schedule: stage 0
// propagates over user-user and item-item edges, stage 1 over user-item
// edges seeded with the pooled stage-0 output.
namespace dgenn {

struct StageSpec {
  EdgeMask mask = kWithinMask;
  int layers = 1;
  bool enabled = true;
};

template <typename Scalar>
struct CollabPlan {
  std::array<StageSpec, 2> stages{StageSpec{kWithinMask, 1, true}, StageSpec{kAcrossMask, 1, true}};
  std::array<PropagationOperator<Scalar>, 2> ops;
  Index users = 0;
  Index items = 0;  // item ids follow users in the global table

  static CollabPlan from_graph(const SparseGraph& cf, Index users, std::array<StageSpec, 2> stages) {
    CollabPlan p;
    p.stages = stages;
    p.users = users;
    p.items = static_cast<Index>(cf.node_count()) - users;
    for (std::size_t s = 0; s < 2; ++s)
      p.ops[s] = PropagationOperator<Scalar>::from_graph(cf.filtered(stages[s].mask));
    return p;
  }
};

/// Stage 0: rounds over UU and VV edges only; returns the pooled z-hat.
template <typename Scalar>
PropagationTrace<Scalar> within_propagate(const PropagationOperator<Scalar>& within_op,
                                          const Matrix<Scalar>& refined,
                                          const AggregatorParams<Scalar>& params, int layers,
                                          PoolMode mode) {
  return propagate(within_op, refined, params, layers, mode);
}

/// Stage 1: rounds over UV edges seeded with the stage-0 output; layer 0 is
/// part of the pooled p-hat.
template <typename Scalar>
PropagationTrace<Scalar> across_propagate(const PropagationOperator<Scalar>& across_op,
                                          const Matrix<Scalar>& stage0,
                                          const AggregatorParams<Scalar>& params, int layers,
                                          PoolMode mode) {
  return propagate(across_op, stage0, params, layers, mode);
}

template <typename Scalar>
struct EnhanceTrace {
  std::array<PropagationTrace<Scalar>, 2> stages;
  std::array<bool, 2> ran{false, false};
  Matrix<Scalar> enhanced;  // P: same layout as the embedding table
};

/// User and item rows of `refined` go through the enabled stages in order;
/// attribute and context rows are copied unchanged.
template <typename Scalar>
EnhanceTrace<Scalar> enhance(const CollabPlan<Scalar>& plan,
                             std::span<const AggregatorParams<Scalar>, 2> params,
                             const Matrix<Scalar>& refined, PoolMode mode) {
  EnhanceTrace<Scalar> t;
  const Index n = plan.users + plan.items;
  Matrix<Scalar> state = refined.topRows(n);
  for (std::size_t s = 0; s < 2; ++s) {
    if (!plan.stages[s].enabled) continue;
    t.stages[s] = propagate(plan.ops[s], state, params[s], plan.stages[s].layers, mode);
    t.ran[s] = true;
    state = t.stages[s].pooled;
  }
  t.enhanced = refined;
  t.enhanced.topRows(n) = state;
  return t;
}

template <typename Scalar>
Matrix<Scalar> enhance_backward(const CollabPlan<Scalar>& plan,
                                std::span<const AggregatorParams<Scalar>, 2> params,
                                const EnhanceTrace<Scalar>& trace, PoolMode mode,
                                const Matrix<Scalar>& grad_enhanced,
                                std::span<AggregatorParams<Scalar>> grad_params) {
  const Index n = plan.users + plan.items;
  Matrix<Scalar> grad = grad_enhanced;
  Matrix<Scalar> g = grad_enhanced.topRows(n);
  for (int s = 1; s >= 0; --s) {
    const auto k = static_cast<std::size_t>(s);
    if (!trace.ran[k]) continue;
    g = propagate_backward(plan.ops[k], trace.stages[k], params[k], mode, g,
                           grad_params.empty() ? nullptr : &grad_params[k]);
  }
  grad.topRows(n) = g;
  return grad;
}

}  // namespace dgenn
