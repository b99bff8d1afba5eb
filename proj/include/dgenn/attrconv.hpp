#pragma once

#include <algorithm>
#include <span>
#include <vector>

#include "dgenn/aggregators.hpp"
#include "dgenn/data.hpp"
#include "dgenn/graphs.hpp"

// Attribute graph convolution: propagate inside each attribute field
// separately, then integrate the per-field entity vectors.
namespace dgenn {

/// One (side, field) propagation job. The graph's local nodes are the
/// side's entities followed by the field's values, both contiguous ranges
/// of the global feature space.
template <typename Scalar>
struct FieldPlan {
  FieldRole side = FieldRole::UserAttr;
  std::size_t field = 0;
  FeatureId entity_offset = 0;
  Index entity_count = 0;
  FeatureId value_offset = 0;
  Index value_count = 0;
  PropagationOperator<Scalar> op;
  int layers = 1;

  static FieldPlan from_graph(const FieldGraph& fg, const FeatureVocabulary& vocab, int layers) {
    FieldPlan p;
    p.side = fg.side;
    p.field = fg.field;
    p.entity_count = fg.entity_count;
    p.entity_offset = fg.entity_count == 0 ? 0 : fg.features.front();
    p.value_offset = vocab.field(fg.field).offset;
    p.value_count = vocab.field(fg.field).cardinality;
    p.op = PropagationOperator<Scalar>::from_graph(fg.graph);
    p.layers = layers;
    return p;
  }
};

template <typename Scalar>
Matrix<Scalar> gather_field_inputs(const FieldPlan<Scalar>& plan, const Matrix<Scalar>& table) {
  Matrix<Scalar> x0(plan.entity_count + plan.value_count, table.cols());
  x0.topRows(plan.entity_count) = table.middleRows(plan.entity_offset, plan.entity_count);
  x0.bottomRows(plan.value_count) = table.middleRows(plan.value_offset, plan.value_count);
  return x0;
}

/// Pooled per-node embeddings (entities first, then values) for one field.
template <typename Scalar>
PropagationTrace<Scalar> field_propagate(const FieldPlan<Scalar>& plan,
                                         const AggregatorParams<Scalar>& params,
                                         const Matrix<Scalar>& table, PoolMode mode) {
  return propagate(plan.op, gather_field_inputs(plan, table), params, plan.layers, mode);
}

/// z = sum_t e^(t), or the mean under PoolMode::Mean.
template <typename Scalar>
Vector<Scalar> integrate_fields(std::span<const Vector<Scalar>> per_field, PoolMode mode) {
  if (per_field.empty()) throw NumericError("integrate_fields: zero fields");
  return layer_pool(per_field, mode);
}

template <typename Scalar>
struct RefinementTrace {
  std::vector<PropagationTrace<Scalar>> fields;
  Matrix<Scalar> refined;  // Z: same layout as the embedding table
};

namespace detail {
template <typename Scalar>
void check_plans(std::span<const FieldPlan<Scalar>> plans,
                 std::span<const AggregatorParams<Scalar>> params, Index rows) {
  if (plans.size() != params.size()) throw DataError("refine: plan/parameter count mismatch");
  for (const auto& p : plans) {
    if (p.side != FieldRole::UserAttr && p.side != FieldRole::ItemAttr)
      throw DataError("refine: plan is not an attribute field");
    if (p.value_offset + p.value_count > rows || p.entity_offset + p.entity_count > rows)
      throw DataError("refine: plan/field mismatch with embedding table");
  }
}
}  // namespace detail

/// Refines user ids, item ids and attribute values; every other row
/// (context, and ids on a side without attribute fields) passes through.
template <typename Scalar>
RefinementTrace<Scalar> refine_all(std::span<const FieldPlan<Scalar>> plans,
                                   std::span<const AggregatorParams<Scalar>> params,
                                   const Matrix<Scalar>& table, PoolMode mode) {
  detail::check_plans(plans, params, table.rows());
  RefinementTrace<Scalar> t;
  t.refined = table;
  t.fields.reserve(plans.size());
  for (std::size_t k = 0; k < plans.size(); ++k)
    t.fields.push_back(field_propagate(plans[k], params[k], table, mode));

  for (FieldRole side : {FieldRole::UserAttr, FieldRole::ItemAttr}) {
    Index count = 0;
    for (std::size_t k = 0; k < plans.size(); ++k) {
      const auto& p = plans[k];
      if (p.side != side) continue;
      auto entities = t.refined.middleRows(p.entity_offset, p.entity_count);
      if (count == 0)
        entities = t.fields[k].pooled.topRows(p.entity_count);
      else
        entities += t.fields[k].pooled.topRows(p.entity_count);
      ++count;
      t.refined.middleRows(p.value_offset, p.value_count) = t.fields[k].pooled.bottomRows(p.value_count);
    }
    if (count > 1 && mode == PoolMode::Mean) {
      const auto& p = *std::find_if(plans.begin(), plans.end(),
                                    [side](const auto& q) { return q.side == side; });
      t.refined.middleRows(p.entity_offset, p.entity_count) /= static_cast<Scalar>(count);
    }
  }
  return t;
}

/// Back-propagates dL/dZ into dL/dE (returned) and the per-field weights.
template <typename Scalar>
Matrix<Scalar> refine_backward(std::span<const FieldPlan<Scalar>> plans,
                               std::span<const AggregatorParams<Scalar>> params,
                               const RefinementTrace<Scalar>& trace, PoolMode mode,
                               const Matrix<Scalar>& grad_refined,
                               std::span<AggregatorParams<Scalar>> grad_params) {
  Matrix<Scalar> grad_table = grad_refined;
  for (FieldRole side : {FieldRole::UserAttr, FieldRole::ItemAttr}) {
    std::vector<std::size_t> ks;
    for (std::size_t k = 0; k < plans.size(); ++k)
      if (plans[k].side == side) ks.push_back(k);
    if (ks.empty()) continue;
    const Scalar c = mode == PoolMode::Mean ? Scalar(1) / static_cast<Scalar>(ks.size()) : Scalar(1);
    const auto& first = plans[ks.front()];
    const Matrix<Scalar> g_entities = c * grad_refined.middleRows(first.entity_offset, first.entity_count);
    // Entity rows of Z are not a pass-through of E when fields exist.
    grad_table.middleRows(first.entity_offset, first.entity_count).setZero();
    for (auto k : ks) {
      const auto& p = plans[k];
      Matrix<Scalar> g_pooled(p.entity_count + p.value_count, grad_refined.cols());
      g_pooled.topRows(p.entity_count) = g_entities;
      g_pooled.bottomRows(p.value_count) = grad_refined.middleRows(p.value_offset, p.value_count);
      grad_table.middleRows(p.value_offset, p.value_count).setZero();
      const Matrix<Scalar> g_x0 = propagate_backward(
          p.op, trace.fields[k], params[k], mode, g_pooled, grad_params.empty() ? nullptr : &grad_params[k]);
      grad_table.middleRows(p.entity_offset, p.entity_count) += g_x0.topRows(p.entity_count);
      grad_table.middleRows(p.value_offset, p.value_count) += g_x0.bottomRows(p.value_count);
    }
  }
  return grad_table;
}

}  // namespace dgenn
