#pragma once

#include <map>
#include <string>

#include "dgenn/config.hpp"
#include "dgenn/data.hpp"
#include "dgenn/graphs.hpp"

namespace dgenn {

/// Tiny hand-built dataset: 4 users, 4 items, a 3-value user attribute
/// field, behaviors, and a collaborative graph holding UU, VV and UV edges.
/// With `full`, an item attribute field and a context field are added.
struct GradCheckFixture {
  Dataset dataset;
  GraphSet graphs;
  ModelConfig config;
};

GradCheckFixture builtin_fixture(AggregatorKind kind, PoolMode pool = PoolMode::Sum, bool full = false);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;                         // parameter path of the worst entry
  std::map<std::string, double> per_class;   // e.g. "gcn:attr.w1" -> max error
  std::size_t checked = 0;
  std::size_t kink_crossings = 0;  // entries whose +-eps probes changed a rectifier sign
};

/// Central differences in float64 over every scalar parameter. The error of
/// one entry is |a - n| / max(|a|, |n|, 1e-6). An entry whose probes land on
/// a different linear piece of a rectifier is counted in `kink_crossings`
/// instead, since the central difference is not a derivative there.
GradCheckResult gradient_check(const GradCheckFixture& fixture, double eps = 1e-4, std::uint64_t seed = 5);

}  // namespace dgenn
