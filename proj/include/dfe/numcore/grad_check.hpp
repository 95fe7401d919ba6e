#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "dfe/numcore/tape.hpp"

namespace dfe::nc {

struct GradCheckOptions {
  double step = 1e-5;
  /// Coordinates sampled per parameter; 0 checks every coordinate.
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coords_checked = 0;
};

/// Builds a scalar loss on the given tape from the parameters' current values.
using LossBuilder = std::function<Var(Tape&)>;

/// Compares reverse-mode gradients against central differences.
///
/// Relative error per coordinate is |a - fd| / max(|a|, |fd|, 1e-8). The
/// builder must be deterministic. Overwrites `grad` of every parameter.
GradCheckReport grad_check(const LossBuilder& build, std::span<Parameter* const> params, const GradCheckOptions& options = {});

}  // namespace dfe::nc
