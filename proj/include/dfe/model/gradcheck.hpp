#pragma once

#include <cstdint>

#include "dfe/model/hyperparams.hpp"
#include "dfe/numcore/grad_check.hpp"

namespace dfe::model {

struct ModelGradCheck {
  nc::GradCheckReport total;      // the four-term loss
  nc::GradCheckReport objective;  // total plus the codebook term
  double max_rel_error() const noexcept { return total.max_rel_error > objective.max_rel_error ? total.max_rel_error : objective.max_rel_error; }
};

/// Finite-difference check of a freshly built model at a random point.
/// Every weight is drawn from N(0, sd) (layer-norm gains around 1) so that no
/// gradient is trivially zero; token choices are frozen at the base point.
ModelGradCheck check_model_gradients(const Hyperparams& hp, std::uint64_t seed, std::size_t batch = 3, double sd = 0.4);

}  // namespace dfe::model
