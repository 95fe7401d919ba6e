#include "dfe/numcore/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "dfe/numcore/rng.hpp"

namespace dfe::nc {
namespace {

double eval_loss(const LossBuilder& build) {
  Tape tape(false);
  return build(tape).value().item();
}

}  // namespace

GradCheckReport grad_check(const LossBuilder& build, std::span<Parameter* const> params, const GradCheckOptions& options) {
  GradCheckReport report;
  if (params.empty()) return report;

  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape(true);
    Var loss = build(tape);
    tape.backward(loss);
  }

  Rng rng(options.seed);
  const double h = options.step;
  for (Parameter* p : params) {
    std::vector<std::size_t> coords(p->value.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_param > 0 && coords.size() > options.max_coords_per_param) {
      rng.shuffle(coords);
      coords.resize(options.max_coords_per_param);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const double original = p->value[i];
      p->value[i] = original + h;
      const double up = eval_loss(build);
      p->value[i] = original - h;
      const double down = eval_loss(build);
      p->value[i] = original;

      const double numeric = (up - down) / (2.0 * h);
      const double analytic = p->grad[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic - numeric) / denom;
      ++report.coords_checked;
      if (rel > report.max_rel_error || report.worst_param.empty()) {
        report.max_rel_error = std::max(report.max_rel_error, rel);
        if (rel >= report.max_rel_error) {
          report.worst_param = p->name;
          report.worst_index = i;
          report.worst_analytic = analytic;
          report.worst_numeric = numeric;
        }
      }
    }
  }
  return report;
}

}  // namespace dfe::nc
