#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "dfe/analysis/metrics.hpp"
#include "dfe/numcore/tensor.hpp"

namespace dfe::analysis {

/// Multinomial logistic regression minimizing
///   (1/N) sum_i CE(softmax(W x~_i + b), y_i) + (lambda/2) ||W||^2
/// where x~ is x with every feature standardized to zero mean and unit
/// population variance over the training rows (constant features are only
/// centered)
/// by full-batch gradient descent with step 1/L, L the Lipschitz bound of the
/// gradient. The intercept is not penalized.
struct LogisticOptions {
  double lambda = 1.0;
  bool standardize = true;
  double tolerance = 1e-6;  // on the gradient norm
  std::size_t max_iterations = 10000;
  double init_scale = 0.0;  // > 0 draws the starting W, b from N(0, init_scale) with `seed`
  std::uint64_t seed = 0;
};

struct LogisticModel {
  std::vector<std::int64_t> classes;  // sorted; row c of w scores classes[c]
  nc::Tensor w;                       // [C, F], on standardized features
  std::vector<double> mean, scale;    // [F]; identity when not standardizing
  std::vector<double> b;              // [C]
  double loss = 0.0;
  double grad_norm = 0.0;
  std::size_t iterations = 0;

  std::vector<double> predict_proba(std::span<const double> x) const;
  std::int64_t predict(std::span<const double> x) const;
};

/// Needs >= 2 classes; throws ContractViolation otherwise.
LogisticModel fit_logistic(const nc::Tensor& x, std::span<const std::int64_t> labels, const LogisticOptions& options = {});

struct LoocvResult {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double auc = 0.0;                         // macro one-vs-rest
  std::vector<std::int64_t> predictions;    // held-out prediction per sample
  nc::Tensor probabilities;                 // [N, C], held-out
  LogisticModel model;                      // fitted on every sample
};

/// Leave-one-out evaluation. Needs >= 2 classes with >= 2 samples each.
LoocvResult logistic_loocv(const nc::Tensor& x, std::span<const std::int64_t> labels, const LogisticOptions& options = {});

struct RankedFeature {
  std::size_t index = 0;
  double score = -std::numeric_limits<double>::infinity();  // log|coef|; -inf for a zero coefficient
};

/// Per class, features sorted by descending log|coef| (stable, so ties keep
/// index order). `top_n` == 0 keeps all.
std::vector<std::vector<RankedFeature>> template_importance(const nc::Tensor& coefficients, std::size_t top_n = 0);

}  // namespace dfe::analysis
