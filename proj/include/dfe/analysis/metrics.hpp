#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dfe/numcore/tensor.hpp"

namespace dfe::analysis {

struct RegressionMetrics {
  double rmse = 0.0;
  double ccc = 0.0;
};

/// RMSE and concordance correlation with population moments. When the CCC
/// denominator vanishes (both sequences constant and equal) CCC is 1; any
/// other zero-denominator case is 0. Needs equal lengths >= 2.
RegressionMetrics regression_metrics(std::span<const double> pred, std::span<const double> target);

struct ClassificationMetrics {
  double accuracy = 0.0;
  double balanced_accuracy = 0.0;  // mean recall over classes present in target
  double macro_f1 = 0.0;           // over classes present in target or pred; 0/0 scores 0
  double auc = 0.0;                // macro one-vs-rest; NaN without scores
};

/// `scores` (optional) is [N, C] with column c scoring `classes[c]`.
ClassificationMetrics classification_metrics(std::span<const std::int64_t> pred, std::span<const std::int64_t> target,
                                             const nc::Tensor* scores = nullptr, std::span<const std::int64_t> classes = {});

/// Area under the ROC curve of `score` for `positive`, ties counted half.
/// NaN when one side is empty.
double roc_auc(std::span<const double> score, const std::vector<bool>& positive);

/// Ridge regression with an unpenalized intercept, closed form.
struct RidgeModel {
  std::vector<double> w;
  double b = 0.0;
  double predict(std::span<const double> x) const;
};
RidgeModel fit_ridge(const nc::Tensor& x, std::span<const double> y, double lambda = 1.0);
/// Leave-one-out predictions of fit_ridge.
std::vector<double> ridge_loocv(const nc::Tensor& x, std::span<const double> y, double lambda = 1.0);

}  // namespace dfe::analysis
