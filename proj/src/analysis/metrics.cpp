#include "dfe/analysis/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <string>

#include "dfe/numcore/errors.hpp"

namespace dfe::analysis {

using nc::Tensor;

RegressionMetrics regression_metrics(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size() || pred.size() < 2)
    throw ContractViolation("regression_metrics: need two sequences of equal length >= 2");
  const double n = double(pred.size());
  double ma = 0.0, mb = 0.0, se = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    ma += pred[i];
    mb += target[i];
    se += (pred[i] - target[i]) * (pred[i] - target[i]);
  }
  ma /= n;
  mb /= n;
  double va = 0.0, vb = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    va += (pred[i] - ma) * (pred[i] - ma);
    vb += (target[i] - mb) * (target[i] - mb);
    cov += (pred[i] - ma) * (target[i] - mb);
  }
  va /= n;
  vb /= n;
  cov /= n;
  RegressionMetrics m;
  m.rmse = std::sqrt(se / n);
  const double denom = va + vb + (ma - mb) * (ma - mb);
  if (denom == 0.0)
    m.ccc = std::equal(pred.begin(), pred.end(), target.begin()) ? 1.0 : 0.0;
  else
    m.ccc = 2.0 * cov / denom;
  return m;
}

double roc_auc(std::span<const double> score, const std::vector<bool>& positive) {
  if (score.size() != positive.size()) throw ContractViolation("roc_auc: scores and labels differ in length");
  std::vector<std::size_t> order(score.size());
  std::iota(order.begin(), order.end(), std::size_t(0));
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });
  // Mann-Whitney with midranks
  double rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && score[order[j]] == score[order[i]]) ++j;
    const double mid = 0.5 * double(i + 1 + j);
    for (std::size_t t = i; t < j; ++t)
      if (positive[order[t]]) rank_sum += mid;
    i = j;
  }
  for (bool p : positive) pos += p;
  const std::size_t neg = positive.size() - pos;
  if (pos == 0 || neg == 0) return std::numeric_limits<double>::quiet_NaN();
  return (rank_sum - 0.5 * double(pos) * double(pos + 1)) / (double(pos) * double(neg));
}

ClassificationMetrics classification_metrics(std::span<const std::int64_t> pred, std::span<const std::int64_t> target, const Tensor* scores,
                                             std::span<const std::int64_t> classes) {
  if (pred.size() != target.size() || pred.empty()) throw ContractViolation("classification_metrics: need equal, nonempty label sequences");
  ClassificationMetrics m;
  std::set<std::int64_t> in_target(target.begin(), target.end());
  std::set<std::int64_t> all = in_target;
  all.insert(pred.begin(), pred.end());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == target[i];
  m.accuracy = double(correct) / double(pred.size());
  double recall_sum = 0.0, f1_sum = 0.0;
  for (std::int64_t c : all) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      tp += pred[i] == c && target[i] == c;
      fp += pred[i] == c && target[i] != c;
      fn += pred[i] != c && target[i] == c;
    }
    if (in_target.count(c)) recall_sum += double(tp) / double(tp + fn);
    f1_sum += tp ? 2.0 * double(tp) / double(2 * tp + fp + fn) : 0.0;
  }
  m.balanced_accuracy = recall_sum / double(in_target.size());
  m.macro_f1 = f1_sum / double(all.size());
  m.auc = std::numeric_limits<double>::quiet_NaN();
  if (scores) {
    if (scores->rank() != 2 || scores->rows() != pred.size() || scores->cols() != classes.size())
      throw ContractViolation("classification_metrics: scores must be [N, C] with one column per class");
    double auc_sum = 0.0;
    std::size_t counted = 0;
    std::vector<double> s(pred.size());
    std::vector<bool> pos(pred.size());
    for (std::size_t c = 0; c < classes.size(); ++c) {
      if (!in_target.count(classes[c])) continue;
      for (std::size_t i = 0; i < pred.size(); ++i) {
        s[i] = scores->at(i, c);
        pos[i] = target[i] == classes[c];
      }
      const double a = roc_auc(s, pos);
      if (std::isnan(a)) continue;
      auc_sum += a;
      ++counted;
    }
    if (counted) m.auc = auc_sum / double(counted);
  }
  return m;
}

double RidgeModel::predict(std::span<const double> x) const {
  if (x.size() != w.size()) throw ContractViolation("ridge: feature width mismatch");
  double s = b;
  for (std::size_t j = 0; j < w.size(); ++j) s += w[j] * x[j];
  return s;
}

RidgeModel fit_ridge(const Tensor& x, std::span<const double> y, double lambda) {
  if (x.rank() != 2 || x.rows() != y.size() || x.rows() == 0) throw ContractViolation("fit_ridge: need [N, F] features and N targets");
  if (!(lambda >= 0.0)) throw ContractViolation("fit_ridge: lambda must be nonnegative");
  const auto n = Eigen::Index(x.rows()), f = Eigen::Index(x.cols());
  Eigen::MatrixXd a(n, f);
  Eigen::VectorXd t(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < f; ++j) a(i, j) = x.at(std::size_t(i), std::size_t(j));
    t(i) = y[std::size_t(i)];
  }
  const Eigen::RowVectorXd mx = a.colwise().mean();
  const double my = t.mean();
  a.rowwise() -= mx;
  t.array() -= my;
  Eigen::MatrixXd g = a.transpose() * a;
  g.diagonal().array() += lambda;
  const Eigen::VectorXd w = g.ldlt().solve(a.transpose() * t);
  RidgeModel m;
  m.w.assign(w.data(), w.data() + f);
  m.b = my - mx.dot(w);
  return m;
}

std::vector<double> ridge_loocv(const Tensor& x, std::span<const double> y, double lambda) {
  const std::size_t n = x.rows();
  if (n < 2) throw ContractViolation("ridge_loocv: need at least 2 samples");
  std::vector<double> out(n);
  Tensor train({n - 1, x.cols()});
  std::vector<double> ty(n - 1);
  for (std::size_t held = 0; held < n; ++held) {
    for (std::size_t i = 0, r = 0; i < n; ++i) {
      if (i == held) continue;
      std::copy(x.row(i).begin(), x.row(i).end(), train.row(r).begin());
      ty[r++] = y[i];
    }
    out[held] = fit_ridge(train, ty, lambda).predict(x.row(held));
  }
  return out;
}

}  // namespace dfe::analysis
