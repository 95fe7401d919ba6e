#include "dfe/analysis/classify.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "dfe/numcore/errors.hpp"
#include "dfe/numcore/rng.hpp"

namespace dfe::analysis {

using nc::Tensor;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace {

std::vector<std::int64_t> sorted_classes(std::span<const std::int64_t> labels) {
  std::vector<std::int64_t> c(labels.begin(), labels.end());
  std::sort(c.begin(), c.end());
  c.erase(std::unique(c.begin(), c.end()), c.end());
  return c;
}

// Row-wise softmax in place; returns the summed log-sum-exp minus the target logits.
double softmax_ce(Mat& logits, std::span<const std::size_t> y) {
  double ce = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    const double mx = row.maxCoeff();
    row.array() -= mx;
    const double target = row(Eigen::Index(y[std::size_t(i)]));
    row = row.array().exp().matrix();
    const double z = row.sum();
    ce += std::log(z) - target;
    row /= z;
  }
  return ce;
}

}  // namespace

std::vector<double> LogisticModel::predict_proba(std::span<const double> x) const {
  if (x.size() != w.cols()) throw ContractViolation("logistic: feature width mismatch");
  std::vector<double> p(classes.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < classes.size(); ++c) {
    double s = b[c];
    for (std::size_t j = 0; j < x.size(); ++j) s += w.at(c, j) * ((x[j] - mean[j]) / scale[j]);
    p[c] = s;
    mx = std::max(mx, s);
  }
  double z = 0.0;
  for (double& v : p) z += (v = std::exp(v - mx));
  for (double& v : p) v /= z;
  return p;
}

std::int64_t LogisticModel::predict(std::span<const double> x) const {
  const auto p = predict_proba(x);
  return classes[std::size_t(std::max_element(p.begin(), p.end()) - p.begin())];
}

LogisticModel fit_logistic(const Tensor& x, std::span<const std::int64_t> labels, const LogisticOptions& o) {
  if (x.rank() != 2 || x.rows() != labels.size() || x.rows() == 0) throw ContractViolation("fit_logistic: need [N, F] features and N labels");
  if (!(o.lambda > 0.0)) throw ContractViolation("fit_logistic: lambda must be positive");
  LogisticModel m;
  m.classes = sorted_classes(labels);
  if (m.classes.size() < 2) throw ContractViolation("fit_logistic: need at least 2 classes");
  const auto n = Eigen::Index(x.rows()), f = Eigen::Index(x.cols()), c = Eigen::Index(m.classes.size());
  m.mean.assign(std::size_t(f), 0.0);
  m.scale.assign(std::size_t(f), 1.0);
  Mat xm = Eigen::Map<const Mat>(x.data().data(), n, f);
  if (o.standardize) {
    for (Eigen::Index j = 0; j < f; ++j) {
      auto col = xm.col(j);
      const double mu = col.mean();
      const double sd = std::sqrt((col.array() - mu).square().mean());
      m.mean[std::size_t(j)] = mu;
      if (sd > 0.0) m.scale[std::size_t(j)] = sd;
      col = (col.array() - mu) / m.scale[std::size_t(j)];
    }
  }
  std::vector<std::size_t> y(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    y[i] = std::size_t(std::lower_bound(m.classes.begin(), m.classes.end(), labels[i]) - m.classes.begin());

  // Hessian of the mean softmax CE is bounded by 1/2 X~'X~ / N, X~ = [X 1].
  Eigen::MatrixXd xt(n, f + 1);
  xt.leftCols(f) = xm;
  xt.col(f).setOnes();
  const Eigen::MatrixXd gram = xt.transpose() * xt / double(n);
  const double top = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(gram, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
  const double step = 1.0 / (0.5 * top + o.lambda);

  Mat w = Mat::Zero(c, f);
  Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(c);
  if (o.init_scale > 0.0) {
    Rng rng(o.seed);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal(0.0, o.init_scale);
    for (Eigen::Index i = 0; i < c; ++i) b(i) = rng.normal(0.0, o.init_scale);
  }
  Mat p(n, c), gw(c, f);
  Eigen::RowVectorXd gb(c);
  auto evaluate = [&] {
    p.noalias() = xm * w.transpose();
    p.rowwise() += b;
    const double ce = softmax_ce(p, y) / double(n);
    for (Eigen::Index i = 0; i < n; ++i) p(i, Eigen::Index(y[std::size_t(i)])) -= 1.0;
    gw.noalias() = p.transpose() * xm / double(n);
    gw += o.lambda * w;
    gb = p.colwise().sum() / double(n);
    return ce + 0.5 * o.lambda * w.squaredNorm();
  };
  double loss = evaluate();
  double gnorm = std::sqrt(gw.squaredNorm() + gb.squaredNorm());
  std::size_t it = 0;
  while (gnorm >= o.tolerance && it < o.max_iterations) {
    w -= step * gw;
    b -= step * gb;
    loss = evaluate();
    gnorm = std::sqrt(gw.squaredNorm() + gb.squaredNorm());
    ++it;
  }
  m.w = Tensor({std::size_t(c), std::size_t(f)});
  std::copy(w.data(), w.data() + w.size(), m.w.data().begin());
  m.b.assign(b.data(), b.data() + c);
  m.loss = loss;
  m.grad_norm = gnorm;
  m.iterations = it;
  return m;
}

LoocvResult logistic_loocv(const Tensor& x, std::span<const std::int64_t> labels, const LogisticOptions& o) {
  if (x.rank() != 2 || x.rows() != labels.size()) throw ContractViolation("logistic_loocv: need [N, F] features and N labels");
  std::map<std::int64_t, std::size_t> counts;
  for (std::int64_t l : labels) ++counts[l];
  if (counts.size() < 2) throw ContractViolation("logistic_loocv: need at least 2 classes");
  for (const auto& [label, n] : counts)
    if (n < 2) throw ContractViolation("logistic_loocv: class " + std::to_string(label) + " has fewer than 2 samples");
  const std::size_t n = x.rows(), f = x.cols();
  LoocvResult r;
  r.model = fit_logistic(x, labels, o);
  const auto& classes = r.model.classes;
  r.probabilities = Tensor({n, classes.size()});
  r.predictions.resize(n);
  Tensor train({n - 1, f});
  std::vector<std::int64_t> ty(n - 1);
  for (std::size_t held = 0; held < n; ++held) {
    for (std::size_t i = 0, row = 0; i < n; ++i) {
      if (i == held) continue;
      std::copy(x.row(i).begin(), x.row(i).end(), train.row(row).begin());
      ty[row++] = labels[i];
    }
    const LogisticModel fold = fit_logistic(train, ty, o);
    const auto p = fold.predict_proba(x.row(held));
    for (std::size_t c = 0; c < classes.size(); ++c) r.probabilities.at(held, c) = p[c];
    r.predictions[held] = fold.predict(x.row(held));
  }
  const ClassificationMetrics cm = classification_metrics(r.predictions, labels, &r.probabilities, classes);
  r.accuracy = cm.accuracy;
  r.macro_f1 = cm.macro_f1;
  r.auc = cm.auc;
  return r;
}

std::vector<std::vector<RankedFeature>> template_importance(const Tensor& coef, std::size_t top_n) {
  if (coef.rank() != 2) throw ContractViolation("template_importance: expected a [C, F] coefficient matrix");
  std::vector<std::vector<RankedFeature>> out(coef.rows());
  for (std::size_t c = 0; c < coef.rows(); ++c) {
    auto& ranked = out[c];
    for (std::size_t j = 0; j < coef.cols(); ++j) {
      const double a = std::abs(coef.at(c, j));
      ranked.push_back({j, a > 0.0 ? std::log(a) : -std::numeric_limits<double>::infinity()});
    }
    std::stable_sort(ranked.begin(), ranked.end(), [](const RankedFeature& a, const RankedFeature& b) { return a.score > b.score; });
    if (top_n && ranked.size() > top_n) ranked.resize(top_n);
  }
  return out;
}

}  // namespace dfe::analysis
