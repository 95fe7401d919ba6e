#include "dfe/numcore/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>

#include "dfe/numcore/errors.hpp"

namespace dfe::nc {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;
using CVec = Eigen::Map<const Eigen::VectorXd>;
using MVec = Eigen::Map<Eigen::VectorXd>;

CMap as_mat(const Tensor& t) { return CMap(t.ptr(), Eigen::Index(t.rows()), Eigen::Index(t.cols())); }
MMap as_mat(Tensor& t) { return MMap(t.ptr(), Eigen::Index(t.rows()), Eigen::Index(t.cols())); }

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  throw ContractViolation(std::string(op) + ": " + detail);
}

void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) shape_error(op, shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

void require_rank2(const char* op, const Var& a) {
  if (a.value().rank() != 2) shape_error(op, "expected a matrix, got " + shape_string(a.shape()));
}

void accumulate(Tensor* dst, const Tensor& src, double factor = 1.0) {
  if (!dst) return;
  for (std::size_t i = 0; i < src.size(); ++i) (*dst)[i] += factor * src[i];
}

// erf as two polynomial fits in a rescaled variable: erf(x)/x against x^2 below
// |x| = 2, x e^{x^2} erfc(x) against 1/x^2 above (clamped at 6, where erfc
// drops below half an ulp of 1). Absolute error stays near 2e-16. Both
// branches are evaluated and blended so the whole thing vectorizes.
constexpr double kErfSmall[] = {
    0.67493323603965505,     -0.26111186093124494,    0.11947913860985301,     -0.048662777449176541,
    0.017128344571793578,    -0.0052348758358514809,  0.0014050914238250944,   -0.00033514353548940834,
    7.1801007829171528e-05,  -1.3946267100005377e-05, 2.4758031090909326e-06,  -4.0452217940016e-07,
    6.1194916911008736e-08,  -8.6038622821732681e-09, 1.1346741596035326e-09,  -1.4811402350440907e-10,
    1.6838403581286382e-11};
constexpr double kErfcLarge[] = {
    0.53121183301026575,     -0.022532890108675523,   0.0024337203388953275,   -0.00038268260273351579,
    7.5062228695272999e-05,  -1.7114732105889599e-05, 4.3605774024976642e-06,  -1.2101969778840557e-06,
    3.6007403717134285e-07,  -1.1576477649884025e-07, 3.8713283355424439e-08,  -1.0493463038491371e-08,
    3.4695396223919693e-09,  -3.1923412946806738e-09, 1.2999925776268055e-09};

// y += a * x
inline void axpy(std::size_t n, double a, const double* __restrict x, double* __restrict y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

constexpr Eigen::Index kGeluBlock = 64;
using GeluArray = Eigen::Array<double, kGeluBlock, 1>;

template <std::size_t N>
GeluArray horner(const double (&c)[N], const GeluArray& u) {
  GeluArray r = GeluArray::Constant(c[N - 1]);
  for (std::size_t i = N - 1; i-- > 0;) r = r * u + c[i];
  return r;
}

// GELU value and slope for one block; short tails are padded with zeros.
void gelu_block(const double* in, double* out, double* slope, Eigen::Index n) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt_2pi = 0.39894228040143267794;
  using A = GeluArray;
  A v = A::Zero();
  v.head(n) = Eigen::Map<const Eigen::ArrayXd>(in, n);
  const A x = v * inv_sqrt2;
  const A ax = x.abs();
  const A x2 = ax.square();
  const A e = (-x2).exp();
  A mag = ax * horner(kErfSmall, x2 * 0.5 - 1.0);
  if (ax.maxCoeff() >= 2.0) {
    const A r = ax.max(2.0).min(6.0).inverse();
    const A large = 1.0 - e * horner(kErfcLarge, r.square() * 9.0 - 1.25) * r;
    mag = (ax < 2.0).select(mag, large);
  }
  const A cdf = 0.5 * (1.0 + (x < 0.0).select(-mag, mag));
  Eigen::Map<Eigen::ArrayXd>(out, n) = (v * cdf).head(n);
  Eigen::Map<Eigen::ArrayXd>(slope, n) = (cdf + v * (inv_sqrt_2pi * e)).head(n);
}

}  // namespace

Var matmul(Var a, Var b) {
  require_rank2("matmul", a);
  require_rank2("matmul", b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) shape_error("matmul", shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  Tensor out = Tensor::uninitialized({av.rows(), bv.cols()});
  as_mat(out).noalias() = as_mat(av) * as_mat(bv);
  return a.tape().record("matmul", std::move(out), {a, b}, [](const BackwardContext& c) {
    if (Tensor* ga = c.input_grad(0)) as_mat(*ga).noalias() += as_mat(c.grad()) * as_mat(c.input(1)).transpose();
    if (Tensor* gb = c.input_grad(1)) as_mat(*gb).noalias() += as_mat(c.input(0)).transpose() * as_mat(c.grad());
  });
}

Var matmul_nt(Var a, Var b) {
  require_rank2("matmul_nt", a);
  require_rank2("matmul_nt", b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.cols()) shape_error("matmul_nt", shape_string(av.shape()) + " x " + shape_string(bv.shape()) + "^T");
  Tensor out = Tensor::uninitialized({av.rows(), bv.rows()});
  as_mat(out).noalias() = as_mat(av) * as_mat(bv).transpose();
  return a.tape().record("matmul_nt", std::move(out), {a, b}, [](const BackwardContext& c) {
    if (Tensor* ga = c.input_grad(0)) as_mat(*ga).noalias() += as_mat(c.grad()) * as_mat(c.input(1));
    if (Tensor* gb = c.input_grad(1)) as_mat(*gb).noalias() += as_mat(c.grad()).transpose() * as_mat(c.input(0));
  });
}

Var linear(Var x, Var w) {
  require_rank2("linear", w);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (xv.cols() != wv.cols()) shape_error("linear", "input " + shape_string(xv.shape()) + " vs weight " + shape_string(wv.shape()));
  Tensor out = Tensor::uninitialized({xv.rows(), wv.rows()});
  as_mat(out).noalias() = as_mat(xv) * as_mat(wv).transpose();
  return x.tape().record("linear", std::move(out), {x, w}, [](const BackwardContext& c) {
    if (Tensor* gx = c.input_grad(0)) as_mat(*gx).noalias() += as_mat(c.grad()) * as_mat(c.input(1));
    if (Tensor* gw = c.input_grad(1)) as_mat(*gw).noalias() += as_mat(c.grad()).transpose() * as_mat(c.input(0));
  });
}

Var linear(Var x, Var w, Var b) {
  require_rank2("linear", w);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (xv.cols() != wv.cols()) shape_error("linear", "input " + shape_string(xv.shape()) + " vs weight " + shape_string(wv.shape()));
  if (bv.size() != wv.rows()) shape_error("linear", "bias " + shape_string(bv.shape()) + " vs weight " + shape_string(wv.shape()));
  Tensor out = Tensor::uninitialized({xv.rows(), wv.rows()});
  auto om = as_mat(out);
  om.noalias() = as_mat(xv) * as_mat(wv).transpose();
  om.rowwise() += CVec(bv.ptr(), Eigen::Index(bv.size())).transpose();
  return x.tape().record("linear", std::move(out), {x, w, b}, [](const BackwardContext& c) {
    if (Tensor* gx = c.input_grad(0)) as_mat(*gx).noalias() += as_mat(c.grad()) * as_mat(c.input(1));
    if (Tensor* gw = c.input_grad(1)) as_mat(*gw).noalias() += as_mat(c.grad()).transpose() * as_mat(c.input(0));
    if (Tensor* gb = c.input_grad(2)) Eigen::Map<Eigen::RowVectorXd>(gb->ptr(), Eigen::Index(gb->size())) += as_mat(c.grad()).colwise().sum();
  });
}

Var add(Var a, Var b) {
  require_same_shape("add", a, b);
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape().record("add", std::move(out), {a, b}, [](const BackwardContext& c) {
    accumulate(c.input_grad(0), c.grad());
    accumulate(c.input_grad(1), c.grad());
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a, b);
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape().record("sub", std::move(out), {a, b}, [](const BackwardContext& c) {
    accumulate(c.input_grad(0), c.grad());
    accumulate(c.input_grad(1), c.grad(), -1.0);
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a, b);
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape().record("mul", std::move(out), {a, b}, [](const BackwardContext& c) {
    const Tensor& g = c.grad();
    if (Tensor* ga = c.input_grad(0))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * c.input(1)[i];
    if (Tensor* gb = c.input_grad(1))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * c.input(0)[i];
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= s;
  return a.tape().record("scale", std::move(out), {a}, [s](const BackwardContext& c) { accumulate(c.input_grad(0), c.grad(), s); });
}

Var add_broadcast_rows(Var x, Var p) {
  const Tensor& xv = x.value();
  const Tensor& pv = p.value();
  if (xv.cols() != pv.cols() || pv.rows() == 0 || xv.rows() % pv.rows() != 0)
    shape_error("add_broadcast_rows", shape_string(xv.shape()) + " + " + shape_string(pv.shape()));
  Tensor out = xv;
  const std::size_t period = pv.rows();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto dst = out.row(r);
    auto src = pv.row(r % period);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
  }
  return x.tape().record("add_broadcast_rows", std::move(out), {x, p}, [period](const BackwardContext& c) {
    accumulate(c.input_grad(0), c.grad());
    if (Tensor* gp = c.input_grad(1)) {
      const Tensor& g = c.grad();
      for (std::size_t r = 0; r < g.rows(); ++r) {
        auto dst = gp->row(r % period);
        auto src = g.row(r);
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
      }
    }
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.cols();
  if (gamma.value().size() != n || beta.value().size() != n)
    shape_error("layer_norm", "affine parameters do not match feature size " + std::to_string(n));
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  auto rstd = std::make_shared<Buffer>(xv.rows(), 0.0);
  Tensor out = Tensor::uninitialized(xv.shape());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    auto in = xv.row(r);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= double(n);
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= double(n);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    auto o = out.row(r);
    for (std::size_t j = 0; j < n; ++j) o[j] = (in[j] - mean) * rs * gv[j] + bv[j];
  }
  return x.tape().record("layer_norm", std::move(out), {x, gamma, beta}, [rstd, n](const BackwardContext& c) {
    const Tensor& xin = c.input(0);
    const Tensor& g = c.input(1);
    const Tensor& dy = c.grad();
    Tensor* dx = c.input_grad(0);
    Tensor* dg = c.input_grad(1);
    Tensor* db = c.input_grad(2);
    Buffer xhat(n, 0.0), dxhat(n, 0.0);
    for (std::size_t r = 0; r < xin.rows(); ++r) {
      auto in = xin.row(r);
      auto gy = dy.row(r);
      double mean = 0.0;
      for (double v : in) mean += v;
      mean /= double(n);
      const double rs = (*rstd)[r];
      double m1 = 0.0, m2 = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        xhat[j] = (in[j] - mean) * rs;
        dxhat[j] = gy[j] * g[j];
        m1 += dxhat[j];
        m2 += dxhat[j] * xhat[j];
        if (dg) (*dg)[j] += gy[j] * xhat[j];
        if (db) (*db)[j] += gy[j];
      }
      m1 /= double(n);
      m2 /= double(n);
      if (dx) {
        auto d = dx->row(r);
        for (std::size_t j = 0; j < n; ++j) d[j] += rs * (dxhat[j] - m1 - xhat[j] * m2);
      }
    }
  });
}

Var softmax(Var x) {
  const Tensor& xv = x.value();
  Tensor out = Tensor::uninitialized(xv.shape());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    auto in = xv.row(r);
    auto o = out.row(r);
    double mx = in.empty() ? 0.0 : in[0];
    for (double v : in) mx = std::max(mx, v);
    double z = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) z += (o[j] = std::exp(in[j] - mx));
    for (double& v : o) v /= z;
  }
  return x.tape().record("softmax", std::move(out), {x}, [](const BackwardContext& c) {
    Tensor* gx = c.input_grad(0);
    if (!gx) return;
    const Tensor& y = c.value();
    const Tensor& gy = c.grad();
    for (std::size_t r = 0; r < y.rows(); ++r) {
      auto yr = y.row(r);
      auto gr = gy.row(r);
      double dot = 0.0;
      for (std::size_t j = 0; j < yr.size(); ++j) dot += yr[j] * gr[j];
      auto d = gx->row(r);
      for (std::size_t j = 0; j < yr.size(); ++j) d[j] += yr[j] * (gr[j] - dot);
    }
  });
}

Var gelu(Var x) {
  const Tensor& in = x.value();
  Tensor out = Tensor::uninitialized(in.shape());
  auto slope = std::make_shared<Tensor>(Tensor::uninitialized(in.shape()));
  constexpr std::size_t block = kGeluBlock;
  for (std::size_t i = 0; i < in.size(); i += block)
    gelu_block(in.ptr() + i, out.ptr() + i, slope->ptr() + i, Eigen::Index(std::min(block, in.size() - i)));
  return x.tape().record("gelu", std::move(out), {x}, [slope](const BackwardContext& c) {
    Tensor* gx = c.input_grad(0);
    if (!gx) return;
    const Tensor& g = c.grad();
    const double* d = slope->ptr();
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * d[i];
  });
}

Var relu(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return x.tape().record("relu", std::move(out), {x}, [](const BackwardContext& c) {
    Tensor* gx = c.input_grad(0);
    if (!gx) return;
    const Tensor& in = c.input(0);
    for (std::size_t i = 0; i < in.size(); ++i)
      if (in[i] > 0.0) (*gx)[i] += c.grad()[i];
  });
}

Var mean_axis(Var x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) shape_error("mean_axis", "axis " + std::to_string(axis) + " out of range for " + shape_string(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  if (n == 0) shape_error("mean_axis", "empty axis");
  Shape os = s;
  os.erase(os.begin() + std::ptrdiff_t(axis));
  Tensor out(os);
  const Tensor& xv = x.value();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < inner; ++k) out[o * inner + k] += xv[(o * n + i) * inner + k];
  const double inv = 1.0 / double(n);
  for (double& v : out.data()) v *= inv;
  return x.tape().record("mean_axis", std::move(out), {x}, [outer, inner, n, inv](const BackwardContext& c) {
    Tensor* gx = c.input_grad(0);
    if (!gx) return;
    const Tensor& g = c.grad();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < inner; ++k) (*gx)[(o * n + i) * inner + k] += g[o * inner + k] * inv;
  });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape().record("reshape", std::move(out), {x}, [](const BackwardContext& c) { accumulate(c.input_grad(0), c.grad()); });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape().record("sum", Tensor::scalar(s), {x}, [](const BackwardContext& c) {
    Tensor* gx = c.input_grad(0);
    if (!gx) return;
    const double g = c.grad()[0];
    for (double& v : gx->data()) v += g;
  });
}

Var sum_squares(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v * v;
  return x.tape().record("sum_squares", Tensor::scalar(s), {x}, [](const BackwardContext& c) {
    Tensor* gx = c.input_grad(0);
    if (!gx) return;
    const double g = 2.0 * c.grad()[0];
    const Tensor& in = c.input(0);
    for (std::size_t i = 0; i < in.size(); ++i) (*gx)[i] += g * in[i];
  });
}

Var l1_norm(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += std::abs(v);
  return x.tape().record("l1_norm", Tensor::scalar(s), {x}, [](const BackwardContext& c) {
    Tensor* gx = c.input_grad(0);
    if (!gx) return;
    const double g = c.grad()[0];
    const Tensor& in = c.input(0);
    for (std::size_t i = 0; i < in.size(); ++i) {
      if (in[i] > 0.0) (*gx)[i] += g;
      else if (in[i] < 0.0) (*gx)[i] -= g;
    }
  });
}

Var l2_norm(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v * v;
  const double norm = std::sqrt(s);
  return x.tape().record("l2_norm", Tensor::scalar(norm), {x}, [](const BackwardContext& c) {
    Tensor* gx = c.input_grad(0);
    const double norm = c.value()[0];
    if (!gx || norm == 0.0) return;
    const double g = c.grad()[0] / norm;
    const Tensor& in = c.input(0);
    for (std::size_t i = 0; i < in.size(); ++i) (*gx)[i] += g * in[i];
  });
}

Var attention(Var qkv, std::size_t seq_len, std::size_t heads) {
  const Tensor& in = qkv.value();
  if (in.rank() != 2 || in.cols() % 3 != 0) shape_error("attention", "expected [N, 3H], got " + shape_string(in.shape()));
  const std::size_t hidden = in.cols() / 3;
  if (heads == 0 || hidden % heads != 0) shape_error("attention", "hidden size not divisible by heads");
  if (seq_len == 0 || in.rows() % seq_len != 0) shape_error("attention", "rows not a multiple of sequence length");
  const std::size_t batch = in.rows() / seq_len;
  const std::size_t dh = hidden / heads;
  const std::size_t stride = in.cols();
  const double sc = 1.0 / std::sqrt(double(dh));

  const std::size_t tt = seq_len * seq_len;

  auto probs = std::make_shared<Buffer>(batch * heads * tt, 0.0);
  Tensor out({in.rows(), hidden});
  Buffer kt(dh * seq_len, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* blk = in.ptr() + b * seq_len * stride;
    for (std::size_t h = 0; h < heads; ++h) {
      const double* q = blk + h * dh;
      const double* k = blk + hidden + h * dh;
      const double* v = blk + 2 * hidden + h * dh;
      double* p = probs->data() + (b * heads + h) * tt;
      for (std::size_t j = 0; j < seq_len; ++j)
        for (std::size_t c = 0; c < dh; ++c) kt[c * seq_len + j] = k[j * stride + c];
      for (std::size_t i = 0; i < seq_len; ++i) {
        double* prow = p + i * seq_len;
        for (std::size_t c = 0; c < dh; ++c) axpy(seq_len, q[i * stride + c], kt.data() + c * seq_len, prow);
        double mx = -INFINITY;
        for (std::size_t j = 0; j < seq_len; ++j) mx = std::max(mx, prow[j] *= sc);
        for (std::size_t j = 0; j < seq_len; ++j) prow[j] -= mx;
      }
      Eigen::Map<Eigen::ArrayXd> pa(p, Eigen::Index(tt));
      pa = pa.exp();
      double* o = out.ptr() + b * seq_len * hidden + h * dh;
      for (std::size_t i = 0; i < seq_len; ++i) {
        double* prow = p + i * seq_len;
        double z = 0.0;
        for (std::size_t j = 0; j < seq_len; ++j) z += prow[j];
        for (std::size_t j = 0; j < seq_len; ++j) prow[j] /= z;
        double* oi = o + i * hidden;
        for (std::size_t j = 0; j < seq_len; ++j) axpy(dh, prow[j], v + j * stride, oi);
      }
    }
  }

  return qkv.tape().record("attention", std::move(out), {qkv}, [=](const BackwardContext& c) {
    Tensor* gin = c.input_grad(0);
    if (!gin) return;
    Buffer vt(dh * seq_len, 0.0), ds(tt, 0.0);
    for (std::size_t b = 0; b < batch; ++b) {
      const double* blk = c.input(0).ptr() + b * seq_len * stride;
      double* gblk = gin->ptr() + b * seq_len * stride;
      const double* go = c.grad().ptr() + b * seq_len * hidden;
      for (std::size_t h = 0; h < heads; ++h) {
        const double* q = blk + h * dh;
        const double* k = blk + hidden + h * dh;
        const double* v = blk + 2 * hidden + h * dh;
        double* gq = gblk + h * dh;
        double* gk = gblk + hidden + h * dh;
        double* gv = gblk + 2 * hidden + h * dh;
        const double* p = probs->data() + (b * heads + h) * tt;
        for (std::size_t j = 0; j < seq_len; ++j)
          for (std::size_t cc = 0; cc < dh; ++cc) vt[cc * seq_len + j] = v[j * stride + cc];
        std::fill(ds.begin(), ds.end(), 0.0);
        for (std::size_t i = 0; i < seq_len; ++i) {
          const double* gi = go + i * hidden + h * dh;
          const double* prow = p + i * seq_len;
          double* drow = ds.data() + i * seq_len;
          for (std::size_t j = 0; j < seq_len; ++j) axpy(dh, prow[j], gi, gv + j * stride);
          for (std::size_t cc = 0; cc < dh; ++cc) axpy(seq_len, gi[cc], vt.data() + cc * seq_len, drow);
          double dot = 0.0;
          for (std::size_t j = 0; j < seq_len; ++j) dot += prow[j] * drow[j];
          for (std::size_t j = 0; j < seq_len; ++j) drow[j] = prow[j] * (drow[j] - dot) * sc;
        }
        for (std::size_t i = 0; i < seq_len; ++i) {
          const double* drow = ds.data() + i * seq_len;
          double* gqi = gq + i * stride;
          const double* qi = q + i * stride;
          for (std::size_t j = 0; j < seq_len; ++j) {
            axpy(dh, drow[j], k + j * stride, gqi);
            axpy(dh, drow[j], qi, gk + j * stride);
          }
        }
      }
    }
  });
}

Var gather_rows(Var table, std::span<const std::uint32_t> indices) {
  const Tensor& tv = table.value();
  require_rank2("gather_rows", table);
  Tensor out({indices.size(), tv.cols()});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= tv.rows()) shape_error("gather_rows", "index " + std::to_string(indices[r]) + " out of range");
    auto src = tv.row(indices[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  std::vector<std::uint32_t> idx(indices.begin(), indices.end());
  return table.tape().record("gather_rows", std::move(out), {table}, [idx = std::move(idx)](const BackwardContext& c) {
    Tensor* gt = c.input_grad(0);
    if (!gt) return;
    for (std::size_t r = 0; r < idx.size(); ++r) {
      auto dst = gt->row(idx[r]);
      auto src = c.grad().row(r);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
  });
}

Var pairwise_orthogonality(Var e) {
  require_rank2("pairwise_orthogonality", e);
  const Tensor& ev = e.value();
  const std::size_t k = ev.rows();
  if (k < 2) shape_error("pairwise_orthogonality", "needs at least two rows");
  const double norm = 1.0 / (double(k) * double(k - 1));
  RowMat gram = as_mat(ev) * as_mat(ev).transpose();
  double s = 0.0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j)
      if (i != j) s += gram(Eigen::Index(i), Eigen::Index(j)) * gram(Eigen::Index(i), Eigen::Index(j));
  return e.tape().record("pairwise_orthogonality", Tensor::scalar(s * norm), {e}, [norm](const BackwardContext& c) {
    Tensor* ge = c.input_grad(0);
    if (!ge) return;
    auto em = as_mat(c.input(0));
    RowMat g = em * em.transpose();
    g.diagonal().setZero();
    // d/de_i sum_{a != b} (e_a.e_b)^2 = 4 sum_{j != i} (e_i.e_j) e_j
    as_mat(*ge).noalias() += (4.0 * norm * c.grad()[0]) * (g * em);
  });
}

Var stop_gradient(Var x) { return x.tape().constant(x.value()); }

}  // namespace dfe::nc
