#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "dfe/numcore/adam.hpp"
#include "dfe/numcore/errors.hpp"
#include "dfe/numcore/grad_check.hpp"
#include "dfe/numcore/ops.hpp"
#include "dfe/numcore/rng.hpp"

using namespace dfe;
using namespace dfe::nc;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.normal(0.0, scale);
  return t;
}

// Contracts an op output against fixed random weights so every output
// coordinate contributes a distinct adjoint.
Var weighted_sum(Var y, const Tensor& weights) {
  Var w = y.tape().constant(weights.reshaped(y.shape()));
  return sum(mul(y, w));
}

double check_primitive(std::vector<Parameter*> params, const std::function<Var(Tape&)>& op, std::uint64_t seed) {
  Rng rng(seed);
  Tensor weights;
  {
    Tape probe(false);
    weights = random_tensor(op(probe).shape(), rng);
  }
  auto build = [&](Tape& t) { return weighted_sum(op(t), weights); };
  return grad_check(build, params, {.step = 1e-5}).max_rel_error;
}

}  // namespace

TEST_CASE("tensor storage is 64-byte aligned") {
  for (std::size_t n : {1, 3, 17, 1000}) {
    Tensor t({n});
    CHECK(reinterpret_cast<std::uintptr_t>(t.ptr()) % 64 == 0);
    Tensor copy = t;
    CHECK(reinterpret_cast<std::uintptr_t>(copy.ptr()) % 64 == 0);
    Buffer b(n, 0.0);
    CHECK(reinterpret_cast<std::uintptr_t>(b.data()) % 64 == 0);
  }
}

TEST_CASE("matmul with identity returns the other operand") {
  Rng rng(1);
  Tape tape;
  Tensor eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  Tensor a = random_tensor({3, 3}, rng);
  Var out = matmul(tape.constant(eye), tape.constant(a));
  CHECK(out.value() == a);
}

TEST_CASE("softmax of zeros is uniform") {
  Tape tape;
  Var y = softmax(tape.constant(Tensor::vector({0.0, 0.0, 0.0})));
  for (double v : y.value().data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("layer_norm of [1,2,3] with unit scale") {
  Tape tape;
  Var x = tape.constant(Tensor::matrix(1, 3, {1.0, 2.0, 3.0}));
  Var y = layer_norm(x, tape.constant(Tensor::vector({1, 1, 1})), tape.constant(Tensor::vector({0, 0, 0})));
  // mean 2, population variance 2/3 -> +-1/sqrt(2/3 + eps)
  const double expected = 1.0 / std::sqrt(2.0 / 3.0 + 1e-5);
  CHECK(y.value()[0] == doctest::Approx(-expected).epsilon(1e-12));
  CHECK(y.value()[1] == doctest::Approx(0.0));
  CHECK(y.value()[2] == doctest::Approx(expected).epsilon(1e-12));
  CHECK(y.value()[2] == doctest::Approx(1.2247).epsilon(1e-4));
}

TEST_CASE("backward of sum of squares") {
  Parameter x("x", Tensor::vector({1.0, -2.0}));
  Tape tape;
  Var xv = tape.param(x);
  tape.backward(sum(mul(xv, xv)));
  CHECK(x.grad[0] == 2.0);
  CHECK(x.grad[1] == -4.0);
}

TEST_CASE("reusing a parameter leaf accumulates through one node") {
  Parameter x("x", Tensor::vector({3.0}));
  Tape tape;
  Var a = tape.param(x);
  Var b = tape.param(x);
  CHECK(a.id() == b.id());
  tape.backward(sum(mul(a, b)));
  CHECK(x.grad[0] == 6.0);
}

TEST_CASE("norm of xW matches finite differences") {
  Rng rng(2);
  Parameter x("x", random_tensor({2, 4}, rng));
  Parameter w("w", random_tensor({4, 3}, rng, 0.1));
  std::vector<Parameter*> ps{&x, &w};
  auto build = [&](Tape& t) { return sum_squares(matmul(t.param(x), t.param(w))); };
  CHECK(grad_check(build, ps).max_rel_error < 1e-6);
}

TEST_CASE("loss independent of a parameter gives it zero gradient") {
  Parameter used("used", Tensor::vector({1.0, 2.0}));
  Parameter unused("unused", Tensor::vector({5.0}));
  Tape tape;
  Var u = tape.param(used);
  tape.param(unused);
  tape.backward(sum_squares(u));
  CHECK(unused.grad[0] == 0.0);
}

TEST_CASE("tape is single use") {
  Parameter x("x", Tensor::vector({1.0}));
  Tape tape;
  Var loss = sum_squares(tape.param(x));
  tape.backward(loss);
  CHECK(tape.consumed());
  CHECK_THROWS_AS(tape.backward(loss), ContractViolation);
  CHECK_THROWS_AS(tape.constant(Tensor::scalar(1.0)), ContractViolation);
}

TEST_CASE("backward rejects non-scalar losses") {
  Parameter x("x", Tensor::vector({1.0, 2.0}));
  Tape tape;
  CHECK_THROWS_AS(tape.backward(scale(tape.param(x), 2.0)), ContractViolation);
}

TEST_CASE("backward visits nodes in reverse recording order") {
  Parameter x("x", Tensor::vector({0.5, -1.0}));
  Tape tape;
  Var a = tape.param(x);
  Var b = gelu(a);
  Var c = scale(b, 3.0);
  Var d = mul(c, a);
  Var loss = sum(d);
  tape.backward(loss);
  const auto& trace = tape.backward_trace();
  REQUIRE(trace.size() == 4);
  CHECK(trace[0] == loss.id());
  CHECK(trace[1] == d.id());
  CHECK(trace[2] == c.id());
  CHECK(trace[3] == b.id());
}

TEST_CASE("shape mismatches are contract violations") {
  Tape tape;
  Var a = tape.constant(Tensor({2, 3}));
  Var b = tape.constant(Tensor({3, 2}));
  CHECK_THROWS_AS(add(a, b), ContractViolation);
  CHECK_THROWS_AS(matmul(a, a), ContractViolation);
  CHECK_THROWS_AS(linear(a, b), ContractViolation);
}

TEST_CASE("non-finite outputs name the faulting op") {
  Tape tape;
  Var a = tape.constant(Tensor::vector({1e308}));
  try {
    scale(a, 10.0);
    FAIL("expected a numeric fault");
  } catch (const NumericFault& e) {
    CHECK(e.op() == "scale");
  }
}

TEST_CASE("every primitive's adjoint matches central differences") {
  Rng rng(3);
  Parameter a("a", random_tensor({4, 6}, rng));
  Parameter b("b", random_tensor({6, 5}, rng));
  Parameter c("c", random_tensor({4, 6}, rng));
  Parameter w("w", random_tensor({5, 6}, rng));
  Parameter bias("bias", random_tensor({5}, rng));
  Parameter gamma("gamma", random_tensor({6}, rng));
  Parameter beta("beta", random_tensor({6}, rng));
  Parameter pos("pos", random_tensor({2, 6}, rng));
  Parameter cube("cube", random_tensor({2, 3, 4}, rng));
  Parameter qkv("qkv", random_tensor({6, 12}, rng, 0.7));
  Parameter table("table", random_tensor({5, 3}, rng));

  const double tol = 1e-6;
  CHECK(check_primitive({&a, &b}, [&](Tape& t) { return matmul(t.param(a), t.param(b)); }, 10) < tol);
  CHECK(check_primitive({&a, &w}, [&](Tape& t) { return matmul_nt(t.param(a), t.param(w)); }, 11) < tol);
  CHECK(check_primitive({&a, &w, &bias}, [&](Tape& t) { return linear(t.param(a), t.param(w), t.param(bias)); }, 12) < tol);
  CHECK(check_primitive({&a, &w}, [&](Tape& t) { return linear(t.param(a), t.param(w)); }, 13) < tol);
  CHECK(check_primitive({&a, &c}, [&](Tape& t) { return add(t.param(a), t.param(c)); }, 14) < tol);
  CHECK(check_primitive({&a, &c}, [&](Tape& t) { return sub(t.param(a), t.param(c)); }, 15) < tol);
  CHECK(check_primitive({&a, &c}, [&](Tape& t) { return mul(t.param(a), t.param(c)); }, 16) < tol);
  CHECK(check_primitive({&a}, [&](Tape& t) { return scale(t.param(a), -1.7); }, 17) < tol);
  CHECK(check_primitive({&a, &pos}, [&](Tape& t) { return add_broadcast_rows(t.param(a), t.param(pos)); }, 18) < tol);
  CHECK(check_primitive({&a, &gamma, &beta}, [&](Tape& t) { return layer_norm(t.param(a), t.param(gamma), t.param(beta)); }, 19) < tol);
  CHECK(check_primitive({&a}, [&](Tape& t) { return softmax(t.param(a)); }, 20) < tol);
  CHECK(check_primitive({&a}, [&](Tape& t) { return gelu(t.param(a)); }, 21) < tol);
  CHECK(check_primitive({&a}, [&](Tape& t) { return relu(t.param(a)); }, 22) < tol);
  CHECK(check_primitive({&cube}, [&](Tape& t) { return mean_axis(t.param(cube), 1); }, 23) < tol);
  CHECK(check_primitive({&cube}, [&](Tape& t) { return mean_axis(t.param(cube), 0); }, 24) < tol);
  CHECK(check_primitive({&cube}, [&](Tape& t) { return reshape(t.param(cube), {6, 4}); }, 25) < tol);
  CHECK(check_primitive({&a}, [&](Tape& t) { return sum(t.param(a)); }, 26) < tol);
  CHECK(check_primitive({&a}, [&](Tape& t) { return sum_squares(t.param(a)); }, 27) < tol);
  CHECK(check_primitive({&a}, [&](Tape& t) { return l1_norm(t.param(a)); }, 28) < tol);
  CHECK(check_primitive({&a}, [&](Tape& t) { return l2_norm(t.param(a)); }, 29) < tol);
  CHECK(check_primitive({&qkv}, [&](Tape& t) { return attention(t.param(qkv), 3, 2); }, 30) < tol);
  const std::vector<std::uint32_t> idx{4, 0, 4, 2};
  CHECK(check_primitive({&table}, [&](Tape& t) { return gather_rows(t.param(table), idx); }, 31) < tol);
  CHECK(check_primitive({&table}, [&](Tape& t) { return pairwise_orthogonality(t.param(table)); }, 32) < tol);
}

TEST_CASE("attention rows are convex combinations of values") {
  // With Q = K = 0 every key gets weight 1/T, so each output is the mean of V.
  Tensor qkv({3, 6});
  for (std::size_t r = 0; r < 3; ++r) {
    qkv.at(r, 4) = double(r);
    qkv.at(r, 5) = 2.0 * double(r);
  }
  Tape tape;
  Var out = attention(tape.constant(qkv), 3, 1);
  for (std::size_t r = 0; r < 3; ++r) {
    CHECK(out.value().at(r, 0) == doctest::Approx(1.0));
    CHECK(out.value().at(r, 1) == doctest::Approx(2.0));
  }
}

TEST_CASE("pairwise orthogonality of two equal unit rows") {
  Tape tape;
  Var e = tape.constant(Tensor::matrix(2, 2, {1, 0, 1, 0}));
  CHECK(pairwise_orthogonality(e).value().item() == 1.0);
}

TEST_CASE("stop_gradient blocks the adjoint") {
  Parameter x("x", Tensor::vector({2.0}));
  Tape tape;
  Var xv = tape.param(x);
  tape.backward(sum(mul(xv, stop_gradient(xv))));
  CHECK(x.grad[0] == 2.0);
}

TEST_CASE("forward and backward are deterministic") {
  Rng rng(4);
  Parameter qkv("qkv", random_tensor({8, 12}, rng));
  auto run = [&] {
    qkv.zero_grad();
    Tape tape;
    Var loss = sum_squares(gelu(attention(tape.param(qkv), 4, 2)));
    const double value = loss.value().item();
    tape.backward(loss);
    return std::make_pair(value, qkv.grad);
  };
  auto first = run();
  auto second = run();
  CHECK(first.first == second.first);
  CHECK(first.second == second.second);
}

TEST_CASE("adam first step moves by lr against the gradient sign") {
  Parameter p("p", Tensor::vector({1.0, 1.0, 1.0}));
  Adam opt({.lr = 0.01}, {&p});
  p.grad = Tensor::vector({3.0, -0.5, 2.0});
  opt.step();
  CHECK(p.value[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-9));
  CHECK(p.value[1] == doctest::Approx(1.0 + 0.01).epsilon(1e-9));
  CHECK(p.value[2] == doctest::Approx(1.0 - 0.01).epsilon(1e-9));
  CHECK(opt.steps() == 1);
}

TEST_CASE("adam with zero gradient leaves parameters unchanged") {
  Parameter p("p", Tensor::vector({0.3, -4.0}));
  Adam opt({.lr = 0.1}, {&p});
  opt.zero_grad();
  opt.step();
  opt.step();
  CHECK(p.value == Tensor::vector({0.3, -4.0}));
  CHECK(opt.steps() == 2);
}

TEST_CASE("adam on a scalar quadratic matches a direct simulation") {
  // Independent scalar replay of the bias-corrected update on f(x) = x^2 / 2.
  double x = 1.0, m = 0.0, v = 0.0;
  std::vector<double> expected;
  for (int t = 1; t <= 2; ++t) {
    const double g = x;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1.0 - std::pow(0.9, t));
    const double vh = v / (1.0 - std::pow(0.999, t));
    x -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    expected.push_back(x);
  }

  Parameter p("x", Tensor::vector({1.0}));
  Adam opt({.lr = 0.1}, {&p});
  double prev = p.value[0];
  for (int t = 0; t < 2; ++t) {
    opt.zero_grad();
    Tape tape;
    tape.backward(scale(sum_squares(tape.param(p)), 0.5));
    opt.step();
    CHECK(p.value[0] < prev);
    CHECK(p.value[0] == doctest::Approx(expected[std::size_t(t)]).epsilon(1e-14));
    prev = p.value[0];
  }
}

TEST_CASE("adam aborts on non-finite gradients without touching state") {
  Parameter good("good", Tensor::vector({1.0}));
  Parameter bad("bad", Tensor::vector({1.0}));
  Adam opt({.lr = 0.1}, {&good, &bad});
  good.grad = Tensor::vector({1.0});
  bad.grad = Tensor::vector({NAN});
  try {
    opt.step();
    FAIL("expected NonFiniteGradient");
  } catch (const NonFiniteGradient& e) {
    CHECK(e.parameter() == "bad");
  }
  CHECK(good.value[0] == 1.0);
  CHECK(opt.steps() == 0);
}

TEST_CASE("adam decoupled weight decay shrinks parameters with zero gradient") {
  Parameter p("p", Tensor::vector({2.0}));
  Adam opt({.lr = 0.5, .weight_decay = 0.1}, {&p});
  opt.zero_grad();
  opt.step();
  CHECK(p.value[0] == doctest::Approx(2.0 * (1.0 - 0.05)));
}

TEST_CASE("grad_check on linear regression is essentially exact") {
  Rng rng(5);
  Tensor x = random_tensor({20, 3}, rng);
  Tensor y = random_tensor({20, 1}, rng);
  Parameter w("w", random_tensor({1, 3}, rng));
  Parameter b("b", random_tensor({1}, rng));
  std::vector<Parameter*> ps{&w, &b};
  auto build = [&](Tape& t) { return sum_squares(sub(linear(t.constant(x), t.param(w), t.param(b)), t.constant(y))); };
  CHECK(grad_check(build, ps).max_rel_error < 1e-7);

  // Analytic gradient in closed form: 2 X^T (Xw + b - y).
  Tensor g({3});
  for (std::size_t r = 0; r < 20; ++r) {
    double pred = b.value[0];
    for (std::size_t j = 0; j < 3; ++j) pred += x.at(r, j) * w.value[j];
    for (std::size_t j = 0; j < 3; ++j) g[j] += 2.0 * (pred - y[r]) * x.at(r, j);
  }
  for (std::size_t j = 0; j < 3; ++j) CHECK(w.grad[j] == doctest::Approx(g[j]).epsilon(1e-12));
}

TEST_CASE("grad_check with no parameters reports zero") {
  std::vector<Parameter*> none;
  auto build = [](Tape& t) { return sum(t.constant(Tensor::scalar(1.0))); };
  CHECK(grad_check(build, none).max_rel_error == 0.0);
}

TEST_CASE("rng substreams are independent of each other and reproducible") {
  CHECK(Rng::derive(7, "data") == Rng::derive(7, "data"));
  CHECK(Rng::derive(7, "data") != Rng::derive(7, "init"));
  Rng a(Rng::derive(7, "data"));
  const std::string state = a.state();
  const double first = a.normal();
  Rng b;
  b.set_state(state);
  CHECK(b.normal() == first);
}

TEST_CASE("gelu agrees with the erf definition across the real line") {
  std::vector<double> xs;
  for (double v = -12.0; v <= 12.0; v += 0.0137) xs.push_back(v);
  xs.insert(xs.end(), {0.0, -0.0, 1e-300, -1e-12, 2.0 * std::sqrt(2.0), -6.0 * std::sqrt(2.0), 40.0, -40.0});
  Parameter p("x", Tensor::vector(xs));
  Tape tape;
  Var y = gelu(tape.param(p));
  tape.backward(sum(y));
  double worst_value = 0.0, worst_slope = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double v = xs[i];
    const double cdf = 0.5 * std::erfc(-v / std::sqrt(2.0));
    const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
    worst_value = std::max(worst_value, std::abs(y.value()[i] - v * cdf) / std::max(1.0, std::abs(v)));
    worst_slope = std::max(worst_slope, std::abs(p.grad[i] - (cdf + v * pdf)));
  }
  CHECK(worst_value < 1e-15);
  CHECK(worst_slope < 1e-14);
  CHECK(y.value()[xs.size() - 8] == 0.0);
}
