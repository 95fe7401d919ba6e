#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "dfe/numcore/errors.hpp"
#include "dfe/numcore/ops.hpp"
#include "dfe/rvq/quantizer.hpp"

using namespace dfe;
using namespace dfe::rvq;
using nc::Tensor;

namespace {

Codebook random_codebook(std::size_t k, std::size_t d, Rng& rng) {
  Tensor e({k, d});
  for (double& v : e.data()) v = rng.normal();
  return Codebook(std::move(e));
}

// Independent oracle: materialise every distance, take the first minimum.
TokenSequence brute_force_tokens(std::vector<double> r, const Codebook& cb, std::size_t stages) {
  TokenSequence out;
  for (std::size_t s = 0; s < stages; ++s) {
    std::vector<double> dist(cb.size());
    for (std::size_t k = 0; k < cb.size(); ++k) {
      double acc = 0.0;
      for (std::size_t j = 0; j < r.size(); ++j) acc += (r[j] - cb.entry(k)[j]) * (r[j] - cb.entry(k)[j]);
      dist[k] = acc;
    }
    const auto best = std::uint32_t(std::min_element(dist.begin(), dist.end()) - dist.begin());
    out.push_back(best);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] -= cb.entry(best)[j];
  }
  return out;
}

}  // namespace

TEST_CASE("two-code hand example") {
  Codebook cb(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  const std::vector<double> z0{0.9, 0.1};
  auto res = quantize(z0, cb, 2);
  CHECK(res.tokens == TokenSequence{0, 1});
  CHECK(res.residuals.at(1, 0) == doctest::Approx(-0.1));
  CHECK(res.residuals.at(1, 1) == doctest::Approx(0.1));
  CHECK(res.residuals.at(2, 0) == doctest::Approx(-0.1));
  CHECK(res.residuals.at(2, 1) == doctest::Approx(-0.9));
  CHECK(res.quantized == Tensor::vector({1.0, 1.0}));
}

TEST_CASE("exact code match is followed by the zero row") {
  Rng rng(1);
  Codebook cb = random_codebook(6, 3, rng);
  for (double& v : cb.entries().value.row(0)) v = 0.0;
  std::vector<double> z0(cb.entry(3).begin(), cb.entry(3).end());
  auto res = quantize(z0, cb, 4);
  CHECK(res.tokens == TokenSequence{3, 0, 0, 0});
  for (std::size_t j = 0; j < 3; ++j) CHECK(res.quantized[j] == cb.entry(3)[j]);
}

TEST_CASE("staged argmin equals brute force on random instances") {
  Rng rng(2);
  std::size_t agree = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    Codebook cb = random_codebook(8, 4, rng);
    std::vector<double> z0(4);
    for (double& v : z0) v = rng.normal(0.0, 2.0);
    agree += quantize(z0, cb, 3).tokens == brute_force_tokens(z0, cb, 3);
  }
  CHECK(agree == 1000);
}

TEST_CASE("telescoping identity") {
  Rng rng(3);
  SUBCASE("exact on dyadic inputs") {
    // Values on a 2^-12 grid with small magnitude: every sum is representable.
    auto dyadic = [&] { return double(std::int64_t(rng.index(16384)) - 8192) / 4096.0; };
    for (int trial = 0; trial < 200; ++trial) {
      Tensor e({8, 4});
      for (double& v : e.data()) v = dyadic();
      Codebook cb(std::move(e));
      std::vector<double> z0(4);
      for (double& v : z0) v = dyadic();
      auto res = quantize(z0, cb, 4);
      for (std::size_t j = 0; j < 4; ++j) CHECK(res.quantized[j] + res.residuals.at(4, j) == z0[j]);
    }
  }
  SUBCASE("within rounding on general inputs") {
    for (int trial = 0; trial < 200; ++trial) {
      Codebook cb = random_codebook(8, 4, rng);
      std::vector<double> z0(4);
      for (double& v : z0) v = rng.normal();
      auto res = quantize(z0, cb, 4);
      for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(res.quantized[j] + res.residuals.at(4, j) - z0[j]) < 1e-14);
    }
  }
}

TEST_CASE("residual norms never grow when zero is a code") {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    Codebook cb = random_codebook(8, 5, rng);
    for (double& v : cb.entries().value.row(5)) v = 0.0;
    std::vector<double> z0(5);
    for (double& v : z0) v = rng.normal(0.0, 3.0);
    auto res = quantize(z0, cb, 6);
    for (std::size_t i = 1; i <= 6; ++i) {
      double prev = 0.0, cur = 0.0;
      for (std::size_t j = 0; j < 5; ++j) {
        prev += res.residuals.at(i - 1, j) * res.residuals.at(i - 1, j);
        cur += res.residuals.at(i, j) * res.residuals.at(i, j);
      }
      CHECK(cur <= prev);
    }
  }
}

TEST_CASE("ties resolve to the lowest index") {
  Codebook cb(Tensor::matrix(3, 2, {1, 0, -1, 0, 1, 0}));
  CHECK(nearest_code(std::vector<double>{0.0, 0.0}, cb) == 0);
  CHECK(nearest_code(std::vector<double>{0.9, 0.0}, cb) == 0);
}

TEST_CASE("quantize rejects bad input") {
  Codebook empty;
  CHECK_THROWS_AS(quantize(std::vector<double>{}, empty, 1), ContractViolation);
  Codebook cb(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  CHECK_THROWS_AS(quantize(std::vector<double>{1.0}, cb, 1), ContractViolation);
  CHECK_THROWS_AS(quantize(std::vector<double>{NAN, 0.0}, cb, 1), NumericFault);
}

TEST_CASE("usage counters count emitted tokens") {
  Codebook cb(4, 2);
  cb.record(TokenSequence{0, 1, 1});
  cb.record(TokenSequence{3, 1});
  CHECK(cb.usage() == std::vector<std::uint64_t>{1, 3, 0, 1});
  cb.reset_usage();
  CHECK(cb.usage() == std::vector<std::uint64_t>{0, 0, 0, 0});
}

TEST_CASE("straight-through forward value is the quantized vector") {
  nc::Tape tape;
  Tensor z0 = Tensor::vector({0.3, -0.2});
  Tensor zq = Tensor::vector({1.0, 0.0});
  auto out = straight_through(tape.constant(z0), zq);
  CHECK(out.value() == zq);
}

TEST_CASE("straight-through jacobian is the identity") {
  // f(z) = sum(w * z^3); d f(ST(z0)) / d z0 must equal grad f at zq, which we
  // take by central differences of f alone.
  Tensor w = Tensor::vector({0.5, -1.5, 2.0});
  Tensor zq = Tensor::vector({0.7, 0.2, -0.4});
  auto f = [&](const Tensor& z) {
    double s = 0.0;
    for (std::size_t i = 0; i < 3; ++i) s += w[i] * z[i] * z[i] * z[i];
    return s;
  };
  nc::Parameter z0("z0", Tensor::vector({5.0, 5.0, 5.0}));
  nc::Tape tape;
  nc::Var st = straight_through(tape.param(z0), zq);
  tape.backward(nc::sum(nc::mul(tape.constant(w), nc::mul(st, nc::mul(st, st)))));
  for (std::size_t i = 0; i < 3; ++i) {
    Tensor up = zq, down = zq;
    up[i] += 1e-6;
    down[i] -= 1e-6;
    const double fd = (f(up) - f(down)) / 2e-6;
    CHECK(z0.grad[i] == doctest::Approx(fd).epsilon(1e-8));
  }
}

TEST_CASE("codes receive no gradient through the straight-through path") {
  Codebook cb(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  nc::Parameter z0("z0", Tensor::vector({0.9, 0.1}));
  auto res = quantize(z0.value.data(), cb, 2);
  nc::Tape tape;
  tape.param(cb.entries());
  nc::Var st = straight_through(tape.param(z0), res.quantized);
  tape.backward(nc::sum_squares(st));
  cb.entries().zero_grad();
  CHECK(std::all_of(cb.entries().grad.data().begin(), cb.entries().grad.data().end(), [](double g) { return g == 0.0; }));
}

TEST_CASE("dead-code reinit") {
  Rng rng(5);
  Tensor latents({4, 3});
  for (double& v : latents.data()) v = rng.normal();

  SUBCASE("all codes used leaves the codebook untouched") {
    Codebook cb = random_codebook(3, 3, rng);
    const Tensor before = cb.entries().value;
    cb.record(TokenSequence{0, 1, 2});
    Rng r(9);
    CHECK(reinit_dead_codes(cb, latents, 1, r).rows.empty());
    CHECK(cb.entries().value == before);
  }
  SUBCASE("a never-used code is re-seeded from a sampled latent") {
    Codebook cb = random_codebook(3, 3, rng);
    cb.record(TokenSequence{0, 2, 2});
    Rng r(11);
    auto report = reinit_dead_codes(cb, latents, 1, r, 0.01);
    REQUIRE(report.rows == std::vector<std::size_t>{1});
    Rng replay(11);
    const std::size_t src = replay.index(4);
    for (std::size_t j = 0; j < 3; ++j) CHECK(cb.entry(1)[j] == latents.at(src, j) + replay.normal(0.0, 0.01));
    CHECK(cb.usage() == std::vector<std::uint64_t>{0, 0, 0});
  }
  SUBCASE("threshold zero is a no-op") {
    Codebook cb = random_codebook(3, 3, rng);
    const Tensor before = cb.entries().value;
    Rng r(1);
    CHECK(reinit_dead_codes(cb, latents, 0, r).rows.empty());
    CHECK(cb.entries().value == before);
  }
  SUBCASE("empty batch is an error") {
    Codebook cb = random_codebook(3, 3, rng);
    Rng r(1);
    CHECK_THROWS_AS(reinit_dead_codes(cb, Tensor({0, 3}), 1, r), ContractViolation);
  }
}

TEST_CASE("EMA update with zero decay moves assigned codes to their means") {
  Codebook cb(Tensor::matrix(2, 2, {0, 0, 5, 5}));
  EmaUpdater ema(cb, 0.0, 1e-9);
  Tensor inputs = Tensor::matrix(3, 2, {1, 1, 3, 3, 4, 6});
  const std::vector<std::uint32_t> tokens{0, 0, 1};
  ema.update(cb, inputs, tokens);
  CHECK(cb.entry(0)[0] == doctest::Approx(2.0));
  CHECK(cb.entry(1)[1] == doctest::Approx(6.0));
}
