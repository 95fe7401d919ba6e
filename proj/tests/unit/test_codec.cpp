#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "dfe/codec/blendshape.hpp"
#include "dfe/codec/diagnostics.hpp"
#include "dfe/codec/heatmap.hpp"
#include "dfe/codec/tokens.hpp"
#include "dfe/numcore/binary_io.hpp"
#include "dfe/numcore/errors.hpp"
#include "dfe/train/feature_io.hpp"

using namespace dfe;
using namespace dfe::codec;
using io::FormatError;
using io::FormatErrorKind;
using nc::Tensor;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() : path(std::filesystem::temp_directory_path() / ("dfe_test_codec_" + std::to_string(::getpid()))) {
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

// Two vertices, three dyadic basis fields.
BlendshapeModel toy() {
  BlendshapeModel bm;
  bm.mesh = Tensor::matrix(2, 3, {0, 0, 0, 1, 1, 1});
  bm.basis = Tensor::matrix(3, 6, {0.5, 0, 0, 0, 0, 0,  //
                                   0, 0.25, 0, 0, 0, 0.125,
                                   0, 0, 0, 1, 0, 0});
  return bm;
}

model::Hyperparams small_hp(std::size_t dim = 6) {
  model::Hyperparams hp;
  hp.input_dim = dim;
  hp.tokens = 2;
  hp.token_dim = dim / 2;
  hp.hidden = 8;
  hp.layers = 1;
  hp.heads = 2;
  hp.latent_dim = 4;
  hp.codebook_size = 5;
  hp.stages = 3;
  return hp;
}

model::Model random_model(const model::Hyperparams& hp, std::uint64_t seed = 11) {
  model::Model m(hp);
  Rng rng(seed);
  m.initialize(rng);
  return m;
}

FormatErrorKind blendshape_error(const std::string& path) {
  try {
    load_blendshapes(path);
  } catch (const FormatError& e) {
    return e.kind();
  }
  FAIL("blendshapes unexpectedly loaded");
  return FormatErrorKind::malformed;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const std::string& path, const std::string& bytes) {
  std::ofstream(path, std::ios::binary) << bytes;
}

}  // namespace

TEST_CASE("zero coefficients leave the template untouched") {
  const BlendshapeModel bm = synth_blendshapes({.vertices = 64, .dim = 7, .seed = 2});
  const std::vector<double> zero(7, 0.0);
  const Tensor out = deform(zero, bm);
  REQUIRE(out.shape() == bm.mesh.shape());
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == bm.mesh[i]);
}

TEST_CASE("a unit coefficient adds its basis field") {
  const BlendshapeModel bm = toy();
  const Tensor out = deform(std::vector<double>{0, 1, 0}, bm);
  const std::vector<double> expect{0, 0.25, 0, 1, 1, 1.125};
  for (std::size_t i = 0; i < 6; ++i) CHECK(out[i] == expect[i]);
}

TEST_CASE("deformation is linear in the coefficients") {
  const BlendshapeModel bm = synth_blendshapes({.vertices = 80, .dim = 5, .seed = 4});
  const std::vector<double> a{0.3, -1.0, 0.0, 2.0, 0.5}, b{-0.7, 0.25, 1.5, 0.0, 1.0};
  std::vector<double> ab(5);
  for (std::size_t j = 0; j < 5; ++j) ab[j] = a[j] + b[j];
  const Tensor ma = deform(a, bm), mb = deform(b, bm), mab = deform(ab, bm);
  for (std::size_t i = 0; i < mab.size(); ++i)
    CHECK(mab[i] - bm.mesh[i] == doctest::Approx((ma[i] - bm.mesh[i]) + (mb[i] - bm.mesh[i])).epsilon(1e-12));
}

TEST_CASE("deform rejects a coefficient vector of the wrong length") {
  CHECK_THROWS_AS(deform(std::vector<double>{1, 2}, toy()), ContractViolation);
}

TEST_CASE("sphere blendshapes are deterministic and localized") {
  const SphereSpec spec{.vertices = 200, .dim = 6, .seed = 9};
  const BlendshapeModel a = synth_blendshapes(spec), b = synth_blendshapes(spec);
  REQUIRE(a.vertices() == 200);
  REQUIRE(a.dim() == 6);
  CHECK(a.mesh.data().size() == b.mesh.data().size());
  for (std::size_t i = 0; i < a.basis.size(); ++i) REQUIRE(a.basis[i] == b.basis[i]);
  for (std::size_t v = 0; v < 200; ++v) {
    const double r = std::hypot(a.mesh.at(v, 0), a.mesh.at(v, 1), a.mesh.at(v, 2));
    CHECK(r == doctest::Approx(1.0).epsilon(1e-6));
  }
  for (std::size_t j = 0; j < 6; ++j) {
    std::size_t moved = 0;
    for (std::size_t v = 0; v < 200; ++v)
      if (a.basis.at(j, 3 * v) != 0.0 || a.basis.at(j, 3 * v + 1) != 0.0 || a.basis.at(j, 3 * v + 2) != 0.0) ++moved;
    CHECK(moved > 0);
    CHECK(moved < 200);
  }
  const BlendshapeModel c = synth_blendshapes({.vertices = 200, .dim = 6, .seed = 10});
  bool differs = false;
  for (std::size_t i = 0; i < a.basis.size(); ++i) differs |= a.basis[i] != c.basis[i];
  CHECK(differs);
}

TEST_CASE("colormap endpoints and clamping") {
  CHECK(colormap(0.0) == Rgb{0, 0, 255});
  CHECK(colormap(1.0) == Rgb{255, 0, 0});
  CHECK(colormap(-3.0) == Rgb{0, 0, 255});
  CHECK(colormap(7.0) == Rgb{255, 0, 0});
  CHECK(colormap(0.5) == Rgb{128, 0, 128});
}

TEST_CASE("heatmap of the neutral face is all blue") {
  const BlendshapeModel bm = toy();
  const HeatmapResult h = heatmap(std::vector<double>{0, 0, 0}, bm);
  CHECK(h.normalizer == 0.0);
  for (double d : h.distances) CHECK(d == 0.0);
  for (const Rgb& c : h.colors) CHECK(c == Rgb{0, 0, 255});
}

TEST_CASE("heatmap distances are per-vertex displacement norms") {
  const BlendshapeModel bm = toy();
  const HeatmapResult h = heatmap(std::vector<double>{0, 4, 0}, bm);
  REQUIRE(h.distances.size() == 2);
  CHECK(h.distances[0] == 1.0);
  CHECK(h.distances[1] == 0.5);
  CHECK(h.normalizer == 1.0);
  CHECK(h.colors[0] == Rgb{255, 0, 0});
  CHECK(h.colors[1] == Rgb{128, 0, 128});
}

TEST_CASE("the most displaced vertex is red under max scaling") {
  const BlendshapeModel bm = synth_blendshapes({.vertices = 150, .dim = 4, .seed = 1});
  const HeatmapResult h = heatmap(std::vector<double>{1.0, -0.5, 2.0, 0.0}, bm);
  std::size_t arg = 0;
  for (std::size_t v = 1; v < h.distances.size(); ++v)
    if (h.distances[v] > h.distances[arg]) arg = v;
  CHECK(h.colors[arg] == Rgb{255, 0, 0});
  for (const Rgb& c : h.colors) CHECK(int(c[0]) + int(c[2]) >= 254);
}

TEST_CASE("p99 scaling uses the nearest-rank percentile") {
  BlendshapeModel bm;
  const std::size_t n = 200;
  bm.mesh = Tensor({n, 3});
  bm.basis = Tensor({1, n * 3});
  auto with_outliers = [&](std::size_t ones) {
    for (std::size_t v = 0; v < n; ++v) bm.basis.at(0, 3 * v) = v < ones ? 1.0 : 10.0;
  };
  // rank ceil(0.99 * 200) = 198
  with_outliers(198);
  const HeatmapResult h = heatmap(std::vector<double>{1.0}, bm, HeatmapScale::p99);
  CHECK(h.normalizer == 1.0);
  CHECK(h.colors[0] == Rgb{255, 0, 0});
  CHECK(h.colors[199] == Rgb{255, 0, 0});
  CHECK(heatmap(std::vector<double>{1.0}, bm, HeatmapScale::max).normalizer == 10.0);
  CHECK(heatmap(std::vector<double>{1.0}, bm, HeatmapScale::max).colors[0] == Rgb{26, 0, 230});
  with_outliers(197);
  CHECK(heatmap(std::vector<double>{1.0}, bm, HeatmapScale::p99).normalizer == 10.0);
}

TEST_CASE("PLY output parses back") {
  const BlendshapeModel bm = toy();
  const HeatmapResult h = heatmap(std::vector<double>{0, 4, 0}, bm);
  std::ostringstream os;
  write_ply(os, deform(std::vector<double>{0, 4, 0}, bm), h.colors);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "ply");
  std::size_t count = 0, props = 0;
  while (std::getline(is, line) && line != "end_header") {
    if (line.rfind("element vertex ", 0) == 0) count = std::stoul(line.substr(15));
    if (line.rfind("property ", 0) == 0) ++props;
  }
  REQUIRE(line == "end_header");
  CHECK(count == 2);
  CHECK(props == 6);
  double x, y, z;
  unsigned r, g, b;
  is >> x >> y >> z >> r >> g >> b;
  CHECK(x == 0.0);
  CHECK(y == 1.0);
  CHECK(z == 0.0);
  CHECK(r == 255);
  CHECK(g == 0);
  CHECK(b == 0);
  is >> x >> y >> z >> r >> g >> b;
  CHECK(z == 1.5);
  CHECK(r == 128);
  CHECK(b == 128);
  CHECK_THROWS_AS(write_ply(os, bm.mesh, {}), ContractViolation);
}

TEST_CASE("distance CSV round trips exactly") {
  const std::vector<double> d{0.1, 1.0 / 3.0, 2.5e-17};
  std::ostringstream os;
  write_distances_csv(os, d);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "vertex,d");
  for (std::size_t v = 0; v < d.size(); ++v) {
    std::getline(is, line);
    const auto f = train::split_csv(line);
    CHECK(std::stoul(f[0]) == v);
    CHECK(std::strtod(f[1].c_str(), nullptr) == d[v]);
  }
}

TEST_CASE("blendshape files round trip at single precision") {
  TempDir dir;
  const BlendshapeModel bm = synth_blendshapes({.vertices = 40, .dim = 3, .seed = 5});
  save_blendshapes(bm, dir.file("bs.dfeb"));
  const BlendshapeModel back = load_blendshapes(dir.file("bs.dfeb"));
  REQUIRE(back.mesh.shape() == bm.mesh.shape());
  REQUIRE(back.basis.shape() == bm.basis.shape());
  for (std::size_t i = 0; i < bm.mesh.size(); ++i) CHECK(back.mesh[i] == bm.mesh[i]);
  for (std::size_t i = 0; i < bm.basis.size(); ++i) CHECK(back.basis[i] == bm.basis[i]);
}

TEST_CASE("corrupt blendshape files are rejected by kind") {
  TempDir dir;
  const BlendshapeModel bm = synth_blendshapes({.vertices = 10, .dim = 2, .seed = 5});
  save_blendshapes(bm, dir.file("ok.dfeb"));
  const std::string good = slurp(dir.file("ok.dfeb"));

  spit(dir.file("t.dfeb"), good.substr(0, good.size() - 3));
  CHECK(blendshape_error(dir.file("t.dfeb")) == FormatErrorKind::truncated);
  spit(dir.file("t2.dfeb"), good.substr(0, 6));
  CHECK(blendshape_error(dir.file("t2.dfeb")) == FormatErrorKind::truncated);

  std::string bad = good;
  bad[0] = 'X';
  spit(dir.file("m.dfeb"), bad);
  CHECK(blendshape_error(dir.file("m.dfeb")) == FormatErrorKind::bad_magic);

  bad = good;
  bad[4] = 9;
  spit(dir.file("v.dfeb"), bad);
  CHECK(blendshape_error(dir.file("v.dfeb")) == FormatErrorKind::version_skew);

  spit(dir.file("x.dfeb"), good + "junk");
  CHECK(blendshape_error(dir.file("x.dfeb")) == FormatErrorKind::malformed);

  CHECK_THROWS_AS(load_blendshapes(dir.file("missing.dfeb")), io::FileError);
}

TEST_CASE("decomposition reproduces the reconstruction bit for bit") {
  model::Model m = random_model(small_hp());
  const std::vector<rvq::TokenSequence> seqs{{0, 1, 2}, {4, 4, 4}, {3, 0, 3}};
  for (const auto& seq : seqs) {
    const Decomposition d = decompose(m, seq);
    REQUIRE(d.parts.size() == 3);
    Tensor acc = d.bias;
    for (const Tensor& p : d.parts)
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += p[i];
    for (std::size_t i = 0; i < acc.size(); ++i) CHECK(acc[i] == d.total[i]);
  }
}

TEST_CASE("identity decoder makes a template equal to its code") {
  model::Hyperparams hp = small_hp(4);
  hp.latent_dim = 4;
  model::Model m = random_model(hp);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) m.decoder().w.value.at(i, j) = i == j ? 1.0 : 0.0;
  for (std::size_t i = 0; i < 4; ++i) m.decoder().b.value[i] = 0.0;
  for (std::size_t k = 0; k < hp.codebook_size; ++k) {
    const Tensor t = token_template(m, k);
    const Tensor o = token_template(m, k, false);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(t[i] == m.codebook().entry(k)[i]);
      CHECK(o[i] == t[i]);
    }
  }
  CHECK_THROWS_AS(token_template(m, hp.codebook_size), ContractViolation);
}

TEST_CASE("tokenizing a feature file") {
  TempDir dir;
  model::Model m = random_model(small_hp());
  train::Dataset data;
  data.rows = Tensor({7, 6});
  Rng rng(1);
  for (double& v : data.rows.data()) v = rng.normal();
  for (std::size_t c = 0; c < 6; ++c) data.rows.at(6, c) = data.rows.at(2, c);
  for (std::size_t r = 0; r < 7; ++r) data.ids.push_back("f" + std::to_string(r));
  train::write_features_csv(data, dir.file("feat.csv"));

  std::ostringstream a, b, lat;
  CHECK(tokenize_file(dir.file("feat.csv"), m, a, {.chunk_rows = 3, .latents = &lat}) == 7);
  CHECK(tokenize_file(dir.file("feat.csv"), m, b, {.chunk_rows = 1}) == 7);
  CHECK(a.str() == b.str());
  spit(dir.file("tok.csv"), a.str());
  const TokenTable t = read_tokens(dir.file("tok.csv"));
  REQUIRE(t.size() == 7);
  CHECK(t.stages() == 3);
  CHECK(t.ids[0] == "f0");
  CHECK(t.tokens[6] == t.tokens[2]);
  const auto direct = m.tokenize(data.rows);
  for (std::size_t r = 0; r < 7; ++r) CHECK(t.tokens[r] == direct[r]);
  for (const auto& seq : t.tokens)
    for (std::uint32_t k : seq) CHECK(k < 5);

  std::istringstream ls(lat.str());
  std::string line;
  std::getline(ls, line);
  CHECK(line == "id,z_0,z_1,z_2,z_3");
  std::size_t rows = 0;
  while (std::getline(ls, line)) ++rows;
  CHECK(rows == 7);
}

TEST_CASE("default model emits four tokens per row") {
  TempDir dir;
  model::Model m = random_model(model::Hyperparams{}, 3);
  train::Dataset data;
  data.rows = Tensor({2, 50}, 0.1);
  train::write_features_binary(data, dir.file("f.bin"));
  std::ostringstream os;
  tokenize_file(dir.file("f.bin"), m, os);
  spit(dir.file("t.csv"), os.str());
  const TokenTable t = read_tokens(dir.file("t.csv"));
  REQUIRE(t.size() == 2);
  CHECK(t.stages() == 4);
  for (const auto& seq : t.tokens)
    for (std::uint32_t k : seq) CHECK(k < 64);
}

TEST_CASE("tokenizing edge cases") {
  TempDir dir;
  model::Model m = random_model(small_hp());
  spit(dir.file("empty.csv"), "");
  std::ostringstream os;
  CHECK(tokenize_file(dir.file("empty.csv"), m, os) == 0);
  CHECK(os.str() == "id,k_1,k_2,k_3\n");

  spit(dir.file("wide.csv"), "f_0,f_1,f_2\n1,2,3\n");
  try {
    std::ostringstream sink;
    tokenize_file(dir.file("wide.csv"), m, sink);
    FAIL("dimension mismatch accepted");
  } catch (const FormatError& e) {
    CHECK(e.kind() == FormatErrorKind::shape_mismatch);
  }
}

TEST_CASE("token tables reject malformed input") {
  TempDir dir;
  spit(dir.file("empty.csv"), "");
  CHECK(read_tokens(dir.file("empty.csv")).size() == 0);

  auto kind = [&](const std::string& body) {
    spit(dir.file("t.csv"), body);
    try {
      read_tokens(dir.file("t.csv"));
    } catch (const FormatError& e) {
      return e.kind();
    }
    FAIL("token table unexpectedly parsed");
    return FormatErrorKind::truncated;
  };
  CHECK(kind("id,k_1,k_2\na,1\n") == FormatErrorKind::shape_mismatch);
  CHECK(kind("id,k_1,k_2\na,1,x\n") == FormatErrorKind::malformed);
  CHECK(kind("id,k_1,k_2\na,1,-2\n") == FormatErrorKind::malformed);
  CHECK(kind("name,k_1\na,1\n") == FormatErrorKind::malformed);
  CHECK(kind("id,k_2\na,1\n") == FormatErrorKind::malformed);
  CHECK_THROWS_AS(read_tokens(dir.file("nope.csv")), io::FileError);
}

TEST_CASE("redundancy of identical and orthogonal displacements") {
  const Tensor same = Tensor::matrix(3, 3, {1, 2, 2, 1, 2, 2, 1, 2, 2});
  Redundancy r = displacement_redundancy(same);
  CHECK(r.pairs == 3);
  CHECK(r.mean_dot == doctest::Approx(9.0));
  CHECK(r.mean_cosine == doctest::Approx(1.0));

  const Tensor ortho = Tensor::matrix(3, 3, {2, 0, 0, 0, 3, 0, 0, 0, 0});
  r = displacement_redundancy(ortho);
  CHECK(r.mean_dot == 0.0);
  CHECK(r.mean_cosine == 0.0);
  CHECK(r.zero_codes == 1);
  CHECK(r.cosine_pairs == 1);
}

TEST_CASE("code displacements follow the blendshape map") {
  const BlendshapeModel bm = synth_blendshapes({.vertices = 30, .dim = 6, .seed = 8});
  model::Model m = random_model(small_hp());
  const Tensor u = code_displacements(m, bm);
  REQUIRE(u.rows() == 5);
  REQUIRE(u.cols() == 90);
  for (std::size_t k = 0; k < 5; ++k) {
    const Tensor face = deform(m.token_template(k).data(), bm);
    for (std::size_t i = 0; i < 90; ++i) CHECK(u.at(k, i) == face[i] - bm.mesh[i]);
  }
  const Redundancy r = displacement_redundancy(m, bm);
  CHECK(r.pairs == 10);
  CHECK(std::abs(r.mean_cosine) <= 1.0);
  CHECK_THROWS_AS(code_displacements(m, synth_blendshapes({.vertices = 30, .dim = 5})), ContractViolation);
}

TEST_CASE("displacement fractions") {
  // one code moves vertex 0 by 3 and vertex 1 by 1; the other moves nothing
  const Tensor u = Tensor::matrix(2, 6, {3, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0});
  const auto f = displacement_percentiles(u, {0.0, 0.5, 1.0, 2.0, 3.0});
  const std::vector<double> expect{0.5, 0.5, 0.25, 0.25, 0.0};
  for (std::size_t i = 0; i < f.size(); ++i) CHECK(f[i] == expect[i]);

  const BlendshapeModel bm = synth_blendshapes({.vertices = 50, .dim = 6, .seed = 3});
  model::Model m = random_model(small_hp());
  const Tensor disp = code_displacements(m, bm);
  const auto grid = threshold_grid(disp, 20);
  CHECK(grid.front() == 0.0);
  const auto frac = displacement_percentiles(disp, grid);
  for (std::size_t i = 1; i < frac.size(); ++i) CHECK(frac[i] <= frac[i - 1]);
  CHECK(frac.back() == 0.0);

  std::ostringstream os;
  write_percentiles_csv(os, grid, frac);
  CHECK(os.str().rfind("threshold,fraction\n", 0) == 0);
}
