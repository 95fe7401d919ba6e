// End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
// exits nonzero when any criterion fails. `acceptance 4 6` runs a subset.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "dfe/analysis/bow.hpp"
#include "dfe/analysis/classify.hpp"
#include "dfe/analysis/diversity.hpp"
#include "dfe/analysis/metrics.hpp"
#include "dfe/analysis/retrieval.hpp"
#include "dfe/codec/blendshape.hpp"
#include "dfe/codec/diagnostics.hpp"
#include "dfe/codec/heatmap.hpp"
#include "dfe/model/gradcheck.hpp"
#include "dfe/numcore/binary_io.hpp"
#include "dfe/rvq/quantizer.hpp"
#include "dfe/train/checkpoint.hpp"
#include "dfe/train/dataset.hpp"
#include "dfe/train/feature_io.hpp"
#include "dfe/train/trainer.hpp"

using namespace dfe;
using nc::Tensor;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  // Records one sub-check; the criterion passes only if all of them do.
  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [failed]");
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// The small model used by the recovery, downstream and pipeline checks.
model::Hyperparams small_hp(std::uint64_t seed) {
  model::Hyperparams hp;
  hp.hidden = 32;
  hp.layers = 2;
  hp.codebook_size = 16;
  hp.stages = 3;
  hp.lr = 1e-3;
  hp.seed = seed;
  return hp;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return aa > 0 && bb > 0 ? ab / std::sqrt(aa * bb) : 0.0;
}

std::vector<rvq::TokenSequence> tokens_of(model::Model& m, const Tensor& rows) {
  return m.tokenize(rows);
}

// Labelled two-class video corpus and a model trained on its frames.
struct VideoFixture {
  train::SynthResult videos;
  std::unique_ptr<train::TrainState> state;
};

VideoFixture& video_fixture() {
  static std::unique_ptr<VideoFixture> fx;
  if (!fx) {
    fx = std::make_unique<VideoFixture>();
    train::VideoSpec spec;
    spec.base.seed = 606;
    spec.classes = 2;
    spec.videos_per_class = 25;
    spec.frames_per_video = 50;
    fx->videos = train::synth_videos(spec);
    model::Hyperparams hp = small_hp(606);
    hp.epochs = 60;
    hp.batch_size = 256;
    fx->state = std::make_unique<train::TrainState>(hp);
    train::train(*fx->state, fx->videos.data);
  }
  return *fx;
}

// ---------------------------------------------------------------------------

Outcome gradient_fidelity() {
  model::Hyperparams hp;
  hp.input_dim = 6;
  hp.tokens = 2;
  hp.token_dim = 3;
  hp.hidden = 8;
  hp.layers = 1;
  hp.heads = 2;
  hp.latent_dim = 6;
  hp.codebook_size = 8;
  hp.stages = 2;
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = model::check_model_gradients(hp, 1);
  const double t = seconds_since(t0);
  Outcome o;
  o.check(r.max_rel_error() < 1e-4, "max rel err " + fmt("%.3g", r.max_rel_error()) + " < 1e-4");
  o.check(t < 30.0, "runtime " + fmt("%.2f", t) + " s < 30 s");
  return o;
}

Outcome quantizer_oracle() {
  constexpr std::size_t K = 8, D = 4, L = 3, kInstances = 1000;
  std::size_t agree = 0, exact = 0, dyadic_agree = 0, dyadic_exact = 0;
  double worst = 0.0;
  Rng rng(Rng::derive(202, "quantizer"));
  for (std::size_t inst = 0; inst < 2 * kInstances; ++inst) {
    const bool dyadic = inst >= kInstances;
    // Dyadic instances live on a 2^-8 grid, where every sum and difference is exact.
    auto draw = [&] { return dyadic ? std::round(rng.uniform(-2.0, 2.0) * 256.0) / 256.0 : rng.normal(); };
    Tensor entries({K, D});
    for (double& v : entries.data()) v = draw();
    std::vector<double> z0(D);
    for (double& v : z0) v = 2.0 * draw();
    const rvq::Codebook cb(entries);
    const auto q = rvq::quantize(z0, cb, L);

    std::vector<double> r = z0;
    rvq::TokenSequence brute;
    for (std::size_t stage = 0; stage < L; ++stage) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < K; ++k) {
        double d = 0;
        for (std::size_t j = 0; j < D; ++j) d += (r[j] - entries.at(k, j)) * (r[j] - entries.at(k, j));
        if (d < best_d) best_d = d, best = k;
      }
      brute.push_back(static_cast<std::uint32_t>(best));
      for (std::size_t j = 0; j < D; ++j) r[j] -= entries.at(best, j);
    }
    const bool same = brute == q.tokens;
    bool identity = true;
    for (std::size_t j = 0; j < D; ++j) {
      const double sum = q.quantized[j] + q.residuals.at(L, j);
      identity = identity && sum == z0[j];
      worst = std::max(worst, std::abs(sum - z0[j]));
    }
    (dyadic ? dyadic_agree : agree) += same;
    (dyadic ? dyadic_exact : exact) += identity;
  }
  Outcome o;
  o.check(agree == kInstances, "random tokens agree " + std::to_string(agree) + "/1000");
  o.check(dyadic_agree == kInstances, "grid tokens agree " + std::to_string(dyadic_agree) + "/1000");
  o.check(dyadic_exact == kInstances, "z_q + z_L == z_0 exactly on grid " + std::to_string(dyadic_exact) + "/1000");
  o.detail += "; random inputs exact " + std::to_string(exact) + "/1000, max rounding " + fmt("%.2g", worst);
  return o;
}

Outcome determinism() {
  train::SynthSpec spec;
  spec.samples = 1500;
  spec.seed = 303;
  const auto data = train::synth_generate(spec).data;
  model::Hyperparams hp = small_hp(303);
  hp.epochs = 4;
  hp.batch_size = 128;

  const auto dir = std::filesystem::temp_directory_path() / ("dfe_acceptance_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  std::string ck[2], log[2];
  for (int run = 0; run < 2; ++run) {
    train::TrainState s(hp);
    std::ostringstream lg;
    train::TrainOptions opt;
    opt.loss_log = &lg;
    train::train(s, data, opt);
    const auto path = (dir / ("run" + std::to_string(run) + ".dfem")).string();
    train::save_checkpoint(s, path);
    std::ifstream in(path, std::ios::binary);
    ck[run].assign(std::istreambuf_iterator<char>(in), {});
    log[run] = lg.str();
  }
  std::filesystem::remove_all(dir);
  Outcome o;
  o.check(!ck[0].empty() && ck[0] == ck[1], "checkpoints byte-identical (" + std::to_string(ck[0].size()) + " bytes)");
  o.check(!log[0].empty() && log[0] == log[1], "loss logs byte-identical");
  return o;
}

Outcome synthetic_recovery() {
  constexpr double kSigma = 0.02;
  train::SynthSpec spec;
  spec.templates = 12;
  spec.sparsity = 5;
  spec.noise = kSigma;
  spec.samples = 20000;
  spec.seed = 404;
  const auto synth = train::synth_generate(spec);
  model::Hyperparams hp = small_hp(404);
  hp.epochs = 200;

  const auto t0 = std::chrono::steady_clock::now();
  train::TrainState s(hp);
  train::train(s, synth.data);

  // Reconstruction error of the quantized path over the whole corpus.
  const Tensor& x = synth.data.rows;
  const std::size_t n = x.rows(), dim = x.cols();
  double sse = 0.0;
  std::vector<rvq::TokenSequence> tokens;
  for (std::size_t start = 0; start < n; start += 4096) {
    const std::size_t m = std::min<std::size_t>(4096, n - start);
    Tensor batch({m, dim});
    std::copy_n(x.row(start).begin(), m * dim, batch.data().begin());
    nc::Tape tape(false);
    const auto fw = s.model.forward(tape, batch);
    for (std::size_t i = 0; i < m * dim; ++i) sse += (fw.reconstruction[i] - batch[i]) * (fw.reconstruction[i] - batch[i]);
    tokens.insert(tokens.end(), fw.assignment.tokens.begin(), fw.assignment.tokens.end());
  }
  const double runtime = seconds_since(t0);
  const double mse = sse / static_cast<double>(n * dim);
  const double floor = kSigma * kSigma;

  const Tensor offsets = s.model.template_offsets();
  std::size_t matched = 0;
  for (std::size_t g = 0; g < synth.templates.rows(); ++g) {
    double best = -1.0;
    for (std::size_t k = 0; k < offsets.rows(); ++k) best = std::max(best, cosine(offsets.row(k), synth.templates.row(g)));
    matched += best >= 0.85;
  }
  const double h = analysis::normalized_entropy(analysis::token_distribution(tokens, hp.codebook_size));

  Outcome o;
  o.check(mse <= 1.5 * floor, "(a) recon MSE " + fmt("%.4g", mse) + " per element vs 1.5 sigma^2 = " + fmt("%.4g", 1.5 * floor) +
                                  " (per frame " + fmt("%.4g", mse * dim) + " vs " + fmt("%.4g", 1.5 * floor * dim) + ")");
  o.check(matched >= 9, "(b) matched templates " + std::to_string(matched) + "/12 >= 9");
  o.check(h >= 0.5, "(c) normalized entropy " + fmt("%.3f", h) + " >= 0.5");
  o.check(runtime <= 600.0, "runtime " + fmt("%.0f", runtime) + " s <= 600 s");
  return o;
}

Outcome metric_suite() {
  Outcome o;
  bool entropy_ok = true;
  for (std::size_t k : {2, 3, 10, 16, 50, 64}) {
    std::vector<double> uniform(k, 1.0 / static_cast<double>(k)), onehot(k, 0.0);
    onehot[k / 2] = 1.0;
    entropy_ok = entropy_ok && analysis::normalized_entropy(uniform) == 1.0 && analysis::normalized_entropy(onehot) == 0.0;
  }
  o.check(entropy_ok, "entropy uniform == 1, one-hot == 0 exactly");

  Rng rng(505);
  Tensor same({40, 4});
  for (std::size_t r = 0; r < 40; ++r) {
    const double bit = r % 3 == 0 || rng.coin() ? 1.0 : 0.0;
    for (std::size_t c = 0; c < 4; ++c) same.at(r, c) = r == 1 ? 0.0 : bit;
  }
  const double nmi_same = analysis::avg_nmi(same).value;
  o.check(std::abs(nmi_same - 1.0) <= 1e-12, "nmi(identical) = " + fmt("%.17g", nmi_same));

  constexpr std::size_t cols = 5;
  Tensor combos({std::size_t{1} << cols, cols});
  for (std::size_t r = 0; r < combos.rows(); ++r)
    for (std::size_t c = 0; c < cols; ++c) combos.at(r, c) = static_cast<double>((r >> c) & 1U);
  const double nmi_ind = analysis::avg_nmi(combos).value;
  o.check(std::abs(nmi_ind) <= 1e-12, "nmi(independent combos) = " + fmt("%.3g", nmi_ind));

  std::vector<double> y(100);
  for (double& v : y) v = rng.normal(0.0, 3.0);
  const auto reg = analysis::regression_metrics(y, y);
  o.check(reg.ccc == 1.0 && reg.rmse == 0.0, "ccc(pred == target) = " + fmt("%.17g", reg.ccc) + ", rmse = " + fmt("%.3g", reg.rmse));
  return o;
}

train::GroupTable group_table(const train::Dataset& d) {
  train::GroupTable g;
  for (std::size_t r = 0; r < d.size(); ++r) g.ids.push_back(d.id(r));
  g.groups = d.groups;
  g.labels = d.labels;
  return g;
}

Outcome bow_downstream() {
  VideoFixture& fx = video_fixture();
  const auto& data = fx.videos.data;
  const auto tokens = tokens_of(fx.state->model, data.rows);
  std::vector<std::string> ids;
  for (std::size_t r = 0; r < data.size(); ++r) ids.push_back(data.id(r));
  const auto groups = group_table(data);
  const auto table = analysis::bow(ids, tokens, groups, {.codebook_size = fx.state->hp().codebook_size});
  const auto labels = analysis::group_labels(table, groups);

  const auto real = analysis::logistic_loocv(table.hist, labels);
  std::vector<std::int64_t> permuted = labels;
  Rng rng(Rng::derive(606, "permutation-control"));
  rng.shuffle(permuted);
  const auto control = analysis::logistic_loocv(table.hist, permuted);

  Outcome o;
  o.check(table.groups.size() == 50, std::to_string(table.groups.size()) + " videos");
  o.check(real.accuracy >= 0.9, "LOOCV accuracy " + fmt("%.3f", real.accuracy) + " >= 0.9");
  o.check(control.accuracy <= 0.7, "permuted-label accuracy " + fmt("%.3f", control.accuracy) + " <= 0.7");
  return o;
}

Outcome retrieval_harness() {
  VideoFixture& fx = video_fixture();
  model::Model& m = fx.state->model;
  const auto& rows = fx.videos.data.rows;
  const auto tokens = tokens_of(m, rows);
  Tensor latents({rows.rows(), m.hp().latent_dim});
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    const Tensor z = m.encode(rows.row(r));
    std::copy(z.data().begin(), z.data().end(), latents.row(r).begin());
  }
  const auto codes = analysis::binary_codes(tokens, m.hp().codebook_size);
  const analysis::RetrievalOptions opts{.min_matches = 5, .queries_in_database = true};
  const auto hashed = analysis::retrieve_exact(codes, codes, opts);
  const auto brute = analysis::retrieve_brute_force(codes, codes, opts);
  bool equal = hashed.size() == brute.size();
  for (std::size_t q = 0; equal && q < hashed.size(); ++q)
    equal = hashed[q].members == brute[q].members && hashed[q].included == brute[q].included;

  const auto metrics = analysis::retrieval_metrics(hashed, latents, latents);
  Rng rng(Rng::derive(707, "retrieval-control"));
  const double random_std = metrics.included ? analysis::random_group_std(hashed, latents, 50, rng) : 0.0;

  Outcome o;
  o.check(metrics.included > 0, std::to_string(metrics.included) + " queries with >= 5 matches");
  o.check(metrics.mean_std < random_std, "matched-group std " + fmt("%.4g", metrics.mean_std) + " < random-group std " + fmt("%.4g", random_std));
  o.check(equal, "hash index == brute force on " + std::to_string(hashed.size()) + " queries");
  return o;
}

// Minimal ASCII PLY reader: vertex element with x y z and red green blue.
struct PlyMesh {
  std::vector<std::array<double, 3>> xyz;
  std::vector<std::array<int, 3>> rgb;
};

bool read_ply(const std::string& text, PlyMesh& mesh) {
  std::istringstream in(text);
  std::string line, word;
  std::size_t count = 0;
  std::vector<std::string> props;
  if (!std::getline(in, line) || line != "ply") return false;
  if (!std::getline(in, line) || line != "format ascii 1.0") return false;
  while (std::getline(in, line) && line != "end_header") {
    std::istringstream ls(line);
    ls >> word;
    if (word == "element") {
      std::string name;
      ls >> name >> count;
      if (name != "vertex") return false;
    } else if (word == "property") {
      std::string type, name;
      ls >> type >> name;
      props.push_back(name);
    } else if (word != "comment") {
      return false;
    }
  }
  if (line != "end_header" || props != std::vector<std::string>{"x", "y", "z", "red", "green", "blue"}) return false;
  for (std::size_t v = 0; v < count; ++v) {
    std::array<double, 3> p{};
    std::array<int, 3> c{};
    if (!(in >> p[0] >> p[1] >> p[2] >> c[0] >> c[1] >> c[2])) return false;
    for (int ch : c)
      if (ch < 0 || ch > 255) return false;
    mesh.xyz.push_back(p);
    mesh.rgb.push_back(c);
  }
  return !(in >> word);
}

Outcome interpretability() {
  VideoFixture& fx = video_fixture();
  model::Model& m = fx.state->model;
  codec::SphereSpec sphere;
  sphere.seed = 808;
  const auto bm = codec::synth_blendshapes(sphere);
  Outcome o;

  const auto neutral = codec::heatmap(std::vector<double>(bm.dim(), 0.0), bm);
  const bool zero = std::all_of(neutral.distances.begin(), neutral.distances.end(), [](double d) { return d == 0.0; });
  o.check(zero && neutral.normalizer == 0.0, "heatmap(0) all zero over " + std::to_string(neutral.distances.size()) + " vertices");

  const auto& rows = fx.videos.data.rows;
  const Tensor& b = m.decoder().b.value;
  std::vector<Tensor> offsets;
  for (std::size_t k = 0; k < m.hp().codebook_size; ++k) {
    Tensor t = m.token_template(k);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] -= b[i];
    offsets.push_back(std::move(t));
  }
  std::size_t bitwise = 0;
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    const auto fw = m.forward(rows.row(r));
    Tensor sum = b;
    for (auto k : fw.tokens)
      for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += offsets[k][i];
    bitwise += sum == fw.reconstruction;
  }
  o.check(bitwise == rows.rows(), "b + sum of offsets == psi-hat bitwise on " + std::to_string(bitwise) + "/" + std::to_string(rows.rows()) + " frames");

  const Tensor face = m.token_template(0);
  const auto hm = codec::heatmap(face.data(), bm);
  const Tensor mesh = codec::deform(face.data(), bm);
  std::ostringstream ply;
  codec::write_ply(ply, mesh, hm.colors);
  PlyMesh parsed;
  bool ply_ok = read_ply(ply.str(), parsed) && parsed.xyz.size() == bm.vertices();
  for (std::size_t v = 0; ply_ok && v < parsed.xyz.size(); ++v)
    for (int c = 0; c < 3; ++c)
      ply_ok = ply_ok && std::abs(parsed.xyz[v][c] - mesh.at(v, c)) <= 1e-6 && parsed.rgb[v][c] == hm.colors[v][c];
  o.check(ply_ok, "PLY parses with " + std::to_string(parsed.xyz.size()) + " vertices matching the mesh and colours");

  const Tensor u = codec::code_displacements(m, bm);
  const auto thresholds = codec::threshold_grid(u, 64);
  const auto curve = codec::displacement_percentiles(u, thresholds);
  bool monotone = curve.size() == thresholds.size();
  for (std::size_t i = 1; monotone && i < curve.size(); ++i) monotone = curve[i] <= curve[i - 1];
  o.check(monotone, "percentile curve non-increasing over " + std::to_string(curve.size()) + " thresholds");
  return o;
}

std::string describe_load(const std::string& bytes) {
  std::istringstream in(bytes);
  try {
    train::load_checkpoint(in);
    return "accepted";
  } catch (const io::FormatError& e) {
    return io::to_string(e.kind());
  } catch (const std::exception& e) {
    return std::string("unstructured: ") + e.what();
  }
}

Outcome checkpoint_round_trip() {
  VideoFixture& fx = video_fixture();
  train::TrainState& s = *fx.state;
  const auto& rows = fx.videos.data.rows;
  Tensor probe({200, rows.cols()});
  for (std::size_t r = 0; r < 200; ++r) std::copy(rows.row(r * 11).begin(), rows.row(r * 11).end(), probe.row(r).begin());

  std::ostringstream saved;
  train::save_checkpoint(s, saved);
  const std::string bytes = saved.str();
  std::istringstream in(bytes);
  auto loaded = train::load_checkpoint(in);

  bool same = true;
  for (std::size_t r = 0; r < probe.rows(); ++r) {
    const auto a = s.model.forward(probe.row(r));
    const auto b = loaded->model.forward(probe.row(r));
    same = same && a.tokens == b.tokens && a.reconstruction == b.reconstruction;
  }
  std::ostringstream again;
  train::save_checkpoint(*loaded, again);

  Outcome o;
  o.check(same, "probe tokens and reconstructions identical after reload (200 frames)");
  o.check(again.str() == bytes, "save -> load -> save byte-identical");

  std::string bad = bytes;
  bad.replace(0, 4, "XXXX");
  const std::string magic = describe_load(bad);
  bad = bytes;
  bad[4] = 9;
  const std::string version = describe_load(bad);
  const std::string truncated = describe_load(bytes.substr(0, bytes.size() / 2));
  const std::string empty = describe_load("");

  std::ostringstream wrong;
  io::BinaryWriter w(wrong);
  w.bytes("DFEM");
  w.u32(train::kCheckpointVersion);
  train::write_hyperparams(w, s.hp());
  w.u64(0);
  w.str("encoder.in.weight");
  w.u8(1);
  w.u32(2);
  w.u64(s.hp().hidden + 3);
  w.u64(s.hp().token_dim);
  const std::string shape = describe_load(wrong.str());

  std::string missing = "accepted";
  try {
    train::load_checkpoint((std::filesystem::temp_directory_path() / "dfe_acceptance_missing.dfem").string());
  } catch (const io::FileError&) {
    missing = "file_error";
  } catch (const std::exception& e) {
    missing = e.what();
  }
  o.check(magic == "bad_magic" && version == "version_skew" && truncated == "truncated" && empty == "truncated" &&
              shape == "shape_mismatch" && missing == "file_error",
          "corrupt inputs -> " + magic + ", " + version + ", " + truncated + ", " + empty + ", " + shape + ", " + missing);
  return o;
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "gradient fidelity", gradient_fidelity},   {2, "quantizer oracle", quantizer_oracle},
      {3, "determinism", determinism},               {4, "synthetic recovery", synthetic_recovery},
      {5, "metric unit suite", metric_suite},        {6, "BoW downstream", bow_downstream},
      {7, "retrieval harness", retrieval_harness},   {8, "interpretability pipeline", interpretability},
      {9, "checkpoint round-trip", checkpoint_round_trip},
  };
  std::vector<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.push_back(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : all) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.id) == wanted.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failures += !o.pass;
    std::printf("criterion %d %s: %s (%s) [%.1f s]\n", c.id, c.name, o.pass ? "PASS" : "FAIL", o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
