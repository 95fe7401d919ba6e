#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <unordered_map>

#include "dfe/analysis/bow.hpp"
#include "dfe/analysis/classify.hpp"
#include "dfe/analysis/diversity.hpp"
#include "dfe/analysis/retrieval.hpp"
#include "dfe/codec/blendshape.hpp"
#include "dfe/codec/diagnostics.hpp"
#include "dfe/codec/heatmap.hpp"
#include "dfe/codec/tokens.hpp"
#include "dfe/model/gradcheck.hpp"
#include "dfe/numcore/errors.hpp"
#include "dfe/train/checkpoint.hpp"
#include "dfe/train/feature_io.hpp"
#include "dfe/train/trainer.hpp"

namespace dfe::cli {

using json = nlohmann::json;
using nc::Tensor;

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw io::FileError(path, "cannot open for writing");
  return os;
}

void close_out(std::ofstream& os, const std::string& path) {
  os.flush();
  if (!os) throw io::FileError(path, "write failed");
}

void require(const std::string& value, const std::string& flag) {
  if (value.empty()) throw ContractViolation(flag + " is required");
}

std::unique_ptr<train::TrainState> load_model(const std::string& path) {
  require(path, "--model");
  return train::load_checkpoint(path);
}

std::size_t codebook_size(const std::optional<std::size_t>& flag, const std::string& model) {
  if (flag) return *flag;
  if (!model.empty()) return load_model(model)->hp().codebook_size;
  throw ContractViolation("either --codebook-size or --model is required");
}

void check_tokens(const codec::TokenTable& t, std::size_t k, const std::string& path) {
  for (const auto& seq : t.tokens)
    for (std::uint32_t v : seq)
      if (v >= k) throw DimensionMismatch(path + ": token " + std::to_string(v) + " outside a codebook of " + std::to_string(k));
}

void write_rows(std::ostream& os, const std::string& key, std::size_t width, const std::vector<std::string>& ids,
                const std::vector<Tensor>& rows) {
  os << key;
  for (std::size_t j = 0; j < width; ++j) os << ",f_" << j;
  os << '\n';
  for (std::size_t r = 0; r < rows.size(); ++r) {
    os << ids[r];
    for (double v : rows[r].data()) os << ',' << num(v);
    os << '\n';
  }
}

codec::BlendshapeModel blendshapes(const RunConfig& cfg, const std::string& path, std::size_t dim) {
  codec::BlendshapeModel bm;
  if (path.empty()) {
    codec::SphereSpec spec = cfg.blendshapes;
    spec.dim = dim;
    bm = codec::synth_blendshapes(spec);
  } else {
    bm = codec::load_blendshapes(path);
  }
  if (bm.dim() != dim)
    throw DimensionMismatch("blendshapes have " + std::to_string(bm.dim()) + " coefficients, model decodes " + std::to_string(dim));
  return bm;
}

// Matrix from a 0/1 CSV with a header row; an optional leading `id` column is skipped.
Tensor read_binary_matrix(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io::FileError(path, "cannot open for reading");
  std::string line;
  if (!std::getline(in, line)) throw io::FormatError(io::FormatErrorKind::truncated, path + ": empty file");
  const auto header = train::split_csv(line);
  const std::size_t skip = !header.empty() && header[0] == "id" ? 1 : 0;
  const std::size_t width = header.size() - skip;
  std::vector<double> values;
  std::size_t rows = 0, ln = 1;
  while (std::getline(in, line)) {
    ++ln;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = train::split_csv(line);
    const std::string where = path + ":" + std::to_string(ln);
    if (f.size() != header.size()) throw io::FormatError(io::FormatErrorKind::shape_mismatch, where + ": ragged row");
    for (std::size_t j = skip; j < f.size(); ++j) values.push_back(train::parse_double(f[j], where));
    ++rows;
  }
  return Tensor({rows, width}, std::move(values));
}

std::vector<double> column_frequencies(const Tensor& x) {
  std::vector<double> p(x.cols(), 0.0);
  double total = 0.0;
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) {
      p[c] += x.at(r, c);
      total += x.at(r, c);
    }
  if (total == 0.0) throw ContractViolation("matrix has no active entries");
  for (double& v : p) v /= total;
  return p;
}

}  // namespace

void Report::print(std::ostream& os, bool as_json) const {
  if (as_json) {
    json out = json::object();
    for (const auto& [k, v] : items_) out[k] = v;
    os << out.dump() << '\n';
    return;
  }
  for (const auto& [k, v] : items_) {
    os << k << '=';
    if (v.is_number_float())
      os << num(v.get<double>());
    else if (v.is_string())
      os << v.get<std::string>();
    else
      os << v.dump();
    os << '\n';
  }
}

RunConfig Common::config() const {
  RunConfig c = config_path.empty() ? RunConfig{} : load_config(config_path);
  if (seed) c.apply_seed(*seed);
  return c;
}

Report cmd_synth(const Common& common, const SynthArgs& a) {
  require(a.out, "--out");
  if (a.format != "csv" && a.format != "dfef") throw ContractViolation("--format must be csv or dfef");
  RunConfig cfg = common.config();
  if (a.samples) cfg.synth.samples = *a.samples;
  cfg.synth.dim = cfg.hp.input_dim;
  const train::SynthResult r = a.videos ? train::synth_videos(cfg.video_spec()) : train::synth_generate(cfg.synth);
  if (a.format == "csv")
    train::write_features_csv(r.data, a.out);
  else
    train::write_features_binary(r.data, a.out);
  if (!a.groups.empty()) train::write_groups(r.data, a.groups);
  if (!a.templates_out.empty()) {
    auto os = open_out(a.templates_out);
    std::vector<std::string> ids;
    std::vector<Tensor> rows;
    for (std::size_t g = 0; g < r.templates.rows(); ++g) {
      ids.push_back(std::to_string(g));
      rows.push_back(Tensor::vector({r.templates.row(g).begin(), r.templates.row(g).end()}));
    }
    write_rows(os, "template", r.templates.cols(), ids, rows);
    close_out(os, a.templates_out);
  }
  if (!a.blendshapes_out.empty()) {
    codec::SphereSpec spec = cfg.blendshapes;
    spec.dim = cfg.hp.input_dim;
    codec::save_blendshapes(codec::synth_blendshapes(spec), a.blendshapes_out);
  }
  Report rep;
  rep.add("rows", r.data.size());
  rep.add("dim", r.data.dim());
  rep.add("templates", r.templates.rows());
  if (a.videos) rep.add("groups", cfg.classes * cfg.videos_per_class);
  rep.add("seed", cfg.seed);
  return rep;
}

Report cmd_train(const Common& common, const TrainArgs& a) {
  require(a.data, "--data");
  require(a.out, "--out");
  std::unique_ptr<train::TrainState> state;
  if (!a.resume.empty()) {
    if (a.lr || a.epochs || a.batch_size || common.seed || !common.config_path.empty())
      throw ContractViolation("--resume continues the stored run; it takes no config, seed or hyperparameter flags");
    state = train::load_checkpoint(a.resume);
  } else {
    RunConfig cfg = common.config();
    if (a.lr) cfg.hp.lr = *a.lr;
    if (a.epochs) cfg.hp.epochs = *a.epochs;
    if (a.batch_size) cfg.hp.batch_size = *a.batch_size;
    cfg.hp.validate();
    state = std::make_unique<train::TrainState>(cfg.hp);
  }
  const train::Dataset data = train::read_features(a.data);
  if (data.dim() != state->hp().input_dim)
    throw DimensionMismatch(a.data + ": " + std::to_string(data.dim()) + " features per row, model expects " +
                            std::to_string(state->hp().input_dim));
  std::ofstream log;
  train::TrainOptions opts;
  if (!a.log.empty()) {
    log.open(a.log, std::ios::binary | (state->epoch == 0 ? std::ios::trunc : std::ios::app));
    if (!log) throw io::FileError(a.log, "cannot open for writing");
    opts.loss_log = &log;
  }
  const auto logs = train::train(*state, data, opts);
  if (log.is_open()) close_out(log, a.log);
  train::save_checkpoint(*state, a.out);
  Report rep;
  rep.add("epochs", state->epoch);
  rep.add("rows", data.size());
  if (!logs.empty()) {
    const auto& l = logs.back().loss;
    rep.add("recon", l.recon);
    rep.add("commit", l.commit);
    rep.add("orth", l.orth);
    rep.add("l1", l.l1);
    rep.add("total", l.total);
  }
  return rep;
}

Report cmd_encode(const Common&, const EncodeArgs& a) {
  require(a.data, "--data");
  require(a.out, "--out");
  auto state = load_model(a.model);
  auto os = open_out(a.out);
  std::ofstream lat;
  codec::TokenizeOptions opts{.chunk_rows = a.chunk};
  if (!a.latents.empty()) {
    lat = open_out(a.latents);
    opts.latents = &lat;
  }
  std::size_t rows = 0;
  try {
    rows = codec::tokenize_file(a.data, state->model, os, opts);
  } catch (const io::FormatError& e) {
    if (e.kind() == io::FormatErrorKind::shape_mismatch) throw DimensionMismatch(e.what());
    throw;
  }
  close_out(os, a.out);
  if (lat.is_open()) close_out(lat, a.latents);
  Report rep;
  rep.add("rows", rows);
  rep.add("stages", state->hp().stages);
  return rep;
}

Report cmd_decode(const Common&, const DecodeArgs& a) {
  require(a.tokens, "--tokens");
  require(a.out, "--out");
  auto state = load_model(a.model);
  const auto table = codec::read_tokens(a.tokens);
  if (table.size() && table.stages() != state->hp().stages)
    throw DimensionMismatch(a.tokens + ": " + std::to_string(table.stages()) + " tokens per row, model uses " + std::to_string(state->hp().stages));
  check_tokens(table, state->hp().codebook_size, a.tokens);
  std::vector<Tensor> rows;
  for (const auto& seq : table.tokens) rows.push_back(state->model.reconstruct(seq));
  auto os = open_out(a.out);
  write_rows(os, "id", state->hp().input_dim, table.ids, rows);
  close_out(os, a.out);
  Report rep;
  rep.add("rows", table.size());
  return rep;
}

Report cmd_templates(const Common& common, const TemplatesArgs& a) {
  require(a.out, "--out");
  auto state = load_model(a.model);
  const bool bias = !a.no_bias && (common.config_path.empty() || common.config().bias_in_template);
  std::vector<std::string> ids;
  std::vector<Tensor> rows;
  for (std::size_t k = 0; k < state->hp().codebook_size; ++k) {
    ids.push_back(std::to_string(k));
    rows.push_back(codec::token_template(state->model, k, bias));
  }
  auto os = open_out(a.out);
  write_rows(os, "code", state->hp().input_dim, ids, rows);
  close_out(os, a.out);
  Report rep;
  rep.add("codes", rows.size());
  rep.add("bias", bias);
  return rep;
}

Report cmd_heatmap(const Common& common, const HeatmapArgs& a) {
  const RunConfig cfg = common.config();
  const int sources = int(a.code.has_value()) + int(!a.tokens.empty()) + int(!a.features.empty());
  if (sources != 1) throw ContractViolation("give exactly one of --code, --tokens or --features");
  if (!a.code && a.id.empty()) throw ContractViolation("--id is required with --tokens or --features");
  codec::HeatmapScale scale = cfg.heatmap_scale;
  if (a.scale == "max")
    scale = codec::HeatmapScale::max;
  else if (a.scale == "p99")
    scale = codec::HeatmapScale::p99;
  else if (!a.scale.empty())
    throw ContractViolation("--scale must be max or p99");

  Tensor psi;
  std::size_t dim = 0;
  if (!a.features.empty()) {
    const train::Dataset data = train::read_features(a.features);
    for (std::size_t r = 0; r < data.size() && psi.size() == 0; ++r)
      if (data.id(r) == a.id) psi = Tensor::vector({data.rows.row(r).begin(), data.rows.row(r).end()});
    if (psi.size() == 0) throw ContractViolation(a.features + ": no row with id '" + a.id + "'");
    dim = data.dim();
  } else {
    auto state = load_model(a.model);
    dim = state->hp().input_dim;
    if (a.code) {
      if (*a.code >= state->hp().codebook_size) throw DimensionMismatch("--code outside a codebook of " + std::to_string(state->hp().codebook_size));
      psi = codec::token_template(state->model, *a.code, !a.no_bias && cfg.bias_in_template);
    } else {
      const auto table = codec::read_tokens(a.tokens);
      check_tokens(table, state->hp().codebook_size, a.tokens);
      const auto it = std::find(table.ids.begin(), table.ids.end(), a.id);
      if (it == table.ids.end()) throw ContractViolation(a.tokens + ": no row with id '" + a.id + "'");
      psi = state->model.reconstruct(table.tokens[std::size_t(it - table.ids.begin())]);
    }
  }
  const codec::BlendshapeModel bm = blendshapes(cfg, a.blendshapes, dim);
  const codec::HeatmapResult h = codec::heatmap(psi.data(), bm, scale);
  if (!a.ply.empty()) {
    auto os = open_out(a.ply);
    codec::write_ply(os, codec::deform(psi.data(), bm), h.colors);
    close_out(os, a.ply);
  }
  if (!a.csv.empty()) {
    auto os = open_out(a.csv);
    codec::write_distances_csv(os, h.distances);
    close_out(os, a.csv);
  }
  Report rep;
  rep.add("vertices", bm.vertices());
  rep.add("max_distance", h.distances.empty() ? 0.0 : *std::max_element(h.distances.begin(), h.distances.end()));
  rep.add("normalizer", h.normalizer);
  return rep;
}

Report cmd_entropy(const Common& common, const MetricArgs& a) {
  const RunConfig cfg = common.config();
  analysis::EntropyNorm norm = cfg.entropy_norm;
  if (a.norm == "log2k")
    norm = analysis::EntropyNorm::log2k;
  else if (a.norm == "literal")
    norm = analysis::EntropyNorm::literal;
  else if (!a.norm.empty())
    throw ContractViolation("--norm must be log2k or literal");
  std::vector<double> p;
  Report rep;
  if (!a.matrix.empty()) {
    if (!a.tokens.empty()) throw ContractViolation("give --tokens or --matrix, not both");
    p = column_frequencies(read_binary_matrix(a.matrix));
  } else {
    require(a.tokens, "--tokens");
    const auto table = codec::read_tokens(a.tokens);
    const std::size_t k = codebook_size(a.codebook_size, a.model);
    check_tokens(table, k, a.tokens);
    p = analysis::token_distribution(table.tokens, k);
    rep.add("frames", table.size());
  }
  rep.add("outcomes", p.size());
  rep.add("entropy", analysis::normalized_entropy(p, norm));
  rep.add("norm", norm == analysis::EntropyNorm::log2k ? "log2k" : "literal");
  return rep;
}

Report cmd_nmi(const Common&, const MetricArgs& a) {
  Tensor x;
  if (!a.matrix.empty()) {
    if (!a.tokens.empty()) throw ContractViolation("give --tokens or --matrix, not both");
    x = read_binary_matrix(a.matrix);
  } else {
    require(a.tokens, "--tokens");
    const auto table = codec::read_tokens(a.tokens);
    const std::size_t k = codebook_size(a.codebook_size, a.model);
    check_tokens(table, k, a.tokens);
    x = analysis::binary_matrix(analysis::binary_codes(table.tokens, k));
  }
  const auto r = analysis::avg_nmi(x);
  Report rep;
  rep.add("rows", x.rows());
  rep.add("columns", x.cols());
  rep.add("nmi", r.value);
  rep.add("pairs", r.pairs);
  rep.add("constant_pairs", r.constant_pairs);
  return rep;
}

Report cmd_retrieve(const Common& common, const RetrieveArgs& a) {
  require(a.tokens, "--tokens");
  require(a.features, "--features");
  const RunConfig cfg = common.config();
  const std::size_t k = codebook_size(a.codebook_size, a.model);
  const auto db = codec::read_tokens(a.tokens);
  check_tokens(db, k, a.tokens);
  const bool separate = !a.query_tokens.empty();
  const auto queries = separate ? codec::read_tokens(a.query_tokens) : db;
  check_tokens(queries, k, separate ? a.query_tokens : a.tokens);

  const train::Dataset ref = train::read_features(a.features);
  std::unordered_map<std::string, std::size_t> row_of;
  for (std::size_t r = 0; r < ref.size(); ++r) row_of.emplace(ref.id(r), r);
  auto gather = [&](const codec::TokenTable& t) {
    Tensor out({t.size(), ref.dim()});
    for (std::size_t i = 0; i < t.size(); ++i) {
      const auto it = row_of.find(t.ids[i]);
      if (it == row_of.end()) throw ContractViolation(a.features + ": no reference row for frame '" + t.ids[i] + "'");
      std::copy(ref.rows.row(it->second).begin(), ref.rows.row(it->second).end(), out.row(i).begin());
    }
    return out;
  };
  const Tensor dbf = gather(db), qf = gather(queries);
  const analysis::RetrievalOptions opts{.min_matches = a.min_matches.value_or(cfg.min_matches), .queries_in_database = !separate};
  const auto groups = analysis::retrieve_exact(analysis::binary_codes(queries.tokens, k), analysis::binary_codes(db.tokens, k), opts);
  const auto m = analysis::retrieval_metrics(groups, qf, dbf);
  if (!a.out.empty()) {
    auto os = open_out(a.out);
    os << "query,matches,included\n";
    for (std::size_t q = 0; q < groups.size(); ++q)
      os << queries.ids[q] << ',' << groups[q].members.size() << ',' << (groups[q].included ? 1 : 0) << '\n';
    close_out(os, a.out);
  }
  Report rep;
  rep.add("queries", groups.size());
  rep.add("included", m.included);
  rep.add("excluded", m.excluded);
  rep.add("mean_cosine", m.mean_cosine);
  rep.add("mean_euclidean", m.mean_euclidean);
  rep.add("mean_std", m.mean_std);
  if (a.control_trials > 0 && m.included > 0) {
    Rng rng(Rng::derive(cfg.seed, "retrieval-control"));
    rep.add("random_std", analysis::random_group_std(groups, dbf, a.control_trials, rng));
  }
  return rep;
}

Report cmd_bow(const Common& common, const BowArgs& a) {
  require(a.tokens, "--tokens");
  require(a.groups, "--groups");
  require(a.out, "--out");
  const RunConfig cfg = common.config();
  const std::size_t k = codebook_size(a.codebook_size, a.model);
  const auto table = codec::read_tokens(a.tokens);
  check_tokens(table, k, a.tokens);
  const auto groups = train::read_groups(a.groups);
  const auto b = analysis::bow(table.ids, table.tokens, groups, {.codebook_size = k, .stage_aware = a.stage_aware || cfg.stage_aware_bow});
  auto os = open_out(a.out);
  analysis::write_bow_csv(os, b);
  close_out(os, a.out);
  Report rep;
  rep.add("groups", b.groups.size());
  rep.add("bins", b.hist.cols());
  return rep;
}

Report cmd_classify(const Common& common, const ClassifyArgs& a) {
  require(a.bow, "--bow");
  require(a.groups, "--groups");
  const RunConfig cfg = common.config();
  const auto table = analysis::read_bow_csv(a.bow);
  const auto labels = analysis::group_labels(table, train::read_groups(a.groups));
  const auto r = analysis::logistic_loocv(table.hist, labels, {.lambda = a.lambda.value_or(cfg.logistic_lambda)});
  if (!a.out.empty()) {
    auto os = open_out(a.out);
    os << "class";
    for (std::size_t j = 0; j < r.model.w.cols(); ++j) os << ",p_" << j;
    os << ",intercept\n";
    for (std::size_t c = 0; c < r.model.classes.size(); ++c) {
      os << r.model.classes[c];
      for (double v : r.model.w.row(c)) os << ',' << num(v);
      os << ',' << num(r.model.b[c]) << '\n';
    }
    close_out(os, a.out);
  }
  Report rep;
  rep.add("samples", labels.size());
  rep.add("classes", r.model.classes.size());
  rep.add("accuracy", r.accuracy);
  rep.add("macro_f1", r.macro_f1);
  rep.add("auc", r.auc);
  const auto ranked = analysis::template_importance(r.model.w, a.top);
  for (std::size_t c = 0; c < ranked.size(); ++c) {
    std::string list;
    for (const auto& f : ranked[c]) list += (list.empty() ? "" : ";") + std::to_string(f.index);
    rep.add("top_" + std::to_string(r.model.classes[c]), list);
  }
  return rep;
}

Report cmd_gradcheck(const Common& common, const GradcheckArgs& a, bool& failed) {
  model::Hyperparams hp;
  if (common.config_path.empty()) {
    hp.input_dim = 6;
    hp.tokens = 2;
    hp.token_dim = 3;
    hp.hidden = 8;
    hp.layers = 1;
    hp.heads = 2;
    hp.latent_dim = 6;
    hp.codebook_size = 8;
    hp.stages = 2;
    hp.seed = common.seed.value_or(0);
  } else {
    hp = common.config().hp;
  }
  const auto r = model::check_model_gradients(hp, hp.seed, a.batch);
  failed = !(r.max_rel_error() < a.tolerance);
  Report rep;
  rep.add("max_rel_err", r.max_rel_error());
  rep.add("total_max_rel_err", r.total.max_rel_error);
  rep.add("objective_max_rel_err", r.objective.max_rel_error);
  const auto& worst = r.total.max_rel_error >= r.objective.max_rel_error ? r.total : r.objective;
  rep.add("worst_param", worst.worst_param + "[" + std::to_string(worst.worst_index) + "]");
  rep.add("coords", r.total.coords_checked);
  rep.add("pass", !failed);
  return rep;
}

Report cmd_redundancy(const Common& common, const DisplacementArgs& a) {
  const RunConfig cfg = common.config();
  auto state = load_model(a.model);
  const auto bm = blendshapes(cfg, a.blendshapes, state->hp().input_dim);
  const auto r = codec::displacement_redundancy(state->model, bm, !a.no_bias && cfg.bias_in_template);
  Report rep;
  rep.add("codes", state->hp().codebook_size);
  rep.add("pairs", r.pairs);
  rep.add("mean_dot", r.mean_dot);
  rep.add("mean_cosine", r.mean_cosine);
  rep.add("zero_codes", r.zero_codes);
  return rep;
}

Report cmd_percentiles(const Common& common, const DisplacementArgs& a) {
  require(a.out, "--out");
  const RunConfig cfg = common.config();
  auto state = load_model(a.model);
  const auto bm = blendshapes(cfg, a.blendshapes, state->hp().input_dim);
  const Tensor u = codec::code_displacements(state->model, bm, !a.no_bias && cfg.bias_in_template);
  const std::vector<double> thresholds = a.thresholds.empty() ? codec::threshold_grid(u, a.steps) : a.thresholds;
  if (!std::is_sorted(thresholds.begin(), thresholds.end())) throw ContractViolation("--thresholds must be ascending");
  const auto frac = codec::displacement_percentiles(u, thresholds);
  auto os = open_out(a.out);
  codec::write_percentiles_csv(os, thresholds, frac);
  close_out(os, a.out);
  Report rep;
  rep.add("thresholds", thresholds.size());
  rep.add("max_threshold", thresholds.back());
  return rep;
}

}  // namespace dfe::cli
