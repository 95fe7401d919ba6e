#include "dfe/cli/app.hpp"

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <sstream>

#include "CLI11.hpp"
#include "commands.hpp"
#include "dfe/numcore/binary_io.hpp"
#include "dfe/numcore/errors.hpp"
#include "dfe/train/trainer.hpp"

namespace dfe::cli {

std::size_t thread_count() {
  const char* v = std::getenv("DFE_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError(std::string("DFE_THREADS must be a positive integer, got '") + v + "'");
  return std::size_t(n);
}

namespace {

int report_error(std::ostream& err, int code, const std::string& kind, std::string message) {
  std::replace(message.begin(), message.end(), '\n', ' ');
  std::replace(message.begin(), message.end(), '\r', ' ');
  err << "error: " << kind << ": " << message << '\n';
  return code;
}

const char* format_kind(io::FormatErrorKind k) {
  switch (k) {
    case io::FormatErrorKind::truncated: return "truncated";
    case io::FormatErrorKind::bad_magic: return "bad_magic";
    case io::FormatErrorKind::version_skew: return "version_skew";
    case io::FormatErrorKind::shape_mismatch: return "shape_mismatch";
    case io::FormatErrorKind::malformed: return "malformed";
  }
  return "format";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Discrete facial expression tokens: training, encoding, interpretation and evaluation.", "dfe"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", "dfe 1.0");

  Common common;
  std::uint64_t seed = 0;
  app.add_option("--config", common.config_path, "JSON run configuration (unknown keys are rejected)");
  auto* seed_opt = app.add_option("--seed", seed, "Override the config seed");
  app.add_flag("--json", common.json, "Print results as one JSON object instead of key=value lines");

  std::function<Report()> action;
  bool check_failed = false;

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate synthetic expression vectors from sparse ground-truth templates");
  s->add_option("--out", synth.out, "Feature file to write")->required();
  s->add_option("--format", synth.format, "Feature file format: csv or dfef")->check(CLI::IsMember({"csv", "dfef"}));
  s->add_option("--samples", synth.samples, "Number of rows (ignored with --videos)");
  s->add_flag("--videos", synth.videos, "Labelled videos from disjoint template subsets instead of independent frames");
  s->add_option("--groups", synth.groups, "Write the id,group,label table here");
  s->add_option("--templates-out", synth.templates_out, "Write the ground-truth templates here");
  s->add_option("--blendshapes-out", synth.blendshapes_out, "Write the synthetic sphere blendshape basis (DFEB) here");
  s->callback([&] { action = [&] { return cmd_synth(common, synth); }; });

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train the tokenizer and write a checkpoint");
  t->add_option("--data", tr.data, "Feature file (CSV or DFEF)")->required();
  t->add_option("--out", tr.out, "Checkpoint to write")->required();
  t->add_option("--log", tr.log, "Per-epoch loss CSV");
  t->add_option("--resume", tr.resume, "Continue from this checkpoint");
  t->add_option("--lr", tr.lr, "Learning rate (0 leaves every parameter at its initial value)");
  t->add_option("--epochs", tr.epochs, "Number of epochs");
  t->add_option("--batch-size", tr.batch_size, "Mini-batch size");
  t->callback([&] { action = [&] { return cmd_train(common, tr); }; });

  EncodeArgs enc;
  auto* e = app.add_subcommand("encode", "Tokenize a feature file");
  e->add_option("--model", enc.model, "Checkpoint")->required();
  e->add_option("--data", enc.data, "Feature file (CSV or DFEF)")->required();
  e->add_option("--out", enc.out, "Token CSV to write")->required();
  e->add_option("--latents", enc.latents, "Also write encoder outputs here");
  e->add_option("--chunk", enc.chunk, "Rows per encoder batch")->check(CLI::PositiveNumber);
  e->callback([&] { action = [&] { return cmd_encode(common, enc); }; });

  DecodeArgs dec;
  auto* d = app.add_subcommand("decode", "Reconstruct expression vectors from tokens");
  d->add_option("--model", dec.model, "Checkpoint")->required();
  d->add_option("--tokens", dec.tokens, "Token CSV")->required();
  d->add_option("--out", dec.out, "Feature CSV to write")->required();
  d->callback([&] { action = [&] { return cmd_decode(common, dec); }; });

  TemplatesArgs tpl;
  auto* tp = app.add_subcommand("templates", "Write the decoded face of every code");
  tp->add_option("--model", tpl.model, "Checkpoint")->required();
  tp->add_option("--out", tpl.out, "CSV to write")->required();
  tp->add_flag("--no-bias", tpl.no_bias, "Omit the decoder bias (template minus neutral)");
  tp->callback([&] { action = [&] { return cmd_templates(common, tpl); }; });

  HeatmapArgs hm;
  auto* h = app.add_subcommand("heatmap", "Per-vertex deformation heatmap of a code, a token row or a raw vector");
  h->add_option("--model", hm.model, "Checkpoint (with --code or --tokens)");
  h->add_option("--blendshapes", hm.blendshapes, "DFEB basis; a seeded synthetic sphere when omitted");
  h->add_option("--code", hm.code, "Codebook index to visualise");
  h->add_option("--tokens", hm.tokens, "Token CSV (with --id)");
  h->add_option("--features", hm.features, "Feature file (with --id)");
  h->add_option("--id", hm.id, "Row id in --tokens or --features");
  h->add_option("--ply", hm.ply, "Colored ASCII PLY to write");
  h->add_option("--csv", hm.csv, "Per-vertex distance CSV to write");
  h->add_option("--scale", hm.scale, "Color normalisation: max or p99");
  h->add_flag("--no-bias", hm.no_bias, "With --code, omit the decoder bias");
  h->callback([&] { action = [&] { return cmd_heatmap(common, hm); }; });

  MetricArgs met;
  auto* m = app.add_subcommand("metrics", "Token diversity metrics");
  m->require_subcommand(1);
  auto add_metric_inputs = [&](CLI::App* sub) {
    sub->add_option("--tokens", met.tokens, "Token CSV");
    sub->add_option("--matrix", met.matrix, "0/1 CSV with a header (for example action-unit activations)");
    sub->add_option("--codebook-size", met.codebook_size, "Codebook size K");
    sub->add_option("--model", met.model, "Checkpoint to read K from");
  };
  auto* me = m->add_subcommand("entropy", "Normalized entropy of token usage");
  add_metric_inputs(me);
  me->add_option("--norm", met.norm, "log2k or literal");
  me->callback([&] { action = [&] { return cmd_entropy(common, met); }; });
  auto* mn = m->add_subcommand("nmi", "Average pairwise NMI of token presence");
  add_metric_inputs(mn);
  mn->callback([&] { action = [&] { return cmd_nmi(common, met); }; });

  RetrieveArgs ret;
  auto* r = app.add_subcommand("retrieve", "Exact-match retrieval on token presence codes");
  r->add_option("--tokens", ret.tokens, "Database token CSV")->required();
  r->add_option("--features", ret.features, "Reference feature file keyed by id")->required();
  r->add_option("--query-tokens", ret.query_tokens, "Query token CSV; the database queries itself when omitted");
  r->add_option("--codebook-size", ret.codebook_size, "Codebook size K");
  r->add_option("--model", ret.model, "Checkpoint to read K from");
  r->add_option("--min-matches", ret.min_matches, "Smallest group a query needs to count");
  r->add_option("--control-trials", ret.control_trials, "Random groups of matched size for the std control (0 disables)");
  r->add_option("--out", ret.out, "Per-query report CSV");
  r->callback([&] { action = [&] { return cmd_retrieve(common, ret); }; });

  BowArgs bw;
  auto* b = app.add_subcommand("bow", "Bag-of-words token histograms per video");
  b->add_option("--tokens", bw.tokens, "Token CSV")->required();
  b->add_option("--groups", bw.groups, "id,group[,label] CSV")->required();
  b->add_option("--out", bw.out, "Histogram CSV to write")->required();
  b->add_option("--codebook-size", bw.codebook_size, "Codebook size K");
  b->add_option("--model", bw.model, "Checkpoint to read K from");
  b->add_flag("--stage-aware", bw.stage_aware, "Separate bins per quantization stage");
  b->callback([&] { action = [&] { return cmd_bow(common, bw); }; });

  ClassifyArgs cl;
  auto* c = app.add_subcommand("classify", "Leave-one-out logistic regression on BoW histograms");
  c->add_option("--bow", cl.bow, "Histogram CSV")->required();
  c->add_option("--groups", cl.groups, "id,group,label CSV")->required();
  c->add_option("--lambda", cl.lambda, "L2 strength");
  c->add_option("--top", cl.top, "Templates listed per class");
  c->add_option("--out", cl.out, "Full-data coefficient CSV");
  c->callback([&] { action = [&] { return cmd_classify(common, cl); }; });

  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference check of the loss gradients (tiny model unless --config)");
  g->add_option("--tolerance", gc.tolerance, "Largest acceptable relative error");
  g->add_option("--batch", gc.batch, "Rows in the probe batch")->check(CLI::PositiveNumber);
  g->callback([&] { action = [&] { return cmd_gradcheck(common, gc, check_failed); }; });

  DisplacementArgs rd;
  auto* rr = app.add_subcommand("redundancy", "Mean pairwise dot product and cosine of code displacement fields");
  rr->add_option("--model", rd.model, "Checkpoint")->required();
  rr->add_option("--blendshapes", rd.blendshapes, "DFEB basis; a seeded synthetic sphere when omitted");
  rr->add_flag("--no-bias", rd.no_bias, "Use bias-free templates");
  rr->callback([&] { action = [&] { return cmd_redundancy(common, rd); }; });

  DisplacementArgs pc;
  auto* p = app.add_subcommand("percentiles", "Fraction of vertices displaced beyond each threshold, averaged over codes");
  p->add_option("--model", pc.model, "Checkpoint")->required();
  p->add_option("--out", pc.out, "threshold,fraction CSV to write")->required();
  p->add_option("--blendshapes", pc.blendshapes, "DFEB basis; a seeded synthetic sphere when omitted");
  p->add_option("--steps", pc.steps, "Evenly spaced thresholds from 0 to the largest displacement")->check(CLI::Range(2, 100000));
  p->add_option("--thresholds", pc.thresholds, "Explicit ascending thresholds")->delimiter(',');
  p->add_flag("--no-bias", pc.no_bias, "Use bias-free templates");
  p->callback([&] { action = [&] { return cmd_percentiles(common, pc); }; });

  std::function<void(CLI::App*)> add_footer = [&](CLI::App* a) {
    for (auto* sub : a->get_subcommands({})) {
      sub->footer("Global options (may follow the subcommand):\n  --config TEXT  JSON run configuration\n  --seed UINT    Override the config seed\n  --json         Print results as one JSON object");
      add_footer(sub);
    }
  };
  add_footer(&app);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex, out, err);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex, out, err);
  } catch (const CLI::CallForVersion& ex) {
    return app.exit(ex, out, err);
  } catch (const CLI::ParseError& ex) {
    return report_error(err, kUsage, "usage", ex.what());
  }
  if (seed_opt->count()) common.seed = seed;

  try {
    thread_count();
    const Report rep = action();
    rep.print(out, common.json);
    return check_failed ? kCheckFailed : kOk;
  } catch (const ConfigError& ex) {
    return report_error(err, kConfig, "config", ex.what());
  } catch (const io::FileError& ex) {
    return report_error(err, kFile, "file", ex.what());
  } catch (const io::FormatError& ex) {
    const bool shape = ex.kind() == io::FormatErrorKind::shape_mismatch;
    return report_error(err, shape ? kDimension : kFormat, format_kind(ex.kind()), ex.what());
  } catch (const DimensionMismatch& ex) {
    return report_error(err, kDimension, "dimension", ex.what());
  } catch (const train::TrainingAborted& ex) {
    return report_error(err, kNumeric, "numeric", ex.what());
  } catch (const NumericFault& ex) {
    return report_error(err, kNumeric, "numeric", ex.what());
  } catch (const ContractViolation& ex) {
    return report_error(err, kInvalid, "invalid", ex.what());
  } catch (const std::exception& ex) {
    return report_error(err, kInternal, "internal", ex.what());
  }
}

}  // namespace dfe::cli
