#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "dfe/cli/config.hpp"

namespace dfe::cli {

/// Widths or lengths of two inputs disagree.
class DimensionMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Ordered key=value output, or one JSON object with --json.
class Report {
 public:
  void add(const std::string& key, nlohmann::json value) { items_.emplace_back(key, std::move(value)); }
  void print(std::ostream& os, bool as_json) const;

 private:
  std::vector<std::pair<std::string, nlohmann::json>> items_;
};

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool json = false;

  RunConfig config() const;
};

struct SynthArgs {
  std::string out, groups, templates_out, blendshapes_out, format = "csv";
  bool videos = false;
  std::optional<std::size_t> samples;
};
struct TrainArgs {
  std::string data, out, log, resume;
  std::optional<double> lr;
  std::optional<std::size_t> epochs, batch_size;
};
struct EncodeArgs {
  std::string model, data, out, latents;
  std::size_t chunk = 4096;
};
struct DecodeArgs {
  std::string model, tokens, out;
};
struct TemplatesArgs {
  std::string model, out;
  bool no_bias = false;
};
struct HeatmapArgs {
  std::string model, blendshapes, tokens, features, id, ply, csv, scale;
  std::optional<std::size_t> code;
  bool no_bias = false;
};
struct MetricArgs {
  std::string tokens, matrix, model;
  std::optional<std::size_t> codebook_size;
  std::string norm;
};
struct RetrieveArgs {
  std::string tokens, query_tokens, features, model, out;
  std::optional<std::size_t> codebook_size, min_matches;
  std::size_t control_trials = 50;
};
struct BowArgs {
  std::string tokens, groups, model, out;
  std::optional<std::size_t> codebook_size;
  bool stage_aware = false;
};
struct ClassifyArgs {
  std::string bow, groups, out;
  std::optional<double> lambda;
  std::size_t top = 4;
};
struct GradcheckArgs {
  double tolerance = 1e-4;
  std::size_t batch = 3;
};
struct DisplacementArgs {
  std::string model, blendshapes, out;
  bool no_bias = false;
  std::size_t steps = 21;
  std::vector<double> thresholds;
};

Report cmd_synth(const Common& c, const SynthArgs& a);
Report cmd_train(const Common& c, const TrainArgs& a);
Report cmd_encode(const Common& c, const EncodeArgs& a);
Report cmd_decode(const Common& c, const DecodeArgs& a);
Report cmd_templates(const Common& c, const TemplatesArgs& a);
Report cmd_heatmap(const Common& c, const HeatmapArgs& a);
Report cmd_entropy(const Common& c, const MetricArgs& a);
Report cmd_nmi(const Common& c, const MetricArgs& a);
Report cmd_retrieve(const Common& c, const RetrieveArgs& a);
Report cmd_bow(const Common& c, const BowArgs& a);
Report cmd_classify(const Common& c, const ClassifyArgs& a);
/// Sets `failed` when the error exceeds the tolerance.
Report cmd_gradcheck(const Common& c, const GradcheckArgs& a, bool& failed);
Report cmd_redundancy(const Common& c, const DisplacementArgs& a);
Report cmd_percentiles(const Common& c, const DisplacementArgs& a);

}  // namespace dfe::cli
