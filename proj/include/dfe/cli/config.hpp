#pragma once

#include <stdexcept>
#include <string>

#include "dfe/analysis/diversity.hpp"
#include "dfe/codec/blendshape.hpp"
#include "dfe/codec/heatmap.hpp"
#include "dfe/model/hyperparams.hpp"
#include "dfe/train/dataset.hpp"

namespace dfe::cli {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything a run reads besides file paths, which come from command flags.
/// One seed feeds every component; each derives its own named substream.
struct RunConfig {
  std::uint64_t seed = 0;
  model::Hyperparams hp;
  train::SynthSpec synth;
  std::size_t classes = 2;
  std::size_t videos_per_class = 25;
  std::size_t frames_per_video = 50;
  codec::SphereSpec blendshapes;
  analysis::EntropyNorm entropy_norm = analysis::EntropyNorm::log2k;
  bool bias_in_template = true;
  codec::HeatmapScale heatmap_scale = codec::HeatmapScale::max;
  std::size_t min_matches = 5;
  bool stage_aware_bow = false;
  double logistic_lambda = 1.0;

  /// Pushes `seed` into every component spec.
  void apply_seed(std::uint64_t s);
  train::VideoSpec video_spec() const;
};

/// JSON object; every key optional, unknown keys and wrong types rejected
/// with ConfigError. Hyperparameters are top-level keys named as in
/// model::Hyperparams; "synth" and "blendshapes" are nested objects.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::string& path);
/// Canonical JSON of a config, keys sorted.
std::string dump_config(const RunConfig& config);

}  // namespace dfe::cli
