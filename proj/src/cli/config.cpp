#include "dfe/cli/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "json.hpp"
#include "dfe/numcore/binary_io.hpp"

namespace dfe::cli {

using json = nlohmann::json;

namespace {

struct Field {
  std::function<void(const json&)> read;
  std::function<json()> write;
};
using Fields = std::map<std::string, Field>;

template <class T>
T typed(const json& v, const std::string& key) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw ConfigError("config key '" + key + "' must be a boolean");
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_unsigned()) throw ConfigError("config key '" + key + "' must be a nonnegative integer");
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw ConfigError("config key '" + key + "' must be a number");
  } else {
    if (!v.is_string()) throw ConfigError("config key '" + key + "' must be a string");
  }
  return v.get<T>();
}

template <class T>
void bind_field(Fields& f, const std::string& key, T& ref) {
  f[key] = {[&ref, key](const json& v) { ref = typed<T>(v, key); }, [&ref] { return json(ref); }};
}

template <class E>
void bind_enum(Fields& f, const std::string& key, E& ref, std::vector<std::pair<std::string, E>> names) {
  f[key] = {[&ref, key, names](const json& v) {
              const auto s = typed<std::string>(v, key);
              for (const auto& [n, e] : names)
                if (n == s) {
                  ref = e;
                  return;
                }
              std::string allowed;
              for (const auto& [n, e] : names) allowed += (allowed.empty() ? "" : "|") + n;
              throw ConfigError("config key '" + key + "' must be one of " + allowed + ", got '" + s + "'");
            },
            [&ref, names] {
              for (const auto& [n, e] : names)
                if (e == ref) return json(n);
              return json();
            }};
}

void read_object(const json& obj, Fields& fields, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : obj.items()) {
    const auto it = fields.find(key);
    if (it == fields.end()) throw ConfigError("unknown config key '" + (where == "config" ? key : where + "." + key) + "'");
    it->second.read(value);
  }
}

json write_object(Fields& fields) {
  json out = json::object();
  for (auto& [key, f] : fields) out[key] = f.write();
  return out;
}

struct Schema {
  Fields top, synth, shapes;
  explicit Schema(RunConfig& c) {
    model::Hyperparams& hp = c.hp;
    bind_field(top, "seed", c.seed);
    bind_field(top, "input_dim", hp.input_dim);
    bind_field(top, "tokens", hp.tokens);
    bind_field(top, "token_dim", hp.token_dim);
    bind_field(top, "hidden", hp.hidden);
    bind_field(top, "layers", hp.layers);
    bind_field(top, "heads", hp.heads);
    bind_field(top, "latent_dim", hp.latent_dim);
    bind_field(top, "codebook_size", hp.codebook_size);
    bind_field(top, "stages", hp.stages);
    bind_field(top, "beta_commit", hp.beta_commit);
    bind_field(top, "lambda_orth", hp.lambda_orth);
    bind_field(top, "lambda_reg", hp.lambda_reg);
    bind_field(top, "weight_decay", hp.weight_decay);
    bind_field(top, "lr", hp.lr);
    bind_field(top, "batch_size", hp.batch_size);
    bind_field(top, "epochs", hp.epochs);
    bind_enum(top, "commit_target", hp.commit_target, {{"pre", model::CommitTarget::pre}, {"post", model::CommitTarget::post}});
    bind_field(top, "orth_on_decoded", hp.orth_on_decoded);
    bind_enum(top, "codebook_update", hp.codebook_update, {{"loss", model::CodebookUpdate::loss}, {"ema", model::CodebookUpdate::ema}});
    bind_field(top, "codebook_loss_weight", hp.codebook_loss_weight);
    bind_field(top, "ema_decay", hp.ema_decay);
    bind_field(top, "dead_code_reinit", hp.dead_code_reinit);
    bind_field(top, "dead_code_threshold", hp.dead_code_threshold);
    bind_field(top, "standardize", hp.standardize);
    bind_enum(top, "entropy_norm", c.entropy_norm, {{"log2k", analysis::EntropyNorm::log2k}, {"literal", analysis::EntropyNorm::literal}});
    bind_field(top, "bias_in_template", c.bias_in_template);
    bind_enum(top, "heatmap_scale", c.heatmap_scale, {{"max", codec::HeatmapScale::max}, {"p99", codec::HeatmapScale::p99}});
    bind_field(top, "min_matches", c.min_matches);
    bind_field(top, "stage_aware_bow", c.stage_aware_bow);
    bind_field(top, "logistic_lambda", c.logistic_lambda);

    train::SynthSpec& s = c.synth;
    bind_field(synth, "templates", s.templates);
    bind_field(synth, "sparsity", s.sparsity);
    bind_field(synth, "mix_lo", s.mix_lo);
    bind_field(synth, "mix_hi", s.mix_hi);
    bind_field(synth, "weight_lo", s.weight_lo);
    bind_field(synth, "weight_hi", s.weight_hi);
    bind_field(synth, "noise", s.noise);
    bind_field(synth, "samples", s.samples);
    bind_field(synth, "classes", c.classes);
    bind_field(synth, "videos_per_class", c.videos_per_class);
    bind_field(synth, "frames_per_video", c.frames_per_video);

    bind_field(shapes, "vertices", c.blendshapes.vertices);
    bind_field(shapes, "patch_radius", c.blendshapes.patch_radius);
    bind_field(shapes, "amplitude", c.blendshapes.amplitude);
  }
};

}  // namespace

void RunConfig::apply_seed(std::uint64_t s) {
  seed = s;
  hp.seed = s;
  synth.seed = s;
  blendshapes.seed = s;
}

train::VideoSpec RunConfig::video_spec() const {
  train::VideoSpec v;
  v.base = synth;
  v.classes = classes;
  v.videos_per_class = videos_per_class;
  v.frames_per_video = frames_per_video;
  return v;
}

RunConfig parse_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  Schema schema(c);
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  json rest = json::object();
  for (const auto& [key, value] : doc.items()) {
    if (key == "synth")
      read_object(value, schema.synth, "synth");
    else if (key == "blendshapes")
      read_object(value, schema.shapes, "blendshapes");
    else
      rest[key] = value;
  }
  read_object(rest, schema.top, "config");
  c.apply_seed(c.seed);
  c.synth.dim = c.hp.input_dim;
  c.blendshapes.dim = c.hp.input_dim;
  try {
    c.hp.validate();
    c.synth.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (c.min_matches == 0) throw ConfigError("min_matches must be positive");
  if (!(c.logistic_lambda > 0.0)) throw ConfigError("logistic_lambda must be positive");
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io::FileError(path, "cannot open for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::string dump_config(const RunConfig& config) {
  RunConfig c = config;
  Schema schema(c);
  json out = write_object(schema.top);
  out["synth"] = write_object(schema.synth);
  out["blendshapes"] = write_object(schema.shapes);
  return out.dump(2) + "\n";
}

}  // namespace dfe::cli
