#include "dfe/train/checkpoint.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "dfe/numcore/errors.hpp"

namespace dfe::train {

using io::FormatError;
using io::FormatErrorKind;

namespace {

constexpr char kMagic[4] = {'D', 'F', 'E', 'M'};
constexpr std::uint8_t kDtypeF32 = 1;

void write_tensor(io::BinaryWriter& w, const std::string& name, const nc::Tensor& t) {
  w.str(name);
  w.u8(kDtypeF32);
  w.u32(std::uint32_t(t.rank()));
  for (std::size_t d : t.shape()) w.u64(d);
  for (double v : t.data()) w.f32(float(v));
}

void read_tensor(io::BinaryReader& r, const std::string& name, nc::Tensor& into) {
  const std::string found = r.str(4096);
  if (found != name) throw FormatError(FormatErrorKind::malformed, "expected section '" + name + "', found '" + found + "'");
  if (r.u8() != kDtypeF32) throw FormatError(FormatErrorKind::malformed, "section '" + name + "' has an unknown dtype");
  const std::uint32_t rank = r.u32();
  if (rank > 8) throw FormatError(FormatErrorKind::malformed, "section '" + name + "' has rank " + std::to_string(rank));
  nc::Shape shape(rank);
  for (auto& d : shape) d = r.u64();
  if (shape != into.shape())
    throw FormatError(FormatErrorKind::shape_mismatch,
                      "section '" + name + "' is " + nc::shape_string(shape) + ", hyperparameters imply " + nc::shape_string(into.shape()));
  for (double& v : into.data()) {
    v = double(r.f32());
    if (!std::isfinite(v)) throw FormatError(FormatErrorKind::malformed, "section '" + name + "' holds a non-finite value");
  }
}

}  // namespace

void write_hyperparams(io::BinaryWriter& w, const model::Hyperparams& hp) {
  for (std::size_t v : {hp.input_dim, hp.tokens, hp.token_dim, hp.hidden, hp.layers, hp.heads, hp.latent_dim, hp.codebook_size,
                        hp.stages, hp.batch_size, hp.epochs})
    w.u64(v);
  for (double v : {hp.beta_commit, hp.lambda_orth, hp.lambda_reg, hp.weight_decay, hp.lr, hp.codebook_loss_weight, hp.ema_decay})
    w.f64(v);
  w.u64(hp.seed);
  w.u8(std::uint8_t(hp.commit_target));
  w.u8(hp.orth_on_decoded);
  w.u8(std::uint8_t(hp.codebook_update));
  w.u8(hp.dead_code_reinit);
  w.u64(hp.dead_code_threshold);
  w.u8(hp.standardize);
}

model::Hyperparams read_hyperparams(io::BinaryReader& r) {
  model::Hyperparams hp;
  for (std::size_t* v : {&hp.input_dim, &hp.tokens, &hp.token_dim, &hp.hidden, &hp.layers, &hp.heads, &hp.latent_dim,
                         &hp.codebook_size, &hp.stages, &hp.batch_size, &hp.epochs})
    *v = r.u64();
  for (double* v : {&hp.beta_commit, &hp.lambda_orth, &hp.lambda_reg, &hp.weight_decay, &hp.lr, &hp.codebook_loss_weight, &hp.ema_decay})
    *v = r.f64();
  hp.seed = r.u64();
  auto flag = [&](const char* what) {
    const std::uint8_t b = r.u8();
    if (b > 1) throw FormatError(FormatErrorKind::malformed, std::string("bad value for ") + what);
    return b;
  };
  hp.commit_target = model::CommitTarget(flag("commit_target"));
  hp.orth_on_decoded = flag("orth_on_decoded");
  hp.codebook_update = model::CodebookUpdate(flag("codebook_update"));
  hp.dead_code_reinit = flag("dead_code_reinit");
  hp.dead_code_threshold = r.u64();
  hp.standardize = flag("standardize");
  // Guard against absurd sizes before anything is allocated.
  if (hp.hidden > (1u << 16) || hp.layers > 1024 || hp.input_dim > (1u << 20) || hp.latent_dim > (1u << 20) ||
      hp.codebook_size > (1u << 20) || hp.stages > 1024 || hp.tokens > (1u << 20))
    throw FormatError(FormatErrorKind::malformed, "implausible hyperparameters");
  try {
    hp.validate();
  } catch (const ContractViolation& e) {
    throw FormatError(FormatErrorKind::malformed, e.what());
  }
  return hp;
}

void save_checkpoint(const TrainState& s, std::ostream& os) {
  io::BinaryWriter w(os);
  w.bytes(std::string_view(kMagic, 4));
  w.u32(kCheckpointVersion);
  write_hyperparams(w, s.hp());
  w.u64(s.epoch);

  for (const nc::Parameter* p : s.model.parameters()) write_tensor(w, p->name, p->value);
  const bool standardized = s.model.input_mean().size() > 0;
  w.u8(standardized);
  if (standardized) {
    write_tensor(w, "input.mean", s.model.input_mean());
    write_tensor(w, "input.scale", s.model.input_scale());
  }

  auto& opt = const_cast<nc::Adam&>(s.optimizer);
  w.u64(opt.steps());
  w.u32(std::uint32_t(opt.size()));
  for (std::size_t i = 0; i < opt.size(); ++i) {
    write_tensor(w, "adam.m:" + opt.param(i).name, opt.first_moment(i));
    write_tensor(w, "adam.v:" + opt.param(i).name, opt.second_moment(i));
  }
  write_tensor(w, "ema.counts", s.ema.counts());
  write_tensor(w, "ema.sums", s.ema.sums());
  const auto& usage = s.model.codebook().usage();
  w.u32(std::uint32_t(usage.size()));
  for (std::uint64_t u : usage) w.u64(u);

  w.str(s.rng.state());
  if (!os) throw io::FileError("<checkpoint>", "write failed");
}

void save_checkpoint(const TrainState& s, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw io::FileError(path, "cannot open for writing");
  save_checkpoint(s, os);
  os.close();
  if (!os) throw io::FileError(path, "write failed");
}

std::unique_ptr<TrainState> load_checkpoint(std::istream& is) {
  io::BinaryReader r(is, "checkpoint");
  const std::string magic = r.bytes(4);
  if (magic != std::string_view(kMagic, 4)) throw FormatError(FormatErrorKind::bad_magic, "not a DFEM checkpoint");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError(FormatErrorKind::version_skew,
                      "checkpoint version " + std::to_string(version) + ", this build reads " + std::to_string(kCheckpointVersion));
  const model::Hyperparams hp = read_hyperparams(r);
  auto s = std::make_unique<TrainState>(hp, false);
  s->epoch = r.u64();

  for (nc::Parameter* p : s->model.parameters()) read_tensor(r, p->name, p->value);
  const std::uint8_t standardized = r.u8();
  if (standardized > 1) throw FormatError(FormatErrorKind::malformed, "bad standardization flag");
  if (standardized) {
    nc::Tensor mean({hp.input_dim}), scale({hp.input_dim});
    read_tensor(r, "input.mean", mean);
    read_tensor(r, "input.scale", scale);
    try {
      s->model.set_standardization(std::move(mean), std::move(scale));
    } catch (const ContractViolation& e) {
      throw FormatError(FormatErrorKind::malformed, e.what());
    }
  }

  s->optimizer.set_steps(r.u64());
  const std::uint32_t count = r.u32();
  if (count != s->optimizer.size())
    throw FormatError(FormatErrorKind::shape_mismatch,
                      "optimizer tracks " + std::to_string(count) + " tensors, hyperparameters imply " + std::to_string(s->optimizer.size()));
  for (std::size_t i = 0; i < count; ++i) {
    read_tensor(r, "adam.m:" + s->optimizer.param(i).name, s->optimizer.first_moment(i));
    read_tensor(r, "adam.v:" + s->optimizer.param(i).name, s->optimizer.second_moment(i));
  }
  read_tensor(r, "ema.counts", s->ema.counts());
  read_tensor(r, "ema.sums", s->ema.sums());
  const std::uint32_t k = r.u32();
  if (k != hp.codebook_size) throw FormatError(FormatErrorKind::shape_mismatch, "usage table size does not match the codebook");
  std::vector<std::uint64_t> usage(k);
  for (std::uint64_t& u : usage) u = r.u64();
  s->model.codebook().set_usage(std::move(usage));

  try {
    s->rng.set_state(r.str(1u << 16));
  } catch (const ContractViolation& e) {
    throw FormatError(FormatErrorKind::malformed, e.what());
  }
  if (!r.at_end()) throw FormatError(FormatErrorKind::malformed, "trailing bytes after the RNG state");
  return s;
}

std::unique_ptr<TrainState> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io::FileError(path, "cannot open for reading");
  return load_checkpoint(is);
}

}  // namespace dfe::train
