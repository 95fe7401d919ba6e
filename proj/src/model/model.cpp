#include "dfe/model/model.hpp"

#include <Eigen/Core>

#include <cmath>
#include <string>

#include "dfe/numcore/errors.hpp"
#include "dfe/numcore/ops.hpp"

namespace dfe::model {

using nc::Parameter;
using nc::Tape;
using nc::Tensor;
using nc::Var;

namespace {

Parameter make(std::string name, nc::Shape shape) { return Parameter(std::move(name), Tensor(std::move(shape))); }

void fill_normal(Parameter& p, Rng& rng, double sd) {
  for (double& v : p.value.data()) v = rng.normal(0.0, sd);
}

// psi-hat = W z_st + b, but the forward value is assembled per token as
// b + W e_{k_1} + ... + W e_{k_L} so that it matches Model::reconstruct bit for bit.
Var additive_decode(Var z_st, Var w, Var b, Tensor value) {
  return z_st.tape().record("additive_decode", std::move(value), {z_st, w, b}, [](const nc::BackwardContext& c) {
    using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    auto view = [](const Tensor& t) { return Eigen::Map<const Mat>(t.ptr(), Eigen::Index(t.rows()), Eigen::Index(t.cols())); };
    auto edit = [](Tensor& t) { return Eigen::Map<Mat>(t.ptr(), Eigen::Index(t.rows()), Eigen::Index(t.cols())); };
    const auto g = view(c.grad());
    if (Tensor* gz = c.input_grad(0)) edit(*gz).noalias() += g * view(c.input(1));
    if (Tensor* gw = c.input_grad(1)) edit(*gw).noalias() += g.transpose() * view(c.input(0));
    if (Tensor* gb = c.input_grad(2))
      Eigen::Map<Eigen::RowVectorXd>(gb->ptr(), Eigen::Index(gb->size())) += g.colwise().sum();
  });
}

// Re-labels a numeric fault with the loss term being computed.
template <class F>
auto guarded(const char* term, F&& f) {
  try {
    return f();
  } catch (const NumericFault& e) {
    throw NumericFault(term, e.what());
  }
}

}  // namespace

Model::Model(Hyperparams hp) : hp_(hp) {
  hp_.validate();
  const std::size_t h = hp_.hidden, d = hp_.token_dim, t = hp_.tokens, dz = hp_.latent_dim;
  enc_.in_w = make("encoder.in.weight", {h, d});
  enc_.in_b = make("encoder.in.bias", {h});
  enc_.pos = make("encoder.pos", {t, h});
  for (std::size_t l = 0; l < hp_.layers; ++l) {
    const std::string p = "encoder.layer" + std::to_string(l) + ".";
    EncoderLayer layer;
    layer.ln1_gamma = Parameter(p + "ln1.gamma", Tensor({h}, 1.0));
    layer.ln1_beta = make(p + "ln1.beta", {h});
    layer.qkv_w = make(p + "qkv.weight", {3 * h, h});
    layer.proj_w = make(p + "proj.weight", {h, h});
    layer.proj_b = make(p + "proj.bias", {h});
    layer.ln2_gamma = Parameter(p + "ln2.gamma", Tensor({h}, 1.0));
    layer.ln2_beta = make(p + "ln2.beta", {h});
    layer.mlp_w1 = make(p + "mlp1.weight", {4 * h, h});
    layer.mlp_b1 = make(p + "mlp1.bias", {4 * h});
    layer.mlp_w2 = make(p + "mlp2.weight", {h, 4 * h});
    layer.mlp_b2 = make(p + "mlp2.bias", {h});
    enc_.layers.push_back(std::move(layer));
  }
  enc_.out_w = make("encoder.out.weight", {dz, h});
  enc_.out_b = make("encoder.out.bias", {dz});
  dec_.w = make("decoder.weight", {hp_.input_dim, dz});
  dec_.b = make("decoder.bias", {hp_.input_dim});
  cb_ = rvq::Codebook(hp_.codebook_size, dz);
}

void Model::initialize(Rng& rng) {
  const double sd = 0.02;
  fill_normal(enc_.in_w, rng, sd);
  enc_.in_b.value.fill(0.0);
  fill_normal(enc_.pos, rng, sd);
  for (EncoderLayer& l : enc_.layers) {
    l.ln1_gamma.value.fill(1.0);
    l.ln1_beta.value.fill(0.0);
    fill_normal(l.qkv_w, rng, sd);
    fill_normal(l.proj_w, rng, sd);
    l.proj_b.value.fill(0.0);
    l.ln2_gamma.value.fill(1.0);
    l.ln2_beta.value.fill(0.0);
    fill_normal(l.mlp_w1, rng, sd);
    l.mlp_b1.value.fill(0.0);
    fill_normal(l.mlp_w2, rng, sd);
    l.mlp_b2.value.fill(0.0);
  }
  fill_normal(enc_.out_w, rng, sd);
  enc_.out_b.value.fill(0.0);
  fill_normal(dec_.w, rng, sd);
  dec_.b.value.fill(0.0);
  fill_normal(cb_.entries(), rng, 1.0 / std::sqrt(double(hp_.latent_dim)));
  cb_.reset_usage();
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out{&enc_.in_w, &enc_.in_b, &enc_.pos};
  for (EncoderLayer& l : enc_.layers)
    for (Parameter* p : {&l.ln1_gamma, &l.ln1_beta, &l.qkv_w, &l.proj_w, &l.proj_b, &l.ln2_gamma, &l.ln2_beta,
                         &l.mlp_w1, &l.mlp_b1, &l.mlp_w2, &l.mlp_b2})
      out.push_back(p);
  for (Parameter* p : {&enc_.out_w, &enc_.out_b, &dec_.w, &dec_.b, &cb_.entries()}) out.push_back(p);
  return out;
}

std::vector<const Parameter*> Model::parameters() const {
  auto mut = const_cast<Model*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

void Model::set_standardization(Tensor mean, Tensor scale) {
  if (mean.size() == 0 && scale.size() == 0) {
    mean_ = Tensor();
    scale_ = Tensor();
    return;
  }
  if (mean.size() != hp_.input_dim || scale.size() != hp_.input_dim)
    throw ContractViolation("set_standardization: expected " + std::to_string(hp_.input_dim) + " values");
  for (double s : scale.data())
    if (!(s > 0.0) || !std::isfinite(s)) throw ContractViolation("set_standardization: scales must be positive");
  mean_ = std::move(mean).reshaped({hp_.input_dim});
  scale_ = std::move(scale).reshaped({hp_.input_dim});
}

Tensor Model::standardized(const Tensor& batch) const {
  if (mean_.size() == 0) return batch;
  Tensor out = batch;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = (row[j] - mean_[j]) / scale_[j];
  }
  return out;
}

Var Model::encode(Tape& tape, const Tensor& batch) {
  if (batch.rank() != 2 || batch.cols() != hp_.input_dim)
    throw ContractViolation("encode: expected [B, " + std::to_string(hp_.input_dim) + "] input, got " + nc::shape_string(batch.shape()));
  const std::size_t b = batch.rows(), t = hp_.tokens, h = hp_.hidden;
  Var x = tape.constant(standardized(batch).reshaped({b * t, hp_.token_dim}));
  Var hs = nc::linear(x, tape.param(enc_.in_w), tape.param(enc_.in_b));
  hs = nc::add_broadcast_rows(hs, tape.param(enc_.pos));
  for (EncoderLayer& l : enc_.layers) {
    Var a = nc::layer_norm(hs, tape.param(l.ln1_gamma), tape.param(l.ln1_beta));
    a = nc::linear(a, tape.param(l.qkv_w));
    a = nc::attention(a, t, hp_.heads);
    hs = nc::add(hs, nc::linear(a, tape.param(l.proj_w), tape.param(l.proj_b)));
    Var m = nc::layer_norm(hs, tape.param(l.ln2_gamma), tape.param(l.ln2_beta));
    m = nc::gelu(nc::linear(m, tape.param(l.mlp_w1), tape.param(l.mlp_b1)));
    hs = nc::add(hs, nc::linear(m, tape.param(l.mlp_w2), tape.param(l.mlp_b2)));
  }
  Var pooled = nc::mean_axis(nc::reshape(hs, {b, t, h}), 1);
  return nc::linear(pooled, tape.param(enc_.out_w), tape.param(enc_.out_b));
}

BatchForward Model::forward(Tape& tape, const Tensor& batch, const FrozenAssignment* frozen) {
  const std::size_t n = batch.rows(), dz = hp_.latent_dim, stages = hp_.stages;
  if (n == 0) throw ContractViolation("forward: empty batch");
  Var z0 = guarded("encoder", [&] { return encode(tape, batch); });
  const Tensor z0v = z0.value();

  BatchForward out;
  FrozenAssignment& a = out.assignment;
  if (frozen) {
    if (frozen->tokens.size() != n || frozen->partial_sums.size() != stages + 1 || frozen->selected.size() != stages ||
        frozen->stage_inputs.size() != stages)
      throw ContractViolation("forward: frozen assignment does not match the batch");
    a = *frozen;
  } else {
    a.tokens.resize(n);
    a.st_offset = Tensor({n, dz});
    a.partial_sums.assign(stages + 1, Tensor({n, dz}));
    a.selected.assign(stages, Tensor({n, dz}));
    a.stage_inputs.assign(stages, Tensor({n, dz}));
    for (std::size_t r = 0; r < n; ++r) {
      rvq::QuantizationResult q = guarded("quantize", [&] { return rvq::quantize(z0v.row(r), cb_, stages); });
      for (std::size_t i = 1; i <= stages; ++i) {
        auto e = cb_.entry(q.tokens[i - 1]);
        auto prev = a.partial_sums[i - 1].row(r);
        auto cur = a.partial_sums[i].row(r);
        auto sel = a.selected[i - 1].row(r);
        auto in = a.stage_inputs[i - 1].row(r);
        auto res = q.residuals.row(i - 1);
        for (std::size_t j = 0; j < dz; ++j) {
          cur[j] = prev[j] + e[j];
          sel[j] = e[j];
          in[j] = res[j];
        }
      }
      auto off = a.st_offset.row(r);
      for (std::size_t j = 0; j < dz; ++j) off[j] = q.quantized[j] - z0v.at(r, j);
      a.tokens[r] = std::move(q.tokens);
    }
  }

  Var w = tape.param(dec_.w);
  Var bias = tape.param(dec_.b);
  Var psi_hat = guarded("recon", [&] {
    if (frozen) return nc::linear(nc::add(z0, tape.constant(a.st_offset)), w, bias);
    Var z_st = rvq::straight_through(z0, a.partial_sums[stages]);
    const Tensor offsets = template_offsets();
    Tensor value({n, hp_.input_dim});
    for (std::size_t r = 0; r < n; ++r) {
      auto row = value.row(r);
      for (std::size_t i = 0; i < row.size(); ++i) row[i] = dec_.b.value[i];
      for (std::uint32_t k : a.tokens[r]) {
        auto o = offsets.row(k);
        for (std::size_t i = 0; i < row.size(); ++i) row[i] += o[i];
      }
    }
    return additive_decode(z_st, w, bias, std::move(value));
  });

  const double inv_n = 1.0 / double(n);
  Var target = tape.constant(batch);
  Var recon = guarded("recon", [&] { return nc::scale(nc::sum_squares(nc::sub(psi_hat, target)), inv_n); });

  Var commit = guarded("commit", [&] {
    Var acc;
    for (std::size_t i = 1; i <= stages; ++i) {
      const std::size_t cut = hp_.commit_target == CommitTarget::pre ? i - 1 : i;
      Var z = cut == 0 ? z0 : nc::sub(z0, tape.constant(a.partial_sums[cut]));
      Var term = nc::sum_squares(nc::sub(z, tape.constant(a.selected[i - 1])));
      acc = acc.valid() ? nc::add(acc, term) : term;
    }
    return nc::scale(acc, inv_n);
  });

  Var codes = tape.param(cb_.entries());
  Var orth = guarded("orth", [&] {
    return hp_.orth_on_decoded ? nc::pairwise_orthogonality(nc::linear(codes, w)) : nc::pairwise_orthogonality(codes);
  });
  Var l1 = guarded("l1", [&] { return nc::scale(nc::l1_norm(psi_hat), inv_n); });

  Var total = guarded("total", [&] {
    return nc::add(nc::add(nc::add(recon, nc::scale(commit, hp_.beta_commit)), nc::scale(orth, hp_.lambda_orth)),
                   nc::scale(l1, hp_.lambda_reg));
  });

  Var cb_loss = guarded("codebook", [&] {
    Var acc;
    std::vector<std::uint32_t> column(n);
    for (std::size_t i = 0; i < stages; ++i) {
      for (std::size_t r = 0; r < n; ++r) column[r] = a.tokens[r][i];
      Var term = nc::sum_squares(nc::sub(tape.constant(a.stage_inputs[i]), nc::gather_rows(codes, column)));
      acc = acc.valid() ? nc::add(acc, term) : term;
    }
    return nc::scale(acc, inv_n);
  });

  out.total = total;
  out.objective = total;
  if (hp_.codebook_update == CodebookUpdate::loss && hp_.codebook_loss_weight > 0.0)
    out.objective = guarded("codebook", [&] { return nc::add(total, nc::scale(cb_loss, hp_.codebook_loss_weight)); });

  out.loss.recon = recon.value().item();
  out.loss.commit = commit.value().item();
  out.loss.orth = orth.value().item();
  out.loss.l1 = l1.value().item();
  out.loss.total = total.value().item();
  out.loss.codebook = cb_loss.value().item();
  out.latents = z0v;
  out.reconstruction = psi_hat.value();
  return out;
}

SingleForward Model::forward(std::span<const double> psi) {
  if (psi.size() != hp_.input_dim) throw ContractViolation("forward: expected " + std::to_string(hp_.input_dim) + " values");
  Tape tape(false);
  BatchForward f = forward(tape, Tensor({1, psi.size()}, std::vector<double>(psi.begin(), psi.end())));
  return {std::move(f.reconstruction).reshaped({hp_.input_dim}), std::move(f.assignment.tokens[0]), f.loss};
}

Tensor Model::encode(std::span<const double> psi) {
  if (psi.size() != hp_.input_dim) throw ContractViolation("encode: expected " + std::to_string(hp_.input_dim) + " values");
  Tape tape(false);
  return encode(tape, Tensor({1, psi.size()}, std::vector<double>(psi.begin(), psi.end()))).value().reshaped({hp_.latent_dim});
}

Tensor Model::decode(std::span<const double> z) const {
  if (z.size() != hp_.latent_dim) throw ContractViolation("decode: expected " + std::to_string(hp_.latent_dim) + " values");
  Tensor out({hp_.input_dim});
  for (std::size_t i = 0; i < hp_.input_dim; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) acc += dec_.w.value.at(i, j) * z[j];
    out[i] = dec_.b.value[i] + acc;
  }
  return out;
}

std::vector<rvq::TokenSequence> Model::tokenize(const Tensor& batch) {
  Tape tape(false);
  Var z0 = encode(tape, batch);
  std::vector<rvq::TokenSequence> out(batch.rows());
  for (std::size_t r = 0; r < batch.rows(); ++r) out[r] = rvq::quantize(z0.value().row(r), cb_, hp_.stages).tokens;
  return out;
}

Tensor Model::token_template(std::size_t k) const {
  if (k >= cb_.size()) throw ContractViolation("token_template: code " + std::to_string(k) + " out of range");
  return decode(cb_.entry(k));
}

Tensor Model::template_offset(std::size_t k) const {
  Tensor out = token_template(k);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= dec_.b.value[i];
  return out;
}

Tensor Model::template_offsets() const {
  Tensor out({cb_.size(), hp_.input_dim});
  for (std::size_t k = 0; k < cb_.size(); ++k) {
    const Tensor o = template_offset(k);
    std::copy(o.data().begin(), o.data().end(), out.row(k).begin());
  }
  return out;
}

Tensor Model::reconstruct(std::span<const std::uint32_t> tokens) const {
  Tensor out = dec_.b.value;
  for (std::uint32_t k : tokens) {
    const Tensor o = template_offset(k);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += o[i];
  }
  return out;
}

}  // namespace dfe::model
