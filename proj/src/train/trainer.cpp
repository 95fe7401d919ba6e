#include "dfe/train/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <algorithm>
#include <numeric>

#include "dfe/numcore/errors.hpp"

namespace dfe::train {

TrainingAborted::TrainingAborted(std::uint64_t epoch, std::uint64_t step, std::string term, const std::string& detail)
    : std::runtime_error("training aborted at epoch " + std::to_string(epoch) + ", step " + std::to_string(step) + ", term " +
                         term + ": " + detail),
      epoch_(epoch),
      step_(step),
      term_(std::move(term)) {}

namespace {

std::vector<nc::Parameter*> trainable(model::Model& m) {
  auto params = m.parameters();
  if (m.hp().codebook_update == model::CodebookUpdate::ema) params.pop_back();  // codebook is last
  return params;
}

nc::AdamConfig adam_config(const model::Hyperparams& hp) {
  nc::AdamConfig c;
  c.lr = hp.lr;
  c.weight_decay = hp.weight_decay;
  return c;
}

void round_tensor(nc::Tensor& t) {
  for (double& v : t.data()) v = double(float(v));
}

void accumulate(model::LossBreakdown& acc, const model::LossBreakdown& l, double w) {
  acc.recon += w * l.recon;
  acc.commit += w * l.commit;
  acc.orth += w * l.orth;
  acc.l1 += w * l.l1;
  acc.total += w * l.total;
  acc.codebook += w * l.codebook;
}

}  // namespace

TrainState::TrainState(const model::Hyperparams& hp) : TrainState(hp, true) {}

TrainState::TrainState(const model::Hyperparams& hp, bool initialize)
    : model(hp),
      optimizer(adam_config(hp), trainable(model)),
      ema(model.codebook(), hp.ema_decay),
      rng(Rng::derive(hp.seed, "training")) {
  if (initialize) {
    Rng init(Rng::derive(hp.seed, "init"));
    model.initialize(init);
    ema = rvq::EmaUpdater(model.codebook(), hp.ema_decay);
    round_to_storage(*this);
  }
}

bool TrainState::codebook_in_optimizer() const noexcept { return hp().codebook_update == model::CodebookUpdate::loss; }

void round_to_storage(TrainState& s) {
  for (nc::Parameter* p : s.model.parameters()) round_tensor(p->value);
  for (std::size_t i = 0; i < s.optimizer.size(); ++i) {
    round_tensor(s.optimizer.first_moment(i));
    round_tensor(s.optimizer.second_moment(i));
  }
  round_tensor(s.ema.counts());
  round_tensor(s.ema.sums());
  if (s.model.input_mean().size() > 0) {
    nc::Tensor mean = s.model.input_mean(), scale = s.model.input_scale();
    round_tensor(mean);
    round_tensor(scale);
    s.model.set_standardization(std::move(mean), std::move(scale));
  }
}

EpochLog train_epoch(TrainState& s, const Dataset& data) {
  const model::Hyperparams& hp = s.hp();
  const std::size_t n = data.size(), dim = hp.input_dim, stages = hp.stages;
  if (n == 0) throw ContractViolation("train: empty dataset");
  if (data.dim() != dim) throw ContractViolation("train: dataset has " + std::to_string(data.dim()) + " features, model expects " + std::to_string(dim));

  const bool frozen = hp.lr == 0.0;
  const std::uint64_t epoch = s.epoch + 1;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  s.rng.shuffle(order);

  EpochLog log;
  log.epoch = epoch;
  nc::Tensor last_latents;
  std::vector<nc::Parameter*> params = s.model.parameters();
  std::uint64_t step = 0;
  for (std::size_t start = 0; start < n; start += hp.batch_size, ++step) {
    const std::size_t b = std::min(hp.batch_size, n - start);
    nc::Tensor batch({b, dim});
    for (std::size_t r = 0; r < b; ++r) {
      auto src = data.rows.row(order[start + r]);
      std::copy(src.begin(), src.end(), batch.row(r).begin());
    }

    model::BatchForward f;
    nc::Tape tape;
    try {
      f = s.model.forward(tape, batch);
      for (nc::Parameter* p : params) p->zero_grad();
      tape.backward(f.objective);
    } catch (const NumericFault& e) {
      throw TrainingAborted(epoch, step, e.op(), e.what());
    }
    const std::pair<const char*, double> terms[] = {{"recon", f.loss.recon}, {"commit", f.loss.commit}, {"orth", f.loss.orth},
                                                    {"l1", f.loss.l1},       {"total", f.loss.total},   {"codebook", f.loss.codebook}};
    for (const auto& [name, v] : terms)
      if (!std::isfinite(v)) throw TrainingAborted(epoch, step, name, "non-finite loss");

    if (!frozen) {
      try {
        s.optimizer.step();
      } catch (const nc::NonFiniteGradient& e) {
        throw TrainingAborted(epoch, step, "gradient:" + e.parameter(), e.what());
      }
      if (hp.codebook_update == model::CodebookUpdate::ema) {
        nc::Tensor inputs({b * stages, hp.latent_dim});
        std::vector<std::uint32_t> tokens(b * stages);
        for (std::size_t i = 0; i < stages; ++i)
          for (std::size_t r = 0; r < b; ++r) {
            auto src = f.assignment.stage_inputs[i].row(r);
            std::copy(src.begin(), src.end(), inputs.row(i * b + r).begin());
            tokens[i * b + r] = f.assignment.tokens[r][i];
          }
        s.ema.update(s.model.codebook(), inputs, tokens);
      }
    }
    for (const auto& t : f.assignment.tokens) s.model.codebook().record(t);
    accumulate(log.loss, f.loss, double(b) / double(n));
    last_latents = std::move(f.latents);
  }

  if (!frozen && hp.dead_code_reinit) {
    rvq::DeadCodeReport report = rvq::reinit_dead_codes(s.model.codebook(), last_latents, hp.dead_code_threshold, s.rng);
    if (s.codebook_in_optimizer()) s.optimizer.reset_rows(s.model.codebook().entries(), report.rows);
    s.ema.reset_rows(s.model.codebook(), report.rows);
    log.reseeded = report.rows.size();
  } else {
    s.model.codebook().reset_usage();
  }
  s.epoch = epoch;
  round_to_storage(s);
  return log;
}

std::vector<EpochLog> train(TrainState& s, const Dataset& data, const TrainOptions& options) {
  data.validate(s.hp().input_dim);
  if (s.hp().standardize && s.model.input_mean().size() == 0) {
    nc::Tensor mean, scale;
    column_moments(data.rows, mean, scale);
    s.model.set_standardization(std::move(mean), std::move(scale));
    round_to_storage(s);
  }
  if (options.loss_log && s.epoch == 0) write_loss_header(*options.loss_log);
  std::vector<EpochLog> logs;
  while (s.epoch < s.hp().epochs) {
    logs.push_back(train_epoch(s, data));
    if (options.loss_log) write_loss_row(*options.loss_log, logs.back());
    if (options.on_epoch) options.on_epoch(logs.back());
  }
  return logs;
}

void write_loss_header(std::ostream& os) { os << "epoch,recon,commit,orth,l1,total\n"; }

void write_loss_row(std::ostream& os, const EpochLog& log) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g,%.17g,%.17g,%.17g\n", static_cast<unsigned long long>(log.epoch), log.loss.recon,
                log.loss.commit, log.loss.orth, log.loss.l1, log.loss.total);
  os << buf;
}

}  // namespace dfe::train
