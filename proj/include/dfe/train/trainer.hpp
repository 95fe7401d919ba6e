#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dfe/model/model.hpp"
#include "dfe/numcore/adam.hpp"
#include "dfe/train/dataset.hpp"

namespace dfe::train {

/// Training stopped on a non-finite value. `term` is the loss term (recon,
/// commit, orth, l1, codebook, encoder, quantize) or "gradient:<parameter>".
class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(std::uint64_t epoch, std::uint64_t step, std::string term, const std::string& detail);
  std::uint64_t epoch() const noexcept { return epoch_; }
  std::uint64_t step() const noexcept { return step_; }
  const std::string& term() const noexcept { return term_; }

 private:
  std::uint64_t epoch_, step_;
  std::string term_;
};

/// Everything a run needs to continue: model, optimizer moments, EMA
/// statistics, the training RNG and the number of completed epochs.
///
/// All of it is kept representable in 32-bit floats at epoch boundaries, so a
/// checkpoint written there restores the run exactly.
class TrainState {
 public:
  /// Fresh run: weights drawn from the "init" substream of hp.seed.
  explicit TrainState(const model::Hyperparams& hp);
  /// Allocated but not initialised; used when loading a checkpoint.
  TrainState(const model::Hyperparams& hp, bool initialize);
  TrainState(const TrainState&) = delete;
  TrainState& operator=(const TrainState&) = delete;

  const model::Hyperparams& hp() const noexcept { return model.hp(); }
  /// Parameters updated by Adam (the codebook is excluded in EMA mode).
  bool codebook_in_optimizer() const noexcept;

  model::Model model;
  nc::Adam optimizer;
  rvq::EmaUpdater ema;
  Rng rng;
  std::uint64_t epoch = 0;
};

struct EpochLog {
  std::uint64_t epoch = 0;  // 1-based
  model::LossBreakdown loss;
  std::size_t reseeded = 0;
};

struct TrainOptions {
  std::ostream* loss_log = nullptr;  // CSV rows; header written when epoch 0
  std::function<void(const EpochLog&)> on_epoch;
};

/// Rounds every persisted tensor of `state` to 32-bit precision.
void round_to_storage(TrainState& state);

/// One pass over `data` in a freshly shuffled order. With lr == 0 nothing is
/// updated (neither Adam, EMA nor dead-code re-seeding).
EpochLog train_epoch(TrainState& state, const Dataset& data);

/// Runs epochs until state.epoch == hp.epochs.
std::vector<EpochLog> train(TrainState& state, const Dataset& data, const TrainOptions& options = {});

void write_loss_header(std::ostream& os);
void write_loss_row(std::ostream& os, const EpochLog& log);

}  // namespace dfe::train
