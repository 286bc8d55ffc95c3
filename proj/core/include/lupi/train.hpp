#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lupi/data.hpp"
#include "lupi/model.hpp"

namespace lupi {

enum class OptimizerKind { kAdam, kSgdMomentum };

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double lr = 1e-3;
  double momentum = 0.9;
  double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
  double weight_decay = 1e-4;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 60;
  std::size_t patience = 5;
  double decay_factor = 10.0;
  double beta = 1.0;  // IB coefficient
  std::uint64_t seed = 0;
  int mc_samples = 1;
  double divergence_threshold = 1e6;
};

struct EpochRow {
  std::size_t epoch;
  std::string split;
  double ce, penalty, total_loss, top1;
};

struct EvalResult {
  double top1 = 0.0;
  double ce = 0.0;
};

struct RunRecord {
  std::vector<EpochRow> rows;
  EvalResult final_test;
  double train_top1 = 0.0;  // eval-mode, best checkpoint
  std::string status = "ok";
  std::size_t best_epoch = 0;
  TrainConfig config;
};

/// Validation-accuracy-driven schedule: decay lr after `patience` epochs
/// without strict improvement, stop after two fruitless decays.
class LrPolicy {
 public:
  LrPolicy(double lr, std::size_t patience, double decay_factor)
      : lr_(lr), patience_(patience), decay_factor_(decay_factor) {}

  struct Decision {
    bool improved;
    bool stop;
  };

  Decision observe(double val_metric) {
    if (val_metric > best_) {
      best_ = val_metric;
      bad_epochs_ = 0;
      fruitless_decays_ = 0;
      return {true, false};
    }
    if (++bad_epochs_ >= patience_) {
      if (fruitless_decays_ >= 2) return {false, true};
      lr_ /= decay_factor_;
      ++fruitless_decays_;
      bad_epochs_ = 0;
    }
    return {false, false};
  }

  double lr() const { return lr_; }

 private:
  double lr_;
  std::size_t patience_;
  double decay_factor_;
  double best_ = -1.0;
  std::size_t bad_epochs_ = 0;
  std::size_t fruitless_decays_ = 0;
};

/// First-order update over a model's parameters. Weight decay touches only
/// parameters flagged for it (affine weights, never biases).
class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, std::vector<NamedParam> params);
  void step(double lr);

 private:
  TrainConfig cfg_;
  std::vector<NamedParam> params_;
  std::vector<Tensor> m_, v_;
  int t_ = 0;
};

/// Per-seed shuffled prefix of a train pool; smaller sizes are subsets of
/// larger ones for the same seed.
std::vector<std::size_t> nested_prefix(std::size_t pool_size, std::size_t size,
                                       std::uint64_t seed);

/// Eq.-style training objective for one batch slice: mean cross-entropy
/// (penalty-free rows handled by the unit-multiplier fallback) plus the
/// per-site IB penalties over rows that carry x*. Either rng (fresh noise)
/// or frozen_eps (per-site noise for present rows) drives the dropout sites.
Var model_loss(const Model& model, const TripletDataset& data,
               const std::vector<std::size_t>& indices, double beta, RngState* rng,
               const std::vector<Tensor>* frozen_eps = nullptr, int mc_samples = 1,
               double* out_ce = nullptr, double* out_penalty = nullptr);

EvalResult evaluate(const Model& model, const TripletDataset& split);

/// Minibatch training with validation-driven lr decay (decay after
/// `patience` non-improving epochs, stop after two fruitless decays).
/// Returns the best-validation parameters loaded back into `model`.
RunRecord train(Model& model, const TripletDataset& train_split,
                const TripletDataset& val_split, const TripletDataset& test_split,
                const TrainConfig& config);

struct SweepCell {
  std::string model;
  std::size_t n = 0;
  double fraction = 1.0;
  std::uint64_t seed = 0;
  double top1 = 0.0;
  double train_top1 = 0.0;
  std::string status = "ok";
};

struct SweepSetup {
  GenConfig gen;
  ModelArch arch;
  HeteroDropoutConfig dropout;
  std::size_t pool_n = 6000;
  std::uint64_t data_seed = 7;
  std::array<double, 3> split_fractions = {0.70, 0.15, 0.15};
  double drop_prob = 0.5;
  double lambda_mt = 0.1;
};

/// Sample-efficiency sweep: every (size, seed, model) cell trains on a
/// nested prefix of the per-seed shuffled train pool.
std::vector<SweepCell> sweep_n(const std::vector<std::size_t>& sizes,
                               const std::vector<std::uint64_t>& seeds,
                               const std::vector<std::string>& models,
                               const TrainConfig& base, const SweepSetup& setup,
                               std::size_t jobs = 1);

/// Partial-privileged-information sweep at fixed n: LUPI runs per
/// (fraction, seed).
std::vector<SweepCell> sweep_xstar_fraction(const std::vector<double>& fractions,
                                            const std::vector<std::uint64_t>& seeds,
                                            std::size_t n, const TrainConfig& base,
                                            const SweepSetup& setup,
                                            std::size_t jobs = 1);

/// Reflag which records carry x*: first ⌊fraction·n⌋ after a seeded shuffle.
TripletDataset with_xstar_fraction(const TripletDataset& ds, double fraction,
                                   std::uint64_t seed);

struct DiagRow {
  long unit_index;  // -1 for group grand mean
  std::string group;
  double mean_sigma;
  std::size_t count;
};

/// Per-unit mean Σ for correctly vs. incorrectly classified records,
/// units ordered by overall mean energy.
std::vector<DiagRow> variance_diagnostics(const Model& model,
                                          const TripletDataset& split);

std::string sweep_csv(const std::vector<SweepCell>& cells);
std::string metrics_csv(const RunRecord& record);
std::string diagnostics_csv(const std::vector<DiagRow>& rows);
std::string sweep_gap_csv(const std::vector<SweepCell>& cells);

}  // namespace lupi
