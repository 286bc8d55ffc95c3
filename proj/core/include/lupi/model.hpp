#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lupi/layers.hpp"

namespace lupi {

enum class ModelKind { kLupi, kNoXstar, kGaussianDropout, kMultitask };

std::string model_kind_name(ModelKind kind);
ModelKind model_kind_from_name(const std::string& name);

struct ModelArch {
  std::size_t input_dim = 256;
  std::size_t num_classes = 10;
  std::vector<std::size_t> trunk_widths = {64, 32};
  std::vector<std::size_t> site_widths = {32, 32};  // fc1/fc2 widths, one site each
  std::size_t var_hidden = 32;

  std::string fingerprint() const;
};

struct BaselineKind {
  ModelKind kind = ModelKind::kNoXstar;
  double drop_prob = 0.5;   // gaussian_dropout
  double lambda_mt = 0.1;   // multitask
};

struct NamedParam {
  std::string name;
  Var value;
  bool weight_decay;
};

struct ForwardResult {
  Var logits;
  std::vector<Var> sigmas;  // one per dropout site; empty when x* absent
};

/// Shared trunk on x and x*, mean head on x with two dropout sites,
/// per-site variance heads on the x* branch. Baselines reuse the same
/// x→logits stack so parameter counts on that path match exactly.
class Model {
 public:
  ModelKind kind() const { return kind_; }
  const ModelArch& arch() const { return arch_; }
  const HeteroDropoutConfig& dropout_config() const { return dropout_cfg_; }
  double gaussian_sigma_sq() const { return gauss_sigma_sq_; }
  double lambda_mt() const { return lambda_mt_; }

  std::vector<NamedParam> params() const;
  std::size_t param_count_x_path() const;

  /// Trunk+head on x only; deterministic, no RNG, privileged branch unused.
  Var forward_eval(const Var& x) const;
  Tensor forward_eval(const Tensor& x) const;

  /// Training path. For the LUPI model with x* present the dropout sites
  /// draw fresh noise from rng; with x* absent the sites pass through.
  ForwardResult forward_train(const Var& x, const Var* xstar, RngState& rng) const;

  /// Frozen-noise variant for gradient checks: eps per site, shaped like the
  /// site activation.
  ForwardResult forward_train_with_noise(const Var& x, const Var* xstar,
                                         const std::vector<Tensor>& eps) const;

  Var trunk_embed(const Var& input) const;
  Var aux_predict(const Var& trunk_x) const;

  /// Per-site Σ for a batch of x* rows (LUPI model only, deterministic).
  std::vector<Tensor> site_sigmas(const Tensor& xstar) const;

  std::size_t num_sites() const { return arch_.site_widths.size(); }

  friend Model build_lupi(const ModelArch& arch, const HeteroDropoutConfig& cfg,
                          std::uint64_t seed);
  friend Model build_baseline(const BaselineKind& kind, const ModelArch& arch,
                              std::uint64_t seed);

 private:
  ModelKind kind_ = ModelKind::kLupi;
  ModelArch arch_;
  HeteroDropoutConfig dropout_cfg_;
  double gauss_sigma_sq_ = 0.0;
  double lambda_mt_ = 0.0;

  std::vector<AffineLayer> trunk_;
  std::vector<AffineLayer> head_;  // fc per site, then output layer
  std::vector<std::vector<AffineLayer>> var_heads_;
  std::optional<AffineLayer> aux_;

  ForwardResult forward_impl(const Var& x, const Var* xstar, RngState* rng,
                             const std::vector<Tensor>* eps) const;
};

Model build_lupi(const ModelArch& arch, const HeteroDropoutConfig& cfg,
                 std::uint64_t seed);
Model build_baseline(const BaselineKind& kind, const ModelArch& arch,
                     std::uint64_t seed);

}  // namespace lupi
