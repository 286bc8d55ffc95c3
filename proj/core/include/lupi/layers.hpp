#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "lupi/autodiff.hpp"
#include "lupi/rng.hpp"

namespace lupi {

struct AffineLayer {
  Var W;  // [out×in]
  Var b;  // [out]
};

/// He-style fan-in-scaled uniform weights, zero bias.
AffineLayer make_affine(std::size_t in, std::size_t out, RngState& rng);

Var affine_forward(const AffineLayer& layer, const Var& input);

struct HeteroDropoutConfig {
  double sigma_sq_max = 4.0;
  int mc_samples = 1;
};

/// Per-unit variance from the privileged branch: affine stack with ReLU
/// between layers, then softplus capped at sigma_sq_max. Entries lie in
/// (0, sigma_sq_max].
Var variance_head_forward(const Var& features, const std::vector<AffineLayer>& head,
                          const HeteroDropoutConfig& config);

enum class DropoutMode { kTrain, kEval };

/// Multiplicative Gaussian dropout, reparameterized:
/// train: h ⊙ (1 + √Σ ⊙ ε), ε ~ N(0,1) per unit; eval: h unchanged, no RNG.
Var hetero_dropout(const Var& h_mean, const Var& sigma, RngState& rng, DropoutMode mode);

/// Same with injected noise (frozen ε for gradient checks).
Var hetero_dropout_with_noise(const Var& h_mean, const Var& sigma, const Tensor& eps);

/// beta · mean over batch and units of |log Σ|.
Var ib_penalty(const Var& sigma_batch, double beta);

/// Differential-entropy cross-check for the diagonal Gaussian N(mean, Σ):
/// analytic Σⱼ ½(1+log 2πΣⱼ) vs. Monte-Carlo −(1/S)Σ log q(z).
std::pair<double, double> kl_mc_check(const Tensor& sigma, const Tensor& mean,
                                      std::size_t samples, RngState& rng);

}  // namespace lupi
