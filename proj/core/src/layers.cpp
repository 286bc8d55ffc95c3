#include "lupi/layers.hpp"

#include <cmath>
#include <numbers>

namespace lupi {

AffineLayer make_affine(std::size_t in, std::size_t out, RngState& rng) {
  Tensor W({out, in});
  double limit = std::sqrt(6.0 / static_cast<double>(in));
  for (std::size_t i = 0; i < W.size(); ++i) W[i] = rng.uniform(-limit, limit);
  return {param(std::move(W), "W"), param(Tensor({out}), "b")};
}

Var affine_forward(const AffineLayer& layer, const Var& input) {
  return linear(input, layer.W, layer.b);
}

Var variance_head_forward(const Var& features, const std::vector<AffineLayer>& head,
                          const HeteroDropoutConfig& config) {
  Var h = features;
  for (std::size_t i = 0; i < head.size(); ++i) {
    h = affine_forward(head[i], h);
    if (i + 1 < head.size()) h = relu(h);
  }
  Var sigma = clamp_max(softplus(h), config.sigma_sq_max);
  const Tensor& v = sigma->value;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw NumericError("variance head produced non-finite value at unit " +
                         std::to_string(i % v.cols()));
    }
  }
  return sigma;
}

Var hetero_dropout(const Var& h_mean, const Var& sigma, RngState& rng,
                   DropoutMode mode) {
  if (mode == DropoutMode::kEval) return h_mean;
  check_same_shape(h_mean->value, sigma->value, "hetero_dropout");
  Tensor eps(h_mean->value.shape());
  for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = rng.normal();
  return hetero_dropout_with_noise(h_mean, sigma, eps);
}

Var hetero_dropout_with_noise(const Var& h_mean, const Var& sigma, const Tensor& eps) {
  check_same_shape(h_mean->value, sigma->value, "hetero_dropout");
  check_same_shape(h_mean->value, eps, "hetero_dropout noise");
  // multiplier 1 + √Σ⊙ε ; sqrt_ rejects negative Σ entries
  Var mult = axpb(mul(sqrt_(sigma), constant(eps, "eps")), 1.0, 1.0);
  return mul(h_mean, mult);
}

Var ib_penalty(const Var& sigma_batch, double beta) {
  return axpb(mean(abs_(log_(sigma_batch))), beta, 0.0);
}

std::pair<double, double> kl_mc_check(const Tensor& sigma, const Tensor& mean,
                                      std::size_t samples, RngState& rng) {
  check_same_shape(sigma, mean, "kl_mc_check");
  if (samples < 1) throw std::invalid_argument("kl_mc_check: samples must be >= 1");
  const double two_pi = 2.0 * std::numbers::pi;
  double analytic = 0.0;
  for (std::size_t j = 0; j < sigma.size(); ++j) {
    if (sigma[j] <= 0.0)
      throw NumericError("kl_mc_check: non-positive sigma at " + std::to_string(j));
    analytic += 0.5 * (1.0 + std::log(two_pi * sigma[j]));
  }
  double acc = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    double logq = 0.0;
    for (std::size_t j = 0; j < sigma.size(); ++j) {
      double z = mean[j] + std::sqrt(sigma[j]) * rng.normal();
      double d = z - mean[j];
      logq += -0.5 * std::log(two_pi * sigma[j]) - d * d / (2.0 * sigma[j]);
    }
    acc += -logq;
  }
  return {analytic, acc / static_cast<double>(samples)};
}

}  // namespace lupi
