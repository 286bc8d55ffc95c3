#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lupi/rng.hpp"
#include "lupi/tensor.hpp"

namespace lupi {

struct Prop1Inputs {
  double lambda_l;  // Lipschitz constant of the loss
  double eps;       // cover radius
  double L;         // loss bound
  double K;         // covering number
  double delta;
  std::size_t n;
};

/// λˡ·ε + L·√((2K·log2 + 2·log(1/δ))/n)
double prop1_bound(const Prop1Inputs& in);

struct Prop2Inputs {
  double C;      // class count
  double xi;     // output-variance bound ξ (must be ≤ delta)
  double M_w;    // max |path weight|
  double M_z;    // output bound
  double P;      // path count
  double delta;
  std::size_t n;
  double eps_y;  // label-distribution gap
};

/// 2C((ξ+1)log(1/δ) + M_w(3ξ+M_z)log(P/δ))/(3n) + (2C+1)εᵧ
double prop2_bound(const Prop2Inputs& in);

/// Probe network for the path decomposition: affine (no bias), ReLU,
/// max-pool over consecutive groups.
struct ProbeLayer {
  enum class Type { kAffine, kRelu, kMaxPool };
  Type type;
  Tensor W;                    // affine only, [out×in]
  std::size_t pool_width = 0;  // max-pool only
};

struct PathEnumeration {
  std::size_t P = 0;  // number of input→output weight paths
  double M_w = 0.0;   // max over paths of |Π weights|
  Tensor path_sum;    // must equal the standard forward output
  std::vector<std::uint8_t> gates;  // σ_p per path, enumeration order
};

Tensor probe_forward(const std::vector<ProbeLayer>& layers, const Tensor& x);

/// Exhaustive path decomposition zᵢ = Σ_p x_p σ_p w_p. Guarded at P ≤ 10⁶.
PathEnumeration enumerate_paths(const std::vector<ProbeLayer>& layers, const Tensor& x);

struct BernsteinConfig {
  std::size_t d = 1;
  std::size_t num_matrices = 16;
  double R = 1.0;     // a.s. bound on λ_max(Mᵢ)
  double delta = 0.05;
  std::size_t trials = 10000;
};

struct BernsteinResult {
  double bound_value;
  double empirical_violation_rate;
  double gamma;
};

/// Diagonal Rademacher ensemble (entries ±R): samples `trials` sums and
/// reports how often λ_max exceeds ((3γ+R)/6)·log(d/δ) with γ²=‖ΣE[Mᵢ²]‖₂
/// computed analytically.
BernsteinResult bernstein_check(const BernsteinConfig& config, RngState& rng);

/// Grid upper bound ⌈diameter/(2ε/√dim)⌉^dim on the ℓ₂ covering number of a
/// hypercube. Overflow guarded at 2⁶³.
std::uint64_t covering_number_grid(std::size_t dim, double diameter, double eps);

struct RateFitPoint {
  std::string model;
  std::size_t n;
  double train_top1;
  double test_top1;
};

struct RateFitResult {
  double slope;
  double stderr_;
  std::size_t points;
};

/// OLS slope of log(train−test accuracy gap, clamped at 1e−4) vs log n,
/// per model. Diagnostic only.
std::map<std::string, RateFitResult> rate_fit(const std::vector<RateFitPoint>& points);

/// Parses a sweep gap CSV (model,n,fraction,seed,train_top1,test_top1,status).
std::vector<RateFitPoint> parse_gap_csv(const std::string& csv_text);

}  // namespace lupi
