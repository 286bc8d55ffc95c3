#include "lupi/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace lupi {

double prop1_bound(const Prop1Inputs& in) {
  if (in.n == 0) throw std::invalid_argument("prop1_bound: n must be > 0");
  if (in.delta <= 0.0 || in.delta > 1.0)
    throw std::invalid_argument("prop1_bound: delta must be in (0,1]");
  if (in.lambda_l < 0.0 || in.eps < 0.0 || in.L < 0.0 || in.K < 0.0)
    throw std::invalid_argument("prop1_bound: inputs must be nonnegative");
  double inner = (2.0 * in.K * std::log(2.0) + 2.0 * std::log(1.0 / in.delta)) /
                 static_cast<double>(in.n);
  return in.lambda_l * in.eps + in.L * std::sqrt(inner);
}

double prop2_bound(const Prop2Inputs& in) {
  if (in.n == 0) throw std::invalid_argument("prop2_bound: n must be > 0");
  if (in.delta <= 0.0 || in.delta > 1.0)
    throw std::invalid_argument("prop2_bound: delta must be in (0,1]");
  if (in.xi > in.delta) {
    throw std::invalid_argument("prop2_bound: side condition xi <= delta violated (xi=" +
                                std::to_string(in.xi) + ", delta=" +
                                std::to_string(in.delta) + ")");
  }
  if (in.C < 0.0 || in.xi < 0.0 || in.M_w < 0.0 || in.M_z < 0.0 || in.P < 1.0 ||
      in.eps_y < 0.0)
    throw std::invalid_argument("prop2_bound: invalid inputs");
  double term = 2.0 * in.C *
                ((in.xi + 1.0) * std::log(1.0 / in.delta) +
                 in.M_w * (3.0 * in.xi + in.M_z) * std::log(in.P / in.delta)) /
                (3.0 * static_cast<double>(in.n));
  return term + (2.0 * in.C + 1.0) * in.eps_y;
}

Tensor probe_forward(const std::vector<ProbeLayer>& layers, const Tensor& x) {
  Tensor a = x;
  for (const auto& l : layers) {
    switch (l.type) {
      case ProbeLayer::Type::kAffine: {
        if (l.W.cols() != a.size())
          throw ShapeError("probe_forward: affine expects " +
                           std::to_string(l.W.cols()) + " inputs, got " +
                           std::to_string(a.size()));
        Tensor out({l.W.rows()});
        for (std::size_t o = 0; o < l.W.rows(); ++o) {
          double acc = 0.0;
          for (std::size_t i = 0; i < a.size(); ++i) acc += l.W.at(o, i) * a[i];
          out[o] = acc;
        }
        a = std::move(out);
        break;
      }
      case ProbeLayer::Type::kRelu:
        for (std::size_t i = 0; i < a.size(); ++i) a[i] = std::max(a[i], 0.0);
        break;
      case ProbeLayer::Type::kMaxPool: {
        if (l.pool_width == 0 || a.size() % l.pool_width != 0)
          throw ShapeError("probe_forward: pool width must divide layer size");
        Tensor out({a.size() / l.pool_width});
        for (std::size_t g = 0; g < out.size(); ++g) {
          double best = a[g * l.pool_width];
          for (std::size_t k = 1; k < l.pool_width; ++k)
            best = std::max(best, a[g * l.pool_width + k]);
          out[g] = best;
        }
        a = std::move(out);
        break;
      }
    }
  }
  return a;
}

namespace {

constexpr std::size_t kPathGuard = 1000000;

struct PathWalker {
  const std::vector<ProbeLayer>& layers;
  // activation entering each layer (pre-layer values)
  std::vector<Tensor> inputs;
  PathEnumeration result;

  // argmax (first max) of pool group g in activation a
  static std::size_t pool_pick(const Tensor& a, std::size_t g, std::size_t w) {
    std::size_t best = g * w;
    for (std::size_t k = 1; k < w; ++k)
      if (a[g * w + k] > a[best]) best = g * w + k;
    return best;
  }

  void walk(std::size_t layer, std::size_t unit, double w_prod, bool gate,
            double x_in) {
    if (layer == layers.size()) {
      if (++result.P > kPathGuard)
        throw std::runtime_error(
            "enumerate_paths: path count exceeds 1e6; use a smaller probe network");
      result.M_w = std::max(result.M_w, std::fabs(w_prod));
      if (gate) result.path_sum[unit] += x_in * w_prod;
      result.gates.push_back(gate ? 1 : 0);
      return;
    }
    const ProbeLayer& l = layers[layer];
    switch (l.type) {
      case ProbeLayer::Type::kAffine:
        for (std::size_t o = 0; o < l.W.rows(); ++o)
          walk(layer + 1, o, w_prod * l.W.at(o, unit), gate, x_in);
        break;
      case ProbeLayer::Type::kRelu:
        walk(layer + 1, unit, w_prod, gate && inputs[layer][unit] > 0.0, x_in);
        break;
      case ProbeLayer::Type::kMaxPool: {
        std::size_t g = unit / l.pool_width;
        bool selected = pool_pick(inputs[layer], g, l.pool_width) == unit;
        walk(layer + 1, g, w_prod, gate && selected, x_in);
        break;
      }
    }
  }
};

}  // namespace

PathEnumeration enumerate_paths(const std::vector<ProbeLayer>& layers, const Tensor& x) {
  PathWalker walker{layers, {}, {}};
  // forward once, caching per-layer inputs for gate evaluation
  Tensor a = x;
  for (const auto& l : layers) {
    walker.inputs.push_back(a);
    a = probe_forward({l}, a);
  }
  walker.result.path_sum = Tensor::zeros({a.size()});
  for (std::size_t i = 0; i < x.size(); ++i) walker.walk(0, i, 1.0, true, x[i]);
  return walker.result;
}

BernsteinResult bernstein_check(const BernsteinConfig& config, RngState& rng) {
  if (config.delta <= 0.0 || config.delta >= 1.0)
    throw std::invalid_argument("bernstein_check: delta must be in (0,1)");
  if (config.d == 0 || config.num_matrices == 0 || config.trials == 0 || config.R <= 0.0)
    throw std::invalid_argument("bernstein_check: invalid config");

  // diagonal Rademacher ensemble: entries ±R, so E[Mᵢ]=0, λ_max(Mᵢ)=R,
  // ΣE[Mᵢ²] = N·R²·I and γ² = N·R²
  double gamma = std::sqrt(static_cast<double>(config.num_matrices)) * config.R;
  double bound =
      ((3.0 * gamma + config.R) / 6.0) *
      std::log(static_cast<double>(config.d) / config.delta);

  std::size_t violations = 0;
  for (std::size_t t = 0; t < config.trials; ++t) {
    double lam_max = -1e300;
    for (std::size_t j = 0; j < config.d; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < config.num_matrices; ++i)
        s += (rng.next_u64() & 1) ? config.R : -config.R;
      lam_max = std::max(lam_max, s);
    }
    if (lam_max > bound) ++violations;
  }
  return {bound, static_cast<double>(violations) / static_cast<double>(config.trials),
          gamma};
}

std::uint64_t covering_number_grid(std::size_t dim, double diameter, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("covering_number_grid: eps must be > 0");
  if (dim == 0 || diameter < 0.0)
    throw std::invalid_argument("covering_number_grid: invalid inputs");
  double cell = 2.0 * eps / std::sqrt(static_cast<double>(dim));
  auto per_axis = static_cast<std::uint64_t>(std::ceil(diameter / cell));
  if (per_axis == 0) per_axis = 1;
  std::uint64_t k = 1;
  const std::uint64_t guard = 1ULL << 63;
  for (std::size_t i = 0; i < dim; ++i) {
    if (per_axis != 0 && k > guard / per_axis)
      throw std::overflow_error(
          "covering_number_grid: K exceeds 2^63; increase eps or reduce dim");
    k *= per_axis;
  }
  return k;
}

std::map<std::string, RateFitResult> rate_fit(const std::vector<RateFitPoint>& points) {
  std::map<std::string, std::vector<const RateFitPoint*>> by_model;
  for (const auto& p : points) by_model[p.model].push_back(&p);

  std::map<std::string, RateFitResult> out;
  for (auto& [model, pts] : by_model) {
    std::set<std::size_t> sizes;
    for (auto* p : pts) sizes.insert(p->n);
    if (sizes.size() < 4)
      throw std::invalid_argument("rate_fit: need >= 4 distinct sizes for " + model);
    if (pts.size() < 3 * sizes.size())
      throw std::invalid_argument("rate_fit: need >= 3 seeds per size for " + model);

    std::vector<double> xs, ys;
    for (auto* p : pts) {
      double gap = std::max(p->train_top1 - p->test_top1, 1e-4);
      xs.push_back(std::log(static_cast<double>(p->n)));
      ys.push_back(std::log(gap));
    }
    double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) { mx += xs[i]; my += ys[i]; }
    mx /= n; my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      sxx += (xs[i] - mx) * (xs[i] - mx);
      sxy += (xs[i] - mx) * (ys[i] - my);
    }
    double ymin = *std::min_element(ys.begin(), ys.end());
    double ymax = *std::max_element(ys.begin(), ys.end());
    if (sxx == 0.0 || ymax - ymin < 1e-15)
      throw std::invalid_argument("rate_fit: degenerate (constant) gaps for " + model);
    double slope = sxy / sxx;
    double sse = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      double r = ys[i] - my - slope * (xs[i] - mx);
      sse += r * r;
    }
    double se = std::sqrt(sse / std::max(1.0, n - 2.0) / sxx);
    out[model] = {slope, se, xs.size()};
  }
  return out;
}

std::vector<RateFitPoint> parse_gap_csv(const std::string& csv_text) {
  std::istringstream is(csv_text);
  std::string line;
  std::vector<RateFitPoint> out;
  bool header = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (header) { header = false; continue; }
    std::vector<std::string> fields;
    std::istringstream ls(line);
    std::string f;
    while (std::getline(ls, f, ',')) fields.push_back(f);
    if (fields.size() < 7)
      throw std::runtime_error("parse_gap_csv: malformed row: " + line);
    if (fields[6] != "ok") continue;  // diverged cells excluded from the fit
    out.push_back({fields[0], static_cast<std::size_t>(std::stoull(fields[1])),
                   std::stod(fields[4]), std::stod(fields[5])});
  }
  return out;
}

}  // namespace lupi
