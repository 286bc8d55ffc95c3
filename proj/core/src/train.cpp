#include "lupi/train.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <future>
#include <numeric>
#include <sstream>

#include "lupi/autodiff.hpp"

namespace lupi {

namespace {

Tensor rows_subset(const Tensor& m, const std::vector<std::size_t>& idx) {
  std::size_t d = m.cols();
  Tensor out({std::max<std::size_t>(idx.size(), 1), d});
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy_n(m.data() + idx[r] * d, d, out.data() + r * d);
  return out;
}

std::vector<int> labels_subset(const std::vector<int>& y,
                               const std::vector<std::size_t>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(y[i]);
  return out;
}

void fmt_double(std::ostringstream& os, double v) {
  os.precision(17);
  os << v;
}

std::vector<std::size_t> shuffled_range(std::size_t n, RngState rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  return idx;
}

}  // namespace

Var model_loss(const Model& model, const TripletDataset& data,
               const std::vector<std::size_t>& indices, double beta, RngState* rng,
               const std::vector<Tensor>* frozen_eps, int mc_samples, double* out_ce,
               double* out_penalty) {
  if (indices.empty()) throw std::invalid_argument("model_loss: empty batch");
  std::vector<std::size_t> present, absent;
  for (std::size_t i : indices) {
    if (model.kind() == ModelKind::kLupi && data.has_star[i]) present.push_back(i);
    else absent.push_back(i);
  }

  auto total_n = static_cast<double>(indices.size());
  RngState dummy(0);
  Var ce_total;
  Var penalty_total;

  if (!present.empty()) {
    Var xp = constant(rows_subset(data.x, present), "x");
    Var sp = constant(rows_subset(data.xstar, present), "xstar");
    std::vector<int> yp = labels_subset(data.y, present);

    Var ce_present;
    std::vector<Var> sigmas;
    for (int s = 0; s < mc_samples; ++s) {
      ForwardResult fr = frozen_eps ? model.forward_train_with_noise(xp, &sp, *frozen_eps)
                                    : model.forward_train(xp, &sp, *rng);
      Var ce = cross_entropy(fr.logits, yp);
      ce_present = ce_present ? add(ce_present, ce) : ce;
      if (s == 0) sigmas = fr.sigmas;
    }
    if (mc_samples > 1) ce_present = axpb(ce_present, 1.0 / mc_samples, 0.0);

    ce_total = axpb(ce_present, static_cast<double>(present.size()) / total_n, 0.0);
    for (const Var& sigma : sigmas) {
      Var pen = ib_penalty(sigma, beta);
      penalty_total = penalty_total ? add(penalty_total, pen) : pen;
    }
  }

  if (!absent.empty()) {
    Var xa = constant(rows_subset(data.x, absent), "x");
    std::vector<int> ya = labels_subset(data.y, absent);
    ForwardResult fr;
    if (model.kind() == ModelKind::kGaussianDropout && (rng || frozen_eps)) {
      fr = frozen_eps ? model.forward_train_with_noise(xa, nullptr, *frozen_eps)
                      : model.forward_train(xa, nullptr, *rng);
    } else {
      // unit-multiplier fallback: no noise drawn on this path
      fr = model.forward_train(xa, nullptr, dummy);
    }
    Var ce = cross_entropy(fr.logits, ya);
    Var term = axpb(ce, static_cast<double>(absent.size()) / total_n, 0.0);
    ce_total = ce_total ? add(ce_total, term) : term;
  }

  Var loss = penalty_total ? add(ce_total, penalty_total) : ce_total;

  if (model.kind() == ModelKind::kMultitask) {
    std::vector<std::size_t> with_star;
    for (std::size_t i : indices)
      if (data.has_star[i]) with_star.push_back(i);
    if (!with_star.empty()) {
      Var xs = constant(rows_subset(data.x, with_star), "x");
      Var aux = model.aux_predict(model.trunk_embed(xs));
      // target embedding is detached: regression shapes the x path only
      Tensor target =
          model.trunk_embed(constant(rows_subset(data.xstar, with_star), "xstar"))->value;
      Var diff = sub(aux, constant(std::move(target), "embed_target"));
      Var mt = axpb(sum(square(diff)),
                    model.lambda_mt() / static_cast<double>(with_star.size()), 0.0);
      loss = add(loss, mt);
    }
  }

  if (out_ce) *out_ce = ce_total->value[0];
  if (out_penalty) *out_penalty = penalty_total ? penalty_total->value[0] : 0.0;
  return loss;
}

EvalResult evaluate(const Model& model, const TripletDataset& split) {
  std::size_t n = split.size();
  if (n == 0) throw std::invalid_argument("evaluate: empty split");
  std::size_t chunk = 512;
  std::size_t correct = 0;
  double ce_sum = 0.0;
  std::size_t classes = model.arch().num_classes;
  for (std::size_t start = 0; start < n; start += chunk) {
    std::vector<std::size_t> idx(std::min(chunk, n - start));
    std::iota(idx.begin(), idx.end(), start);
    Tensor logits = model.forward_eval(rows_subset(split.x, idx));
    std::vector<int> y = labels_subset(split.y, idx);
    Var ce = cross_entropy(constant(logits, "logits"), y);
    ce_sum += ce->value[0] * static_cast<double>(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < classes; ++j)
        if (logits.at(r, j) > logits.at(r, best)) best = j;  // ties -> lowest index
      if (static_cast<int>(best) == y[r]) ++correct;
    }
  }
  return {static_cast<double>(correct) / static_cast<double>(n), ce_sum / n};
}

Optimizer::Optimizer(const TrainConfig& cfg, std::vector<NamedParam> params)
    : cfg_(cfg), params_(std::move(params)) {
  for (const auto& p : params_) {
    m_.push_back(Tensor::zeros(p.value->value.shape()));
    v_.push_back(Tensor::zeros(p.value->value.shape()));
  }
}

void Optimizer::step(double lr) {
  ++t_;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& w = params_[k].value->value;
    const Tensor& g0 = params_[k].value->grad;
    for (std::size_t i = 0; i < w.size(); ++i) {
      double g = g0[i];
      if (params_[k].weight_decay) g += cfg_.weight_decay * w[i];
      if (cfg_.optimizer == OptimizerKind::kAdam) {
        m_[k][i] = cfg_.adam_beta1 * m_[k][i] + (1.0 - cfg_.adam_beta1) * g;
        v_[k][i] = cfg_.adam_beta2 * v_[k][i] + (1.0 - cfg_.adam_beta2) * g * g;
        double mh = m_[k][i] / (1.0 - std::pow(cfg_.adam_beta1, t_));
        double vh = v_[k][i] / (1.0 - std::pow(cfg_.adam_beta2, t_));
        w[i] -= lr * mh / (std::sqrt(vh) + cfg_.adam_eps);
      } else {
        m_[k][i] = cfg_.momentum * m_[k][i] + g;
        w[i] -= lr * m_[k][i];
      }
    }
  }
}

std::vector<std::size_t> nested_prefix(std::size_t pool_size, std::size_t size,
                                       std::uint64_t seed) {
  if (size > pool_size)
    throw std::invalid_argument("nested_prefix: size exceeds pool");
  auto order = shuffled_range(pool_size, RngState(seed ^ 0x90de));
  return {order.begin(), order.begin() + size};
}

namespace {

std::vector<Tensor> snapshot(const std::vector<NamedParam>& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.value->value);
  return out;
}

void restore(const std::vector<NamedParam>& params, const std::vector<Tensor>& snap) {
  for (std::size_t k = 0; k < params.size(); ++k) params[k].value->value = snap[k];
}

}  // namespace

RunRecord train(Model& model, const TripletDataset& train_split,
                const TripletDataset& val_split, const TripletDataset& test_split,
                const TrainConfig& config) {
  if (train_split.size() == 0 || val_split.size() == 0 || test_split.size() == 0)
    throw std::invalid_argument("train: all splits must be non-empty");

  RunRecord rec;
  rec.config = config;
  auto params = model.params();
  Optimizer opt(config, params);
  RngState master(config.seed);
  RngState noise_rng = master.substream(0x11071);

  LrPolicy policy(config.lr, config.patience, config.decay_factor);
  std::vector<Tensor> best_snap = snapshot(params);
  bool diverged = false;

  std::size_t n = train_split.size();
  for (std::size_t epoch = 0; epoch < config.max_epochs && !diverged; ++epoch) {
    auto order = shuffled_range(n, master.substream(0x5affe + epoch));
    double ep_ce = 0.0, ep_pen = 0.0, ep_total = 0.0;
    std::size_t batches = 0, train_correct = 0;

    for (std::size_t start = 0; start < n; start += config.batch_size) {
      std::vector<std::size_t> batch(
          order.begin() + start,
          order.begin() + std::min(n, start + config.batch_size));
      double batch_ce = 0.0, batch_pen = 0.0;
      Var loss = model_loss(model, train_split, batch, config.beta, &noise_rng, nullptr,
                            config.mc_samples, &batch_ce, &batch_pen);
      double lv = loss->value[0];
      if (!std::isfinite(lv) || std::fabs(lv) > config.divergence_threshold) {
        diverged = true;
        break;
      }
      backward(loss);
      opt.step(policy.lr());
      ++batches;
      ep_total += lv;
      ep_ce += batch_ce;
      ep_pen += batch_pen;
      Tensor logits = model.forward_eval(rows_subset(train_split.x, batch));
      std::vector<int> y = labels_subset(train_split.y, batch);
      std::size_t classes = model.arch().num_classes;
      for (std::size_t r = 0; r < batch.size(); ++r) {
        std::size_t bestc = 0;
        for (std::size_t j = 1; j < classes; ++j)
          if (logits.at(r, j) > logits.at(r, bestc)) bestc = j;
        if (static_cast<int>(bestc) == y[r]) ++train_correct;
      }
    }
    if (diverged) {
      rec.status = "diverged";
      break;
    }

    double denom = batches ? static_cast<double>(batches) : 1.0;
    EvalResult val = evaluate(model, val_split);
    rec.rows.push_back({epoch, "train", ep_ce / denom, ep_pen / denom, ep_total / denom,
                        static_cast<double>(train_correct) / static_cast<double>(n)});
    rec.rows.push_back({epoch, "val", val.ce, 0.0, val.ce, val.top1});

    LrPolicy::Decision d = policy.observe(val.top1);
    if (d.improved) {
      best_snap = snapshot(params);
      rec.best_epoch = epoch;
    }
    if (d.stop) break;
  }

  restore(params, best_snap);
  rec.final_test = evaluate(model, test_split);
  rec.train_top1 = evaluate(model, train_split).top1;
  return rec;
}

TripletDataset with_xstar_fraction(const TripletDataset& ds, double fraction,
                                   std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0)
    throw std::invalid_argument("with_xstar_fraction: fraction must be in [0,1]");
  TripletDataset out = ds;
  std::size_t n = out.size();
  std::size_t m = static_cast<std::size_t>(std::floor(fraction * n));
  auto idx = shuffled_range(n, RngState(seed ^ 0xf7ac));
  out.has_star.assign(n, 0);
  for (std::size_t k = 0; k < m; ++k) out.has_star[idx[k]] = 1;
  std::size_t d = out.dim();
  for (std::size_t i = 0; i < n; ++i) {
    double* sr = out.xstar.data() + i * d;
    if (out.has_star[i]) {
      const double* xr = out.x.data() + i * d;
      const double* mr = out.masks.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) sr[j] = xr[j] * mr[j];
    } else {
      std::fill_n(sr, d, 0.0);
    }
  }
  return out;
}

namespace {

Model build_by_name(const std::string& name, const SweepSetup& setup,
                    const ModelArch& arch, const HeteroDropoutConfig& cfg,
                    std::uint64_t seed) {
  ModelKind kind = model_kind_from_name(name);
  if (kind == ModelKind::kLupi) return build_lupi(arch, cfg, seed);
  BaselineKind bk;
  bk.kind = kind;
  bk.drop_prob = setup.drop_prob;
  bk.lambda_mt = setup.lambda_mt;
  return build_baseline(bk, arch, seed);
}

std::vector<SweepCell> run_cells(std::vector<std::function<SweepCell()>> tasks,
                                 std::size_t jobs) {
  std::vector<SweepCell> out(tasks.size());
  if (jobs <= 1) {
    for (std::size_t i = 0; i < tasks.size(); ++i) out[i] = tasks[i]();
    return out;
  }
  std::size_t next = 0;
  while (next < tasks.size()) {
    std::size_t batch = std::min(jobs, tasks.size() - next);
    std::vector<std::future<SweepCell>> futs;
    for (std::size_t k = 0; k < batch; ++k)
      futs.push_back(std::async(std::launch::async, tasks[next + k]));
    for (std::size_t k = 0; k < batch; ++k) out[next + k] = futs[k].get();
    next += batch;
  }
  return out;
}

}  // namespace

std::vector<SweepCell> sweep_n(const std::vector<std::size_t>& sizes,
                               const std::vector<std::uint64_t>& seeds,
                               const std::vector<std::string>& models,
                               const TrainConfig& base, const SweepSetup& setup,
                               std::size_t jobs) {
  for (std::size_t i = 1; i < sizes.size(); ++i)
    if (sizes[i] <= sizes[i - 1])
      throw std::invalid_argument("sweep_n: sizes must be ascending");

  auto pool = std::make_shared<TripletDataset>(
      generate(setup.gen, setup.pool_n, 1.0, setup.data_seed));
  auto splits = std::make_shared<std::array<TripletDataset, 3>>(
      split(*pool, setup.split_fractions, setup.data_seed));
  if (!sizes.empty() && sizes.back() > (*splits)[0].size())
    throw std::invalid_argument("sweep_n: largest size exceeds the train pool");

  std::vector<std::function<SweepCell()>> tasks;
  for (const std::string& mname : models) {
    for (std::size_t size : sizes) {
      for (std::uint64_t seed : seeds) {
        tasks.push_back([=]() {
          SweepCell cell{mname, size, 1.0, seed, 0.0, 0.0, "ok"};
          TripletDataset tr =
              (*splits)[0].subset(nested_prefix((*splits)[0].size(), size, seed));
          TrainConfig cfg = base;
          cfg.seed = seed;
          Model model = build_by_name(mname, setup, setup.arch, setup.dropout, seed);
          RunRecord rec = train(model, tr, (*splits)[1], (*splits)[2], cfg);
          cell.top1 = rec.final_test.top1;
          cell.train_top1 = rec.train_top1;
          cell.status = rec.status;
          return cell;
        });
      }
    }
  }
  return run_cells(std::move(tasks), jobs);
}

std::vector<SweepCell> sweep_xstar_fraction(const std::vector<double>& fractions,
                                            const std::vector<std::uint64_t>& seeds,
                                            std::size_t n, const TrainConfig& base,
                                            const SweepSetup& setup, std::size_t jobs) {
  for (double f : fractions)
    if (f < 0.0 || f > 1.0)
      throw std::invalid_argument("sweep_xstar_fraction: fractions must lie in [0,1]");

  auto pool = std::make_shared<TripletDataset>(
      generate(setup.gen, setup.pool_n, 1.0, setup.data_seed));
  auto splits = std::make_shared<std::array<TripletDataset, 3>>(
      split(*pool, setup.split_fractions, setup.data_seed));
  if (n > (*splits)[0].size())
    throw std::invalid_argument("sweep_xstar_fraction: n exceeds the train pool");

  std::vector<std::function<SweepCell()>> tasks;
  for (double fraction : fractions) {
    for (std::uint64_t seed : seeds) {
      tasks.push_back([=]() {
        SweepCell cell{"lupi", n, fraction, seed, 0.0, 0.0, "ok"};
        TripletDataset tr = with_xstar_fraction(
            (*splits)[0].subset(nested_prefix((*splits)[0].size(), n, seed)), fraction,
            seed);
        TrainConfig cfg = base;
        cfg.seed = seed;
        Model model = build_lupi(setup.arch, setup.dropout, seed);
        RunRecord rec = train(model, tr, (*splits)[1], (*splits)[2], cfg);
        cell.top1 = rec.final_test.top1;
        cell.train_top1 = rec.train_top1;
        cell.status = rec.status;
        return cell;
      });
    }
  }
  return run_cells(std::move(tasks), jobs);
}

std::vector<DiagRow> variance_diagnostics(const Model& model,
                                          const TripletDataset& split) {
  if (model.kind() != ModelKind::kLupi)
    throw std::invalid_argument("variance_diagnostics: requires a LUPI model");
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < split.size(); ++i)
    if (split.has_star[i]) idx.push_back(i);
  if (idx.empty())
    throw std::invalid_argument("variance_diagnostics: split has no x* records");

  std::size_t units = 0;
  for (std::size_t w : model.arch().site_widths) units += w;
  std::vector<double> sum_correct(units, 0.0), sum_wrong(units, 0.0), sum_all(units, 0.0);
  std::size_t n_correct = 0, n_wrong = 0;
  std::size_t classes = model.arch().num_classes;

  std::size_t chunk = 256;
  for (std::size_t start = 0; start < idx.size(); start += chunk) {
    std::vector<std::size_t> part(idx.begin() + start,
                                  idx.begin() + std::min(idx.size(), start + chunk));
    Tensor logits = model.forward_eval(rows_subset(split.x, part));
    // deterministic eval of the variance heads on the x* branch
    std::vector<Tensor> sigmas = model.site_sigmas(rows_subset(split.xstar, part));
    for (std::size_t r = 0; r < part.size(); ++r) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < classes; ++j)
        if (logits.at(r, j) > logits.at(r, best)) best = j;
      bool correct = static_cast<int>(best) == split.y[part[r]];
      if (correct) ++n_correct; else ++n_wrong;
      std::size_t off = 0;
      for (const Tensor& s : sigmas) {
        for (std::size_t j = 0; j < s.cols(); ++j) {
          double v = s.at(r, j);
          sum_all[off + j] += v;
          (correct ? sum_correct : sum_wrong)[off + j] += v;
        }
        off += s.cols();
      }
    }
  }

  std::vector<std::size_t> order(units);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return sum_all[a] > sum_all[b];
  });

  std::vector<DiagRow> rows;
  for (std::size_t u : order) {
    rows.push_back({static_cast<long>(u), "correct",
                    n_correct ? sum_correct[u] / n_correct : 0.0, n_correct});
    rows.push_back({static_cast<long>(u), "misclassified",
                    n_wrong ? sum_wrong[u] / n_wrong : 0.0, n_wrong});
  }
  double g_correct = 0.0, g_wrong = 0.0;
  for (std::size_t u = 0; u < units; ++u) {
    g_correct += sum_correct[u];
    g_wrong += sum_wrong[u];
  }
  rows.push_back({-1, "correct", n_correct ? g_correct / (n_correct * units) : 0.0,
                  n_correct});
  rows.push_back({-1, "misclassified", n_wrong ? g_wrong / (n_wrong * units) : 0.0,
                  n_wrong});
  return rows;
}

std::string sweep_csv(const std::vector<SweepCell>& cells) {
  std::ostringstream os;
  os << "model,n,fraction,seed,top1,status\n";
  for (const auto& c : cells) {
    os << c.model << "," << c.n << ",";
    fmt_double(os, c.fraction);
    os << "," << c.seed << ",";
    fmt_double(os, c.top1);
    os << "," << c.status << "\n";
  }
  return os.str();
}

std::string sweep_gap_csv(const std::vector<SweepCell>& cells) {
  std::ostringstream os;
  os << "model,n,fraction,seed,train_top1,test_top1,status\n";
  for (const auto& c : cells) {
    os << c.model << "," << c.n << ",";
    fmt_double(os, c.fraction);
    os << "," << c.seed << ",";
    fmt_double(os, c.train_top1);
    os << ",";
    fmt_double(os, c.top1);
    os << "," << c.status << "\n";
  }
  return os.str();
}

std::string metrics_csv(const RunRecord& record) {
  std::ostringstream os;
  os << "epoch,split,ce,penalty,total_loss,top1\n";
  for (const auto& r : record.rows) {
    os << r.epoch << "," << r.split << ",";
    fmt_double(os, r.ce);
    os << ",";
    fmt_double(os, r.penalty);
    os << ",";
    fmt_double(os, r.total_loss);
    os << ",";
    fmt_double(os, r.top1);
    os << "\n";
  }
  return os.str();
}

std::string diagnostics_csv(const std::vector<DiagRow>& rows) {
  std::ostringstream os;
  os << "unit_index,group,mean_sigma,count\n";
  for (const auto& r : rows) {
    os << r.unit_index << "," << r.group << ",";
    fmt_double(os, r.mean_sigma);
    os << "," << r.count << "\n";
  }
  return os.str();
}

}  // namespace lupi
