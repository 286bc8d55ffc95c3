#include "lupi/model.hpp"

#include <cmath>
#include <sstream>

namespace lupi {

std::string model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::kLupi: return "lupi";
    case ModelKind::kNoXstar: return "noxstar";
    case ModelKind::kGaussianDropout: return "gdropout";
    case ModelKind::kMultitask: return "multitask";
  }
  return "?";
}

ModelKind model_kind_from_name(const std::string& name) {
  if (name == "lupi") return ModelKind::kLupi;
  if (name == "noxstar") return ModelKind::kNoXstar;
  if (name == "gdropout") return ModelKind::kGaussianDropout;
  if (name == "multitask") return ModelKind::kMultitask;
  throw std::invalid_argument("unknown model kind: " + name);
}

std::string ModelArch::fingerprint() const {
  std::ostringstream os;
  os << "in" << input_dim << "-c" << num_classes << "-trunk";
  for (std::size_t i = 0; i < trunk_widths.size(); ++i)
    os << (i ? "." : "") << trunk_widths[i];
  os << "-sites";
  for (std::size_t i = 0; i < site_widths.size(); ++i)
    os << (i ? "." : "") << site_widths[i];
  os << "-vh" << var_hidden;
  return os.str();
}

// x-path layers first so baselines initialized from the same seed share the
// x→logits weights bit-exactly with the LUPI model.
static void build_x_path(std::vector<AffineLayer>& trunk, std::vector<AffineLayer>& head,
                         const ModelArch& arch, RngState& rng) {
  std::size_t prev = arch.input_dim;
  for (std::size_t w : arch.trunk_widths) {
    trunk.push_back(make_affine(prev, w, rng));
    prev = w;
  }
  for (std::size_t w : arch.site_widths) {
    head.push_back(make_affine(prev, w, rng));
    prev = w;
  }
  head.push_back(make_affine(prev, arch.num_classes, rng));
}

Model build_lupi(const ModelArch& arch, const HeteroDropoutConfig& cfg,
                 std::uint64_t seed) {
  Model m;
  m.kind_ = ModelKind::kLupi;
  m.arch_ = arch;
  m.dropout_cfg_ = cfg;
  RngState rng(seed);
  build_x_path(m.trunk_, m.head_, arch, rng);
  std::size_t feat = arch.trunk_widths.back();
  for (std::size_t w : arch.site_widths) {
    std::vector<AffineLayer> head;
    head.push_back(make_affine(feat, arch.var_hidden, rng));
    head.push_back(make_affine(arch.var_hidden, w, rng));
    m.var_heads_.push_back(std::move(head));
  }
  return m;
}

Model build_baseline(const BaselineKind& kind, const ModelArch& arch,
                     std::uint64_t seed) {
  Model m;
  m.kind_ = kind.kind;
  m.arch_ = arch;
  RngState rng(seed);
  build_x_path(m.trunk_, m.head_, arch, rng);
  switch (kind.kind) {
    case ModelKind::kNoXstar:
      break;
    case ModelKind::kGaussianDropout:
      if (!(kind.drop_prob > 0.0 && kind.drop_prob < 1.0)) {
        throw std::invalid_argument("gaussian_dropout: drop_prob must be in (0,1), got " +
                                    std::to_string(kind.drop_prob));
      }
      m.gauss_sigma_sq_ = (1.0 - kind.drop_prob) / kind.drop_prob;
      break;
    case ModelKind::kMultitask: {
      if (kind.lambda_mt <= 0.0)
        throw std::invalid_argument("multitask: lambda_mt must be > 0");
      std::size_t feat = arch.trunk_widths.back();
      m.aux_ = make_affine(feat, feat, rng);
      m.lambda_mt_ = kind.lambda_mt;
      break;
    }
    case ModelKind::kLupi:
      throw std::invalid_argument("build_baseline: use build_lupi for the LUPI model");
  }
  return m;
}

std::vector<NamedParam> Model::params() const {
  std::vector<NamedParam> out;
  auto push = [&out](const std::string& name, const AffineLayer& l, bool decay_w) {
    out.push_back({name + ".W", l.W, decay_w});
    out.push_back({name + ".b", l.b, false});
  };
  for (std::size_t i = 0; i < trunk_.size(); ++i)
    push("trunk" + std::to_string(i), trunk_[i], true);
  for (std::size_t i = 0; i + 1 < head_.size(); ++i)
    push("fc" + std::to_string(i + 1), head_[i], true);
  push("out", head_.back(), true);
  for (std::size_t s = 0; s < var_heads_.size(); ++s) {
    for (std::size_t i = 0; i < var_heads_[s].size(); ++i) {
      // variance-head output layer is excluded from weight decay so the
      // learned variance scale is not shrunk toward zero
      bool decay_w = i + 1 < var_heads_[s].size();
      push("var" + std::to_string(s) + "." + std::to_string(i), var_heads_[s][i],
           decay_w);
    }
  }
  if (aux_) push("aux", *aux_, true);
  return out;
}

std::size_t Model::param_count_x_path() const {
  std::size_t n = 0;
  for (const auto& l : trunk_) n += l.W->value.size() + l.b->value.size();
  for (const auto& l : head_) n += l.W->value.size() + l.b->value.size();
  return n;
}

Var Model::trunk_embed(const Var& input) const {
  Var h = input;
  for (const auto& l : trunk_) h = relu(affine_forward(l, h));
  return h;
}

Var Model::aux_predict(const Var& trunk_x) const {
  if (!aux_) throw std::logic_error("aux_predict: model has no auxiliary head");
  return affine_forward(*aux_, trunk_x);
}

std::vector<Tensor> Model::site_sigmas(const Tensor& xstar) const {
  if (kind_ != ModelKind::kLupi)
    throw std::logic_error("site_sigmas: model has no variance heads");
  Var feat = trunk_embed(constant(xstar, "xstar"));
  std::vector<Tensor> out;
  for (const auto& head : var_heads_)
    out.push_back(variance_head_forward(feat, head, dropout_cfg_)->value);
  return out;
}

ForwardResult Model::forward_impl(const Var& x, const Var* xstar, RngState* rng,
                                  const std::vector<Tensor>* eps) const {
  ForwardResult res;
  Var h = trunk_embed(x);
  Var star_feat;
  bool lupi_noise = kind_ == ModelKind::kLupi && xstar != nullptr && (rng || eps);
  bool gauss_noise = kind_ == ModelKind::kGaussianDropout && (rng || eps);
  if (lupi_noise) star_feat = trunk_embed(*xstar);

  std::size_t sites = arch_.site_widths.size();
  for (std::size_t s = 0; s < sites; ++s) {
    h = relu(affine_forward(head_[s], h));
    if (lupi_noise) {
      Var sigma = variance_head_forward(star_feat, var_heads_[s], dropout_cfg_);
      res.sigmas.push_back(sigma);
      if (eps) {
        h = hetero_dropout_with_noise(h, sigma, (*eps)[s]);
      } else {
        h = hetero_dropout(h, sigma, *rng, DropoutMode::kTrain);
      }
    } else if (gauss_noise) {
      double sd = std::sqrt(gauss_sigma_sq_);
      Tensor mult(h->value.shape());
      for (std::size_t i = 0; i < mult.size(); ++i) {
        double e = eps ? (*eps)[s][i] : rng->normal();
        mult[i] = 1.0 + sd * e;
      }
      h = mul(h, constant(std::move(mult), "gauss_mult"));
    }
  }
  res.logits = affine_forward(head_.back(), h);
  return res;
}

Var Model::forward_eval(const Var& x) const {
  return forward_impl(x, nullptr, nullptr, nullptr).logits;
}

Tensor Model::forward_eval(const Tensor& x) const {
  return forward_eval(constant(x, "x"))->value;
}

ForwardResult Model::forward_train(const Var& x, const Var* xstar, RngState& rng) const {
  return forward_impl(x, xstar, &rng, nullptr);
}

ForwardResult Model::forward_train_with_noise(const Var& x, const Var* xstar,
                                              const std::vector<Tensor>& eps) const {
  return forward_impl(x, xstar, nullptr, &eps);
}

}  // namespace lupi
