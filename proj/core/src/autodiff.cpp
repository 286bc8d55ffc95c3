#include "lupi/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace lupi {

namespace {

bool any_req(const std::vector<Var>& ps) {
  for (const auto& p : ps)
    if (p->requires_grad) return true;
  return false;
}

Var make(std::string tag, Tensor v, std::vector<Var> ps,
         std::function<void(Node&)> back) {
  bool req = any_req(ps);
  auto n = std::make_shared<Node>(std::move(tag), std::move(v), std::move(ps), req);
  if (req) n->backprop = std::move(back);
  return n;
}

void topo(const Var& root, std::vector<Node*>& order) {
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Var, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Var p = node->parents[idx++];
      if (seen.insert(p.get()).second) stack.emplace_back(std::move(p), 0);
    } else {
      order.push_back(node.get());
      stack.pop_back();
    }
  }
}

}  // namespace

Var constant(Tensor v, std::string tag) {
  return std::make_shared<Node>(std::move(tag), std::move(v), std::vector<Var>{}, false);
}

Var param(Tensor v, std::string tag) {
  return std::make_shared<Node>(std::move(tag), std::move(v), std::vector<Var>{}, true);
}

const Tensor& forward(const Var& root) { return root->value; }

void backward(const Var& root) {
  if (root->value.size() != 1) {
    throw ShapeError("backward: root must be scalar, got " + root->value.shape_str());
  }
  std::vector<Node*> order;
  topo(root, order);
  for (Node* n : order) n->grad.fill(0.0);
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->requires_grad && n->backprop) n->backprop(*n);
  }
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a->value, b->value, "add");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
  return make("add", std::move(out), {a, b}, [](Node& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      n.parents[0]->grad[i] += n.grad[i];
      n.parents[1]->grad[i] += n.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a->value, b->value, "sub");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b->value[i];
  return make("sub", std::move(out), {a, b}, [](Node& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      n.parents[0]->grad[i] += n.grad[i];
      n.parents[1]->grad[i] -= n.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a->value, b->value, "mul");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b->value[i];
  return make("mul", std::move(out), {a, b}, [](Node& n) {
    const Tensor& av = n.parents[0]->value;
    const Tensor& bv = n.parents[1]->value;
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      n.parents[0]->grad[i] += n.grad[i] * bv[i];
      n.parents[1]->grad[i] += n.grad[i] * av[i];
    }
  });
}

Var axpb(const Var& v, double a, double b) {
  Tensor out = v->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * out[i] + b;
  return make("axpb", std::move(out), {v}, [a](Node& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) n.parents[0]->grad[i] += a * n.grad[i];
  });
}

Var relu(const Var& v) {
  Tensor out = v->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
  return make("relu", std::move(out), {v}, [](Node& n) {
    const Tensor& x = n.parents[0]->value;
    // subgradient at 0 is 0
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      if (x[i] > 0.0) n.parents[0]->grad[i] += n.grad[i];
  });
}

Var softplus(const Var& v) {
  Tensor out = v->value;
  for (std::size_t i = 0; i < out.size(); ++i) {
    double x = out[i];
    out[i] = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  }
  return make("softplus", std::move(out), {v}, [](Node& n) {
    const Tensor& x = n.parents[0]->value;
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      double s = 1.0 / (1.0 + std::exp(-x[i]));
      n.parents[0]->grad[i] += n.grad[i] * s;
    }
  });
}

Var log_(const Var& v) {
  Tensor out = v->value;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i] <= 0.0) {
      throw NumericError("log: non-positive entry " + std::to_string(out[i]) +
                         " at index " + std::to_string(i));
    }
    out[i] = std::log(out[i]);
  }
  return make("log", std::move(out), {v}, [](Node& n) {
    const Tensor& x = n.parents[0]->value;
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      n.parents[0]->grad[i] += n.grad[i] / x[i];
  });
}

Var abs_(const Var& v) {
  Tensor out = v->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(out[i]);
  return make("abs", std::move(out), {v}, [](Node& n) {
    const Tensor& x = n.parents[0]->value;
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      n.parents[0]->grad[i] += n.grad[i] * (x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0));
  });
}

Var sqrt_(const Var& v) {
  Tensor out = v->value;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i] < 0.0) {
      throw NumericError("sqrt: negative entry " + std::to_string(out[i]) +
                         " at index " + std::to_string(i));
    }
    out[i] = std::sqrt(out[i]);
  }
  return make("sqrt", std::move(out), {v}, [](Node& n) {
    const Tensor& y = n.value;
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      double denom = 2.0 * y[i];
      if (denom > 0.0) n.parents[0]->grad[i] += n.grad[i] / denom;
    }
  });
}

Var square(const Var& v) {
  Tensor out = v->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= out[i];
  return make("square", std::move(out), {v}, [](Node& n) {
    const Tensor& x = n.parents[0]->value;
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      n.parents[0]->grad[i] += 2.0 * x[i] * n.grad[i];
  });
}

Var clamp_max(const Var& v, double cap) {
  Tensor out = v->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(out[i], cap);
  return make("clamp_max", std::move(out), {v}, [cap](Node& n) {
    const Tensor& x = n.parents[0]->value;
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      if (x[i] <= cap) n.parents[0]->grad[i] += n.grad[i];
  });
}

Var sum(const Var& v) {
  double s = 0.0;
  for (std::size_t i = 0; i < v->value.size(); ++i) s += v->value[i];
  return make("sum", Tensor::scalar(s), {v}, [](Node& n) {
    double g = n.grad[0];
    for (std::size_t i = 0; i < n.parents[0]->grad.size(); ++i)
      n.parents[0]->grad[i] += g;
  });
}

Var mean(const Var& v) {
  double s = 0.0;
  std::size_t n_elem = v->value.size();
  for (std::size_t i = 0; i < n_elem; ++i) s += v->value[i];
  return make("mean", Tensor::scalar(s / static_cast<double>(n_elem)), {v},
              [n_elem](Node& n) {
                double g = n.grad[0] / static_cast<double>(n_elem);
                for (std::size_t i = 0; i < n.parents[0]->grad.size(); ++i)
                  n.parents[0]->grad[i] += g;
              });
}

Var matmul(const Var& a, const Var& b) {
  const Tensor& A = a->value;
  const Tensor& B = b->value;
  if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows()) {
    throw ShapeError("matmul: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
  }
  std::size_t m = A.rows(), k = A.cols(), n_out = B.cols();
  Tensor out({m, n_out});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      double av = A.at(i, p);
      for (std::size_t j = 0; j < n_out; ++j) out.at(i, j) += av * B.at(p, j);
    }
  }
  return make("matmul", std::move(out), {a, b}, [m, k, n_out](Node& n) {
    const Tensor& A = n.parents[0]->value;
    const Tensor& B = n.parents[1]->value;
    Tensor& dA = n.parents[0]->grad;
    Tensor& dB = n.parents[1]->grad;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n_out; ++j) {
        double g = n.grad.at(i, j);
        for (std::size_t p = 0; p < k; ++p) {
          dA.at(i, p) += g * B.at(p, j);
          dB.at(p, j) += g * A.at(i, p);
        }
      }
    }
  });
}

Var linear(const Var& x, const Var& W, const Var& b) {
  const Tensor& X = x->value;
  const Tensor& Wv = W->value;
  const Tensor& bv = b->value;
  std::size_t batch = X.rows(), in = X.cols();
  std::size_t out_dim = Wv.rows();
  if (Wv.cols() != in || bv.size() != out_dim) {
    throw ShapeError("linear: input " + X.shape_str() + " incompatible with W " +
                     Wv.shape_str() + ", b " + bv.shape_str());
  }
  Tensor out({batch, out_dim});
  for (std::size_t i = 0; i < batch; ++i) {
    const double* xr = X.data() + i * in;
    double* or_ = out.data() + i * out_dim;
    for (std::size_t o = 0; o < out_dim; ++o) {
      const double* wr = Wv.data() + o * in;
      double acc = bv[o];
      for (std::size_t p = 0; p < in; ++p) acc += xr[p] * wr[p];
      or_[o] = acc;
    }
  }
  return make("linear", std::move(out), {x, W, b}, [batch, in, out_dim](Node& n) {
    const Tensor& X = n.parents[0]->value;
    const Tensor& Wv = n.parents[1]->value;
    Tensor& dX = n.parents[0]->grad;
    Tensor& dW = n.parents[1]->grad;
    Tensor& db = n.parents[2]->grad;
    for (std::size_t i = 0; i < batch; ++i) {
      const double* g = n.grad.data() + i * out_dim;
      const double* xr = X.data() + i * in;
      double* dxr = dX.data() + i * in;
      for (std::size_t o = 0; o < out_dim; ++o) {
        double go = g[o];
        if (go == 0.0) continue;
        db[o] += go;
        const double* wr = Wv.data() + o * in;
        double* dwr = dW.data() + o * in;
        for (std::size_t p = 0; p < in; ++p) {
          dxr[p] += go * wr[p];
          dwr[p] += go * xr[p];
        }
      }
    }
  });
}

Var cross_entropy(const Var& logits, const std::vector<int>& labels) {
  const Tensor& L = logits->value;
  std::size_t batch = L.rows(), classes = L.cols();
  if (labels.size() != batch) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(batch) + " rows");
  }
  for (std::size_t i = 0; i < batch; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(labels[i]) +
                              " out of range [0," + std::to_string(classes) + ")");
    }
  }
  // stable log-softmax: subtract row max
  Tensor probs({batch, classes});
  double loss = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    const double* row = L.data() + i * classes;
    double mx = row[0];
    for (std::size_t j = 1; j < classes; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < classes; ++j) z += std::exp(row[j] - mx);
    double logz = std::log(z);
    for (std::size_t j = 0; j < classes; ++j)
      probs.at(i, j) = std::exp(row[j] - mx) / z;
    loss -= row[labels[i]] - mx - logz;
  }
  loss /= static_cast<double>(batch);
  return make("cross_entropy", Tensor::scalar(loss), {logits},
              [labels, probs = std::move(probs), batch, classes](Node& n) {
                double g = n.grad[0] / static_cast<double>(batch);
                Tensor& dL = n.parents[0]->grad;
                for (std::size_t i = 0; i < batch; ++i) {
                  for (std::size_t j = 0; j < classes; ++j)
                    dL.at(i, j) += g * probs.at(i, j);
                  dL.at(i, static_cast<std::size_t>(labels[i])) -= g;
                }
              });
}

namespace {

double rel_err(double ga, double gf) {
  return std::fabs(ga - gf) / std::max(1e-8, std::fabs(ga) + std::fabs(gf));
}

}  // namespace

double gradcheck(const std::function<Var(const Var&)>& scalar_fn, const Tensor& point,
                 double step) {
  Var x = param(point, "gradcheck_point");
  Var root = scalar_fn(x);
  if (!root->value.all_finite()) throw NumericError("gradcheck: non-finite value at point");
  backward(root);
  Tensor analytic = x->grad;

  double worst = 0.0;
  Tensor probe = point;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    double orig = probe[i];
    probe[i] = orig + step;
    double fp = forward(scalar_fn(constant(probe)))[0];
    probe[i] = orig - step;
    double fm = forward(scalar_fn(constant(probe)))[0];
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("gradcheck: non-finite value near point");
    worst = std::max(worst, rel_err(analytic[i], (fp - fm) / (2.0 * step)));
  }
  return worst;
}

double gradcheck_params(const std::function<Var()>& make_root,
                        const std::vector<Var>& params, double step) {
  Var root = make_root();
  if (!root->value.all_finite())
    throw NumericError("gradcheck_params: non-finite value at point");
  backward(root);
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p->grad);

  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& pv = params[k]->value;
    for (std::size_t i = 0; i < pv.size(); ++i) {
      double orig = pv[i];
      pv[i] = orig + step;
      double fp = forward(make_root())[0];
      pv[i] = orig - step;
      double fm = forward(make_root())[0];
      pv[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw NumericError("gradcheck_params: non-finite value near point");
      worst = std::max(worst, rel_err(analytic[k][i], (fp - fm) / (2.0 * step)));
    }
  }
  return worst;
}

}  // namespace lupi
