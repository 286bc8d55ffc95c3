#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "lupi/tensor.hpp"

namespace lupi {

struct Node;
using Var = std::shared_ptr<Node>;

/// Reverse-mode computation record. Values are computed eagerly at
/// construction; backward() replays the tape in reverse topological order.
struct Node {
  std::string op;
  std::vector<Var> parents;
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  // Accumulates into parent grads given this->grad.
  std::function<void(Node&)> backprop;

  Node(std::string op_tag, Tensor v, std::vector<Var> ps, bool req)
      : op(std::move(op_tag)),
        parents(std::move(ps)),
        value(std::move(v)),
        grad(Tensor::zeros(value.shape())),
        requires_grad(req) {}
};

Var constant(Tensor v, std::string tag = "const");
Var param(Tensor v, std::string tag = "param");

/// Returns the cached value of an evaluated graph.
const Tensor& forward(const Var& root);

/// Accumulates d(root)/d(node) into every reachable node's grad.
/// root must be scalar (shape [1]). Grads are zeroed first.
void backward(const Var& root);

// Elementwise / structural ops (strict shape agreement unless noted).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var axpb(const Var& v, double a, double b);  // a*v + b elementwise
Var relu(const Var& v);
Var softplus(const Var& v);
Var log_(const Var& v);
Var abs_(const Var& v);
Var sqrt_(const Var& v);
Var square(const Var& v);
Var clamp_max(const Var& v, double cap);
Var sum(const Var& v);   // -> scalar
Var mean(const Var& v);  // -> scalar

Var matmul(const Var& a, const Var& b);  // [m×k]·[k×n]
// x[batch×in] · W[out×in]^T + b[out], row broadcast.
Var linear(const Var& x, const Var& W, const Var& b);

/// Mean over batch of -log softmax(logits)[label]; stable log-softmax.
Var cross_entropy(const Var& logits, const std::vector<int>& labels);

/// Max relative gradient error of a scalar function at `point`,
/// analytic reverse-mode vs. central finite differences.
double gradcheck(const std::function<Var(const Var&)>& scalar_fn, const Tensor& point,
                 double step);

/// Same check across a set of shared leaf parameters; make_root rebuilds the
/// graph from current parameter values (any noise must be frozen inside it).
double gradcheck_params(const std::function<Var()>& make_root,
                        const std::vector<Var>& params, double step);

}  // namespace lupi
