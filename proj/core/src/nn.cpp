#include "scenewatch/nn.hpp"

#include <cmath>
#include <numbers>

#include "scenewatch/errors.hpp"

namespace scenewatch::nn {

NodePtr make_leaf(Eigen::MatrixXd value) { return std::make_shared<Node>(std::move(value)); }

NodePtr Graph::record(Eigen::MatrixXd value, std::vector<NodePtr> parents,
                      std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>(std::move(value));
  node->parents = std::move(parents);
  node->backward_fn = std::move(backward_fn);
  tape_.push_back(node);
  return node;
}

NodePtr Graph::constant(Eigen::MatrixXd value) {
  return record(std::move(value), {}, nullptr);
}

NodePtr Graph::matmul(const NodePtr& a, const NodePtr& b) {
  if (a->value.cols() != b->value.rows()) throw ShapeMismatchError("matmul: inner dims differ");
  return record(a->value * b->value, {a, b}, [](Node& n) {
    n.parents[0]->grad.noalias() += n.grad * n.parents[1]->value.transpose();
    n.parents[1]->grad.noalias() += n.parents[0]->value.transpose() * n.grad;
  });
}

NodePtr Graph::add(const NodePtr& a, const NodePtr& b) {
  if (a->value.rows() != b->value.rows() || a->value.cols() != b->value.cols()) {
    throw ShapeMismatchError("add: shapes differ");
  }
  return record(a->value + b->value, {a, b}, [](Node& n) {
    n.parents[0]->grad += n.grad;
    n.parents[1]->grad += n.grad;
  });
}

NodePtr Graph::add_rowvec(const NodePtr& a, const NodePtr& bias) {
  if (bias->value.rows() != 1 || bias->value.cols() != a->value.cols()) {
    throw ShapeMismatchError("add_rowvec: bias must be 1 x cols");
  }
  Eigen::MatrixXd out = a->value;
  out.rowwise() += bias->value.row(0);
  return record(std::move(out), {a, bias}, [](Node& n) {
    n.parents[0]->grad += n.grad;
    n.parents[1]->grad.row(0) += n.grad.colwise().sum();
  });
}

NodePtr Graph::add_const(const NodePtr& a, const Eigen::MatrixXd& c) {
  if (a->value.rows() != c.rows() || a->value.cols() != c.cols()) {
    throw ShapeMismatchError("add_const: shapes differ");
  }
  return record(a->value + c, {a}, [](Node& n) { n.parents[0]->grad += n.grad; });
}

NodePtr Graph::scale(const NodePtr& a, double factor) {
  return record(a->value * factor, {a},
                [factor](Node& n) { n.parents[0]->grad += factor * n.grad; });
}

NodePtr Graph::transpose(const NodePtr& a) {
  return record(a->value.transpose(), {a},
                [](Node& n) { n.parents[0]->grad += n.grad.transpose(); });
}

NodePtr Graph::slice_rows(const NodePtr& a, int start, int count) {
  return record(a->value.middleRows(start, count), {a}, [start, count](Node& n) {
    n.parents[0]->grad.middleRows(start, count) += n.grad;
  });
}

NodePtr Graph::slice_cols(const NodePtr& a, int start, int count) {
  return record(a->value.middleCols(start, count), {a}, [start, count](Node& n) {
    n.parents[0]->grad.middleCols(start, count) += n.grad;
  });
}

NodePtr Graph::concat_rows(std::span<const NodePtr> parts) {
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts[0]->value.cols();
  for (const auto& p : parts) rows += p->value.rows();
  Eigen::MatrixXd out(rows, cols);
  Eigen::Index offset = 0;
  std::vector<NodePtr> parents;
  for (const auto& p : parts) {
    out.middleRows(offset, p->value.rows()) = p->value;
    offset += p->value.rows();
    parents.push_back(p);
  }
  return record(std::move(out), std::move(parents), [](Node& n) {
    Eigen::Index offset = 0;
    for (auto& p : n.parents) {
      p->grad += n.grad.middleRows(offset, p->value.rows());
      offset += p->value.rows();
    }
  });
}

NodePtr Graph::concat_cols(std::span<const NodePtr> parts) {
  Eigen::Index cols = 0;
  const Eigen::Index rows = parts[0]->value.rows();
  for (const auto& p : parts) cols += p->value.cols();
  Eigen::MatrixXd out(rows, cols);
  Eigen::Index offset = 0;
  std::vector<NodePtr> parents;
  for (const auto& p : parts) {
    out.middleCols(offset, p->value.cols()) = p->value;
    offset += p->value.cols();
    parents.push_back(p);
  }
  return record(std::move(out), std::move(parents), [](Node& n) {
    Eigen::Index offset = 0;
    for (auto& p : n.parents) {
      p->grad += n.grad.middleCols(offset, p->value.cols());
      offset += p->value.cols();
    }
  });
}

NodePtr Graph::softmax_rows(const NodePtr& a) {
  Eigen::MatrixXd out = a->value;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double m = out.row(r).maxCoeff();
    out.row(r) = (out.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return record(std::move(out), {a}, [](Node& n) {
    // dx = (dy - (dy . y)) .* y, rowwise
    for (Eigen::Index r = 0; r < n.value.rows(); ++r) {
      const double dot = n.grad.row(r).cwiseProduct(n.value.row(r)).sum();
      n.parents[0]->grad.row(r) +=
          (n.grad.row(r).array() - dot).cwiseProduct(n.value.row(r).array()).matrix();
    }
  });
}

NodePtr Graph::gelu(const NodePtr& a) {
  const double c = std::sqrt(2.0 / std::numbers::pi);
  Eigen::MatrixXd out = a->value.unaryExpr([c](double x) {
    return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
  });
  return record(std::move(out), {a}, [c](Node& n) {
    const auto& x = n.parents[0]->value;
    Eigen::MatrixXd dydx = x.unaryExpr([c](double v) {
      const double u = c * (v + 0.044715 * v * v * v);
      const double t = std::tanh(u);
      const double sech2 = 1.0 - t * t;
      return 0.5 * (1.0 + t) + 0.5 * v * sech2 * c * (1.0 + 3.0 * 0.044715 * v * v);
    });
    n.parents[0]->grad += n.grad.cwiseProduct(dydx);
  });
}

NodePtr Graph::layer_norm(const NodePtr& x, const NodePtr& gamma, const NodePtr& beta,
                          double eps) {
  const auto d = x->value.cols();
  if (gamma->value.cols() != d || beta->value.cols() != d) {
    throw ShapeMismatchError("layer_norm: gamma/beta must be 1 x cols");
  }
  Eigen::MatrixXd xhat(x->value.rows(), d);
  Eigen::VectorXd inv_sigma(x->value.rows());
  for (Eigen::Index r = 0; r < x->value.rows(); ++r) {
    const double mu = x->value.row(r).mean();
    const double var = (x->value.row(r).array() - mu).square().mean();
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_sigma(r) = inv;
    xhat.row(r) = (x->value.row(r).array() - mu) * inv;
  }
  Eigen::MatrixXd out = xhat;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    out.row(r) = out.row(r).cwiseProduct(gamma->value.row(0)) + beta->value.row(0);
  }
  return record(std::move(out), {x, gamma, beta},
                [xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)](Node& n) {
    auto& xn = *n.parents[0];
    auto& gn = *n.parents[1];
    auto& bn = *n.parents[2];
    const auto d = static_cast<double>(xn.value.cols());
    for (Eigen::Index r = 0; r < xn.value.rows(); ++r) {
      const auto dy = n.grad.row(r);
      gn.grad.row(0) += dy.cwiseProduct(xhat.row(r));
      bn.grad.row(0) += dy;
      const Eigen::RowVectorXd dxhat = dy.cwiseProduct(gn.value.row(0));
      const double mean_dxhat = dxhat.mean();
      const double mean_dxhat_xhat = dxhat.cwiseProduct(xhat.row(r)).sum() / d;
      xn.grad.row(r) += inv_sigma(r) * (dxhat.array() - mean_dxhat -
                                        xhat.row(r).array() * mean_dxhat_xhat)
                            .matrix();
    }
  });
}

NodePtr Graph::weighted_squared_error(const NodePtr& pred, const Eigen::MatrixXd& target,
                                      const Eigen::MatrixXd& weight) {
  if (pred->value.rows() != target.rows() || pred->value.cols() != target.cols() ||
      weight.rows() != target.rows() || weight.cols() != target.cols()) {
    throw ShapeMismatchError("weighted_squared_error: shapes differ");
  }
  const Eigen::MatrixXd diff = pred->value - target;
  Eigen::MatrixXd out(1, 1);
  out(0, 0) = diff.cwiseProduct(diff).cwiseProduct(weight).sum();
  return record(std::move(out), {pred}, [diff, weight](Node& n) {
    n.parents[0]->grad += 2.0 * n.grad(0, 0) * diff.cwiseProduct(weight);
  });
}

NodePtr Graph::mean_of_scalars(std::span<const NodePtr> scalars) {
  double sum = 0.0;
  std::vector<NodePtr> parents;
  for (const auto& s : scalars) {
    sum += s->value(0, 0);
    parents.push_back(s);
  }
  Eigen::MatrixXd out(1, 1);
  out(0, 0) = sum / static_cast<double>(scalars.size());
  return record(std::move(out), std::move(parents), [](Node& n) {
    const double share = n.grad(0, 0) / static_cast<double>(n.parents.size());
    for (auto& p : n.parents) p->grad.array() += share;
  });
}

void Graph::backward(const NodePtr& root) {
  if (root->value.rows() != 1 || root->value.cols() != 1) {
    throw ShapeMismatchError("backward: root must be a scalar node");
  }
  root->grad(0, 0) = 1.0;
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

}  // namespace scenewatch::nn
