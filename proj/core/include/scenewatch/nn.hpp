#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace scenewatch::nn {

// Reverse-mode autodiff on dense matrices, sized for desk-scale sequence
// models: a tape of op nodes built per forward pass, walked backwards once.
// Parameters are leaves that outlive any tape; their grads accumulate until
// zeroed by the optimizer.

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Eigen::MatrixXd value;
  Eigen::MatrixXd grad;  // same shape, starts at zero
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;  // pulls this node's grad into parents

  explicit Node(Eigen::MatrixXd v) : value(std::move(v)) {
    grad = Eigen::MatrixXd::Zero(value.rows(), value.cols());
  }
  void zero_grad() { grad.setZero(); }
};

// A leaf that participates in graphs but lives outside any tape.
NodePtr make_leaf(Eigen::MatrixXd value);

class Graph {
 public:
  NodePtr constant(Eigen::MatrixXd value);  // on-tape leaf without gradient flow

  NodePtr matmul(const NodePtr& a, const NodePtr& b);
  NodePtr add(const NodePtr& a, const NodePtr& b);
  NodePtr add_rowvec(const NodePtr& a, const NodePtr& bias);     // bias 1 x cols
  NodePtr add_const(const NodePtr& a, const Eigen::MatrixXd& c);
  NodePtr scale(const NodePtr& a, double factor);
  NodePtr transpose(const NodePtr& a);
  NodePtr slice_rows(const NodePtr& a, int start, int count);
  NodePtr slice_cols(const NodePtr& a, int start, int count);
  NodePtr concat_rows(std::span<const NodePtr> parts);
  NodePtr concat_cols(std::span<const NodePtr> parts);
  NodePtr softmax_rows(const NodePtr& a);
  NodePtr gelu(const NodePtr& a);  // tanh approximation; smooth everywhere
  // y = gamma .* (x - mu) / sqrt(var + eps) + beta, per row; gamma/beta 1 x cols
  NodePtr layer_norm(const NodePtr& x, const NodePtr& gamma, const NodePtr& beta,
                     double eps = 1e-5);
  // 1x1 node: sum of weight .* (pred - target)^2
  NodePtr weighted_squared_error(const NodePtr& pred, const Eigen::MatrixXd& target,
                                 const Eigen::MatrixXd& weight);
  NodePtr mean_of_scalars(std::span<const NodePtr> scalars);

  // Seeds root->grad with 1 and propagates through the tape in reverse.
  void backward(const NodePtr& root);

  std::size_t size() const { return tape_.size(); }

 private:
  NodePtr record(Eigen::MatrixXd value, std::vector<NodePtr> parents,
                 std::function<void(Node&)> backward_fn);
  std::vector<NodePtr> tape_;
};

}  // namespace scenewatch::nn
