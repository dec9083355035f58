#include "kneeplan/losses_weighting.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace kneeplan {

namespace F = torch::nn::functional;

torch::Tensor overlap_map(const torch::Tensor& y) {
  if (y.dim() != 4) throw std::invalid_argument("overlap_map: expected B x C x H x W");
  if (!torch::logical_or(y == 0, y == 1).all().item<bool>())
    throw std::invalid_argument("overlap_map: ground truth must be binary");
  return (y.sum(1) > 1).to(y.scalar_type());
}

torch::Tensor seg_loss(const torch::Tensor& logits, const torch::Tensor& y, double beta) {
  if (logits.sizes() != y.sizes() || logits.dim() != 4) {
    std::ostringstream msg;
    msg << "seg_loss: shape mismatch " << logits.sizes() << " vs " << y.sizes();
    throw std::invalid_argument(msg.str());
  }
  if (beta < 0.0) throw std::invalid_argument("seg_loss: beta must be non-negative");
  const auto g = overlap_map(y);
  const auto weight = (1.0 + beta * g).unsqueeze(1);
  const auto bce = F::binary_cross_entropy_with_logits(
      logits, y, F::BinaryCrossEntropyWithLogitsFuncOptions().reduction(torch::kNone));
  const double bhw = static_cast<double>(y.size(0) * y.size(2) * y.size(3));
  return (weight * bce).sum() / bhw;
}

torch::Tensor heatmap_loss(const torch::Tensor& pred, const torch::Tensor& y) {
  if (pred.sizes() != y.sizes()) {
    std::ostringstream msg;
    msg << "heatmap_loss: shape mismatch " << pred.sizes() << " vs " << y.sizes();
    throw std::invalid_argument(msg.str());
  }
  return (pred - y).pow(2).mean();
}

GradNormTerms gradnorm_terms(const std::vector<double>& weighted_norms, const std::vector<double>& loss_ratios,
                             double alpha) {
  const std::size_t t = weighted_norms.size();
  if (t == 0 || loss_ratios.size() != t) throw std::invalid_argument("gradnorm_terms: size mismatch");
  GradNormTerms out;
  out.mean_norm = std::accumulate(weighted_norms.begin(), weighted_norms.end(), 0.0) / static_cast<double>(t);
  const double mean_ratio = std::accumulate(loss_ratios.begin(), loss_ratios.end(), 0.0) / static_cast<double>(t);
  out.targets.resize(t);
  for (std::size_t k = 0; k < t; ++k) {
    const double rate = loss_ratios[k] / mean_ratio;
    out.targets[k] = out.mean_norm * std::pow(rate, alpha);
    out.objective += std::abs(weighted_norms[k] - out.targets[k]);
  }
  return out;
}

TaskWeightMatrix::TaskWeightMatrix(int stacks, int tasks, GradNormOptions options)
    : stacks_(stacks), tasks_(tasks), options_(options) {
  if (stacks < 1 || tasks < 1) throw std::invalid_argument("TaskWeightMatrix: dimensions must be positive");
  weights_ = torch::ones({stacks, tasks}, torch::kFloat64).requires_grad_(true);
  optimizer_ = std::make_unique<torch::optim::RMSprop>(
      std::vector<torch::Tensor>{weights_},
      torch::optim::RMSpropOptions(options_.lr).alpha(options_.rms_alpha).eps(options_.eps));
}

double TaskWeightMatrix::weight(int stack, int task) const {
  return weights_.index({stack, task}).item<double>();
}

void TaskWeightMatrix::set_weights(const torch::Tensor& w) {
  if (w.sizes() != weights_.sizes()) throw std::invalid_argument("set_weights: shape mismatch");
  if (!(w > 0).all().item<bool>()) throw std::invalid_argument("set_weights: weights must be positive");
  torch::NoGradGuard guard;
  weights_.copy_(w.to(torch::kFloat64));
}

void TaskWeightMatrix::set_initial_losses(const torch::Tensor& losses) {
  if (losses.sizes() != weights_.sizes()) throw std::invalid_argument("set_initial_losses: shape mismatch");
  if ((losses == 0).any().item<bool>())
    throw std::invalid_argument("GradNorm: zero initial loss makes the training rate undefined");
  initial_losses_ = losses.detach().to(torch::kFloat64).clone();
}

void TaskWeightMatrix::renormalize() {
  torch::NoGradGuard guard;
  weights_.clamp_(options_.min_weight);
  weights_.mul_(static_cast<double>(tasks_) / weights_.sum(1, true));
}

std::vector<double> TaskWeightMatrix::step_from_norms(const torch::Tensor& grad_norms, const torch::Tensor& losses) {
  if (grad_norms.sizes() != weights_.sizes() || losses.sizes() != weights_.sizes())
    throw std::invalid_argument("GradNorm step: expected L x T norms and losses");
  if (!has_initial_losses()) set_initial_losses(losses);

  const auto norms = grad_norms.detach().to(torch::kFloat64);
  const auto ratios = losses.detach().to(torch::kFloat64) / initial_losses_;
  std::vector<double> objectives(static_cast<std::size_t>(stacks_));

  optimizer_->zero_grad();
  // G_t = w_t * ||grad L_t||; targets are constants.
  const auto weighted = weights_ * norms;
  torch::Tensor objective = torch::zeros({}, torch::kFloat64);
  for (int l = 0; l < stacks_; ++l) {
    std::vector<double> g(tasks_), r(tasks_);
    for (int t = 0; t < tasks_; ++t) {
      g[t] = weighted.index({l, t}).item<double>();
      r[t] = ratios.index({l, t}).item<double>();
    }
    const GradNormTerms terms = gradnorm_terms(g, r, options_.alpha);
    objectives[l] = terms.objective;
    const auto targets = torch::tensor(terms.targets, torch::kFloat64);
    objective = objective + (weighted[l] - targets).abs().sum();
  }
  objective.backward();
  optimizer_->step();
  renormalize();
  return objectives;
}

double gradient_norm(const torch::Tensor& loss, const std::vector<torch::Tensor>& parameters) {
  const auto grads = torch::autograd::grad({loss}, parameters, /*grad_outputs=*/{}, /*retain_graph=*/true,
                                           /*create_graph=*/false, /*allow_unused=*/true);
  double sq = 0.0;
  for (const auto& g : grads)
    if (g.defined()) sq += g.pow(2).sum().item<double>();
  return std::sqrt(sq);
}

std::vector<double> TaskWeightMatrix::step(const std::vector<std::vector<torch::Tensor>>& task_losses,
                                           const std::vector<std::vector<torch::Tensor>>& shared_parameters) {
  if (static_cast<int>(task_losses.size()) != stacks_ || static_cast<int>(shared_parameters.size()) != stacks_)
    throw std::invalid_argument("GradNorm step: expected one loss row and parameter set per hourglass");
  auto norms = torch::zeros({stacks_, tasks_}, torch::kFloat64);
  auto losses = torch::zeros({stacks_, tasks_}, torch::kFloat64);
  for (int l = 0; l < stacks_; ++l) {
    if (static_cast<int>(task_losses[l].size()) != tasks_)
      throw std::invalid_argument("GradNorm step: task count mismatch");
    for (int t = 0; t < tasks_; ++t) {
      norms.index_put_({l, t}, gradient_norm(task_losses[l][t], shared_parameters[l]));
      losses.index_put_({l, t}, task_losses[l][t].detach().item<double>());
    }
  }
  return step_from_norms(norms, losses);
}

torch::Tensor total_loss(const torch::Tensor& weights, const std::vector<std::vector<torch::Tensor>>& task_losses) {
  const auto w = weights.detach();
  if (w.dim() != 2 || w.size(0) != static_cast<int64_t>(task_losses.size()))
    throw std::invalid_argument("total_loss: weights/losses dimension mismatch");
  torch::Tensor total;
  for (std::size_t l = 0; l < task_losses.size(); ++l) {
    if (w.size(1) != static_cast<int64_t>(task_losses[l].size()))
      throw std::invalid_argument("total_loss: weights/losses dimension mismatch");
    for (std::size_t t = 0; t < task_losses[l].size(); ++t) {
      const double wt = w.index({static_cast<int64_t>(l), static_cast<int64_t>(t)}).item<double>();
      auto term = task_losses[l][t] * wt;
      total = total.defined() ? total + term : term;
    }
  }
  return total;
}

}  // namespace kneeplan
