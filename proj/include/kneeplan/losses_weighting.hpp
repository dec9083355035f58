#pragma once

#include <vector>

#include <torch/torch.h>

namespace kneeplan {

/// g[b,i,j] = 1 where more than one label is set in y[b,:,i,j].
/// Throws std::invalid_argument when y is not binary or not 4-D.
torch::Tensor overlap_map(const torch::Tensor& y);

/// Overlap-weighted multi-label segmentation loss:
///   1/(B*H*W) * sum_{b,c,i,j} (1 + beta * g_bij) * BCE(sigmoid(logits), y)_bcij.
/// Note the normalization excludes the channel count.
torch::Tensor seg_loss(const torch::Tensor& logits, const torch::Tensor& y, double beta);

/// Heatmap matching: mean squared error over all B*C*H*W elements.
torch::Tensor heatmap_loss(const torch::Tensor& pred, const torch::Tensor& y);

/// Terms of one GradNorm objective for a single supervised hourglass.
struct GradNormTerms {
  std::vector<double> targets;  // mean(G) * r_t^alpha
  double mean_norm = 0.0;
  double objective = 0.0;  // sum_t |G_t - target_t|
};

/// `weighted_norms` are G_t = ||d(w_t L_t)/dW_shared||, `loss_ratios` are
/// L_t / L_t(0). Training rates are the ratios divided by their mean.
GradNormTerms gradnorm_terms(const std::vector<double>& weighted_norms, const std::vector<double>& loss_ratios,
                             double alpha);

struct GradNormOptions {
  double alpha = 1.0;
  double lr = 0.025;
  double rms_alpha = 0.99;
  double eps = 1e-8;
  double min_weight = 1e-4;
};

/// Per-hourglass task weights w[l][t] learned by GradNorm, with their own
/// RMSProp state. After every step each row is renormalized to sum to T.
class TaskWeightMatrix {
 public:
  TaskWeightMatrix(int stacks, int tasks, GradNormOptions options = {});

  int stacks() const { return stacks_; }
  int tasks() const { return tasks_; }

  double weight(int stack, int task) const;
  /// Detached copy, L x T, float64.
  torch::Tensor weights() const { return weights_.detach().clone(); }
  void set_weights(const torch::Tensor& w);

  bool has_initial_losses() const { return initial_losses_.defined(); }
  /// L x T loss values L_t(0); recorded by the first step unless set here.
  void set_initial_losses(const torch::Tensor& losses);
  const torch::Tensor& initial_losses() const { return initial_losses_; }

  /// One GradNorm update from precomputed unweighted gradient norms
  /// ||dL_t/dW_shared|| and current loss values (both L x T). Returns the
  /// per-hourglass objective values before the update.
  /// Throws std::invalid_argument when an initial loss is zero.
  std::vector<double> step_from_norms(const torch::Tensor& grad_norms, const torch::Tensor& losses);

  /// Full step: differentiates each task loss of hourglass l w.r.t. that
  /// hourglass's shared parameters (keeping the graph alive) and updates.
  std::vector<double> step(const std::vector<std::vector<torch::Tensor>>& task_losses,
                           const std::vector<std::vector<torch::Tensor>>& shared_parameters);

  /// Divides each row by its sum and multiplies by T.
  void renormalize();

  const GradNormOptions& options() const { return options_; }

 private:
  int stacks_;
  int tasks_;
  GradNormOptions options_;
  torch::Tensor weights_;  // leaf, requires grad
  torch::Tensor initial_losses_;
  std::unique_ptr<torch::optim::RMSprop> optimizer_;
};

/// Gradient norm of a scalar w.r.t. a parameter list; graph is retained.
double gradient_norm(const torch::Tensor& loss, const std::vector<torch::Tensor>& parameters);

/// sum_l sum_t w[l][t] * L[l][t] with w treated as constants.
torch::Tensor total_loss(const torch::Tensor& weights, const std::vector<std::vector<torch::Tensor>>& task_losses);

}  // namespace kneeplan
