#pragma once

#include <Eigen/Dense>
#include <vector>

#include "izsd/semantic.hpp"

namespace izsd {

/// Default hyperparameters of the loss suite and decision rule.
struct HyperParams {
    double alpha = 5.0;        // foreground weight in bfMSE
    double beta = 0.001;       // reconstruction weight
    double gamma = 2.0;        // feature-distance weight
    double temperature = 2.0;  // distillation temperature
    double margin = 1.0;       // triplet margin
    double eta = 0.2;          // tail fraction for threshold selection
    double delta = 0.02;       // seen/unseen decision threshold
    int memory_capacity = 150; // exemplar memory K

    void validate() const;
};

/// One mini-batch of region proposals. Features are columns (v x n); a label
/// of 0 marks a background proposal, so the labels carry the background /
/// object indicator partition.
struct ProposalBatch {
    Eigen::MatrixXd features;  // v x n
    std::vector<int> labels;   // size n, 0 = background

    int size() const { return static_cast<int>(labels.size()); }
    int n_background() const;
    int n_foreground() const;
    void check() const;
};

/// Loss value plus gradient with respect to the op's vector argument.
struct LossGrad {
    double value = 0.0;
    Eigen::VectorXd grad;
};

/// Loss value plus gradient with respect to the op's matrix argument.
struct MatrixLossGrad {
    double value = 0.0;
    Eigen::MatrixXd grad;
};

/// Batch losses carry the gradient in projection space (d x v, wrt W) and in
/// feature space (v x n, wrt the batch features) so an upstream feature
/// transform can be trained through them.
struct BatchLossGrad {
    double value = 0.0;
    Eigen::MatrixXd grad_projection;
    Eigen::MatrixXd grad_features;
};

/// Background-foreground split MSE: background projections pulled to the
/// background row, foreground pulled to their class rows with weight alpha.
/// An empty partition contributes 0 to keep all-foreground batches finite.
BatchLossGrad bfmse(const ProposalBatch& batch, const Eigen::MatrixXd& W,
                    const SemanticTable& table, double alpha);

/// Pooled unweighted MSE over the whole batch; the ablation baseline for bfmse.
BatchLossGrad plain_mse(const ProposalBatch& batch, const Eigen::MatrixXd& W,
                        const SemanticTable& table);

/// Mean squared reconstruction error ||f - W^T W f||^2 over the batch.
BatchLossGrad reconstruction(const ProposalBatch& batch, const Eigen::MatrixXd& W);

/// Margin hinge over cosine similarities: every seen class other than the
/// proposal's own must score at least `margin` below the ground-truth row.
/// Subgradient 0 at the hinge kink.
BatchLossGrad triplet(const ProposalBatch& batch, const Eigen::MatrixXd& W,
                      const SemanticTable& table, const std::vector<int>& seen_ids,
                      double margin);

/// -log softmax(logits)[label]; gradient is softmax - one_hot.
LossGrad cross_entropy(const Eigen::VectorXd& logits, int label);

/// Soft-target cross-entropy of temperature-softened logits. Gradient is with
/// respect to the new logits; no T^2 rescale is applied.
LossGrad distillation(const Eigen::VectorXd& old_logits,
                      const Eigen::VectorXd& new_logits_old_slice, double temperature);

/// ||s_old - s_new||^2; gradient with respect to s_new.
LossGrad projection_distance(const Eigen::VectorXd& s_old, const Eigen::VectorXd& s_new);

/// Squared Frobenius norm of the feature-map difference; gradient with
/// respect to the new features.
MatrixLossGrad feature_distance(const Eigen::MatrixXd& old_features,
                                const Eigen::MatrixXd& new_features);

/// Backbone loss: bfmse + beta * reconstruction + triplet. The detector's own
/// box losses have no counterpart here and are omitted from the sum.
/// use_bfmse = false swaps in the pooled MSE baseline.
BatchLossGrad compose_bone(const ProposalBatch& batch, const Eigen::MatrixXd& W,
                           const SemanticTable& table, const std::vector<int>& seen_ids,
                           const HyperParams& hp, bool use_bfmse = true);

/// Class-ratio weights of the incremental loss: old terms weighted N_O/N_C,
/// the new-class term N_N/N_C, the feature-distance term gamma.
struct IlWeights {
    double old_ratio = 0.0;
    double new_ratio = 0.0;
    double gamma = 0.0;
};
IlWeights il_weights(const Registry& registry, double gamma);

/// Incremental loss (N_O/N_C)(distill + pd) + (N_N/N_C) ce + gamma * fd with
/// every component gradient scaled by its coefficient.
struct IncrementalLoss {
    double value = 0.0;
    Eigen::VectorXd grad_distill;
    Eigen::VectorXd grad_pd;
    Eigen::VectorXd grad_ce;
    Eigen::MatrixXd grad_fd;
};
IncrementalLoss compose_il(const LossGrad& distill, const LossGrad& pd, const LossGrad& ce,
                           const MatrixLossGrad& fd, const Registry& registry, double gamma);

}  // namespace izsd
