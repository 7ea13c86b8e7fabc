#include "izsd/losses.hpp"

#include <algorithm>
#include <cmath>

#include "izsd/errors.hpp"

namespace izsd {

namespace {

constexpr double kNormEps = 1e-12;

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
    Eigen::VectorXd shifted = logits.array() - logits.maxCoeff();
    Eigen::VectorXd p = shifted.array().exp();
    return p / p.sum();
}

double log_sum_exp(const Eigen::VectorXd& logits) {
    const double m = logits.maxCoeff();
    return m + std::log((logits.array() - m).exp().sum());
}

// Squared-error pull of each projection toward a per-proposal target row.
// weight_of(i) returning 0 skips the proposal.
template <typename WeightFn, typename TargetFn>
BatchLossGrad weighted_mse(const ProposalBatch& batch, const Eigen::MatrixXd& W,
                           const SemanticTable& table, WeightFn weight_of, TargetFn target_of) {
    BatchLossGrad out;
    out.grad_projection = Eigen::MatrixXd::Zero(W.rows(), W.cols());
    out.grad_features = Eigen::MatrixXd::Zero(batch.features.rows(), batch.features.cols());
    for (int i = 0; i < batch.size(); ++i) {
        const double w = weight_of(i);
        if (w == 0.0) continue;
        const int row = target_of(i);
        const Eigen::VectorXd s = W * batch.features.col(i);
        const Eigen::VectorXd diff = s - table.embeddings.row(row).transpose();
        out.value += w * diff.squaredNorm();
        const Eigen::VectorXd ds = 2.0 * w * diff;
        out.grad_projection.noalias() += ds * batch.features.col(i).transpose();
        out.grad_features.col(i).noalias() += W.transpose() * ds;
    }
    return out;
}

}  // namespace

void HyperParams::validate() const {
    if (!(alpha > 0 && beta > 0 && gamma > 0 && temperature > 0)) {
        throw DomainError("hyperparams: alpha, beta, gamma, temperature must be positive");
    }
    if (margin < 0) throw DomainError("hyperparams: margin must be nonnegative");
    if (!(eta > 0 && eta < 1) || !(delta >= 0 && delta <= 1)) {
        throw DomainError("hyperparams: eta in (0,1), delta in [0,1]");
    }
    if (memory_capacity < 1) throw DomainError("hyperparams: memory capacity must be >= 1");
}

int ProposalBatch::n_background() const {
    return static_cast<int>(std::count(labels.begin(), labels.end(), 0));
}

int ProposalBatch::n_foreground() const { return size() - n_background(); }

void ProposalBatch::check() const {
    if (labels.empty()) throw DomainError("proposal batch: empty batch");
    if (features.cols() != static_cast<Eigen::Index>(labels.size())) {
        throw DimensionError("proposal batch: features/labels count mismatch");
    }
    if (!features.allFinite()) throw DomainError("proposal batch: non-finite features");
    for (int y : labels) {
        if (y < 0) throw DomainError("proposal batch: negative label");
    }
}

BatchLossGrad bfmse(const ProposalBatch& batch, const Eigen::MatrixXd& W,
                    const SemanticTable& table, double alpha) {
    batch.check();
    const int n_bg = batch.n_background();
    const int n_obj = batch.n_foreground();
    for (int y : batch.labels) {
        if (y > table.num_classes()) {
            throw DomainError("bfmse: label out of table range: " + std::to_string(y));
        }
    }
    const double w_bg = n_bg > 0 ? 1.0 / n_bg : 0.0;
    const double w_obj = n_obj > 0 ? alpha / n_obj : 0.0;
    return weighted_mse(
        batch, W, table,
        [&](int i) { return batch.labels[static_cast<std::size_t>(i)] == 0 ? w_bg : w_obj; },
        [&](int i) { return batch.labels[static_cast<std::size_t>(i)]; });
}

BatchLossGrad plain_mse(const ProposalBatch& batch, const Eigen::MatrixXd& W,
                        const SemanticTable& table) {
    batch.check();
    for (int y : batch.labels) {
        if (y > table.num_classes()) {
            throw DomainError("plain_mse: label out of table range: " + std::to_string(y));
        }
    }
    const double w = 1.0 / batch.size();
    return weighted_mse(
        batch, W, table, [&](int) { return w; },
        [&](int i) { return batch.labels[static_cast<std::size_t>(i)]; });
}

BatchLossGrad reconstruction(const ProposalBatch& batch, const Eigen::MatrixXd& W) {
    batch.check();
    if (W.cols() != batch.features.rows()) {
        throw DimensionError("reconstruction: W/feature dimension mismatch");
    }
    BatchLossGrad out;
    out.grad_projection = Eigen::MatrixXd::Zero(W.rows(), W.cols());
    out.grad_features = Eigen::MatrixXd::Zero(batch.features.rows(), batch.features.cols());
    const double w = 1.0 / batch.size();
    for (int i = 0; i < batch.size(); ++i) {
        const Eigen::VectorXd f = batch.features.col(i);
        const Eigen::VectorXd s = W * f;
        const Eigen::VectorXd r = f - W.transpose() * s;
        out.value += w * r.squaredNorm();
        // d||r||^2/dW = -2 (s r^T + (W r) f^T)
        out.grad_projection.noalias() -= 2.0 * w * (s * r.transpose());
        out.grad_projection.noalias() -= 2.0 * w * ((W * r) * f.transpose());
        // d||r||^2/df = 2 (I - W^T W) r, and (I - W^T W) is symmetric
        out.grad_features.col(i).noalias() += 2.0 * w * (r - W.transpose() * (W * r));
    }
    return out;
}

BatchLossGrad triplet(const ProposalBatch& batch, const Eigen::MatrixXd& W,
                      const SemanticTable& table, const std::vector<int>& seen_ids,
                      double margin) {
    batch.check();
    if (seen_ids.empty()) throw DomainError("triplet: empty seen-class set");
    for (int y : batch.labels) {
        if (y > table.num_classes()) {
            throw DomainError("triplet: label out of table range: " + std::to_string(y));
        }
    }
    BatchLossGrad out;
    out.grad_projection = Eigen::MatrixXd::Zero(W.rows(), W.cols());
    out.grad_features = Eigen::MatrixXd::Zero(batch.features.rows(), batch.features.cols());
    const double w = 1.0 / batch.size();
    for (int i = 0; i < batch.size(); ++i) {
        const int y = batch.labels[static_cast<std::size_t>(i)];
        const Eigen::VectorXd f = batch.features.col(i);
        const Eigen::VectorXd s = W * f;
        const double norm = s.norm();
        if (!(norm > kNormEps)) throw DomainError("triplet: zero-norm projection");
        const Eigen::VectorXd unit = s / norm;
        const Eigen::VectorXd own_row = table.embeddings.row(y).transpose();
        const double cos_own = unit.dot(own_row);
        Eigen::VectorXd ds = Eigen::VectorXd::Zero(s.size());
        for (int j : seen_ids) {
            if (j == y) continue;
            const Eigen::VectorXd other_row = table.embeddings.row(j).transpose();
            const double cos_other = unit.dot(other_row);
            const double term = margin + cos_other - cos_own;
            if (term > 0.0) {
                out.value += w * term;
                // d cos(s,e)/ds = (e - cos * s_hat) / ||s||
                ds += (other_row - cos_other * unit) / norm;
                ds -= (own_row - cos_own * unit) / norm;
            }
        }
        out.grad_projection.noalias() += w * ds * f.transpose();
        out.grad_features.col(i).noalias() += w * (W.transpose() * ds);
    }
    return out;
}

LossGrad cross_entropy(const Eigen::VectorXd& logits, int label) {
    if (!logits.allFinite()) throw DomainError("cross_entropy: non-finite logits");
    if (label < 0 || label >= logits.size()) {
        throw DomainError("cross_entropy: label out of range");
    }
    LossGrad out;
    out.value = log_sum_exp(logits) - logits[label];
    out.grad = softmax(logits);
    out.grad[label] -= 1.0;
    return out;
}

LossGrad distillation(const Eigen::VectorXd& old_logits,
                      const Eigen::VectorXd& new_logits_old_slice, double temperature) {
    if (old_logits.size() != new_logits_old_slice.size()) {
        throw DimensionError("distillation: logit length mismatch");
    }
    if (!old_logits.allFinite() || !new_logits_old_slice.allFinite()) {
        throw DomainError("distillation: non-finite logits");
    }
    if (!(temperature > 0)) throw DomainError("distillation: temperature must be positive");
    const Eigen::VectorXd target = softmax(old_logits / temperature);
    const Eigen::VectorXd tempered = new_logits_old_slice / temperature;
    LossGrad out;
    out.value = log_sum_exp(tempered) - target.dot(tempered);
    out.grad = (softmax(tempered) - target) / temperature;
    return out;
}

LossGrad projection_distance(const Eigen::VectorXd& s_old, const Eigen::VectorXd& s_new) {
    if (s_old.size() != s_new.size()) throw DimensionError("projection_distance: length mismatch");
    LossGrad out;
    out.value = (s_old - s_new).squaredNorm();
    out.grad = 2.0 * (s_new - s_old);
    return out;
}

MatrixLossGrad feature_distance(const Eigen::MatrixXd& old_features,
                                const Eigen::MatrixXd& new_features) {
    if (old_features.rows() != new_features.rows() ||
        old_features.cols() != new_features.cols()) {
        throw DimensionError("feature_distance: shape mismatch");
    }
    MatrixLossGrad out;
    out.value = (old_features - new_features).squaredNorm();
    out.grad = 2.0 * (new_features - old_features);
    return out;
}

BatchLossGrad compose_bone(const ProposalBatch& batch, const Eigen::MatrixXd& W,
                           const SemanticTable& table, const std::vector<int>& seen_ids,
                           const HyperParams& hp, bool use_bfmse) {
    const BatchLossGrad mse = use_bfmse ? bfmse(batch, W, table, hp.alpha)
                                        : plain_mse(batch, W, table);
    const BatchLossGrad rec = reconstruction(batch, W);
    const BatchLossGrad tri = triplet(batch, W, table, seen_ids, hp.margin);
    BatchLossGrad out;
    out.value = mse.value + hp.beta * rec.value + tri.value;
    out.grad_projection = mse.grad_projection + hp.beta * rec.grad_projection +
                          tri.grad_projection;
    out.grad_features = mse.grad_features + hp.beta * rec.grad_features + tri.grad_features;
    return out;
}

IlWeights il_weights(const Registry& registry, double gamma) {
    const int n_all = registry.n_all();
    if (n_all == 0) throw DomainError("il_weights: registry has no classes");
    return IlWeights{static_cast<double>(registry.n_old()) / n_all,
                     static_cast<double>(registry.n_new()) / n_all, gamma};
}

IncrementalLoss compose_il(const LossGrad& distill, const LossGrad& pd, const LossGrad& ce,
                           const MatrixLossGrad& fd, const Registry& registry, double gamma) {
    const IlWeights w = il_weights(registry, gamma);
    IncrementalLoss out;
    out.value = w.old_ratio * (distill.value + pd.value) + w.new_ratio * ce.value +
                w.gamma * fd.value;
    out.grad_distill = w.old_ratio * distill.grad;
    out.grad_pd = w.old_ratio * pd.grad;
    out.grad_ce = w.new_ratio * ce.grad;
    out.grad_fd = w.gamma * fd.grad;
    return out;
}

}  // namespace izsd
