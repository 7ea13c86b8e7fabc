#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "izsd/losses.hpp"
#include "izsd/semantic.hpp"

namespace izsd {

struct ExemplarMemory;

struct TrainConfig {
    double learning_rate = 0.001;
    double lr_decay = 0.2;       // multiplied onto the rate after half the epochs
    int epochs = 10;
    int batch_size = 64;
    std::uint64_t seed = 0;
    int visual_dim = 32;         // width of the feature transform output

    // Ablation switches for the loss-variant comparisons.
    bool use_bfmse = true;               // false: pooled unweighted MSE
    bool use_distillation = true;
    bool use_projection_distance = true;

    void validate() const;
};

/// Trainable parameters. The linear feature transform stands in for the
/// convolutional backbone at desk scale: raw vectors play the role of images,
/// f = feature_transform * raw is the visual feature.
struct ModelState {
    Eigen::MatrixXd feature_transform;  // v x r
    Eigen::MatrixXd projection;         // d x v, the semantic projection W
    Eigen::MatrixXd ic_weights;         // n_seen x v, incremental classifier
    std::vector<int> ic_classes;        // classifier row -> class id
    int step_index = 0;

    int raw_dim() const { return static_cast<int>(feature_transform.cols()); }
    int visual_dim() const { return static_cast<int>(feature_transform.rows()); }
    int semantic_dim() const { return static_cast<int>(projection.rows()); }
    int ic_row_of(int class_id) const;  // -1 when the class has no row
    bool all_finite() const;
};

/// Deterministic random initialization; the classifier starts with no rows.
ModelState init_model(int raw_dim, int visual_dim, int semantic_dim, std::uint64_t seed);

/// A pool of labeled raw-feature proposals (columns) for one step.
struct ProposalPool {
    Eigen::MatrixXd raw_features;  // r x n
    std::vector<int> labels;       // 0 = background

    int size() const { return static_cast<int>(labels.size()); }
    void append(const ProposalPool& other);
};

struct TrainDiagnostics {
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::vector<double> epoch_loss;  // full-pool composite loss after each epoch
    std::vector<std::string> warnings;
};

/// f = feature_transform * raw for a whole pool (columns).
Eigen::MatrixXd visual_features(const ModelState& state, const Eigen::MatrixXd& raw);

/// Softmax class probabilities from the incremental classifier.
Eigen::VectorXd ic_probs(const ModelState& state, const Eigen::VectorXd& f);

/// First incremental step: minimizes the backbone loss plus (unweighted)
/// cross-entropy by mini-batch gradient descent on a fresh model.
ModelState train_first_step(const ProposalPool& data, const SemanticTable& table,
                            const Registry& registry, const HyperParams& hp,
                            const TrainConfig& cfg, TrainDiagnostics* diag = nullptr);

/// Appends zero-initialized classifier rows for the new classes; existing
/// rows are copied bit-identically.
ModelState expand_classifier(const ModelState& state, const std::vector<int>& new_class_ids);

/// Subsequent incremental steps: minimizes backbone + incremental loss over
/// the union of new data and memory replays. The old model only produces
/// distillation targets, projection targets, and feature-distance anchors;
/// its parameters are never touched.
ModelState train_incremental_step(const ProposalPool& new_data, const ExemplarMemory& memory,
                                  const ModelState& old_state, ModelState new_state,
                                  const SemanticTable& table, const Registry& registry,
                                  const HyperParams& hp, const TrainConfig& cfg,
                                  TrainDiagnostics* diag = nullptr);

// Versioned binary checkpoint; round-trips bit-exactly.
void save_checkpoint(const ModelState& state, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);
std::string checkpoint_bytes(const ModelState& state);

}  // namespace izsd
