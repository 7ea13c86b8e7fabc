#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "izsd/gpd.hpp"
#include "izsd/semantic.hpp"
#include "izsd/trainer.hpp"

namespace izsd {

/// Per-class extreme-value model: the unit mean of the class's projected
/// semantic vectors, the distance threshold, and the fitted GPD of the
/// threshold excesses.
struct ClassEvtModel {
    int class_id = 0;
    Eigen::VectorXd mean_vector;  // unit norm
    double threshold_u = 0.0;
    GpdParams params;
    int n_excess = 0;
};

/// One model per seen class plus the global decision threshold. Models for
/// old classes are never refitted across incremental steps.
struct EvtBank {
    std::map<int, ClassEvtModel> models;
    double delta = 0.02;

    std::size_t size() const { return models.size(); }
};

/// Fewest projected vectors accepted per class; with the default tail
/// fraction this leaves enough excesses for a stable MLE.
inline constexpr std::size_t kMinVectorsPerClassFit = 25;

/// Fits a class model: unit mean of the normalized vectors, distances of each
/// normalized vector to it, threshold selection, GPD MLE on the excesses.
ClassEvtModel fit_class_model(int class_id, const std::vector<Eigen::VectorXd>& projected_vectors,
                              double eta);

/// Minimum over seen classes of G(||s_hat - mean_j|| - u_j). A distance at or
/// below the threshold contributes 0: sub-threshold vectors are never extreme.
double p_min(const Eigen::VectorXd& s, const EvtBank& bank);

enum class Route { Seen, Unseen };

struct Prediction {
    int class_id = 0;
    Route route = Route::Seen;
    double score = 0.0;  // probability of the predicted class on its route
    double p_min = 0.0;
};

/// The seen/unseen decision rule: p_min below delta routes to the incremental
/// classifier over seen classes, otherwise to the zero-shot classifier over
/// unseen rows. An empty unseen set routes seen unconditionally. Argmax ties
/// break toward the lowest class id.
Prediction classify(const Eigen::VectorXd& s, const Eigen::VectorXd& f, const EvtBank& bank,
                    const ModelState& state, const SemanticTable& table,
                    const Registry& registry);

// JSON round-trip at full float precision.
std::string bank_to_json(const EvtBank& bank);
EvtBank bank_from_json(const std::string& text);

}  // namespace izsd
