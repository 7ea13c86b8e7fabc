#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "izsd/dataset.hpp"
#include "izsd/ever.hpp"
#include "izsd/exemplars.hpp"
#include "izsd/losses.hpp"
#include "izsd/semantic.hpp"
#include "izsd/trainer.hpp"

namespace izsd {

/// Ordered class groups of the incremental schedule. At step t (1-based) the
/// prior groups are old, group t is new, the remaining groups are unseen.
struct ClassSplit {
    std::vector<std::vector<int>> groups;

    int num_steps() const { return static_cast<int>(groups.size()); }
    std::vector<int> all_classes() const;
    void validate() const;  // pairwise disjoint, nonempty groups
};

/// Equal contiguous groups over class ids 1..num_classes.
ClassSplit even_split(int num_classes, int num_groups);

Registry registry_for_step(const ClassSplit& split, int step_index);

// Split config JSON: {"groups": [[ids...], ...]}.
std::string split_to_json(const ClassSplit& split);
ClassSplit split_from_json(const std::string& text);

/// Mutable protocol state threaded through the steps.
struct StepState {
    ModelState model;
    EvtBank bank;
    ExemplarMemory memory;
};

struct StepReport {
    int step = 0;
    std::map<int, double> class_ap;  // class id -> AP at 0.5 IoU
    std::map<int, double> group_ap;  // group number (1-based) -> mean AP
    double map_all = 0.0;
    double map_seen = 0.0;
    double map_unseen = 0.0;  // 0 when the unseen set is empty (no row emitted)
    bool has_unseen = false;
    // Routing confusion over foreground test proposals.
    long seen_routed_seen = 0;
    long seen_routed_unseen = 0;
    long unseen_routed_seen = 0;
    long unseen_routed_unseen = 0;
    std::size_t bank_size = 0;
    std::size_t memory_records = 0;
};

/// One incremental step: train on the new group's training scenes (first step
/// trains from scratch, later steps expand the classifier and train
/// incrementally against the frozen prior model), fit GPD models for the new
/// classes only, rebalance the exemplar memory, then evaluate on the full
/// test set.
StepReport run_step(int step_index, const ClassSplit& split, const SyntheticDataset& dataset,
                    const SemanticTable& table, const HyperParams& hp, const TrainConfig& cfg,
                    StepState& state);

using StepObserver = std::function<void(int step, const StepState&, const StepReport&)>;

struct ProtocolRun {
    std::vector<StepReport> reports;
    StepState final_state;
};

/// Runs every step of the split in order.
ProtocolRun run_protocol(const ClassSplit& split, const SyntheticDataset& dataset,
                         const SemanticTable& table, const HyperParams& hp,
                         const TrainConfig& cfg, const StepObserver& observer = {});

/// Detections for one test split under the current state: every proposal is
/// classified by the decision rule and emitted with its route probability as
/// the score.
std::vector<Detection> detect(const TestSplit& test, const StepState& state,
                              const SemanticTable& table, const Registry& registry);

// Report CSV: header step,group,metric,value; groups are "G1".."Gm", "all",
// "seen", "unseen", "routing", or "class_<id>".
std::string reports_to_csv(const std::vector<StepReport>& reports);

}  // namespace izsd
