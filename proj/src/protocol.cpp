#include "izsd/protocol.hpp"

#include <algorithm>
#include <sstream>

#include <nlohmann/json.hpp>

#include "izsd/errors.hpp"
#include "izsd/io.hpp"

namespace izsd {

using json = nlohmann::json;

std::vector<int> ClassSplit::all_classes() const {
    std::vector<int> all;
    for (const auto& g : groups) all.insert(all.end(), g.begin(), g.end());
    std::sort(all.begin(), all.end());
    return all;
}

void ClassSplit::validate() const {
    if (groups.empty()) throw ConfigError("class split: no groups");
    std::vector<int> all;
    for (const auto& g : groups) {
        if (g.empty()) throw ConfigError("class split: empty group");
        for (int id : g) {
            if (id < 1) throw ConfigError("class split: class ids start at 1");
            all.push_back(id);
        }
    }
    std::sort(all.begin(), all.end());
    if (std::adjacent_find(all.begin(), all.end()) != all.end()) {
        throw ConfigError("class split: groups must be pairwise disjoint");
    }
}

ClassSplit even_split(int num_classes, int num_groups) {
    if (num_groups < 1 || num_classes < num_groups) {
        throw ConfigError("even_split: need 1 <= groups <= classes");
    }
    if (num_classes % num_groups != 0) {
        throw ConfigError("even_split: classes must divide evenly into groups");
    }
    ClassSplit split;
    const int per = num_classes / num_groups;
    int next = 1;
    for (int g = 0; g < num_groups; ++g) {
        std::vector<int> group;
        for (int k = 0; k < per; ++k) group.push_back(next++);
        split.groups.push_back(std::move(group));
    }
    return split;
}

Registry registry_for_step(const ClassSplit& split, int step_index) {
    split.validate();
    if (step_index < 1 || step_index > split.num_steps()) {
        throw ProtocolError("registry_for_step: step out of range");
    }
    std::vector<int> old_ids, new_ids, unseen_ids;
    for (int g = 0; g < split.num_steps(); ++g) {
        const auto& group = split.groups[static_cast<std::size_t>(g)];
        auto& dst = g + 1 < step_index ? old_ids : (g + 1 == step_index ? new_ids : unseen_ids);
        dst.insert(dst.end(), group.begin(), group.end());
    }
    return make_registry(std::move(old_ids), std::move(new_ids), std::move(unseen_ids));
}

std::string split_to_json(const ClassSplit& split) {
    json j;
    j["groups"] = split.groups;
    return j.dump(2) + "\n";
}

ClassSplit split_from_json(const std::string& text) {
    ClassSplit split;
    try {
        const json j = json::parse(text);
        split.groups = j.at("groups").get<std::vector<std::vector<int>>>();
    } catch (const json::exception& e) {
        throw DataError(std::string("split JSON: ") + e.what());
    }
    split.validate();
    return split;
}

namespace {

// Training scenes of the step's new classes (scenes hold one class each by
// construction, mirroring the cross-group image removal of the source data).
std::vector<Scene> scenes_of_classes(const TrainSplit& train, const Registry& registry) {
    std::vector<Scene> picked;
    for (const auto& scene : train.scenes) {
        bool in_new = false, in_other = false;
        for (const auto& g : scene.ground_truth) {
            const bool is_new = std::binary_search(registry.new_classes.begin(),
                                                   registry.new_classes.end(), g.label);
            (is_new ? in_new : in_other) = true;
        }
        if (in_new && in_other) {
            throw ProtocolError("run_step: scene spans class groups, which the schedule forbids");
        }
        if (in_new) picked.push_back(scene);
    }
    return picked;
}

void update_memory(StepState& state, const std::vector<Scene>& new_scenes,
                   const Registry& registry, const HyperParams& hp) {
    state.memory.capacity = hp.memory_capacity;
    const auto seen = registry.seen_classes();
    const int quota = static_cast<int>(hp.memory_capacity / seen.size());
    if (quota < 1) throw DomainError("update_memory: capacity below one record per class");
    state.memory = rebalance(std::move(state.memory), seen);

    std::vector<std::string> source_ids;
    const ProposalPool pool = pool_from_scenes(new_scenes, &source_ids);
    for (int class_id : registry.new_classes) {
        std::vector<std::pair<Eigen::VectorXd, std::string>> candidates;
        for (int i = 0; i < pool.size(); ++i) {
            if (pool.labels[static_cast<std::size_t>(i)] != class_id) continue;
            candidates.emplace_back(pool.raw_features.col(i),
                                    source_ids[static_cast<std::size_t>(i)]);
        }
        if (candidates.empty()) {
            throw ProtocolError("update_memory: no exemplar candidates for class " +
                                std::to_string(class_id));
        }
        state.memory.per_class[class_id] = select_exemplars(class_id, candidates, quota);
    }
}

void fit_new_class_models(StepState& state, const std::vector<Scene>& new_scenes,
                          const Registry& registry, const HyperParams& hp) {
    const ProposalPool pool = pool_from_scenes(new_scenes);
    const Eigen::MatrixXd features = visual_features(state.model, pool.raw_features);
    const Eigen::MatrixXd projections = state.model.projection * features;
    for (int class_id : registry.new_classes) {
        std::vector<Eigen::VectorXd> vectors;
        for (int i = 0; i < pool.size(); ++i) {
            if (pool.labels[static_cast<std::size_t>(i)] == class_id) {
                vectors.push_back(projections.col(i));
            }
        }
        if (state.bank.models.count(class_id) != 0) {
            throw ProtocolError("run_step: class already has a GPD model: " +
                                std::to_string(class_id));
        }
        state.bank.models.emplace(class_id, fit_class_model(class_id, vectors, hp.eta));
    }
}

}  // namespace

std::vector<Detection> detect(const TestSplit& test, const StepState& state,
                              const SemanticTable& table, const Registry& registry) {
    std::vector<Detection> detections;
    for (const auto& scene : test.scenes) {
        for (const auto& p : scene.proposals) {
            const Eigen::VectorXd f = visual_features(state.model, p.raw_feature);
            const Eigen::VectorXd s = state.model.projection * f;
            const Prediction pred = classify(s, f, state.bank, state.model, table, registry);
            detections.push_back(Detection{scene.scene_id, p.box, pred.class_id, pred.score});
        }
    }
    return detections;
}

StepReport run_step(int step_index, const ClassSplit& split, const SyntheticDataset& dataset,
                    const SemanticTable& table, const HyperParams& hp, const TrainConfig& cfg,
                    StepState& state) {
    const Registry registry = registry_for_step(split, step_index);
    if (state.model.step_index != step_index - 1) {
        throw ProtocolError("run_step: model is at step " + std::to_string(state.model.step_index) +
                            ", expected " + std::to_string(step_index - 1));
    }
    if (state.bank.models.size() != static_cast<std::size_t>(registry.n_old())) {
        throw ProtocolError("run_step: bank size inconsistent with schedule");
    }
    state.bank.delta = hp.delta;

    const std::vector<Scene> new_scenes = scenes_of_classes(dataset.train, registry);
    if (new_scenes.empty()) throw ProtocolError("run_step: no training scenes for the new group");
    const ProposalPool pool = pool_from_scenes(new_scenes);

    TrainConfig step_cfg = cfg;
    step_cfg.visual_dim = dataset.visual_dim;
    if (step_index == 1) {
        state.model = train_first_step(pool, table, registry, hp, step_cfg);
    } else {
        ModelState expanded = expand_classifier(state.model, registry.new_classes);
        state.model = train_incremental_step(pool, state.memory, state.model,
                                             std::move(expanded), table, registry, hp, step_cfg);
        state.model.step_index = step_index;
    }

    fit_new_class_models(state, new_scenes, registry, hp);
    update_memory(state, new_scenes, registry, hp);

    // Evaluate on the full test set over all classes.
    StepReport report;
    report.step = step_index;
    const std::vector<Detection> detections = detect(dataset.test, state, table, registry);
    const std::vector<GtBox> gts = gt_boxes(dataset.test.scenes);
    for (int class_id : split.all_classes()) {
        report.class_ap[class_id] = average_precision(detections, gts, class_id).ap;
    }
    for (int g = 1; g <= split.num_steps(); ++g) {
        report.group_ap[g] = map_over(split.groups[static_cast<std::size_t>(g - 1)],
                                      report.class_ap);
    }
    report.map_all = map_over(split.all_classes(), report.class_ap);
    report.map_seen = map_over(registry.seen_classes(), report.class_ap);
    report.has_unseen = registry.n_unseen() > 0;
    if (report.has_unseen) {
        report.map_unseen = map_over(registry.unseen_classes, report.class_ap);
    }

    for (const auto& scene : dataset.test.scenes) {
        for (const auto& p : scene.proposals) {
            if (p.label == 0) continue;
            const Eigen::VectorXd f = visual_features(state.model, p.raw_feature);
            const Eigen::VectorXd s = state.model.projection * f;
            const Prediction pred = classify(s, f, state.bank, state.model, table, registry);
            const bool gt_seen = registry.is_seen(p.label);
            const bool routed_seen = pred.route == Route::Seen;
            if (gt_seen && routed_seen) ++report.seen_routed_seen;
            if (gt_seen && !routed_seen) ++report.seen_routed_unseen;
            if (!gt_seen && routed_seen) ++report.unseen_routed_seen;
            if (!gt_seen && !routed_seen) ++report.unseen_routed_unseen;
        }
    }
    report.bank_size = state.bank.models.size();
    report.memory_records = state.memory.total();
    return report;
}

ProtocolRun run_protocol(const ClassSplit& split, const SyntheticDataset& dataset,
                         const SemanticTable& table, const HyperParams& hp,
                         const TrainConfig& cfg, const StepObserver& observer) {
    split.validate();
    ProtocolRun run;
    run.final_state.memory.capacity = hp.memory_capacity;
    for (int step = 1; step <= split.num_steps(); ++step) {
        StepReport report = run_step(step, split, dataset, table, hp, cfg, run.final_state);
        if (observer) observer(step, run.final_state, report);
        run.reports.push_back(std::move(report));
    }
    return run;
}

std::string reports_to_csv(const std::vector<StepReport>& reports) {
    std::ostringstream out;
    out << "step,group,metric,value\n";
    for (const auto& r : reports) {
        for (const auto& [g, ap] : r.group_ap) {
            out << r.step << ",G" << g << ",ap," << io::format_double(ap) << '\n';
        }
        for (const auto& [id, ap] : r.class_ap) {
            out << r.step << ",class_" << id << ",ap," << io::format_double(ap) << '\n';
        }
        out << r.step << ",all,map," << io::format_double(r.map_all) << '\n';
        out << r.step << ",seen,map," << io::format_double(r.map_seen) << '\n';
        if (r.has_unseen) {
            out << r.step << ",unseen,map," << io::format_double(r.map_unseen) << '\n';
        }
        out << r.step << ",routing,seen_routed_seen," << r.seen_routed_seen << '\n';
        out << r.step << ",routing,seen_routed_unseen," << r.seen_routed_unseen << '\n';
        out << r.step << ",routing,unseen_routed_seen," << r.unseen_routed_seen << '\n';
        out << r.step << ",routing,unseen_routed_unseen," << r.unseen_routed_unseen << '\n';
        out << r.step << ",bookkeeping,bank_size," << r.bank_size << '\n';
        out << r.step << ",bookkeeping,memory_records," << r.memory_records << '\n';
    }
    return out.str();
}

}  // namespace izsd
