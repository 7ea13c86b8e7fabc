#include "izsd/ever.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "izsd/errors.hpp"

namespace izsd {

using json = nlohmann::json;

ClassEvtModel fit_class_model(int class_id, const std::vector<Eigen::VectorXd>& projected_vectors,
                              double eta) {
    if (projected_vectors.size() < kMinVectorsPerClassFit) {
        throw InsufficientTailError("fit_class_model: class " + std::to_string(class_id) +
                                    " has " + std::to_string(projected_vectors.size()) +
                                    " vectors, need " + std::to_string(kMinVectorsPerClassFit));
    }
    std::map<int, std::vector<Eigen::VectorXd>> by_class{{class_id, projected_vectors}};
    const Eigen::VectorXd mean = class_means(by_class).at(class_id);

    std::vector<double> distances;
    distances.reserve(projected_vectors.size());
    for (const auto& v : projected_vectors) {
        distances.push_back((l2_normalized(v) - mean).norm());
    }
    const ExceedanceSample sample = select_threshold(distances, eta);
    const GpdParams params = fit_gpd_mle(sample);

    ClassEvtModel model;
    model.class_id = class_id;
    model.mean_vector = mean;
    model.threshold_u = sample.threshold_u;
    model.params = params;
    model.n_excess = static_cast<int>(sample.excesses.size());
    return model;
}

double p_min(const Eigen::VectorXd& s, const EvtBank& bank) {
    if (bank.models.empty()) throw DomainError("p_min: empty bank");
    const Eigen::VectorXd unit = l2_normalized(s);
    double best = 1.0;
    for (const auto& [class_id, model] : bank.models) {
        if (model.mean_vector.size() != unit.size()) {
            throw DimensionError("p_min: semantic dimension mismatch");
        }
        const double excess = (unit - model.mean_vector).norm() - model.threshold_u;
        const double g = excess <= 0.0 ? 0.0 : gpd_cdf(excess, model.params);
        best = std::min(best, g);
    }
    return best;
}

namespace {

// Argmax with ties broken toward the lowest class id (probs follow ids order).
int argmax_class(const Eigen::VectorXd& probs, const std::vector<int>& ids) {
    int best = ids[0];
    double best_p = probs[0];
    for (std::size_t i = 1; i < ids.size(); ++i) {
        const double p = probs[static_cast<Eigen::Index>(i)];
        if (p > best_p || (p == best_p && ids[i] < best)) {
            best_p = p;
            best = ids[i];
        }
    }
    return best;
}

}  // namespace

Prediction classify(const Eigen::VectorXd& s, const Eigen::VectorXd& f, const EvtBank& bank,
                    const ModelState& state, const SemanticTable& table,
                    const Registry& registry) {
    if (registry.n_seen() == 0) throw DomainError("classify: no seen classes");

    Prediction pred;
    pred.p_min = p_min(s, bank);
    const bool route_seen = registry.n_unseen() == 0 || pred.p_min < bank.delta;
    if (route_seen) {
        pred.route = Route::Seen;
        const Eigen::VectorXd probs = ic_probs(state, f);
        // Classifier rows follow ic_classes order; pick the best row, ties to
        // the lowest class id.
        int best_row = 0;
        for (Eigen::Index i = 1; i < probs.size(); ++i) {
            const int id = state.ic_classes[static_cast<std::size_t>(i)];
            const int cur = state.ic_classes[static_cast<std::size_t>(best_row)];
            if (probs[i] > probs[best_row] || (probs[i] == probs[best_row] && id < cur)) {
                best_row = static_cast<int>(i);
            }
        }
        pred.class_id = state.ic_classes[static_cast<std::size_t>(best_row)];
        pred.score = probs[best_row];
    } else {
        pred.route = Route::Unseen;
        const Eigen::VectorXd probs = zsc_probs(s, table, registry.unseen_classes);
        pred.class_id = argmax_class(probs, registry.unseen_classes);
        Eigen::Index idx = 0;
        for (std::size_t i = 0; i < registry.unseen_classes.size(); ++i) {
            if (registry.unseen_classes[i] == pred.class_id) idx = static_cast<Eigen::Index>(i);
        }
        pred.score = probs[idx];
    }
    return pred;
}

std::string bank_to_json(const EvtBank& bank) {
    json j;
    j["delta"] = bank.delta;
    json models = json::array();
    for (const auto& [class_id, model] : bank.models) {
        json m;
        m["class_id"] = model.class_id;
        m["mean"] = std::vector<double>(model.mean_vector.data(),
                                        model.mean_vector.data() + model.mean_vector.size());
        m["u"] = model.threshold_u;
        m["sigma"] = model.params.sigma;
        m["xi"] = model.params.xi;
        m["n_excess"] = model.n_excess;
        models.push_back(std::move(m));
    }
    j["models"] = std::move(models);
    return j.dump(2) + "\n";
}

EvtBank bank_from_json(const std::string& text) {
    EvtBank bank;
    try {
        const json j = json::parse(text);
        bank.delta = j.at("delta").get<double>();
        for (const auto& m : j.at("models")) {
            ClassEvtModel model;
            model.class_id = m.at("class_id").get<int>();
            const auto mean = m.at("mean").get<std::vector<double>>();
            model.mean_vector = Eigen::Map<const Eigen::VectorXd>(
                mean.data(), static_cast<Eigen::Index>(mean.size()));
            model.threshold_u = m.at("u").get<double>();
            model.params.sigma = m.at("sigma").get<double>();
            model.params.xi = m.at("xi").get<double>();
            model.n_excess = m.at("n_excess").get<int>();
            bank.models.emplace(model.class_id, std::move(model));
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("bank JSON: ") + e.what());
    }
    return bank;
}

}  // namespace izsd
