#include "izsd/exemplars.hpp"

#include <algorithm>
#include <sstream>

#include <nlohmann/json.hpp>

#include "izsd/errors.hpp"

namespace izsd {

using json = nlohmann::json;

std::size_t ExemplarMemory::total() const {
    std::size_t n = 0;
    for (const auto& [id, records] : per_class) n += records.size();
    return n;
}

std::vector<ExemplarRecord> select_exemplars(
    int class_id, const std::vector<std::pair<Eigen::VectorXd, std::string>>& candidates,
    int quota) {
    if (candidates.empty()) throw DomainError("select_exemplars: no candidates");
    if (quota < 1) throw DomainError("select_exemplars: quota must be >= 1");

    Eigen::VectorXd mean = Eigen::VectorXd::Zero(candidates.front().first.size());
    for (const auto& [feature, id] : candidates) {
        if (feature.size() != mean.size()) {
            throw DimensionError("select_exemplars: mixed feature dimensions");
        }
        mean += feature;
    }
    mean /= static_cast<double>(candidates.size());

    std::vector<ExemplarRecord> records;
    records.reserve(candidates.size());
    for (const auto& [feature, source_id] : candidates) {
        records.push_back(
            ExemplarRecord{class_id, feature, (feature - mean).norm(), source_id});
    }
    std::sort(records.begin(), records.end(), [](const ExemplarRecord& a, const ExemplarRecord& b) {
        if (a.distance_to_mean != b.distance_to_mean) {
            return a.distance_to_mean < b.distance_to_mean;
        }
        return a.source_id < b.source_id;
    });
    if (static_cast<std::size_t>(quota) < records.size()) {
        records.resize(static_cast<std::size_t>(quota));
    }
    return records;
}

ExemplarMemory rebalance(ExemplarMemory memory, const std::vector<int>& seen_class_ids) {
    if (seen_class_ids.empty()) throw DomainError("rebalance: empty seen-class set");
    const std::size_t quota =
        static_cast<std::size_t>(memory.capacity) / seen_class_ids.size();
    for (auto& [class_id, records] : memory.per_class) {
        if (records.size() > quota) records.resize(quota);  // lists are distance-ascending
    }
    return memory;
}

std::string memory_to_jsonl(const ExemplarMemory& memory) {
    std::ostringstream out;
    for (const auto& [class_id, records] : memory.per_class) {
        for (const auto& rec : records) {
            json j;
            j["class_id"] = class_id;
            j["source_id"] = rec.source_id;
            j["feature"] = std::vector<double>(rec.feature.data(),
                                               rec.feature.data() + rec.feature.size());
            j["distance"] = rec.distance_to_mean;
            out << j.dump() << '\n';
        }
    }
    return out.str();
}

ExemplarMemory memory_from_jsonl(const std::vector<std::string>& lines, int capacity) {
    ExemplarMemory memory;
    memory.capacity = capacity;
    for (const auto& line : lines) {
        if (line.empty()) continue;
        try {
            const json j = json::parse(line);
            ExemplarRecord rec;
            rec.class_id = j.at("class_id").get<int>();
            rec.source_id = j.at("source_id").get<std::string>();
            const auto values = j.at("feature").get<std::vector<double>>();
            rec.feature = Eigen::Map<const Eigen::VectorXd>(
                values.data(), static_cast<Eigen::Index>(values.size()));
            rec.distance_to_mean = j.at("distance").get<double>();
            memory.per_class[rec.class_id].push_back(std::move(rec));
        } catch (const json::exception& e) {
            throw DataError(std::string("memory JSONL: ") + e.what());
        }
    }
    for (auto& [id, records] : memory.per_class) {
        std::sort(records.begin(), records.end(),
                  [](const ExemplarRecord& a, const ExemplarRecord& b) {
                      if (a.distance_to_mean != b.distance_to_mean) {
                          return a.distance_to_mean < b.distance_to_mean;
                      }
                      return a.source_id < b.source_id;
                  });
    }
    if (memory.total() > static_cast<std::size_t>(capacity)) {
        throw DataError("memory JSONL: more records than capacity");
    }
    return memory;
}

}  // namespace izsd
