#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace izsd {

/// One stored representative: the raw feature (the desk-scale stand-in for an
/// image, so replay can feed both old and new models) plus its distance to
/// the class mean at selection time.
struct ExemplarRecord {
    int class_id = 0;
    Eigen::VectorXd feature;
    double distance_to_mean = 0.0;
    std::string source_id;
};

/// Bounded store of per-class representatives. Total records never exceed
/// the capacity K; each class list stays sorted ascending by distance.
struct ExemplarMemory {
    int capacity = 150;
    std::map<int, std::vector<ExemplarRecord>> per_class;

    std::size_t total() const;
    bool empty() const { return total() == 0; }
};

/// Picks the `quota` candidates closest (Euclidean) to the candidates' mean
/// feature, ascending by distance, ties broken by source_id. A short class
/// returns every candidate.
std::vector<ExemplarRecord> select_exemplars(
    int class_id, const std::vector<std::pair<Eigen::VectorXd, std::string>>& candidates,
    int quota);

/// Truncates every class list to floor(K / |seen|) records, dropping the
/// largest distances. Leftover capacity stays unused.
ExemplarMemory rebalance(ExemplarMemory memory, const std::vector<int>& seen_class_ids);

// JSONL snapshot: one record per line {class_id, source_id, feature, distance}.
std::string memory_to_jsonl(const ExemplarMemory& memory);
ExemplarMemory memory_from_jsonl(const std::vector<std::string>& lines, int capacity);

}  // namespace izsd
