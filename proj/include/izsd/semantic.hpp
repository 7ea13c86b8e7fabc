#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

namespace izsd {

/// Class embedding table. Row 0 is the background row, built as the mean of
/// the class rows; row j holds class id j for j in 1..C. All rows are
/// l2-normalized.
struct SemanticTable {
    Eigen::MatrixXd embeddings;           // (C+1) x d, unit rows
    std::vector<std::string> class_names; // size C, class id j -> class_names[j-1]

    int num_classes() const { return static_cast<int>(class_names.size()); }
    int dim() const { return static_cast<int>(embeddings.cols()); }
    const Eigen::MatrixXd::ConstRowXpr row(int class_id) const { return embeddings.row(class_id); }
};

/// Class-set bookkeeping for one incremental step. The three sets are
/// pairwise disjoint; seen = old + new, all = seen + unseen.
struct Registry {
    std::vector<int> old_classes;     // sorted ascending
    std::vector<int> new_classes;
    std::vector<int> unseen_classes;

    int n_old() const { return static_cast<int>(old_classes.size()); }
    int n_new() const { return static_cast<int>(new_classes.size()); }
    int n_unseen() const { return static_cast<int>(unseen_classes.size()); }
    int n_seen() const { return n_old() + n_new(); }
    int n_all() const { return n_seen() + n_unseen(); }
    std::vector<int> seen_classes() const;  // old followed by new, each sorted
    bool is_seen(int class_id) const;
};

/// Validates disjointness and sorts each set.
Registry make_registry(std::vector<int> old_classes, std::vector<int> new_classes,
                       std::vector<int> unseen_classes);

/// Returns v / ||v||; throws DomainError when ||v|| is numerically zero.
Eigen::VectorXd l2_normalized(const Eigen::VectorXd& v);

/// Prepends the background row (mean of the class rows) and l2-normalizes
/// every row. class_embeddings is C x d with row i holding class id i+1.
SemanticTable build_table(const Eigen::MatrixXd& class_embeddings,
                          std::vector<std::string> names);

/// s = W f. No normalization; callers normalize where the protocol requires.
Eigen::VectorXd project(const Eigen::VectorXd& f, const Eigen::MatrixXd& W);

/// Cosine-softmax class probabilities of s over the given class subset
/// (table row ids). s is l2-normalized internally.
Eigen::VectorXd zsc_probs(const Eigen::VectorXd& s, const SemanticTable& table,
                          const std::vector<int>& class_subset);

/// Per-class mean of l2-normalized vectors, itself l2-normalized.
std::map<int, Eigen::VectorXd> class_means(
    const std::map<int, std::vector<Eigen::VectorXd>>& projected);

/// Embedding CSV: header "name,e_1,...,e_d", one row per class, background
/// row never stored (always derived).
std::string embeddings_to_csv(const Eigen::MatrixXd& class_embeddings,
                              const std::vector<std::string>& names);
void embeddings_from_csv(const std::vector<std::string>& lines,
                         Eigen::MatrixXd& class_embeddings, std::vector<std::string>& names);

}  // namespace izsd
