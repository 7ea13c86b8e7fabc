#include "izsd/semantic.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "izsd/errors.hpp"
#include "izsd/io.hpp"

namespace izsd {

namespace {
constexpr double kNormEps = 1e-12;

void check_finite(const Eigen::MatrixXd& m, const char* what) {
    if (!m.allFinite()) throw DomainError(std::string(what) + ": non-finite entries");
}
}  // namespace

std::vector<int> Registry::seen_classes() const {
    std::vector<int> seen(old_classes);
    seen.insert(seen.end(), new_classes.begin(), new_classes.end());
    return seen;
}

bool Registry::is_seen(int class_id) const {
    return std::binary_search(old_classes.begin(), old_classes.end(), class_id) ||
           std::binary_search(new_classes.begin(), new_classes.end(), class_id);
}

Registry make_registry(std::vector<int> old_classes, std::vector<int> new_classes,
                       std::vector<int> unseen_classes) {
    Registry reg{std::move(old_classes), std::move(new_classes), std::move(unseen_classes)};
    std::sort(reg.old_classes.begin(), reg.old_classes.end());
    std::sort(reg.new_classes.begin(), reg.new_classes.end());
    std::sort(reg.unseen_classes.begin(), reg.unseen_classes.end());
    std::vector<int> all(reg.old_classes);
    all.insert(all.end(), reg.new_classes.begin(), reg.new_classes.end());
    all.insert(all.end(), reg.unseen_classes.begin(), reg.unseen_classes.end());
    std::sort(all.begin(), all.end());
    if (std::adjacent_find(all.begin(), all.end()) != all.end()) {
        throw DomainError("make_registry: class sets must be pairwise disjoint");
    }
    return reg;
}

Eigen::VectorXd l2_normalized(const Eigen::VectorXd& v) {
    const double norm = v.norm();
    if (!(norm > kNormEps)) throw DomainError("l2_normalized: zero-norm vector");
    return v / norm;
}

SemanticTable build_table(const Eigen::MatrixXd& class_embeddings,
                          std::vector<std::string> names) {
    const int c = static_cast<int>(class_embeddings.rows());
    const int d = static_cast<int>(class_embeddings.cols());
    if (c < 2) throw DomainError("build_table: need at least 2 classes");
    if (d < 1) throw DomainError("build_table: need embedding dimension >= 1");
    if (static_cast<int>(names.size()) != c) {
        throw DimensionError("build_table: names size must match class count");
    }
    check_finite(class_embeddings, "build_table");

    SemanticTable table;
    table.class_names = std::move(names);
    table.embeddings.resize(c + 1, d);
    table.embeddings.row(0) = class_embeddings.colwise().mean();
    table.embeddings.bottomRows(c) = class_embeddings;
    for (int i = 0; i <= c; ++i) {
        const double norm = table.embeddings.row(i).norm();
        if (!(norm > kNormEps)) {
            throw DomainError("build_table: degenerate all-zero embedding row " +
                              std::to_string(i));
        }
        table.embeddings.row(i) /= norm;
    }
    return table;
}

Eigen::VectorXd project(const Eigen::VectorXd& f, const Eigen::MatrixXd& W) {
    if (W.cols() != f.size()) {
        throw DimensionError("project: W has " + std::to_string(W.cols()) +
                             " cols but f has length " + std::to_string(f.size()));
    }
    return W * f;
}

Eigen::VectorXd zsc_probs(const Eigen::VectorXd& s, const SemanticTable& table,
                          const std::vector<int>& class_subset) {
    if (class_subset.empty()) throw DomainError("zsc_probs: empty class subset");
    const Eigen::VectorXd unit = l2_normalized(s);  // throws on zero vector
    if (unit.size() != table.dim()) throw DimensionError("zsc_probs: s/table dimension mismatch");

    Eigen::VectorXd logits(class_subset.size());
    for (std::size_t i = 0; i < class_subset.size(); ++i) {
        const int id = class_subset[i];
        if (id < 0 || id > table.num_classes()) {
            throw DomainError("zsc_probs: class id out of table range: " + std::to_string(id));
        }
        logits[static_cast<Eigen::Index>(i)] = table.embeddings.row(id).dot(unit);
    }
    const Eigen::VectorXd shifted = logits.array() - logits.maxCoeff();
    Eigen::VectorXd probs = shifted.array().exp();
    probs /= probs.sum();
    return probs;
}

std::map<int, Eigen::VectorXd> class_means(
    const std::map<int, std::vector<Eigen::VectorXd>>& projected) {
    std::map<int, Eigen::VectorXd> means;
    for (const auto& [class_id, vectors] : projected) {
        if (vectors.empty()) {
            throw DomainError("class_means: class " + std::to_string(class_id) +
                              " has no vectors");
        }
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(vectors.front().size());
        for (const auto& v : vectors) {
            if (v.size() != acc.size()) throw DimensionError("class_means: mixed dimensions");
            acc += l2_normalized(v);
        }
        acc /= static_cast<double>(vectors.size());
        if (!(acc.norm() > kNormEps)) {
            throw DomainError("class_means: degenerate zero mean for class " +
                              std::to_string(class_id));
        }
        means.emplace(class_id, acc / acc.norm());
    }
    return means;
}

std::string embeddings_to_csv(const Eigen::MatrixXd& class_embeddings,
                              const std::vector<std::string>& names) {
    if (static_cast<Eigen::Index>(names.size()) != class_embeddings.rows()) {
        throw DimensionError("embeddings_to_csv: names/rows mismatch");
    }
    std::ostringstream out;
    out << "name";
    for (Eigen::Index j = 0; j < class_embeddings.cols(); ++j) out << ",e_" << (j + 1);
    out << '\n';
    for (Eigen::Index i = 0; i < class_embeddings.rows(); ++i) {
        out << names[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < class_embeddings.cols(); ++j) {
            out << ',' << io::format_double(class_embeddings(i, j));
        }
        out << '\n';
    }
    return out.str();
}

void embeddings_from_csv(const std::vector<std::string>& lines,
                         Eigen::MatrixXd& class_embeddings, std::vector<std::string>& names) {
    std::vector<std::vector<double>> rows;
    names.clear();
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        auto fields = io::split_csv_line(lines[i]);
        if (i == 0 && fields.size() >= 2 && fields[0] == "name") continue;  // header
        if (fields.size() < 2) throw DataError("embeddings CSV: row needs name plus values");
        names.push_back(fields[0]);
        std::vector<double> row;
        for (std::size_t j = 1; j < fields.size(); ++j) row.push_back(io::parse_double(fields[j]));
        if (!rows.empty() && row.size() != rows.front().size()) {
            throw DataError("embeddings CSV: ragged rows");
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw DataError("embeddings CSV: no data rows");
    class_embeddings.resize(static_cast<Eigen::Index>(rows.size()),
                            static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < rows[i].size(); ++j) {
            class_embeddings(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                rows[i][j];
        }
    }
}

}  // namespace izsd
