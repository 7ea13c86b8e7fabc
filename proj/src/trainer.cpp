#include "izsd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>

#include "izsd/errors.hpp"
#include "izsd/exemplars.hpp"
#include "izsd/io.hpp"

namespace izsd {

namespace {

// Memory replays fill this share of each mini-batch when replays exist.
constexpr double kReplayFraction = 0.5;

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
    Eigen::VectorXd shifted = logits.array() - logits.maxCoeff();
    Eigen::VectorXd p = shifted.array().exp();
    return p / p.sum();
}

struct Gradients {
    Eigen::MatrixXd feature_transform;
    Eigen::MatrixXd projection;
    Eigen::MatrixXd ic_weights;
};

// One evaluation of the step's composite loss on a set of pool columns, with
// gradients for every trainable block. The old model, when present, supplies
// distillation targets, projection anchors, and the feature-distance anchor.
struct CompositeLoss {
    double value = 0.0;
    Gradients grads;
};

struct StepLossSpec {
    const ModelState* old_state = nullptr;  // null on the first step
    double ce_weight = 1.0;
    double old_weight = 0.0;  // N_O / N_C
    double fd_weight = 0.0;   // gamma
};

CompositeLoss composite_loss(const ModelState& state, const Eigen::MatrixXd& raw,
                             const std::vector<int>& labels, const SemanticTable& table,
                             const std::vector<int>& seen_ids, const StepLossSpec& spec,
                             const HyperParams& hp, const TrainConfig& cfg) {
    const int n = static_cast<int>(labels.size());
    const Eigen::MatrixXd features = state.feature_transform * raw;

    ProposalBatch batch{features, labels};
    const BatchLossGrad bone = compose_bone(batch, state.projection, table, seen_ids, hp,
                                            cfg.use_bfmse);

    CompositeLoss out;
    out.value = bone.value;
    out.grads.projection = bone.grad_projection;
    out.grads.ic_weights = Eigen::MatrixXd::Zero(state.ic_weights.rows(), state.ic_weights.cols());
    Eigen::MatrixXd grad_features = bone.grad_features;

    // Cross-entropy over foreground proposals on the full classifier.
    int n_fg = 0;
    for (int y : labels) n_fg += (y != 0);
    if (n_fg > 0 && state.ic_weights.rows() > 0) {
        const double w = spec.ce_weight / n_fg;
        double ce_value = 0.0;
        for (int i = 0; i < n; ++i) {
            const int y = labels[static_cast<std::size_t>(i)];
            if (y == 0) continue;
            const int row = state.ic_row_of(y);
            if (row < 0) throw DomainError("composite_loss: label without classifier row");
            const Eigen::VectorXd logits = state.ic_weights * features.col(i);
            const LossGrad ce = cross_entropy(logits, row);
            ce_value += ce.value;
            out.grads.ic_weights.noalias() += w * ce.grad * features.col(i).transpose();
            grad_features.col(i).noalias() += w * (state.ic_weights.transpose() * ce.grad);
        }
        out.value += spec.ce_weight * ce_value / n_fg;
    }

    if (spec.old_state != nullptr) {
        const ModelState& old_state = *spec.old_state;
        const Eigen::MatrixXd old_features = old_state.feature_transform * raw;
        const int n_old_rows = static_cast<int>(old_state.ic_weights.rows());

        if (cfg.use_distillation && n_old_rows > 0 && spec.old_weight > 0.0) {
            const double w = spec.old_weight / n;
            double distill_value = 0.0;
            for (int i = 0; i < n; ++i) {
                const Eigen::VectorXd old_logits = old_state.ic_weights * old_features.col(i);
                const Eigen::VectorXd new_slice =
                    state.ic_weights.topRows(n_old_rows) * features.col(i);
                const LossGrad dist = distillation(old_logits, new_slice, hp.temperature);
                distill_value += dist.value;
                out.grads.ic_weights.topRows(n_old_rows).noalias() +=
                    w * dist.grad * features.col(i).transpose();
                grad_features.col(i).noalias() +=
                    w * (state.ic_weights.topRows(n_old_rows).transpose() * dist.grad);
            }
            out.value += spec.old_weight * distill_value / n;
        }

        if (cfg.use_projection_distance && spec.old_weight > 0.0) {
            const double w = spec.old_weight / n;
            double pd_value = 0.0;
            for (int i = 0; i < n; ++i) {
                const Eigen::VectorXd s_old = old_state.projection * old_features.col(i);
                const Eigen::VectorXd s_new = state.projection * features.col(i);
                const LossGrad pd = projection_distance(s_old, s_new);
                pd_value += pd.value;
                out.grads.projection.noalias() += w * pd.grad * features.col(i).transpose();
                grad_features.col(i).noalias() += w * (state.projection.transpose() * pd.grad);
            }
            out.value += spec.old_weight * pd_value / n;
        }

        if (spec.fd_weight > 0.0) {
            // Per-proposal mean keeps the term batch-size invariant.
            const MatrixLossGrad fd = feature_distance(old_features, features);
            out.value += spec.fd_weight * fd.value / n;
            grad_features.noalias() += (spec.fd_weight / n) * fd.grad;
        }
    }

    out.grads.feature_transform.noalias() = grad_features * raw.transpose();
    return out;
}

struct BatchDraw {
    Eigen::MatrixXd raw;
    std::vector<int> labels;
};

BatchDraw gather(const ProposalPool& pool, const std::vector<int>& idx, int begin, int end) {
    BatchDraw draw;
    draw.raw.resize(pool.raw_features.rows(), end - begin);
    draw.labels.reserve(static_cast<std::size_t>(end - begin));
    for (int k = begin; k < end; ++k) {
        draw.raw.col(k - begin) = pool.raw_features.col(idx[static_cast<std::size_t>(k)]);
        draw.labels.push_back(pool.labels[static_cast<std::size_t>(idx[static_cast<std::size_t>(k)])]);
    }
    return draw;
}

// Shared mini-batch engine for both steps.
ModelState run_training(const ProposalPool& data, const ProposalPool* replay, ModelState state,
                        const SemanticTable& table, const std::vector<int>& seen_ids,
                        const StepLossSpec& spec, const HyperParams& hp, const TrainConfig& cfg,
                        TrainDiagnostics* diag) {
    cfg.validate();
    if (data.size() == 0) throw DomainError("train: empty data pool");
    if (data.raw_features.cols() != data.size()) {
        throw DimensionError("train: pool features/labels mismatch");
    }

    std::mt19937_64 rng(cfg.seed);
    std::vector<int> order(static_cast<std::size_t>(data.size()));
    std::iota(order.begin(), order.end(), 0);

    auto full_loss = [&] {
        double value = composite_loss(state, data.raw_features, data.labels, table, seen_ids,
                                      spec, hp, cfg)
                           .value;
        if (replay != nullptr && replay->size() > 0) {
            // The replayed pool counts toward the epoch trace with its own mean.
            value += composite_loss(state, replay->raw_features, replay->labels, table, seen_ids,
                                    spec, hp, cfg)
                         .value;
        }
        return value;
    };

    if (diag != nullptr) {
        diag->initial_loss = full_loss();
        diag->epoch_loss.clear();
    }

    const bool has_replay = replay != nullptr && replay->size() > 0;
    // Half the batch comes from memory, but never more than the memory holds:
    // replays are drawn without replacement within a batch.
    const int replay_per_batch =
        has_replay ? std::min(static_cast<int>(std::floor(cfg.batch_size * kReplayFraction)),
                              replay->size())
                   : 0;
    std::vector<int> replay_order;
    if (has_replay) {
        replay_order.resize(static_cast<std::size_t>(replay->size()));
        std::iota(replay_order.begin(), replay_order.end(), 0);
    }

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = epoch * 2 >= cfg.epochs ? cfg.learning_rate * cfg.lr_decay
                                                  : cfg.learning_rate;
        std::shuffle(order.begin(), order.end(), rng);
        for (int begin = 0; begin < data.size(); begin += cfg.batch_size) {
            const int end = std::min(begin + cfg.batch_size, data.size());
            BatchDraw batch = gather(data, order, begin, end);
            if (replay_per_batch > 0) {
                std::shuffle(replay_order.begin(), replay_order.end(), rng);
                const int base = static_cast<int>(batch.labels.size());
                batch.raw.conservativeResize(Eigen::NoChange, base + replay_per_batch);
                for (int k = 0; k < replay_per_batch; ++k) {
                    const int j = replay_order[static_cast<std::size_t>(k)];
                    batch.raw.col(base + k) = replay->raw_features.col(j);
                    batch.labels.push_back(replay->labels[static_cast<std::size_t>(j)]);
                }
            }
            const CompositeLoss loss =
                composite_loss(state, batch.raw, batch.labels, table, seen_ids, spec, hp, cfg);
            if (!std::isfinite(loss.value)) {
                throw TrainingError("training diverged: non-finite loss at epoch " +
                                    std::to_string(epoch));
            }
            state.feature_transform.noalias() -= lr * loss.grads.feature_transform;
            state.projection.noalias() -= lr * loss.grads.projection;
            if (state.ic_weights.size() > 0) state.ic_weights.noalias() -= lr * loss.grads.ic_weights;
            if (!state.all_finite()) {
                throw TrainingError("training diverged: non-finite parameters at epoch " +
                                    std::to_string(epoch));
            }
        }
        if (diag != nullptr) diag->epoch_loss.push_back(full_loss());
    }
    if (diag != nullptr) {
        diag->final_loss = diag->epoch_loss.empty() ? diag->initial_loss : diag->epoch_loss.back();
    }
    return state;
}

}  // namespace

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0)) throw DomainError("train config: learning rate must be >= 0");
    if (epochs < 1) throw DomainError("train config: epochs must be >= 1");
    if (batch_size < 1) throw DomainError("train config: batch size must be >= 1");
    if (visual_dim < 1) throw DomainError("train config: visual dim must be >= 1");
    if (!(lr_decay > 0.0)) throw DomainError("train config: lr decay must be positive");
}

int ModelState::ic_row_of(int class_id) const {
    for (std::size_t i = 0; i < ic_classes.size(); ++i) {
        if (ic_classes[i] == class_id) return static_cast<int>(i);
    }
    return -1;
}

bool ModelState::all_finite() const {
    return feature_transform.allFinite() && projection.allFinite() &&
           (ic_weights.size() == 0 || ic_weights.allFinite());
}

ModelState init_model(int raw_dim, int visual_dim, int semantic_dim, std::uint64_t seed) {
    if (raw_dim < 1 || visual_dim < 1 || semantic_dim < 1) {
        throw DomainError("init_model: dimensions must be positive");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    ModelState state;
    state.feature_transform.resize(visual_dim, raw_dim);
    const double b_scale = 1.0 / std::sqrt(static_cast<double>(raw_dim));
    for (Eigen::Index i = 0; i < state.feature_transform.size(); ++i) {
        state.feature_transform.data()[i] = b_scale * gauss(rng);
    }
    state.projection.resize(semantic_dim, visual_dim);
    const double w_scale = 1.0 / std::sqrt(static_cast<double>(visual_dim));
    for (Eigen::Index i = 0; i < state.projection.size(); ++i) {
        state.projection.data()[i] = w_scale * gauss(rng);
    }
    state.ic_weights.resize(0, visual_dim);
    return state;
}

void ProposalPool::append(const ProposalPool& other) {
    if (other.size() == 0) return;
    if (size() == 0) {
        *this = other;
        return;
    }
    if (other.raw_features.rows() != raw_features.rows()) {
        throw DimensionError("proposal pool: raw dimension mismatch");
    }
    const Eigen::Index base = raw_features.cols();
    raw_features.conservativeResize(Eigen::NoChange, base + other.raw_features.cols());
    raw_features.rightCols(other.raw_features.cols()) = other.raw_features;
    labels.insert(labels.end(), other.labels.begin(), other.labels.end());
}

Eigen::MatrixXd visual_features(const ModelState& state, const Eigen::MatrixXd& raw) {
    if (raw.rows() != state.feature_transform.cols()) {
        throw DimensionError("visual_features: raw dimension mismatch");
    }
    return state.feature_transform * raw;
}

Eigen::VectorXd ic_probs(const ModelState& state, const Eigen::VectorXd& f) {
    if (f.size() != state.ic_weights.cols()) {
        throw DimensionError("ic_probs: feature dimension mismatch");
    }
    if (state.ic_weights.rows() == 0) throw DomainError("ic_probs: classifier has no rows");
    return softmax(state.ic_weights * f);
}

ModelState train_first_step(const ProposalPool& data, const SemanticTable& table,
                            const Registry& registry, const HyperParams& hp,
                            const TrainConfig& cfg, TrainDiagnostics* diag) {
    if (registry.n_old() != 0) {
        throw ProtocolError("train_first_step: old-class set must be empty");
    }
    hp.validate();
    ModelState state = init_model(static_cast<int>(data.raw_features.rows()), cfg.visual_dim,
                                  table.dim(), cfg.seed);
    state = expand_classifier(state, registry.new_classes);
    state.step_index = 1;

    StepLossSpec spec;
    spec.ce_weight = 1.0;
    return run_training(data, nullptr, std::move(state), table, registry.seen_classes(), spec,
                        hp, cfg, diag);
}

ModelState expand_classifier(const ModelState& state, const std::vector<int>& new_class_ids) {
    ModelState next = state;
    if (new_class_ids.empty()) return next;
    for (int id : new_class_ids) {
        if (next.ic_row_of(id) >= 0) {
            throw DomainError("expand_classifier: class already present: " + std::to_string(id));
        }
    }
    const Eigen::Index old_rows = next.ic_weights.rows();
    next.ic_weights.conservativeResize(old_rows + static_cast<Eigen::Index>(new_class_ids.size()),
                                       Eigen::NoChange);
    next.ic_weights.bottomRows(static_cast<Eigen::Index>(new_class_ids.size())).setZero();
    next.ic_classes.insert(next.ic_classes.end(), new_class_ids.begin(), new_class_ids.end());
    return next;
}

ModelState train_incremental_step(const ProposalPool& new_data, const ExemplarMemory& memory,
                                  const ModelState& old_state, ModelState new_state,
                                  const SemanticTable& table, const Registry& registry,
                                  const HyperParams& hp, const TrainConfig& cfg,
                                  TrainDiagnostics* diag) {
    hp.validate();
    for (int id : registry.seen_classes()) {
        if (new_state.ic_row_of(id) < 0) {
            throw ProtocolError("train_incremental_step: classifier missing row for class " +
                                std::to_string(id));
        }
    }

    ProposalPool replay;
    replay.raw_features.resize(new_data.raw_features.rows(),
                               static_cast<Eigen::Index>(memory.total()));
    for (const auto& [class_id, records] : memory.per_class) {
        for (const auto& rec : records) {
            if (rec.feature.size() != replay.raw_features.rows()) {
                throw DimensionError("train_incremental_step: exemplar raw dimension mismatch");
            }
            replay.raw_features.col(static_cast<Eigen::Index>(replay.labels.size())) = rec.feature;
            replay.labels.push_back(class_id);
        }
    }

    StepLossSpec spec;
    const bool has_old = registry.n_old() > 0;
    if (has_old && replay.size() == 0 && diag != nullptr) {
        diag->warnings.push_back("memory empty while old classes exist; replay skipped");
    }
    const IlWeights weights = il_weights(registry, hp.gamma);
    spec.old_state = has_old ? &old_state : nullptr;
    spec.ce_weight = weights.new_ratio;
    spec.old_weight = weights.old_ratio;
    spec.fd_weight = has_old ? weights.gamma : 0.0;

    new_state.step_index = old_state.step_index + 1;
    return run_training(new_data, replay.size() > 0 ? &replay : nullptr, std::move(new_state),
                        table, registry.seen_classes(), spec, hp, cfg, diag);
}

namespace {

constexpr char kCheckpointMagic[8] = {'I', 'Z', 'S', 'D', 'C', 'K', '0', '1'};

void put_i64(std::string& out, std::int64_t v) {
    out.append(reinterpret_cast<const char*>(&v), sizeof(v));
}

void put_matrix(std::string& out, const Eigen::MatrixXd& m) {
    put_i64(out, m.rows());
    put_i64(out, m.cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            const double v = m(i, j);
            out.append(reinterpret_cast<const char*>(&v), sizeof(v));
        }
    }
}

struct Reader {
    const std::string& bytes;
    std::size_t pos = 0;

    void take(void* dst, std::size_t n) {
        if (pos + n > bytes.size()) throw DataError("checkpoint: truncated file");
        std::memcpy(dst, bytes.data() + pos, n);
        pos += n;
    }
    std::int64_t i64() {
        std::int64_t v = 0;
        take(&v, sizeof(v));
        return v;
    }
    Eigen::MatrixXd matrix() {
        const std::int64_t rows = i64(), cols = i64();
        if (rows < 0 || cols < 0 || rows * cols > (1LL << 30)) {
            throw DataError("checkpoint: implausible matrix shape");
        }
        Eigen::MatrixXd m(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i) {
            for (Eigen::Index j = 0; j < cols; ++j) {
                double v = 0;
                take(&v, sizeof(v));
                m(i, j) = v;
            }
        }
        return m;
    }
};

}  // namespace

std::string checkpoint_bytes(const ModelState& state) {
    std::string out;
    out.append(kCheckpointMagic, sizeof(kCheckpointMagic));
    put_i64(out, state.step_index);
    put_matrix(out, state.feature_transform);
    put_matrix(out, state.projection);
    put_matrix(out, state.ic_weights);
    put_i64(out, static_cast<std::int64_t>(state.ic_classes.size()));
    for (int id : state.ic_classes) put_i64(out, id);
    return out;
}

void save_checkpoint(const ModelState& state, const std::filesystem::path& path) {
    io::write_file_atomic(path, checkpoint_bytes(state));
}

ModelState load_checkpoint(const std::filesystem::path& path) {
    const std::string bytes = io::read_file(path);
    if (bytes.size() < sizeof(kCheckpointMagic) ||
        std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
        throw DataError("checkpoint: bad magic in " + path.string());
    }
    Reader r{bytes, sizeof(kCheckpointMagic)};
    ModelState state;
    state.step_index = static_cast<int>(r.i64());
    state.feature_transform = r.matrix();
    state.projection = r.matrix();
    state.ic_weights = r.matrix();
    const std::int64_t n_classes = r.i64();
    if (n_classes != state.ic_weights.rows()) {
        throw DataError("checkpoint: classifier rows and class ids disagree");
    }
    state.ic_classes.resize(static_cast<std::size_t>(n_classes));
    for (auto& id : state.ic_classes) id = static_cast<int>(r.i64());
    if (r.pos != bytes.size()) throw DataError("checkpoint: trailing bytes");
    return state;
}

}  // namespace izsd
