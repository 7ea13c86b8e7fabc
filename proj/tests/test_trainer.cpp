#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "izsd/dataset.hpp"
#include "izsd/errors.hpp"
#include "izsd/exemplars.hpp"
#include "izsd/losses.hpp"
#include "izsd/semantic.hpp"
#include "izsd/trainer.hpp"
#include "test_support.hpp"

using izsd::ModelState;
using izsd::ProposalPool;
using izsd::SemanticTable;
using izsd::TrainConfig;

namespace {

struct Fixture {
    SemanticTable table;
    ProposalPool pool;
    izsd::Registry registry;
    Eigen::MatrixXd centers;  // raw-space class centers, class id - 1 per row
};

// Separable clusters: random unit embeddings carried into raw space by a
// fixed isometry, plus small noise.
Fixture separable_fixture(int num_classes, int d, int r, int per_class, double noise,
                          std::uint64_t seed, double bg_fraction = 0.25) {
    auto gen = testsup::rng(seed);
    Fixture fx;
    Eigen::MatrixXd e(num_classes, d);
    for (int i = 0; i < num_classes; ++i) {
        Eigen::VectorXd v = testsup::random_vector(d, gen);
        e.row(i) = v.transpose() / v.norm();
    }
    std::vector<std::string> names;
    for (int i = 0; i < num_classes; ++i) names.push_back("c" + std::to_string(i + 1));
    fx.table = izsd::build_table(e, names);

    Eigen::MatrixXd lift = testsup::random_matrix(r, d, gen);
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(lift);
    const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(r, d);
    fx.centers = e * q.transpose();  // num_classes x r

    const int n_bg = static_cast<int>(bg_fraction * num_classes * per_class);
    const int total = num_classes * per_class + n_bg;
    fx.pool.raw_features.resize(r, total);
    int col = 0;
    for (int c = 1; c <= num_classes; ++c) {
        for (int k = 0; k < per_class; ++k, ++col) {
            fx.pool.raw_features.col(col) =
                fx.centers.row(c - 1).transpose() + noise * testsup::random_vector(r, gen);
            fx.pool.labels.push_back(c);
        }
    }
    const Eigen::VectorXd bg_center = q * fx.table.embeddings.row(0).transpose();
    for (int k = 0; k < n_bg; ++k, ++col) {
        fx.pool.raw_features.col(col) = bg_center + noise * testsup::random_vector(r, gen);
        fx.pool.labels.push_back(0);
    }

    std::vector<int> new_ids;
    for (int c = 1; c <= num_classes; ++c) new_ids.push_back(c);
    fx.registry = izsd::make_registry({}, new_ids, {});
    return fx;
}

double pool_accuracy(const ModelState& state, const ProposalPool& pool) {
    int hits = 0, total = 0;
    for (int i = 0; i < pool.size(); ++i) {
        const int y = pool.labels[static_cast<std::size_t>(i)];
        if (y == 0) continue;
        const Eigen::VectorXd f = izsd::visual_features(state, pool.raw_features.col(i));
        const Eigen::VectorXd p = izsd::ic_probs(state, f);
        int best = 0;
        for (int k = 1; k < p.size(); ++k) {
            if (p[k] > p[best]) best = k;
        }
        hits += state.ic_classes[static_cast<std::size_t>(best)] == y;
        ++total;
    }
    return static_cast<double>(hits) / total;
}

}  // namespace

TEST_CASE("zero learning rate leaves the initialization untouched") {
    const Fixture fx = separable_fixture(3, 4, 8, 10, 0.05, 1);
    TrainConfig cfg;
    cfg.learning_rate = 0.0;
    cfg.epochs = 3;
    cfg.visual_dim = 6;
    cfg.seed = 42;
    const ModelState trained =
        izsd::train_first_step(fx.pool, fx.table, fx.registry, izsd::HyperParams{}, cfg);

    ModelState reference = izsd::init_model(8, 6, 4, 42);
    reference = izsd::expand_classifier(reference, fx.registry.new_classes);
    CHECK(trained.feature_transform == reference.feature_transform);
    CHECK(trained.projection == reference.projection);
    CHECK(trained.ic_weights == reference.ic_weights);
}

TEST_CASE("first step separates a linearly separable 3-class set") {
    const Fixture fx = separable_fixture(3, 4, 8, 30, 0.03, 1);
    TrainConfig cfg;
    cfg.learning_rate = 0.05;
    cfg.epochs = 40;
    cfg.batch_size = 16;
    cfg.visual_dim = 6;
    cfg.seed = 1;
    const ModelState state =
        izsd::train_first_step(fx.pool, fx.table, fx.registry, izsd::HyperParams{}, cfg);
    CHECK(pool_accuracy(state, fx.pool) >= 0.95);
}

TEST_CASE("full-pool loss trace trends down") {
    const Fixture fx = separable_fixture(4, 4, 8, 20, 0.05, 77);
    TrainConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.epochs = 10;
    cfg.batch_size = 16;
    cfg.visual_dim = 6;
    cfg.seed = 7;
    izsd::TrainDiagnostics diag;
    izsd::train_first_step(fx.pool, fx.table, fx.registry, izsd::HyperParams{}, cfg, &diag);
    REQUIRE(diag.epoch_loss.size() == 10);
    CHECK(diag.final_loss <= diag.initial_loss);
    int upticks = 0;
    double prev = diag.initial_loss;
    for (double v : diag.epoch_loss) {
        if (v > prev) ++upticks;
        prev = v;
    }
    CHECK(upticks <= 2);
}

TEST_CASE("training is deterministic given seed and data order") {
    const Fixture fx = separable_fixture(3, 4, 8, 15, 0.05, 5);
    TrainConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.epochs = 5;
    cfg.batch_size = 8;
    cfg.visual_dim = 6;
    cfg.seed = 99;
    const ModelState a =
        izsd::train_first_step(fx.pool, fx.table, fx.registry, izsd::HyperParams{}, cfg);
    const ModelState b =
        izsd::train_first_step(fx.pool, fx.table, fx.registry, izsd::HyperParams{}, cfg);
    CHECK(izsd::checkpoint_bytes(a) == izsd::checkpoint_bytes(b));
}

TEST_CASE("one full-batch step moves each block by exactly lr times its gradient") {
    const Fixture fx = separable_fixture(3, 4, 8, 10, 0.05, 3);
    izsd::HyperParams hp;
    TrainConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.epochs = 1;
    cfg.batch_size = fx.pool.size();  // single batch per epoch
    cfg.visual_dim = 6;
    cfg.seed = 11;
    const ModelState before = izsd::expand_classifier(izsd::init_model(8, 6, 4, 11),
                                                      fx.registry.new_classes);
    const ModelState after =
        izsd::train_first_step(fx.pool, fx.table, fx.registry, hp, cfg);

    // Oracle: recompute the composite gradient by chaining the loss ops.
    const Eigen::MatrixXd features = before.feature_transform * fx.pool.raw_features;
    izsd::ProposalBatch batch{features, fx.pool.labels};
    const izsd::BatchLossGrad bone = izsd::compose_bone(batch, before.projection, fx.table,
                                                        fx.registry.seen_classes(), hp);
    Eigen::MatrixXd grad_features = bone.grad_features;
    Eigen::MatrixXd grad_ic =
        Eigen::MatrixXd::Zero(before.ic_weights.rows(), before.ic_weights.cols());
    int n_fg = 0;
    for (int y : fx.pool.labels) n_fg += (y != 0);
    for (int i = 0; i < fx.pool.size(); ++i) {
        const int y = fx.pool.labels[static_cast<std::size_t>(i)];
        if (y == 0) continue;
        const izsd::LossGrad ce =
            izsd::cross_entropy(before.ic_weights * features.col(i), before.ic_row_of(y));
        grad_ic.noalias() += (1.0 / n_fg) * ce.grad * features.col(i).transpose();
        grad_features.col(i).noalias() +=
            (1.0 / n_fg) * (before.ic_weights.transpose() * ce.grad);
    }
    const Eigen::MatrixXd grad_b = grad_features * fx.pool.raw_features.transpose();

    const double bound = 1.001;
    CHECK((after.projection - before.projection + cfg.learning_rate * bone.grad_projection)
              .cwiseAbs()
              .maxCoeff() < 1e-12);
    CHECK((after.feature_transform - before.feature_transform).norm() <=
          bound * cfg.learning_rate * grad_b.norm());
    CHECK((after.ic_weights - before.ic_weights).norm() <=
          bound * cfg.learning_rate * grad_ic.norm());
    CHECK((after.feature_transform - before.feature_transform + cfg.learning_rate * grad_b)
              .cwiseAbs()
              .maxCoeff() < 1e-12);
}

TEST_CASE("expand_classifier appends zero rows without touching old ones") {
    ModelState state = izsd::init_model(8, 6, 4, 2);
    state = izsd::expand_classifier(state, {1, 2, 3});
    auto gen = testsup::rng(55);
    state.ic_weights = testsup::random_matrix(3, 6, gen);

    const ModelState same = izsd::expand_classifier(state, {});
    CHECK(izsd::checkpoint_bytes(same) == izsd::checkpoint_bytes(state));

    const ModelState bigger = izsd::expand_classifier(state, {4, 5});
    REQUIRE(bigger.ic_weights.rows() == 5);
    CHECK(bigger.ic_weights.topRows(3) == state.ic_weights);
    CHECK(bigger.ic_weights.bottomRows(2).cwiseAbs().maxCoeff() == 0.0);

    // Old-class logits unchanged, new classes share the zero-logit mass.
    const Eigen::VectorXd f = testsup::random_vector(6, gen);
    const Eigen::VectorXd p = izsd::ic_probs(bigger, f);
    CHECK(p[3] == doctest::Approx(p[4]).epsilon(1e-12));
    const Eigen::VectorXd logits_old = state.ic_weights * f;
    const Eigen::VectorXd logits_new = bigger.ic_weights.topRows(3) * f;
    CHECK((logits_old - logits_new).cwiseAbs().maxCoeff() == 0.0);

    CHECK_THROWS_AS(izsd::expand_classifier(state, {2}), izsd::DomainError);
}

TEST_CASE("ic_probs closed forms and independent recomputation") {
    ModelState state = izsd::init_model(8, 6, 4, 21);
    state = izsd::expand_classifier(state, {1, 2, 3, 4});
    auto gen = testsup::rng(21);
    const Eigen::VectorXd f = testsup::random_vector(6, gen);

    // Zero rows give a uniform distribution.
    const Eigen::VectorXd uniform = izsd::ic_probs(state, f);
    for (int i = 0; i < 4; ++i) CHECK(uniform[i] == doctest::Approx(0.25));

    state.ic_weights = testsup::random_matrix(4, 6, gen);
    const Eigen::VectorXd p = izsd::ic_probs(state, f);
    CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-9));
    double z = 0.0;
    for (int i = 0; i < 4; ++i) z += std::exp(state.ic_weights.row(i).dot(f));
    for (int i = 0; i < 4; ++i) {
        CHECK(p[i] == doctest::Approx(std::exp(state.ic_weights.row(i).dot(f)) / z)
                          .epsilon(1e-12));
    }

    // A dominant row saturates.
    state.ic_weights.row(2) = 50.0 * f.transpose() / f.squaredNorm();
    CHECK(izsd::ic_probs(state, f)[2] > 0.999);
}

TEST_CASE("incremental step with no old classes reduces to the first step") {
    const Fixture fx = separable_fixture(4, 4, 8, 12, 0.05, 9);
    izsd::HyperParams hp;
    TrainConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.epochs = 6;
    cfg.batch_size = 16;
    cfg.visual_dim = 6;
    cfg.seed = 31;

    izsd::TrainDiagnostics first_diag;
    const ModelState first =
        izsd::train_first_step(fx.pool, fx.table, fx.registry, hp, cfg, &first_diag);

    ModelState init = izsd::expand_classifier(izsd::init_model(8, 6, 4, 31),
                                              fx.registry.new_classes);
    izsd::TrainDiagnostics inc_diag;
    const ModelState inc = izsd::train_incremental_step(
        fx.pool, izsd::ExemplarMemory{}, init, init, fx.table, fx.registry, hp, cfg, &inc_diag);

    REQUIRE(first_diag.epoch_loss.size() == inc_diag.epoch_loss.size());
    for (std::size_t i = 0; i < first_diag.epoch_loss.size(); ++i) {
        CHECK(std::abs(first_diag.epoch_loss[i] - inc_diag.epoch_loss[i]) < 1e-10);
    }
    CHECK(first.projection == inc.projection);
    CHECK(first.feature_transform == inc.feature_transform);
}

TEST_CASE("old model stays bit-frozen through an incremental step") {
    const Fixture fx = separable_fixture(4, 4, 8, 12, 0.05, 13);
    izsd::HyperParams hp;
    hp.memory_capacity = 8;
    TrainConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.epochs = 4;
    cfg.batch_size = 16;
    cfg.visual_dim = 6;
    cfg.seed = 17;

    const izsd::Registry step1 = izsd::make_registry({}, {1, 2}, {3, 4});
    ProposalPool step1_pool;
    std::vector<int> keep;
    for (int i = 0; i < fx.pool.size(); ++i) {
        const int y = fx.pool.labels[static_cast<std::size_t>(i)];
        if (y == 0 || y <= 2) keep.push_back(i);
    }
    step1_pool.raw_features.resize(8, static_cast<Eigen::Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) {
        step1_pool.raw_features.col(static_cast<Eigen::Index>(k)) =
            fx.pool.raw_features.col(keep[k]);
        step1_pool.labels.push_back(fx.pool.labels[static_cast<std::size_t>(keep[k])]);
    }
    const ModelState old_state = izsd::train_first_step(step1_pool, fx.table, step1, hp, cfg);
    const std::string old_bytes = izsd::checkpoint_bytes(old_state);

    izsd::ExemplarMemory memory;
    memory.capacity = hp.memory_capacity;
    for (int c = 1; c <= 2; ++c) {
        std::vector<std::pair<Eigen::VectorXd, std::string>> cands;
        for (int i = 0; i < step1_pool.size(); ++i) {
            if (step1_pool.labels[static_cast<std::size_t>(i)] == c) {
                cands.emplace_back(step1_pool.raw_features.col(i), "s" + std::to_string(i));
            }
        }
        memory.per_class[c] = izsd::select_exemplars(c, cands, 4);
    }

    const izsd::Registry step2 = izsd::make_registry({1, 2}, {3, 4}, {});
    ProposalPool step2_pool;
    keep.clear();
    for (int i = 0; i < fx.pool.size(); ++i) {
        const int y = fx.pool.labels[static_cast<std::size_t>(i)];
        if (y >= 3) keep.push_back(i);
    }
    step2_pool.raw_features.resize(8, static_cast<Eigen::Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) {
        step2_pool.raw_features.col(static_cast<Eigen::Index>(k)) =
            fx.pool.raw_features.col(keep[k]);
        step2_pool.labels.push_back(fx.pool.labels[static_cast<std::size_t>(keep[k])]);
    }

    ModelState expanded = izsd::expand_classifier(old_state, {3, 4});
    const ModelState new_state = izsd::train_incremental_step(
        step2_pool, memory, old_state, std::move(expanded), fx.table, step2, hp, cfg);

    CHECK(izsd::checkpoint_bytes(old_state) == old_bytes);
    CHECK(new_state.ic_weights.rows() == 4);
    CHECK(new_state.all_finite());

    // With every loss weight and the rate zeroed the step is the identity.
    TrainConfig frozen_cfg = cfg;
    frozen_cfg.learning_rate = 0.0;
    const ModelState idle = izsd::train_incremental_step(
        step2_pool, memory, old_state, izsd::expand_classifier(old_state, {3, 4}), fx.table,
        step2, hp, frozen_cfg);
    const ModelState reference = izsd::expand_classifier(old_state, {3, 4});
    CHECK(idle.feature_transform == reference.feature_transform);
    CHECK(idle.projection == reference.projection);
    CHECK(idle.ic_weights == reference.ic_weights);
}

TEST_CASE("distillation and projection distance protect old classes") {
    // Paired two-step run over 10 + 10 classes; the ablated twin zeroes both
    // old-model losses. Classes share a crowded 9-dim semantic space, so
    // uncorrected cross-entropy on the new group genuinely corrupts the old
    // classifier rows. Memory stays empty: replay must not mask the effect.
    izsd::SyntheticSpec spec;
    spec.num_classes = 20;
    spec.semantic_dim = 9;
    spec.visual_dim = 20;
    spec.raw_dim = 32;
    spec.scenes_per_class = 16;
    spec.test_scenes_per_class = 8;
    spec.proposals_per_scene = 12;
    spec.noise_sigma = 0.06;
    spec.bg_fraction = 0.5;
    spec.seed = 13;
    const izsd::SyntheticDataset data = izsd::generate_synthetic(spec);
    const SemanticTable table = izsd::build_table(data.class_embeddings, data.class_names);

    std::vector<int> g1, g2;
    for (int c = 1; c <= 10; ++c) g1.push_back(c);
    for (int c = 11; c <= 20; ++c) g2.push_back(c);
    const izsd::Registry reg1 = izsd::make_registry({}, g1, g2);
    const izsd::Registry reg2 = izsd::make_registry(g1, g2, {});

    auto pool_of = [&](const std::vector<int>& cls) {
        std::vector<izsd::Scene> picked;
        for (const auto& scene : data.train.scenes) {
            const int label = scene.ground_truth.front().label;
            if (std::find(cls.begin(), cls.end(), label) != cls.end()) picked.push_back(scene);
        }
        return izsd::pool_from_scenes(picked);
    };
    const ProposalPool pool_g1 = pool_of(g1);
    const ProposalPool pool_g2 = pool_of(g2);

    izsd::HyperParams hp;
    TrainConfig cfg;
    cfg.learning_rate = 0.06;
    cfg.epochs = 30;
    cfg.batch_size = 32;
    cfg.seed = 13;

    auto run_two_steps = [&](bool protect) {
        TrainConfig step_cfg = cfg;
        step_cfg.use_distillation = protect;
        step_cfg.use_projection_distance = protect;
        const ModelState old_state =
            izsd::train_first_step(pool_g1, table, reg1, hp, step_cfg);
        return izsd::train_incremental_step(pool_g2, izsd::ExemplarMemory{}, old_state,
                                            izsd::expand_classifier(old_state, g2), table,
                                            reg2, hp, step_cfg);
    };

    const ModelState protected_state = run_two_steps(true);
    const ModelState ablated_state = run_two_steps(false);

    ProposalPool old_test;
    {
        std::vector<izsd::Scene> picked;
        for (const auto& scene : data.test.scenes) {
            if (scene.ground_truth.front().label <= 10) picked.push_back(scene);
        }
        const ProposalPool with_bg = izsd::pool_from_scenes(picked);
        std::vector<int> keep;
        for (int i = 0; i < with_bg.size(); ++i) {
            if (with_bg.labels[static_cast<std::size_t>(i)] != 0) keep.push_back(i);
        }
        old_test.raw_features.resize(32, static_cast<Eigen::Index>(keep.size()));
        for (std::size_t k = 0; k < keep.size(); ++k) {
            old_test.raw_features.col(static_cast<Eigen::Index>(k)) =
                with_bg.raw_features.col(keep[k]);
            old_test.labels.push_back(with_bg.labels[static_cast<std::size_t>(keep[k])]);
        }
    }
    const double protected_acc = pool_accuracy(protected_state, old_test);
    const double ablated_acc = pool_accuracy(ablated_state, old_test);
    CHECK(protected_acc - ablated_acc >= 0.10);
}

TEST_CASE("empty memory with old classes records a configuration warning") {
    const Fixture fx = separable_fixture(4, 4, 8, 12, 0.05, 21);
    izsd::HyperParams hp;
    TrainConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.epochs = 2;
    cfg.batch_size = 16;
    cfg.visual_dim = 6;
    cfg.seed = 21;
    const izsd::Registry step1 = izsd::make_registry({}, {1, 2}, {3, 4});
    ProposalPool pool1;
    std::vector<int> keep;
    for (int i = 0; i < fx.pool.size(); ++i) {
        if (fx.pool.labels[static_cast<std::size_t>(i)] <= 2) keep.push_back(i);
    }
    pool1.raw_features.resize(8, static_cast<Eigen::Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) {
        pool1.raw_features.col(static_cast<Eigen::Index>(k)) = fx.pool.raw_features.col(keep[k]);
        pool1.labels.push_back(fx.pool.labels[static_cast<std::size_t>(keep[k])]);
    }
    const ModelState old_state = izsd::train_first_step(pool1, fx.table, step1, hp, cfg);

    ProposalPool pool2;
    keep.clear();
    for (int i = 0; i < fx.pool.size(); ++i) {
        if (fx.pool.labels[static_cast<std::size_t>(i)] >= 3) keep.push_back(i);
    }
    pool2.raw_features.resize(8, static_cast<Eigen::Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) {
        pool2.raw_features.col(static_cast<Eigen::Index>(k)) = fx.pool.raw_features.col(keep[k]);
        pool2.labels.push_back(fx.pool.labels[static_cast<std::size_t>(keep[k])]);
    }
    izsd::TrainDiagnostics diag;
    izsd::train_incremental_step(pool2, izsd::ExemplarMemory{}, old_state,
                                 izsd::expand_classifier(old_state, {3, 4}), fx.table,
                                 izsd::make_registry({1, 2}, {3, 4}, {}), hp, cfg, &diag);
    REQUIRE(diag.warnings.size() == 1);
    CHECK(diag.warnings[0].find("replay skipped") != std::string::npos);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
    namespace fs = std::filesystem;
    ModelState state = izsd::init_model(8, 6, 4, 77);
    state = izsd::expand_classifier(state, {2, 5, 9});
    auto gen = testsup::rng(78);
    state.ic_weights = testsup::random_matrix(3, 6, gen);
    state.step_index = 3;

    const fs::path path = fs::temp_directory_path() / "izsd_ckpt_test.bin";
    izsd::save_checkpoint(state, path);
    const ModelState back = izsd::load_checkpoint(path);
    CHECK(izsd::checkpoint_bytes(back) == izsd::checkpoint_bytes(state));
    CHECK(back.step_index == 3);
    CHECK(back.ic_classes == state.ic_classes);
    fs::remove(path);
}

TEST_CASE("divergent training reports a training error") {
    const Fixture fx = separable_fixture(3, 4, 8, 10, 0.05, 4);
    TrainConfig cfg;
    cfg.learning_rate = 1e9;  // guaranteed blow-up
    cfg.epochs = 5;
    cfg.visual_dim = 6;
    CHECK_THROWS_AS(
        izsd::train_first_step(fx.pool, fx.table, fx.registry, izsd::HyperParams{}, cfg),
        izsd::TrainingError);
}
