#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "izsd/dataset.hpp"
#include "izsd/errors.hpp"
#include "izsd/eval.hpp"

using izsd::SyntheticDataset;
using izsd::SyntheticSpec;

namespace {

SyntheticSpec small_spec() {
    SyntheticSpec spec;
    spec.num_classes = 6;
    spec.semantic_dim = 8;
    spec.visual_dim = 10;
    spec.raw_dim = 12;
    spec.scenes_per_class = 3;
    spec.test_scenes_per_class = 2;
    spec.proposals_per_scene = 10;
    spec.noise_sigma = 0.05;
    spec.bg_fraction = 0.5;
    spec.seed = 5;
    return spec;
}

}  // namespace

TEST_CASE("generator is deterministic given the seed") {
    const SyntheticDataset a = izsd::generate_synthetic(small_spec());
    const SyntheticDataset b = izsd::generate_synthetic(small_spec());
    CHECK(izsd::scenes_to_jsonl(a.train.scenes) == izsd::scenes_to_jsonl(b.train.scenes));
    CHECK(izsd::scenes_to_jsonl(a.test.scenes) == izsd::scenes_to_jsonl(b.test.scenes));
    CHECK(a.class_embeddings == b.class_embeddings);

    SyntheticSpec other = small_spec();
    other.seed = 6;
    const SyntheticDataset c = izsd::generate_synthetic(other);
    CHECK(izsd::scenes_to_jsonl(a.train.scenes) != izsd::scenes_to_jsonl(c.train.scenes));
}

TEST_CASE("zero noise puts every foreground feature at its class center") {
    SyntheticSpec spec = small_spec();
    spec.noise_sigma = 0.0;
    const SyntheticDataset data = izsd::generate_synthetic(spec);
    // All foreground proposals of one class share one exact feature vector.
    std::map<int, Eigen::VectorXd> first_seen;
    for (const auto& scene : data.train.scenes) {
        for (const auto& p : scene.proposals) {
            if (p.label == 0) continue;
            auto [it, inserted] = first_seen.emplace(p.label, p.raw_feature);
            if (!inserted) CHECK((p.raw_feature - it->second).cwiseAbs().maxCoeff() == 0.0);
        }
    }
    CHECK(first_seen.size() == 6);
    CHECK(data.stats.within_p95 == 0.0);
    CHECK(data.stats.between_mean > 0.0);
}

TEST_CASE("background fraction is honored exactly") {
    SyntheticSpec spec = small_spec();
    spec.bg_fraction = 0.5;
    spec.proposals_per_scene = 10;
    const SyntheticDataset data = izsd::generate_synthetic(spec);
    for (const auto& scene : data.train.scenes) {
        int n_bg = 0;
        for (const auto& p : scene.proposals) n_bg += (p.label == 0);
        CHECK(n_bg == 5);
        CHECK(scene.proposals.size() == 10);
    }
}

TEST_CASE("scene geometry is valid and single-class") {
    const SyntheticDataset data = izsd::generate_synthetic(small_spec());
    for (const auto& scene : data.train.scenes) {
        REQUIRE(!scene.ground_truth.empty());
        const int cls = scene.ground_truth.front().label;
        for (const auto& g : scene.ground_truth) {
            CHECK(!g.box.degenerate());
            CHECK(g.label == cls);
        }
        for (const auto& p : scene.proposals) {
            CHECK(!p.box.degenerate());
            if (p.label != 0) {
                CHECK(p.label == cls);
                // Foreground proposals overlap an object at the usual threshold.
                double best = 0.0;
                for (const auto& g : scene.ground_truth) {
                    best = std::max(best, izsd::iou(p.box, g.box));
                }
                CHECK(best >= 0.5);
            } else {
                for (const auto& g : scene.ground_truth) {
                    CHECK(izsd::iou(p.box, g.box) == 0.0);
                }
            }
        }
    }
}

TEST_CASE("separation stats flag usable geometry") {
    const SyntheticDataset data = izsd::generate_synthetic(small_spec());
    CHECK(data.stats.within_p95 < data.stats.between_mean);
}

TEST_CASE("scene JSONL round trip") {
    const SyntheticDataset data = izsd::generate_synthetic(small_spec());
    const std::string jsonl = izsd::scenes_to_jsonl(data.train.scenes);
    std::vector<std::string> lines;
    std::istringstream in(jsonl);
    for (std::string line; std::getline(in, line);) lines.push_back(line);
    const auto back = izsd::scenes_from_jsonl(lines);
    CHECK(izsd::scenes_to_jsonl(back) == jsonl);
    CHECK_THROWS_AS(izsd::scenes_from_jsonl({"{broken"}), izsd::DataError);
}

TEST_CASE("pool_from_scenes flattens proposals with aligned source ids") {
    const SyntheticDataset data = izsd::generate_synthetic(small_spec());
    std::vector<std::string> ids;
    const izsd::ProposalPool pool = izsd::pool_from_scenes(data.train.scenes, &ids);
    CHECK(pool.size() == 6 * 3 * 10);
    CHECK(ids.size() == static_cast<std::size_t>(pool.size()));
    CHECK(ids.front() == "scene0:p0");
    CHECK(pool.raw_features.rows() == 12);
}

TEST_CASE("generator can ingest an embedding CSV") {
    namespace fs = std::filesystem;
    // Attribute-style binary rows, one per class.
    Eigen::MatrixXd e = Eigen::MatrixXd::Zero(4, 6);
    e << 1, 1, 0, 0, 1, 0,
         0, 1, 1, 0, 0, 1,
         1, 0, 0, 1, 0, 0,
         0, 0, 1, 1, 1, 1;
    const fs::path file = fs::temp_directory_path() / "izsd_attr_test.csv";
    {
        std::ofstream out(file);
        out << izsd::embeddings_to_csv(e, {"ape", "bee", "cat", "dog"});
    }
    SyntheticSpec spec = small_spec();
    spec.embedding_file = file.string();
    const SyntheticDataset data = izsd::generate_synthetic(spec);
    fs::remove(file);

    CHECK(data.class_names == std::vector<std::string>{"ape", "bee", "cat", "dog"});
    REQUIRE(data.class_embeddings.rows() == 4);
    REQUIRE(data.class_embeddings.cols() == 6);
    for (int i = 0; i < 4; ++i) {
        CHECK(data.class_embeddings.row(i).norm() == doctest::Approx(1.0));
    }
    // Scenes cover exactly the loaded classes.
    std::set<int> labels;
    for (const auto& scene : data.train.scenes) labels.insert(scene.ground_truth.front().label);
    CHECK(labels == std::set<int>{1, 2, 3, 4});
}

TEST_CASE("spec validation rejects nonsense") {
    SyntheticSpec bad = small_spec();
    bad.num_classes = 1;
    CHECK_THROWS_AS(izsd::generate_synthetic(bad), izsd::ConfigError);
    bad = small_spec();
    bad.bg_fraction = 1.0;
    CHECK_THROWS_AS(izsd::generate_synthetic(bad), izsd::ConfigError);
    bad = small_spec();
    bad.semantic_dim = 20;  // exceeds raw_dim
    CHECK_THROWS_AS(izsd::generate_synthetic(bad), izsd::ConfigError);
}
