#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "izsd/eval.hpp"
#include "izsd/trainer.hpp"

namespace izsd {

struct Proposal {
    Box box;
    Eigen::VectorXd raw_feature;
    int label = 0;  // 0 = background
};

struct GtObject {
    Box box;
    int label = 0;
};

struct Scene {
    int scene_id = 0;
    std::vector<Proposal> proposals;
    std::vector<GtObject> ground_truth;
};

// Distinct wrapper types keep training code from ever touching test scenes.
struct TrainSplit {
    std::vector<Scene> scenes;
};
struct TestSplit {
    std::vector<Scene> scenes;
};

struct SyntheticSpec {
    int num_classes = 20;
    int semantic_dim = 16;  // d
    int visual_dim = 24;    // v, recorded for the model architecture
    int raw_dim = 32;       // r
    int scenes_per_class = 12;
    int test_scenes_per_class = 6;
    int proposals_per_scene = 16;
    int objects_per_scene = 2;
    double noise_sigma = 0.08;
    // Scale-mixture tail: a fraction of proposals draw their noise at a
    // larger scale, giving the thick-tailed within-class distance
    // distributions that the extreme-value machinery is built for.
    double tail_fraction = 0.2;
    double tail_scale = 2.5;
    double bg_fraction = 0.5;
    std::uint64_t seed = 0;
    // Optional: load class embeddings (attribute vectors or word vectors)
    // from a CSV instead of sampling them; overrides num_classes and
    // semantic_dim.
    std::string embedding_file;

    void validate() const;
};

/// Generator self-check: spread of foreground raw features around their class
/// center versus the spacing of the centers themselves.
struct SeparationStats {
    double within_p95 = 0.0;    // 95th percentile of distance to own center
    double between_mean = 0.0;  // mean pairwise distance between centers
};

struct SyntheticDataset {
    TrainSplit train;
    TestSplit test;
    Eigen::MatrixXd class_embeddings;      // C x d, unit rows (background derived later)
    std::vector<std::string> class_names;  // class id j -> class_names[j-1]
    int visual_dim = 0;
    SeparationStats stats;
};

/// Seeded scene sampler. Class embeddings are random unit vectors; a hidden
/// row-orthonormal map carries each embedding to a raw-space cluster center,
/// so a linear model can recover the semantic geometry. Foreground proposals
/// jitter their ground-truth box and add isotropic feature noise; background
/// proposals live in a separate image region around the mean-embedding
/// center. Deterministic given the seed.
SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

/// Flattens scenes into a labeled raw-feature pool. source_ids, when given,
/// receive "scene<id>:p<index>" handles aligned with the pool columns.
ProposalPool pool_from_scenes(const std::vector<Scene>& scenes,
                              std::vector<std::string>* source_ids = nullptr);

// JSONL: one scene per line.
std::string scenes_to_jsonl(const std::vector<Scene>& scenes);
std::vector<Scene> scenes_from_jsonl(const std::vector<std::string>& lines);

std::vector<GtBox> gt_boxes(const std::vector<Scene>& scenes);

}  // namespace izsd
