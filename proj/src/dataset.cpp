#include "izsd/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "izsd/errors.hpp"
#include "izsd/io.hpp"
#include "izsd/semantic.hpp"

namespace izsd {

using json = nlohmann::json;

void SyntheticSpec::validate() const {
    if (num_classes < 2) throw ConfigError("synthetic spec: need at least 2 classes");
    if (semantic_dim < 2 || visual_dim < 2 || raw_dim < 2) {
        throw ConfigError("synthetic spec: dimensions must be >= 2");
    }
    if (semantic_dim > raw_dim) {
        throw ConfigError("synthetic spec: raw dim must be >= semantic dim");
    }
    if (scenes_per_class < 1 || test_scenes_per_class < 1 || proposals_per_scene < 1 ||
        objects_per_scene < 1) {
        throw ConfigError("synthetic spec: counts must be >= 1");
    }
    if (!(bg_fraction >= 0.0 && bg_fraction < 1.0)) {
        throw ConfigError("synthetic spec: bg fraction must lie in [0,1)");
    }
    if (!(noise_sigma >= 0.0)) throw ConfigError("synthetic spec: noise sigma must be >= 0");
    if (!(tail_fraction >= 0.0 && tail_fraction < 1.0) || !(tail_scale >= 1.0)) {
        throw ConfigError("synthetic spec: tail fraction in [0,1), tail scale >= 1");
    }
}

namespace {

// Orthonormal rows via Gram-Schmidt on Gaussian draws; rows x cols, rows <= cols.
Eigen::MatrixXd random_row_orthonormal(int rows, int cols, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::MatrixXd m(rows, cols);
    for (int i = 0; i < rows; ++i) {
        Eigen::VectorXd v(cols);
        for (int j = 0; j < cols; ++j) v[j] = gauss(rng);
        for (int k = 0; k < i; ++k) v -= m.row(k).dot(v) * m.row(k).transpose();
        m.row(i) = v.transpose() / v.norm();
    }
    return m;
}

// Ground-truth boxes sit in the left band of the image, background boxes in
// the right band, so a background proposal never overlaps an object.
Box random_box(std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> pos(lo, hi - 20.0);
    std::uniform_real_distribution<double> size(8.0, 18.0);
    const double x1 = pos(rng), y1 = pos(rng);
    return Box{x1, y1, x1 + size(rng), y1 + size(rng)};
}

Box jittered(const Box& b, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> shift(-0.08, 0.08);
    const double w = b.x2 - b.x1, h = b.y2 - b.y1;
    const double dx = shift(rng) * w, dy = shift(rng) * h;
    return Box{b.x1 + dx, b.y1 + dy, b.x2 + dx, b.y2 + dy};
}

Scene make_scene(int scene_id, int class_id, const Eigen::MatrixXd& centers,
                 const Eigen::VectorXd& bg_center, const SyntheticSpec& spec,
                 std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    auto noise_scale = [&](double base) {
        return unif(rng) < spec.tail_fraction ? base * spec.tail_scale : base;
    };
    Scene scene;
    scene.scene_id = scene_id;
    for (int o = 0; o < spec.objects_per_scene; ++o) {
        scene.ground_truth.push_back(GtObject{random_box(rng, 0.0, 45.0), class_id});
    }
    const int n_bg = static_cast<int>(std::lround(spec.bg_fraction * spec.proposals_per_scene));
    const int n_fg = spec.proposals_per_scene - n_bg;
    for (int i = 0; i < n_fg; ++i) {
        const GtObject& target =
            scene.ground_truth[static_cast<std::size_t>(i % spec.objects_per_scene)];
        Proposal p;
        p.box = jittered(target.box, rng);
        p.label = class_id;
        p.raw_feature = centers.row(class_id - 1).transpose();
        const double scale = noise_scale(spec.noise_sigma);
        for (int k = 0; k < spec.raw_dim; ++k) p.raw_feature[k] += scale * gauss(rng);
        scene.proposals.push_back(std::move(p));
    }
    for (int i = 0; i < n_bg; ++i) {
        Proposal p;
        p.box = random_box(rng, 55.0, 100.0);
        p.label = 0;
        p.raw_feature = bg_center;
        const double scale = noise_scale(1.5 * spec.noise_sigma);
        for (int k = 0; k < spec.raw_dim; ++k) p.raw_feature[k] += scale * gauss(rng);
        scene.proposals.push_back(std::move(p));
    }
    return scene;
}

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
    SyntheticSpec local = spec;
    SyntheticDataset data;
    if (!local.embedding_file.empty()) {
        embeddings_from_csv(io::read_lines(local.embedding_file), data.class_embeddings,
                            data.class_names);
        for (Eigen::Index i = 0; i < data.class_embeddings.rows(); ++i) {
            const double norm = data.class_embeddings.row(i).norm();
            if (!(norm > 0.0)) throw DataError("embedding file: zero row " + std::to_string(i));
            data.class_embeddings.row(i) /= norm;
        }
        local.num_classes = static_cast<int>(data.class_embeddings.rows());
        local.semantic_dim = static_cast<int>(data.class_embeddings.cols());
        local.raw_dim = std::max(local.raw_dim, local.semantic_dim);
    }
    local.validate();
    std::mt19937_64 rng(local.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    data.visual_dim = local.visual_dim;
    if (local.embedding_file.empty()) {
        data.class_embeddings.resize(local.num_classes, local.semantic_dim);
        for (int j = 0; j < local.num_classes; ++j) {
            Eigen::VectorXd e(local.semantic_dim);
            for (int k = 0; k < local.semantic_dim; ++k) e[k] = gauss(rng);
            data.class_embeddings.row(j) = e.transpose() / e.norm();
            std::ostringstream name;
            name << "class_" << (j < 9 ? "0" : "") << (j + 1);
            data.class_names.push_back(name.str());
        }
    }
    const SyntheticSpec& cfg = local;

    // Hidden map: semantic -> raw via the transpose of a row-orthonormal
    // matrix, an isometry on the embedding span.
    const Eigen::MatrixXd hidden = random_row_orthonormal(cfg.semantic_dim, cfg.raw_dim, rng);
    const Eigen::MatrixXd centers = data.class_embeddings * hidden;  // C x r
    const Eigen::VectorXd mean_embedding =
        l2_normalized(data.class_embeddings.colwise().mean().transpose());
    const Eigen::VectorXd bg_center = hidden.transpose() * mean_embedding;

    int scene_id = 0;
    for (int j = 1; j <= cfg.num_classes; ++j) {
        for (int s = 0; s < cfg.scenes_per_class; ++s) {
            data.train.scenes.push_back(make_scene(scene_id++, j, centers, bg_center, cfg, rng));
        }
    }
    for (int j = 1; j <= cfg.num_classes; ++j) {
        for (int s = 0; s < cfg.test_scenes_per_class; ++s) {
            data.test.scenes.push_back(make_scene(scene_id++, j, centers, bg_center, cfg, rng));
        }
    }

    std::vector<double> within;
    for (const auto& scene : data.train.scenes) {
        for (const auto& p : scene.proposals) {
            if (p.label == 0) continue;
            within.push_back((p.raw_feature - centers.row(p.label - 1).transpose()).norm());
        }
    }
    std::sort(within.begin(), within.end());
    data.stats.within_p95 =
        within.empty() ? 0.0 : within[static_cast<std::size_t>(0.95 * (within.size() - 1))];
    double sum = 0.0;
    int pairs = 0;
    for (int a = 0; a < cfg.num_classes; ++a) {
        for (int b = a + 1; b < cfg.num_classes; ++b) {
            sum += (centers.row(a) - centers.row(b)).norm();
            ++pairs;
        }
    }
    data.stats.between_mean = pairs > 0 ? sum / pairs : 0.0;
    return data;
}

ProposalPool pool_from_scenes(const std::vector<Scene>& scenes,
                              std::vector<std::string>* source_ids) {
    ProposalPool pool;
    std::size_t total = 0;
    for (const auto& s : scenes) total += s.proposals.size();
    if (total == 0) return pool;
    const Eigen::Index dim = scenes.front().proposals.front().raw_feature.size();
    pool.raw_features.resize(dim, static_cast<Eigen::Index>(total));
    pool.labels.reserve(total);
    if (source_ids) source_ids->reserve(total);
    for (const auto& scene : scenes) {
        for (std::size_t i = 0; i < scene.proposals.size(); ++i) {
            const auto& p = scene.proposals[i];
            if (p.raw_feature.size() != dim) {
                throw DimensionError("pool_from_scenes: mixed raw dimensions");
            }
            pool.raw_features.col(static_cast<Eigen::Index>(pool.labels.size())) = p.raw_feature;
            pool.labels.push_back(p.label);
            if (source_ids) {
                source_ids->push_back("scene" + std::to_string(scene.scene_id) + ":p" +
                                      std::to_string(i));
            }
        }
    }
    return pool;
}

namespace {

json box_to_json(const Box& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

Box box_from_json(const json& j) {
    if (!j.is_array() || j.size() != 4) throw DataError("scene JSONL: box needs 4 numbers");
    return Box{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

}  // namespace

std::string scenes_to_jsonl(const std::vector<Scene>& scenes) {
    std::ostringstream out;
    for (const auto& scene : scenes) {
        json j;
        j["scene_id"] = scene.scene_id;
        json props = json::array();
        for (const auto& p : scene.proposals) {
            json pj;
            pj["box"] = box_to_json(p.box);
            pj["raw_feature"] = std::vector<double>(
                p.raw_feature.data(), p.raw_feature.data() + p.raw_feature.size());
            pj["label"] = p.label;
            props.push_back(std::move(pj));
        }
        j["proposals"] = std::move(props);
        json gts = json::array();
        for (const auto& g : scene.ground_truth) {
            json gj;
            gj["box"] = box_to_json(g.box);
            gj["label"] = g.label;
            gts.push_back(std::move(gj));
        }
        j["ground_truth"] = std::move(gts);
        out << j.dump() << '\n';
    }
    return out.str();
}

std::vector<Scene> scenes_from_jsonl(const std::vector<std::string>& lines) {
    std::vector<Scene> scenes;
    for (const auto& line : lines) {
        if (line.empty()) continue;
        try {
            const json j = json::parse(line);
            Scene scene;
            scene.scene_id = j.at("scene_id").get<int>();
            for (const auto& pj : j.at("proposals")) {
                Proposal p;
                p.box = box_from_json(pj.at("box"));
                const auto values = pj.at("raw_feature").get<std::vector<double>>();
                p.raw_feature = Eigen::Map<const Eigen::VectorXd>(
                    values.data(), static_cast<Eigen::Index>(values.size()));
                p.label = pj.at("label").get<int>();
                scene.proposals.push_back(std::move(p));
            }
            for (const auto& gj : j.at("ground_truth")) {
                scene.ground_truth.push_back(GtObject{box_from_json(gj.at("box")),
                                                      gj.at("label").get<int>()});
            }
            scenes.push_back(std::move(scene));
        } catch (const json::exception& e) {
            throw DataError(std::string("scene JSONL: ") + e.what());
        }
    }
    return scenes;
}

std::vector<GtBox> gt_boxes(const std::vector<Scene>& scenes) {
    std::vector<GtBox> boxes;
    for (const auto& scene : scenes) {
        for (const auto& g : scene.ground_truth) {
            boxes.push_back(GtBox{scene.scene_id, g.box, g.label});
        }
    }
    return boxes;
}

}  // namespace izsd
