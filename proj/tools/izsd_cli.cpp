// Command-line surface for batch use: synthetic data generation, incremental
// protocol runs, standalone GPD fitting and Q-Q diagnostics, and detection
// evaluation. Exit codes: 0 ok, 2 usage/config, 3 data/fit error, 4 internal.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <nlohmann/json.hpp>

#include "izsd/config.hpp"
#include "izsd/dataset.hpp"
#include "izsd/errors.hpp"
#include "izsd/ever.hpp"
#include "izsd/eval.hpp"
#include "izsd/gpd.hpp"
#include "izsd/io.hpp"
#include "izsd/protocol.hpp"
#include "izsd/semantic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct GlobalFlags {
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string config;
    std::string out_dir;
};

void require_file(const std::string& path, const char* what) {
    if (path.empty()) {
        throw izsd::ConfigError(std::string("missing required path for ") + what);
    }
    if (!fs::exists(path)) {
        throw izsd::ConfigError(std::string(what) + " file does not exist: " + path);
    }
}

std::vector<double> read_distance_column(const std::string& path) {
    require_file(path, "distances");
    std::vector<double> values;
    const auto lines = izsd::io::read_lines(path);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        try {
            values.push_back(izsd::io::parse_double(lines[i]));
        } catch (const izsd::DataError&) {
            if (i == 0) continue;  // tolerate a header line
            throw;
        }
    }
    if (values.empty()) throw izsd::DataError("distances CSV has no numeric rows: " + path);
    return values;
}

struct FittedTail {
    izsd::ExceedanceSample sample;
    izsd::GpdParams params;
};

FittedTail fit_distance_file(const std::string& path, double eta) {
    const std::vector<double> distances = read_distance_column(path);
    FittedTail fitted;
    fitted.sample = izsd::select_threshold(distances, eta);
    fitted.params = izsd::fit_gpd_mle(fitted.sample);
    return fitted;
}

int cmd_generate(const GlobalFlags& flags, const izsd::SyntheticSpec& spec, int groups) {
    const fs::path out = flags.out_dir.empty() ? "." : flags.out_dir;
    izsd::SyntheticSpec local = spec;
    if (flags.seed_set) local.seed = flags.seed;
    const izsd::SyntheticDataset data = izsd::generate_synthetic(local);
    const int num_classes = static_cast<int>(data.class_names.size());
    const izsd::ClassSplit split = izsd::even_split(num_classes, groups);

    izsd::io::write_file_atomic(out / "train.jsonl", izsd::scenes_to_jsonl(data.train.scenes));
    izsd::io::write_file_atomic(out / "test.jsonl", izsd::scenes_to_jsonl(data.test.scenes));
    izsd::io::write_file_atomic(out / "embeddings.csv",
                                izsd::embeddings_to_csv(data.class_embeddings, data.class_names));
    izsd::io::write_file_atomic(out / "split.json", izsd::split_to_json(split));

    std::size_t train_props = 0, test_props = 0;
    for (const auto& s : data.train.scenes) train_props += s.proposals.size();
    for (const auto& s : data.test.scenes) test_props += s.proposals.size();
    std::cout << "classes=" << num_classes << " groups=" << groups
              << " train_scenes=" << data.train.scenes.size()
              << " test_scenes=" << data.test.scenes.size()
              << " train_proposals=" << train_props << " test_proposals=" << test_props << '\n';
    std::cout << "within_p95=" << izsd::io::format_double(data.stats.within_p95)
              << " between_mean=" << izsd::io::format_double(data.stats.between_mean) << '\n';
    return 0;
}

int cmd_run(const GlobalFlags& flags) {
    if (flags.config.empty()) throw izsd::ConfigError("run: --config is required");
    require_file(flags.config, "config");
    izsd::RunConfig cfg = izsd::load_run_config(flags.config);
    if (flags.seed_set) cfg.train.seed = flags.seed;
    if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;

    require_file(cfg.dataset_train, "dataset_train");
    require_file(cfg.dataset_test, "dataset_test");
    require_file(cfg.embeddings, "embeddings");
    require_file(cfg.split, "split");

    izsd::SyntheticDataset data;
    data.train.scenes = izsd::scenes_from_jsonl(izsd::io::read_lines(cfg.dataset_train));
    data.test.scenes = izsd::scenes_from_jsonl(izsd::io::read_lines(cfg.dataset_test));
    izsd::embeddings_from_csv(izsd::io::read_lines(cfg.embeddings), data.class_embeddings,
                              data.class_names);
    if (data.train.scenes.empty() || data.train.scenes.front().proposals.empty()) {
        throw izsd::DataError("run: training dataset has no proposals");
    }
    data.visual_dim = cfg.train.visual_dim;
    const izsd::ClassSplit split = izsd::split_from_json(izsd::io::read_file(cfg.split));
    const izsd::SemanticTable table =
        izsd::build_table(data.class_embeddings, data.class_names);

    const fs::path out = cfg.out_dir;
    auto observer = [&](int step, const izsd::StepState& state, const izsd::StepReport&) {
        izsd::save_checkpoint(state.model,
                              out / ("checkpoint_step" + std::to_string(step) + ".ckpt"));
        izsd::io::write_file_atomic(out / ("bank_step" + std::to_string(step) + ".json"),
                                    izsd::bank_to_json(state.bank));
        izsd::io::write_file_atomic(out / ("memory_step" + std::to_string(step) + ".jsonl"),
                                    izsd::memory_to_jsonl(state.memory));
    };
    const izsd::ProtocolRun run =
        izsd::run_protocol(split, data, table, cfg.hp, cfg.train, observer);
    izsd::io::write_file_atomic(out / "report.csv", izsd::reports_to_csv(run.reports));

    for (const auto& r : run.reports) {
        std::cout << "step " << r.step << ": map=" << izsd::io::format_double(r.map_all)
                  << " seen=" << izsd::io::format_double(r.map_seen);
        if (r.has_unseen) std::cout << " unseen=" << izsd::io::format_double(r.map_unseen);
        std::cout << '\n';
    }
    return 0;
}

int cmd_fit_gpd(const GlobalFlags& flags, const std::string& distances_path, double eta) {
    const FittedTail fitted = fit_distance_file(distances_path, eta);
    const fs::path out = flags.out_dir.empty() ? "." : flags.out_dir;

    json j;
    j["u"] = fitted.sample.threshold_u;
    j["sigma"] = fitted.params.sigma;
    j["xi"] = fitted.params.xi;
    j["n_excess"] = fitted.sample.excesses.size();
    j["source_count"] = fitted.sample.source_count;
    izsd::io::write_file_atomic(out / "gpd_params.json", j.dump(2) + "\n");
    izsd::io::write_file_atomic(out / "qq.csv",
                                izsd::qq_points_csv(izsd::qq_points(fitted.sample, fitted.params)));

    std::cout << "u=" << izsd::io::format_double(fitted.sample.threshold_u)
              << " sigma=" << izsd::io::format_double(fitted.params.sigma)
              << " xi=" << izsd::io::format_double(fitted.params.xi)
              << " n_excess=" << fitted.sample.excesses.size() << '\n';
    return 0;
}

int cmd_qq(const GlobalFlags& flags, const std::string& distances_path, double eta,
           const std::string& out_file) {
    const FittedTail fitted = fit_distance_file(distances_path, eta);
    const fs::path out_dir = flags.out_dir.empty() ? "." : flags.out_dir;
    const fs::path target = out_file.empty() ? out_dir / "qq.csv" : fs::path(out_file);
    izsd::io::write_file_atomic(target,
                                izsd::qq_points_csv(izsd::qq_points(fitted.sample, fitted.params)));
    std::cout << "wrote " << target.string() << " (" << fitted.sample.excesses.size()
              << " points)\n";
    return 0;
}

int cmd_eval(const GlobalFlags& flags, const std::string& detections_path,
             const std::string& gt_path, const std::string& mode) {
    require_file(detections_path, "detections");
    require_file(gt_path, "ground-truth");
    const auto detections = izsd::detections_from_csv(izsd::io::read_lines(detections_path));
    const auto scenes = izsd::scenes_from_jsonl(izsd::io::read_lines(gt_path));
    const auto gts = izsd::gt_boxes(scenes);
    if (gts.empty()) throw izsd::DataError("eval: ground truth has no boxes");
    const izsd::ApMode ap_mode =
        mode == "all_points" ? izsd::ApMode::AllPoints : izsd::ApMode::Interp11;

    std::vector<int> classes;
    for (const auto& g : gts) classes.push_back(g.class_id);
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());

    std::map<int, double> per_class;
    std::ostringstream csv;
    csv << "class_id,ap\n";
    for (int id : classes) {
        const izsd::ApResult res = izsd::average_precision(detections, gts, id, 0.5, ap_mode);
        per_class[id] = res.ap;
        csv << id << ',' << izsd::io::format_double(res.ap) << '\n';
        std::cout << "class " << id << " ap=" << izsd::io::format_double(res.ap) << '\n';
    }
    const double map = izsd::map_over(classes, per_class);
    csv << "mAP," << izsd::io::format_double(map) << '\n';
    std::cout << "mAP=" << izsd::io::format_double(map) << '\n';

    const fs::path out = flags.out_dir.empty() ? "." : flags.out_dir;
    izsd::io::write_file_atomic(out / "ap.csv", csv.str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Incrementally zero-shot detection toolkit"};
    app.require_subcommand(1);

    GlobalFlags flags;
    app.add_option("--seed", flags.seed, "Override the random seed")
        ->each([&](const std::string&) { flags.seed_set = true; });
    app.add_option("--config", flags.config, "Run configuration file (key=value lines)");
    app.add_option("--out-dir", flags.out_dir, "Output directory");

    auto* generate = app.add_subcommand("generate", "Write a seeded synthetic dataset");
    izsd::SyntheticSpec spec;
    int groups = 4;
    generate->add_option("--classes", spec.num_classes, "Number of classes");
    generate->add_option("--groups", groups, "Number of incremental groups");
    generate->add_option("--d", spec.semantic_dim, "Semantic embedding dimension");
    generate->add_option("--v", spec.visual_dim, "Visual feature dimension");
    generate->add_option("--r", spec.raw_dim, "Raw feature dimension");
    generate->add_option("--scenes-per-class", spec.scenes_per_class, "Training scenes per class");
    generate->add_option("--test-scenes-per-class", spec.test_scenes_per_class,
                         "Test scenes per class");
    generate->add_option("--proposals-per-scene", spec.proposals_per_scene,
                         "Proposals per scene");
    generate->add_option("--objects-per-scene", spec.objects_per_scene,
                         "Ground-truth objects per scene");
    generate->add_option("--noise-sigma", spec.noise_sigma, "Foreground feature noise");
    generate->add_option("--bg-fraction", spec.bg_fraction, "Background share of proposals");
    generate->add_option("--dataset-seed", spec.seed, "Dataset seed (--seed also works)");
    generate->add_option("--embeddings-file", spec.embedding_file,
                         "Load class embeddings from CSV instead of sampling");

    auto* run = app.add_subcommand("run", "Execute the incremental protocol from a config");

    auto* fit = app.add_subcommand("fit-gpd", "Fit a GPD tail to a distance sample");
    std::string distances_path;
    double eta = 0.2;
    fit->add_option("--distances", distances_path, "Single-column CSV of distances")->required();
    fit->add_option("--eta", eta, "Tail fraction for threshold selection");

    auto* qq = app.add_subcommand("qq", "Write Q-Q diagnostics for a distance sample");
    std::string qq_distances, qq_out;
    double qq_eta = 0.2;
    qq->add_option("--distances", qq_distances, "Single-column CSV of distances")->required();
    qq->add_option("--eta", qq_eta, "Tail fraction for threshold selection");
    qq->add_option("--out", qq_out, "Output CSV path (default <out-dir>/qq.csv)");

    auto* eval = app.add_subcommand("eval", "Score detections against ground truth");
    std::string detections_path, gt_path, mode = "interp11";
    eval->add_option("--detections", detections_path, "Detections CSV")->required();
    eval->add_option("--ground-truth", gt_path, "Ground-truth scenes JSONL")->required();
    eval->add_option("--mode", mode, "AP mode: interp11 or all_points")
        ->check(CLI::IsMember({"interp11", "all_points"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (generate->parsed()) return cmd_generate(flags, spec, groups);
        if (run->parsed()) return cmd_run(flags);
        if (fit->parsed()) return cmd_fit_gpd(flags, distances_path, eta);
        if (qq->parsed()) return cmd_qq(flags, qq_distances, qq_eta, qq_out);
        if (eval->parsed()) return cmd_eval(flags, detections_path, gt_path, mode);
        return 2;
    } catch (const izsd::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const izsd::GpdFitError& e) {
        std::cerr << "fit error: " << e.what() << '\n';
        return 3;
    } catch (const izsd::InsufficientTailError& e) {
        std::cerr << "fit error: " << e.what() << '\n';
        return 3;
    } catch (const izsd::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const izsd::TrainingError& e) {
        std::cerr << "training error: " << e.what() << '\n';
        return 3;
    } catch (const izsd::DomainError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return 4;
    }
}
