#include "izsd/config.hpp"

#include <sstream>

#include "izsd/errors.hpp"
#include "izsd/io.hpp"

namespace izsd {

namespace {

std::string bool_str(bool v) { return v ? "true" : "false"; }

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true") return true;
    if (value == "false") return false;
    throw ConfigError("config: " + key + " must be true or false, got '" + value + "'");
}

int parse_int(const std::string& key, const std::string& value) {
    try {
        return static_cast<int>(io::parse_long(value));
    } catch (const DataError&) {
        throw ConfigError("config: " + key + " must be an integer, got '" + value + "'");
    }
}

double parse_num(const std::string& key, const std::string& value) {
    try {
        return io::parse_double(value);
    } catch (const DataError&) {
        throw ConfigError("config: " + key + " must be a number, got '" + value + "'");
    }
}

}  // namespace

std::string RunConfig::serialize() const {
    std::ostringstream out;
    out << "dataset_train=" << dataset_train << '\n';
    out << "dataset_test=" << dataset_test << '\n';
    out << "embeddings=" << embeddings << '\n';
    out << "split=" << split << '\n';
    out << "out_dir=" << out_dir << '\n';
    out << "alpha=" << io::format_double(hp.alpha) << '\n';
    out << "beta=" << io::format_double(hp.beta) << '\n';
    out << "gamma=" << io::format_double(hp.gamma) << '\n';
    out << "temperature=" << io::format_double(hp.temperature) << '\n';
    out << "margin=" << io::format_double(hp.margin) << '\n';
    out << "eta=" << io::format_double(hp.eta) << '\n';
    out << "delta=" << io::format_double(hp.delta) << '\n';
    out << "memory_k=" << hp.memory_capacity << '\n';
    out << "visual_dim=" << train.visual_dim << '\n';
    out << "learning_rate=" << io::format_double(train.learning_rate) << '\n';
    out << "lr_decay=" << io::format_double(train.lr_decay) << '\n';
    out << "epochs=" << train.epochs << '\n';
    out << "batch_size=" << train.batch_size << '\n';
    out << "seed=" << train.seed << '\n';
    out << "use_bfmse=" << bool_str(train.use_bfmse) << '\n';
    out << "use_distillation=" << bool_str(train.use_distillation) << '\n';
    out << "use_projection_distance=" << bool_str(train.use_projection_distance) << '\n';
    return out.str();
}

RunConfig parse_run_config(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
        }
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        if (key == "dataset_train") cfg.dataset_train = value;
        else if (key == "dataset_test") cfg.dataset_test = value;
        else if (key == "embeddings") cfg.embeddings = value;
        else if (key == "split") cfg.split = value;
        else if (key == "out_dir") cfg.out_dir = value;
        else if (key == "alpha") cfg.hp.alpha = parse_num(key, value);
        else if (key == "beta") cfg.hp.beta = parse_num(key, value);
        else if (key == "gamma") cfg.hp.gamma = parse_num(key, value);
        else if (key == "temperature") cfg.hp.temperature = parse_num(key, value);
        else if (key == "margin") cfg.hp.margin = parse_num(key, value);
        else if (key == "eta") cfg.hp.eta = parse_num(key, value);
        else if (key == "delta") cfg.hp.delta = parse_num(key, value);
        else if (key == "memory_k") cfg.hp.memory_capacity = parse_int(key, value);
        else if (key == "visual_dim") cfg.train.visual_dim = parse_int(key, value);
        else if (key == "learning_rate") cfg.train.learning_rate = parse_num(key, value);
        else if (key == "lr_decay") cfg.train.lr_decay = parse_num(key, value);
        else if (key == "epochs") cfg.train.epochs = parse_int(key, value);
        else if (key == "batch_size") cfg.train.batch_size = parse_int(key, value);
        else if (key == "seed") cfg.train.seed = static_cast<std::uint64_t>(
                     io::parse_long(value));
        else if (key == "use_bfmse") cfg.train.use_bfmse = parse_bool(key, value);
        else if (key == "use_distillation") cfg.train.use_distillation = parse_bool(key, value);
        else if (key == "use_projection_distance")
            cfg.train.use_projection_distance = parse_bool(key, value);
        else throw ConfigError("config: unknown key '" + key + "'");
    }
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    try {
        return parse_run_config(io::read_file(path));
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }
}

}  // namespace izsd
