#include "agestack/cli_io.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "agestack/errors.hpp"
#include "agestack/numio.hpp"
#include "agestack/version.hpp"

namespace fs = std::filesystem;

namespace agestack {

namespace {

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw config_error("cannot read file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string trim(std::string_view s) {
    const char* ws = " \t\r\n";
    const auto begin = s.find_first_not_of(ws);
    if (begin == std::string_view::npos) return "";
    const auto end = s.find_last_not_of(ws);
    return std::string(s.substr(begin, end - begin + 1));
}

std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= value.size()) {
        const std::size_t comma = value.find(',', start);
        const std::string item =
            trim(value.substr(start, comma == std::string::npos ? comma : comma - start));
        if (!item.empty()) out.push_back(item);
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

double kv_double(const std::string& key, const std::string& value) {
    double out = 0.0;
    if (!parse_double(value, out))
        throw config_error("config key " + key + ": not a number: " + value);
    return out;
}

long long kv_int(const std::string& key, const std::string& value) {
    long long out = 0;
    if (!parse_int(value, out))
        throw config_error("config key " + key + ": not an integer: " + value);
    return out;
}

std::uint64_t kv_uint64(const std::string& key, const std::string& value) {
    std::uint64_t out = 0;
    if (!parse_uint64(value, out))
        throw config_error("config key " + key + ": not a non-negative integer: " + value);
    return out;
}

bool kv_bool(const std::string& key, const std::string& value) {
    if (value == "true") return true;
    if (value == "false") return false;
    throw config_error("config key " + key + ": expected true or false, got " + value);
}

struct KvEntry {
    std::string key;
    std::string value;
};

std::vector<KvEntry> parse_kv(const std::string& text, const std::string& path) {
    std::vector<KvEntry> out;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t nl = text.find('\n', start);
        const std::string line =
            trim(text.substr(start, nl == std::string::npos ? nl : nl - start));
        ++line_no;
        if (!line.empty() && line.front() != '#') {
            const std::size_t eq = line.find('=');
            if (eq == std::string::npos)
                throw config_error(path + " line " + std::to_string(line_no) +
                                   ": expected key = value");
            KvEntry e;
            e.key = trim(line.substr(0, eq));
            e.value = trim(line.substr(eq + 1));
            if (e.key.empty())
                throw config_error(path + " line " + std::to_string(line_no) + ": empty key");
            out.push_back(std::move(e));
        }
        if (nl == std::string::npos) break;
        start = nl + 1;
    }
    return out;
}

bool looks_like_json(const std::string& path, const std::string& text) {
    if (path.size() >= 5 && path.substr(path.size() - 5) == ".json") return true;
    const std::string t = trim(text);
    return !t.empty() && t.front() == '{';
}

nlohmann::json parse_json_object(const std::string& text, const std::string& path) {
    nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        throw config_error(path + ": not a valid JSON object");
    return j;
}

void reject_unknown_json_keys(const nlohmann::json& j, const std::set<std::string>& known,
                              const std::string& path) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (known.count(it.key()) == 0)
            throw config_error(path + ": unknown config key " + it.key());
}

double json_number(const nlohmann::json& v, const std::string& key) {
    if (!v.is_number()) throw config_error("config key " + key + ": expected a number");
    return v.get<double>();
}

int json_int(const nlohmann::json& v, const std::string& key) {
    if (!v.is_number_integer()) throw config_error("config key " + key + ": expected an integer");
    return v.get<int>();
}

std::vector<std::string> expand_setups(const std::vector<std::string>& names) {
    std::vector<std::string> out;
    for (const std::string& name : names) {
        if (name == "all") {
            out.insert(out.end(), all_setup_names().begin(), all_setup_names().end());
            continue;
        }
        try {
            setup_from_name(name);
        } catch (const invalid_input_error& e) {
            throw config_error(std::string("config key setups: ") + e.what());
        }
        out.push_back(name);
    }
    if (out.empty()) throw config_error("config key setups: empty setup list");
    return out;
}

// Tracks files written by one command so a failure can remove them all.
class OutputTracker {
  public:
    void write(const fs::path& path, const std::string& content) {
        if (path.has_parent_path()) fs::create_directories(path.parent_path());
        std::ofstream out(path, std::ios::binary);
        if (!out) throw config_error("cannot write file: " + path.string());
        out << content;
        out.close();
        if (!out) throw config_error("failed writing file: " + path.string());
        written_.push_back(path);
    }

    // Registers a file some other writer produced, so discard_all covers it.
    void track(const fs::path& path) { written_.push_back(path); }

    void discard_all() noexcept {
        for (const fs::path& p : written_) {
            std::error_code ec;
            fs::remove(p, ec);
        }
        written_.clear();
    }

  private:
    std::vector<fs::path> written_;
};

nlohmann::json optional_json(const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::string optional_csv(const std::optional<double>& v) {
    return v ? format_double(*v) : std::string();
}

nlohmann::json inputs_json(const RunInputs& inputs) {
    nlohmann::json files = nlohmann::json::array();
    for (const InputFileRecord& f : inputs.feature_files)
        files.push_back({{"path", f.path}, {"digest", f.digest}});
    return {{"config", {{"path", inputs.config_path}, {"digest", inputs.config_digest}}},
            {"feature_files", files},
            {"parcellation",
             {{"path", inputs.parcellation.path}, {"digest", inputs.parcellation.digest}}}};
}

nlohmann::json report_header(const std::string& kind, std::uint64_t seed,
                             const RunInputs& inputs) {
    return {{"schema_version", kSchemaVersion},
            {"tool_version", kVersion},
            {"kind", kind},
            {"seed", seed},
            {"inputs", inputs_json(inputs)}};
}

nlohmann::json vector_json(const Eigen::VectorXd& v) {
    nlohmann::json out = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
    return out;
}

nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
    nlohmann::json out = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        out.push_back(std::move(row));
    }
    return out;
}

Eigen::VectorXd vector_from_json(const nlohmann::json& j, const std::string& what) {
    if (!j.is_array()) throw parse_error(what + ": expected an array");
    Eigen::VectorXd out(static_cast<Eigen::Index>(j.size()));
    Eigen::Index i = 0;
    for (const auto& v : j) {
        if (!v.is_number()) throw parse_error(what + ": expected numbers");
        out[i++] = v.get<double>();
    }
    return out;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, const std::string& what) {
    if (!j.is_array()) throw parse_error(what + ": expected an array of rows");
    const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
    Eigen::Index cols = -1;
    Eigen::MatrixXd out;
    Eigen::Index i = 0;
    for (const auto& row : j) {
        const Eigen::VectorXd r = vector_from_json(row, what);
        if (cols < 0) {
            cols = r.size();
            out.resize(rows, cols);
        } else if (r.size() != cols) {
            throw parse_error(what + ": ragged rows");
        }
        out.row(i++) = r.transpose();
    }
    if (rows == 0) out.resize(0, 0);
    return out;
}

nlohmann::json linear_model_json(const LinearModel& m) {
    nlohmann::json mask = nlohmann::json::array();
    for (std::uint8_t kept : m.standardizer.kept_mask) mask.push_back(kept != 0);
    return {{"kept_mask", mask},
            {"means", vector_json(m.standardizer.means)},
            {"sds", vector_json(m.standardizer.sds)},
            {"y_mean", m.standardizer.y_mean},
            {"coefficients", vector_json(m.coefficients)},
            {"intercept", m.intercept},
            {"alpha", m.hyper.alpha},
            {"lambda", m.hyper.lambda},
            {"objective", m.objective_value},
            {"converged", m.converged}};
}

LinearModel linear_model_from_json(const nlohmann::json& j) {
    LinearModel m;
    for (const auto& kept : j.at("kept_mask"))
        m.standardizer.kept_mask.push_back(kept.get<bool>() ? 1 : 0);
    m.standardizer.means = vector_from_json(j.at("means"), "model means");
    m.standardizer.sds = vector_from_json(j.at("sds"), "model sds");
    m.standardizer.y_mean = j.at("y_mean").get<double>();
    m.coefficients = vector_from_json(j.at("coefficients"), "model coefficients");
    m.intercept = j.at("intercept").get<double>();
    m.hyper.alpha = j.at("alpha").get<double>();
    m.hyper.lambda = j.at("lambda").get<double>();
    m.objective_value = j.at("objective").get<double>();
    m.converged = j.at("converged").get<bool>();
    return m;
}

// Shared by every evaluating command: config + CLI merge, input loading.
struct LoadedExperiment {
    ExperimentConfig config;
    RunInputs inputs;
    std::vector<SubjectTable> tables;
    Parcellation parcellation;
    StackingConfig stacking;
    fs::path out_dir;
};

LoadedExperiment load_experiment(const CliOptions& options) {
    LoadedExperiment exp;
    exp.config = load_experiment_config(options.config_path);
    exp.config.seed = options.seed;
    if (!options.out_dir.empty()) exp.config.out_dir = options.out_dir;
    exp.config.jobs = options.jobs;
    validate_experiment_config(exp.config);
    if (exp.config.out_dir.empty())
        throw config_error("no output directory: set out_dir in the config or pass --out");

    exp.inputs = collect_run_inputs(options.config_path, exp.config);
    for (const std::string& path : exp.config.feature_files)
        exp.tables.push_back(load_features(path));
    exp.parcellation = load_parcellation(exp.config.parcellation_file);
    exp.stacking.k_l0 = exp.config.k_l0;
    exp.stacking.grid = exp.config.grid;
    exp.stacking.jobs = exp.config.jobs;
    exp.out_dir = exp.config.out_dir;
    return exp;
}

std::vector<SetupSpec> config_setups(const ExperimentConfig& config) {
    std::vector<SetupSpec> out;
    for (const std::string& name : config.setups) out.push_back(setup_from_name(name));
    return out;
}

std::string json_bytes(const nlohmann::json& j) { return j.dump(2) + "\n"; }

void write_eval_outputs(OutputTracker& tracker, const fs::path& out_dir,
                        const std::string& kind, const EvalReport& report,
                        const RunInputs& inputs) {
    tracker.write(out_dir / (kind + "_report.json"),
                  json_bytes(eval_report_json(report, kind, inputs)));
    tracker.write(out_dir / (kind + "_report.csv"), eval_report_csv(report));
}

void save_bundles_for(OutputTracker& tracker, const fs::path& out_dir,
                      const LoadedExperiment& exp, const std::vector<SetupSpec>& setups,
                      FitCache& cache) {
    std::vector<const SubjectTable*> sorted;
    for (const SubjectTable& t : exp.tables) sorted.push_back(&t);
    std::sort(sorted.begin(), sorted.end(),
              [](const SubjectTable* a, const SubjectTable* b) { return a->site() < b->site(); });

    for (const SetupSpec& setup : setups) {
        if (!setup_is_bundleable(setup)) continue;
        for (std::size_t t = 0; t < sorted.size(); ++t) {
            std::vector<SubjectTable> train;
            for (std::size_t i = 0; i < sorted.size(); ++i)
                if (i != t) train.push_back(*sorted[i]);

            ModelBundle bundle;
            bundle.model = train_stacked(setup, train, exp.parcellation, exp.stacking,
                                         exp.config.seed, &cache);
            bundle.test_site = sorted[t]->site();
            bundle.seed = exp.config.seed;
            bundle.config_digest = exp.inputs.config_digest;
            bundle.parcellation_digest = parcellation_digest(exp.parcellation).hex();

            const Eigen::Index n_smoke = std::min<Eigen::Index>(5, sorted[t]->n());
            SubjectTable smoke;
            smoke.features = sorted[t]->features.topRows(n_smoke);
            smoke.ages = sorted[t]->ages.head(n_smoke);
            for (Eigen::Index i = 0; i < n_smoke; ++i) {
                smoke.subject_ids.push_back(sorted[t]->subject_ids[static_cast<std::size_t>(i)]);
                smoke.sites.push_back(sorted[t]->sites[static_cast<std::size_t>(i)]);
            }
            bundle.smoke_features = smoke.features;
            bundle.smoke_predictions = predict_stacked(bundle.model, smoke);

            const fs::path path =
                out_dir / "bundles" / (setup.name + "__" + bundle.test_site + ".json");
            if (path.has_parent_path()) fs::create_directories(path.parent_path());
            save_bundle(path.string(), bundle);
            tracker.track(path);
        }
    }
}

std::string resolve_feature_space(const CliOptions& options, const ExperimentConfig& config) {
    const std::string raw =
        options.feature_space.empty() ? config.privacy_feature_space : options.feature_space;
    if (raw == "gmv" || raw == "region_mean") return "region_mean";
    if (raw == "l0" || raw == "l0_oos") return "l0_oos";
    throw config_error("unknown feature space: " + raw +
                       " (expected gmv, region_mean, l0, or l0_oos)");
}

}  // namespace

ExperimentConfig load_experiment_config(const std::string& path) {
    const std::string text = read_text_file(path);
    ExperimentConfig config;
    bool saw_alphas = false;

    if (looks_like_json(path, text)) {
        const nlohmann::json j = parse_json_object(text, path);
        reject_unknown_json_keys(
            j,
            {"feature_files", "parcellation", "setups", "k_l0", "inner_folds", "n_lambda",
             "lambda_min_ratio", "alphas", "out_dir", "save_bundles", "privacy_k_outer",
             "privacy_k_inner", "c_grid", "privacy_feature_space", "seed"},
            path);
        if (j.contains("feature_files"))
            for (const auto& f : j.at("feature_files"))
                config.feature_files.push_back(f.get<std::string>());
        if (j.contains("parcellation"))
            config.parcellation_file = j.at("parcellation").get<std::string>();
        if (j.contains("setups")) {
            std::vector<std::string> names;
            if (j.at("setups").is_string()) {
                names.push_back(j.at("setups").get<std::string>());
            } else {
                for (const auto& s : j.at("setups")) names.push_back(s.get<std::string>());
            }
            config.setups = expand_setups(names);
        }
        if (j.contains("k_l0")) config.k_l0 = json_int(j.at("k_l0"), "k_l0");
        if (j.contains("inner_folds"))
            config.grid.inner_folds = json_int(j.at("inner_folds"), "inner_folds");
        if (j.contains("n_lambda")) config.grid.n_lambda = json_int(j.at("n_lambda"), "n_lambda");
        if (j.contains("lambda_min_ratio"))
            config.grid.lambda_min_ratio =
                json_number(j.at("lambda_min_ratio"), "lambda_min_ratio");
        if (j.contains("alphas")) {
            config.grid.alphas.clear();
            for (const auto& a : j.at("alphas"))
                config.grid.alphas.push_back(json_number(a, "alphas"));
            saw_alphas = true;
        }
        if (j.contains("out_dir")) config.out_dir = j.at("out_dir").get<std::string>();
        if (j.contains("save_bundles")) {
            if (!j.at("save_bundles").is_boolean())
                throw config_error("config key save_bundles: expected true or false");
            config.save_bundles = j.at("save_bundles").get<bool>();
        }
        if (j.contains("privacy_k_outer"))
            config.privacy_k_outer = json_int(j.at("privacy_k_outer"), "privacy_k_outer");
        if (j.contains("privacy_k_inner"))
            config.privacy_k_inner = json_int(j.at("privacy_k_inner"), "privacy_k_inner");
        if (j.contains("c_grid")) {
            config.c_grid.clear();
            for (const auto& c : j.at("c_grid"))
                config.c_grid.push_back(json_number(c, "c_grid"));
        }
        if (j.contains("privacy_feature_space"))
            config.privacy_feature_space = j.at("privacy_feature_space").get<std::string>();
        if (j.contains("seed")) {
            if (!j.at("seed").is_number_unsigned())
                throw config_error("config key seed: expected a non-negative integer");
            config.seed = j.at("seed").get<std::uint64_t>();
            config.seed_in_config = true;
        }
    } else {
        for (const KvEntry& e : parse_kv(text, path)) {
            if (e.key == "feature_file") {
                config.feature_files.push_back(e.value);
            } else if (e.key == "parcellation") {
                config.parcellation_file = e.value;
            } else if (e.key == "setups") {
                config.setups = expand_setups(split_list(e.value));
            } else if (e.key == "k_l0") {
                config.k_l0 = static_cast<int>(kv_int(e.key, e.value));
            } else if (e.key == "inner_folds") {
                config.grid.inner_folds = static_cast<int>(kv_int(e.key, e.value));
            } else if (e.key == "n_lambda") {
                config.grid.n_lambda = static_cast<int>(kv_int(e.key, e.value));
            } else if (e.key == "lambda_min_ratio") {
                config.grid.lambda_min_ratio = kv_double(e.key, e.value);
            } else if (e.key == "alphas") {
                config.grid.alphas.clear();
                for (const std::string& a : split_list(e.value))
                    config.grid.alphas.push_back(kv_double(e.key, a));
                saw_alphas = true;
            } else if (e.key == "out_dir") {
                config.out_dir = e.value;
            } else if (e.key == "save_bundles") {
                config.save_bundles = kv_bool(e.key, e.value);
            } else if (e.key == "privacy_k_outer") {
                config.privacy_k_outer = static_cast<int>(kv_int(e.key, e.value));
            } else if (e.key == "privacy_k_inner") {
                config.privacy_k_inner = static_cast<int>(kv_int(e.key, e.value));
            } else if (e.key == "c_grid") {
                config.c_grid.clear();
                for (const std::string& c : split_list(e.value))
                    config.c_grid.push_back(kv_double(e.key, c));
            } else if (e.key == "privacy_feature_space") {
                config.privacy_feature_space = e.value;
            } else if (e.key == "seed") {
                config.seed = kv_uint64(e.key, e.value);
                config.seed_in_config = true;
            } else {
                throw config_error(path + ": unknown config key " + e.key);
            }
        }
    }

    if (saw_alphas && config.grid.alphas.empty())
        throw config_error("config key alphas: empty list");
    return config;
}

void validate_experiment_config(const ExperimentConfig& config) {
    if (config.feature_files.empty())
        throw config_error("config: no feature_file entries");
    if (config.parcellation_file.empty())
        throw config_error("config: missing parcellation path");
    if (config.setups.empty()) throw config_error("config: missing setups");
    for (const std::string& path : config.feature_files)
        if (!fs::exists(path)) throw config_error("config: feature file not found: " + path);
    if (!fs::exists(config.parcellation_file))
        throw config_error("config: parcellation file not found: " + config.parcellation_file);
    if (config.k_l0 < 2) throw config_error("config: k_l0 must be at least 2");
    if (config.grid.inner_folds < 2)
        throw config_error("config: inner_folds must be at least 2");
    if (config.grid.n_lambda < 1) throw config_error("config: n_lambda must be at least 1");
    if (!(config.grid.lambda_min_ratio > 0.0) || config.grid.lambda_min_ratio >= 1.0)
        throw config_error("config: lambda_min_ratio must be in (0, 1)");
    for (double a : config.grid.alphas)
        if (a < 0.0 || a > 1.0) throw config_error("config: alphas must lie in [0, 1]");
    if (config.privacy_k_outer < 2 || config.privacy_k_inner < 2)
        throw config_error("config: privacy fold counts must be at least 2");
    if (config.c_grid.empty()) throw config_error("config: empty c_grid");
    for (double c : config.c_grid)
        if (!(c > 0.0)) throw config_error("config: c_grid values must be positive");
    if (config.privacy_feature_space != "region_mean" &&
        config.privacy_feature_space != "l0_oos" && config.privacy_feature_space != "gmv" &&
        config.privacy_feature_space != "l0")
        throw config_error("config: unknown privacy_feature_space " +
                           config.privacy_feature_space);
}

SynthConfig load_synth_config(const std::string& path) {
    const std::string text = read_text_file(path);
    SynthConfig config;

    auto apply_preset = [&](const std::string& name) {
        if (name != "default_benchmark")
            throw config_error("config key preset: unknown preset " + name);
        config = default_benchmark();
    };

    if (looks_like_json(path, text)) {
        const nlohmann::json j = parse_json_object(text, path);
        reject_unknown_json_keys(
            j,
            {"preset", "n_sites", "n_per_site", "age_ranges", "n_regions", "voxels_per_region",
             "frac_pos", "frac_neg", "frac_null", "loading_sd", "noise_sd", "site_offset_sd",
             "region_signal_scale", "quadratic"},
            path);
        if (j.contains("preset")) apply_preset(j.at("preset").get<std::string>());
        if (j.contains("n_sites")) config.n_sites = json_int(j.at("n_sites"), "n_sites");
        if (j.contains("n_per_site"))
            config.n_per_site = json_int(j.at("n_per_site"), "n_per_site");
        if (j.contains("age_ranges")) {
            config.age_ranges.clear();
            for (const auto& r : j.at("age_ranges")) {
                if (!r.is_array() || r.size() != 2)
                    throw config_error("config key age_ranges: expected [lo, hi] pairs");
                config.age_ranges.emplace_back(json_number(r[0], "age_ranges"),
                                               json_number(r[1], "age_ranges"));
            }
        }
        if (j.contains("n_regions")) config.n_regions = json_int(j.at("n_regions"), "n_regions");
        if (j.contains("voxels_per_region"))
            config.voxels_per_region = json_int(j.at("voxels_per_region"), "voxels_per_region");
        if (j.contains("frac_pos")) config.frac_pos = json_number(j.at("frac_pos"), "frac_pos");
        if (j.contains("frac_neg")) config.frac_neg = json_number(j.at("frac_neg"), "frac_neg");
        if (j.contains("frac_null"))
            config.frac_null = json_number(j.at("frac_null"), "frac_null");
        if (j.contains("loading_sd"))
            config.loading_sd = json_number(j.at("loading_sd"), "loading_sd");
        if (j.contains("noise_sd")) config.noise_sd = json_number(j.at("noise_sd"), "noise_sd");
        if (j.contains("site_offset_sd"))
            config.site_offset_sd = json_number(j.at("site_offset_sd"), "site_offset_sd");
        if (j.contains("region_signal_scale"))
            config.region_signal_scale =
                json_number(j.at("region_signal_scale"), "region_signal_scale");
        if (j.contains("quadratic")) {
            if (!j.at("quadratic").is_boolean())
                throw config_error("config key quadratic: expected true or false");
            config.quadratic = j.at("quadratic").get<bool>();
        }
    } else {
        bool cleared_ranges = false;
        for (const KvEntry& e : parse_kv(text, path)) {
            if (e.key == "preset") {
                apply_preset(e.value);
            } else if (e.key == "n_sites") {
                config.n_sites = static_cast<int>(kv_int(e.key, e.value));
            } else if (e.key == "n_per_site") {
                config.n_per_site = static_cast<int>(kv_int(e.key, e.value));
            } else if (e.key == "age_range") {
                if (!cleared_ranges) config.age_ranges.clear();
                cleared_ranges = true;
                const auto parts = split_list(e.value);
                if (parts.size() != 2)
                    throw config_error("config key age_range: expected lo,hi");
                config.age_ranges.emplace_back(kv_double(e.key, parts[0]),
                                               kv_double(e.key, parts[1]));
            } else if (e.key == "n_regions") {
                config.n_regions = static_cast<int>(kv_int(e.key, e.value));
            } else if (e.key == "voxels_per_region") {
                config.voxels_per_region = static_cast<int>(kv_int(e.key, e.value));
            } else if (e.key == "frac_pos") {
                config.frac_pos = kv_double(e.key, e.value);
            } else if (e.key == "frac_neg") {
                config.frac_neg = kv_double(e.key, e.value);
            } else if (e.key == "frac_null") {
                config.frac_null = kv_double(e.key, e.value);
            } else if (e.key == "loading_sd") {
                config.loading_sd = kv_double(e.key, e.value);
            } else if (e.key == "noise_sd") {
                config.noise_sd = kv_double(e.key, e.value);
            } else if (e.key == "site_offset_sd") {
                config.site_offset_sd = kv_double(e.key, e.value);
            } else if (e.key == "region_signal_scale") {
                config.region_signal_scale = kv_double(e.key, e.value);
            } else if (e.key == "quadratic") {
                config.quadratic = kv_bool(e.key, e.value);
            } else {
                throw config_error(path + ": unknown config key " + e.key);
            }
        }
    }
    return config;
}

Digest128 file_digest(const std::string& path) {
    const std::string bytes = read_text_file(path);
    Hasher h;
    h.str("file");
    h.str(bytes);
    return h.digest();
}

RunInputs collect_run_inputs(const std::string& config_path, const ExperimentConfig& config) {
    RunInputs inputs;
    inputs.config_path = config_path;
    inputs.config_digest = file_digest(config_path).hex();
    for (const std::string& path : config.feature_files)
        inputs.feature_files.push_back({path, file_digest(path).hex()});
    inputs.parcellation = {config.parcellation_file,
                           file_digest(config.parcellation_file).hex()};
    return inputs;
}

nlohmann::json eval_report_json(const EvalReport& report, const std::string& kind,
                                const RunInputs& inputs) {
    nlohmann::json j = report_header(kind, report.seed, inputs);
    j["inputs_digest"] = report.inputs_digest;

    nlohmann::json rows = nlohmann::json::array();
    for (const EvalRow& row : report.rows)
        rows.push_back({{"setup", row.setup},
                        {"test_site", row.test_site},
                        {"train_sites", row.train_sites},
                        {"n", row.metrics.n},
                        {"mae", row.metrics.mae},
                        {"pearson_r", optional_json(row.metrics.pearson_r)},
                        {"r2", optional_json(row.metrics.r2)},
                        {"bias", optional_json(row.metrics.bias)}});
    j["rows"] = std::move(rows);

    nlohmann::json summaries = nlohmann::json::array();
    for (const SetupSummary& s : report.summaries)
        summaries.push_back({{"setup", s.setup},
                             {"train_count", s.train_count},
                             {"n_cells", s.n_cells},
                             {"mean_mae", s.mean_mae},
                             {"mean_pearson_r", optional_json(s.mean_pearson_r)},
                             {"mean_r2", optional_json(s.mean_r2)},
                             {"mean_bias", optional_json(s.mean_bias)}});
    j["summaries"] = std::move(summaries);
    return j;
}

std::string eval_report_csv(const EvalReport& report) {
    std::string out = "setup,test_site,train_sites,n,mae,pearson_r,r2,bias\n";
    for (const EvalRow& row : report.rows) {
        out += row.setup;
        out += ',';
        out += row.test_site;
        out += ',';
        for (std::size_t i = 0; i < row.train_sites.size(); ++i) {
            if (i > 0) out += '+';
            out += row.train_sites[i];
        }
        out += ',';
        out += format_int(row.metrics.n);
        out += ',';
        out += format_double(row.metrics.mae);
        out += ',';
        out += optional_csv(row.metrics.pearson_r);
        out += ',';
        out += optional_csv(row.metrics.r2);
        out += ',';
        out += optional_csv(row.metrics.bias);
        out += '\n';
    }
    return out;
}

nlohmann::json privacy_report_json(const PrivacyReport& report, const RunInputs& inputs) {
    nlohmann::json j = report_header("privacy", report.seed, inputs);
    j["feature_space"] = feature_space_name(report.feature_space);
    j["classes"] = report.classes;
    nlohmann::json confusion = nlohmann::json::array();
    for (Eigen::Index i = 0; i < report.confusion.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index k = 0; k < report.confusion.cols(); ++k)
            row.push_back(report.confusion(i, k));
        confusion.push_back(std::move(row));
    }
    j["confusion"] = std::move(confusion);
    j["balanced_accuracy"] = report.balanced_acc;
    j["chosen_c"] = report.chosen_c;
    return j;
}

std::string confusion_csv(const PrivacyReport& report) {
    std::string out = "true_site";
    for (const std::string& c : report.classes) out += "," + c;
    out += '\n';
    for (Eigen::Index i = 0; i < report.confusion.rows(); ++i) {
        out += report.classes[static_cast<std::size_t>(i)];
        for (Eigen::Index k = 0; k < report.confusion.cols(); ++k)
            out += "," + format_int(report.confusion(i, k));
        out += '\n';
    }
    return out;
}

nlohmann::json region_report_json(const RegionCorrReport& report, const RunInputs& inputs,
                                  int k_l0) {
    nlohmann::json j = report_header("regions", report.seed, inputs);
    j["k_l0"] = k_l0;
    nlohmann::json summaries = nlohmann::json::array();
    for (const RegionCorrSummary& s : report.summaries)
        summaries.push_back({{"site", s.site},
                             {"n_defined_oos", s.n_defined_oos},
                             {"n_defined_mean", s.n_defined_mean},
                             {"mean_abs_corr_oos", s.mean_abs_corr_oos},
                             {"mean_abs_corr_mean", s.mean_abs_corr_mean}});
    j["summaries"] = std::move(summaries);
    return j;
}

std::string region_report_csv(const RegionCorrReport& report) {
    std::string out = "site,region,corr_oos,corr_mean\n";
    for (const RegionCorrRow& row : report.rows) {
        out += row.site;
        out += ',';
        out += format_int(row.region);
        out += ',';
        out += optional_csv(row.corr_oos);
        out += ',';
        out += optional_csv(row.corr_mean);
        out += '\n';
    }
    return out;
}

nlohmann::json ground_truth_json(const GroundTruth& truth, std::uint64_t seed,
                                 const std::string& config_digest) {
    Eigen::VectorXd loadings(static_cast<Eigen::Index>(truth.loadings.size()));
    for (std::size_t i = 0; i < truth.loadings.size(); ++i)
        loadings[static_cast<Eigen::Index>(i)] = truth.loadings[i];
    Eigen::VectorXd scales(static_cast<Eigen::Index>(truth.region_scale.size()));
    for (std::size_t i = 0; i < truth.region_scale.size(); ++i)
        scales[static_cast<Eigen::Index>(i)] = truth.region_scale[i];

    return {{"schema_version", kSchemaVersion},
            {"tool_version", kVersion},
            {"kind", "ground_truth"},
            {"seed", seed},
            {"config_digest", config_digest},
            {"site_labels", truth.site_labels},
            {"loadings", vector_json(loadings)},
            {"region_scale", vector_json(scales)},
            {"site_offsets", matrix_json(truth.site_offsets)}};
}

void save_bundle(const std::string& path, const ModelBundle& bundle) {
    if (!setup_is_bundleable(bundle.model.setup))
        throw config_error("setup " + bundle.model.setup.name +
                           " cannot be bundled: its predictions depend on the test site's rows");

    nlohmann::json banks = nlohmann::json::array();
    for (const L0Bank& bank : bundle.model.banks) {
        nlohmann::json models = nlohmann::json::array();
        for (const LinearModel& m : bank.region_models) models.push_back(linear_model_json(m));
        banks.push_back({{"provenance", bank.provenance}, {"models", std::move(models)}});
    }
    nlohmann::json l1_models = nlohmann::json::array();
    for (const LinearModel& m : bundle.model.l1_models)
        l1_models.push_back(linear_model_json(m));

    const nlohmann::json j = {
        {"schema_version", kSchemaVersion},
        {"tool_version", kVersion},
        {"kind", "model_bundle"},
        {"setup", bundle.model.setup.name},
        {"test_site", bundle.test_site},
        {"seed", bundle.seed},
        {"config_digest", bundle.config_digest},
        {"parcellation_digest", bundle.parcellation_digest},
        {"region_of", bundle.model.parcellation.region_of},
        {"l1_site_order", bundle.model.l1_site_order},
        {"l1_models", std::move(l1_models)},
        {"banks", std::move(banks)},
        {"smoke",
         {{"features", matrix_json(bundle.smoke_features)},
          {"predictions", vector_json(bundle.smoke_predictions)}}}};

    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot write bundle: " + path);
    out << j.dump(2) << '\n';
}

ModelBundle load_bundle(const std::string& path) {
    const std::string text = read_text_file(path);
    nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        throw parse_error("bundle " + path + ": not a JSON object");

    ModelBundle bundle;
    try {
        if (j.at("kind").get<std::string>() != "model_bundle")
            throw parse_error("bundle " + path + ": wrong kind");
        bundle.model.setup = setup_from_name(j.at("setup").get<std::string>());
        bundle.test_site = j.at("test_site").get<std::string>();
        bundle.seed = j.at("seed").get<std::uint64_t>();
        bundle.config_digest = j.at("config_digest").get<std::string>();
        bundle.parcellation_digest = j.at("parcellation_digest").get<std::string>();
        bundle.model.parcellation =
            make_parcellation(j.at("region_of").get<std::vector<int>>());
        for (const auto& s : j.at("l1_site_order"))
            bundle.model.l1_site_order.push_back(s.get<std::string>());
        for (const auto& m : j.at("l1_models"))
            bundle.model.l1_models.push_back(linear_model_from_json(m));
        for (const auto& b : j.at("banks")) {
            L0Bank bank;
            bank.provenance = b.at("provenance").get<std::string>();
            bank.parcellation = bundle.model.parcellation;
            for (const auto& m : b.at("models"))
                bank.region_models.push_back(linear_model_from_json(m));
            bundle.model.banks.push_back(std::move(bank));
        }
        bundle.smoke_features = matrix_from_json(j.at("smoke").at("features"), "smoke features");
        bundle.smoke_predictions =
            vector_from_json(j.at("smoke").at("predictions"), "smoke predictions");
    } catch (const nlohmann::json::exception& e) {
        throw parse_error("bundle " + path + ": " + e.what());
    }

    // Replay the stored smoke rows; a loaded model must reproduce its saved
    // predictions.
    SubjectTable smoke;
    smoke.features = bundle.smoke_features;
    smoke.ages = Eigen::VectorXd::Ones(bundle.smoke_features.rows());
    for (Eigen::Index i = 0; i < bundle.smoke_features.rows(); ++i) {
        smoke.subject_ids.push_back("smoke_" + std::to_string(i));
        smoke.sites.push_back("smoke");
    }
    const Eigen::VectorXd replay = predict_stacked(bundle.model, smoke);
    if (replay.size() != bundle.smoke_predictions.size() ||
        (replay - bundle.smoke_predictions).lpNorm<Eigen::Infinity>() > 1e-10)
        throw validation_error("bundle " + path +
                               ": stored smoke predictions do not replay within 1e-10");
    return bundle;
}

void cmd_synth(const CliOptions& options) {
    const SynthConfig config = load_synth_config(options.config_path);
    if (options.out_dir.empty())
        throw config_error("synth requires an output directory: pass --out");
    const std::string config_digest = file_digest(options.config_path).hex();

    const SynthResult result = generate(config, options.seed);

    OutputTracker tracker;
    try {
        const fs::path out_dir = options.out_dir;
        fs::create_directories(out_dir);

        nlohmann::json outputs = nlohmann::json::array();
        auto record = [&](const fs::path& p) {
            outputs.push_back(
                {{"path", p.filename().string()}, {"digest", file_digest(p.string()).hex()}});
        };

        for (const SubjectTable& table : result.tables) {
            const fs::path p = out_dir / (table.site() + ".csv");
            write_features(table, p.string());
            tracker.track(p);
            record(p);
        }
        const fs::path parc_path = out_dir / "parcellation.csv";
        write_parcellation(result.parcellation, parc_path.string());
        tracker.track(parc_path);
        record(parc_path);

        const fs::path truth_path = out_dir / "ground_truth.json";
        tracker.write(truth_path,
                      json_bytes(ground_truth_json(result.truth, options.seed, config_digest)));
        record(truth_path);

        const nlohmann::json manifest = {
            {"schema_version", kSchemaVersion},
            {"tool_version", kVersion},
            {"kind", "synth_manifest"},
            {"seed", options.seed},
            {"config", {{"path", options.config_path}, {"digest", config_digest}}},
            {"outputs", std::move(outputs)}};
        tracker.write(out_dir / "manifest.json", json_bytes(manifest));
    } catch (...) {
        tracker.discard_all();
        throw;
    }
}

void cmd_run(const CliOptions& options) {
    const LoadedExperiment exp = load_experiment(options);
    const std::vector<SetupSpec> setups = config_setups(exp.config);

    FitCache cache;
    const EvalReport report = loso_evaluate(exp.tables, exp.parcellation, setups, exp.stacking,
                                            exp.config.seed, &cache);

    OutputTracker tracker;
    try {
        write_eval_outputs(tracker, exp.out_dir, "loso", report, exp.inputs);
        if (exp.config.save_bundles)
            save_bundles_for(tracker, exp.out_dir, exp, setups, cache);
    } catch (...) {
        tracker.discard_all();
        throw;
    }
}

void cmd_sweep(const CliOptions& options) {
    const LoadedExperiment exp = load_experiment(options);
    const std::vector<SetupSpec> setups = config_setups(exp.config);

    FitCache cache;
    const EvalReport report = site_count_sweep(exp.tables, exp.parcellation, setups,
                                               exp.stacking, exp.config.seed, &cache);

    OutputTracker tracker;
    try {
        write_eval_outputs(tracker, exp.out_dir, "sweep", report, exp.inputs);
    } catch (...) {
        tracker.discard_all();
        throw;
    }
}

void cmd_privacy(const CliOptions& options) {
    LoadedExperiment exp = load_experiment(options);
    exp.config.privacy_feature_space = resolve_feature_space(options, exp.config);

    const FeatureSpace fs_kind = feature_space_from_name(exp.config.privacy_feature_space);
    FitCache cache;
    const PrivacyReport report =
        privacy_probe(exp.tables, exp.parcellation, fs_kind, exp.config.c_grid,
                      exp.config.privacy_k_outer, exp.config.privacy_k_inner, exp.config.seed,
                      exp.config.k_l0, exp.config.grid, exp.config.jobs, &cache);

    OutputTracker tracker;
    try {
        const std::string name = feature_space_name(report.feature_space);
        tracker.write(exp.out_dir / ("privacy_" + name + ".json"),
                      json_bytes(privacy_report_json(report, exp.inputs)));
        tracker.write(exp.out_dir / ("confusion_" + name + ".csv"), confusion_csv(report));
    } catch (...) {
        tracker.discard_all();
        throw;
    }
}

void cmd_regions(const CliOptions& options) {
    const LoadedExperiment exp = load_experiment(options);

    FitCache cache;
    const RegionCorrReport report =
        region_age_correlations(exp.tables, exp.parcellation, exp.config.k_l0, exp.config.seed,
                                exp.config.grid, exp.config.jobs, &cache);

    OutputTracker tracker;
    try {
        tracker.write(exp.out_dir / "region_correlations.json",
                      json_bytes(region_report_json(report, exp.inputs, exp.config.k_l0)));
        tracker.write(exp.out_dir / "region_correlations.csv", region_report_csv(report));
    } catch (...) {
        tracker.discard_all();
        throw;
    }
}

}  // namespace agestack
