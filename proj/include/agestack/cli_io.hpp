#ifndef AGESTACK_CLI_IO_HPP
#define AGESTACK_CLI_IO_HPP

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "agestack/evaluation.hpp"
#include "agestack/privacy.hpp"
#include "agestack/synthdata.hpp"

namespace agestack {

// Experiment description: which feature tables to load, which setups to
// run, and the tuning/probe knobs. Parsed from a flat key=value file or an
// equivalent JSON object (see docs/config.md).
struct ExperimentConfig {
    std::vector<std::string> feature_files;
    std::string parcellation_file;
    std::vector<std::string> setups;  // validated setup names, "all" pre-expanded
    int k_l0 = 3;
    TuneGrid grid;  // alphas, n_lambda, lambda_min_ratio, inner_folds
    std::string out_dir;
    bool save_bundles = false;

    int privacy_k_outer = 5;
    int privacy_k_inner = 5;
    std::vector<double> c_grid = default_c_grid();
    std::string privacy_feature_space = "region_mean";

    std::uint64_t seed = 0;   // from the command line; config may predeclare
    bool seed_in_config = false;
    int jobs = 1;
};

ExperimentConfig load_experiment_config(const std::string& path);
// Existence of referenced files, valid setup names, sane fold counts.
void validate_experiment_config(const ExperimentConfig& config);

// Synthetic-benchmark description; `preset = default_benchmark` seeds the
// fields from default_benchmark() before explicit keys override them.
SynthConfig load_synth_config(const std::string& path);

Digest128 file_digest(const std::string& path);

// Provenance block embedded in every report: the exact bytes each input
// had when the command ran.
struct InputFileRecord {
    std::string path;
    std::string digest;  // hex
};

struct RunInputs {
    std::string config_path;
    std::string config_digest;
    std::vector<InputFileRecord> feature_files;
    InputFileRecord parcellation;
};

RunInputs collect_run_inputs(const std::string& config_path, const ExperimentConfig& config);

// Report serialization. JSON objects serialize with sorted keys, and CSV
// numbers use shortest round-trip formatting, so identical report values
// always produce identical bytes. Undefined metrics serialize as JSON
// null / empty CSV cells.
nlohmann::json eval_report_json(const EvalReport& report, const std::string& kind,
                                const RunInputs& inputs);
std::string eval_report_csv(const EvalReport& report);

nlohmann::json privacy_report_json(const PrivacyReport& report, const RunInputs& inputs);
std::string confusion_csv(const PrivacyReport& report);

nlohmann::json region_report_json(const RegionCorrReport& report, const RunInputs& inputs,
                                  int k_l0);
std::string region_report_csv(const RegionCorrReport& report);

nlohmann::json ground_truth_json(const GroundTruth& truth, std::uint64_t seed,
                                 const std::string& config_digest);

// Model bundles: a trained stacked model plus enough provenance to verify
// it. Loading always replays the stored smoke rows and requires agreement
// within 1e-10. Only setups whose prediction path depends on nothing but
// the incoming features can be bundled; ext and test-side-OOS setups are
// rejected.
struct ModelBundle {
    StackedModel model;
    std::string test_site;
    std::uint64_t seed = 0;
    std::string config_digest;
    std::string parcellation_digest;
    Eigen::MatrixXd smoke_features;
    Eigen::VectorXd smoke_predictions;
};

void save_bundle(const std::string& path, const ModelBundle& bundle);
ModelBundle load_bundle(const std::string& path);

// Subcommand entry points; all throw on failure (partial outputs already
// cleaned up). The binary maps parse/validation/config errors to exit 2
// and everything else to exit 1.
struct CliOptions {
    std::string config_path;
    std::uint64_t seed = 0;
    std::string out_dir;  // empty: fall back to the config's out_dir
    int jobs = 1;
    std::string feature_space;  // privacy only; empty: config value
};

void cmd_synth(const CliOptions& options);
void cmd_run(const CliOptions& options);
void cmd_sweep(const CliOptions& options);
void cmd_privacy(const CliOptions& options);
void cmd_regions(const CliOptions& options);

}  // namespace agestack

#endif
