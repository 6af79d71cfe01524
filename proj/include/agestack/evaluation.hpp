#ifndef AGESTACK_EVALUATION_HPP
#define AGESTACK_EVALUATION_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "agestack/stacking.hpp"

namespace agestack {

// Prediction quality metrics. Metrics that are undefined on degenerate
// inputs (zero variance) come back as nullopt rather than 0 or NaN, so
// downstream averages can never silently absorb a placeholder.

double mae(const Eigen::VectorXd& y, const Eigen::VectorXd& yhat);

// Sample Pearson correlation; nullopt when either vector is constant.
std::optional<double> pearson_r(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

// Coefficient of determination 1 - sum((y-yhat)^2)/sum((y-mean)^2); can be
// negative for predictors worse than the target mean; nullopt when y is
// constant.
std::optional<double> r_squared(const Eigen::VectorXd& y, const Eigen::VectorXd& yhat);

// Correlation between the target and the prediction error y - yhat; the
// classic age-bias diagnostic. nullopt when the errors are constant
// (perfect prediction included).
std::optional<double> bias_corr(const Eigen::VectorXd& y, const Eigen::VectorXd& yhat);

struct MetricSet {
    double mae = 0.0;
    std::optional<double> pearson_r;
    std::optional<double> r2;
    std::optional<double> bias;
    int n = 0;
};

MetricSet compute_metrics(const Eigen::VectorXd& y, const Eigen::VectorXd& yhat);

// One evaluated cell: a setup predicting one held-out site from one
// training-site combination.
struct EvalRow {
    std::string setup;
    std::string test_site;
    std::vector<std::string> train_sites;  // ascending site labels
    MetricSet metrics;
};

// Cross-site unweighted mean per (setup, training-set size). Optional
// entries go undefined as soon as any contributing cell is undefined.
struct SetupSummary {
    std::string setup;
    int train_count = 0;
    int n_cells = 0;
    double mean_mae = 0.0;
    std::optional<double> mean_pearson_r;
    std::optional<double> mean_r2;
    std::optional<double> mean_bias;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    std::vector<SetupSummary> summaries;
    std::uint64_t seed = 0;
    std::string inputs_digest;  // hex digest of tables, parcellation, setups, config
};

// Leave-one-site-out: each site in turn is predicted by models built from
// all the others. Rows are ordered by (setup list order, test site); the
// input table order never matters. A per-call fit cache deduplicates the
// shared level-0 banks across setups unless the caller provides one.
EvalReport loso_evaluate(const std::vector<SubjectTable>& tables,
                         const Parcellation& parcellation,
                         const std::vector<SetupSpec>& setups, const StackingConfig& cfg,
                         std::uint64_t seed, FitCache* cache = nullptr);

// Training-set-size sweep: for each test site, every subset of the
// remaining sites of size 1..S-1 is evaluated. Size-(S-1) rows coincide
// with loso_evaluate's.
EvalReport site_count_sweep(const std::vector<SubjectTable>& tables,
                            const Parcellation& parcellation,
                            const std::vector<SetupSpec>& setups, const StackingConfig& cfg,
                            std::uint64_t seed, FitCache* cache = nullptr);

// Per-dataset, per-region correlation of age with (a) the region's
// out-of-sample level-0 prediction and (b) the plain region mean.
struct RegionCorrRow {
    std::string site;
    int region = 0;
    std::optional<double> corr_oos;
    std::optional<double> corr_mean;
};

// Mean absolute correlations per dataset, over the regions where the
// correlation is defined.
struct RegionCorrSummary {
    std::string site;
    int n_defined_oos = 0;
    int n_defined_mean = 0;
    double mean_abs_corr_oos = 0.0;
    double mean_abs_corr_mean = 0.0;
};

struct RegionCorrReport {
    std::vector<RegionCorrRow> rows;
    std::vector<RegionCorrSummary> summaries;
    std::uint64_t seed = 0;
};

RegionCorrReport region_age_correlations(const std::vector<SubjectTable>& tables,
                                         const Parcellation& parcellation, int K,
                                         std::uint64_t seed, const TuneGrid& grid = TuneGrid{},
                                         int jobs = 1, FitCache* cache = nullptr);

}  // namespace agestack

#endif
