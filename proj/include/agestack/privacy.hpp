#ifndef AGESTACK_PRIVACY_HPP
#define AGESTACK_PRIVACY_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "agestack/stacking.hpp"

namespace agestack {

// Multiclass dataset-of-origin probe: how well can a linear classifier
// recover which site a row came from, using either plain region means or
// each site's own out-of-sample level-0 age predictions as features?

// One-vs-rest L2 logistic regression on standardized features. Each class
// score minimizes mean log-loss + ||w||^2 / (2 C n); the intercept is not
// penalized.
struct OvrLogisticModel {
    StandardizerParams standardizer;
    std::vector<std::string> classes;  // ascending label order
    Eigen::MatrixXd weights;           // n_classes x kept feature count
    Eigen::VectorXd intercepts;        // n_classes
    double c_value = 1.0;
};

// Full-batch gradient descent with backtracking line search, run to
// gradient norm < 1e-6 or 5000 iterations. Deterministic; the seed is
// accepted for interface stability but the zero initialization needs no
// randomness.
OvrLogisticModel fit_ovr_logistic(const Eigen::MatrixXd& X,
                                  const std::vector<std::string>& labels, double c_value,
                                  std::uint64_t seed);

// Per-class linear scores; argmax with ties resolved toward the
// lexicographically smallest class label.
Eigen::MatrixXd decision_scores(const OvrLogisticModel& model, const Eigen::MatrixXd& X);
std::vector<std::string> predict_labels(const OvrLogisticModel& model, const Eigen::MatrixXd& X);

// Mean over true classes of per-class recall.
double balanced_accuracy(const std::vector<std::string>& true_labels,
                         const std::vector<std::string>& pred_labels);

enum class FeatureSpace { region_mean, l0_oos };

std::string feature_space_name(FeatureSpace fs);
FeatureSpace feature_space_from_name(const std::string& name);

struct PrivacyReport {
    FeatureSpace feature_space = FeatureSpace::region_mean;
    std::vector<std::string> classes;  // site labels, ascending
    Eigen::MatrixXi confusion;         // rows = true site, accumulated over outer folds
    double balanced_acc = 0.0;         // mean of the confusion's diagonal recalls
    std::vector<double> chosen_c;      // winning C per outer fold
    std::uint64_t seed = 0;
};

inline const std::vector<double>& default_c_grid() {
    static const std::vector<double> grid = {0.01, 0.1, 1.0, 10.0};
    return grid;
}

// Nested stratified cross-validation: outer folds stratified by site; the
// inner loop picks C from the grid by pooled balanced accuracy (ties go to
// the earliest grid entry, i.e. the smallest C for the ascending default
// grid). l0_oos features are each site's own K-fold OOS prediction matrix,
// computed before pooling, so no cross-site model ever touches them.
PrivacyReport privacy_probe(const std::vector<SubjectTable>& tables,
                            const Parcellation& parcellation, FeatureSpace feature_space,
                            const std::vector<double>& grid_c, int k_outer, int k_inner,
                            std::uint64_t seed, int k_l0 = 3, const TuneGrid& grid = TuneGrid{},
                            int jobs = 1, FitCache* cache = nullptr);

}  // namespace agestack

#endif
