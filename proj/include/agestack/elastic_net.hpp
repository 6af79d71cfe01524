#ifndef AGESTACK_ELASTIC_NET_HPP
#define AGESTACK_ELASTIC_NET_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <vector>

namespace agestack {

// Elastic-net linear regression by cyclic coordinate descent, the single
// learner used at both stacking levels. Objective on the standardized
// problem:
//
//   (1/2n)||y_c - Z b||^2 + lambda * (alpha*||b||_1 + (1-alpha)/2*||b||^2)
//
// Columns of Z have mean 0 and denominator-n standard deviation 1, y_c is
// centered, so the intercept is simply mean(y).

struct StandardizerParams {
    std::vector<std::uint8_t> kept_mask;  // over original feature columns
    Eigen::VectorXd means;                // over kept columns
    Eigen::VectorXd sds;                  // over kept columns, all > 0
    double y_mean = 0.0;

    int kept_count() const { return static_cast<int>(means.size()); }
    int input_width() const { return static_cast<int>(kept_mask.size()); }
};

struct HyperParams {
    double alpha = 1.0;   // L1 mixing, in [0, 1]
    double lambda = 0.0;  // penalty strength, >= 0
};

struct LinearModel {
    StandardizerParams standardizer;
    Eigen::VectorXd coefficients;  // standardized scale, over kept columns
    double intercept = 0.0;
    HyperParams hyper;
    double objective_value = 0.0;
    bool converged = true;
};

struct TuneGrid {
    std::vector<double> alphas = {0.0, 0.25, 0.5, 0.75, 1.0};
    int n_lambda = 20;
    double lambda_min_ratio = 0.001;
    int inner_folds = 5;
};

// Keeps alpha=0 paths finite.
inline constexpr double kAlphaFloor = 0.001;

// Stop a sweep cycle once the largest coefficient change falls below this
// and the KKT residual is within kKktTol.
inline constexpr double kCoefTol = 1e-7;
inline constexpr double kKktTol = 1e-7;
inline constexpr int kMaxSweeps = 1000;

// True for columns whose denominator-n variance exceeds
// 1e-10 * (1 + mean^2). Requires n >= 2.
std::vector<std::uint8_t> nzv_mask(const Eigen::MatrixXd& X);

// Means and denominator-n standard deviations of the kept columns plus
// mean(y). Throws empty_feature_error when the mask keeps nothing.
StandardizerParams standardize_fit(const Eigen::MatrixXd& X,
                                   const std::vector<std::uint8_t>& mask,
                                   const Eigen::VectorXd& y);

// Maps kept columns to (x - mean) / sd; drops masked-out columns.
Eigen::MatrixXd standardize_apply(const Eigen::MatrixXd& X, const StandardizerParams& params);

inline double soft_threshold(double z, double gamma) {
    if (z > gamma) return z - gamma;
    if (z < -gamma) return z + gamma;
    return 0.0;
}

struct LambdaGrid {
    std::vector<double> values;  // strictly decreasing
    bool degenerate_target = false;
};

// Log-spaced path from lambda_max = max_j |Z_j . y_c| / (n * max(alpha,
// kAlphaFloor)) down to lambda_max * lambda_min_ratio. A centered target
// that is identically zero yields the single value 0 with the degenerate
// flag set.
LambdaGrid lambda_grid(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y_centered, double alpha,
                       int n_lambda, double lambda_min_ratio);

struct CdResult {
    Eigen::VectorXd beta;
    double objective = 0.0;
    bool converged = true;
    int sweeps = 0;
};

// Coordinate descent on the standardized problem. warm, when given, must
// have Z's column count. objective_trace, when given, receives the
// objective after every full sweep (used by monotonicity tests).
CdResult cd_solve(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y_centered, double alpha,
                  double lambda, const Eigen::VectorXd* warm = nullptr,
                  std::vector<double>* objective_trace = nullptr);

// Warm-started fits along a descending lambda sequence.
struct PathResult {
    std::vector<Eigen::VectorXd> betas;  // one per lambda
    bool all_converged = true;
};

PathResult cd_path(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y_centered, double alpha,
                   const std::vector<double>& lambdas);

// Largest stationarity violation of beta for the objective above: active
// coordinates must satisfy (1/n)z_j'r - lambda*(1-alpha)*beta_j =
// lambda*alpha*sign(beta_j), inactive ones the matching inequality.
double kkt_violation(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y_centered,
                     const Eigen::VectorXd& beta, double alpha, double lambda);

double elastic_net_objective(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y_centered,
                             const Eigen::VectorXd& beta, double alpha, double lambda);

// NZV filter, standardization, coordinate descent, in that order. A fit
// whose filter keeps no column degrades to the intercept-only model.
// warm_start, when given, lives on the standardized kept-column scale of
// this X (same mask as a cold fit computes).
LinearModel fit_elastic_net(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, HyperParams hyper,
                            const Eigen::VectorXd* warm_start = nullptr);

// intercept + standardize_apply(X) . coefficients.
Eigen::VectorXd predict(const LinearModel& model, const Eigen::MatrixXd& X);

// Exhaustive grid search: per alpha, a lambda path on the full data, inner
// K-fold CV with warm-started path fits, mean per-fold MSE as the score.
// Ties within 1e-12 prefer larger lambda, then larger alpha. The winner is
// refit on all rows. Fold assignment is derived from seed alone, so equal
// inputs give bit-equal models. Inner fold count is reduced to
// max(2, min(n, grid.inner_folds)) for tiny inputs.
LinearModel tune_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const TuneGrid& grid,
                     std::uint64_t seed);

}  // namespace agestack

#endif
