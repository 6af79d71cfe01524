#include "agestack/elastic_net.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "agestack/errors.hpp"
#include "agestack/rng.hpp"

namespace agestack {

namespace {

constexpr double kNzvScale = 1e-10;
constexpr double kTieTol = 1e-12;

void check_finite(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    if (!X.allFinite() || !y.allFinite())
        throw invalid_input_error("elastic net: non-finite entries in X or y");
}

void check_hyper(HyperParams hyper) {
    if (!(hyper.alpha >= 0.0 && hyper.alpha <= 1.0))
        throw invalid_input_error("elastic net: alpha must lie in [0, 1]");
    if (!(hyper.lambda >= 0.0)) throw invalid_input_error("elastic net: lambda must be >= 0");
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

double kkt_from_residual(const Eigen::MatrixXd& Z, const Eigen::VectorXd& residual,
                         const Eigen::VectorXd& beta, double alpha, double lambda) {
    const double n = static_cast<double>(Z.rows());
    const double gamma = lambda * alpha;
    const double ridge = lambda * (1.0 - alpha);
    double worst = 0.0;
    for (Eigen::Index j = 0; j < Z.cols(); ++j) {
        const double g = Z.col(j).dot(residual) / n - ridge * beta[j];
        const double v = beta[j] != 0.0 ? std::abs(g - gamma * sign(beta[j]))
                                        : std::max(0.0, std::abs(g) - gamma);
        worst = std::max(worst, v);
    }
    return worst;
}

LinearModel intercept_only_model(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                 HyperParams hyper) {
    LinearModel model;
    model.standardizer.kept_mask.assign(static_cast<std::size_t>(X.cols()), 0);
    model.standardizer.y_mean = y.mean();
    model.coefficients.resize(0);
    model.intercept = model.standardizer.y_mean;
    model.hyper = hyper;
    const double n = static_cast<double>(y.size());
    model.objective_value =
        0.5 / n * (y.array() - model.standardizer.y_mean).square().sum();
    model.converged = true;
    return model;
}

}  // namespace

std::vector<std::uint8_t> nzv_mask(const Eigen::MatrixXd& X) {
    const Eigen::Index n = X.rows();
    if (n < 2) throw invalid_input_error("nzv_mask: need at least 2 rows");
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(X.cols()), 0);
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
        const double mean = X.col(j).mean();
        const double var = (X.col(j).array() - mean).square().sum() / static_cast<double>(n);
        mask[static_cast<std::size_t>(j)] = var > kNzvScale * (1.0 + mean * mean) ? 1 : 0;
    }
    return mask;
}

StandardizerParams standardize_fit(const Eigen::MatrixXd& X,
                                   const std::vector<std::uint8_t>& mask,
                                   const Eigen::VectorXd& y) {
    if (static_cast<Eigen::Index>(mask.size()) != X.cols())
        throw shape_error("standardize_fit: mask length does not match column count");
    const Eigen::Index n = X.rows();
    const int kept = static_cast<int>(std::count(mask.begin(), mask.end(), 1));
    if (kept == 0) throw empty_feature_error("standardize_fit: mask keeps no columns");

    StandardizerParams params;
    params.kept_mask = mask;
    params.means.resize(kept);
    params.sds.resize(kept);
    int k = 0;
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
        if (!mask[static_cast<std::size_t>(j)]) continue;
        const double mean = X.col(j).mean();
        const double var = (X.col(j).array() - mean).square().sum() / static_cast<double>(n);
        if (!(var > 0.0))
            throw invalid_input_error("standardize_fit: kept column " + std::to_string(j) +
                                      " has zero variance");
        params.means[k] = mean;
        params.sds[k] = std::sqrt(var);
        ++k;
    }
    params.y_mean = y.mean();
    return params;
}

Eigen::MatrixXd standardize_apply(const Eigen::MatrixXd& X, const StandardizerParams& params) {
    if (X.cols() != params.input_width())
        throw shape_error("standardize_apply: column count does not match standardizer");
    Eigen::MatrixXd Z(X.rows(), params.kept_count());
    int k = 0;
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
        if (!params.kept_mask[static_cast<std::size_t>(j)]) continue;
        Z.col(k) = (X.col(j).array() - params.means[k]) / params.sds[k];
        ++k;
    }
    return Z;
}

LambdaGrid lambda_grid(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y_centered, double alpha,
                       int n_lambda, double lambda_min_ratio) {
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw invalid_input_error("lambda_grid: alpha must lie in [0, 1]");
    if (n_lambda < 2) throw invalid_input_error("lambda_grid: n_lambda must be >= 2");
    if (!(lambda_min_ratio > 0.0 && lambda_min_ratio < 1.0))
        throw invalid_input_error("lambda_grid: lambda_min_ratio must lie in (0, 1)");

    const double n = static_cast<double>(Z.rows());
    double top = 0.0;
    for (Eigen::Index j = 0; j < Z.cols(); ++j)
        top = std::max(top, std::abs(Z.col(j).dot(y_centered)));
    const double lambda_max = top / (n * std::max(alpha, kAlphaFloor));

    LambdaGrid grid;
    if (!(lambda_max > 0.0)) {
        grid.values = {0.0};
        grid.degenerate_target = true;
        return grid;
    }
    grid.values.resize(static_cast<std::size_t>(n_lambda));
    const double step = std::log(lambda_min_ratio) / static_cast<double>(n_lambda - 1);
    for (int i = 0; i < n_lambda; ++i)
        grid.values[static_cast<std::size_t>(i)] = lambda_max * std::exp(step * i);
    return grid;
}

double elastic_net_objective(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y_centered,
                             const Eigen::VectorXd& beta, double alpha, double lambda) {
    const double n = static_cast<double>(Z.rows());
    const double rss = (y_centered - Z * beta).squaredNorm();
    const double l1 = beta.lpNorm<1>();
    const double l2 = beta.squaredNorm();
    return 0.5 / n * rss + lambda * (alpha * l1 + 0.5 * (1.0 - alpha) * l2);
}

double kkt_violation(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y_centered,
                     const Eigen::VectorXd& beta, double alpha, double lambda) {
    const Eigen::VectorXd residual = y_centered - Z * beta;
    return kkt_from_residual(Z, residual, beta, alpha, lambda);
}

CdResult cd_solve(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y_centered, double alpha,
                  double lambda, const Eigen::VectorXd* warm,
                  std::vector<double>* objective_trace) {
    check_hyper({alpha, lambda});
    const Eigen::Index n = Z.rows();
    const Eigen::Index p = Z.cols();
    if (n < 1 || n != y_centered.size())
        throw shape_error("cd_solve: row count mismatch between Z and y");

    CdResult result;
    if (p == 0) {
        result.beta.resize(0);
        result.objective = 0.5 / static_cast<double>(n) * y_centered.squaredNorm();
        return result;
    }

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    if (warm != nullptr) {
        if (warm->size() != p) throw shape_error("cd_solve: warm start has wrong length");
        beta = *warm;
    }

    const double nd = static_cast<double>(n);
    const double gamma = lambda * alpha;
    const double denom = 1.0 + lambda * (1.0 - alpha);
    Eigen::VectorXd residual = y_centered - Z * beta;

    bool converged = false;
    int sweeps = 0;
    while (sweeps < kMaxSweeps) {
        ++sweeps;
        double max_delta = 0.0;
        for (Eigen::Index j = 0; j < p; ++j) {
            const double old = beta[j];
            // (1/n)||z_j||^2 == 1 on the standardized problem.
            const double rho = Z.col(j).dot(residual) / nd + old;
            const double next = soft_threshold(rho, gamma) / denom;
            if (next != old) {
                residual.noalias() -= Z.col(j) * (next - old);
                beta[j] = next;
                max_delta = std::max(max_delta, std::abs(next - old));
            }
        }
        if (objective_trace != nullptr)
            objective_trace->push_back(
                elastic_net_objective(Z, y_centered, beta, alpha, lambda));
        if (max_delta < kCoefTol) {
            // Refresh the residual before certifying; incremental updates drift.
            residual = y_centered - Z * beta;
            if (kkt_from_residual(Z, residual, beta, alpha, lambda) <= kKktTol) {
                converged = true;
                break;
            }
        }
    }

    result.beta = std::move(beta);
    result.objective = elastic_net_objective(Z, y_centered, result.beta, alpha, lambda);
    result.converged = converged;
    result.sweeps = sweeps;
    return result;
}

PathResult cd_path(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y_centered, double alpha,
                   const std::vector<double>& lambdas) {
    PathResult out;
    out.betas.reserve(lambdas.size());
    Eigen::VectorXd warm = Eigen::VectorXd::Zero(Z.cols());
    for (double lambda : lambdas) {
        CdResult res = cd_solve(Z, y_centered, alpha, lambda, &warm);
        warm = res.beta;
        out.all_converged = out.all_converged && res.converged;
        out.betas.push_back(std::move(res.beta));
    }
    return out;
}

LinearModel fit_elastic_net(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, HyperParams hyper,
                            const Eigen::VectorXd* warm_start) {
    if (X.rows() != y.size()) throw shape_error("fit_elastic_net: row count mismatch");
    if (X.rows() < 2) throw invalid_input_error("fit_elastic_net: need at least 2 rows");
    check_finite(X, y);
    check_hyper(hyper);

    const std::vector<std::uint8_t> mask = nzv_mask(X);
    if (std::count(mask.begin(), mask.end(), 1) == 0) {
        LinearModel model = intercept_only_model(X, y, hyper);
        model.standardizer.kept_mask = mask;
        return model;
    }

    LinearModel model;
    model.standardizer = standardize_fit(X, mask, y);
    const Eigen::MatrixXd Z = standardize_apply(X, model.standardizer);
    const Eigen::VectorXd y_centered = y.array() - model.standardizer.y_mean;

    CdResult res = cd_solve(Z, y_centered, hyper.alpha, hyper.lambda, warm_start);
    model.coefficients = std::move(res.beta);
    model.intercept = model.standardizer.y_mean;
    model.hyper = hyper;
    model.objective_value = res.objective;
    model.converged = res.converged;
    return model;
}

Eigen::VectorXd predict(const LinearModel& model, const Eigen::MatrixXd& X) {
    if (X.cols() != model.standardizer.input_width())
        throw shape_error("predict: column count does not match the model");
    if (model.standardizer.kept_count() == 0)
        return Eigen::VectorXd::Constant(X.rows(), model.intercept);
    const Eigen::MatrixXd Z = standardize_apply(X, model.standardizer);
    return (Z * model.coefficients).array() + model.intercept;
}

LinearModel tune_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const TuneGrid& grid,
                     std::uint64_t seed) {
    const Eigen::Index n = X.rows();
    if (n != y.size()) throw shape_error("tune_fit: row count mismatch");
    if (n < 2) throw invalid_input_error("tune_fit: need at least 2 rows");
    check_finite(X, y);
    if (grid.alphas.empty()) throw invalid_input_error("tune_fit: empty alpha grid");
    for (double a : grid.alphas)
        if (!(a >= 0.0 && a <= 1.0))
            throw invalid_input_error("tune_fit: alpha outside [0, 1] in grid");
    if (grid.inner_folds < 2) throw invalid_input_error("tune_fit: inner_folds must be >= 2");

    const int folds =
        std::max(2, std::min(static_cast<int>(n), grid.inner_folds));

    // Shuffled round-robin fold assignment, a pure function of the seed.
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(seed, "tune_cv"));
    rng.shuffle(order);
    std::vector<int> fold_of(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < order.size(); ++i)
        fold_of[static_cast<std::size_t>(order[i])] = static_cast<int>(i) % folds;

    // Lambda paths come from the full data so every fold scores the same
    // candidate pairs.
    const std::vector<std::uint8_t> full_mask = nzv_mask(X);
    const int full_kept = static_cast<int>(std::count(full_mask.begin(), full_mask.end(), 1));
    const std::size_t n_alpha = grid.alphas.size();
    std::vector<std::vector<double>> paths(n_alpha);
    if (full_kept > 0) {
        const StandardizerParams full_std = standardize_fit(X, full_mask, y);
        const Eigen::MatrixXd Z_full = standardize_apply(X, full_std);
        const Eigen::VectorXd y_c_full = y.array() - full_std.y_mean;
        for (std::size_t a = 0; a < n_alpha; ++a)
            paths[a] = lambda_grid(Z_full, y_c_full, grid.alphas[a], grid.n_lambda,
                                   grid.lambda_min_ratio)
                           .values;
    } else {
        for (std::size_t a = 0; a < n_alpha; ++a) paths[a] = {0.0};
    }

    std::vector<std::vector<double>> score(n_alpha);
    for (std::size_t a = 0; a < n_alpha; ++a) score[a].assign(paths[a].size(), 0.0);

    for (int f = 0; f < folds; ++f) {
        std::vector<int> train_rows, test_rows;
        for (Eigen::Index i = 0; i < n; ++i)
            (fold_of[static_cast<std::size_t>(i)] == f ? test_rows : train_rows)
                .push_back(static_cast<int>(i));
        if (test_rows.empty()) continue;

        Eigen::MatrixXd Xtr(train_rows.size(), X.cols());
        Eigen::VectorXd ytr(train_rows.size());
        for (std::size_t i = 0; i < train_rows.size(); ++i) {
            Xtr.row(static_cast<Eigen::Index>(i)) = X.row(train_rows[i]);
            ytr[static_cast<Eigen::Index>(i)] = y[train_rows[i]];
        }
        Eigen::MatrixXd Xte(test_rows.size(), X.cols());
        Eigen::VectorXd yte(test_rows.size());
        for (std::size_t i = 0; i < test_rows.size(); ++i) {
            Xte.row(static_cast<Eigen::Index>(i)) = X.row(test_rows[i]);
            yte[static_cast<Eigen::Index>(i)] = y[test_rows[i]];
        }

        bool fallback = train_rows.size() < 2;
        StandardizerParams std_f;
        Eigen::MatrixXd Z_f, Z_te;
        Eigen::VectorXd y_cf;
        if (!fallback) {
            const std::vector<std::uint8_t> mask_f = nzv_mask(Xtr);
            if (std::count(mask_f.begin(), mask_f.end(), 1) == 0) {
                fallback = true;
            } else {
                std_f = standardize_fit(Xtr, mask_f, ytr);
                Z_f = standardize_apply(Xtr, std_f);
                y_cf = ytr.array() - std_f.y_mean;
                Z_te = standardize_apply(Xte, std_f);
            }
        }

        const double fold_n = static_cast<double>(test_rows.size());
        if (fallback) {
            const double mean = ytr.mean();
            const double mse = (yte.array() - mean).square().sum() / fold_n;
            for (std::size_t a = 0; a < n_alpha; ++a)
                for (double& s : score[a]) s += mse;
            continue;
        }
        for (std::size_t a = 0; a < n_alpha; ++a) {
            const PathResult path = cd_path(Z_f, y_cf, grid.alphas[a], paths[a]);
            for (std::size_t l = 0; l < paths[a].size(); ++l) {
                const Eigen::VectorXd pred =
                    (Z_te * path.betas[l]).array() + std_f.y_mean;
                score[a][l] += (yte - pred).squaredNorm() / fold_n;
            }
        }
    }

    // Mean fold MSE; ties within 1e-12 go to the larger lambda, then the
    // larger alpha. Candidates are visited alpha-ascending, lambda-descending.
    double best_mse = 0.0, best_alpha = 0.0, best_lambda = 0.0;
    bool have_best = false;
    for (std::size_t a = 0; a < n_alpha; ++a) {
        for (std::size_t l = 0; l < paths[a].size(); ++l) {
            const double mse = score[a][l] / static_cast<double>(folds);
            const double lambda = paths[a][l];
            const double alpha = grid.alphas[a];
            bool take = false;
            if (!have_best || mse < best_mse - kTieTol) {
                take = true;
            } else if (mse <= best_mse + kTieTol) {
                if (lambda > best_lambda)
                    take = true;
                else if (lambda == best_lambda && alpha > best_alpha)
                    take = true;
            }
            if (take) {
                have_best = true;
                best_mse = mse;
                best_alpha = alpha;
                best_lambda = lambda;
            }
        }
    }

    return fit_elastic_net(X, y, {best_alpha, best_lambda});
}

}  // namespace agestack
