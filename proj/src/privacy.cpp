#include "agestack/privacy.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "agestack/errors.hpp"
#include "agestack/rng.hpp"

namespace agestack {

namespace {

constexpr double kGradTol = 1e-6;
constexpr int kMaxIters = 5000;
constexpr double kArmijoC = 1e-4;

std::vector<std::string> sorted_classes(const std::vector<std::string>& labels) {
    std::set<std::string> s(labels.begin(), labels.end());
    return {s.begin(), s.end()};
}

// Numerically stable log(1 + exp(-m)).
double log1p_exp_neg(double m) {
    if (m < 0.0) return -m + std::log1p(std::exp(m));
    return std::log1p(std::exp(-m));
}

double binary_objective(const Eigen::MatrixXd& Z, const Eigen::VectorXd& t,
                        const Eigen::VectorXd& w, double b, double penalty_scale) {
    const Eigen::VectorXd margins = (t.array() * ((Z * w).array() + b)).matrix();
    double loss = 0.0;
    for (Eigen::Index i = 0; i < margins.size(); ++i) loss += log1p_exp_neg(margins[i]);
    return loss / static_cast<double>(Z.rows()) + penalty_scale * w.squaredNorm();
}

// Minimizes the penalized mean log-loss for one class-vs-rest split.
void fit_binary(const Eigen::MatrixXd& Z, const Eigen::VectorXd& t, double penalty_scale,
                Eigen::VectorXd& w, double& b) {
    const double n = static_cast<double>(Z.rows());
    w = Eigen::VectorXd::Zero(Z.cols());
    b = 0.0;
    double obj = binary_objective(Z, t, w, b, penalty_scale);
    double step = 1.0;

    for (int iter = 0; iter < kMaxIters; ++iter) {
        const Eigen::VectorXd margins = (t.array() * ((Z * w).array() + b)).matrix();
        // d/dm log(1+exp(-m)) = -sigma(-m)
        Eigen::VectorXd sig(margins.size());
        for (Eigen::Index i = 0; i < margins.size(); ++i)
            sig[i] = 1.0 / (1.0 + std::exp(margins[i]));
        const Eigen::VectorXd gw =
            (-1.0 / n) * (Z.transpose() * t.cwiseProduct(sig)) + 2.0 * penalty_scale * w;
        const double gb = -t.cwiseProduct(sig).sum() / n;
        const double gnorm_sq = gw.squaredNorm() + gb * gb;
        if (std::sqrt(gnorm_sq) < kGradTol) break;

        step = std::min(step * 2.0, 1e6);
        while (true) {
            const Eigen::VectorXd w_try = w - step * gw;
            const double b_try = b - step * gb;
            const double obj_try = binary_objective(Z, t, w_try, b_try, penalty_scale);
            if (obj_try <= obj - kArmijoC * step * gnorm_sq || step < 1e-16) {
                w = w_try;
                b = b_try;
                obj = obj_try;
                break;
            }
            step *= 0.5;
        }
    }
}

struct PooledFeatures {
    Eigen::MatrixXd X;
    std::vector<std::string> labels;
    std::vector<std::string> classes;
};

// Stratified fold assignment over the given rows: each site's rows are
// shuffled with a label-derived stream and dealt round-robin.
std::vector<int> stratified_folds(const std::vector<int>& rows,
                                  const std::vector<std::string>& labels, int k,
                                  std::uint64_t seed, const char* stream) {
    std::map<std::string, std::vector<int>> by_site;
    for (int row : rows) by_site[labels[static_cast<std::size_t>(row)]].push_back(row);

    std::vector<int> fold_of(labels.size(), -1);
    for (auto& [site, site_rows] : by_site) {
        Rng rng(mix_seed(seed, stream, site));
        rng.shuffle(site_rows);
        for (std::size_t j = 0; j < site_rows.size(); ++j)
            fold_of[static_cast<std::size_t>(site_rows[j])] = static_cast<int>(j % k);
    }
    return fold_of;
}

std::vector<std::string> subset(const std::vector<std::string>& v, const std::vector<int>& rows) {
    std::vector<std::string> out;
    out.reserve(rows.size());
    for (int r : rows) out.push_back(v[static_cast<std::size_t>(r)]);
    return out;
}

Eigen::MatrixXd subset_rows(const Eigen::MatrixXd& X, const std::vector<int>& rows) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), X.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
        out.row(static_cast<Eigen::Index>(i)) = X.row(rows[i]);
    return out;
}

bool fit_preconditions_hold(const std::vector<std::string>& labels) {
    std::map<std::string, int> counts;
    for (const auto& l : labels) ++counts[l];
    if (counts.size() < 2) return false;
    for (const auto& [l, c] : counts)
        if (c < 2) return false;
    return true;
}

}  // namespace

OvrLogisticModel fit_ovr_logistic(const Eigen::MatrixXd& X,
                                  const std::vector<std::string>& labels, double c_value,
                                  std::uint64_t seed) {
    (void)seed;  // zero-initialized deterministic descent
    if (static_cast<std::size_t>(X.rows()) != labels.size())
        throw invalid_input_error("fit_ovr_logistic: row/label count mismatch");
    if (!(c_value > 0.0)) throw invalid_input_error("fit_ovr_logistic: C must be positive");
    if (!fit_preconditions_hold(labels))
        throw invalid_input_error(
            "fit_ovr_logistic: needs at least two classes with two samples each");

    OvrLogisticModel model;
    model.classes = sorted_classes(labels);
    model.c_value = c_value;
    model.standardizer = standardize_fit(X, nzv_mask(X), Eigen::VectorXd::Zero(X.rows()));
    const Eigen::MatrixXd Z = standardize_apply(X, model.standardizer);

    const double n = static_cast<double>(Z.rows());
    const double penalty_scale = 1.0 / (2.0 * c_value * n);
    const int n_classes = static_cast<int>(model.classes.size());
    model.weights.resize(n_classes, Z.cols());
    model.intercepts.resize(n_classes);

    for (int c = 0; c < n_classes; ++c) {
        Eigen::VectorXd t(Z.rows());
        for (Eigen::Index i = 0; i < Z.rows(); ++i)
            t[i] = labels[static_cast<std::size_t>(i)] ==
                           model.classes[static_cast<std::size_t>(c)]
                       ? 1.0
                       : -1.0;
        Eigen::VectorXd w;
        double b = 0.0;
        fit_binary(Z, t, penalty_scale, w, b);
        model.weights.row(c) = w.transpose();
        model.intercepts[c] = b;
    }
    return model;
}

Eigen::MatrixXd decision_scores(const OvrLogisticModel& model, const Eigen::MatrixXd& X) {
    const Eigen::MatrixXd Z = standardize_apply(X, model.standardizer);
    return (Z * model.weights.transpose()).rowwise() + model.intercepts.transpose();
}

std::vector<std::string> predict_labels(const OvrLogisticModel& model, const Eigen::MatrixXd& X) {
    const Eigen::MatrixXd scores = decision_scores(model, X);
    std::vector<std::string> out;
    out.reserve(static_cast<std::size_t>(scores.rows()));
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        int best = 0;
        for (int c = 1; c < static_cast<int>(model.classes.size()); ++c)
            if (scores(i, c) > scores(i, best)) best = c;  // ties keep the smaller label
        out.push_back(model.classes[static_cast<std::size_t>(best)]);
    }
    return out;
}

double balanced_accuracy(const std::vector<std::string>& true_labels,
                         const std::vector<std::string>& pred_labels) {
    if (true_labels.size() != pred_labels.size())
        throw invalid_input_error("balanced_accuracy: length mismatch");
    if (true_labels.empty()) throw invalid_input_error("balanced_accuracy: empty input");

    std::map<std::string, std::pair<int, int>> per_class;  // correct, total
    for (std::size_t i = 0; i < true_labels.size(); ++i) {
        auto& [correct, total] = per_class[true_labels[i]];
        ++total;
        if (pred_labels[i] == true_labels[i]) ++correct;
    }
    double sum = 0.0;
    for (const auto& [label, ct] : per_class)
        sum += static_cast<double>(ct.first) / static_cast<double>(ct.second);
    return sum / static_cast<double>(per_class.size());
}

std::string feature_space_name(FeatureSpace fs) {
    return fs == FeatureSpace::region_mean ? "region_mean" : "l0_oos";
}

FeatureSpace feature_space_from_name(const std::string& name) {
    if (name == "region_mean") return FeatureSpace::region_mean;
    if (name == "l0_oos") return FeatureSpace::l0_oos;
    throw invalid_input_error("unknown feature space: " + name);
}

PrivacyReport privacy_probe(const std::vector<SubjectTable>& tables,
                            const Parcellation& parcellation, FeatureSpace feature_space,
                            const std::vector<double>& grid_c, int k_outer, int k_inner,
                            std::uint64_t seed, int k_l0, const TuneGrid& grid, int jobs,
                            FitCache* cache) {
    if (tables.size() < 2) throw invalid_input_error("privacy_probe: needs at least two sites");
    if (grid_c.empty()) throw invalid_input_error("privacy_probe: empty C grid");
    if (k_outer < 2 || k_inner < 2)
        throw invalid_input_error("privacy_probe: fold counts must be at least 2");

    std::vector<const SubjectTable*> sorted;
    {
        std::set<std::string> labels;
        for (const SubjectTable& t : tables) {
            if (!labels.insert(t.site()).second)
                throw invalid_input_error("privacy_probe: duplicate site label " + t.site());
            if (t.n() < k_outer)
                throw invalid_input_error("privacy_probe: site " + t.site() +
                                          " too small for the outer folds");
            if (feature_space == FeatureSpace::l0_oos && t.n() < k_l0)
                throw invalid_input_error("privacy_probe: site " + t.site() +
                                          " too small for OOS level-0 folds");
            sorted.push_back(&t);
        }
        std::sort(sorted.begin(), sorted.end(), [](const SubjectTable* a, const SubjectTable* b) {
            return a->site() < b->site();
        });
    }

    FitCache local_cache;
    FitCache& c = cache != nullptr ? *cache : local_cache;

    // Per-site feature blocks are computed before pooling; the OOS variant
    // never sees another site's rows.
    PooledFeatures pooled;
    {
        Eigen::Index total = 0;
        for (const SubjectTable* t : sorted) total += t->n();
        pooled.X.resize(total, parcellation.n_regions);
        Eigen::Index row = 0;
        for (const SubjectTable* t : sorted) {
            Eigen::MatrixXd block;
            if (feature_space == FeatureSpace::region_mean) {
                block = region_means(*t, parcellation);
            } else {
                block = train_l0_bank_cached(*t, parcellation, k_l0, seed, grid, jobs, c)
                            .oos.values;
            }
            pooled.X.middleRows(row, t->n()) = block;
            pooled.labels.insert(pooled.labels.end(), static_cast<std::size_t>(t->n()),
                                 t->site());
            pooled.classes.push_back(t->site());
            row += t->n();
        }
    }

    const int n_total = static_cast<int>(pooled.X.rows());
    std::vector<int> all_rows(static_cast<std::size_t>(n_total));
    for (int i = 0; i < n_total; ++i) all_rows[static_cast<std::size_t>(i)] = i;
    const std::vector<int> outer_fold =
        stratified_folds(all_rows, pooled.labels, k_outer, seed, "privacy_outer");

    PrivacyReport report;
    report.feature_space = feature_space;
    report.classes = pooled.classes;
    report.seed = seed;
    const int S = static_cast<int>(pooled.classes.size());
    report.confusion = Eigen::MatrixXi::Zero(S, S);
    std::map<std::string, int> class_index;
    for (int s = 0; s < S; ++s) class_index[pooled.classes[static_cast<std::size_t>(s)]] = s;

    for (int f = 0; f < k_outer; ++f) {
        std::vector<int> train_rows, test_rows;
        for (int i = 0; i < n_total; ++i)
            (outer_fold[static_cast<std::size_t>(i)] == f ? test_rows : train_rows).push_back(i);

        const std::vector<int> inner_fold =
            stratified_folds(train_rows, pooled.labels, k_inner,
                             mix_seed(seed, "privacy_inner", static_cast<std::uint64_t>(f)),
                             "privacy_inner");

        double best_c = grid_c.front();
        double best_score = -1.0;
        for (double c_value : grid_c) {
            std::vector<std::string> inner_true, inner_pred;
            for (int g = 0; g < k_inner; ++g) {
                std::vector<int> fit_rows, val_rows;
                for (int row : train_rows)
                    (inner_fold[static_cast<std::size_t>(row)] == g ? val_rows : fit_rows)
                        .push_back(row);
                const std::vector<std::string> fit_labels = subset(pooled.labels, fit_rows);
                // A fold whose training slice lacks a usable class split is
                // skipped for every C alike.
                if (val_rows.empty() || !fit_preconditions_hold(fit_labels)) continue;
                const OvrLogisticModel m = fit_ovr_logistic(
                    subset_rows(pooled.X, fit_rows), fit_labels, c_value,
                    mix_seed(seed, "privacy_fit", static_cast<std::uint64_t>(f),
                             static_cast<std::uint64_t>(g)));
                const auto pred = predict_labels(m, subset_rows(pooled.X, val_rows));
                const auto truth = subset(pooled.labels, val_rows);
                inner_true.insert(inner_true.end(), truth.begin(), truth.end());
                inner_pred.insert(inner_pred.end(), pred.begin(), pred.end());
            }
            if (inner_true.empty()) continue;
            const double score = balanced_accuracy(inner_true, inner_pred);
            if (score > best_score) {
                best_score = score;
                best_c = c_value;
            }
        }

        const OvrLogisticModel outer_model = fit_ovr_logistic(
            subset_rows(pooled.X, train_rows), subset(pooled.labels, train_rows), best_c,
            mix_seed(seed, "privacy_outer_fit", static_cast<std::uint64_t>(f)));
        const auto pred = predict_labels(outer_model, subset_rows(pooled.X, test_rows));
        for (std::size_t i = 0; i < test_rows.size(); ++i) {
            const int ti = class_index[pooled.labels[static_cast<std::size_t>(test_rows[i])]];
            const int pi = class_index[pred[i]];
            ++report.confusion(ti, pi);
        }
        report.chosen_c.push_back(best_c);
    }

    double recall_sum = 0.0;
    for (int s = 0; s < S; ++s) {
        const double row_total = static_cast<double>(report.confusion.row(s).sum());
        recall_sum += static_cast<double>(report.confusion(s, s)) / row_total;
    }
    report.balanced_acc = recall_sum / static_cast<double>(S);
    return report;
}

}  // namespace agestack
