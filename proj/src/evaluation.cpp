#include "agestack/evaluation.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "agestack/errors.hpp"

namespace agestack {

namespace {

bool is_constant(const Eigen::VectorXd& v) {
    for (Eigen::Index i = 1; i < v.size(); ++i)
        if (v[i] != v[0]) return false;
    return true;
}

void require_pair(const Eigen::VectorXd& a, const Eigen::VectorXd& b, Eigen::Index min_len,
                  const char* op) {
    if (a.size() != b.size())
        throw invalid_input_error(std::string(op) + ": length mismatch");
    if (a.size() < min_len)
        throw invalid_input_error(std::string(op) + ": too few samples");
}

// The L1 training rows each fit consumed must never include a row it
// predicted, and outside the ext rotation no test row may train any L1.
void check_hygiene(const RunTrace& trace, const SubjectTable& test, bool ext) {
    const std::set<std::string> test_ids(test.subject_ids.begin(), test.subject_ids.end());
    for (const L1FitTrace& fit : trace.l1_fits) {
        const std::set<std::string> train_ids(fit.train_ids.begin(), fit.train_ids.end());
        for (const auto& id : fit.predicted_ids)
            if (train_ids.count(id) != 0)
                throw validation_error("evaluation hygiene: a predicted row was trained on");
        if (!ext)
            for (const auto& id : test_ids)
                if (train_ids.count(id) != 0)
                    throw validation_error(
                        "evaluation hygiene: a test row leaked into level-1 training");
    }
}

Digest128 inputs_digest(const std::vector<const SubjectTable*>& sorted_tables,
                        const Parcellation& parcellation,
                        const std::vector<SetupSpec>& setups, const StackingConfig& cfg) {
    Hasher h;
    h.str("eval_inputs");
    for (const SubjectTable* t : sorted_tables) {
        const Digest128 d = table_digest(*t);
        h.u64(d.lo).u64(d.hi);
    }
    const Digest128 p = parcellation_digest(parcellation);
    h.u64(p.lo).u64(p.hi);
    for (const SetupSpec& s : setups) h.str(s.name);
    h.i64(cfg.k_l0);
    h.f64s(cfg.grid.alphas);
    h.i64(cfg.grid.n_lambda);
    h.f64(cfg.grid.lambda_min_ratio);
    h.i64(cfg.grid.inner_folds);
    return h.digest();
}

std::vector<const SubjectTable*> sites_sorted(const std::vector<SubjectTable>& tables,
                                              std::size_t min_tables, const char* op) {
    if (tables.size() < min_tables)
        throw invalid_input_error(std::string(op) + ": needs at least " +
                                  std::to_string(min_tables) + " site tables");
    std::vector<const SubjectTable*> out;
    out.reserve(tables.size());
    std::set<std::string> labels;
    for (const SubjectTable& t : tables) {
        if (!labels.insert(t.site()).second)
            throw invalid_input_error(std::string(op) + ": duplicate site label " + t.site());
        out.push_back(&t);
    }
    std::sort(out.begin(), out.end(),
              [](const SubjectTable* a, const SubjectTable* b) { return a->site() < b->site(); });
    return out;
}

// All index combinations of the given size, in lexicographic order.
std::vector<std::vector<int>> combinations(int n, int k) {
    std::vector<std::vector<int>> out;
    std::vector<int> idx(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) idx[static_cast<std::size_t>(i)] = i;
    while (true) {
        out.push_back(idx);
        int pos = k - 1;
        while (pos >= 0 && idx[static_cast<std::size_t>(pos)] == n - k + pos) --pos;
        if (pos < 0) break;
        ++idx[static_cast<std::size_t>(pos)];
        for (int i = pos + 1; i < k; ++i)
            idx[static_cast<std::size_t>(i)] = idx[static_cast<std::size_t>(i - 1)] + 1;
    }
    return out;
}

void append_summaries(EvalReport& report) {
    // Group rows by (setup, training-set size), preserving first-seen order.
    std::vector<std::pair<std::string, int>> order;
    std::map<std::pair<std::string, int>, std::vector<const EvalRow*>> groups;
    for (const EvalRow& row : report.rows) {
        const auto key = std::make_pair(row.setup, static_cast<int>(row.train_sites.size()));
        auto [it, fresh] = groups.try_emplace(key);
        if (fresh) order.push_back(key);
        it->second.push_back(&row);
    }
    for (const auto& key : order) {
        const auto& rows = groups[key];
        SetupSummary s;
        s.setup = key.first;
        s.train_count = key.second;
        s.n_cells = static_cast<int>(rows.size());
        double sum_mae = 0.0, sum_r = 0.0, sum_r2 = 0.0, sum_bias = 0.0;
        bool all_r = true, all_r2 = true, all_bias = true;
        for (const EvalRow* row : rows) {
            sum_mae += row->metrics.mae;
            if (row->metrics.pearson_r) sum_r += *row->metrics.pearson_r; else all_r = false;
            if (row->metrics.r2) sum_r2 += *row->metrics.r2; else all_r2 = false;
            if (row->metrics.bias) sum_bias += *row->metrics.bias; else all_bias = false;
        }
        const double n = static_cast<double>(rows.size());
        s.mean_mae = sum_mae / n;
        if (all_r) s.mean_pearson_r = sum_r / n;
        if (all_r2) s.mean_r2 = sum_r2 / n;
        if (all_bias) s.mean_bias = sum_bias / n;
        report.summaries.push_back(std::move(s));
    }
}

EvalReport evaluate_cells(const std::vector<SubjectTable>& tables,
                          const Parcellation& parcellation,
                          const std::vector<SetupSpec>& setups, const StackingConfig& cfg,
                          std::uint64_t seed, FitCache* cache, bool sweep_subsets,
                          const char* op) {
    const auto sorted = sites_sorted(tables, sweep_subsets ? 3 : 2, op);
    const int S = static_cast<int>(sorted.size());

    FitCache local_cache;
    FitCache& c = cache != nullptr ? *cache : local_cache;

    EvalReport report;
    report.seed = seed;
    report.inputs_digest = inputs_digest(sorted, parcellation, setups, cfg).hex();

    for (const SetupSpec& setup : setups) {
        for (int t = 0; t < S; ++t) {
            const SubjectTable& test = *sorted[t];
            std::vector<const SubjectTable*> remaining;
            for (int i = 0; i < S; ++i)
                if (i != t) remaining.push_back(sorted[i]);

            std::vector<std::vector<int>> combos;
            if (sweep_subsets) {
                for (int k = 1; k < S; ++k)
                    for (auto& combo : combinations(S - 1, k)) combos.push_back(std::move(combo));
            } else {
                std::vector<int> all(static_cast<std::size_t>(S - 1));
                for (int i = 0; i < S - 1; ++i) all[static_cast<std::size_t>(i)] = i;
                combos.push_back(std::move(all));
            }

            for (const auto& combo : combos) {
                std::vector<SubjectTable> train;
                EvalRow row;
                row.setup = setup.name;
                row.test_site = test.site();
                for (int i : combo) {
                    train.push_back(*remaining[static_cast<std::size_t>(i)]);
                    row.train_sites.push_back(remaining[static_cast<std::size_t>(i)]->site());
                }
                RunTrace trace;
                const Eigen::VectorXd pred =
                    run_setup(setup, train, test, parcellation, cfg, seed, &c, &trace);
                check_hygiene(trace, test, setup.ext);
                row.metrics = compute_metrics(test.ages, pred);
                report.rows.push_back(std::move(row));
            }
        }
    }
    append_summaries(report);
    return report;
}

}  // namespace

double mae(const Eigen::VectorXd& y, const Eigen::VectorXd& yhat) {
    require_pair(y, yhat, 1, "mae");
    return (y - yhat).cwiseAbs().mean();
}

std::optional<double> pearson_r(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    require_pair(a, b, 2, "pearson_r");
    if (is_constant(a) || is_constant(b)) return std::nullopt;
    const Eigen::VectorXd ac = a.array() - a.mean();
    const Eigen::VectorXd bc = b.array() - b.mean();
    const double denom = std::sqrt(ac.squaredNorm() * bc.squaredNorm());
    if (denom == 0.0) return std::nullopt;
    return std::clamp(ac.dot(bc) / denom, -1.0, 1.0);
}

std::optional<double> r_squared(const Eigen::VectorXd& y, const Eigen::VectorXd& yhat) {
    require_pair(y, yhat, 2, "r_squared");
    if (is_constant(y)) return std::nullopt;
    const double ss_tot = (y.array() - y.mean()).matrix().squaredNorm();
    if (ss_tot == 0.0) return std::nullopt;
    return 1.0 - (y - yhat).squaredNorm() / ss_tot;
}

std::optional<double> bias_corr(const Eigen::VectorXd& y, const Eigen::VectorXd& yhat) {
    require_pair(y, yhat, 2, "bias_corr");
    return pearson_r(y, y - yhat);
}

MetricSet compute_metrics(const Eigen::VectorXd& y, const Eigen::VectorXd& yhat) {
    MetricSet m;
    m.mae = mae(y, yhat);
    m.n = static_cast<int>(y.size());
    if (y.size() >= 2) {
        m.pearson_r = pearson_r(y, yhat);
        m.r2 = r_squared(y, yhat);
        m.bias = bias_corr(y, yhat);
    }
    return m;
}

EvalReport loso_evaluate(const std::vector<SubjectTable>& tables,
                         const Parcellation& parcellation,
                         const std::vector<SetupSpec>& setups, const StackingConfig& cfg,
                         std::uint64_t seed, FitCache* cache) {
    return evaluate_cells(tables, parcellation, setups, cfg, seed, cache, false,
                          "loso_evaluate");
}

EvalReport site_count_sweep(const std::vector<SubjectTable>& tables,
                            const Parcellation& parcellation,
                            const std::vector<SetupSpec>& setups, const StackingConfig& cfg,
                            std::uint64_t seed, FitCache* cache) {
    return evaluate_cells(tables, parcellation, setups, cfg, seed, cache, true,
                          "site_count_sweep");
}

RegionCorrReport region_age_correlations(const std::vector<SubjectTable>& tables,
                                         const Parcellation& parcellation, int K,
                                         std::uint64_t seed, const TuneGrid& grid, int jobs,
                                         FitCache* cache) {
    const auto sorted = sites_sorted(tables, 1, "region_age_correlations");

    FitCache local_cache;
    FitCache& c = cache != nullptr ? *cache : local_cache;

    RegionCorrReport report;
    report.seed = seed;
    for (const SubjectTable* t : sorted) {
        const TrainedL0& trained = train_l0_bank_cached(*t, parcellation, K, seed, grid, jobs, c);
        const Eigen::MatrixXd means = region_means(*t, parcellation);

        RegionCorrSummary summary;
        summary.site = t->site();
        for (int r = 0; r < parcellation.n_regions; ++r) {
            RegionCorrRow row;
            row.site = t->site();
            row.region = r;
            row.corr_oos = pearson_r(t->ages, trained.oos.values.col(r));
            row.corr_mean = pearson_r(t->ages, means.col(r));
            if (row.corr_oos) {
                summary.mean_abs_corr_oos += std::abs(*row.corr_oos);
                ++summary.n_defined_oos;
            }
            if (row.corr_mean) {
                summary.mean_abs_corr_mean += std::abs(*row.corr_mean);
                ++summary.n_defined_mean;
            }
            report.rows.push_back(std::move(row));
        }
        if (summary.n_defined_oos > 0) summary.mean_abs_corr_oos /= summary.n_defined_oos;
        if (summary.n_defined_mean > 0) summary.mean_abs_corr_mean /= summary.n_defined_mean;
        report.summaries.push_back(std::move(summary));
    }
    return report;
}

}  // namespace agestack
