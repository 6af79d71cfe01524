#include "agestack/stacking.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "agestack/errors.hpp"
#include "agestack/parallel.hpp"

namespace agestack {

namespace {

Digest128 grid_digest(const TuneGrid& grid) {
    Hasher h;
    h.str("tune_grid");
    h.f64s(grid.alphas);
    h.i64(grid.n_lambda);
    h.f64(grid.lambda_min_ratio);
    h.i64(grid.inner_folds);
    return h.digest();
}

Digest128 features_target_digest(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    Hasher h;
    h.str("l1_data");
    h.i64(X.rows()).i64(X.cols());
    h.f64s(X.data(), static_cast<std::size_t>(X.size()));
    h.f64s(y.data(), static_cast<std::size_t>(y.size()));
    return h.digest();
}

Digest128 l0_cache_key(std::uint64_t seed, const Digest128& table_dig, const Digest128& parc_dig,
                       int K, const TuneGrid& grid) {
    Hasher h;
    h.str("l0_cache");
    h.u64(seed);
    h.u64(table_dig.lo).u64(table_dig.hi);
    h.u64(parc_dig.lo).u64(parc_dig.hi);
    h.i64(K);
    const Digest128 g = grid_digest(grid);
    h.u64(g.lo).u64(g.hi);
    return h.digest();
}

Digest128 l1_cache_key(std::uint64_t seed, const Digest128& data_dig, const TuneGrid& grid) {
    Hasher h;
    h.str("l1_cache");
    h.u64(seed);
    h.u64(data_dig.lo).u64(data_dig.hi);
    const Digest128 g = grid_digest(grid);
    h.u64(g.lo).u64(g.hi);
    return h.digest();
}

std::string provenance_label(const SubjectTable& table) {
    for (const auto& s : table.sites)
        if (s != table.sites.front()) return "pooled";
    return table.sites.empty() ? std::string("pooled") : table.sites.front();
}

OosProvenance provenance_of(const OOSMatrix& oos, std::string source) {
    OosProvenance p;
    p.source = std::move(source);
    p.fold_of = oos.fold_assignment.fold_of;
    p.fold_train_rows = oos.fold_train_rows;
    return p;
}

// Training tables in ascending site-label order, so every per-site loop is
// independent of the caller's list order.
std::vector<const SubjectTable*> sorted_by_site(const std::vector<SubjectTable>& tables) {
    std::vector<const SubjectTable*> out;
    out.reserve(tables.size());
    for (const auto& t : tables) out.push_back(&t);
    std::sort(out.begin(), out.end(),
              [](const SubjectTable* a, const SubjectTable* b) { return a->site() < b->site(); });
    return out;
}

LinearModel train_l1_impl(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::uint64_t seed,
                          const TuneGrid& grid) {
    return tune_fit(X, y, grid, mix_seed(seed, "l1", features_target_digest(X, y)));
}

const LinearModel& train_l1_cached(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                   std::uint64_t seed, const TuneGrid& grid, FitCache& cache) {
    return cache.l1(l1_cache_key(seed, features_target_digest(X, y), grid),
                    [&] { return train_l1_impl(X, y, seed, grid); });
}

void record_l1(RunTrace* trace, std::vector<std::string> train_ids) {
    if (trace == nullptr) return;
    L1FitTrace fit;
    fit.train_ids = std::move(train_ids);
    trace->l1_fits.push_back(std::move(fit));
}

}  // namespace

void assert_oos_integrity(const OOSMatrix& oos) {
    const int k = oos.fold_assignment.k;
    const std::size_t n = oos.fold_assignment.fold_of.size();
    if (static_cast<std::size_t>(oos.values.rows()) != n)
        throw validation_error("oos integrity: row count mismatch");
    if (static_cast<int>(oos.fold_train_rows.size()) != k)
        throw validation_error("oos integrity: missing fold training rows");
    if (!oos.values.allFinite())
        throw validation_error("oos integrity: non-finite prediction");

    std::vector<int> fold_sizes(static_cast<std::size_t>(k), 0);
    for (int f : oos.fold_assignment.fold_of) {
        if (f < 0 || f >= k) throw validation_error("oos integrity: fold id out of range");
        ++fold_sizes[static_cast<std::size_t>(f)];
    }
    for (int f = 0; f < k; ++f) {
        const auto& rows = oos.fold_train_rows[static_cast<std::size_t>(f)];
        if (rows.size() != n - static_cast<std::size_t>(fold_sizes[static_cast<std::size_t>(f)]))
            throw validation_error("oos integrity: fold training set has wrong size");
        std::set<int> seen;
        for (int row : rows) {
            if (row < 0 || static_cast<std::size_t>(row) >= n || !seen.insert(row).second)
                throw validation_error("oos integrity: bad training row");
            if (oos.fold_assignment.fold_of[static_cast<std::size_t>(row)] == f)
                throw validation_error(
                    "oos integrity: a row appears in its own fold's training set");
        }
    }
}

const std::vector<std::string>& all_setup_names() {
    static const std::vector<std::string> names = {
        "GMV_sL1_s",     "GMV_pL1_p",     "GMV_pL1_p_ext", "PredL0_sL1_s", "PredL0_sL1_p",
        "PredL0_pL1_p",  "OOSPred_sL1_s", "OOSPred_sL1_p", "OOSPred_pL1_p"};
    return names;
}

SetupSpec setup_from_name(const std::string& name) {
    SetupSpec s;
    s.name = name;
    if (name == "GMV_sL1_s") {
        s.l0_kind = L0Kind::mean, s.l0_scope = Scope::per_site, s.l1_scope = Scope::per_site;
    } else if (name == "GMV_pL1_p") {
        s.l0_kind = L0Kind::mean, s.l0_scope = Scope::pooled, s.l1_scope = Scope::pooled;
    } else if (name == "GMV_pL1_p_ext") {
        s.l0_kind = L0Kind::mean, s.l0_scope = Scope::pooled, s.l1_scope = Scope::pooled;
        s.ext = true;
    } else if (name == "PredL0_sL1_s") {
        s.l0_kind = L0Kind::model, s.l0_scope = Scope::per_site, s.l1_scope = Scope::per_site;
    } else if (name == "PredL0_sL1_p") {
        s.l0_kind = L0Kind::model, s.l0_scope = Scope::per_site, s.l1_scope = Scope::pooled;
    } else if (name == "PredL0_pL1_p") {
        s.l0_kind = L0Kind::model, s.l0_scope = Scope::pooled, s.l1_scope = Scope::pooled;
    } else if (name == "OOSPred_sL1_s") {
        s.l0_kind = L0Kind::oos_on_test, s.l0_scope = Scope::per_site,
        s.l1_scope = Scope::per_site;
    } else if (name == "OOSPred_sL1_p") {
        s.l0_kind = L0Kind::oos_on_test, s.l0_scope = Scope::per_site, s.l1_scope = Scope::pooled;
    } else if (name == "OOSPred_pL1_p") {
        s.l0_kind = L0Kind::oos_on_test, s.l0_scope = Scope::pooled, s.l1_scope = Scope::pooled;
    } else {
        throw invalid_input_error("unknown setup name: " + name);
    }
    return s;
}

const TrainedL0& FitCache::l0(const Digest128& key, const std::function<TrainedL0()>& make) {
    const std::string k = key.hex();
    auto it = l0_.find(k);
    if (it == l0_.end()) it = l0_.emplace(k, make()).first;
    return it->second;
}

const LinearModel& FitCache::l1(const Digest128& key, const std::function<LinearModel()>& make) {
    const std::string k = key.hex();
    auto it = l1_.find(k);
    if (it == l1_.end()) it = l1_.emplace(k, make()).first;
    return it->second;
}

TrainedL0 train_l0_bank(const SubjectTable& table, const Parcellation& parcellation, int K,
                        std::uint64_t seed, const TuneGrid& grid, int jobs) {
    if (table.width() != parcellation.width())
        throw shape_error("train_l0_bank: table width does not match parcellation");
    const Eigen::Index n = table.n();
    const std::uint64_t bank_seed = mix_seed(seed, "l0_bank", table_digest(table),
                                             parcellation_digest(parcellation),
                                             static_cast<std::uint64_t>(K));

    TrainedL0 out;
    out.oos.fold_assignment = kfold_split(table.ages, K, bank_seed);
    out.oos.fold_train_rows.resize(static_cast<std::size_t>(K));
    for (Eigen::Index i = 0; i < n; ++i) {
        const int f = out.oos.fold_assignment.fold_of[static_cast<std::size_t>(i)];
        for (int g = 0; g < K; ++g)
            if (g != f) out.oos.fold_train_rows[static_cast<std::size_t>(g)].push_back(
                static_cast<int>(i));
    }

    const int R = parcellation.n_regions;
    out.bank.region_models.resize(static_cast<std::size_t>(R));
    out.bank.provenance = provenance_label(table);
    out.bank.parcellation = parcellation;
    out.oos.values.resize(n, R);

    std::vector<std::vector<std::pair<int, int>>> flags(static_cast<std::size_t>(R));

    parallel_for(R, jobs, [&](int r) {
        const Eigen::MatrixXd Xr = region_view(table, parcellation, r);
        for (int f = 0; f < K; ++f) {
            const auto& train_rows = out.oos.fold_train_rows[static_cast<std::size_t>(f)];
            std::vector<int> test_rows;
            for (Eigen::Index i = 0; i < n; ++i)
                if (out.oos.fold_assignment.fold_of[static_cast<std::size_t>(i)] == f)
                    test_rows.push_back(static_cast<int>(i));

            if (train_rows.size() < 2) {
                double mean = 0.0;
                for (int row : train_rows) mean += table.ages[row];
                mean /= static_cast<double>(train_rows.size());
                for (int row : test_rows) out.oos.values(row, r) = mean;
                flags[static_cast<std::size_t>(r)].emplace_back(r, f);
                continue;
            }

            Eigen::MatrixXd Xtr(static_cast<Eigen::Index>(train_rows.size()), Xr.cols());
            Eigen::VectorXd ytr(static_cast<Eigen::Index>(train_rows.size()));
            for (std::size_t i = 0; i < train_rows.size(); ++i) {
                Xtr.row(static_cast<Eigen::Index>(i)) = Xr.row(train_rows[i]);
                ytr[static_cast<Eigen::Index>(i)] = table.ages[train_rows[i]];
            }
            Eigen::MatrixXd Xte(static_cast<Eigen::Index>(test_rows.size()), Xr.cols());
            for (std::size_t i = 0; i < test_rows.size(); ++i)
                Xte.row(static_cast<Eigen::Index>(i)) = Xr.row(test_rows[i]);

            const LinearModel model =
                tune_fit(Xtr, ytr, grid,
                         mix_seed(bank_seed, "region", static_cast<std::uint64_t>(r), "fold",
                                  static_cast<std::uint64_t>(f)));
            const Eigen::VectorXd pred = predict(model, Xte);
            for (std::size_t i = 0; i < test_rows.size(); ++i)
                out.oos.values(test_rows[i], r) = pred[static_cast<Eigen::Index>(i)];
            if (model.standardizer.kept_count() == 0)
                flags[static_cast<std::size_t>(r)].emplace_back(r, f);
        }

        const LinearModel final_model =
            tune_fit(Xr, table.ages, grid,
                     mix_seed(bank_seed, "region", static_cast<std::uint64_t>(r), "final"));
        if (final_model.standardizer.kept_count() == 0)
            flags[static_cast<std::size_t>(r)].emplace_back(r, K);
        out.bank.region_models[static_cast<std::size_t>(r)] = final_model;
    });

    for (const auto& region_flags : flags)
        out.oos.fallback_cells.insert(out.oos.fallback_cells.end(), region_flags.begin(),
                                      region_flags.end());
    assert_oos_integrity(out.oos);
    return out;
}

const TrainedL0& train_l0_bank_cached(const SubjectTable& table, const Parcellation& parcellation,
                                      int K, std::uint64_t seed, const TuneGrid& grid, int jobs,
                                      FitCache& cache) {
    const Digest128 key = l0_cache_key(seed, table_digest(table),
                                       parcellation_digest(parcellation), K, grid);
    return cache.l0(key, [&] { return train_l0_bank(table, parcellation, K, seed, grid, jobs); });
}

Eigen::MatrixXd apply_l0_bank(const L0Bank& bank, const SubjectTable& table) {
    if (table.width() != bank.parcellation.width())
        throw shape_error("apply_l0_bank: table width does not match the bank's parcellation");
    Eigen::MatrixXd out(table.n(), bank.n_regions());
    for (int r = 0; r < bank.n_regions(); ++r)
        out.col(r) = predict(bank.region_models[static_cast<std::size_t>(r)],
                             region_view(table, bank.parcellation, r));
    return out;
}

Eigen::MatrixXd average_banks(const std::vector<Eigen::MatrixXd>& preds) {
    if (preds.empty()) throw invalid_input_error("average_banks: empty prediction list");
    Eigen::MatrixXd out = preds.front();
    for (std::size_t i = 1; i < preds.size(); ++i) {
        if (preds[i].rows() != out.rows() || preds[i].cols() != out.cols())
            throw shape_error("average_banks: prediction shapes disagree");
        out += preds[i];
    }
    return out / static_cast<double>(preds.size());
}

LinearModel train_l1(const Eigen::MatrixXd& l0_features, const Eigen::VectorXd& ages,
                     std::uint64_t seed, const TuneGrid& grid) {
    return train_l1_impl(l0_features, ages, seed, grid);
}

OOSMatrix oos_l0_on_site(const SubjectTable& table, const Parcellation& parcellation, int K,
                         std::uint64_t seed, const TuneGrid& grid, int jobs) {
    return train_l0_bank(table, parcellation, K, seed, grid, jobs).oos;
}

bool setup_is_bundleable(const SetupSpec& setup) {
    return !setup.ext && setup.l0_kind != L0Kind::oos_on_test;
}

StackedModel train_stacked(const SetupSpec& setup, const std::vector<SubjectTable>& train_tables,
                           const Parcellation& parcellation, const StackingConfig& cfg,
                           std::uint64_t seed, FitCache* cache, RunTrace* trace) {
    if (!setup_is_bundleable(setup))
        throw invalid_input_error("train_stacked: setup " + setup.name +
                                  " depends on the test site and has no feature-pure form");
    if (train_tables.empty()) throw invalid_input_error("train_stacked: no training tables");

    FitCache local_cache;
    FitCache& c = cache != nullptr ? *cache : local_cache;
    const auto sorted = sorted_by_site(train_tables);

    StackedModel model;
    model.setup = setup;
    model.parcellation = parcellation;

    if (setup.l0_kind == L0Kind::mean) {
        if (setup.l1_scope == Scope::per_site) {
            for (const SubjectTable* t : sorted) {
                const Eigen::MatrixXd means = region_means(*t, parcellation);
                model.l1_site_order.push_back(t->site());
                model.l1_models.push_back(train_l1_cached(means, t->ages, seed, cfg.grid, c));
                record_l1(trace, t->subject_ids);
            }
        } else {
            const SubjectTable pooled = pool_tables(train_tables);
            const Eigen::MatrixXd means = region_means(pooled, parcellation);
            model.l1_models.push_back(train_l1_cached(means, pooled.ages, seed, cfg.grid, c));
            record_l1(trace, pooled.subject_ids);
        }
        return model;
    }

    if (setup.l0_scope == Scope::per_site) {
        std::vector<const TrainedL0*> trained;
        for (const SubjectTable* t : sorted) {
            const TrainedL0& tl =
                train_l0_bank_cached(*t, parcellation, cfg.k_l0, seed, cfg.grid, cfg.jobs, c);
            trained.push_back(&tl);
            model.banks.push_back(tl.bank);
            if (trace != nullptr) trace->oos_used.push_back(provenance_of(tl.oos, t->site()));
        }
        if (setup.l1_scope == Scope::per_site) {
            for (std::size_t s = 0; s < sorted.size(); ++s) {
                model.l1_site_order.push_back(sorted[s]->site());
                model.l1_models.push_back(train_l1_cached(trained[s]->oos.values,
                                                          sorted[s]->ages, seed, cfg.grid, c));
                record_l1(trace, sorted[s]->subject_ids);
            }
        } else {
            Eigen::Index total = 0;
            for (const SubjectTable* t : sorted) total += t->n();
            Eigen::MatrixXd oos_rows(total, parcellation.n_regions);
            Eigen::VectorXd ages(total);
            std::vector<std::string> ids;
            ids.reserve(static_cast<std::size_t>(total));
            Eigen::Index row = 0;
            for (std::size_t s = 0; s < sorted.size(); ++s) {
                oos_rows.middleRows(row, sorted[s]->n()) = trained[s]->oos.values;
                ages.segment(row, sorted[s]->n()) = sorted[s]->ages;
                ids.insert(ids.end(), sorted[s]->subject_ids.begin(),
                           sorted[s]->subject_ids.end());
                row += sorted[s]->n();
            }
            model.l1_models.push_back(train_l1_cached(oos_rows, ages, seed, cfg.grid, c));
            record_l1(trace, std::move(ids));
        }
        return model;
    }

    const SubjectTable pooled = pool_tables(train_tables);
    const TrainedL0& tl =
        train_l0_bank_cached(pooled, parcellation, cfg.k_l0, seed, cfg.grid, cfg.jobs, c);
    model.banks.push_back(tl.bank);
    if (trace != nullptr) trace->oos_used.push_back(provenance_of(tl.oos, "pooled"));
    model.l1_models.push_back(train_l1_cached(tl.oos.values, pooled.ages, seed, cfg.grid, c));
    record_l1(trace, pooled.subject_ids);
    return model;
}

Eigen::VectorXd predict_stacked(const StackedModel& model, const SubjectTable& table) {
    if (table.width() != model.parcellation.width())
        throw shape_error("predict_stacked: table width does not match the model");
    const SetupSpec& setup = model.setup;

    if (setup.l0_kind == L0Kind::mean) {
        const Eigen::MatrixXd means = region_means(table, model.parcellation);
        if (setup.l1_scope == Scope::per_site) {
            Eigen::VectorXd sum = Eigen::VectorXd::Zero(table.n());
            for (const LinearModel& l1 : model.l1_models) sum += predict(l1, means);
            return sum / static_cast<double>(model.l1_models.size());
        }
        return predict(model.l1_models.front(), means);
    }

    if (setup.l0_scope == Scope::per_site) {
        if (setup.l1_scope == Scope::per_site) {
            // Each site's bank feeds its own L1; site outputs are averaged.
            Eigen::VectorXd sum = Eigen::VectorXd::Zero(table.n());
            for (std::size_t s = 0; s < model.banks.size(); ++s)
                sum += predict(model.l1_models[s], apply_l0_bank(model.banks[s], table));
            return sum / static_cast<double>(model.banks.size());
        }
        std::vector<Eigen::MatrixXd> preds;
        preds.reserve(model.banks.size());
        for (const L0Bank& bank : model.banks) preds.push_back(apply_l0_bank(bank, table));
        return predict(model.l1_models.front(), average_banks(preds));
    }

    return predict(model.l1_models.front(), apply_l0_bank(model.banks.front(), table));
}

Eigen::VectorXd run_setup(const SetupSpec& setup, const std::vector<SubjectTable>& train_tables,
                          const SubjectTable& test_table, const Parcellation& parcellation,
                          const StackingConfig& cfg, std::uint64_t seed, FitCache* cache,
                          RunTrace* trace) {
    if (train_tables.empty()) throw invalid_input_error("run_setup: no training tables");
    const std::string test_site = test_table.site();
    std::set<std::string> train_sites;
    for (const auto& t : train_tables) {
        const std::string& site = t.site();
        if (!train_sites.insert(site).second)
            throw invalid_input_error("run_setup: duplicate training site " + site);
        if (site == test_site)
            throw invalid_input_error("run_setup: test site " + test_site +
                                      " appears in the training tables");
    }
    if (test_table.width() != parcellation.width())
        throw shape_error("run_setup: test table width does not match parcellation");

    FitCache local_cache;
    FitCache& c = cache != nullptr ? *cache : local_cache;

    const std::size_t l1_trace_start = trace != nullptr ? trace->l1_fits.size() : 0;
    Eigen::VectorXd preds;

    if (setup.ext) {
        // Pooled training means plus two of three test-site folds; the held
        // out fold is predicted, rotating so each test row is predicted once.
        const int K = cfg.k_l0;
        if (test_table.n() < K)
            throw invalid_input_error("run_setup: test site too small for the ext fold rotation");
        const SubjectTable pooled = pool_tables(train_tables);
        const Eigen::MatrixXd means_train = region_means(pooled, parcellation);
        const Eigen::MatrixXd means_test = region_means(test_table, parcellation);
        const FoldAssignment folds = kfold_split(
            test_table.ages, K, mix_seed(seed, "ext", table_digest(test_table)));

        preds.resize(test_table.n());
        for (int f = 0; f < K; ++f) {
            std::vector<int> rows_in, rows_out;
            for (Eigen::Index i = 0; i < test_table.n(); ++i)
                (folds.fold_of[static_cast<std::size_t>(i)] == f ? rows_out : rows_in)
                    .push_back(static_cast<int>(i));

            Eigen::MatrixXd X(means_train.rows() + static_cast<Eigen::Index>(rows_in.size()),
                              means_train.cols());
            Eigen::VectorXd y(X.rows());
            X.topRows(means_train.rows()) = means_train;
            y.head(means_train.rows()) = pooled.ages;
            std::vector<std::string> train_ids = pooled.subject_ids;
            for (std::size_t i = 0; i < rows_in.size(); ++i) {
                X.row(means_train.rows() + static_cast<Eigen::Index>(i)) =
                    means_test.row(rows_in[i]);
                y[means_train.rows() + static_cast<Eigen::Index>(i)] =
                    test_table.ages[rows_in[i]];
                train_ids.push_back(test_table.subject_ids[static_cast<std::size_t>(rows_in[i])]);
            }

            const LinearModel& l1 = train_l1_cached(X, y, seed, cfg.grid, c);
            if (trace != nullptr) {
                L1FitTrace fit;
                fit.train_ids = std::move(train_ids);
                for (int row : rows_out)
                    fit.predicted_ids.push_back(
                        test_table.subject_ids[static_cast<std::size_t>(row)]);
                trace->l1_fits.push_back(std::move(fit));
            }
            for (int row : rows_out) {
                Eigen::MatrixXd one = means_test.row(row);
                preds[row] = predict(l1, one)[0];
            }
        }
        return preds;
    }

    if (setup.l0_kind == L0Kind::oos_on_test) {
        if (test_table.n() < cfg.k_l0)
            throw invalid_input_error(
                "run_setup: test site too small for out-of-sample level-0 folds");
        // The level-1 side is trained exactly as the matching PredL0 setup;
        // only the test-side level-0 features differ.
        SetupSpec train_side = setup;
        train_side.l0_kind = L0Kind::model;
        const StackedModel model =
            train_stacked(train_side, train_tables, parcellation, cfg, seed, &c, trace);

        const TrainedL0& test_l0 =
            train_l0_bank_cached(test_table, parcellation, cfg.k_l0, seed, cfg.grid, cfg.jobs, c);
        if (trace != nullptr)
            trace->oos_used.push_back(provenance_of(test_l0.oos, test_site));
        const Eigen::MatrixXd& features = test_l0.oos.values;

        if (setup.l1_scope == Scope::per_site) {
            // Every site L1 consumes the same test OOS matrix.
            Eigen::VectorXd sum = Eigen::VectorXd::Zero(test_table.n());
            for (const LinearModel& l1 : model.l1_models) sum += predict(l1, features);
            preds = sum / static_cast<double>(model.l1_models.size());
        } else {
            preds = predict(model.l1_models.front(), features);
        }
    } else {
        const StackedModel model =
            train_stacked(setup, train_tables, parcellation, cfg, seed, &c, trace);
        preds = predict_stacked(model, test_table);
    }

    if (trace != nullptr)
        for (std::size_t i = l1_trace_start; i < trace->l1_fits.size(); ++i)
            trace->l1_fits[i].predicted_ids = test_table.subject_ids;
    return preds;
}

}  // namespace agestack
