// Acceptance suite: one line per criterion, [PASS]/[FAIL], exit code =
// number of failures. Heavy criteria share one fit cache per seed, so the
// LOSO pass, the site-count sweep, the region correlations, and the
// privacy probes never retrain a bank they have in common.
//
// Optionally pass criterion numbers as arguments to run a subset, e.g.
// `acceptance_tests 1 7`.

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "agestack/cli_io.hpp"
#include "agestack/errors.hpp"
#include "agestack/rng.hpp"

using namespace agestack;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Pinned tolerances and bounds.
constexpr double kSolverRelTol = 1e-6;     // ridge / soft-threshold agreement
constexpr double kSolverKktTol = 1e-6;     // tuned-fit stationarity residual
constexpr double kSolverTimeBudget = 30.0;  // seconds
constexpr double kIdentityTol = 1e-10;     // per-site vs pooled route agreement
constexpr double kLosoTimeBudget = 3600.0;  // seconds, five-seed LOSO block
constexpr double kCorrGapMin = 0.15;       // |corr| advantage of OOS features
constexpr double kPrivacyGapMin = 0.1;     // balanced-accuracy advantage
constexpr double kChanceBand = 0.15;       // allowed deviation from 1/4
constexpr int kLosoSeeds = 5;
constexpr int kProbeSeeds = 3;

struct CriterionResult {
    int id = 0;
    std::string label;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
};

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* format, ...) {
    char buffer[512];
    va_list args;
    va_start(args, format);
    std::vsnprintf(buffer, sizeof(buffer), format, args);
    va_end(args);
    return buffer;
}

void progress(const std::string& message) {
    std::fprintf(stderr, "  .. %s\n", message.c_str());
    std::fflush(stderr);
}

double median(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

Eigen::MatrixXd random_matrix(Rng& rng, int n, int p) {
    Eigen::MatrixXd X(n, p);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < p; ++j) X(i, j) = rng.normal();
    return X;
}

Eigen::VectorXd random_vector(Rng& rng, int n) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = rng.normal();
    return v;
}

// Columns with mean 0 and (1/n)||z||^2 == 1, mutually orthogonal.
Eigen::MatrixXd orthonormal_design(Rng& rng, int n, int p) {
    Eigen::MatrixXd Z = random_matrix(rng, n, p);
    for (int j = 0; j < p; ++j) {
        Z.col(j).array() -= Z.col(j).mean();
        for (int k = 0; k < j; ++k)
            Z.col(j) -= Z.col(k) * (Z.col(k).dot(Z.col(j)) / Z.col(k).squaredNorm());
        Z.col(j) *= std::sqrt(static_cast<double>(n)) / Z.col(j).norm();
    }
    return Z;
}

Eigen::VectorXd closed_form_ridge(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y_c,
                                  double lambda) {
    const double n = static_cast<double>(Z.rows());
    const Eigen::MatrixXd A =
        Z.transpose() * Z / n + lambda * Eigen::MatrixXd::Identity(Z.cols(), Z.cols());
    return A.ldlt().solve(Z.transpose() * y_c / n);
}

// ---------------------------------------------------------------------------
// Criterion 1: solver oracles and tuned-fit stationarity certificates.

CriterionResult criterion_solver_oracles() {
    CriterionResult r{1, "solver oracle equivalence", false, "", 0.0};
    const auto start = Clock::now();
    Rng rng(9001);
    const int n = 20, p = 5;

    double worst_ridge = 0.0, worst_lasso = 0.0, worst_kkt = 0.0;
    for (int rep = 0; rep < 50; ++rep) {
        // Ridge against the closed form on the standardized problem.
        const Eigen::MatrixXd X = random_matrix(rng, n, p);
        const Eigen::VectorXd w = random_vector(rng, p);
        const Eigen::VectorXd y = X * w + 0.3 * random_vector(rng, n);
        const double lambda = 0.05 + 2.0 * rng.uniform();

        const LinearModel ridge = fit_elastic_net(X, y, {0.0, lambda});
        const Eigen::MatrixXd Z = standardize_apply(X, ridge.standardizer);
        const Eigen::VectorXd y_c = y.array() - ridge.standardizer.y_mean;
        const Eigen::VectorXd oracle = closed_form_ridge(Z, y_c, lambda);
        const double denom = std::max(1.0, oracle.lpNorm<Eigen::Infinity>());
        worst_ridge = std::max(
            worst_ridge, (ridge.coefficients - oracle).lpNorm<Eigen::Infinity>() / denom);

        // Lasso on an orthonormal design against soft thresholding.
        const Eigen::MatrixXd Q = orthonormal_design(rng, n, p);
        const Eigen::VectorXd y2 = random_vector(rng, n);
        const double lambda2 = 0.02 + 0.5 * rng.uniform();
        const LinearModel lasso = fit_elastic_net(Q, y2, {1.0, lambda2});
        const Eigen::VectorXd y2_c = y2.array() - y2.mean();
        for (int j = 0; j < p; ++j) {
            const double expected = soft_threshold(Q.col(j).dot(y2_c) / n, lambda2);
            worst_lasso = std::max(worst_lasso, std::abs(lasso.coefficients[j] - expected));
        }

        // Every tuned fit must carry a clean stationarity certificate.
        const LinearModel tuned = tune_fit(X, y, TuneGrid{}, 424200 + rep);
        const Eigen::MatrixXd Zt = standardize_apply(X, tuned.standardizer);
        const Eigen::VectorXd yt_c = y.array() - tuned.standardizer.y_mean;
        worst_kkt = std::max(worst_kkt, kkt_violation(Zt, yt_c, tuned.coefficients,
                                                      tuned.hyper.alpha, tuned.hyper.lambda));
    }

    r.seconds = seconds_since(start);
    r.pass = worst_ridge < kSolverRelTol && worst_lasso < kSolverRelTol &&
             worst_kkt < kSolverKktTol && r.seconds < kSolverTimeBudget;
    r.detail = fmt("50 instances: ridge rel err %.2e, soft-threshold err %.2e, "
                   "tuned KKT %.2e, %.1fs",
                   worst_ridge, worst_lasso, worst_kkt, r.seconds);
    return r;
}

// ---------------------------------------------------------------------------
// Criterion 2: per-site vs pooled code paths of the pooled GMV setup.

// The production path pools raw training tables before computing region
// means; the hand-built route computes region means per site and pools the
// results. Region means are row-local, so the two orderings must agree
// exactly (within fp tolerance) — including the tuned L1, whose fold seed
// derives from the identical pooled feature matrix.
CriterionResult criterion_route_identity(const SynthResult& data) {
    CriterionResult r{2, "per-site vs pooled route identity", false, "", 0.0};
    const auto start = Clock::now();
    const SetupSpec setup = setup_from_name("GMV_pL1_p");
    StackingConfig cfg;

    double worst = 0.0;
    for (std::size_t t = 0; t < data.tables.size(); ++t) {
        std::vector<const SubjectTable*> train;  // ascending site order
        for (std::size_t i = 0; i < data.tables.size(); ++i)
            if (i != t) train.push_back(&data.tables[i]);

        std::vector<SubjectTable> train_copy;
        for (const SubjectTable* p : train) train_copy.push_back(*p);
        const Eigen::VectorXd via_pooled_raw =
            run_setup(setup, train_copy, data.tables[t], data.parcellation, cfg, 1);

        Eigen::Index n_total = 0;
        for (const SubjectTable* p : train) n_total += p->n();
        Eigen::MatrixXd features(n_total, data.parcellation.n_regions);
        Eigen::VectorXd ages(n_total);
        Eigen::Index at = 0;
        for (const SubjectTable* p : train) {
            features.middleRows(at, p->n()) = region_means(*p, data.parcellation);
            ages.segment(at, p->n()) = p->ages;
            at += p->n();
        }
        const LinearModel l1 = train_l1(features, ages, 1, cfg.grid);
        const Eigen::VectorXd via_per_site =
            predict(l1, region_means(data.tables[t], data.parcellation));

        worst = std::max(worst, (via_pooled_raw - via_per_site).lpNorm<Eigen::Infinity>());
    }

    r.seconds = seconds_since(start);
    r.pass = worst <= kIdentityTol;
    r.detail = fmt("4 held-out sites, max |diff| = %.2e (tol %.0e), %.1fs", worst,
                   kIdentityTol, r.seconds);
    return r;
}

// ---------------------------------------------------------------------------
// Shared heavy loop: per seed, LOSO over all setups, the two-setup sweep,
// and (first three seeds) region correlations and privacy probes.

struct SeedBlock {
    std::map<std::string, double> loso_mae;                 // setup -> mean MAE
    std::map<std::pair<std::string, int>, double> sweep_mae;  // (setup, k) -> mean MAE
    std::vector<RegionCorrSummary> region_summaries;
    double ba_region_mean = -1.0;
    double ba_l0_oos = -1.0;
    double loso_seconds = 0.0;
};

SeedBlock run_seed_block(std::uint64_t seed, bool with_probes) {
    SeedBlock block;
    const SynthResult data = generate(default_benchmark(), seed);
    StackingConfig cfg;
    FitCache cache;

    std::vector<SetupSpec> all;
    for (const auto& name : all_setup_names()) all.push_back(setup_from_name(name));

    auto t0 = Clock::now();
    const EvalReport loso = loso_evaluate(data.tables, data.parcellation, all, cfg, seed, &cache);
    block.loso_seconds = seconds_since(t0);
    for (const auto& s : loso.summaries) block.loso_mae[s.setup] = s.mean_mae;
    progress(fmt("seed %llu: loso done (%.0fs)", (unsigned long long)seed, block.loso_seconds));

    const std::vector<SetupSpec> sweep_setups = {setup_from_name("GMV_pL1_p"),
                                                 setup_from_name("PredL0_pL1_p")};
    t0 = Clock::now();
    const EvalReport sweep =
        site_count_sweep(data.tables, data.parcellation, sweep_setups, cfg, seed, &cache);
    for (const auto& s : sweep.summaries) block.sweep_mae[{s.setup, s.train_count}] = s.mean_mae;
    progress(fmt("seed %llu: sweep done (%.0fs)", (unsigned long long)seed, seconds_since(t0)));

    if (with_probes) {
        const RegionCorrReport regions = region_age_correlations(
            data.tables, data.parcellation, cfg.k_l0, seed, cfg.grid, 1, &cache);
        block.region_summaries = regions.summaries;

        t0 = Clock::now();
        block.ba_region_mean =
            privacy_probe(data.tables, data.parcellation, FeatureSpace::region_mean,
                          default_c_grid(), 5, 5, seed, cfg.k_l0, cfg.grid, 1, &cache)
                .balanced_acc;
        block.ba_l0_oos =
            privacy_probe(data.tables, data.parcellation, FeatureSpace::l0_oos,
                          default_c_grid(), 5, 5, seed, cfg.k_l0, cfg.grid, 1, &cache)
                .balanced_acc;
        progress(fmt("seed %llu: probes done (%.0fs)", (unsigned long long)seed,
                     seconds_since(t0)));
    }
    return block;
}

const std::vector<std::string> kGmvSetups = {"GMV_sL1_s", "GMV_pL1_p", "GMV_pL1_p_ext"};
const std::vector<std::string> kModelSetups = {"PredL0_sL1_s",  "PredL0_sL1_p",
                                               "PredL0_pL1_p",  "OOSPred_sL1_s",
                                               "OOSPred_sL1_p", "OOSPred_pL1_p"};

CriterionResult criterion_setup_ordering(const std::vector<SeedBlock>& blocks) {
    CriterionResult r{3, "stacked setups beat raw-feature setups", false, "", 0.0};
    double loso_total = 0.0;
    for (const SeedBlock& b : blocks) loso_total += b.loso_seconds;

    auto medians = [&](const std::string& setup) {
        std::vector<double> v;
        for (const SeedBlock& b : blocks) v.push_back(b.loso_mae.at(setup));
        return median(v);
    };
    const double med_headline = medians("OOSPred_sL1_p");
    double min_gmv_median = 1e300;
    for (const auto& g : kGmvSetups) min_gmv_median = std::min(min_gmv_median, medians(g));

    int weakest_pair = kLosoSeeds;
    for (const auto& m : kModelSetups)
        for (const auto& g : kGmvSetups) {
            int wins = 0;
            for (const SeedBlock& b : blocks)
                if (b.loso_mae.at(m) < b.loso_mae.at(g)) ++wins;
            weakest_pair = std::min(weakest_pair, wins);
        }

    r.seconds = loso_total;
    r.pass = med_headline < min_gmv_median && weakest_pair >= kLosoSeeds - 1 &&
             loso_total < kLosoTimeBudget;
    r.detail = fmt("median mean-MAE OOSPred_sL1_p %.3f vs best raw-feature %.3f; weakest "
                   "pairwise win count %d/%d; loso block %.0fs (budget %.0fs)",
                   med_headline, min_gmv_median, weakest_pair, kLosoSeeds, loso_total,
                   kLosoTimeBudget);
    return r;
}

CriterionResult criterion_site_count_trend(const std::vector<SeedBlock>& blocks) {
    CriterionResult r{4, "more training sites, lower error", false, "", 0.0};
    bool monotone = true;
    std::string detail;
    for (const std::string& setup : {std::string("PredL0_pL1_p"), std::string("GMV_pL1_p")}) {
        std::vector<double> med;
        for (int k = 1; k <= 3; ++k) {
            std::vector<double> v;
            for (const SeedBlock& b : blocks) v.push_back(b.sweep_mae.at({setup, k}));
            med.push_back(median(v));
        }
        monotone = monotone && med[0] > med[1] && med[1] > med[2];
        detail += fmt("%s%s %.3f > %.3f > %.3f", detail.empty() ? "" : "; ", setup.c_str(),
                      med[0], med[1], med[2]);
    }
    r.pass = monotone;
    r.detail = detail;
    return r;
}

CriterionResult criterion_region_correlations(const std::vector<SeedBlock>& blocks) {
    CriterionResult r{5, "out-of-sample features track age where means cancel", false, "", 0.0};
    double min_gap = 1e300;
    int checked = 0;
    for (int s = 0; s < kProbeSeeds; ++s)
        for (const RegionCorrSummary& site : blocks[s].region_summaries) {
            min_gap = std::min(min_gap, site.mean_abs_corr_oos - site.mean_abs_corr_mean);
            ++checked;
        }
    r.pass = checked == kProbeSeeds * 4 && min_gap >= kCorrGapMin;
    r.detail = fmt("%d site/seed cells, min |corr| gap %.3f (needs >= %.2f)", checked, min_gap,
                   kCorrGapMin);
    return r;
}

CriterionResult criterion_privacy(const std::vector<SeedBlock>& blocks) {
    CriterionResult r{6, "out-of-sample features blunt site identification", false, "", 0.0};
    const auto start = Clock::now();

    double min_gap = 1e300;
    for (int s = 0; s < kProbeSeeds; ++s)
        min_gap = std::min(min_gap, blocks[s].ba_region_mean - blocks[s].ba_l0_oos);

    // Control arm: no site offsets, identical age ranges; both feature
    // spaces must sit near chance.
    double worst_dev = 0.0;
    for (int s = 0; s < kProbeSeeds; ++s) {
        const std::uint64_t seed = s + 1;
        SynthConfig synth = default_benchmark();
        synth.site_offset_sd = 0.0;
        synth.age_ranges = {{20.0, 80.0}, {20.0, 80.0}, {20.0, 80.0}, {20.0, 80.0}};
        const SynthResult data = generate(synth, seed);
        FitCache cache;
        for (const FeatureSpace space : {FeatureSpace::region_mean, FeatureSpace::l0_oos}) {
            const double ba = privacy_probe(data.tables, data.parcellation, space,
                                            default_c_grid(), 5, 5, seed, 3, TuneGrid{}, 1,
                                            &cache)
                                  .balanced_acc;
            worst_dev = std::max(worst_dev, std::abs(ba - 0.25));
        }
        progress(fmt("control probes seed %llu done", (unsigned long long)seed));
    }

    r.seconds = seconds_since(start);
    r.pass = min_gap >= kPrivacyGapMin && worst_dev <= kChanceBand;
    r.detail = fmt("min BA gap %.3f (needs >= %.2f); control arm max |BA - 0.25| = %.3f "
                   "(band %.2f), %.0fs",
                   min_gap, kPrivacyGapMin, worst_dev, kChanceBand, r.seconds);
    return r;
}

// ---------------------------------------------------------------------------
// Criterion 7: hand-computable metric examples, exact.

CriterionResult criterion_metric_examples() {
    CriterionResult r{7, "metric hand examples", false, "", 0.0};
    bool ok = true;
    auto expect = [&](bool cond) { ok = ok && cond; };

    Eigen::VectorXd y1(2), p1(2);
    y1 << 20.0, 40.0;
    p1 << 30.0, 30.0;
    expect(mae(y1, p1) == 10.0);
    expect(mae(y1, y1) == 0.0);

    Eigen::VectorXd a(3), up(3), down(3), flat(3);
    a << 1.0, 2.0, 3.0;
    up << 2.0, 4.0, 6.0;
    down << 3.0, 2.0, 1.0;
    flat << 7.0, 7.0, 7.0;
    expect(pearson_r(a, up) == 1.0);
    expect(pearson_r(a, down) == -1.0);
    expect(!pearson_r(a, flat).has_value());

    Eigen::VectorXd y2(2), p2(2);
    y2 << 0.0, 2.0;
    p2 << 3.0, -1.0;
    // Residual sum 18 against total sum 2: 1 - 18/2 = -8.
    expect(r_squared(y2, p2) == -8.0);
    expect(r_squared(a, a) == 1.0);
    Eigen::VectorXd mean_pred = Eigen::VectorXd::Constant(3, a.mean());
    expect(r_squared(a, mean_pred) == 0.0);

    expect(bias_corr(a, flat) == 1.0);             // constant predictor
    expect(!bias_corr(a, a).has_value());          // perfect prediction
    const Eigen::VectorXd over = (2.0 * a.array() - a.mean()).matrix();
    expect(bias_corr(a, over) == -1.0);            // over-dispersed

    r.pass = ok;
    r.detail = ok ? "11 exact checks" : "an exact check failed";
    return r;
}

// ---------------------------------------------------------------------------
// Criterion 8: OOS provenance and end-to-end byte determinism.

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(AGESTACK_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    return WEXITSTATUS(std::system(cmd.c_str()));
}

bool oos_self_exclusion_holds(const TrainedL0& trained, std::string& why) {
    try {
        assert_oos_integrity(trained.oos);
    } catch (const std::exception& e) {
        why = e.what();
        return false;
    }
    // Independent scan on top of the library's own assertion.
    const auto& fold_of = trained.oos.fold_assignment.fold_of;
    for (std::size_t i = 0; i < fold_of.size(); ++i) {
        const auto& rows = trained.oos.fold_train_rows[static_cast<std::size_t>(fold_of[i])];
        if (std::find(rows.begin(), rows.end(), static_cast<int>(i)) != rows.end()) {
            why = fmt("row %zu appears in its own fold's training rows", i);
            return false;
        }
    }
    return true;
}

CriterionResult criterion_integrity_and_determinism(const SynthResult& benchmark) {
    CriterionResult r{8, "OOS provenance and byte-identical reruns", false, "", 0.0};
    const auto start = Clock::now();
    std::string why;

    // Provenance on a real benchmark bank and on a small fresh one.
    const TrainedL0 bench_bank =
        train_l0_bank(benchmark.tables[0], benchmark.parcellation, 3, 1);
    bool provenance = oos_self_exclusion_holds(bench_bank, why);

    SynthConfig small;
    small.n_sites = 1;
    small.n_per_site = 30;
    small.age_ranges = {{20.0, 80.0}};
    small.n_regions = 3;
    small.voxels_per_region = 4;
    const SynthResult small_data = generate(small, 77);
    const TrainedL0 small_bank =
        train_l0_bank(small_data.tables[0], small_data.parcellation, 5, 77);
    provenance = provenance && oos_self_exclusion_holds(small_bank, why);
    progress("provenance scans done");

    // End-to-end determinism through the installed command-line interface.
    const fs::path tmp =
        fs::temp_directory_path() / ("agestack_accept_" + std::to_string(::getpid()));
    fs::create_directories(tmp);
    std::ofstream(tmp / "synth.cfg") << "n_sites = 3\nn_per_site = 24\n"
                                        "age_range = 20, 80\nage_range = 20, 80\n"
                                        "age_range = 20, 80\nn_regions = 2\n"
                                        "voxels_per_region = 3\nfrac_pos = 1.0\n"
                                        "frac_neg = 0.0\nfrac_null = 0.0\n"
                                        "loading_sd = 0.1\nnoise_sd = 0.5\n"
                                        "site_offset_sd = 0.5\n";
    bool cli_ok =
        run_cli("synth --config " + (tmp / "synth.cfg").string() + " --seed 7 --out " +
                (tmp / "data").string()) == 0;
    const std::string data = (tmp / "data").string();
    std::ofstream(tmp / "exp.cfg") << "feature_file = " + data + "/site_00.csv\n"
                                   << "feature_file = " + data + "/site_01.csv\n"
                                   << "feature_file = " + data + "/site_02.csv\n"
                                   << "parcellation = " + data + "/parcellation.csv\n"
                                   << "setups = GMV_pL1_p, PredL0_sL1_p, OOSPred_sL1_p\n"
                                   << "k_l0 = 3\ninner_folds = 3\nn_lambda = 8\n";
    const std::string base = "run --config " + (tmp / "exp.cfg").string() + " --seed 11 --out ";
    cli_ok = cli_ok && run_cli(base + (tmp / "out1").string()) == 0;
    cli_ok = cli_ok && run_cli(base + (tmp / "out2").string()) == 0;

    bool identical = false;
    if (cli_ok) {
        const std::string json1 = read_file(tmp / "out1" / "loso_report.json");
        const std::string csv1 = read_file(tmp / "out1" / "loso_report.csv");
        identical = !json1.empty() && json1 == read_file(tmp / "out2" / "loso_report.json") &&
                    csv1 == read_file(tmp / "out2" / "loso_report.csv");
    }
    fs::remove_all(tmp);

    r.seconds = seconds_since(start);
    r.pass = provenance && cli_ok && identical;
    const std::string provenance_note =
        provenance ? "self-exclusion holds on 2 banks" : "self-exclusion VIOLATED: " + why;
    const char* cli_note = !cli_ok      ? "failed to execute"
                           : identical  ? "byte-identical"
                                        : "DIFFER";
    r.detail = fmt("%s; two CLI runs %s, %.0fs", provenance_note.c_str(), cli_note, r.seconds);
    return r;
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
    auto selected = [&](int id) { return wanted.empty() || wanted.count(id) > 0; };

    std::vector<CriterionResult> results;

    if (selected(1)) results.push_back(criterion_solver_oracles());
    if (selected(7)) results.push_back(criterion_metric_examples());

    const bool need_benchmark = selected(2) || selected(8);
    SynthResult benchmark_seed1;
    if (need_benchmark) benchmark_seed1 = generate(default_benchmark(), 1);
    if (selected(8)) results.push_back(criterion_integrity_and_determinism(benchmark_seed1));
    if (selected(2)) results.push_back(criterion_route_identity(benchmark_seed1));

    if (selected(3) || selected(4) || selected(5) || selected(6)) {
        std::vector<SeedBlock> blocks;
        for (int s = 1; s <= kLosoSeeds; ++s)
            blocks.push_back(run_seed_block(static_cast<std::uint64_t>(s), s <= kProbeSeeds));
        if (selected(3)) results.push_back(criterion_setup_ordering(blocks));
        if (selected(4)) results.push_back(criterion_site_count_trend(blocks));
        if (selected(5)) results.push_back(criterion_region_correlations(blocks));
        if (selected(6)) results.push_back(criterion_privacy(blocks));
    }

    std::sort(results.begin(), results.end(),
              [](const CriterionResult& a, const CriterionResult& b) { return a.id < b.id; });

    int failures = 0;
    for (const CriterionResult& r : results) {
        std::printf("[%s] %d. %s — %s\n", r.pass ? "PASS" : "FAIL", r.id, r.label.c_str(),
                    r.detail.c_str());
        if (!r.pass) ++failures;
    }
    std::printf("%zu criteria checked, %d failed\n", results.size(), failures);
    return failures;
}
