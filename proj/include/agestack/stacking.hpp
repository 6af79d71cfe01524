#ifndef AGESTACK_STACKING_HPP
#define AGESTACK_STACKING_HPP

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "agestack/data_model.hpp"
#include "agestack/elastic_net.hpp"

namespace agestack {

// Two-level stacking: per-region elastic-net level-0 models feeding an
// elastic-net level-1 meta-model, plus the nine train/test fusion setups.
//
// Every fit's seed is derived from the master seed and a content digest of
// exactly what the fit consumes. Two code paths that train on bit-equal
// data therefore produce bit-equal models, which is what makes the pooled
// vs per-site identities below exact rather than approximate, and lets the
// FitCache share work between setups that prescribe the same fit.

struct L0Bank {
    std::vector<LinearModel> region_models;  // one per region
    std::string provenance;                  // training-site label or "pooled"
    Parcellation parcellation;

    int n_regions() const { return static_cast<int>(region_models.size()); }
};

struct OOSMatrix {
    Eigen::MatrixXd values;  // n x R out-of-fold regional age predictions
    FoldAssignment fold_assignment;
    // fold_train_rows[f] are the rows the fold-f models trained on; row i
    // with fold_of[i] == f must not appear there.
    std::vector<std::vector<int>> fold_train_rows;
    // (region, fold) cells that fell back to the fold-training age mean,
    // fold == K marking a final refit that kept no feature.
    std::vector<std::pair<int, int>> fallback_cells;
};

// Verifies the out-of-sample bookkeeping: folds partition the rows, and no
// row's own fold-training set contains it. Throws validation_error.
void assert_oos_integrity(const OOSMatrix& oos);

enum class L0Kind { mean, model, oos_on_test };
enum class Scope { per_site, pooled };

struct SetupSpec {
    std::string name;
    L0Kind l0_kind = L0Kind::mean;
    Scope l0_scope = Scope::pooled;  // where the L1's training features come from
    Scope l1_scope = Scope::pooled;
    bool ext = false;
};

// The nine names of the external interface, fixed order.
const std::vector<std::string>& all_setup_names();
SetupSpec setup_from_name(const std::string& name);

struct StackingConfig {
    int k_l0 = 3;  // folds for out-of-sample level-0 predictions
    TuneGrid grid;
    int jobs = 1;  // worker threads for independent region fits
};

struct TrainedL0 {
    L0Bank bank;
    OOSMatrix oos;
};

// Caches trained level-0 banks and level-1 models by content key, so
// setups (and evaluation cells) that prescribe the same fit reuse it.
// Not thread-safe; share only under external synchronization.
class FitCache {
  public:
    const TrainedL0& l0(const Digest128& key, const std::function<TrainedL0()>& make);
    const LinearModel& l1(const Digest128& key, const std::function<LinearModel()>& make);
    std::size_t size() const { return l0_.size() + l1_.size(); }

  private:
    std::map<std::string, TrainedL0> l0_;
    std::map<std::string, LinearModel> l1_;
};

// For each region and fold, a tuned model fit outside the fold predicts
// the fold, filling the OOS matrix; the bank's models are refit on all
// rows. A fold whose training slice is degenerate falls back to the
// fold-training age mean (recorded in fallback_cells, not fatal).
TrainedL0 train_l0_bank(const SubjectTable& table, const Parcellation& parcellation, int K,
                        std::uint64_t seed, const TuneGrid& grid = TuneGrid{}, int jobs = 1);

// Cache-aware variant; key covers (table, parcellation, K, grid, seed).
const TrainedL0& train_l0_bank_cached(const SubjectTable& table, const Parcellation& parcellation,
                                      int K, std::uint64_t seed, const TuneGrid& grid,
                                      int jobs, FitCache& cache);

// Column r = predict(region model r, region columns of the table).
Eigen::MatrixXd apply_l0_bank(const L0Bank& bank, const SubjectTable& table);

// Element-wise mean of equally shaped prediction matrices.
Eigen::MatrixXd average_banks(const std::vector<Eigen::MatrixXd>& preds);

// Tuned elastic net over the R regional predictions. The effective seed
// mixes `seed` with a digest of (features, ages).
LinearModel train_l1(const Eigen::MatrixXd& l0_features, const Eigen::VectorXd& ages,
                     std::uint64_t seed, const TuneGrid& grid = TuneGrid{});

// The out-of-fold half of train_l0_bank, for test-site-internal level-0
// predictions; same seeds, same values, bank discarded.
OOSMatrix oos_l0_on_site(const SubjectTable& table, const Parcellation& parcellation, int K,
                         std::uint64_t seed, const TuneGrid& grid = TuneGrid{}, int jobs = 1);

// Provenance collected by run_setup for hygiene assertions.
struct L1FitTrace {
    std::vector<std::string> train_ids;      // rows the L1 trained on
    std::vector<std::string> predicted_ids;  // rows it predicted
};

struct OosProvenance {
    std::string source;  // site label or "pooled"
    std::vector<int> fold_of;
    std::vector<std::vector<int>> fold_train_rows;
};

struct RunTrace {
    std::vector<L1FitTrace> l1_fits;
    std::vector<OosProvenance> oos_used;
};

// A trained stacked model whose test path is a pure function of features.
// OOSPred and ext setups are test-site-coupled and have no such form.
struct StackedModel {
    SetupSpec setup;
    Parcellation parcellation;
    std::vector<L0Bank> banks;               // empty for GMV setups
    std::vector<std::string> l1_site_order;  // per-site L1 labels; empty when pooled
    std::vector<LinearModel> l1_models;      // 1 when pooled, one per site otherwise
};

bool setup_is_bundleable(const SetupSpec& setup);

// Trains the feature-pure setups (GMV_sL1_s, GMV_pL1_p, PredL0_*).
StackedModel train_stacked(const SetupSpec& setup, const std::vector<SubjectTable>& train_tables,
                           const Parcellation& parcellation, const StackingConfig& cfg,
                           std::uint64_t seed, FitCache* cache = nullptr,
                           RunTrace* trace = nullptr);

Eigen::VectorXd predict_stacked(const StackedModel& model, const SubjectTable& table);

// One prediction per test subject under the named setup's semantics. The
// test site must not appear among the training tables; OOSPred and ext
// setups additionally require n_test >= cfg.k_l0.
Eigen::VectorXd run_setup(const SetupSpec& setup, const std::vector<SubjectTable>& train_tables,
                          const SubjectTable& test_table, const Parcellation& parcellation,
                          const StackingConfig& cfg, std::uint64_t seed,
                          FitCache* cache = nullptr, RunTrace* trace = nullptr);

}  // namespace agestack

#endif
