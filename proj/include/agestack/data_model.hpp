#ifndef AGESTACK_DATA_MODEL_HPP
#define AGESTACK_DATA_MODEL_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "agestack/rng.hpp"

namespace agestack {

// Feature tables, parcellation, region views, and fold assignment: the
// data substrate shared by every other module.

struct SubjectTable {
    std::vector<std::string> subject_ids;  // unique within a table
    std::vector<std::string> sites;        // one label per row
    Eigen::VectorXd ages;                  // years, finite and > 0
    Eigen::MatrixXd features;              // n x P, volume-like units

    Eigen::Index n() const { return ages.size(); }
    Eigen::Index width() const { return features.cols(); }

    // The single site label of a one-site table; throws on mixed tables.
    const std::string& site() const;
};

// Checks the structural invariants and returns soft warnings (negative
// feature values). Hard violations throw validation_error.
std::vector<std::string> validate_table(const SubjectTable& table);

struct Parcellation {
    std::vector<int> region_of;  // length P, values in [0, R)
    int n_regions = 0;

    Eigen::Index width() const { return static_cast<Eigen::Index>(region_of.size()); }
    // Voxel columns of region r, ascending.
    const std::vector<int>& voxels_of(int r) const;

    std::vector<std::vector<int>> groups;  // filled by make_parcellation
};

// Validates density (region ids exactly 0..R-1, each nonempty) and builds
// the per-region voxel lists.
Parcellation make_parcellation(std::vector<int> region_of);

// Remaps arbitrary (possibly sparse) region ids to dense 0..R-1, ascending
// by original id. Utility for loaders fed externally produced maps.
std::vector<int> compact_region_ids(const std::vector<int>& raw_ids);

struct FoldAssignment {
    std::vector<int> fold_of;  // length n, values in [0, K)
    int k = 0;
};

// Age-stratified K-fold split: rows are ranked by (age, index), cut into K
// quantile strata, shuffled within stratum by the seed, and dealt
// round-robin. Every fold is nonempty, global fold sizes differ by at most
// 1, and so do fold counts within each stratum.
FoldAssignment kfold_split(const Eigen::VectorXd& ages, int k, std::uint64_t seed);

// CSV with header subject_id,site,age,v0,...,v{P-1}; UTF-8, LF endings,
// shortest round-trip numbers. See docs/formats.md.
SubjectTable load_features(const std::string& path);
void write_features(const SubjectTable& table, const std::string& path);

// CSV with header voxel_index,region_id covering 0..P-1 exactly once.
Parcellation load_parcellation(const std::string& path);
void write_parcellation(const Parcellation& parcellation, const std::string& path);

// Columns of region r in ascending voxel order.
Eigen::MatrixXd region_view(const SubjectTable& table, const Parcellation& parcellation, int r);

// (i, r) = mean over region r's voxels for subject i.
Eigen::MatrixXd region_means(const SubjectTable& table, const Parcellation& parcellation);
Eigen::MatrixXd region_means(const Eigen::MatrixXd& features, const Parcellation& parcellation);

// Row-concatenates single-site tables ordered by site label, so the pooled
// table is independent of input order. Site labels must be distinct.
SubjectTable pool_tables(const std::vector<SubjectTable>& tables);

// Content digests used for cache keys and seed derivation.
Digest128 table_digest(const SubjectTable& table);
Digest128 parcellation_digest(const Parcellation& parcellation);

}  // namespace agestack

#endif
