#ifndef AGESTACK_SYNTHDATA_HPP
#define AGESTACK_SYNTHDATA_HPP

#include <cstdint>
#include <utility>
#include <vector>

#include "agestack/data_model.hpp"

namespace agestack {

// Seeded generator of multi-site tables with region-structured age signal,
// heterogeneous voxel loadings, and per-site offsets. Voxel values follow
//
//   x[i,v] = 10 + w_v * g_r(age_i) + u[s,v] + noise_sd * eps
//   g_r(age) = region_signal_scale * c_r * (t + q*(t^2 - 1)),  t = (age-50)/20
//
// with c_r ~ U[0.5, 1.5] per region, q = 0.3 when the quadratic term is on
// and 0 otherwise, u[s,v] ~ N(0, site_offset_sd^2) constant within a site,
// and per-voxel loadings w_v drawn from a three-component sign mixture
// (N(+1, loading_sd^2), N(-1, loading_sd^2), exactly 0). The constant 10
// keeps values in a nonnegative volume-like range. Mixture counts are
// exact per region, so mixed-sign cancellation hits every region alike.

struct SynthConfig {
    int n_sites = 4;
    int n_per_site = 300;
    std::vector<std::pair<double, double>> age_ranges;  // one (lo, hi) per site
    int n_regions = 50;
    int voxels_per_region = 20;
    double frac_pos = 0.4;
    double frac_neg = 0.4;
    double frac_null = 0.2;
    double loading_sd = 0.3;
    double noise_sd = 1.0;
    double site_offset_sd = 0.5;  // tau
    double region_signal_scale = 1.0;
    bool quadratic = false;

    int width() const { return n_regions * voxels_per_region; }
};

void validate_config(const SynthConfig& config);

struct GroundTruth {
    std::vector<double> loadings;       // w_v, length P
    std::vector<double> region_scale;   // c_r, length R
    Eigen::MatrixXd site_offsets;       // n_sites x P, u[s,v]
    std::vector<std::string> site_labels;
};

struct SynthResult {
    std::vector<SubjectTable> tables;  // one per site, labels site_00, site_01, ...
    Parcellation parcellation;         // contiguous voxel blocks
    GroundTruth truth;
};

// Pure function of (config, seed).
SynthResult generate(const SynthConfig& config, std::uint64_t seed);

// 4 sites x 300 subjects, staggered adult age ranges, 50 regions x 20
// voxels, mixture (0.4, 0.4, 0.2), loading_sd 0.3, noise_sd 1.0, tau 0.5.
SynthConfig default_benchmark();

}  // namespace agestack

#endif
