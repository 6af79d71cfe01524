#include "agestack/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "agestack/errors.hpp"

namespace agestack {

namespace {

constexpr double kBaseline = 10.0;
constexpr double kQuadraticWeight = 0.3;

std::string two_digit_label(const char* prefix, int i) {
    std::string out(prefix);
    out += i < 10 ? "0" : "";
    out += std::to_string(i);
    return out;
}

double latent_t(double age) { return (age - 50.0) / 20.0; }

}  // namespace

void validate_config(const SynthConfig& config) {
    if (config.n_sites < 1) throw validation_error("synth: n_sites must be >= 1");
    if (config.n_per_site < 1) throw validation_error("synth: n_per_site must be >= 1");
    if (config.n_regions < 1) throw validation_error("synth: n_regions must be >= 1");
    if (config.voxels_per_region < 1)
        throw validation_error("synth: voxels_per_region must be >= 1");
    if (config.age_ranges.size() != static_cast<std::size_t>(config.n_sites))
        throw validation_error("synth: need one age range per site");
    for (const auto& [lo, hi] : config.age_ranges)
        if (!(lo > 0.0 && lo < hi)) throw validation_error("synth: age range must be 0 < lo < hi");
    const double frac_sum = config.frac_pos + config.frac_neg + config.frac_null;
    if (config.frac_pos < 0.0 || config.frac_neg < 0.0 || config.frac_null < 0.0 ||
        std::abs(frac_sum - 1.0) > 1e-12)
        throw validation_error("synth: loading fractions must be nonnegative and sum to 1");
    if (config.loading_sd < 0.0 || config.noise_sd < 0.0 || config.site_offset_sd < 0.0 ||
        config.region_signal_scale < 0.0)
        throw validation_error("synth: scales must be nonnegative");
}

SynthResult generate(const SynthConfig& config, std::uint64_t seed) {
    validate_config(config);
    const int P = config.width();
    const int R = config.n_regions;
    const int m = config.voxels_per_region;
    const int S = config.n_sites;

    SynthResult result;

    std::vector<int> region_of(static_cast<std::size_t>(P));
    for (int v = 0; v < P; ++v) region_of[static_cast<std::size_t>(v)] = v / m;
    result.parcellation = make_parcellation(std::move(region_of));

    // Truth draws come from one stream whose consumption order is fixed by
    // the loops below; identical (config, seed) reproduces it bit-exactly.
    Rng truth_rng(mix_seed(seed, "synth_truth"));

    GroundTruth& truth = result.truth;
    truth.region_scale.resize(static_cast<std::size_t>(R));
    for (int r = 0; r < R; ++r)
        truth.region_scale[static_cast<std::size_t>(r)] = truth_rng.uniform(0.5, 1.5);

    // Exact per-region mixture counts; leftover voxels become null loadings.
    int n_pos = static_cast<int>(std::lround(config.frac_pos * m));
    int n_neg = static_cast<int>(std::lround(config.frac_neg * m));
    n_pos = std::min(n_pos, m);
    n_neg = std::min(n_neg, m - n_pos);

    truth.loadings.assign(static_cast<std::size_t>(P), 0.0);
    for (int r = 0; r < R; ++r) {
        std::vector<int> kind(static_cast<std::size_t>(m), 2);  // 0 pos, 1 neg, 2 null
        for (int i = 0; i < n_pos; ++i) kind[static_cast<std::size_t>(i)] = 0;
        for (int i = 0; i < n_neg; ++i) kind[static_cast<std::size_t>(n_pos + i)] = 1;
        truth_rng.shuffle(kind);
        for (int i = 0; i < m; ++i) {
            const int v = r * m + i;
            switch (kind[static_cast<std::size_t>(i)]) {
                case 0:
                    truth.loadings[static_cast<std::size_t>(v)] =
                        truth_rng.normal(1.0, config.loading_sd);
                    break;
                case 1:
                    truth.loadings[static_cast<std::size_t>(v)] =
                        truth_rng.normal(-1.0, config.loading_sd);
                    break;
                default:
                    break;  // exactly zero
            }
        }
    }

    truth.site_offsets.resize(S, P);
    for (int s = 0; s < S; ++s)
        for (int v = 0; v < P; ++v)
            truth.site_offsets(s, v) = truth_rng.normal(0.0, config.site_offset_sd);

    const double q = config.quadratic ? kQuadraticWeight : 0.0;

    result.tables.reserve(static_cast<std::size_t>(S));
    for (int s = 0; s < S; ++s) {
        const std::string label = two_digit_label("site_", s);
        truth.site_labels.push_back(label);
        Rng site_rng(mix_seed(seed, "synth_site", static_cast<std::uint64_t>(s)));

        SubjectTable table;
        const int n = config.n_per_site;
        table.subject_ids.reserve(static_cast<std::size_t>(n));
        table.sites.assign(static_cast<std::size_t>(n), label);
        table.ages.resize(n);
        table.features.resize(n, P);

        const auto [lo, hi] = config.age_ranges[static_cast<std::size_t>(s)];
        for (int i = 0; i < n; ++i) {
            std::string id = label + "_s";
            const std::string num = std::to_string(i);
            id.append(4 - std::min<std::size_t>(4, num.size()), '0');
            id += num;
            table.subject_ids.push_back(std::move(id));
            table.ages[i] = site_rng.uniform(lo, hi);
        }

        for (int i = 0; i < n; ++i) {
            const double t = latent_t(table.ages[i]);
            const double shape = t + q * (t * t - 1.0);
            for (int v = 0; v < P; ++v) {
                const double g = config.region_signal_scale *
                                 truth.region_scale[static_cast<std::size_t>(v / m)] * shape;
                double x = kBaseline + truth.loadings[static_cast<std::size_t>(v)] * g +
                           truth.site_offsets(s, v);
                if (config.noise_sd > 0.0) x += site_rng.normal(0.0, config.noise_sd);
                table.features(i, v) = x;
            }
        }
        result.tables.push_back(std::move(table));
    }
    return result;
}

SynthConfig default_benchmark() {
    SynthConfig config;
    config.age_ranges = {{18.0, 88.0}, {20.0, 86.0}, {18.0, 85.0}, {30.0, 85.0}};
    return config;
}

}  // namespace agestack
