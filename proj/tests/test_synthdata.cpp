#include "agestack/synthdata.hpp"

#include <cmath>

#include "agestack/elastic_net.hpp"
#include "agestack/errors.hpp"
#include "doctest.h"

using namespace agestack;

namespace {

double corr(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const Eigen::ArrayXd ac = a.array() - a.mean();
    const Eigen::ArrayXd bc = b.array() - b.mean();
    return (ac * bc).sum() / std::sqrt(ac.square().sum() * bc.square().sum());
}

}  // namespace

TEST_SUITE("synthdata") {

TEST_CASE("default benchmark shape") {
    const SynthConfig config = default_benchmark();
    CHECK(config.n_sites * config.n_per_site == 1200);
    CHECK(config.width() == 1000);
    CHECK(config.n_regions == 50);

    SynthConfig small = config;
    small.n_per_site = 5;
    small.n_regions = 3;
    small.voxels_per_region = 4;
    const SynthResult result = generate(small, 1);
    REQUIRE(result.tables.size() == 4);
    CHECK(result.tables[0].site() == "site_00");
    CHECK(result.tables[3].site() == "site_03");
    CHECK(result.tables[0].n() == 5);
    CHECK(result.tables[0].width() == 12);
    CHECK(result.parcellation.n_regions == 3);
    CHECK(result.parcellation.voxels_of(1) == std::vector<int>{4, 5, 6, 7});
    for (const auto& t : result.tables) CHECK(validate_table(t).empty());
    for (int i = 0; i < 5; ++i) {
        CHECK(result.tables[2].ages[i] >= 18.0);
        CHECK(result.tables[2].ages[i] <= 85.0);
    }
}

TEST_CASE("generation is a pure function of config and seed") {
    SynthConfig config = default_benchmark();
    config.n_per_site = 8;
    config.n_regions = 2;
    config.voxels_per_region = 3;
    const SynthResult a = generate(config, 77);
    const SynthResult b = generate(config, 77);
    const SynthResult c = generate(config, 78);
    for (std::size_t s = 0; s < a.tables.size(); ++s) {
        CHECK(table_digest(a.tables[s]) == table_digest(b.tables[s]));
        CHECK(!(table_digest(a.tables[s]) == table_digest(c.tables[s])));
    }
}

TEST_CASE("config validation") {
    SynthConfig config = default_benchmark();
    config.frac_null = 0.3;  // fractions now sum to 1.1
    CHECK_THROWS_AS(generate(config, 0), validation_error);

    config = default_benchmark();
    config.age_ranges.pop_back();
    CHECK_THROWS_AS(generate(config, 0), validation_error);

    config = default_benchmark();
    config.noise_sd = -1.0;
    CHECK_THROWS_AS(generate(config, 0), validation_error);
}

TEST_CASE("noiseless single-sign regions track age almost perfectly") {
    SynthConfig config = default_benchmark();
    config.n_sites = 1;
    config.age_ranges = {{18.0, 88.0}};
    config.n_per_site = 60;
    config.n_regions = 4;
    config.voxels_per_region = 5;
    config.frac_pos = 1.0;
    config.frac_neg = 0.0;
    config.frac_null = 0.0;
    config.noise_sd = 0.0;
    config.site_offset_sd = 0.0;

    const SynthResult result = generate(config, 5);
    const Eigen::MatrixXd means = region_means(result.tables[0], result.parcellation);
    for (int r = 0; r < 4; ++r)
        CHECK(std::abs(corr(means.col(r), result.tables[0].ages)) >= 0.99);
}

TEST_CASE("mixed-sign loadings cancel in the region mean but not for a fitted model") {
    SynthConfig config = default_benchmark();
    config.n_sites = 1;
    config.age_ranges = {{18.0, 88.0}};
    config.n_per_site = 200;
    config.n_regions = 1;
    config.voxels_per_region = 20;
    config.frac_pos = 0.5;
    config.frac_neg = 0.5;
    config.frac_null = 0.0;
    config.loading_sd = 0.05;  // near-exact +1/-1 cancellation
    config.site_offset_sd = 0.0;

    const SynthResult result = generate(config, 9);
    const SubjectTable& table = result.tables[0];
    const Eigen::MatrixXd means = region_means(table, result.parcellation);
    CHECK(std::abs(corr(means.col(0), table.ages)) < 0.3);

    const Eigen::MatrixXd voxels = region_view(table, result.parcellation, 0);
    const LinearModel model = tune_fit(voxels, table.ages, TuneGrid{}, 3);
    const Eigen::VectorXd yhat = predict(model, voxels);
    CHECK(std::abs(corr(yhat, table.ages)) > 0.8);
}

TEST_CASE("site offsets are constant within a site and neutral toward age") {
    SynthConfig config = default_benchmark();
    config.n_per_site = 300;
    config.n_regions = 2;
    config.voxels_per_region = 4;
    config.noise_sd = 0.0;
    config.region_signal_scale = 0.0;  // x = baseline + offset exactly

    const SynthResult result = generate(config, 21);
    for (std::size_t s = 0; s < result.tables.size(); ++s) {
        const auto& f = result.tables[s].features;
        for (int v = 0; v < f.cols(); ++v) {
            CHECK((f.col(v).array() - f(0, v)).abs().maxCoeff() < 1e-12);
            CHECK(f(0, v) == doctest::Approx(10.0 + result.truth.site_offsets(
                                                        static_cast<int>(s), v)));
        }
    }

    // Pooled subject-level mean offset vs age: random per-site constants
    // carry no age information.
    Eigen::VectorXd offsets(1200), ages(1200);
    int row = 0;
    for (std::size_t s = 0; s < result.tables.size(); ++s) {
        const double mean_offset = result.truth.site_offsets.row(static_cast<int>(s)).mean();
        for (int i = 0; i < result.tables[s].n(); ++i, ++row) {
            offsets[row] = mean_offset;
            ages[row] = result.tables[s].ages[i];
        }
    }
    CHECK(std::abs(corr(offsets, ages)) < 0.1);
}

TEST_CASE("null-loading voxels carry no age signal") {
    SynthConfig config = default_benchmark();
    config.n_sites = 1;
    config.age_ranges = {{18.0, 88.0}};
    config.n_per_site = 50;
    config.n_regions = 2;
    config.voxels_per_region = 10;
    config.noise_sd = 0.0;
    config.site_offset_sd = 0.0;

    const SynthResult result = generate(config, 4);
    int nulls = 0;
    for (int v = 0; v < 20; ++v) {
        if (result.truth.loadings[static_cast<std::size_t>(v)] != 0.0) continue;
        ++nulls;
        const Eigen::VectorXd col = result.tables[0].features.col(v);
        CHECK((col.array() - 10.0).abs().maxCoeff() < 1e-12);
    }
    CHECK(nulls == 4);  // frac_null 0.2 of 10 voxels, exact per region
}

}  // TEST_SUITE
