#include <doctest.h>

#include <fstream>

#include "hsbi/dataset.hpp"
#include "hsbi/diagnostics.hpp"

using namespace hsbi;

TEST_CASE("single-site generation charges exactly n true calls, deterministically") {
    const auto& m = get_task("gaussian_linear");
    const SingleSiteDataset a = generate_single_site_dataset(m, 1000, 7);
    CHECK(a.ledger.true_simulator_calls == 1000);
    CHECK(a.ledger.surrogate_draws == 0);
    const SingleSiteDataset b = generate_single_site_dataset(m, 1000, 7);
    CHECK(a.theta_g == b.theta_g);
    CHECK(a.eta == b.eta);
    CHECK(a.y == b.y);
    // prior support holds row-wise
    for (long i = 0; i < a.n; ++i) CHECK(a.theta_g(i, 0) > 0.0);
    CHECK_THROWS_AS(generate_single_site_dataset(m, 0, 7), DomainError);
}

TEST_CASE("direct generation charges n * n_sites true calls") {
    const auto& m = get_task("gaussian_mixture");
    const MultiSiteDataset ds = generate_direct_dataset(m, 100, 10, 3);
    CHECK(ds.ledger.true_simulator_calls == 1000);
    CHECK(ds.y.cols() == 10);
    CHECK(ds.eta.cols() == 10);
}

TEST_CASE("functional dataset carries per-site schedules") {
    const auto& m = get_task("seir");
    const SingleSiteDataset ds = generate_single_site_dataset(m, 5, 11, 6);
    CHECK(ds.schedule.cols() == 6);
    CHECK(ds.y.cols() == 6);
    for (long i = 0; i < ds.n; ++i) {
        for (long c = 0; c < 6; ++c) {
            CHECK(ds.schedule(i, c) >= 0.0);
            CHECK(ds.schedule(i, c) <= m.horizon);
            CHECK(ds.y(i, c) >= 0.0);
        }
        for (long c = 1; c < 6; ++c) CHECK(ds.schedule(i, c) >= ds.schedule(i, c - 1));
    }
}

TEST_CASE("count observations embed through log1p and invert to integers") {
    const auto& m = get_task("sir");
    Vec y(3);
    y << 0, 7, 120;
    const Vec v = embed_obs(m, y);
    CHECK(v[0] == doctest::Approx(0.0));
    CHECK(v[1] == doctest::Approx(std::log1p(7.0)));
    const Vec back = unembed_obs(m, v);
    CHECK(back == y);
    // non-count tasks pass through
    const auto& gl = get_task("gaussian_linear");
    Vec z(2);
    z << -1.5, 2.5;
    CHECK(embed_obs(gl, z) == z);
    CHECK(unembed_obs(gl, z) == z);
}

TEST_CASE("dataset persistence round-trips bitwise") {
    const auto& m = get_task("slcp");
    const fs::path dir = fs::temp_directory_path() / "hsbi_test_ds";
    fs::remove_all(dir);
    const SingleSiteDataset ds = generate_single_site_dataset(m, 50, 5);
    save_dataset(dir, ds, json{{"note", "test"}});
    const SingleSiteDataset loaded = load_single_site_dataset(dir);
    CHECK(loaded.theta_g == ds.theta_g);
    CHECK(loaded.eta == ds.eta);
    CHECK(loaded.y == ds.y);
    CHECK(loaded.seed == ds.seed);
    CHECK(loaded.ledger.true_simulator_calls == ds.ledger.true_simulator_calls);
    fs::remove_all(dir);
}

TEST_CASE("corrupted array length raises a format error naming the field") {
    const auto& m = get_task("gaussian_linear");
    const fs::path dir = fs::temp_directory_path() / "hsbi_test_corrupt";
    fs::remove_all(dir);
    const SingleSiteDataset ds = generate_single_site_dataset(m, 10, 5);
    save_dataset(dir, ds, json::object());
    {
        std::ofstream trunc(dir / "eta.bin", std::ios::binary | std::ios::trunc);
        trunc << "short";
    }
    CHECK_THROWS_WITH_AS(load_single_site_dataset(dir), doctest::Contains("eta"), FormatError);
    fs::remove_all(dir);
}

TEST_CASE("schema version mismatch raises an incompatibility error") {
    const auto& m = get_task("gaussian_linear");
    const fs::path dir = fs::temp_directory_path() / "hsbi_test_ver";
    fs::remove_all(dir);
    const SingleSiteDataset ds = generate_single_site_dataset(m, 4, 5);
    save_dataset(dir, ds, json::object());
    json manifest = read_manifest(dir);
    manifest["schema_version"] = 999;
    write_manifest(dir, manifest);
    CHECK_THROWS_WITH_AS(load_single_site_dataset(dir), doctest::Contains("incompatible"),
                         FormatError);
    fs::remove_all(dir);
}

TEST_CASE("oracle surrogate reproduces the direct data distribution on matched seeds") {
    const auto& m = get_task("gaussian_linear");
    const int n = 300, n_sites = 3;
    // surrogate = the true simulator wrapped; budget must stay untouched
    BudgetLedger outer;
    const MultiSiteDataset lf_like = generate_multi_site_dataset_with(
        m,
        [&m](const Vec& tg, const Vec& es, const std::vector<double>& sched, std::uint64_t s,
             BudgetLedger* ledger) {
            if (ledger) ledger->surrogate_draws += 1;
            return m.simulator(tg, es, sched, s);
        },
        n, n_sites, 42);
    CHECK(lf_like.ledger.true_simulator_calls == 0);
    CHECK(lf_like.ledger.surrogate_draws == n * n_sites);

    const MultiSiteDataset direct = generate_direct_dataset(m, n, n_sites, 42);
    // identical prior draws on matched seeds
    CHECK(lf_like.theta_g == direct.theta_g);
    CHECK(lf_like.eta == direct.eta);

    // flattened observations agree in distribution (two-sample mmd2)
    Mat a(n, lf_like.y.cols()), b(n, direct.y.cols());
    for (long i = 0; i < n; ++i) {
        a.row(i) = lf_like.y.row(i);
        b.row(i) = direct.y.row(i);
    }
    const Mmd2Result res = mmd2_test(a, b, 100, 11);
    CHECK(res.p_value > 0.05);
    (void)outer;
}
