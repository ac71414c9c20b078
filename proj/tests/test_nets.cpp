#include <doctest.h>

#include <numeric>

#include "hsbi/flow.hpp"
#include "hsbi/tasks.hpp"

using namespace hsbi;

namespace {

NetConfig small_transformer() {
    NetConfig cfg;
    cfg.transformer = {2, 4, 2, 32, 4};
    cfg.embedding = {8, 8, 8, 8, 1.0};
    return cfg;
}

template <typename S>
TokenItem<S> random_item(VectorFieldNet<S>& net, const TokenLayout& layout, std::uint64_t seed) {
    Rng rng(seed);
    Vec target(layout.target_dim), cond(layout.cond_dim);
    for (long i = 0; i < target.size(); ++i) target[i] = rng.normal();
    for (long i = 0; i < cond.size(); ++i) cond[i] = rng.normal();
    std::vector<double> sched;
    if (layout.functional)
        for (int i = 0; i < layout.points_per_site * layout.n_sites; ++i)
            sched.push_back(rng.uniform(0.0, layout.horizon));
    return net.make_item(layout, assemble_tokens(layout, target, cond, sched));
}

}  // namespace

TEST_CASE("init is deterministic per seed and differs across seeds") {
    const auto& m = get_task("gaussian_linear");
    const TokenLayout layout = build_layout(m, FlowRole::Posterior, 3);
    VectorFieldNet<double> a(small_transformer(), NetShape::from_layout(layout));
    VectorFieldNet<double> b(small_transformer(), NetShape::from_layout(layout));
    VectorFieldNet<double> c(small_transformer(), NetShape::from_layout(layout));
    a.init_params(7);
    b.init_params(7);
    c.init_params(8);
    bool all_equal = true, any_diff = false;
    for (int i = 0; i < a.params().size(); ++i) {
        all_equal = all_equal && (a.params().value(i) == b.params().value(i));
        any_diff = any_diff || (a.params().value(i) != c.params().value(i));
    }
    CHECK(all_equal);
    CHECK(any_diff);
    CHECK(a.fourier_basis() == b.fourier_basis());
}

TEST_CASE("initial forward pass is finite with O(1) magnitude") {
    const auto& m = get_task("slcp");
    const TokenLayout layout = build_layout(m, FlowRole::Posterior, 4);
    VectorFieldNet<double> net(small_transformer(), NetShape::from_layout(layout));
    net.init_params(3);
    auto item = random_item(net, layout, 11);
    const VecX<double> f = net.vector_field(item, 0.5);
    CHECK(f.allFinite());
    CHECK(f.cwiseAbs().maxCoeff() < 50.0);
    CHECK(f.size() == layout.target_dim);
}

TEST_CASE("permutation equivariance: shuffling token order leaves the field unchanged") {
    const auto& m = get_task("gaussian_linear");
    const TokenLayout layout = build_layout(m, FlowRole::Posterior, 5);
    NetConfig cfg = small_transformer();
    VectorFieldNet<float> net(cfg, NetShape::from_layout(layout));
    net.init_params(21);
    auto item = random_item(net, layout, 13);
    const VecX<float> base = net.vector_field(item, 0.3f);

    Rng rng(17);
    const int T = static_cast<int>(item.values.rows());
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<int> perm(static_cast<std::size_t>(T));
        std::iota(perm.begin(), perm.end(), 0);
        for (int i = T - 1; i > 0; --i)
            std::swap(perm[static_cast<std::size_t>(i)],
                      perm[static_cast<std::size_t>(rng.next_u64() % static_cast<std::uint64_t>(i + 1))]);
        TokenItem<float> shuffled = item;
        std::vector<int> inv(static_cast<std::size_t>(T));
        for (int i = 0; i < T; ++i) inv[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = i;
        for (int i = 0; i < T; ++i) {
            const int src = perm[static_cast<std::size_t>(i)];
            shuffled.values.row(i) = item.values.row(src);
            shuffled.fourier.row(i) = item.fourier.row(src);
            shuffled.id_rows[static_cast<std::size_t>(i)] = item.id_rows[static_cast<std::size_t>(src)];
            shuffled.pos_rows[static_cast<std::size_t>(i)] = item.pos_rows[static_cast<std::size_t>(src)];
            shuffled.grp_rows[static_cast<std::size_t>(i)] = item.grp_rows[static_cast<std::size_t>(src)];
        }
        for (std::size_t k = 0; k < shuffled.target_rows.size(); ++k)
            shuffled.target_rows[k] = inv[static_cast<std::size_t>(item.target_rows[k])];
        const VecX<float> shuffled_field = net.vector_field(shuffled, 0.3f);
        CHECK((shuffled_field - base).cwiseAbs().maxCoeff() < 1e-5f);
    }
}

TEST_CASE("single-token sequence stays finite") {
    HierarchicalModelSpec toy;
    toy.name = "toy";
    toy.globals = {{"g", 1, {Dist::normal(0, 1)}}};
    toy.local_name = "l";
    toy.d_local = 1;
    toy.local_prior = [](const Vec&, Rng& rng) { return Vec::Constant(1, rng.normal()); };
    toy.local_transforms = {ParameterTransform::identity()};
    toy.simulator = [](const Vec&, const Vec& e, const std::vector<double>&, std::uint64_t) {
        return e;
    };
    toy.d_obs = 1;
    const TokenLayout layout = build_layout(toy, FlowRole::PosteriorGlobal, 1);
    CHECK(layout.size() == 2);  // one global target + one obs token
    VectorFieldNet<double> net(small_transformer(), NetShape::from_layout(layout));
    net.init_params(5);
    auto item = random_item(net, layout, 6);
    CHECK(net.vector_field(item, 0.9).allFinite());
}

TEST_CASE("mlp with zero weights returns the output bias; dropout off at eval") {
    const auto& m = get_task("gaussian_mixture");
    const TokenLayout layout = build_layout(m, FlowRole::Posterior, 2);
    NetConfig cfg;
    cfg.arch = NetConfig::Arch::Mlp;
    cfg.mlp = {64, 2, 0.10};
    VectorFieldNet<double> net(cfg, NetShape::from_layout(layout));
    // zero everything, then set the output bias
    for (int i = 0; i < net.params().size(); ++i) net.params().value(i).setZero();
    auto& bout = net.params().value(net.params().size() - 1);
    bout.setConstant(0.75);
    auto item = random_item(net, layout, 30);
    const VecX<double> f = net.vector_field(item, 0.2);
    for (long i = 0; i < f.size(); ++i) CHECK(f[i] == doctest::Approx(0.75));

    // eval-mode determinism with nonzero weights
    net.init_params(44);
    const VecX<double> f1 = net.vector_field(item, 0.2);
    const VecX<double> f2 = net.vector_field(item, 0.2);
    CHECK(f1 == f2);
}

TEST_CASE("mlp rejects mismatched token counts") {
    const auto& m = get_task("gaussian_mixture");
    const TokenLayout fit = build_layout(m, FlowRole::Posterior, 2);
    const TokenLayout other = build_layout(m, FlowRole::Posterior, 3);
    NetConfig cfg;
    cfg.arch = NetConfig::Arch::Mlp;
    VectorFieldNet<double> net(cfg, NetShape::from_layout(fit));
    net.init_params(1);
    VectorFieldNet<double> donor(cfg, NetShape::from_layout(other));
    donor.init_params(1);
    auto item = random_item(donor, other, 2);
    CHECK_THROWS_AS(net.vector_field(item, 0.1), LayoutError);
}

namespace {

// shared FD harness over the full cfm loss at float64
template <typename BuildNet>
std::pair<int, int> fd_probe(const BuildNet& build, const TokenLayout& layout, int n_probes,
                             std::uint64_t seed) {
    VectorFieldNet<double> net = build();
    net.init_params(derive_seed(seed, 1));
    std::vector<TokenItem<double>> items;
    std::vector<VecX<double>> targets;
    for (int i = 0; i < 4; ++i) {
        items.push_back(random_item(net, layout, derive_seed(seed, 2, i)));
        VecX<double> t(layout.target_dim);
        Rng rng(derive_seed(seed, 3, i));
        for (long k = 0; k < t.size(); ++k) t[k] = rng.normal();
        targets.push_back(std::move(t));
    }
    std::vector<std::uint64_t> item_seeds;
    for (int i = 0; i < 4; ++i) item_seeds.push_back(derive_seed(seed, 4, i));

    auto loss_value = [&]() {
        double total = 0.0;
        for (std::size_t i = 0; i < items.size(); ++i) {
            Rng rng(item_seeds[i]);
            const double t = rng.uniform01();
            VecX<double> eps(layout.target_dim);
            for (long k = 0; k < eps.size(); ++k) eps[k] = rng.normal();
            const VecX<double> theta_t =
                t * targets[i] + (1.0 - (1.0 - 1e-4) * t) * eps;
            const VecX<double> u = (targets[i] - (1.0 - 1e-4) * theta_t) / (1.0 - (1.0 - 1e-4) * t);
            items[i].set_target_state(theta_t);
            const VecX<double> v = net.vector_field(items[i], t);
            total += (v - u).squaredNorm();
        }
        return total / static_cast<double>(items.size());
    };

    auto grads = net.params().zero_grads();
    {
        std::vector<TokenItem<double>*> ptrs;
        std::vector<const VecX<double>*> tptrs;
        for (std::size_t i = 0; i < items.size(); ++i) {
            ptrs.push_back(&items[i]);
            tptrs.push_back(&targets[i]);
        }
        cfm_slice_backward<double>(net, std::span<TokenItem<double>* const>(ptrs),
                                   std::span<const VecX<double>* const>(tptrs),
                                   std::span<const std::uint64_t>(item_seeds), 1e-4,
                                   1.0 / static_cast<double>(items.size()), false, grads);
    }

    Rng pick(derive_seed(seed, 9));
    int ok = 0, total_checked = 0;
    const double h = 1e-5;
    for (int probe = 0; probe < n_probes; ++probe) {
        const int p = static_cast<int>(pick.next_u64() % static_cast<std::uint64_t>(net.params().size()));
        auto& value = net.params().value(p);
        const long r = static_cast<long>(pick.next_u64() % static_cast<std::uint64_t>(value.rows()));
        const long c = static_cast<long>(pick.next_u64() % static_cast<std::uint64_t>(value.cols()));
        const double keep = value(r, c);
        value(r, c) = keep + h;
        const double up = loss_value();
        value(r, c) = keep - h;
        const double dn = loss_value();
        value(r, c) = keep;
        const double fd = (up - dn) / (2.0 * h);
        const double ad = grads[static_cast<std::size_t>(p)](r, c);
        ++total_checked;
        const double denom = std::max({1e-8, std::fabs(fd), std::fabs(ad)});
        if (std::fabs(fd - ad) / denom <= 1e-4 || std::fabs(fd - ad) <= 1e-8) ++ok;
    }
    return {ok, total_checked};
}

}  // namespace

TEST_CASE("transformer cfm-loss gradients match central differences at float64") {
    const auto& m = get_task("gaussian_mixture");
    const TokenLayout layout = build_layout(m, FlowRole::Posterior, 3);
    auto [ok, total] = fd_probe(
        [&] {
            NetConfig cfg = small_transformer();
            return VectorFieldNet<double>(cfg, NetShape::from_layout(layout));
        },
        layout, 200, 612);
    CHECK(ok >= total * 99 / 100);
}

TEST_CASE("mlp cfm-loss gradients match central differences at float64") {
    const auto& m = get_task("gaussian_mixture");
    const TokenLayout layout = build_layout(m, FlowRole::Posterior, 3);
    auto [ok, total] = fd_probe(
        [&] {
            NetConfig cfg;
            cfg.arch = NetConfig::Arch::Mlp;
            cfg.mlp = {32, 2, 0.10};
            return VectorFieldNet<double>(cfg, NetShape::from_layout(layout));
        },
        layout, 200, 613);
    CHECK(ok >= total * 99 / 100);
}

TEST_CASE("config invariants are enforced") {
    const auto& m = get_task("gaussian_linear");
    const TokenLayout layout = build_layout(m, FlowRole::Posterior, 2);
    NetConfig bad = small_transformer();
    bad.transformer.d_lat = 30;  // not divisible by 4 heads
    bad.transformer.n_heads = 4;
    CHECK_THROWS_AS(VectorFieldNet<double>(bad, NetShape::from_layout(layout)), ConfigError);
    NetConfig odd = small_transformer();
    odd.embedding.d_fn = 7;
    CHECK_THROWS_AS(VectorFieldNet<double>(odd, NetShape::from_layout(layout)), ConfigError);
}
