#include <doctest.h>

#include "hsbi/autodiff.hpp"

using namespace hsbi;

namespace {

// central-difference check of d(loss)/d(param) for every parameter entry
void check_gradients(ParamStore<double>& store,
                     const std::function<double(Tape<double>&)>& loss_fn, double tol = 1e-6) {
    auto grads = store.zero_grads();
    {
        Tape<double> tape(&store, &grads);
        loss_fn(tape);
    }
    const double h = 1e-6;
    for (int p = 0; p < store.size(); ++p) {
        auto& value = store.value(p);
        for (long c = 0; c < value.cols(); ++c) {
            for (long r = 0; r < value.rows(); ++r) {
                const double keep = value(r, c);
                value(r, c) = keep + h;
                Tape<double> tp(&store, nullptr);
                const double up = loss_fn(tp);
                value(r, c) = keep - h;
                Tape<double> tm(&store, nullptr);
                const double dn = loss_fn(tm);
                value(r, c) = keep;
                const double fd = (up - dn) / (2.0 * h);
                const double ad = grads[static_cast<std::size_t>(p)](r, c);
                INFO("param ", store.name(p), " entry (", r, ",", c, ") fd=", fd, " ad=", ad);
                CHECK(std::fabs(fd - ad) <= tol * std::max({1.0, std::fabs(fd), std::fabs(ad)}));
            }
        }
    }
}

MatX<double> random_matrix(long rows, long cols, Rng& rng, double scale = 1.0) {
    MatX<double> m(rows, cols);
    for (long c = 0; c < cols; ++c)
        for (long r = 0; r < rows; ++r) m(r, c) = scale * rng.normal();
    return m;
}

}  // namespace

TEST_CASE("matmul + bias + relu chain gradients") {
    Rng rng(1);
    ParamStore<double> store;
    const int w = store.add("W", 4, 3);
    const int b = store.add("b", 1, 3, ParamKind::Bias);
    store.value(w) = random_matrix(4, 3, rng);
    store.value(b) = random_matrix(1, 3, rng);
    const MatX<double> x = random_matrix(5, 4, rng);
    check_gradients(store, [&](Tape<double>& t) {
        auto out = t.relu(t.add_row(t.matmul(t.constant(x), t.param(w)), t.param(b)));
        auto loss = t.sum_squares(out);
        t.backward(loss);
        return t.value(loss)(0, 0);
    });
}

TEST_CASE("softmax rows gradients") {
    Rng rng(2);
    ParamStore<double> store;
    const int a = store.add("A", 3, 4);
    store.value(a) = random_matrix(3, 4, rng);
    const MatX<double> mix = random_matrix(3, 4, rng);
    check_gradients(store, [&](Tape<double>& t) {
        auto s = t.softmax_rows(t.param(a));
        auto loss = t.sum_squares(t.hadamard(s, t.constant(mix)));
        t.backward(loss);
        return t.value(loss)(0, 0);
    });
}

TEST_CASE("layer norm gradients for input, gain, and bias") {
    Rng rng(3);
    ParamStore<double> store;
    const int a = store.add("A", 4, 6);
    const int g = store.add("g", 1, 6, ParamKind::LayerNormGain);
    const int b = store.add("b", 1, 6, ParamKind::LayerNormBias);
    store.value(a) = random_matrix(4, 6, rng);
    store.value(g) = random_matrix(1, 6, rng, 0.5);
    store.value(g).array() += 1.0;
    store.value(b) = random_matrix(1, 6, rng, 0.2);
    check_gradients(store, [&](Tape<double>& t) {
        auto out = t.layer_norm(t.param(a), t.param(g), t.param(b));
        auto loss = t.sum_squares(out);
        t.backward(loss);
        return t.value(loss)(0, 0);
    }, 5e-6);
}

TEST_CASE("gelu gradients") {
    Rng rng(4);
    ParamStore<double> store;
    const int a = store.add("A", 3, 5);
    store.value(a) = random_matrix(3, 5, rng, 1.5);
    check_gradients(store, [&](Tape<double>& t) {
        auto loss = t.sum_squares(t.gelu(t.param(a)));
        t.backward(loss);
        return t.value(loss)(0, 0);
    });
}

TEST_CASE("attention-style composite gradients") {
    Rng rng(5);
    ParamStore<double> store;
    const int wq = store.add("Wq", 6, 6);
    const int wk = store.add("Wk", 6, 6);
    const int wv = store.add("Wv", 6, 6);
    store.value(wq) = random_matrix(6, 6, rng, 0.5);
    store.value(wk) = random_matrix(6, 6, rng, 0.5);
    store.value(wv) = random_matrix(6, 6, rng, 0.5);
    const MatX<double> x = random_matrix(4, 6, rng);
    check_gradients(store, [&](Tape<double>& t) {
        auto X = t.constant(x);
        auto Q = t.matmul(X, t.param(wq));
        auto K = t.matmul(X, t.param(wk));
        auto V = t.matmul(X, t.param(wv));
        std::vector<Tape<double>::Var> heads;
        for (int h = 0; h < 2; ++h) {
            auto Qh = t.slice_cols(Q, h * 3, 3);
            auto Kh = t.slice_cols(K, h * 3, 3);
            auto Vh = t.slice_cols(V, h * 3, 3);
            auto attn = t.softmax_rows(t.scale(t.matmul(Qh, t.transpose(Kh)), 1.0 / std::sqrt(3.0)));
            heads.push_back(t.matmul(attn, Vh));
        }
        auto loss = t.sum_squares(t.concat_cols(heads));
        t.backward(loss);
        return t.value(loss)(0, 0);
    }, 5e-6);
}

TEST_CASE("embedding row gather scatters gradients to the right rows") {
    Rng rng(6);
    ParamStore<double> store;
    const int table = store.add("E", 5, 3, ParamKind::Embedding);
    store.value(table) = random_matrix(5, 3, rng);
    const std::vector<int> ids = {4, 0, 0, 2};
    check_gradients(store, [&](Tape<double>& t) {
        auto rows = t.embedding_rows(t.param(table), ids);
        auto loss = t.sum_squares(rows);
        t.backward(loss);
        return t.value(loss)(0, 0);
    });
}

TEST_CASE("select_rows and logistic bce gradients") {
    Rng rng(7);
    ParamStore<double> store;
    const int w = store.add("W", 3, 1);
    store.value(w) = random_matrix(3, 1, rng);
    const MatX<double> x = random_matrix(6, 3, rng);
    MatX<double> labels(4, 1);
    labels << 1, 0, 1, 1;
    const std::vector<int> rows = {0, 2, 3, 5};
    check_gradients(store, [&](Tape<double>& t) {
        auto logits = t.select_rows(t.matmul(t.constant(x), t.param(w)), rows);
        auto loss = t.logistic_bce(logits, labels);
        t.backward(loss);
        return t.value(loss)(0, 0);
    });
}

TEST_CASE("dropout masks and rescales deterministically per rng stream") {
    ParamStore<double> store;
    const int a = store.add("A", 100, 40);
    store.value(a).setOnes();
    auto grads = store.zero_grads();
    Tape<double> tape(&store, &grads);
    Rng rng(9);
    auto d = tape.dropout(tape.param(a), 0.25, rng);
    const auto& v = tape.value(d);
    long zeros = 0;
    for (long c = 0; c < v.cols(); ++c)
        for (long r = 0; r < v.rows(); ++r) {
            if (v(r, c) == 0.0) {
                ++zeros;
            } else {
                CHECK(v(r, c) == doctest::Approx(1.0 / 0.75));
            }
        }
    CHECK(static_cast<double>(zeros) / static_cast<double>(v.size()) ==
          doctest::Approx(0.25).epsilon(0.1));
}

TEST_CASE("params are cached per tape and gradients accumulate across uses") {
    ParamStore<double> store;
    const int a = store.add("A", 2, 2);
    store.value(a) << 1, 2, 3, 4;
    auto grads = store.zero_grads();
    Tape<double> tape(&store, &grads);
    auto p1 = tape.param(a);
    auto p2 = tape.param(a);
    CHECK(p1.idx == p2.idx);
    auto loss = tape.sum_squares(tape.add(p1, p2));  // d/dA sum (2A)^2 = 8A
    tape.backward(loss);
    CHECK(grads[0](0, 0) == doctest::Approx(8.0));
    CHECK(grads[0](1, 1) == doctest::Approx(32.0));
}

TEST_CASE("backward requires a scalar root") {
    ParamStore<double> store;
    const int a = store.add("A", 2, 2);
    store.value(a).setOnes();
    auto grads = store.zero_grads();
    Tape<double> tape(&store, &grads);
    auto p = tape.param(a);
    CHECK_THROWS_AS(tape.backward(p), NumericError);
}
