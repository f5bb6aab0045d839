#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <appemb/graph.hpp>
#include <appemb/rng.hpp>
#include <appemb/tensor.hpp>
#include <cmath>

#include "oracles.hpp"

using appemb::Graph;
using appemb::Parameter;
using appemb::Rng;
using appemb::Tensor;
using D = double;

namespace {

Tensor<D> random_tensor(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
    Tensor<D> t(r, c);
    for (auto& v : t.data) v = rng.uniform(-scale, scale);
    return t;
}

}  // namespace

TEST_CASE("matmul matches the naive triple-loop oracle") {
    Rng rng(41);
    for (int iter = 0; iter < 100; ++iter) {
        const std::size_t m = 1 + rng.below(5), k = 1 + rng.below(5), n = 1 + rng.below(5);
        Tensor<D> a = random_tensor(m, k, rng);
        Tensor<D> b = random_tensor(k, n, rng);
        Tensor<D> c = appemb::matmul(a, b);
        auto expect = oracle::matmul(a.data, b.data, m, k, n);
        for (std::size_t i = 0; i < expect.size(); ++i)
            CHECK(c.data[i] == doctest::Approx(expect[i]).epsilon(1e-12));
    }
}

TEST_CASE("matmul transpose flags agree with explicit transposition") {
    Rng rng(42);
    for (int iter = 0; iter < 50; ++iter) {
        const std::size_t m = 1 + rng.below(4), k = 1 + rng.below(4), n = 1 + rng.below(4);
        Tensor<D> a = random_tensor(k, m, rng);   // holds A^T
        Tensor<D> b = random_tensor(n, k, rng);   // holds B^T
        Tensor<D> at(m, k), bt(k, n);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) at.at(i, p) = a.at(p, i);
        for (std::size_t p = 0; p < k; ++p)
            for (std::size_t j = 0; j < n; ++j) bt.at(p, j) = b.at(j, p);
        Tensor<D> want = appemb::matmul(at, bt);
        Tensor<D> got1 = appemb::matmul(a, bt, true, false);
        Tensor<D> got2 = appemb::matmul(at, b, false, true);
        Tensor<D> got3 = appemb::matmul(a, b, true, true);
        for (std::size_t i = 0; i < want.numel(); ++i) {
            CHECK(got1.data[i] == doctest::Approx(want.data[i]).epsilon(1e-12));
            CHECK(got2.data[i] == doctest::Approx(want.data[i]).epsilon(1e-12));
            CHECK(got3.data[i] == doctest::Approx(want.data[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("softmax basics") {
    Graph<D> g;
    auto id = g.input(Tensor<D>::row({0.0, 0.0}));
    auto s = g.softmax_rows(id);
    CHECK(g.val(s).data[0] == doctest::Approx(0.5));
    CHECK(g.val(s).data[1] == doctest::Approx(0.5));

    // rows sum to one and stay nonnegative
    Rng rng(7);
    Graph<D> g2;
    auto x = g2.input(random_tensor(6, 9, rng, 4.0));
    auto sm = g2.softmax_rows(x);
    for (std::size_t r = 0; r < 6; ++r) {
        D total = 0;
        for (std::size_t c = 0; c < 9; ++c) {
            const D p = g2.val(sm).at(r, c);
            CHECK(p >= 0.0);
            total += p;
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("leaky_relu definition") {
    Graph<D> g;
    auto x = g.input(Tensor<D>::row({-1.0, 2.0}));
    auto y = g.leaky_relu(x, 0.01);
    CHECK(g.val(y).data[0] == doctest::Approx(-0.01));
    CHECK(g.val(y).data[1] == doctest::Approx(2.0));
}

TEST_CASE("sigmoid_ce spot values and oracle") {
    // logit 0 against target 1 -> ln 2
    Graph<D> g;
    auto z = g.input(Tensor<D>::row({0.0}));
    auto l = g.sigmoid_ce(z, Tensor<D>::row({1.0}));
    CHECK(g.val(l).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    // saturated logits with matching targets -> loss toward 0
    Graph<D> g2;
    auto z2 = g2.input(Tensor<D>::row({40.0, -40.0}));
    auto l2 = g2.sigmoid_ce(z2, Tensor<D>::row({1.0, 0.0}));
    CHECK(g2.val(l2).item() < 1e-12);

    // random case against the direct formula
    Rng rng(11);
    for (int iter = 0; iter < 100; ++iter) {
        Tensor<D> logits = random_tensor(2, 3, rng, 3.0);
        Tensor<D> targets(2, 3);
        for (auto& t : targets.data) t = rng.bernoulli(0.5) ? 1.0 : 0.0;
        Graph<D> gg;
        auto zz = gg.input(logits);
        auto ll = gg.sigmoid_ce(zz, targets);
        std::vector<double> zv(logits.data.begin(), logits.data.end());
        std::vector<double> tv(targets.data.begin(), targets.data.end());
        CHECK(gg.val(ll).item() == doctest::Approx(oracle::sigmoid_ce(zv, tv)).epsilon(1e-10));
    }
}

TEST_CASE("softmax_ce spot values and oracle") {
    // uniform logits over 4 classes -> ln 4
    Graph<D> g;
    auto z = g.input(Tensor<D>(1, 4, 0.7));
    auto l = g.softmax_ce_rows(z, {2});
    CHECK(g.val(l).item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    // M=2, logits [1, 0], target 0 -> ln(1 + e^-1)
    Graph<D> g2;
    auto z2 = g2.input(Tensor<D>::row({1.0, 0.0}));
    auto l2 = g2.softmax_ce_rows(z2, {0});
    CHECK(g2.val(l2).item() == doctest::Approx(std::log1p(std::exp(-1.0))).epsilon(1e-12));

    // loss decreases monotonically as a correct one-hot logit is scaled up
    double prev = 1e9;
    for (double s : {0.5, 1.0, 2.0, 4.0}) {
        Graph<D> gg;
        Tensor<D> t(1, 5);
        t.data[3] = s;
        auto zz = gg.input(t);
        auto ll = gg.softmax_ce_rows(zz, {3});
        CHECK(gg.val(ll).item() < prev);
        prev = gg.val(ll).item();
    }

    // random rows against the direct formula
    Rng rng(13);
    for (int iter = 0; iter < 100; ++iter) {
        const std::size_t ncls = 2 + rng.below(6);
        Tensor<D> logits = random_tensor(3, ncls, rng, 4.0);
        std::vector<std::uint32_t> cls;
        for (int r = 0; r < 3; ++r) cls.push_back(static_cast<std::uint32_t>(rng.below(ncls)));
        Graph<D> gg;
        auto ll = gg.softmax_ce_rows(gg.input(logits), cls);
        double want = 0;
        for (int r = 0; r < 3; ++r) {
            std::vector<double> row(logits.row_ptr(r), logits.row_ptr(r) + ncls);
            want += oracle::softmax_ce(row, cls[r]);
        }
        want /= 3.0;
        CHECK(gg.val(ll).item() == doctest::Approx(want).epsilon(1e-10));
    }
}

TEST_CASE("backward identity and accumulation basics") {
    // loss = mean of parameter (sum/n) -> gradient = 1/n each; scaled sum -> all ones
    Parameter<D> p("p", Tensor<D>(2, 3, 1.5));
    Graph<D> g;
    auto l = g.scale(g.mean(g.param(p)), 6.0);  // = sum of elements
    g.backward(l);
    for (D v : p.grad.data) CHECK(v == doctest::Approx(1.0));

    // parameter used twice additively -> gradient 2
    Parameter<D> q("q", Tensor<D>(1, 1, 0.3));
    Graph<D> g2;
    auto qid = g2.param(q);
    auto s = g2.add(qid, qid);
    g2.backward(s);
    CHECK(q.grad.data[0] == doctest::Approx(2.0));
}

TEST_CASE("backward rejects non-scalar losses") {
    Parameter<D> p("p", Tensor<D>(1, 3, 1.0));
    Graph<D> g;
    auto x = g.param(p);
    CHECK_THROWS(g.backward(x));
}

TEST_CASE("shape mismatch errors name the primitive") {
    Graph<D> g;
    auto a = g.input(Tensor<D>(2, 3, 1.0));
    auto b = g.input(Tensor<D>(2, 3, 1.0));
    CHECK_THROWS_WITH_AS(g.matmul(a, b), doctest::Contains("matmul"), std::runtime_error);
    Graph<D> g2;
    auto c = g2.input(Tensor<D>(2, 3, 1.0));
    auto d = g2.input(Tensor<D>(3, 2, 1.0));
    CHECK_THROWS_WITH_AS(g2.add(c, d), doctest::Contains("add"), std::runtime_error);
}

TEST_CASE("dropout is identity in eval mode and unbiased in training") {
    Rng rng(99);
    Tensor<D> x = random_tensor(20, 50, rng);
    Graph<D> g;
    auto xid = g.input(x);
    auto y = g.dropout(xid, 0.3, /*training=*/false, nullptr);
    CHECK(y == xid);  // exact identity: same node

    // training mode: on average a p-fraction zeroed, survivors scaled
    Rng drop_rng(5);
    Graph<D> g2;
    auto x2 = g2.input(Tensor<D>(50, 40, 1.0));
    auto y2 = g2.dropout(x2, 0.3, true, &drop_rng);
    std::size_t zeros = 0;
    const auto& out = g2.val(y2);
    double mean = 0;
    for (D v : out.data) {
        if (v == 0.0)
            ++zeros;
        else
            CHECK(v == doctest::Approx(1.0 / 0.7));
        mean += v;
    }
    mean /= static_cast<double>(out.numel());
    CHECK(static_cast<double>(zeros) / static_cast<double>(out.numel()) ==
          doctest::Approx(0.3).epsilon(0.1));
    CHECK(mean == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("gradients of every primitive pass finite differences") {
    Rng rng(123);
    // exercise each op inside one composite loss
    Parameter<D> w1("w1", random_tensor(4, 5, rng, 0.8));
    Parameter<D> w2("w2", random_tensor(5, 4, rng, 0.8));
    Parameter<D> gain("gain", Tensor<D>(1, 4, 1.0));
    Parameter<D> bias("bias", random_tensor(1, 4, rng, 0.2));
    Parameter<D> table("table", random_tensor(6, 5, rng, 0.9));
    Parameter<D> row("row", random_tensor(1, 4, rng, 0.5));
    Tensor<D> x = random_tensor(3, 4, rng, 1.1);
    Tensor<D> targets(3, 4);
    for (auto& t : targets.data) t = rng.bernoulli(0.5) ? 1.0 : 0.0;

    std::vector<Parameter<D>*> params{&w1, &w2, &gain, &bias, &table, &row};
    auto make_loss = [&](bool with_grad) {
        Graph<D> g;
        auto xid = g.input(x);
        auto h = g.matmul(xid, g.param(w1));                       // 3x5
        auto emb = g.gather(g.param(table), {1, 4, 2});            // 3x5
        h = g.add(h, emb);
        h = g.tanh(h);
        auto h2 = g.matmul(h, g.param(w2));                        // 3x4
        h2 = g.add_row(h2, g.param(row));
        h2 = g.layer_norm(h2, g.param(gain), g.param(bias), 1e-6);
        auto cat = g.concat_rows({h2, g.slice_rows(h2, 0, 2)});    // 5x4
        auto act = g.leaky_relu(cat, 0.01);
        auto sm = g.softmax_rows(g.sigmoid(act));
        auto ce = g.softmax_ce_rows(g.slice_rows(sm, 0, 3), {1, 0, 3});
        auto sce = g.sigmoid_ce(g.slice_rows(act, 0, 3), targets);
        auto reg = g.scale(g.sum_squares(g.param(w1)), 1e-3);
        auto loss = g.add_n({ce, sce, reg, g.mean(act)});
        if (with_grad) g.backward(loss);
        return g.val(loss).item();
    };

    Rng check_rng(77);
    auto rep = appemb::grad_check<D>(params, make_loss, check_rng, 10, 1e-5);
    CHECK(rep.max_rel_err < 1e-7);
}

TEST_CASE("mhsa gradient passes finite differences") {
    Rng rng(321);
    Parameter<D> q("q", random_tensor(3, 8, rng, 0.7));
    Parameter<D> k("k", random_tensor(4, 8, rng, 0.7));
    Parameter<D> v("v", random_tensor(4, 8, rng, 0.7));
    std::vector<Parameter<D>*> params{&q, &k, &v};
    std::vector<std::uint32_t> valid{1, 1, 0, 1};  // one masked key
    auto make_loss = [&](bool with_grad) {
        Graph<D> g;
        auto out = g.mhsa(g.param(q), g.param(k), g.param(v), 2, valid);
        auto loss = g.mean(g.tanh(out));
        if (with_grad) g.backward(loss);
        return g.val(loss).item();
    };
    Rng check_rng(9);
    auto rep = appemb::grad_check<D>(params, make_loss, check_rng, 12, 1e-5);
    CHECK(rep.max_rel_err < 1e-7);
}

TEST_CASE("mhsa attention rows sum to one over valid keys") {
    Rng rng(55);
    Graph<D> g;
    auto q = g.input(random_tensor(5, 8, rng));
    auto k = g.input(random_tensor(7, 8, rng));
    auto v = g.input(random_tensor(7, 8, rng));
    std::vector<std::uint32_t> valid{1, 0, 1, 1, 0, 1, 1};
    auto out = g.mhsa(q, k, v, 4, valid);
    const auto& probs = g.node(out).aux;
    for (std::size_t r = 0; r < probs.rows(); ++r) {
        double total = 0;
        for (std::size_t c = 0; c < probs.cols(); ++c) {
            total += probs.at(r, c);
            if (!valid[c]) CHECK(probs.at(r, c) == 0.0);
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("mhsa with no valid keys is an error") {
    Graph<D> g;
    Rng rng(3);
    auto q = g.input(random_tensor(2, 4, rng));
    auto k = g.input(random_tensor(3, 4, rng));
    auto v = g.input(random_tensor(3, 4, rng));
    CHECK_THROWS_AS(g.mhsa(q, k, v, 2, {0, 0, 0}), std::runtime_error);
}

TEST_CASE("grad_check is near-exact for a linear function") {
    Rng rng(17);
    Parameter<D> w("w", random_tensor(3, 3, rng));
    std::vector<Parameter<D>*> params{&w};
    Tensor<D> x = random_tensor(2, 3, rng);
    auto make_loss = [&](bool with_grad) {
        Graph<D> g;
        auto loss = g.mean(g.matmul(g.input(x), g.param(w)));
        if (with_grad) g.backward(loss);
        return g.val(loss).item();
    };
    Rng check_rng(1);
    auto rep = appemb::grad_check<D>(params, make_loss, check_rng, 9, 1e-5);
    CHECK(rep.max_rel_err < 1e-10);
}

TEST_CASE("grad_check on a single sigmoid_ce layer") {
    Rng rng(19);
    Parameter<D> w("w", random_tensor(4, 6, rng, 0.6));
    Parameter<D> b("b", random_tensor(1, 6, rng, 0.2));
    Tensor<D> x = random_tensor(2, 4, rng);
    Tensor<D> t(2, 6);
    for (auto& e : t.data) e = rng.bernoulli(0.4) ? 1.0 : 0.0;
    std::vector<Parameter<D>*> params{&w, &b};
    auto make_loss = [&](bool with_grad) {
        Graph<D> g;
        auto z = g.add_row(g.matmul(g.input(x), g.param(w)), g.param(b));
        auto loss = g.sigmoid_ce(z, t);
        if (with_grad) g.backward(loss);
        return g.val(loss).item();
    };
    Rng check_rng(2);
    // 1e-4 step: roundoff in (f+ - f-)/2eps dominates below that for near-zero coords
    auto rep = appemb::grad_check<D>(params, make_loss, check_rng, 12, 1e-4);
    CHECK(rep.max_rel_err < 1e-7);
}

TEST_CASE("sharing-group gradient equals sum of broken-sharing contributions") {
    Rng rng(23);
    Tensor<D> w0 = random_tensor(3, 3, rng, 0.7);
    Tensor<D> x = random_tensor(2, 3, rng);

    // shared: one parameter used at two sites
    Parameter<D> shared("shared", w0);
    {
        Graph<D> g;
        auto wid = g.param(shared);
        auto h = g.tanh(g.matmul(g.input(x), wid));
        auto loss = g.mean(g.matmul(h, wid, false, true));
        g.backward(loss);
    }

    // broken: two copies, one per site, contributions added afterwards
    Parameter<D> c1("c1", w0), c2("c2", w0);
    {
        Graph<D> g;
        auto h = g.tanh(g.matmul(g.input(x), g.param(c1)));
        auto loss = g.mean(g.matmul(h, g.param(c2), false, true));
        g.backward(loss);
    }
    for (std::size_t i = 0; i < shared.grad.data.size(); ++i)
        CHECK(shared.grad.data[i] ==
              doctest::Approx(c1.grad.data[i] + c2.grad.data[i]).epsilon(1e-12));
}

TEST_CASE("no primitive output contains NaN or Inf for finite inputs") {
    Rng rng(31);
    Graph<D> g;
    auto x = g.input(random_tensor(4, 8, rng, 30.0));  // large logits
    auto probes = {g.softmax_rows(x), g.sigmoid(x), g.tanh(x)};
    for (auto id : probes) CHECK_FALSE(appemb::has_non_finite(g.val(id)));
    auto ce = g.sigmoid_ce(x, Tensor<D>(4, 8, 1.0));
    CHECK_FALSE(appemb::has_non_finite(g.val(ce)));
}
