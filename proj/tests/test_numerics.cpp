#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lab/adam.hpp"
#include "lab/gradcheck.hpp"
#include "lab/rng.hpp"
#include "lab/tape.hpp"

using namespace lab;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t.data) v = scale * rng.normal();
    return t;
}

// Reduces an arbitrary output to a scalar that is sensitive to every element.
int weighted_sum(Tape<double>& tape, int out, Rng& rng) {
    Tensor<double> w(tape.val(out).shape);
    for (auto& v : w.data) v = rng.normal();
    return tape.sum_all(tape.mul(out, tape.constant(w)));
}

// Runs `build` once through the tape (forward + backward), snapshots the
// autodiff gradients, then compares against coordinate-wise central
// differences. `build` may keep running backward during FD evaluations; the
// snapshot keeps the comparison clean.
double check_gradients(ParamStore<double>& params,
                       const std::function<double(Tape<double>&, ParamStore<double>&)>& build) {
    params.zero_grads();
    {
        Tape<double> tape;
        build(tape, params);
    }
    std::vector<Tensor<double>> ad;
    for (auto& e : params.entries) ad.push_back(e.grad);
    auto fd = finite_difference_gradient<double>(
        [&](const ParamStore<double>&) {
            Tape<double> t2;
            return build(t2, params);
        },
        params, 1e-5);
    return gradient_relative_error(ad, fd);
}

}  // namespace

TEST_CASE("polynomial and constant gradients") {
    ParamStore<double> ps;
    auto& w = ps.add("w", {1});
    w.value.data[0] = 3.0;

    Tape<double> tape;
    const int wid = tape.param(w);
    const int loss = tape.sum_all(tape.mul(wid, wid));
    CHECK(tape.scalar(loss) == doctest::Approx(9.0));
    tape.backward(loss);
    CHECK(w.grad.data[0] == doctest::Approx(6.0));

    // constant w.r.t. w
    ps.zero_grads();
    Tape<double> t2;
    (void)t2.param(w);
    const int c = t2.constant(Tensor<double>::scalar(4.2));
    const int loss2 = t2.sum_all(c);
    t2.backward(loss2);
    CHECK(w.grad.data[0] == 0.0);
}

TEST_CASE("finite difference oracle on closed forms") {
    ParamStore<double> ps;
    auto& w = ps.add("w", {1});
    w.value.data[0] = 3.0;
    auto fd = finite_difference_gradient<double>(
        [](const ParamStore<double>& p) {
            const double x = p.entries[0].value.data[0];
            return x * x;
        },
        ps, 1e-5);
    CHECK(fd[0].data[0] == doctest::Approx(6.0).epsilon(1e-8));

    w.value.data[0] = 0.0;
    fd = finite_difference_gradient<double>(
        [](const ParamStore<double>& p) { return std::sin(p.entries[0].value.data[0]); }, ps,
        1e-5);
    CHECK(fd[0].data[0] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("gradcheck: matmul all transpose combinations, 2d and batched") {
    Rng rng(101);
    for (int ta = 0; ta < 2; ++ta)
        for (int tb = 0; tb < 2; ++tb) {
            for (int rep = 0; rep < 30; ++rep) {
                const int64_t m = 1 + int64_t(rng.below(4)), k = 1 + int64_t(rng.below(4)),
                              n = 1 + int64_t(rng.below(4));
                ParamStore<double> ps;
                auto& a = ps.add("a", ta ? Shape{k, m} : Shape{m, k});
                auto& b = ps.add("b", tb ? Shape{n, k} : Shape{k, n});
                a.value = random_tensor(a.value.shape, rng);
                b.value = random_tensor(b.value.shape, rng);
                a.value.requires_grad = b.value.requires_grad = true;
                Rng wrng(rng.next_u64());
                const double err = check_gradients(ps, [&](Tape<double>& t, ParamStore<double>& p) {
                    Rng wr(wrng);
                    const int out = t.matmul(t.param(p.entries[0]), t.param(p.entries[1]),
                                             ta != 0, tb != 0);
                    const int loss = weighted_sum(t, out, wr);
                    const double v = t.scalar(loss);
                    t.backward(loss);
                    return v;
                });
                CHECK(err < 1e-4);
            }
        }
    // batched
    for (int rep = 0; rep < 20; ++rep) {
        const int64_t bsz = 1 + int64_t(rng.below(3)), m = 1 + int64_t(rng.below(3)),
                      k = 1 + int64_t(rng.below(3)), n = 1 + int64_t(rng.below(3));
        ParamStore<double> ps;
        auto& a = ps.add("a", {bsz, m, k});
        auto& b = ps.add("b", {bsz, k, n});
        a.value = random_tensor(a.value.shape, rng);
        b.value = random_tensor(b.value.shape, rng);
        Rng wrng(rng.next_u64());
        const double err = check_gradients(ps, [&](Tape<double>& t, ParamStore<double>& p) {
            Rng wr(wrng);
            const int out = t.matmul(t.param(p.entries[0]), t.param(p.entries[1]));
            const int loss = weighted_sum(t, out, wr);
            const double v = t.scalar(loss);
            t.backward(loss);
            return v;
        });
        CHECK(err < 1e-4);
    }
}

TEST_CASE("gradcheck: elementwise ops, broadcasts and reductions") {
    Rng rng(202);
    for (int rep = 0; rep < 100; ++rep) {
        const int64_t r = 1 + int64_t(rng.below(5)), c = 1 + int64_t(rng.below(6));
        ParamStore<double> ps;
        auto& a = ps.add("a", {r, c});
        auto& b = ps.add("b", {r, c});
        auto& row = ps.add("row", {c});
        a.value = random_tensor(a.value.shape, rng);
        b.value = random_tensor(b.value.shape, rng);
        row.value = random_tensor(row.value.shape, rng);
        Rng wrng(rng.next_u64());
        const int which = rep % 5;
        const double err = check_gradients(ps, [&](Tape<double>& t, ParamStore<double>& p) {
            Rng wr(wrng);
            const int ia = t.param(p.entries[0]);
            const int ib = t.param(p.entries[1]);
            const int irow = t.param(p.entries[2]);
            int out = 0;
            switch (which) {
                case 0: out = t.add(ia, ib); break;
                case 1: out = t.sub(ia, ib); break;
                case 2: out = t.mul(ia, ib); break;
                case 3: out = t.scale(ia, 1.7); break;
                default: out = t.add_row(ia, irow); break;
            }
            const int loss = which == 3 ? t.mean_all(t.mul(out, t.add(ib, ib)))
                                        : weighted_sum(t, out, wr);
            const double v = t.scalar(loss);
            t.backward(loss);
            return v;
        });
        CHECK(err < 1e-4);
    }
}

TEST_CASE("gradcheck: gelu, softmax, causal softmax, layer norm") {
    Rng rng(303);
    for (int rep = 0; rep < 100; ++rep) {
        const int64_t r = 1 + int64_t(rng.below(4)), c = 2 + int64_t(rng.below(6));
        ParamStore<double> ps;
        auto& x = ps.add("x", {r, c});
        auto& g = ps.add("g", {c});
        auto& b = ps.add("b", {c});
        x.value = random_tensor(x.value.shape, rng);
        g.value = random_tensor(g.value.shape, rng, 0.5);
        for (auto& v : g.value.data) v += 1.0;
        b.value = random_tensor(b.value.shape, rng, 0.3);
        Rng wrng(rng.next_u64());
        const int which = rep % 3;
        const double err = check_gradients(ps, [&](Tape<double>& t, ParamStore<double>& p) {
            Rng wr(wrng);
            const int ix = t.param(p.entries[0]);
            int out = 0;
            switch (which) {
                case 0: out = t.gelu(ix); break;
                case 1: out = t.softmax(ix); break;
                default: out = t.layer_norm(ix, t.param(p.entries[1]), t.param(p.entries[2]));
            }
            const int loss = weighted_sum(t, out, wr);
            const double v = t.scalar(loss);
            t.backward(loss);
            return v;
        });
        CHECK(err < 1e-4);
    }
    // causal softmax wants [B,T,T]
    for (int rep = 0; rep < 30; ++rep) {
        const int64_t bsz = 1 + int64_t(rng.below(3)), tt = 1 + int64_t(rng.below(4));
        ParamStore<double> ps;
        auto& x = ps.add("x", {bsz, tt, tt});
        x.value = random_tensor(x.value.shape, rng);
        Rng wrng(rng.next_u64());
        const double err = check_gradients(ps, [&](Tape<double>& t, ParamStore<double>& p) {
            Rng wr(wrng);
            const int out = t.softmax_causal(t.param(p.entries[0]));
            const int loss = weighted_sum(t, out, wr);
            const double v = t.scalar(loss);
            t.backward(loss);
            return v;
        });
        CHECK(err < 1e-4);
    }
}

TEST_CASE("gradcheck: embedding, head split/merge, cross entropy") {
    Rng rng(404);
    for (int rep = 0; rep < 100; ++rep) {
        const int64_t v = 3 + int64_t(rng.below(6)), w = 2 + int64_t(rng.below(6));
        const int64_t rows = 1 + int64_t(rng.below(6));
        ParamStore<double> ps;
        auto& table = ps.add("table", {v, w});
        table.value = random_tensor(table.value.shape, rng);
        std::vector<int32_t> ids;
        for (int64_t i = 0; i < rows; ++i) ids.push_back(int32_t(rng.below(uint64_t(v))));
        Rng wrng(rng.next_u64());
        const double err = check_gradients(ps, [&](Tape<double>& t, ParamStore<double>& p) {
            Rng wr(wrng);
            const int out = t.embed(t.param(p.entries[0]), ids);
            const int loss = weighted_sum(t, out, wr);
            const double v2 = t.scalar(loss);
            t.backward(loss);
            return v2;
        });
        CHECK(err < 1e-4);
    }
    // split + merge round trip inside attention-like shapes
    for (int rep = 0; rep < 30; ++rep) {
        const int bsz = 1 + int(rng.below(2)), seq = 1 + int(rng.below(3));
        const int heads = 1 + int(rng.below(2));
        const int64_t width = 2 * heads;
        ParamStore<double> ps;
        auto& qkv = ps.add("qkv", {int64_t(bsz) * seq, 3 * width});
        qkv.value = random_tensor(qkv.value.shape, rng);
        Rng wrng(rng.next_u64());
        const double err = check_gradients(ps, [&](Tape<double>& t, ParamStore<double>& p) {
            Rng wr(wrng);
            const int iq = t.param(p.entries[0]);
            const int q = t.split_head(iq, 0, bsz, seq, heads);
            const int k = t.split_head(iq, 1, bsz, seq, heads);
            const int vv = t.split_head(iq, 2, bsz, seq, heads);
            const int att = t.matmul(t.softmax_causal(t.scale(t.matmul(q, k, false, true), 0.7)),
                                     vv);
            const int out = t.merge_head(att, bsz, seq, heads);
            const int loss = weighted_sum(t, out, wr);
            const double v2 = t.scalar(loss);
            t.backward(loss);
            return v2;
        });
        CHECK(err < 1e-4);
    }
    // cross entropy
    for (int rep = 0; rep < 100; ++rep) {
        const int64_t rows = 1 + int64_t(rng.below(5)), v = 2 + int64_t(rng.below(8));
        ParamStore<double> ps;
        auto& logits = ps.add("logits", {rows, v});
        logits.value = random_tensor(logits.value.shape, rng, 2.0);
        std::vector<int32_t> targets;
        for (int64_t i = 0; i < rows; ++i) targets.push_back(int32_t(rng.below(uint64_t(v))));
        const double err = check_gradients(ps, [&](Tape<double>& t, ParamStore<double>& p) {
            const int loss = t.cross_entropy(t.param(p.entries[0]), targets);
            const double v2 = t.scalar(loss);
            t.backward(loss);
            return v2;
        });
        CHECK(err < 1e-4);
    }
}

TEST_CASE("adam: zero gradient is the identity") {
    ParamStore<float> ps;
    auto& w = ps.add("w", {4});
    for (int i = 0; i < 4; ++i) w.value.data[i] = float(i) - 1.5f;
    auto st = AdamState<float>::init(ps);
    const auto before = w.value.data;
    ps.zero_grads();
    adam_step(ps, st);
    CHECK(w.value.data == before);
    CHECK(st.t == 1);
}

TEST_CASE("adam: first and second step match the hand-evaluated recurrence") {
    // scalar parameter, gradient g twice, defaults b1=0.9 b2=0.999 eps=1e-8
    const double g = 0.37, lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ParamStore<double> ps;
    auto& w = ps.add("w", {1});
    w.value.data[0] = 1.0;
    auto st = AdamState<double>::init(ps);
    st.lr = lr;

    w.grad.data[0] = g;
    adam_step(ps, st);
    // t=1: mhat = g, vhat = g^2 -> step = lr * g / (|g| + eps)
    const double step1 = lr * g / (std::abs(g) + eps);
    CHECK(w.value.data[0] == doctest::Approx(1.0 - step1).epsilon(1e-12));
    // magnitude approximately lr * sign(g)
    CHECK(std::abs(step1) == doctest::Approx(lr).epsilon(1e-6));

    w.grad.data[0] = g;
    adam_step(ps, st);
    const double m2 = b1 * (1 - b1) * g + (1 - b1) * g;
    const double v2 = b2 * (1 - b2) * g * g + (1 - b2) * g * g;
    const double mhat = m2 / (1 - b1 * b1);
    const double vhat = v2 / (1 - b2 * b2);
    const double step2 = lr * mhat / (std::sqrt(vhat) + eps);
    CHECK(w.value.data[0] == doctest::Approx(1.0 - step1 - step2).epsilon(1e-12));
    CHECK(st.t == 2);
}

TEST_CASE("adam: shape mismatch is rejected") {
    ParamStore<float> ps;
    ps.add("w", {4});
    auto st = AdamState<float>::init(ps);
    st.m[0] = Tensor<float>({3});
    CHECK_THROWS_AS(adam_step(ps, st), std::invalid_argument);
}

TEST_CASE("non-finite detection raises") {
    Tape<float> tape;
    Tensor<float> big = Tensor<float>::full({4}, 3e38f);
    const int a = tape.constant(big);
    CHECK_THROWS_AS(tape.scale(a, 10.0f), NumericsError);

    Tensor<float> nan_in = Tensor<float>::full({2}, std::numeric_limits<float>::quiet_NaN());
    CHECK_THROWS_AS(tape.constant(nan_in), NumericsError);
}

TEST_CASE("backward rejects non-scalar losses") {
    Tape<double> tape;
    ParamStore<double> ps;
    auto& w = ps.add("w", {3});
    const int id = tape.param(w);
    CHECK_THROWS_AS(tape.backward(id), std::invalid_argument);
}

TEST_CASE("tape evaluation is deterministic bit for bit") {
    Rng rng(7);
    ParamStore<float> ps;
    auto& a = ps.add("a", {8, 8});
    for (auto& v : a.value.data) v = float(rng.normal());
    auto run = [&]() {
        Tape<float> t;
        const int ia = t.param(ps.entries[0]);
        const int out = t.softmax(t.matmul(ia, ia, false, true));
        return t.val(out).data;
    };
    CHECK(run() == run());
}

TEST_CASE("float32 gemm matches the generic path") {
    Rng rng(55);
    for (int rep = 0; rep < 50; ++rep) {
        const int64_t m = 1 + int64_t(rng.below(40)), k = 1 + int64_t(rng.below(40)),
                      n = 1 + int64_t(rng.below(40));
        const bool ta = rng.below(2) != 0, tb = rng.below(2) != 0;
        std::vector<float> a(size_t(m * k)), b(size_t(k * n)), c1(size_t(m * n)),
            c2(size_t(m * n));
        for (auto& v : a) v = float(rng.normal());
        for (auto& v : b) v = float(rng.normal());
        gemm<float>(ta, tb, m, n, k, a.data(), b.data(), c1.data(), false);
        // reference in double
        std::vector<double> ad(a.begin(), a.end()), bd(b.begin(), b.end()), cd(size_t(m * n));
        gemm<double>(ta, tb, m, n, k, ad.data(), bd.data(), cd.data(), false);
        double max_err = 0;
        for (size_t i = 0; i < c1.size(); ++i)
            max_err = std::max(max_err, std::abs(double(c1[i]) - cd[i]));
        CHECK(max_err < 1e-3 * double(k));
        (void)c2;
    }
}
