#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lab/gradcheck.hpp"
#include "lab/train.hpp"

using namespace lab;

namespace {

ModelConfig tiny_cls(int vocab, int dim) {
    ModelConfig c;
    c.n_layer = 2;
    c.n_head = 1;
    c.d_model = 16;
    c.ctx = 16;
    c.head = HeadKind::kClassification;
    c.vocab = vocab;
    c.input_dim = dim;
    c.codec_half_range = dim == 1 ? 1.0 : 4.0;
    return c;
}

ModelConfig tiny_reg(int dim) {
    ModelConfig c = tiny_cls(2, dim);
    c.head = HeadKind::kRegression;
    c.vocab = 0;
    return c;
}

}  // namespace

TEST_CASE("ntp loss: uniform logits give ln V per head") {
    Rng rng(1);
    const int v = 23;
    ModelConfig cfg = tiny_cls(v, 2);
    Model<float> m{cfg, init_weights<float>(cfg, rng)};
    for (auto& e : m.params.entries)
        std::fill(e.value.data.begin(), e.value.data.end(), 0.0f);
    const int s = 6;
    std::vector<int32_t> tx(size_t(s), 2), ty(size_t(s), 3), gx(size_t(s), 1), gy(size_t(s), 0);
    Tape<float> tape;
    const auto fr = forward_classification(tape, m, tx, ty, 1, s);
    const int loss = ntp_loss(tape, fr, gx, gy);
    CHECK(tape.scalar(loss) == doctest::Approx(2.0 * std::log(double(v))).epsilon(1e-5));

    // V=2, zero logits, any targets -> 2 ln 2
    ModelConfig cfg2 = tiny_cls(2, 2);
    Model<float> m2{cfg2, init_weights<float>(cfg2, rng)};
    for (auto& e : m2.params.entries)
        std::fill(e.value.data.begin(), e.value.data.end(), 0.0f);
    std::vector<int32_t> t0(size_t(s), 0), t1(size_t(s), 1);
    Tape<float> tape2;
    const auto fr2 = forward_classification(tape2, m2, t0, t1, 1, s);
    CHECK(tape2.scalar(ntp_loss(tape2, fr2, t1, t0)) ==
          doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-6));

    // 1D model: one head only -> ln V
    ModelConfig cfg1 = tiny_cls(v, 1);
    Model<float> m1{cfg1, init_weights<float>(cfg1, rng)};
    for (auto& e : m1.params.entries)
        std::fill(e.value.data.begin(), e.value.data.end(), 0.0f);
    Tape<float> tape1;
    const auto fr1 = forward_classification(tape1, m1, tx, {}, 1, s);
    CHECK(tape1.scalar(ntp_loss(tape1, fr1, gx, {})) ==
          doctest::Approx(std::log(double(v))).epsilon(1e-5));
}

TEST_CASE("cross entropy collapses to zero with a dominant correct logit") {
    Tape<double> tape;
    Tensor<double> logits({3, 4});
    for (int r = 0; r < 3; ++r) logits.data[size_t(r * 4 + r)] = 40.0;
    const int id = tape.constant(std::move(logits));
    CHECK(tape.scalar(tape.cross_entropy(id, {0, 1, 2})) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("regression loss: zero predictor baselines and constant offsets") {
    Rng rng(2);
    ModelConfig cfg = tiny_reg(2);
    Model<float> m{cfg, init_weights<float>(cfg, rng)};
    for (auto& e : m.params.entries)
        std::fill(e.value.data.begin(), e.value.data.end(), 0.0f);

    const int s = 4;
    std::vector<float> ctx(size_t(s) * 2, 0.5f);
    std::vector<float> tgt(size_t(s) * 2, 0.0f);
    Rng noise(3);
    {
        // predictor output is identically zero; targets zero -> loss 0
        Tape<float> tape;
        CHECK(tape.scalar(regression_loss_ncl(tape, m, ctx, tgt, 1, s, 0.0, noise)) ==
              doctest::Approx(0.0));
    }
    {
        // constant offset (d, 0) against zero targets -> loss d^2
        const float d = 0.3f;
        m.params.find("head.b")->value.data[0] = d;
        Tape<float> tape;
        CHECK(tape.scalar(regression_loss_ncl(tape, m, ctx, tgt, 1, s, 0.0, noise)) ==
              doctest::Approx(double(d) * d).epsilon(1e-6));
    }
}

TEST_CASE("sigma=0 is exactly the noiseless path and is deterministic") {
    Rng rng(5);
    ModelConfig cfg = tiny_reg(2);
    Model<float> m{cfg, init_weights<float>(cfg, rng)};
    const int s = 8;
    std::vector<float> ctx(size_t(s) * 2), tgt(size_t(s) * 2);
    for (auto& v : ctx) v = float(rng.normal());
    for (auto& v : tgt) v = float(rng.normal());

    Rng n1(7), n2(99);
    Tape<float> t1, t2;
    const float a = t1.scalar(regression_loss_ncl(t1, m, ctx, tgt, 1, s, 0.0, n1));
    const float b = t2.scalar(regression_loss_ncl(t2, m, ctx, tgt, 1, s, 0.0, n2));
    CHECK(a == b);  // rng untouched at sigma=0

    // against the model's own noiseless predictions the clean loss is zero,
    // so any increase under sigma > 0 is noise propagating through the model
    std::vector<float> self_tgt;
    {
        Tape<float> t;
        const auto fr = forward_regression(t, m, ctx, 1, s);
        self_tgt = t.val(fr.pred).data;
    }
    Rng quiet(0);
    Tape<float> t3;
    CHECK(t3.scalar(regression_loss_ncl(t3, m, ctx, self_tgt, 1, s, 0.0, quiet)) == 0.0f);
    Rng n3(8);
    for (int i = 0; i < 10; ++i) {
        Tape<float> t;
        CHECK(double(t.scalar(regression_loss_ncl(t, m, ctx, self_tgt, 1, s, 0.5, n3))) > 0.0);
    }
}

TEST_CASE("train: zero steps leaves the initialization untouched") {
    const Dataset ds = build_dataset("sine", 16, 21);
    ModelConfig mcfg = tiny_cls(16, 1);
    TrainConfig tcfg;
    tcfg.steps = 0;
    tcfg.schedule = {};
    tcfg.seed = 77;
    const TrainResult res = train(ds, mcfg, tcfg);
    Rng expected_rng = Rng(77).fork(1);
    const auto expected = init_weights<float>(mcfg, expected_rng);
    for (size_t i = 0; i < expected.entries.size(); ++i)
        CHECK(res.model.params.entries[i].value.data == expected.entries[i].value.data);
}

TEST_CASE("train: same seed and config give identical logs and weights") {
    const Dataset ds = build_dataset("sine", 24, 5);
    ModelConfig mcfg = tiny_cls(16, 1);
    TrainConfig tcfg;
    tcfg.steps = 60;
    tcfg.schedule = {{30, 1e-3}, {30, 1e-4}};
    tcfg.batch = 4;
    tcfg.interval = 20;
    tcfg.seed = 31;
    tcfg.eval_rollout_trajs = 2;
    const TrainResult a = train(ds, mcfg, tcfg);
    const TrainResult b = train(ds, mcfg, tcfg);
    REQUIRE(a.log.records.size() == b.log.records.size());
    CHECK(a.log.records.size() == 3);
    for (size_t i = 0; i < a.log.records.size(); ++i) {
        CHECK(a.log.records[i].step == b.log.records[i].step);
        CHECK(a.log.records[i].train_loss == b.log.records[i].train_loss);
        CHECK(a.log.records[i].test_loss == b.log.records[i].test_loss);
    }
    for (size_t i = 0; i < a.model.params.entries.size(); ++i)
        CHECK(a.model.params.entries[i].value.data == b.model.params.entries[i].value.data);
}

TEST_CASE("train: loss trends down over a short sine run") {
    const Dataset ds = build_dataset("sine", 64, 11);
    ModelConfig mcfg = tiny_cls(32, 1);
    TrainConfig tcfg;
    tcfg.steps = 600;
    tcfg.schedule = {{600, 1e-3}};
    tcfg.batch = 8;
    tcfg.interval = 50;
    tcfg.seed = 3;
    tcfg.eval_rollout_trajs = 0;
    const TrainResult res = train(ds, mcfg, tcfg);
    REQUIRE(res.log.records.size() == 12);
    // mean of the last tenth of phase-1 records below the mean of the first tenth
    const size_t tenth = std::max<size_t>(1, res.log.records.size() / 10);
    double head = 0, tail = 0;
    for (size_t i = 0; i < tenth; ++i) {
        head += res.log.records[i].train_loss;
        tail += res.log.records[res.log.records.size() - 1 - i].train_loss;
    }
    CHECK(tail < head);
    // records strictly increasing in step
    for (size_t i = 1; i < res.log.records.size(); ++i)
        CHECK(res.log.records[i].step > res.log.records[i - 1].step);
}

TEST_CASE("train: a diverging run aborts with the offending step") {
    const Dataset ds = build_dataset("sine", 16, 3);
    ModelConfig mcfg = tiny_cls(16, 1);
    TrainConfig tcfg;
    tcfg.steps = 200;
    tcfg.schedule = {{200, 1e18}};  // lr large enough to blow up within a few steps
    tcfg.batch = 4;
    tcfg.interval = 100;
    tcfg.seed = 1;
    tcfg.eval_rollout_trajs = 0;
    CHECK_THROWS_AS(train(ds, mcfg, tcfg), TrainDiverged);
}

TEST_CASE("gradcheck: full 2-layer model losses against finite differences") {
    // classification, two heads, multi-head attention
    {
        ModelConfig cfg;
        cfg.n_layer = 2;
        cfg.n_head = 2;
        cfg.d_model = 8;
        cfg.ctx = 6;
        cfg.head = HeadKind::kClassification;
        cfg.vocab = 9;
        cfg.input_dim = 2;
        Rng rng(17);
        Model<double> m{cfg, init_weights<double>(cfg, rng)};
        const int b = 2, s = 5;
        std::vector<int32_t> tx, ty, gx, gy;
        for (int i = 0; i < b * s; ++i) {
            tx.push_back(int32_t(rng.below(9)));
            ty.push_back(int32_t(rng.below(9)));
            gx.push_back(int32_t(rng.below(9)));
            gy.push_back(int32_t(rng.below(9)));
        }
        auto loss_fn = [&](Model<double>& model) {
            Tape<double> tape;
            const auto fr = forward_classification(tape, model, tx, ty, b, s);
            const int loss = ntp_loss(tape, fr, gx, gy);
            const double v = tape.scalar(loss);
            tape.backward(loss);
            return v;
        };
        m.params.zero_grads();
        loss_fn(m);
        std::vector<Tensor<double>> ad;
        for (auto& e : m.params.entries) ad.push_back(e.grad);
        auto fd = finite_difference_gradient<double>(
            [&](const ParamStore<double>&) { return loss_fn(m); }, m.params, 1e-5);
        CHECK(gradient_relative_error(ad, fd) < 1e-4);
    }
    // regression with context noise disabled (deterministic loss)
    {
        ModelConfig cfg;
        cfg.n_layer = 2;
        cfg.n_head = 1;
        cfg.d_model = 8;
        cfg.ctx = 6;
        cfg.head = HeadKind::kRegression;
        cfg.input_dim = 2;
        Rng rng(18);
        Model<double> m{cfg, init_weights<double>(cfg, rng)};
        const int b = 2, s = 4;
        std::vector<double> ctx(size_t(b * s * 2)), tgt(size_t(b * s * 2));
        for (auto& v : ctx) v = rng.normal();
        for (auto& v : tgt) v = rng.normal();
        auto loss_fn = [&](Model<double>& model) {
            Rng quiet(0);
            Tape<double> tape;
            const int loss = regression_loss_ncl(tape, model, ctx, tgt, b, s, 0.0, quiet);
            const double v = tape.scalar(loss);
            tape.backward(loss);
            return v;
        };
        m.params.zero_grads();
        loss_fn(m);
        std::vector<Tensor<double>> ad;
        for (auto& e : m.params.entries) ad.push_back(e.grad);
        auto fd = finite_difference_gradient<double>(
            [&](const ParamStore<double>&) { return loss_fn(m); }, m.params, 1e-5);
        CHECK(gradient_relative_error(ad, fd) < 1e-4);
    }
}
