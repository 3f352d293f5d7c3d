#include "lab/model.hpp"

#include <cmath>

namespace lab {

nlohmann::json ModelConfig::to_json() const {
    return {{"n_layer", n_layer},     {"n_head", n_head},
            {"d_model", d_model},     {"ctx", ctx},
            {"head", head_name(head)}, {"vocab", vocab},
            {"input_dim", input_dim}, {"codec_half_range", codec_half_range}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.n_layer = j.at("n_layer").get<int>();
    c.n_head = j.at("n_head").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.ctx = j.at("ctx").get<int>();
    c.head = j.at("head").get<std::string>() == "cls" ? HeadKind::kClassification
                                                      : HeadKind::kRegression;
    c.vocab = j.at("vocab").get<int>();
    c.input_dim = j.at("input_dim").get<int>();
    c.codec_half_range = j.at("codec_half_range").get<double>();
    c.validate();
    return c;
}

std::vector<std::string> trace_site_names(const ModelConfig& cfg) {
    std::vector<std::string> names;
    names.push_back("embedding");
    for (int l = 0; l < cfg.n_layer; ++l) {
        const std::string p = std::to_string(l) + ".";
        for (const char* s : {"attn_in", "attn_out_pre_residual", "attn_out_post_residual",
                              "mlp_in", "mlp_hidden", "mlp_out_pre_residual",
                              "mlp_out_post_residual"})
            names.push_back(p + s);
    }
    names.push_back("final_norm");
    return names;
}

namespace {

template <typename T>
void fill_normal(Tensor<T>& t, Rng& rng, double std) {
    for (auto& v : t.data) v = static_cast<T>(std * rng.normal());
}

}  // namespace

template <typename T>
ParamStore<T> init_weights(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    ParamStore<T> ps;
    const int64_t n = cfg.d_model;
    const double w_std = 0.02;
    const double proj_std = 0.02 / std::sqrt(2.0 * cfg.n_layer);

    if (cfg.head == HeadKind::kClassification) {
        fill_normal(ps.add("wte_x", {cfg.vocab, n}).value, rng, w_std);
        if (cfg.input_dim == 2) fill_normal(ps.add("wte_y", {cfg.vocab, n}).value, rng, w_std);
    } else {
        fill_normal(ps.add("w_in", {cfg.input_dim, n}).value, rng, w_std);
        ps.add("b_in", {n});
    }
    fill_normal(ps.add("wpe", {cfg.ctx, n}).value, rng, w_std);

    for (int l = 0; l < cfg.n_layer; ++l) {
        const std::string p = "h" + std::to_string(l) + ".";
        auto& ln1g = ps.add(p + "ln1.g", {n});
        std::fill(ln1g.value.data.begin(), ln1g.value.data.end(), T(1));
        ps.add(p + "ln1.b", {n});
        fill_normal(ps.add(p + "attn.w_qkv", {n, 3 * n}).value, rng, w_std);
        ps.add(p + "attn.b_qkv", {3 * n});
        fill_normal(ps.add(p + "attn.w_proj", {n, n}).value, rng, proj_std);
        ps.add(p + "attn.b_proj", {n});
        auto& ln2g = ps.add(p + "ln2.g", {n});
        std::fill(ln2g.value.data.begin(), ln2g.value.data.end(), T(1));
        ps.add(p + "ln2.b", {n});
        fill_normal(ps.add(p + "mlp.w_fc", {n, 4 * n}).value, rng, w_std);
        ps.add(p + "mlp.b_fc", {4 * n});
        fill_normal(ps.add(p + "mlp.w_proj", {4 * n, n}).value, rng, proj_std);
        ps.add(p + "mlp.b_proj", {n});
    }
    auto& lnfg = ps.add("lnf.g", {n});
    std::fill(lnfg.value.data.begin(), lnfg.value.data.end(), T(1));
    ps.add("lnf.b", {n});

    if (cfg.head == HeadKind::kClassification) {
        fill_normal(ps.add("head_x.w", {n, cfg.vocab}).value, rng, w_std);
        if (cfg.input_dim == 2)
            fill_normal(ps.add("head_y.w", {n, cfg.vocab}).value, rng, w_std);
    } else {
        fill_normal(ps.add("head.w", {n, cfg.input_dim}).value, rng, w_std);
        ps.add("head.b", {cfg.input_dim});
    }
    return ps;
}

namespace {

// Shared trunk: token/state embedding id -> final layer norm id, recording
// every probe site along the way.
template <typename T>
int transformer_trunk(Tape<T>& tape, Model<T>& m, int x, int batch, int seq,
                      ForwardResult& fr) {
    const ModelConfig& cfg = m.cfg;
    auto& ps = m.params;
    const double inv_sqrt_hd = 1.0 / std::sqrt(double(cfg.d_model / cfg.n_head));
    fr.sites.emplace_back("embedding", x);

    for (int l = 0; l < cfg.n_layer; ++l) {
        const std::string p = "h" + std::to_string(l) + ".";
        const std::string sp = std::to_string(l) + ".";
        const int a_in = tape.layer_norm(x, tape.param(*ps.find(p + "ln1.g")),
                                         tape.param(*ps.find(p + "ln1.b")));
        fr.sites.emplace_back(sp + "attn_in", a_in);
        const int qkv = tape.add_row(tape.matmul(a_in, tape.param(*ps.find(p + "attn.w_qkv"))),
                                     tape.param(*ps.find(p + "attn.b_qkv")));
        const int q = tape.split_head(qkv, 0, batch, seq, cfg.n_head);
        const int k = tape.split_head(qkv, 1, batch, seq, cfg.n_head);
        const int v = tape.split_head(qkv, 2, batch, seq, cfg.n_head);
        const int scores = tape.scale(tape.matmul(q, k, false, true), T(inv_sqrt_hd));
        const int probs = tape.softmax_causal(scores);
        const int att = tape.merge_head(tape.matmul(probs, v), batch, seq, cfg.n_head);
        const int a_out = tape.add_row(tape.matmul(att, tape.param(*ps.find(p + "attn.w_proj"))),
                                       tape.param(*ps.find(p + "attn.b_proj")));
        fr.sites.emplace_back(sp + "attn_out_pre_residual", a_out);
        x = tape.add(x, a_out);
        fr.sites.emplace_back(sp + "attn_out_post_residual", x);

        const int m_in = tape.layer_norm(x, tape.param(*ps.find(p + "ln2.g")),
                                         tape.param(*ps.find(p + "ln2.b")));
        fr.sites.emplace_back(sp + "mlp_in", m_in);
        const int hidden = tape.gelu(
            tape.add_row(tape.matmul(m_in, tape.param(*ps.find(p + "mlp.w_fc"))),
                         tape.param(*ps.find(p + "mlp.b_fc"))));
        fr.sites.emplace_back(sp + "mlp_hidden", hidden);
        const int m_out =
            tape.add_row(tape.matmul(hidden, tape.param(*ps.find(p + "mlp.w_proj"))),
                         tape.param(*ps.find(p + "mlp.b_proj")));
        fr.sites.emplace_back(sp + "mlp_out_pre_residual", m_out);
        x = tape.add(x, m_out);
        fr.sites.emplace_back(sp + "mlp_out_post_residual", x);
    }
    const int h = tape.layer_norm(x, tape.param(*ps.find("lnf.g")),
                                  tape.param(*ps.find("lnf.b")));
    fr.sites.emplace_back("final_norm", h);
    return h;
}

std::vector<int32_t> tiled_positions(int batch, int seq) {
    std::vector<int32_t> ids(size_t(batch) * size_t(seq));
    for (int b = 0; b < batch; ++b)
        for (int s = 0; s < seq; ++s) ids[size_t(b) * seq + s] = s;
    return ids;
}

}  // namespace

template <typename T>
ForwardResult forward_classification(Tape<T>& tape, Model<T>& m,
                                     const std::vector<int32_t>& tok_x,
                                     const std::vector<int32_t>& tok_y, int batch, int seq) {
    const ModelConfig& cfg = m.cfg;
    check(cfg.head == HeadKind::kClassification, "model head is not classification");
    check(seq >= 1 && seq <= cfg.ctx, "sequence length exceeds the model context");
    check(tok_x.size() == size_t(batch) * size_t(seq), "token count mismatch");
    if (cfg.input_dim == 2)
        check(tok_y.size() == tok_x.size(), "x/y token count mismatch");

    ForwardResult fr;
    fr.batch = batch;
    fr.seq = seq;
    int x = tape.embed(tape.param(*m.params.find("wte_x")), tok_x);
    if (cfg.input_dim == 2)
        x = tape.add(x, tape.embed(tape.param(*m.params.find("wte_y")), tok_y));
    x = tape.add(x, tape.embed(tape.param(*m.params.find("wpe")), tiled_positions(batch, seq)));

    const int h = transformer_trunk(tape, m, x, batch, seq, fr);
    fr.logits_x = tape.matmul(h, tape.param(*m.params.find("head_x.w")));
    if (cfg.input_dim == 2)
        fr.logits_y = tape.matmul(h, tape.param(*m.params.find("head_y.w")));
    return fr;
}

template <typename T>
ForwardResult forward_regression(Tape<T>& tape, Model<T>& m, const std::vector<T>& states,
                                 int batch, int seq) {
    const ModelConfig& cfg = m.cfg;
    check(cfg.head == HeadKind::kRegression, "model head is not regression");
    check(seq >= 1 && seq <= cfg.ctx, "sequence length exceeds the model context");
    check(states.size() == size_t(batch) * size_t(seq) * size_t(cfg.input_dim),
          "state count mismatch");

    ForwardResult fr;
    fr.batch = batch;
    fr.seq = seq;
    Tensor<T> in({int64_t(batch) * seq, cfg.input_dim});
    in.data = states;
    int x = tape.add_row(tape.matmul(tape.constant(std::move(in)),
                                     tape.param(*m.params.find("w_in"))),
                         tape.param(*m.params.find("b_in")));
    x = tape.add(x, tape.embed(tape.param(*m.params.find("wpe")), tiled_positions(batch, seq)));

    const int h = transformer_trunk(tape, m, x, batch, seq, fr);
    fr.pred = tape.add_row(tape.matmul(h, tape.param(*m.params.find("head.w"))),
                           tape.param(*m.params.find("head.b")));
    return fr;
}

template ParamStore<float> init_weights<float>(const ModelConfig&, Rng&);
template ParamStore<double> init_weights<double>(const ModelConfig&, Rng&);
template ForwardResult forward_classification<float>(Tape<float>&, Model<float>&,
                                                     const std::vector<int32_t>&,
                                                     const std::vector<int32_t>&, int, int);
template ForwardResult forward_classification<double>(Tape<double>&, Model<double>&,
                                                      const std::vector<int32_t>&,
                                                      const std::vector<int32_t>&, int, int);
template ForwardResult forward_regression<float>(Tape<float>&, Model<float>&,
                                                 const std::vector<float>&, int, int);
template ForwardResult forward_regression<double>(Tape<double>&, Model<double>&,
                                                  const std::vector<double>&, int, int);

}  // namespace lab
