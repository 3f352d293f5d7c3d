#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lab/rng.hpp"
#include "lab/tape.hpp"

namespace lab {

enum class HeadKind { kClassification, kRegression };

inline const char* head_name(HeadKind h) {
    return h == HeadKind::kClassification ? "cls" : "reg";
}

// Decoder-only transformer: pre-norm blocks, learned absolute positions,
// GELU MLP with 4x expansion, causal attention. Classification sums one
// token embedding per coordinate axis into each position and emits one
// logit head per axis; regression projects the raw state in and a linear
// readout out.
struct ModelConfig {
    int n_layer = 2;
    int n_head = 1;
    int d_model = 64;  // N
    int ctx = 100;     // max positions attended
    HeadKind head = HeadKind::kRegression;
    int vocab = 0;      // V; classification only
    int input_dim = 2;  // 1 for sine, 2 for kepler
    double codec_half_range = 4.0;

    void validate() const {
        check(n_layer >= 1 && n_head >= 1, "bad layer/head count");
        check(d_model % n_head == 0, "d_model must be divisible by n_head");
        check(ctx >= 2, "context length must be >= 2");
        check(input_dim == 1 || input_dim == 2, "input_dim must be 1 or 2");
        if (head == HeadKind::kClassification) check(vocab >= 2, "classification needs V >= 2");
    }

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

// Weight construction with the standard GPT initialization: N(0, 0.02)
// everywhere, residual projections scaled by 1/sqrt(2*n_layer), zero biases,
// unit layer-norm gains.
template <typename T>
ParamStore<T> init_weights(const ModelConfig& cfg, Rng& rng);

template <typename T>
struct Model {
    ModelConfig cfg;
    ParamStore<T> params;
};

// Node ids of the model outputs and every traced activation site.
struct ForwardResult {
    int logits_x = -1;  // [B*s, V]
    int logits_y = -1;  // [B*s, V]; 2D classification only
    int pred = -1;      // [B*s, input_dim]; regression only
    int batch = 0;
    int seq = 0;
    std::vector<std::pair<std::string, int>> sites;
};

// Token-pair inputs, one position per time step. tok_y stays empty for 1D.
template <typename T>
ForwardResult forward_classification(Tape<T>& tape, Model<T>& m,
                                     const std::vector<int32_t>& tok_x,
                                     const std::vector<int32_t>& tok_y, int batch, int seq);

// Continuous states [batch * seq * input_dim], row-major.
template <typename T>
ForwardResult forward_regression(Tape<T>& tape, Model<T>& m, const std::vector<T>& states,
                                 int batch, int seq);

// Captured activations, one matrix per site, rows = positions of sample 0..
// (batch*seq rows in batch order).
template <typename T>
struct ActivationTrace {
    std::vector<std::pair<std::string, Tensor<T>>> sites;
    const Tensor<T>* find(const std::string& name) const {
        for (const auto& [k, v] : sites)
            if (k == name) return &v;
        return nullptr;
    }
};

template <typename T>
ActivationTrace<T> capture_trace(const Tape<T>& tape, const ForwardResult& fr) {
    ActivationTrace<T> tr;
    for (const auto& [name, id] : fr.sites) tr.sites.emplace_back(name, tape.val(id));
    return tr;
}

// Expected site names for a config, in forward order.
std::vector<std::string> trace_site_names(const ModelConfig& cfg);

extern template ParamStore<float> init_weights<float>(const ModelConfig&, Rng&);
extern template ParamStore<double> init_weights<double>(const ModelConfig&, Rng&);
extern template ForwardResult forward_classification<float>(Tape<float>&, Model<float>&,
                                                            const std::vector<int32_t>&,
                                                            const std::vector<int32_t>&, int,
                                                            int);
extern template ForwardResult forward_classification<double>(Tape<double>&, Model<double>&,
                                                             const std::vector<int32_t>&,
                                                             const std::vector<int32_t>&, int,
                                                             int);
extern template ForwardResult forward_regression<float>(Tape<float>&, Model<float>&,
                                                        const std::vector<float>&, int, int);
extern template ForwardResult forward_regression<double>(Tape<double>&, Model<double>&,
                                                         const std::vector<double>&, int, int);

}  // namespace lab
