#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "lab/common.hpp"
#include "lab/kernels.hpp"
#include "lab/tensor.hpp"

namespace lab {

// Named parameters with gradient accumulators. Creation order is the
// canonical order used by the optimizer, checkpoints and gradient checks.
template <typename T>
struct ParamStore {
    struct Entry {
        std::string name;
        Tensor<T> value;
        Tensor<T> grad;
    };

    std::vector<Entry> entries;

    Entry& add(std::string name, Shape shape) {
        Entry e;
        e.name = std::move(name);
        e.value = Tensor<T>(shape);
        e.value.requires_grad = true;
        e.grad = Tensor<T>(shape);
        entries.push_back(std::move(e));
        return entries.back();
    }

    Entry* find(std::string_view name) {
        for (auto& e : entries)
            if (e.name == name) return &e;
        return nullptr;
    }

    int64_t param_count() const {
        int64_t n = 0;
        for (const auto& e : entries) n += e.value.numel();
        return n;
    }

    void zero_grads() {
        for (auto& e : entries) std::fill(e.grad.data.begin(), e.grad.data.end(), T(0));
    }

    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (const auto& e : entries) {
            auto& o = out.add(e.name, e.value.shape);
            for (size_t i = 0; i < e.value.data.size(); ++i)
                o.value.data[i] = static_cast<U>(e.value.data[i]);
        }
        return out;
    }
};

enum class Op : uint8_t {
    kLeaf,
    kMatmul,
    kAdd,
    kAddRow,
    kSub,
    kMul,
    kScale,
    kGelu,
    kSoftmax,
    kSoftmaxCausal,
    kLayerNorm,
    kEmbed,
    kSplitHead,
    kMergeHead,
    kCrossEntropy,
    kSumAll,
};

const char* op_name(Op op);

// Reverse-mode tape over whole-tensor operations. The op set is closed:
// matmul, add (plain/row-broadcast/sub), elementwise (scale, mul, gelu),
// softmax (plain/causal/fused cross-entropy), layer norm, embedding lookup
// and reductions; everything else in the project is composed from these.
template <typename T>
class Tape {
public:
    explicit Tape(bool check_finite = true) : check_finite_(check_finite) {}

    // Returns node buffers to an internal pool; reusing one Tape across
    // training steps avoids re-faulting the large logits/grad tensors.
    void reset() {
        for (auto& n : nodes_)
            if (n.value.data.capacity() > 0) pool_.push_back(std::move(n.value.data));
        for (auto& g : grads_)
            if (g.data.capacity() > 0) pool_.push_back(std::move(g.data));
        nodes_.clear();
        grads_.clear();
    }

    int constant(Tensor<T> v);
    int param(typename ParamStore<T>::Entry& e);

    // 2D [m,k]x[k,n] or batched 3D [B,m,k]x[B,k,n]; ta/tb transpose the
    // trailing two dims of the physical buffer.
    int matmul(int a, int b, bool ta = false, bool tb = false);
    int add(int a, int b);
    int add_row(int a, int row);  // a[...,n] + row[n]
    int sub(int a, int b);
    int mul(int a, int b);
    int scale(int a, T alpha);
    int gelu(int a);
    int softmax(int a);         // over the last dim
    int softmax_causal(int a);  // [B,T,T]; row t normalized over cols 0..t
    int layer_norm(int x, int gamma, int beta);
    int embed(int table, std::vector<int32_t> ids);
    int split_head(int qkv, int which, int batch, int seq, int heads);
    int merge_head(int a, int batch, int seq, int heads);
    int cross_entropy(int logits, std::vector<int32_t> targets);  // mean, scalar
    int sum_all(int a);
    int mean_all(int a);

    const Tensor<T>& val(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    T scalar(int id) const {
        check(val(id).numel() == 1, "scalar() on non-scalar node");
        return val(id).data[0];
    }

    // Accumulates d(loss)/d(param) into every reachable ParamStore entry.
    void backward(int loss);

    const Tensor<T>& grad_of(int id) const { return grads_[static_cast<size_t>(id)]; }
    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Op op = Op::kLeaf;
        bool needs_grad = false;
        int in0 = -1, in1 = -1, in2 = -1;
        Tensor<T> value;
        bool ta = false, tb = false;
        T alpha = T(0);
        int b = 0, t = 0, h = 0, which = 0;
        std::vector<int32_t> ids;
        std::vector<T> saved;
        typename ParamStore<T>::Entry* param = nullptr;
    };

    int push(Node n);
    void ensure_grad(int id);
    void backward_node(int id);
    bool needs(int id) const { return id >= 0 && nodes_[static_cast<size_t>(id)].needs_grad; }

    // Pool-backed tensor creation; contents are zero-initialized.
    Tensor<T> make_tensor(Shape shape) {
        const size_t n = size_t(numel_of(shape));
        // best-fit: smallest pooled buffer that can hold n
        size_t best = pool_.size();
        for (size_t i = 0; i < pool_.size(); ++i)
            if (pool_[i].capacity() >= n &&
                (best == pool_.size() || pool_[i].capacity() < pool_[best].capacity()))
                best = i;
        Tensor<T> t;
        t.shape = std::move(shape);
        if (best < pool_.size()) {
            t.data = std::move(pool_[best]);
            pool_[best] = std::move(pool_.back());
            pool_.pop_back();
            t.data.assign(n, T(0));
        } else {
            t.data.assign(n, T(0));
        }
        return t;
    }

    std::vector<Node> nodes_;
    std::vector<Tensor<T>> grads_;
    std::vector<std::vector<T>> pool_;
    bool check_finite_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace lab
