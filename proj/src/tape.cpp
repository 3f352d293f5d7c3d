#include "lab/tape.hpp"

#include <algorithm>
#include <cmath>

namespace lab {

const char* op_name(Op op) {
    switch (op) {
        case Op::kLeaf: return "leaf";
        case Op::kMatmul: return "matmul";
        case Op::kAdd: return "add";
        case Op::kAddRow: return "add_row";
        case Op::kSub: return "sub";
        case Op::kMul: return "mul";
        case Op::kScale: return "scale";
        case Op::kGelu: return "gelu";
        case Op::kSoftmax: return "softmax";
        case Op::kSoftmaxCausal: return "softmax_causal";
        case Op::kLayerNorm: return "layer_norm";
        case Op::kEmbed: return "embed";
        case Op::kSplitHead: return "split_head";
        case Op::kMergeHead: return "merge_head";
        case Op::kCrossEntropy: return "cross_entropy";
        case Op::kSumAll: return "sum_all";
    }
    return "?";
}

namespace {

constexpr double kGeluC0 = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC1 = 0.044715;
constexpr double kLnEps = 1e-5;

template <typename T>
void gelu_fwd(const T* x, T* y, int64_t n, std::vector<T>& tmp) {
    tmp.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const T xi = x[i];
        tmp[static_cast<size_t>(i)] = T(kGeluC0) * (xi + T(kGeluC1) * xi * xi * xi);
    }
    vec_tanh(tmp.data(), tmp.data(), n);
    for (int64_t i = 0; i < n; ++i)
        y[i] = T(0.5) * x[i] * (T(1) + tmp[static_cast<size_t>(i)]);
}

template <typename T>
void gelu_bwd(const T* x, const T* go, T* gx, int64_t n, std::vector<T>& tmp) {
    tmp.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const T xi = x[i];
        tmp[static_cast<size_t>(i)] = T(kGeluC0) * (xi + T(kGeluC1) * xi * xi * xi);
    }
    vec_tanh(tmp.data(), tmp.data(), n);
    for (int64_t i = 0; i < n; ++i) {
        const T xi = x[i];
        const T t = tmp[static_cast<size_t>(i)];
        const T du = T(kGeluC0) * (T(1) + T(3) * T(kGeluC1) * xi * xi);
        const T d = T(0.5) * (T(1) + t) + T(0.5) * xi * (T(1) - t * t) * du;
        gx[i] += go[i] * d;
    }
}

}  // namespace

template <typename T>
int Tape<T>::push(Node n) {
    if (check_finite_ && n.op != Op::kLeaf) {
        if (has_nonfinite(n.value.ptr(), n.value.numel()))
            throw NumericsError(std::string("non-finite value out of op ") + op_name(n.op));
    }
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

template <typename T>
int Tape<T>::constant(Tensor<T> v) {
    Node n;
    n.op = Op::kLeaf;
    n.value = std::move(v);
    n.needs_grad = false;
    if (check_finite_ && has_nonfinite(n.value.ptr(), n.value.numel()))
        throw NumericsError("non-finite value in tape constant");
    return push(std::move(n));
}

template <typename T>
int Tape<T>::param(typename ParamStore<T>::Entry& e) {
    Node n;
    n.op = Op::kLeaf;
    n.value = make_tensor(e.value.shape);  // snapshot; weights frozen during one pass
    std::copy(e.value.data.begin(), e.value.data.end(), n.value.data.begin());
    n.needs_grad = true;
    n.param = &e;
    return push(std::move(n));
}

template <typename T>
int Tape<T>::matmul(int a, int b, bool ta, bool tb) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& bv = val(b);
    check(av.rank() == bv.rank() && (av.rank() == 2 || av.rank() == 3), "matmul rank mismatch");
    const bool batched = av.rank() == 3;
    const int64_t nb = batched ? av.dim(0) : 1;
    if (batched) check(bv.dim(0) == nb, "matmul batch mismatch");
    const int o = batched ? 1 : 0;
    const int64_t m = ta ? av.dim(o + 1) : av.dim(o);
    const int64_t k = ta ? av.dim(o) : av.dim(o + 1);
    const int64_t kb = tb ? bv.dim(o + 1) : bv.dim(o);
    const int64_t nn = tb ? bv.dim(o) : bv.dim(o + 1);
    check(k == kb, "matmul inner dim mismatch " + shape_str(av.shape) + " x " + shape_str(bv.shape));

    Node n;
    n.op = Op::kMatmul;
    n.in0 = a;
    n.in1 = b;
    n.ta = ta;
    n.tb = tb;
    n.needs_grad = needs(a) || needs(b);
    n.value = batched ? make_tensor({nb, m, nn}) : make_tensor({m, nn});
    const int64_t sa = av.numel() / nb, sb = bv.numel() / nb, sc = m * nn;
    for (int64_t i = 0; i < nb; ++i)
        gemm<T>(ta, tb, m, nn, k, av.ptr() + i * sa, bv.ptr() + i * sb, n.value.ptr() + i * sc,
                false);
    return push(std::move(n));
}

template <typename T>
int Tape<T>::add(int a, int b) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& bv = val(b);
    check(av.shape == bv.shape, "add shape mismatch");
    Node n;
    n.op = Op::kAdd;
    n.in0 = a;
    n.in1 = b;
    n.needs_grad = needs(a) || needs(b);
    n.value = make_tensor(av.shape);
    const int64_t cnt = av.numel();
    for (int64_t i = 0; i < cnt; ++i) n.value.data[i] = av.data[i] + bv.data[i];
    return push(std::move(n));
}

template <typename T>
int Tape<T>::add_row(int a, int row) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& rv = val(row);
    const int64_t w = av.shape.back();
    check(rv.rank() == 1 && rv.dim(0) == w, "add_row width mismatch");
    Node n;
    n.op = Op::kAddRow;
    n.in0 = a;
    n.in1 = row;
    n.needs_grad = needs(a) || needs(row);
    n.value = make_tensor(av.shape);
    const int64_t rows = av.numel() / w;
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < w; ++j)
            n.value.data[r * w + j] = av.data[r * w + j] + rv.data[j];
    return push(std::move(n));
}

template <typename T>
int Tape<T>::sub(int a, int b) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& bv = val(b);
    check(av.shape == bv.shape, "sub shape mismatch");
    Node n;
    n.op = Op::kSub;
    n.in0 = a;
    n.in1 = b;
    n.needs_grad = needs(a) || needs(b);
    n.value = make_tensor(av.shape);
    const int64_t cnt = av.numel();
    for (int64_t i = 0; i < cnt; ++i) n.value.data[i] = av.data[i] - bv.data[i];
    return push(std::move(n));
}

template <typename T>
int Tape<T>::mul(int a, int b) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& bv = val(b);
    check(av.shape == bv.shape, "mul shape mismatch");
    Node n;
    n.op = Op::kMul;
    n.in0 = a;
    n.in1 = b;
    n.needs_grad = needs(a) || needs(b);
    n.value = make_tensor(av.shape);
    const int64_t cnt = av.numel();
    for (int64_t i = 0; i < cnt; ++i) n.value.data[i] = av.data[i] * bv.data[i];
    return push(std::move(n));
}

template <typename T>
int Tape<T>::scale(int a, T alpha) {
    const Tensor<T>& av = val(a);
    Node n;
    n.op = Op::kScale;
    n.in0 = a;
    n.alpha = alpha;
    n.needs_grad = needs(a);
    n.value = make_tensor(av.shape);
    const int64_t cnt = av.numel();
    for (int64_t i = 0; i < cnt; ++i) n.value.data[i] = av.data[i] * alpha;
    return push(std::move(n));
}

template <typename T>
int Tape<T>::gelu(int a) {
    const Tensor<T>& av = val(a);
    Node n;
    n.op = Op::kGelu;
    n.in0 = a;
    n.needs_grad = needs(a);
    n.value = make_tensor(av.shape);
    std::vector<T> tmp;
    gelu_fwd(av.ptr(), n.value.ptr(), av.numel(), tmp);
    return push(std::move(n));
}

template <typename T>
int Tape<T>::softmax(int a) {
    const Tensor<T>& av = val(a);
    const int64_t w = av.shape.back();
    const int64_t rows = av.numel() / w;
    Node n;
    n.op = Op::kSoftmax;
    n.in0 = a;
    n.needs_grad = needs(a);
    n.value = make_tensor(av.shape);
    for (int64_t r = 0; r < rows; ++r) {
        const T* x = av.ptr() + r * w;
        T* y = n.value.ptr() + r * w;
        T mx = x[0];
        for (int64_t j = 1; j < w; ++j) mx = std::max(mx, x[j]);
        for (int64_t j = 0; j < w; ++j) y[j] = x[j] - mx;
        vec_exp(y, y, w);
        T s = T(0);
        for (int64_t j = 0; j < w; ++j) s += y[j];
        const T inv = T(1) / s;
        for (int64_t j = 0; j < w; ++j) y[j] *= inv;
    }
    return push(std::move(n));
}

template <typename T>
int Tape<T>::softmax_causal(int a) {
    const Tensor<T>& av = val(a);
    check(av.rank() == 3 && av.dim(1) == av.dim(2), "softmax_causal wants [B,T,T]");
    const int64_t nb = av.dim(0), tt = av.dim(1);
    Node n;
    n.op = Op::kSoftmaxCausal;
    n.in0 = a;
    n.needs_grad = needs(a);
    n.value = make_tensor(av.shape);
    for (int64_t bi = 0; bi < nb; ++bi) {
        for (int64_t r = 0; r < tt; ++r) {
            const T* x = av.ptr() + (bi * tt + r) * tt;
            T* y = n.value.ptr() + (bi * tt + r) * tt;
            const int64_t valid = r + 1;
            T mx = x[0];
            for (int64_t j = 1; j < valid; ++j) mx = std::max(mx, x[j]);
            T s = T(0);
            for (int64_t j = 0; j < valid; ++j) {
                y[j] = std::exp(x[j] - mx);
                s += y[j];
            }
            const T inv = T(1) / s;
            for (int64_t j = 0; j < valid; ++j) y[j] *= inv;
            for (int64_t j = valid; j < tt; ++j) y[j] = T(0);
        }
    }
    return push(std::move(n));
}

template <typename T>
int Tape<T>::layer_norm(int x, int gamma, int beta) {
    const Tensor<T>& xv = val(x);
    const int64_t w = xv.shape.back();
    const int64_t rows = xv.numel() / w;
    check(val(gamma).numel() == w && val(beta).numel() == w, "layer_norm affine width mismatch");
    Node n;
    n.op = Op::kLayerNorm;
    n.in0 = x;
    n.in1 = gamma;
    n.in2 = beta;
    n.needs_grad = needs(x) || needs(gamma) || needs(beta);
    n.value = make_tensor(xv.shape);
    n.saved.resize(static_cast<size_t>(2 * rows));
    const T* g = val(gamma).ptr();
    const T* b = val(beta).ptr();
    for (int64_t r = 0; r < rows; ++r) {
        const T* xr = xv.ptr() + r * w;
        T* yr = n.value.ptr() + r * w;
        T mean = T(0);
        for (int64_t j = 0; j < w; ++j) mean += xr[j];
        mean /= T(w);
        T var = T(0);
        for (int64_t j = 0; j < w; ++j) {
            const T d = xr[j] - mean;
            var += d * d;
        }
        var /= T(w);
        const T rstd = T(1) / std::sqrt(var + T(kLnEps));
        n.saved[static_cast<size_t>(2 * r)] = mean;
        n.saved[static_cast<size_t>(2 * r + 1)] = rstd;
        for (int64_t j = 0; j < w; ++j) yr[j] = (xr[j] - mean) * rstd * g[j] + b[j];
    }
    return push(std::move(n));
}

template <typename T>
int Tape<T>::embed(int table, std::vector<int32_t> ids) {
    const Tensor<T>& tv = val(table);
    check(tv.rank() == 2, "embed wants a 2D table");
    const int64_t v = tv.dim(0), w = tv.dim(1);
    for (const int32_t id : ids)
        check(id >= 0 && id < v, "embed index out of range");
    Node n;
    n.op = Op::kEmbed;
    n.in0 = table;
    n.needs_grad = needs(table);
    n.value = make_tensor({static_cast<int64_t>(ids.size()), w});
    for (size_t r = 0; r < ids.size(); ++r)
        std::copy_n(tv.ptr() + static_cast<int64_t>(ids[r]) * w, w,
                    n.value.ptr() + static_cast<int64_t>(r) * w);
    n.ids = std::move(ids);
    return push(std::move(n));
}

template <typename T>
int Tape<T>::split_head(int qkv, int which, int batch, int seq, int heads) {
    const Tensor<T>& xv = val(qkv);
    check(xv.rank() == 2 && xv.dim(0) == int64_t(batch) * seq, "split_head row mismatch");
    const int64_t n3 = xv.dim(1);
    check(n3 % 3 == 0, "split_head wants packed qkv");
    const int64_t width = n3 / 3;
    check(width % heads == 0, "width not divisible by heads");
    const int64_t hd = width / heads;
    Node n;
    n.op = Op::kSplitHead;
    n.in0 = qkv;
    n.which = which;
    n.b = batch;
    n.t = seq;
    n.h = heads;
    n.needs_grad = needs(qkv);
    n.value = make_tensor({int64_t(batch) * heads, seq, hd});
    for (int64_t bi = 0; bi < batch; ++bi)
        for (int64_t ti = 0; ti < seq; ++ti) {
            const T* src = xv.ptr() + (bi * seq + ti) * n3 + which * width;
            for (int64_t hi = 0; hi < heads; ++hi)
                std::copy_n(src + hi * hd, hd,
                            n.value.ptr() + ((bi * heads + hi) * seq + ti) * hd);
        }
    return push(std::move(n));
}

template <typename T>
int Tape<T>::merge_head(int a, int batch, int seq, int heads) {
    const Tensor<T>& xv = val(a);
    check(xv.rank() == 3 && xv.dim(0) == int64_t(batch) * heads && xv.dim(1) == seq,
          "merge_head shape mismatch");
    const int64_t hd = xv.dim(2);
    const int64_t width = hd * heads;
    Node n;
    n.op = Op::kMergeHead;
    n.in0 = a;
    n.b = batch;
    n.t = seq;
    n.h = heads;
    n.needs_grad = needs(a);
    n.value = make_tensor({int64_t(batch) * seq, width});
    for (int64_t bi = 0; bi < batch; ++bi)
        for (int64_t hi = 0; hi < heads; ++hi)
            for (int64_t ti = 0; ti < seq; ++ti)
                std::copy_n(xv.ptr() + ((bi * heads + hi) * seq + ti) * hd, hd,
                            n.value.ptr() + (bi * seq + ti) * width + hi * hd);
    return push(std::move(n));
}

template <typename T>
int Tape<T>::cross_entropy(int logits, std::vector<int32_t> targets) {
    const Tensor<T>& lv = val(logits);
    check(lv.rank() == 2, "cross_entropy wants 2D logits");
    const int64_t rows = lv.dim(0), v = lv.dim(1);
    check(static_cast<int64_t>(targets.size()) == rows, "cross_entropy target count mismatch");
    for (const int32_t t : targets)
        check(t >= 0 && t < v, "cross_entropy target out of range");
    Node n;
    n.op = Op::kCrossEntropy;
    n.in0 = logits;
    n.needs_grad = needs(logits);
    n.saved.resize(static_cast<size_t>(rows));
    std::vector<T> tmp(static_cast<size_t>(v));
    T total = T(0);
    for (int64_t r = 0; r < rows; ++r) {
        const T* x = lv.ptr() + r * v;
        T mx = x[0];
        for (int64_t j = 1; j < v; ++j) mx = std::max(mx, x[j]);
        for (int64_t j = 0; j < v; ++j) tmp[static_cast<size_t>(j)] = x[j] - mx;
        vec_exp(tmp.data(), tmp.data(), v);
        T s = T(0);
        for (int64_t j = 0; j < v; ++j) s += tmp[static_cast<size_t>(j)];
        const T lse = mx + std::log(s);
        n.saved[static_cast<size_t>(r)] = lse;
        total += lse - x[targets[static_cast<size_t>(r)]];
    }
    n.value = Tensor<T>::scalar(total / T(rows));
    n.ids = std::move(targets);
    return push(std::move(n));
}

template <typename T>
int Tape<T>::sum_all(int a) {
    const Tensor<T>& av = val(a);
    T s = T(0);
    for (const T x : av.data) s += x;
    Node n;
    n.op = Op::kSumAll;
    n.in0 = a;
    n.alpha = T(1);
    n.needs_grad = needs(a);
    n.value = Tensor<T>::scalar(s);
    return push(std::move(n));
}

template <typename T>
int Tape<T>::mean_all(int a) {
    const Tensor<T>& av = val(a);
    T s = T(0);
    for (const T x : av.data) s += x;
    const T alpha = T(1) / T(av.numel());
    Node n;
    n.op = Op::kSumAll;
    n.in0 = a;
    n.alpha = alpha;
    n.needs_grad = needs(a);
    n.value = Tensor<T>::scalar(s * alpha);
    return push(std::move(n));
}

template <typename T>
void Tape<T>::ensure_grad(int id) {
    auto& g = grads_[static_cast<size_t>(id)];
    if (g.numel() == 0) g = make_tensor(nodes_[static_cast<size_t>(id)].value.shape);
}

template <typename T>
void Tape<T>::backward(int loss) {
    check(val(loss).numel() == 1, "backward needs a scalar loss");
    if (!nodes_[static_cast<size_t>(loss)].needs_grad) return;
    grads_.assign(nodes_.size(), Tensor<T>());
    ensure_grad(loss);
    grads_[static_cast<size_t>(loss)].data[0] = T(1);
    for (int id = loss; id >= 0; --id) {
        const Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.needs_grad || grads_[static_cast<size_t>(id)].numel() == 0) continue;
        if (check_finite_ &&
            has_nonfinite(grads_[static_cast<size_t>(id)].ptr(),
                          grads_[static_cast<size_t>(id)].numel()))
            throw NumericsError(std::string("NaN in backward pass at op ") + op_name(n.op));
        backward_node(id);
    }
    // fold leaf gradients into their parameter accumulators
    for (size_t id = 0; id < nodes_.size(); ++id) {
        Node& n = nodes_[id];
        if (n.op == Op::kLeaf && n.param && grads_[id].numel() != 0) {
            auto& acc = n.param->grad;
            for (int64_t i = 0; i < grads_[id].numel(); ++i) acc.data[i] += grads_[id].data[i];
        }
    }
}

template <typename T>
void Tape<T>::backward_node(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    const Tensor<T>& go = grads_[static_cast<size_t>(id)];
    switch (n.op) {
        case Op::kLeaf:
            break;
        case Op::kMatmul: {
            const Tensor<T>& av = val(n.in0);
            const Tensor<T>& bv = val(n.in1);
            const bool batched = av.rank() == 3;
            const int64_t nb = batched ? av.dim(0) : 1;
            const int o = batched ? 1 : 0;
            const int64_t m = n.ta ? av.dim(o + 1) : av.dim(o);
            const int64_t k = n.ta ? av.dim(o) : av.dim(o + 1);
            const int64_t nn = n.tb ? bv.dim(o) : bv.dim(o + 1);
            const int64_t sa = av.numel() / nb, sb = bv.numel() / nb, sc = m * nn;
            if (needs(n.in0)) {
                ensure_grad(n.in0);
                T* da = grads_[static_cast<size_t>(n.in0)].ptr();
                for (int64_t i = 0; i < nb; ++i) {
                    const T* g = go.ptr() + i * sc;
                    const T* b = bv.ptr() + i * sb;
                    if (!n.ta) {
                        // dA = dC * opB^T
                        gemm<T>(false, !n.tb, m, k, nn, g, b, da + i * sa, true);
                    } else {
                        // physical dA = opB * dC^T
                        gemm<T>(n.tb, true, k, m, nn, b, g, da + i * sa, true);
                    }
                }
            }
            if (needs(n.in1)) {
                ensure_grad(n.in1);
                T* db = grads_[static_cast<size_t>(n.in1)].ptr();
                for (int64_t i = 0; i < nb; ++i) {
                    const T* g = go.ptr() + i * sc;
                    const T* a = av.ptr() + i * sa;
                    if (!n.tb) {
                        // dB = opA^T * dC
                        gemm<T>(!n.ta, false, k, nn, m, a, g, db + i * sb, true);
                    } else {
                        // physical dB = dC^T * opA
                        gemm<T>(true, n.ta, nn, k, m, g, a, db + i * sb, true);
                    }
                }
            }
            break;
        }
        case Op::kAdd: {
            for (const int in : {n.in0, n.in1}) {
                if (!needs(in)) continue;
                ensure_grad(in);
                T* d = grads_[static_cast<size_t>(in)].ptr();
                for (int64_t i = 0; i < go.numel(); ++i) d[i] += go.data[i];
            }
            break;
        }
        case Op::kAddRow: {
            const int64_t w = n.value.shape.back();
            const int64_t rows = n.value.numel() / w;
            if (needs(n.in0)) {
                ensure_grad(n.in0);
                T* d = grads_[static_cast<size_t>(n.in0)].ptr();
                for (int64_t i = 0; i < go.numel(); ++i) d[i] += go.data[i];
            }
            if (needs(n.in1)) {
                ensure_grad(n.in1);
                T* d = grads_[static_cast<size_t>(n.in1)].ptr();
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t j = 0; j < w; ++j) d[j] += go.data[r * w + j];
            }
            break;
        }
        case Op::kSub: {
            if (needs(n.in0)) {
                ensure_grad(n.in0);
                T* d = grads_[static_cast<size_t>(n.in0)].ptr();
                for (int64_t i = 0; i < go.numel(); ++i) d[i] += go.data[i];
            }
            if (needs(n.in1)) {
                ensure_grad(n.in1);
                T* d = grads_[static_cast<size_t>(n.in1)].ptr();
                for (int64_t i = 0; i < go.numel(); ++i) d[i] -= go.data[i];
            }
            break;
        }
        case Op::kMul: {
            const Tensor<T>& av = val(n.in0);
            const Tensor<T>& bv = val(n.in1);
            if (needs(n.in0)) {
                ensure_grad(n.in0);
                T* d = grads_[static_cast<size_t>(n.in0)].ptr();
                for (int64_t i = 0; i < go.numel(); ++i) d[i] += go.data[i] * bv.data[i];
            }
            if (needs(n.in1)) {
                ensure_grad(n.in1);
                T* d = grads_[static_cast<size_t>(n.in1)].ptr();
                for (int64_t i = 0; i < go.numel(); ++i) d[i] += go.data[i] * av.data[i];
            }
            break;
        }
        case Op::kScale: {
            if (!needs(n.in0)) break;
            ensure_grad(n.in0);
            T* d = grads_[static_cast<size_t>(n.in0)].ptr();
            for (int64_t i = 0; i < go.numel(); ++i) d[i] += go.data[i] * n.alpha;
            break;
        }
        case Op::kGelu: {
            if (!needs(n.in0)) break;
            ensure_grad(n.in0);
            std::vector<T> tmp;
            gelu_bwd(val(n.in0).ptr(), go.ptr(), grads_[static_cast<size_t>(n.in0)].ptr(),
                     go.numel(), tmp);
            break;
        }
        case Op::kSoftmax: {
            if (!needs(n.in0)) break;
            ensure_grad(n.in0);
            const int64_t w = n.value.shape.back();
            const int64_t rows = n.value.numel() / w;
            T* d = grads_[static_cast<size_t>(n.in0)].ptr();
            for (int64_t r = 0; r < rows; ++r) {
                const T* p = n.value.ptr() + r * w;
                const T* g = go.ptr() + r * w;
                T dot = T(0);
                for (int64_t j = 0; j < w; ++j) dot += p[j] * g[j];
                for (int64_t j = 0; j < w; ++j) d[r * w + j] += p[j] * (g[j] - dot);
            }
            break;
        }
        case Op::kSoftmaxCausal: {
            if (!needs(n.in0)) break;
            ensure_grad(n.in0);
            const int64_t tt = n.value.dim(1);
            const int64_t nb = n.value.dim(0);
            T* d = grads_[static_cast<size_t>(n.in0)].ptr();
            for (int64_t bi = 0; bi < nb; ++bi)
                for (int64_t r = 0; r < tt; ++r) {
                    const int64_t off = (bi * tt + r) * tt;
                    const T* p = n.value.ptr() + off;
                    const T* g = go.ptr() + off;
                    const int64_t valid = r + 1;
                    T dot = T(0);
                    for (int64_t j = 0; j < valid; ++j) dot += p[j] * g[j];
                    for (int64_t j = 0; j < valid; ++j) d[off + j] += p[j] * (g[j] - dot);
                }
            break;
        }
        case Op::kLayerNorm: {
            const Tensor<T>& xv = val(n.in0);
            const T* g = val(n.in1).ptr();
            const int64_t w = xv.shape.back();
            const int64_t rows = xv.numel() / w;
            const bool dx_needed = needs(n.in0);
            const bool dg_needed = needs(n.in1);
            const bool db_needed = needs(n.in2);
            if (dx_needed) ensure_grad(n.in0);
            if (dg_needed) ensure_grad(n.in1);
            if (db_needed) ensure_grad(n.in2);
            std::vector<T> gg(static_cast<size_t>(w));
            for (int64_t r = 0; r < rows; ++r) {
                const T mean = n.saved[static_cast<size_t>(2 * r)];
                const T rstd = n.saved[static_cast<size_t>(2 * r + 1)];
                const T* xr = xv.ptr() + r * w;
                const T* gr = go.ptr() + r * w;
                T s1 = T(0), s2 = T(0);
                for (int64_t j = 0; j < w; ++j) {
                    const T xhat = (xr[j] - mean) * rstd;
                    const T v = gr[j] * g[j];
                    gg[static_cast<size_t>(j)] = v;
                    s1 += v;
                    s2 += v * xhat;
                }
                s1 /= T(w);
                s2 /= T(w);
                if (dx_needed) {
                    T* dx = grads_[static_cast<size_t>(n.in0)].ptr() + r * w;
                    for (int64_t j = 0; j < w; ++j) {
                        const T xhat = (xr[j] - mean) * rstd;
                        dx[j] += rstd * (gg[static_cast<size_t>(j)] - s1 - xhat * s2);
                    }
                }
                if (dg_needed) {
                    T* dg = grads_[static_cast<size_t>(n.in1)].ptr();
                    for (int64_t j = 0; j < w; ++j)
                        dg[j] += gr[j] * (xr[j] - mean) * rstd;
                }
                if (db_needed) {
                    T* db = grads_[static_cast<size_t>(n.in2)].ptr();
                    for (int64_t j = 0; j < w; ++j) db[j] += gr[j];
                }
            }
            break;
        }
        case Op::kEmbed: {
            if (!needs(n.in0)) break;
            ensure_grad(n.in0);
            const int64_t w = n.value.shape.back();
            T* d = grads_[static_cast<size_t>(n.in0)].ptr();
            for (size_t r = 0; r < n.ids.size(); ++r) {
                const T* g = go.ptr() + static_cast<int64_t>(r) * w;
                T* row = d + static_cast<int64_t>(n.ids[r]) * w;
                for (int64_t j = 0; j < w; ++j) row[j] += g[j];
            }
            break;
        }
        case Op::kSplitHead: {
            if (!needs(n.in0)) break;
            ensure_grad(n.in0);
            const int64_t heads = n.h, seq = n.t, batch = n.b;
            const int64_t hd = n.value.dim(2);
            const int64_t width = hd * heads;
            const int64_t n3 = width * 3;
            T* d = grads_[static_cast<size_t>(n.in0)].ptr();
            for (int64_t bi = 0; bi < batch; ++bi)
                for (int64_t ti = 0; ti < seq; ++ti) {
                    T* dst = d + (bi * seq + ti) * n3 + n.which * width;
                    for (int64_t hi = 0; hi < heads; ++hi) {
                        const T* g = go.ptr() + ((bi * heads + hi) * seq + ti) * hd;
                        for (int64_t j = 0; j < hd; ++j) dst[hi * hd + j] += g[j];
                    }
                }
            break;
        }
        case Op::kMergeHead: {
            if (!needs(n.in0)) break;
            ensure_grad(n.in0);
            const int64_t heads = n.h, seq = n.t, batch = n.b;
            const int64_t width = n.value.shape.back();
            const int64_t hd = width / heads;
            T* d = grads_[static_cast<size_t>(n.in0)].ptr();
            for (int64_t bi = 0; bi < batch; ++bi)
                for (int64_t hi = 0; hi < heads; ++hi)
                    for (int64_t ti = 0; ti < seq; ++ti) {
                        const T* g = go.ptr() + (bi * seq + ti) * width + hi * hd;
                        T* dst = d + ((bi * heads + hi) * seq + ti) * hd;
                        for (int64_t j = 0; j < hd; ++j) dst[j] += g[j];
                    }
            break;
        }
        case Op::kCrossEntropy: {
            if (!needs(n.in0)) break;
            ensure_grad(n.in0);
            const Tensor<T>& lv = val(n.in0);
            const int64_t rows = lv.dim(0), v = lv.dim(1);
            const T coef = go.data[0] / T(rows);
            T* d = grads_[static_cast<size_t>(n.in0)].ptr();
            std::vector<T> tmp(static_cast<size_t>(v));
            for (int64_t r = 0; r < rows; ++r) {
                const T* x = lv.ptr() + r * v;
                const T lse = n.saved[static_cast<size_t>(r)];
                for (int64_t j = 0; j < v; ++j) tmp[static_cast<size_t>(j)] = x[j] - lse;
                vec_exp(tmp.data(), tmp.data(), v);
                T* dr = d + r * v;
                for (int64_t j = 0; j < v; ++j) dr[j] += coef * tmp[static_cast<size_t>(j)];
                dr[n.ids[static_cast<size_t>(r)]] -= coef;
            }
            break;
        }
        case Op::kSumAll: {
            if (!needs(n.in0)) break;
            ensure_grad(n.in0);
            const T g = go.data[0] * n.alpha;
            T* d = grads_[static_cast<size_t>(n.in0)].ptr();
            const int64_t cnt = grads_[static_cast<size_t>(n.in0)].numel();
            for (int64_t i = 0; i < cnt; ++i) d[i] += g;
            break;
        }
    }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace lab
