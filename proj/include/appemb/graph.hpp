#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "appemb/rng.hpp"
#include "appemb/tensor.hpp"

namespace appemb {

/// Learnable tensor. Weight sharing is expressed by storage identity: every
/// graph site that uses the same Parameter object reads (and accumulates
/// gradient into) the same buffers, which is what keeps tied matrices equal
/// through arbitrarily many optimizer steps.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    bool trainable = true;

    Parameter() = default;
    Parameter(std::string n, Tensor<T> v)
        : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}

    void zero_grad() { grad.zero(); }
};

enum class Op : std::uint8_t {
    kInput,
    kParam,
    kMatMul,
    kAdd,
    kAddRow,
    kScale,
    kConcatRows,
    kSliceRows,
    kGather,
    kLeakyRelu,
    kTanh,
    kSigmoid,
    kSoftmaxRows,
    kLayerNorm,
    kDropout,
    kMean,
    kSumSquares,
    kAddN,
    kSigmoidCe,
    kSoftmaxCeRows,
    kMhsa,
};

/// Reverse-mode tape over Tensor<T>. One Graph records one forward pass;
/// backward() walks the recorded nodes once in reverse and finally adds the
/// accumulated leaf adjoints into each Parameter's grad buffer.
template <typename T>
class Graph {
public:
    using Id = std::uint32_t;
    static constexpr Id kNone = 0xffffffffu;

    struct Node {
        Op op{};
        Id a = kNone, b = kNone, c = kNone;
        std::vector<Id> list;             // kConcatRows / kAddN inputs
        std::vector<std::uint32_t> idx;   // gather rows, ce classes, attention key validity
        Tensor<T> value;
        Tensor<T> grad;
        Tensor<T> aux;                    // op-specific forward state kept for backward
        Tensor<T> aux2;
        const Tensor<T>* ext = nullptr;   // kInput/kParam external storage
        Parameter<T>* param = nullptr;
        T f0{}, f1{};
        int i0 = 0, i1 = 0;
        bool needs_grad = false;
    };

    const Tensor<T>& val(Id id) const {
        const Node& n = nodes_[id];
        return n.ext ? *n.ext : n.value;
    }

    std::size_t size() const { return nodes_.size(); }

    // ---- leaves -----------------------------------------------------------

    Id input(Tensor<T> t) {
        Node n;
        n.op = Op::kInput;
        n.value = std::move(t);
        return push(std::move(n));
    }

    Id scalar_input(T v) { return input(Tensor<T>::scalar(v)); }

    Id param(Parameter<T>& p) {
        auto it = param_ids_.find(&p);
        if (it != param_ids_.end()) return it->second;
        Node n;
        n.op = Op::kParam;
        n.ext = &p.value;
        n.param = &p;
        n.needs_grad = p.trainable;
        const Id id = push(std::move(n));
        param_ids_.emplace(&p, id);
        return id;
    }

    // ---- primitives -------------------------------------------------------

    Id matmul(Id a, Id b, bool ta = false, bool tb = false) {
        Node n;
        n.op = Op::kMatMul;
        n.a = a;
        n.b = b;
        n.i0 = ta;
        n.i1 = tb;
        n.value = appemb::matmul(val(a), val(b), ta, tb);
        return push_with_grad(std::move(n));
    }

    Id add(Id a, Id b) {
        const Tensor<T>& x = val(a);
        const Tensor<T>& y = val(b);
        if (!x.same_shape(y))
            throw std::runtime_error("add: shape mismatch " + x.shape_str() + " vs " + y.shape_str());
        Node n;
        n.op = Op::kAdd;
        n.a = a;
        n.b = b;
        n.value = x;
        for (std::size_t i = 0; i < y.data.size(); ++i) n.value.data[i] += y.data[i];
        return push_with_grad(std::move(n));
    }

    /// x (n x d) + row (1 x d), broadcast over rows.
    Id add_row(Id x, Id row) {
        const Tensor<T>& xv = val(x);
        const Tensor<T>& rv = val(row);
        if (rv.rows() != 1 || rv.cols() != xv.cols())
            throw std::runtime_error("add_row: want 1x" + std::to_string(xv.cols()) + ", got " +
                                     rv.shape_str());
        Node n;
        n.op = Op::kAddRow;
        n.a = x;
        n.b = row;
        n.value = xv;
        for (std::size_t r = 0; r < xv.rows(); ++r) {
            T* out = n.value.row_ptr(r);
            for (std::size_t c = 0; c < xv.cols(); ++c) out[c] += rv.data[c];
        }
        return push_with_grad(std::move(n));
    }

    Id scale(Id a, T alpha) {
        Node n;
        n.op = Op::kScale;
        n.a = a;
        n.f0 = alpha;
        n.value = val(a);
        for (T& v : n.value.data) v *= alpha;
        return push_with_grad(std::move(n));
    }

    Id concat_rows(const std::vector<Id>& parts) {
        if (parts.empty()) throw std::runtime_error("concat_rows: no inputs");
        const std::size_t cols = val(parts[0]).cols();
        std::size_t rows = 0;
        for (Id p : parts) {
            if (val(p).cols() != cols) throw std::runtime_error("concat_rows: column mismatch");
            rows += val(p).rows();
        }
        Node n;
        n.op = Op::kConcatRows;
        n.list = parts;
        n.value = Tensor<T>(rows, cols);
        std::size_t r = 0;
        for (Id p : parts) {
            const Tensor<T>& v = val(p);
            std::copy(v.data.begin(), v.data.end(), n.value.row_ptr(r));
            r += v.rows();
        }
        return push_with_grad(std::move(n));
    }

    Id slice_rows(Id a, std::size_t r0, std::size_t r1) {
        const Tensor<T>& v = val(a);
        if (r0 >= r1 || r1 > v.rows()) throw std::runtime_error("slice_rows: bad range");
        Node n;
        n.op = Op::kSliceRows;
        n.a = a;
        n.i0 = static_cast<int>(r0);
        n.i1 = static_cast<int>(r1);
        n.value = Tensor<T>(r1 - r0, v.cols());
        std::copy(v.row_ptr(r0), v.row_ptr(r0) + (r1 - r0) * v.cols(), n.value.data.begin());
        return push_with_grad(std::move(n));
    }

    /// Row lookup: out[i] = table[idx[i]]. Adjoint scatter-adds, so repeated
    /// indices accumulate as embedding lookups must.
    Id gather(Id table, std::vector<std::uint32_t> indices) {
        const Tensor<T>& t = val(table);
        for (std::uint32_t i : indices)
            if (i >= t.rows())
                throw std::runtime_error("gather: index " + std::to_string(i) + " out of " +
                                         std::to_string(t.rows()) + " rows");
        Node n;
        n.op = Op::kGather;
        n.a = table;
        n.idx = std::move(indices);
        n.value = Tensor<T>(n.idx.size(), t.cols());
        for (std::size_t r = 0; r < n.idx.size(); ++r)
            std::copy(t.row_ptr(n.idx[r]), t.row_ptr(n.idx[r]) + t.cols(), n.value.row_ptr(r));
        return push_with_grad(std::move(n));
    }

    Id leaky_relu(Id a, T slope) {
        Node n;
        n.op = Op::kLeakyRelu;
        n.a = a;
        n.f0 = slope;
        n.value = val(a);
        for (T& v : n.value.data)
            if (v < T{0}) v *= slope;
        return push_with_grad(std::move(n));
    }

    Id relu(Id a) { return leaky_relu(a, T{0}); }

    Id tanh(Id a) {
        Node n;
        n.op = Op::kTanh;
        n.a = a;
        n.value = val(a);
        for (T& v : n.value.data) v = std::tanh(v);
        return push_with_grad(std::move(n));
    }

    Id sigmoid(Id a) {
        Node n;
        n.op = Op::kSigmoid;
        n.a = a;
        n.value = val(a);
        for (T& v : n.value.data) v = sigmoid_scalar(v);
        return push_with_grad(std::move(n));
    }

    /// Row-wise softmax with max subtraction.
    Id softmax_rows(Id a) {
        Node n;
        n.op = Op::kSoftmaxRows;
        n.a = a;
        n.value = val(a);
        for (std::size_t r = 0; r < n.value.rows(); ++r) softmax_row_inplace(n.value.row_ptr(r), n.value.cols());
        return push_with_grad(std::move(n));
    }

    Id layer_norm(Id x, Id gain, Id bias, T eps) {
        const Tensor<T>& xv = val(x);
        const std::size_t d = xv.cols();
        if (val(gain).numel() != d || val(bias).numel() != d)
            throw std::runtime_error("layer_norm: gain/bias must be 1x" + std::to_string(d));
        Node n;
        n.op = Op::kLayerNorm;
        n.a = x;
        n.b = gain;
        n.c = bias;
        n.f0 = eps;
        n.value = Tensor<T>(xv.rows(), d);
        n.aux = Tensor<T>(xv.rows(), d);      // normalized activations
        n.aux2 = Tensor<T>(xv.rows(), 1);     // 1/std per row
        const T* g = val(gain).data.data();
        const T* b = val(bias).data.data();
        for (std::size_t r = 0; r < xv.rows(); ++r) {
            const T* in = xv.row_ptr(r);
            T mu{0};
            for (std::size_t c = 0; c < d; ++c) mu += in[c];
            mu /= static_cast<T>(d);
            T var{0};
            for (std::size_t c = 0; c < d; ++c) var += (in[c] - mu) * (in[c] - mu);
            var /= static_cast<T>(d);
            const T inv = T{1} / std::sqrt(var + eps);
            n.aux2.data[r] = inv;
            T* xhat = n.aux.row_ptr(r);
            T* out = n.value.row_ptr(r);
            for (std::size_t c = 0; c < d; ++c) {
                xhat[c] = (in[c] - mu) * inv;
                out[c] = xhat[c] * g[c] + b[c];
            }
        }
        return push_with_grad(std::move(n));
    }

    /// Inverted dropout: survivors scaled by 1/(1-p) in training mode, exact
    /// identity otherwise (the input id is returned, no node is recorded).
    Id dropout(Id x, T p, bool training, Rng* rng) {
        if (!training || p <= T{0}) return x;
        if (p >= T{1}) throw std::runtime_error("dropout: rate must be < 1");
        if (rng == nullptr) throw std::runtime_error("dropout: rng required in training mode");
        Node n;
        n.op = Op::kDropout;
        n.a = x;
        n.f0 = p;
        const Tensor<T>& xv = val(x);
        n.aux = Tensor<T>(xv.rows(), xv.cols());
        n.value = Tensor<T>(xv.rows(), xv.cols());
        const T keep_scale = T{1} / (T{1} - p);
        for (std::size_t i = 0; i < xv.data.size(); ++i) {
            const T m = rng->bernoulli(static_cast<double>(p)) ? T{0} : keep_scale;
            n.aux.data[i] = m;
            n.value.data[i] = xv.data[i] * m;
        }
        return push_with_grad(std::move(n));
    }

    /// Mean over every element, scalar result.
    Id mean(Id a) {
        Node n;
        n.op = Op::kMean;
        n.a = a;
        const Tensor<T>& v = val(a);
        T acc{0};
        for (T x : v.data) acc += x;
        n.value = Tensor<T>::scalar(acc / static_cast<T>(v.numel()));
        return push_with_grad(std::move(n));
    }

    Id sum_squares(Id a) {
        Node n;
        n.op = Op::kSumSquares;
        n.a = a;
        T acc{0};
        for (T x : val(a).data) acc += x * x;
        n.value = Tensor<T>::scalar(acc);
        return push_with_grad(std::move(n));
    }

    /// Sum of scalar nodes.
    Id add_n(const std::vector<Id>& parts) {
        if (parts.empty()) throw std::runtime_error("add_n: no inputs");
        Node n;
        n.op = Op::kAddN;
        n.list = parts;
        T acc{0};
        for (Id p : parts) acc += val(p).item();
        n.value = Tensor<T>::scalar(acc);
        return push_with_grad(std::move(n));
    }

    /// Mean element-wise sigmoid cross-entropy against {0,1} targets,
    /// computed in the stable max(z,0) - z*t + log1p(exp(-|z|)) form.
    Id sigmoid_ce(Id logits, Tensor<T> targets) {
        const Tensor<T>& z = val(logits);
        if (!z.same_shape(targets))
            throw std::runtime_error("sigmoid_ce: shape mismatch " + z.shape_str() + " vs " +
                                     targets.shape_str());
        Node n;
        n.op = Op::kSigmoidCe;
        n.a = logits;
        n.aux = std::move(targets);
        n.aux2 = Tensor<T>(z.rows(), z.cols());  // sigmoid(z) for backward
        T acc{0};
        for (std::size_t i = 0; i < z.data.size(); ++i) {
            const T zi = z.data[i];
            const T ti = n.aux.data[i];
            acc += std::max(zi, T{0}) - zi * ti + std::log1p(std::exp(-std::abs(zi)));
            n.aux2.data[i] = sigmoid_scalar(zi);
        }
        n.value = Tensor<T>::scalar(acc / static_cast<T>(z.numel()));
        return push_with_grad(std::move(n));
    }

    /// Mean over rows of -log softmax(row)[class]. Classes index columns.
    Id softmax_ce_rows(Id logits, std::vector<std::uint32_t> classes) {
        const Tensor<T>& z = val(logits);
        if (classes.size() != z.rows())
            throw std::runtime_error("softmax_ce_rows: one class per row required");
        for (std::uint32_t c : classes)
            if (c >= z.cols()) throw std::runtime_error("softmax_ce_rows: class out of range");
        Node n;
        n.op = Op::kSoftmaxCeRows;
        n.a = logits;
        n.idx = std::move(classes);
        n.aux = z;  // becomes row softmax
        T acc{0};
        for (std::size_t r = 0; r < z.rows(); ++r) {
            T* row = n.aux.row_ptr(r);
            const T lse = softmax_row_inplace(row, z.cols());
            acc += lse - z.at(r, n.idx[r]);
        }
        n.value = Tensor<T>::scalar(acc / static_cast<T>(z.rows()));
        return push_with_grad(std::move(n));
    }

    /// Multi-head scaled dot-product attention core. q is Lxd; k and v are
    /// Sxd where S may exceed L (the caller appends extra key/value rows).
    /// key_valid flags the S key positions; invalid keys get -inf logits.
    Id mhsa(Id q, Id k, Id v, int heads, std::vector<std::uint32_t> key_valid) {
        const Tensor<T>& qv = val(q);
        const Tensor<T>& kv = val(k);
        const Tensor<T>& vv = val(v);
        const std::size_t d = qv.cols();
        const std::size_t L = qv.rows();
        const std::size_t S = kv.rows();
        if (kv.cols() != d || vv.cols() != d || vv.rows() != S)
            throw std::runtime_error("mhsa: q/k/v shape mismatch");
        if (heads <= 0 || d % static_cast<std::size_t>(heads) != 0)
            throw std::runtime_error("mhsa: d_model not divisible by heads");
        if (key_valid.size() != S) throw std::runtime_error("mhsa: key_valid size mismatch");
        bool any_valid = false;
        for (std::uint32_t f : key_valid) any_valid = any_valid || (f != 0);
        if (!any_valid) throw std::runtime_error("mhsa: mask excludes all key positions");

        const std::size_t dh = d / static_cast<std::size_t>(heads);
        const T att_scale = T{1} / std::sqrt(static_cast<T>(dh));
        Node n;
        n.op = Op::kMhsa;
        n.a = q;
        n.b = k;
        n.c = v;
        n.i0 = heads;
        n.idx = std::move(key_valid);
        n.value = Tensor<T>(L, d);
        n.aux = Tensor<T>(static_cast<std::size_t>(heads) * L, S);  // attention probabilities
        n.f0 = att_scale;
        for (int h = 0; h < heads; ++h) {
            const std::size_t off = static_cast<std::size_t>(h) * dh;
            for (std::size_t i = 0; i < L; ++i) {
                T* prow = n.aux.row_ptr(static_cast<std::size_t>(h) * L + i);
                const T* qrow = qv.row_ptr(i) + off;
                T mx = -std::numeric_limits<T>::infinity();
                for (std::size_t j = 0; j < S; ++j) {
                    if (!n.idx[j]) {
                        prow[j] = -std::numeric_limits<T>::infinity();
                        continue;
                    }
                    const T* krow = kv.row_ptr(j) + off;
                    T acc{0};
                    for (std::size_t t = 0; t < dh; ++t) acc += qrow[t] * krow[t];
                    prow[j] = acc * att_scale;
                    mx = std::max(mx, prow[j]);
                }
                T denom{0};
                for (std::size_t j = 0; j < S; ++j) {
                    prow[j] = n.idx[j] ? std::exp(prow[j] - mx) : T{0};
                    denom += prow[j];
                }
                for (std::size_t j = 0; j < S; ++j) prow[j] /= denom;
                T* orow = n.value.row_ptr(i) + off;
                for (std::size_t t = 0; t < dh; ++t) orow[t] = T{0};
                for (std::size_t j = 0; j < S; ++j) {
                    const T p = prow[j];
                    if (p == T{0}) continue;
                    const T* vrow = vv.row_ptr(j) + off;
                    for (std::size_t t = 0; t < dh; ++t) orow[t] += p * vrow[t];
                }
            }
        }
        return push_with_grad(std::move(n));
    }

    // ---- backward ---------------------------------------------------------

    /// Reverse sweep. With accumulate_params the leaf adjoints are added
    /// into each Parameter's grad buffer; otherwise they stay on the tape
    /// (see param_grads) so callers can reduce across graphs in an order of
    /// their own choosing.
    void backward(Id loss, bool accumulate_params = true) {
        Node& top = nodes_[loss];
        if (val(loss).numel() != 1) throw std::runtime_error("backward: loss must be scalar");
        ensure_grad(loss);
        top.grad.data[0] = T{1};
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            Node& n = nodes_[i];
            if (n.grad.empty() || !n.needs_grad) continue;
            backward_node(n);
        }
        if (!accumulate_params) return;
        for (auto& [p, id] : param_ids_) {
            Node& n = nodes_[id];
            if (n.grad.empty()) continue;
            axpy(p->grad, T{1}, n.grad);
        }
    }

    /// Leaf adjoints recorded by the last backward(), one entry per
    /// Parameter used in this graph (empty tensor when it got no gradient).
    std::vector<std::pair<Parameter<T>*, const Tensor<T>*>> param_grads() const {
        std::vector<std::pair<Parameter<T>*, const Tensor<T>*>> out;
        out.reserve(param_ids_.size());
        for (const auto& [p, id] : param_ids_) out.emplace_back(p, &nodes_[id].grad);
        return out;
    }

    // value inspection helpers for tests/metrics
    const Node& node(Id id) const { return nodes_[id]; }

private:
    static T sigmoid_scalar(T v) {
        if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
        const T e = std::exp(v);
        return e / (T{1} + e);
    }

    /// In-place softmax of a row; returns logsumexp of the original row.
    static T softmax_row_inplace(T* row, std::size_t n) {
        T mx = row[0];
        for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, row[i]);
        T denom{0};
        for (std::size_t i = 0; i < n; ++i) {
            row[i] = std::exp(row[i] - mx);
            denom += row[i];
        }
        for (std::size_t i = 0; i < n; ++i) row[i] /= denom;
        return mx + std::log(denom);
    }

    Id push(Node&& n) {
        nodes_.push_back(std::move(n));
        return static_cast<Id>(nodes_.size() - 1);
    }

    Id push_with_grad(Node&& n) {
        bool g = false;
        for (Id in : {n.a, n.b, n.c})
            if (in != kNone) g = g || nodes_[in].needs_grad;
        for (Id in : n.list) g = g || nodes_[in].needs_grad;
        n.needs_grad = g;
        return push(std::move(n));
    }

    void ensure_grad(Id id) {
        Node& n = nodes_[id];
        if (n.grad.empty()) {
            const Tensor<T>& v = val(id);
            n.grad = Tensor<T>(v.rows(), v.cols());
        }
    }

    Tensor<T>* grad_of(Id id) {
        if (id == kNone || !nodes_[id].needs_grad) return nullptr;
        ensure_grad(id);
        return &nodes_[id].grad;
    }

    void backward_node(Node& n) {
        const Tensor<T>& g = n.grad;
        switch (n.op) {
            case Op::kInput:
            case Op::kParam:
                break;
            case Op::kMatMul: {
                const bool ta = n.i0, tb = n.i1;
                // C = opA(A) opB(B); standard transpose algebra per flag case
                if (Tensor<T>* da = grad_of(n.a)) {
                    if (!ta)
                        matmul_into(*da, g, val(n.b), false, !tb, true);
                    else
                        matmul_into(*da, val(n.b), g, tb, true, true);
                }
                if (Tensor<T>* db = grad_of(n.b)) {
                    if (!tb)
                        matmul_into(*db, val(n.a), g, !ta, false, true);
                    else
                        matmul_into(*db, g, val(n.a), true, ta, true);
                }
                break;
            }
            case Op::kAdd:
                if (Tensor<T>* da = grad_of(n.a)) axpy(*da, T{1}, g);
                if (Tensor<T>* db = grad_of(n.b)) axpy(*db, T{1}, g);
                break;
            case Op::kAddRow: {
                if (Tensor<T>* da = grad_of(n.a)) axpy(*da, T{1}, g);
                if (Tensor<T>* db = grad_of(n.b)) {
                    for (std::size_t r = 0; r < g.rows(); ++r) {
                        const T* gr = g.row_ptr(r);
                        for (std::size_t c = 0; c < g.cols(); ++c) db->data[c] += gr[c];
                    }
                }
                break;
            }
            case Op::kScale:
                if (Tensor<T>* da = grad_of(n.a)) axpy(*da, n.f0, g);
                break;
            case Op::kConcatRows: {
                std::size_t r = 0;
                for (Id p : n.list) {
                    const std::size_t pr = val(p).rows();
                    if (Tensor<T>* dp = grad_of(p)) {
                        for (std::size_t i = 0; i < pr * g.cols(); ++i)
                            dp->data[i] += g.data[r * g.cols() + i];
                    }
                    r += pr;
                }
                break;
            }
            case Op::kSliceRows:
                if (Tensor<T>* da = grad_of(n.a)) {
                    const std::size_t r0 = static_cast<std::size_t>(n.i0);
                    for (std::size_t i = 0; i < g.numel(); ++i)
                        da->data[r0 * g.cols() + i] += g.data[i];
                }
                break;
            case Op::kGather:
                if (Tensor<T>* da = grad_of(n.a)) {
                    for (std::size_t r = 0; r < n.idx.size(); ++r) {
                        T* dst = da->row_ptr(n.idx[r]);
                        const T* src = g.row_ptr(r);
                        for (std::size_t c = 0; c < g.cols(); ++c) dst[c] += src[c];
                    }
                }
                break;
            case Op::kLeakyRelu:
                if (Tensor<T>* da = grad_of(n.a)) {
                    const Tensor<T>& x = val(n.a);
                    for (std::size_t i = 0; i < g.data.size(); ++i)
                        da->data[i] += g.data[i] * (x.data[i] >= T{0} ? T{1} : n.f0);
                }
                break;
            case Op::kTanh:
                if (Tensor<T>* da = grad_of(n.a))
                    for (std::size_t i = 0; i < g.data.size(); ++i)
                        da->data[i] += g.data[i] * (T{1} - n.value.data[i] * n.value.data[i]);
                break;
            case Op::kSigmoid:
                if (Tensor<T>* da = grad_of(n.a))
                    for (std::size_t i = 0; i < g.data.size(); ++i)
                        da->data[i] += g.data[i] * n.value.data[i] * (T{1} - n.value.data[i]);
                break;
            case Op::kSoftmaxRows:
                if (Tensor<T>* da = grad_of(n.a)) {
                    for (std::size_t r = 0; r < g.rows(); ++r) {
                        const T* p = n.value.row_ptr(r);
                        const T* gr = g.row_ptr(r);
                        T dot{0};
                        for (std::size_t c = 0; c < g.cols(); ++c) dot += p[c] * gr[c];
                        T* dst = da->row_ptr(r);
                        for (std::size_t c = 0; c < g.cols(); ++c) dst[c] += p[c] * (gr[c] - dot);
                    }
                }
                break;
            case Op::kLayerNorm: {
                const std::size_t d = g.cols();
                const T* gain = val(n.b).data.data();
                Tensor<T>* dx = grad_of(n.a);
                Tensor<T>* dg = grad_of(n.b);
                Tensor<T>* db = grad_of(n.c);
                for (std::size_t r = 0; r < g.rows(); ++r) {
                    const T* gr = g.row_ptr(r);
                    const T* xh = n.aux.row_ptr(r);
                    const T inv = n.aux2.data[r];
                    if (dg || db) {
                        for (std::size_t c = 0; c < d; ++c) {
                            if (dg) dg->data[c] += gr[c] * xh[c];
                            if (db) db->data[c] += gr[c];
                        }
                    }
                    if (dx) {
                        T m1{0}, m2{0};
                        for (std::size_t c = 0; c < d; ++c) {
                            const T dxh = gr[c] * gain[c];
                            m1 += dxh;
                            m2 += dxh * xh[c];
                        }
                        m1 /= static_cast<T>(d);
                        m2 /= static_cast<T>(d);
                        T* dst = dx->row_ptr(r);
                        for (std::size_t c = 0; c < d; ++c)
                            dst[c] += inv * (gr[c] * gain[c] - m1 - xh[c] * m2);
                    }
                }
                break;
            }
            case Op::kDropout:
                if (Tensor<T>* da = grad_of(n.a))
                    for (std::size_t i = 0; i < g.data.size(); ++i)
                        da->data[i] += g.data[i] * n.aux.data[i];
                break;
            case Op::kMean:
                if (Tensor<T>* da = grad_of(n.a)) {
                    const T go = g.data[0] / static_cast<T>(da->numel());
                    for (T& v : da->data) v += go;
                }
                break;
            case Op::kSumSquares:
                if (Tensor<T>* da = grad_of(n.a)) {
                    const Tensor<T>& x = val(n.a);
                    const T go = g.data[0];
                    for (std::size_t i = 0; i < x.data.size(); ++i) da->data[i] += T{2} * x.data[i] * go;
                }
                break;
            case Op::kAddN:
                for (Id p : n.list)
                    if (Tensor<T>* dp = grad_of(p)) dp->data[0] += g.data[0];
                break;
            case Op::kSigmoidCe:
                if (Tensor<T>* da = grad_of(n.a)) {
                    const T go = g.data[0] / static_cast<T>(da->numel());
                    for (std::size_t i = 0; i < da->data.size(); ++i)
                        da->data[i] += go * (n.aux2.data[i] - n.aux.data[i]);
                }
                break;
            case Op::kSoftmaxCeRows:
                if (Tensor<T>* da = grad_of(n.a)) {
                    const T go = g.data[0] / static_cast<T>(da->rows());
                    for (std::size_t r = 0; r < da->rows(); ++r) {
                        const T* p = n.aux.row_ptr(r);
                        T* dst = da->row_ptr(r);
                        for (std::size_t c = 0; c < da->cols(); ++c) dst[c] += go * p[c];
                        dst[n.idx[r]] -= go;
                    }
                }
                break;
            case Op::kMhsa: {
                const int heads = n.i0;
                const std::size_t d = g.cols();
                const std::size_t dh = d / static_cast<std::size_t>(heads);
                const std::size_t L = g.rows();
                const std::size_t S = val(n.b).rows();
                const Tensor<T>& kv = val(n.b);
                const Tensor<T>& vv = val(n.c);
                const Tensor<T>& qv = val(n.a);
                Tensor<T>* dq = grad_of(n.a);
                Tensor<T>* dk = grad_of(n.b);
                Tensor<T>* dv = grad_of(n.c);
                std::vector<T> dp(S), ds(S);
                for (int h = 0; h < heads; ++h) {
                    const std::size_t off = static_cast<std::size_t>(h) * dh;
                    for (std::size_t i = 0; i < L; ++i) {
                        const T* prow = n.aux.row_ptr(static_cast<std::size_t>(h) * L + i);
                        const T* grow = g.row_ptr(i) + off;
                        T pdot{0};
                        for (std::size_t j = 0; j < S; ++j) {
                            if (prow[j] == T{0}) {
                                dp[j] = T{0};
                                continue;
                            }
                            const T* vrow = vv.row_ptr(j) + off;
                            T acc{0};
                            for (std::size_t t = 0; t < dh; ++t) acc += grow[t] * vrow[t];
                            dp[j] = acc;
                            pdot += acc * prow[j];
                            if (dv) {
                                T* dvr = dv->row_ptr(j) + off;
                                for (std::size_t t = 0; t < dh; ++t) dvr[t] += prow[j] * grow[t];
                            }
                        }
                        for (std::size_t j = 0; j < S; ++j) ds[j] = prow[j] * (dp[j] - pdot) * n.f0;
                        const T* qrow = qv.row_ptr(i) + off;
                        for (std::size_t j = 0; j < S; ++j) {
                            if (ds[j] == T{0}) continue;
                            const T* krow = kv.row_ptr(j) + off;
                            if (dq) {
                                T* dqr = dq->row_ptr(i) + off;
                                for (std::size_t t = 0; t < dh; ++t) dqr[t] += ds[j] * krow[t];
                            }
                            if (dk) {
                                T* dkr = dk->row_ptr(j) + off;
                                for (std::size_t t = 0; t < dh; ++t) dkr[t] += ds[j] * qrow[t];
                            }
                        }
                    }
                }
                break;
            }
        }
    }

    std::vector<Node> nodes_;
    std::unordered_map<Parameter<T>*, Id> param_ids_;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t coords_checked = 0;
    std::string worst_param;
};

/// Central-difference gradient check over sampled coordinates. `make_loss`
/// must rebuild the forward pass from current parameter values; when its
/// argument is true it must also run backward so grads accumulate.
///
/// Each coordinate is probed at steps {10e, e, e/10, e/100} and scored by
/// its best agreement: with piecewise-linear activations no single step
/// works (wide steps straddle relu kinks, narrow ones drown small gradients
/// in float cancellation), while a wrong adjoint disagrees at every scale.
template <typename T, typename MakeLoss>
GradCheckReport grad_check(const std::vector<Parameter<T>*>& params, MakeLoss&& make_loss, Rng& rng,
                           std::size_t samples_per_param = 8, double eps = 1e-5) {
    for (auto* p : params) p->zero_grad();
    (void)make_loss(true);

    std::vector<Tensor<T>> analytic;
    analytic.reserve(params.size());
    for (auto* p : params) analytic.push_back(p->grad);

    GradCheckReport rep;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Parameter<T>& p = *params[pi];
        if (!p.trainable) continue;
        const std::size_t n = p.value.numel();
        const std::size_t k = std::min<std::size_t>(samples_per_param, n);
        auto coords = rng.sample_without_replacement(static_cast<std::uint32_t>(n),
                                                     static_cast<std::uint32_t>(k));
        for (std::uint32_t ci : coords) {
            const double a = static_cast<double>(analytic[pi].data[ci]);
            double rel = std::numeric_limits<double>::infinity();
            for (const double step : {10.0 * eps, eps, eps / 10.0, eps / 100.0}) {
                const T saved = p.value.data[ci];
                p.value.data[ci] = saved + static_cast<T>(step);
                const double f_plus = static_cast<double>(make_loss(false));
                p.value.data[ci] = saved - static_cast<T>(step);
                const double f_minus = static_cast<double>(make_loss(false));
                p.value.data[ci] = saved;
                const double numeric = (f_plus - f_minus) / (2.0 * step);
                const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
                rel = std::min(rel, std::abs(a - numeric) / denom);
            }
            ++rep.coords_checked;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_param = p.name;
            }
        }
    }
    return rep;
}

}  // namespace appemb
