#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "comet/error.hpp"
#include "comet/kernels.hpp"

namespace comet {

// Handle into a Tape. Plain index; valid only for the tape that produced it.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape over dense row-major matrices. Nodes are whole arrays,
// not scalars; ops record just enough to replay backward. Weight matrices
// are stored [in, out] so that Y = X * W needs no transposition.
//
// reset() keeps allocations so a tape can be reused across training
// iterations without churning the allocator.
template <class T>
class Tape {
public:
    enum class Op : std::uint8_t {
        kLeaf,
        kLinear,        // in0 * W(in1) + bias(in2, optional)
        kAdd,
        kMul,
        kAffine,        // a*x + b elementwise, a/b in auxd
        kTanh,
        kSigmoid,
        kSoftplus,
        kConcatCols,    // aux: member ids
        kBroadcastRow,  // [1,C] -> [R,C]
        kGatherRows,    // aux: row indices into in0
        kSelectRows,    // aux: byte mask; Y[r] = mask[r] ? in0[r] : in1[r]
        kChooseAcross,  // aux: n ids then R indices; Y[r] = X_{idx[r]}[r,:]
        kColSlice,      // aux[0]: column j of in0 -> [R,1]
        kSoftmaxRows,
        kLogSoftmaxRows,
        kLogSumExpRows, // [R,C] -> [R,1]
        kLogSumExpCol,  // [R,1] -> [1,1]
        kMix,           // in0: activation [R,N]; aux: N matrix ids; Y = sum_z a[:,z]*X_z
        kMvnRows,       // in0: pred [R,d]; in1: target [1,d]; in2: sigma [1,1] -> [R,1]
        kSqDiffSum,     // sum((in0-in1)^2) -> [1,1]
        kLinComb,       // aux ids, auxd coeffs then trailing constant -> [1,1]
    };

    struct Node {
        Op op;
        bool needs_grad;
        int rows, cols;
        std::size_t data_ofs;
        std::size_t grad_ofs;  // npos if no grad storage
        int in0 = -1, in1 = -1, in2 = -1;
        int aux_ofs = 0, aux_len = 0;
        int auxd_ofs = 0, auxd_len = 0;
        int param_ofs = -1;
    };

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    void reset() {
        nodes_.clear();
        data_.clear();
        aux_.clear();
        auxd_.clear();
        param_leaves_.clear();
        grad_size_ = 0;
    }

    int size() const { return static_cast<int>(nodes_.size()); }

    std::span<T> vals(Var v) {
        Node& n = node(v);
        return {data_.data() + n.data_ofs, numel(n)};
    }
    std::span<const T> vals(Var v) const {
        const Node& n = node(v);
        return {data_.data() + n.data_ofs, numel(n)};
    }
    std::span<T> grads(Var v) {
        Node& n = node(v);
        if (n.grad_ofs == npos) throw ShapeMismatch("variable has no gradient storage");
        return {grad_.data() + n.grad_ofs, numel(n)};
    }
    int rows(Var v) const { return node(v).rows; }
    int cols(Var v) const { return node(v).cols; }

    // ---- leaves ----

    Var constant(int rows, int cols) { return push(Op::kLeaf, rows, cols, false); }

    template <class S>
    Var constant(int rows, int cols, const S* src) {
        Var v = constant(rows, cols);
        copy_in(v, src);
        return v;
    }

    Var scalar_const(T x) {
        Var v = constant(1, 1);
        vals(v)[0] = x;
        return v;
    }

    // Learnable leaf; src is the float32 master copy, flat_ofs its offset in
    // the flat parameter vector used for gradient export.
    Var param(int rows, int cols, const float* src, int flat_ofs) {
        Var v = push(Op::kLeaf, rows, cols, true);
        copy_in(v, src);
        nodes_[v.id].param_ofs = flat_ofs;
        param_leaves_.push_back(v.id);
        return v;
    }

    // ---- ops ----

    // NOTE: push() may reallocate the node and data arenas, so every op copies
    // the input dims/offsets it needs into locals before pushing and re-derives
    // raw pointers afterwards.
    Var linear(Var x, Var w, Var bias = {}) {
        const int xr = node(x).rows, xc = node(x).cols;
        const int wr = node(w).rows, wc = node(w).cols;
        const std::size_t x_ofs = node(x).data_ofs, w_ofs = node(w).data_ofs;
        if (xc != wr) throw ShapeMismatch("linear: x " + dims(x) + " w " + dims(w));
        std::size_t b_ofs = npos;
        if (bias.valid()) {
            if (node(bias).rows != 1 || node(bias).cols != wc)
                throw ShapeMismatch("linear: bias " + dims(bias));
            b_ofs = node(bias).data_ofs;
        }
        Var y = push(Op::kLinear, xr, wc, any_grad({x, w, bias}));
        Node& yn = nodes_[y.id];
        yn.in0 = x.id;
        yn.in1 = w.id;
        yn.in2 = bias.valid() ? bias.id : -1;
        T* out = data_.data() + yn.data_ofs;
        if (b_ofs != npos) {
            const T* b = data_.data() + b_ofs;
            for (int r = 0; r < xr; ++r)
                std::memcpy(out + static_cast<std::size_t>(r) * wc, b, sizeof(T) * wc);
        } else {
            std::fill(out, out + numel(yn), T(0));
        }
        kern::mm_nn(out, data_.data() + x_ofs, data_.data() + w_ofs, xr, xc, wc);
        return y;
    }

    Var add(Var a, Var b) {
        check_same(a, b, "add");
        Var y = push(Op::kAdd, node(a).rows, node(a).cols, any_grad({a, b}));
        link(y, a, b);
        auto av = vals(a), bv = vals(b), yv = vals(y);
        for (std::size_t i = 0; i < yv.size(); ++i) yv[i] = av[i] + bv[i];
        return y;
    }

    Var mul(Var a, Var b) {
        check_same(a, b, "mul");
        Var y = push(Op::kMul, node(a).rows, node(a).cols, any_grad({a, b}));
        link(y, a, b);
        auto av = vals(a), bv = vals(b), yv = vals(y);
        for (std::size_t i = 0; i < yv.size(); ++i) yv[i] = av[i] * bv[i];
        return y;
    }

    Var affine(Var x, T a, T b) {
        Var y = push(Op::kAffine, node(x).rows, node(x).cols, node(x).needs_grad);
        link(y, x);
        push_auxd(y, {a, b});
        auto xv = vals(x);
        auto yv = vals(y);
        for (std::size_t i = 0; i < yv.size(); ++i) yv[i] = a * xv[i] + b;
        return y;
    }

    Var tanh(Var x) {
        Var y = push(Op::kTanh, node(x).rows, node(x).cols, node(x).needs_grad);
        link(y, x);
        auto xv = vals(x);
        auto yv = vals(y);
        for (std::size_t i = 0; i < yv.size(); ++i) yv[i] = std::tanh(xv[i]);
        return y;
    }

    Var sigmoid(Var x) {
        Var y = push(Op::kSigmoid, node(x).rows, node(x).cols, node(x).needs_grad);
        link(y, x);
        auto xv = vals(x);
        auto yv = vals(y);
        for (std::size_t i = 0; i < yv.size(); ++i) yv[i] = T(1) / (T(1) + std::exp(-xv[i]));
        return y;
    }

    Var softplus(Var x) {
        Var y = push(Op::kSoftplus, node(x).rows, node(x).cols, node(x).needs_grad);
        link(y, x);
        auto xv = vals(x);
        auto yv = vals(y);
        for (std::size_t i = 0; i < yv.size(); ++i) {
            const T v = xv[i];
            yv[i] = v > T(20) ? v : std::log1p(std::exp(v));
        }
        return y;
    }

    Var concat_cols(std::span<const Var> parts) {
        if (parts.empty()) throw ShapeMismatch("concat: no parts");
        int r = node(parts[0]).rows, c = 0;
        bool g = false;
        for (Var p : parts) {
            if (node(p).rows != r) throw ShapeMismatch("concat: row mismatch");
            c += node(p).cols;
            g = g || node(p).needs_grad;
        }
        Var y = push(Op::kConcatCols, r, c, g);
        std::vector<int> ids;
        for (Var p : parts) ids.push_back(p.id);
        push_aux(y, ids);
        T* out = data_.data() + nodes_[y.id].data_ofs;
        for (int row = 0; row < r; ++row) {
            T* dst = out + static_cast<std::size_t>(row) * c;
            for (Var p : parts) {
                const Node& pn = node(p);
                std::memcpy(dst, data_.data() + pn.data_ofs + static_cast<std::size_t>(row) * pn.cols,
                            sizeof(T) * pn.cols);
                dst += pn.cols;
            }
        }
        return y;
    }

    Var broadcast_rows(Var x, int R) {
        const int xc = node(x).cols;
        const std::size_t x_ofs = node(x).data_ofs;
        if (node(x).rows != 1) throw ShapeMismatch("broadcast: expected single row");
        Var y = push(Op::kBroadcastRow, R, xc, node(x).needs_grad);
        link(y, x);
        const T* src = data_.data() + x_ofs;
        T* out = data_.data() + nodes_[y.id].data_ofs;
        for (int r = 0; r < R; ++r)
            std::memcpy(out + static_cast<std::size_t>(r) * xc, src, sizeof(T) * xc);
        return y;
    }

    Var gather_rows(Var x, std::span<const int> idx) {
        const int xc = node(x).cols;
        const std::size_t x_ofs = node(x).data_ofs;
        Var y = push(Op::kGatherRows, static_cast<int>(idx.size()), xc, node(x).needs_grad);
        link(y, x);
        push_aux(y, idx);
        const T* src = data_.data() + x_ofs;
        T* out = data_.data() + nodes_[y.id].data_ofs;
        for (std::size_t r = 0; r < idx.size(); ++r)
            std::memcpy(out + r * static_cast<std::size_t>(xc),
                        src + static_cast<std::size_t>(idx[r]) * xc, sizeof(T) * xc);
        return y;
    }

    Var select_rows(std::span<const std::uint8_t> mask, Var a, Var b) {
        check_same(a, b, "select");
        const int rows = node(a).rows, cols = node(a).cols;
        if (static_cast<int>(mask.size()) != rows) throw ShapeMismatch("select: mask length");
        Var y = push(Op::kSelectRows, rows, cols, any_grad({a, b}));
        link(y, a, b);
        std::vector<int> m(mask.begin(), mask.end());
        push_aux(y, m);
        auto av = vals(a), bv = vals(b), yv = vals(y);
        for (int r = 0; r < rows; ++r) {
            const std::size_t o = static_cast<std::size_t>(r) * cols;
            std::memcpy(yv.data() + o, (mask[r] ? av.data() : bv.data()) + o, sizeof(T) * cols);
        }
        return y;
    }

    Var choose_across(std::span<const Var> options, std::span<const int> choice) {
        const Node& first = node(options[0]);
        const int R = first.rows, C = first.cols;
        bool g = false;
        for (Var o : options) {
            if (node(o).rows != R || node(o).cols != C) throw ShapeMismatch("choose: shape");
            g = g || node(o).needs_grad;
        }
        if (static_cast<int>(choice.size()) != R) throw ShapeMismatch("choose: index length");
        Var y = push(Op::kChooseAcross, R, C, g);
        std::vector<int> aux;
        aux.push_back(static_cast<int>(options.size()));
        for (Var o : options) aux.push_back(o.id);
        aux.insert(aux.end(), choice.begin(), choice.end());
        push_aux(y, aux);
        T* out = data_.data() + nodes_[y.id].data_ofs;
        for (int r = 0; r < R; ++r) {
            const Node& src = node(options[static_cast<std::size_t>(choice[r])]);
            std::memcpy(out + static_cast<std::size_t>(r) * C,
                        data_.data() + src.data_ofs + static_cast<std::size_t>(r) * C,
                        sizeof(T) * C);
        }
        return y;
    }

    Var col_slice(Var x, int j) {
        const int xr = node(x).rows, xc = node(x).cols;
        const std::size_t x_ofs = node(x).data_ofs;
        if (j < 0 || j >= xc) throw ShapeMismatch("col_slice: column out of range");
        Var y = push(Op::kColSlice, xr, 1, node(x).needs_grad);
        link(y, x);
        push_aux(y, {j});
        const T* src = data_.data() + x_ofs;
        auto yv = vals(y);
        for (int r = 0; r < xr; ++r) yv[r] = src[static_cast<std::size_t>(r) * xc + j];
        return y;
    }

    Var softmax_rows(Var x) { return rowwise_softmax(x, false); }
    Var log_softmax_rows(Var x) { return rowwise_softmax(x, true); }

    Var logsumexp_rows(Var x) {
        const int xr = node(x).rows, xc = node(x).cols;
        const std::size_t x_ofs = node(x).data_ofs;
        Var y = push(Op::kLogSumExpRows, xr, 1, node(x).needs_grad);
        link(y, x);
        const T* xv = data_.data() + x_ofs;
        auto yv = vals(y);
        for (int r = 0; r < xr; ++r) yv[r] = lse(xv + static_cast<std::size_t>(r) * xc, xc);
        return y;
    }

    Var logsumexp_col(Var x) {
        const int xr = node(x).rows;
        const std::size_t x_ofs = node(x).data_ofs;
        if (node(x).cols != 1) throw ShapeMismatch("logsumexp_col: expected column vector");
        Var y = push(Op::kLogSumExpCol, 1, 1, node(x).needs_grad);
        link(y, x);
        vals(y)[0] = lse(data_.data() + x_ofs, xr);
        return y;
    }

    Var mix(Var activation, std::span<const Var> states) {
        const int N = node(activation).cols;
        const int R = node(activation).rows, C = node(states[0]).cols;
        const std::size_t a_ofs = node(activation).data_ofs;
        if (N != static_cast<int>(states.size())) throw ShapeMismatch("mix: option count");
        bool g = node(activation).needs_grad;
        for (Var s : states) {
            if (node(s).rows != R || node(s).cols != C) throw ShapeMismatch("mix: state shape");
            g = g || node(s).needs_grad;
        }
        Var y = push(Op::kMix, R, C, g);
        nodes_[y.id].in0 = activation.id;
        std::vector<int> ids;
        for (Var s : states) ids.push_back(s.id);
        push_aux(y, ids);
        T* out = data_.data() + nodes_[y.id].data_ofs;
        std::fill(out, out + numel(nodes_[y.id]), T(0));
        scratch_.resize(static_cast<std::size_t>(R));
        const T* av = data_.data() + a_ofs;
        for (int z = 0; z < N; ++z) {
            for (int r = 0; r < R; ++r) scratch_[r] = av[static_cast<std::size_t>(r) * N + z];
            kern::rs_add(out, data_.data() + node(states[static_cast<std::size_t>(z)]).data_ofs,
                         scratch_.data(), R, C);
        }
        return y;
    }

    // Row-wise isotropic normal log-density: out[r] = -d*log(sigma*sqrt(2pi))
    // - |pred[r]-target|^2 / (2 sigma^2)
    Var mvn_logpdf_rows(Var pred, Var target, Var sigma) {
        const int pr = node(pred).rows, pc = node(pred).cols;
        const std::size_t p_ofs = node(pred).data_ofs, t_ofs = node(target).data_ofs;
        if (node(target).rows != 1 || node(target).cols != pc)
            throw ShapeMismatch("mvn: target " + dims(target) + " pred " + dims(pred));
        if (node(sigma).rows != 1 || node(sigma).cols != 1) throw ShapeMismatch("mvn: sigma shape");
        const T sg = vals(sigma)[0];
        if (!(sg > T(0))) throw NonPositiveSigma(static_cast<double>(sg));
        Var y = push(Op::kMvnRows, pr, 1, any_grad({pred, sigma}));
        Node& yn = nodes_[y.id];
        yn.in0 = pred.id;
        yn.in1 = target.id;
        yn.in2 = sigma.id;
        const T* pv = data_.data() + p_ofs;
        const T* tv = data_.data() + t_ofs;
        auto yv = vals(y);
        const T logz = -T(pc) * std::log(sg * std::sqrt(T(2) * pi()));
        for (int r = 0; r < pr; ++r) {
            T ss = T(0);
            const T* row = pv + static_cast<std::size_t>(r) * pc;
            for (int c = 0; c < pc; ++c) {
                const T d = row[c] - tv[c];
                ss += d * d;
            }
            yv[r] = logz - ss / (T(2) * sg * sg);
        }
        return y;
    }

    Var sq_diff_sum(Var a, Var b) {
        check_same(a, b, "sq_diff_sum");
        Var y = push(Op::kSqDiffSum, 1, 1, any_grad({a, b}));
        link(y, a, b);
        auto av = vals(a), bv = vals(b);
        T s = T(0);
        for (std::size_t i = 0; i < av.size(); ++i) {
            const T d = av[i] - bv[i];
            s += d * d;
        }
        vals(y)[0] = s;
        return y;
    }

    // out = sum_i coeff_i * x_i + constant; every x_i must be [1,1]
    Var lin_comb(std::span<const Var> xs, std::span<const T> coeffs, T constant) {
        if (xs.size() != coeffs.size()) throw ShapeMismatch("lin_comb: arity");
        bool g = false;
        T s = constant;
        std::vector<int> ids;
        std::vector<T> cs;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            if (node(xs[i]).rows != 1 || node(xs[i]).cols != 1)
                throw ShapeMismatch("lin_comb: scalar inputs only");
            g = g || node(xs[i]).needs_grad;
            s += coeffs[i] * vals(xs[i])[0];
            ids.push_back(xs[i].id);
            cs.push_back(coeffs[i]);
        }
        Var y = push(Op::kLinComb, 1, 1, g);
        push_aux(y, ids);
        cs.push_back(constant);
        push_auxd(y, cs);
        vals(y)[0] = s;
        return y;
    }

    // ---- backward ----

    void backward(Var loss) {
        if (node(loss).rows != 1 || node(loss).cols != 1)
            throw ShapeMismatch("backward: loss must be scalar");
        grad_.assign(grad_size_, T(0));
        if (node(loss).grad_ofs == npos) return;  // loss does not depend on params
        grad_[node(loss).grad_ofs] = T(1);
        for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) backward_node(nodes_[i]);
    }

    // flat[param_ofs + i] += grad_i for every parameter leaf
    void export_param_grads(T* flat) const {
        for (int id : param_leaves_) {
            const Node& n = nodes_[id];
            if (n.grad_ofs == npos) continue;
            const T* g = grad_.data() + n.grad_ofs;
            T* dst = flat + n.param_ofs;
            const std::size_t cnt = numel(n);
            for (std::size_t i = 0; i < cnt; ++i) dst[i] += g[i];
        }
    }

private:
    static constexpr T pi() { return T(3.14159265358979323846264338327950288L); }

    static std::size_t numel(const Node& n) {
        return static_cast<std::size_t>(n.rows) * static_cast<std::size_t>(n.cols);
    }

    Node& node(Var v) { return nodes_[static_cast<std::size_t>(v.id)]; }
    const Node& node(Var v) const { return nodes_[static_cast<std::size_t>(v.id)]; }

    std::string dims(Var v) const {
        return "[" + std::to_string(node(v).rows) + "x" + std::to_string(node(v).cols) + "]";
    }

    bool any_grad(std::initializer_list<Var> vs) const {
        for (Var v : vs)
            if (v.valid() && node(v).needs_grad) return true;
        return false;
    }

    void check_same(Var a, Var b, const char* what) const {
        if (node(a).rows != node(b).rows || node(a).cols != node(b).cols)
            throw ShapeMismatch(std::string(what) + ": " + dims(a) + " vs " + dims(b));
    }

    Var push(Op op, int rows, int cols, bool needs_grad) {
        Node n;
        n.op = op;
        n.needs_grad = needs_grad;
        n.rows = rows;
        n.cols = cols;
        n.data_ofs = data_.size();
        const std::size_t cnt = static_cast<std::size_t>(rows) * cols;
        data_.resize(data_.size() + cnt);
        if (needs_grad) {
            n.grad_ofs = grad_size_;
            grad_size_ += cnt;
        } else {
            n.grad_ofs = npos;
        }
        nodes_.push_back(n);
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    void link(Var y, Var a, Var b = {}) {
        nodes_[y.id].in0 = a.id;
        nodes_[y.id].in1 = b.valid() ? b.id : -1;
    }

    void push_aux(Var y, std::span<const int> xs) {
        nodes_[y.id].aux_ofs = static_cast<int>(aux_.size());
        nodes_[y.id].aux_len = static_cast<int>(xs.size());
        aux_.insert(aux_.end(), xs.begin(), xs.end());
    }
    void push_aux(Var y, std::initializer_list<int> xs) {
        push_aux(y, std::span<const int>(xs.begin(), xs.size()));
    }
    void push_auxd(Var y, std::span<const T> xs) {
        nodes_[y.id].auxd_ofs = static_cast<int>(auxd_.size());
        nodes_[y.id].auxd_len = static_cast<int>(xs.size());
        auxd_.insert(auxd_.end(), xs.begin(), xs.end());
    }
    void push_auxd(Var y, std::initializer_list<T> xs) {
        push_auxd(y, std::span<const T>(xs.begin(), xs.size()));
    }
    void push_auxd(Var y, const std::vector<T>& xs) {
        push_auxd(y, std::span<const T>(xs.data(), xs.size()));
    }

    template <class S>
    void copy_in(Var v, const S* src) {
        auto dst = vals(v);
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(src[i]);
    }

    static T lse(const T* x, int n) {
        T m = -std::numeric_limits<T>::infinity();
        for (int i = 0; i < n; ++i) m = std::max(m, x[i]);
        if (!std::isfinite(m)) return m;
        T s = T(0);
        for (int i = 0; i < n; ++i) s += std::exp(x[i] - m);
        return m + std::log(s);
    }

    Var rowwise_softmax(Var x, bool log_form) {
        const int xr = node(x).rows, xc = node(x).cols;
        const std::size_t x_ofs = node(x).data_ofs;
        for (T v : vals(x))
            if (!std::isfinite(v)) throw NonFiniteLogits();
        Var y = push(log_form ? Op::kLogSoftmaxRows : Op::kSoftmaxRows, xr, xc,
                     node(x).needs_grad);
        link(y, x);
        const T* xv = data_.data() + x_ofs;
        auto yv = vals(y);
        for (int r = 0; r < xr; ++r) {
            const T* row = xv + static_cast<std::size_t>(r) * xc;
            T* out = yv.data() + static_cast<std::size_t>(r) * xc;
            T m = row[0];
            for (int c = 1; c < xc; ++c) m = std::max(m, row[c]);
            T s = T(0);
            for (int c = 0; c < xc; ++c) s += std::exp(row[c] - m);
            if (log_form) {
                const T ls = m + std::log(s);
                for (int c = 0; c < xc; ++c) out[c] = row[c] - ls;
            } else {
                for (int c = 0; c < xc; ++c) out[c] = std::exp(row[c] - m) / s;
            }
        }
        return y;
    }

    T* gptr(int id) { return nodes_[id].grad_ofs == npos ? nullptr : grad_.data() + nodes_[id].grad_ofs; }
    const T* dptr(int id) const { return data_.data() + nodes_[id].data_ofs; }

    void backward_node(const Node& n) {
        if (!n.needs_grad || n.op == Op::kLeaf) return;
        const T* gy = grad_.data() + n.grad_ofs;
        const T* y = data_.data() + n.data_ofs;
        const std::size_t cnt = numel(n);
        switch (n.op) {
            case Op::kLinear: {
                const Node& xn = nodes_[n.in0];
                const Node& wn = nodes_[n.in1];
                if (T* gx = gptr(n.in0))
                    kern::mm_nt(gx, gy, dptr(n.in1), n.rows, n.cols, xn.cols);
                if (T* gw = gptr(n.in1))
                    kern::mm_tn(gw, dptr(n.in0), gy, xn.rows, wn.rows, wn.cols);
                if (n.in2 >= 0) {
                    if (T* gb = gptr(n.in2)) {
                        for (int r = 0; r < n.rows; ++r)
                            for (int c = 0; c < n.cols; ++c)
                                gb[c] += gy[static_cast<std::size_t>(r) * n.cols + c];
                    }
                }
                break;
            }
            case Op::kAdd: {
                for (int k = 0; k < 2; ++k) {
                    if (T* g = gptr(k == 0 ? n.in0 : n.in1))
                        for (std::size_t i = 0; i < cnt; ++i) g[i] += gy[i];
                }
                break;
            }
            case Op::kMul: {
                const T* a = dptr(n.in0);
                const T* b = dptr(n.in1);
                if (T* ga = gptr(n.in0))
                    for (std::size_t i = 0; i < cnt; ++i) ga[i] += gy[i] * b[i];
                if (T* gb = gptr(n.in1))
                    for (std::size_t i = 0; i < cnt; ++i) gb[i] += gy[i] * a[i];
                break;
            }
            case Op::kAffine: {
                const T a = auxd_[n.auxd_ofs];
                if (T* gx = gptr(n.in0))
                    for (std::size_t i = 0; i < cnt; ++i) gx[i] += a * gy[i];
                break;
            }
            case Op::kTanh: {
                if (T* gx = gptr(n.in0))
                    for (std::size_t i = 0; i < cnt; ++i) gx[i] += gy[i] * (T(1) - y[i] * y[i]);
                break;
            }
            case Op::kSigmoid: {
                if (T* gx = gptr(n.in0))
                    for (std::size_t i = 0; i < cnt; ++i) gx[i] += gy[i] * y[i] * (T(1) - y[i]);
                break;
            }
            case Op::kSoftplus: {
                const T* x = dptr(n.in0);
                if (T* gx = gptr(n.in0))
                    for (std::size_t i = 0; i < cnt; ++i)
                        gx[i] += gy[i] / (T(1) + std::exp(-x[i]));
                break;
            }
            case Op::kConcatCols: {
                for (int row = 0; row < n.rows; ++row) {
                    const T* src = gy + static_cast<std::size_t>(row) * n.cols;
                    for (int k = 0; k < n.aux_len; ++k) {
                        const Node& pn = nodes_[aux_[n.aux_ofs + k]];
                        if (T* gp = gptr(aux_[n.aux_ofs + k])) {
                            T* dst = gp + static_cast<std::size_t>(row) * pn.cols;
                            for (int c = 0; c < pn.cols; ++c) dst[c] += src[c];
                        }
                        src += pn.cols;
                    }
                }
                break;
            }
            case Op::kBroadcastRow: {
                if (T* gx = gptr(n.in0)) {
                    for (int r = 0; r < n.rows; ++r)
                        for (int c = 0; c < n.cols; ++c)
                            gx[c] += gy[static_cast<std::size_t>(r) * n.cols + c];
                }
                break;
            }
            case Op::kGatherRows: {
                if (T* gx = gptr(n.in0)) {
                    for (int r = 0; r < n.rows; ++r) {
                        T* dst = gx + static_cast<std::size_t>(aux_[n.aux_ofs + r]) * n.cols;
                        const T* src = gy + static_cast<std::size_t>(r) * n.cols;
                        for (int c = 0; c < n.cols; ++c) dst[c] += src[c];
                    }
                }
                break;
            }
            case Op::kSelectRows: {
                T* ga = gptr(n.in0);
                T* gb = gptr(n.in1);
                for (int r = 0; r < n.rows; ++r) {
                    T* g = aux_[n.aux_ofs + r] ? ga : gb;
                    if (!g) continue;
                    const std::size_t o = static_cast<std::size_t>(r) * n.cols;
                    for (int c = 0; c < n.cols; ++c) g[o + c] += gy[o + c];
                }
                break;
            }
            case Op::kChooseAcross: {
                const int opts = aux_[n.aux_ofs];
                const int* ids = &aux_[n.aux_ofs + 1];
                const int* idx = ids + opts;
                for (int r = 0; r < n.rows; ++r) {
                    if (T* g = gptr(ids[idx[r]])) {
                        const std::size_t o = static_cast<std::size_t>(r) * n.cols;
                        for (int c = 0; c < n.cols; ++c) g[o + c] += gy[o + c];
                    }
                }
                break;
            }
            case Op::kColSlice: {
                if (T* gx = gptr(n.in0)) {
                    const int j = aux_[n.aux_ofs];
                    const int xc = nodes_[n.in0].cols;
                    for (int r = 0; r < n.rows; ++r)
                        gx[static_cast<std::size_t>(r) * xc + j] += gy[r];
                }
                break;
            }
            case Op::kSoftmaxRows: {
                if (T* gx = gptr(n.in0)) {
                    for (int r = 0; r < n.rows; ++r) {
                        const std::size_t o = static_cast<std::size_t>(r) * n.cols;
                        T dot = T(0);
                        for (int c = 0; c < n.cols; ++c) dot += gy[o + c] * y[o + c];
                        for (int c = 0; c < n.cols; ++c)
                            gx[o + c] += y[o + c] * (gy[o + c] - dot);
                    }
                }
                break;
            }
            case Op::kLogSoftmaxRows: {
                if (T* gx = gptr(n.in0)) {
                    for (int r = 0; r < n.rows; ++r) {
                        const std::size_t o = static_cast<std::size_t>(r) * n.cols;
                        T gsum = T(0);
                        for (int c = 0; c < n.cols; ++c) gsum += gy[o + c];
                        for (int c = 0; c < n.cols; ++c)
                            gx[o + c] += gy[o + c] - std::exp(y[o + c]) * gsum;
                    }
                }
                break;
            }
            case Op::kLogSumExpRows: {
                if (T* gx = gptr(n.in0)) {
                    const T* x = dptr(n.in0);
                    const int xc = nodes_[n.in0].cols;
                    for (int r = 0; r < n.rows; ++r) {
                        const std::size_t o = static_cast<std::size_t>(r) * xc;
                        for (int c = 0; c < xc; ++c)
                            gx[o + c] += gy[r] * std::exp(x[o + c] - y[r]);
                    }
                }
                break;
            }
            case Op::kLogSumExpCol: {
                if (T* gx = gptr(n.in0)) {
                    const T* x = dptr(n.in0);
                    const int xr = nodes_[n.in0].rows;
                    for (int r = 0; r < xr; ++r) gx[r] += gy[0] * std::exp(x[r] - y[0]);
                }
                break;
            }
            case Op::kMix: {
                const Node& an = nodes_[n.in0];
                const T* a = dptr(n.in0);
                T* ga = gptr(n.in0);
                scratch_.resize(static_cast<std::size_t>(n.rows));
                for (int z = 0; z < an.cols; ++z) {
                    const int sid = aux_[n.aux_ofs + z];
                    if (T* gs = gptr(sid)) {
                        for (int r = 0; r < n.rows; ++r)
                            scratch_[r] = a[static_cast<std::size_t>(r) * an.cols + z];
                        kern::rs_add(gs, gy, scratch_.data(), n.rows, n.cols);
                    }
                    if (ga) {
                        std::fill(scratch_.begin(), scratch_.end(), T(0));
                        kern::rd_add(scratch_.data(), gy, dptr(sid), n.rows, n.cols);
                        for (int r = 0; r < n.rows; ++r)
                            ga[static_cast<std::size_t>(r) * an.cols + z] += scratch_[r];
                    }
                }
                break;
            }
            case Op::kMvnRows: {
                const Node& pn = nodes_[n.in0];
                const T* pred = dptr(n.in0);
                const T* tgt = dptr(n.in1);
                const T sg = dptr(n.in2)[0];
                T* gp = gptr(n.in0);
                T* gs = gptr(n.in2);
                const T inv2 = T(1) / (sg * sg);
                for (int r = 0; r < pn.rows; ++r) {
                    const std::size_t o = static_cast<std::size_t>(r) * pn.cols;
                    T ss = T(0);
                    for (int c = 0; c < pn.cols; ++c) {
                        const T d = pred[o + c] - tgt[c];
                        ss += d * d;
                        if (gp) gp[o + c] += gy[r] * (-d * inv2);
                    }
                    if (gs) gs[0] += gy[r] * (-T(pn.cols) / sg + ss / (sg * sg * sg));
                }
                break;
            }
            case Op::kSqDiffSum: {
                const T* a = dptr(n.in0);
                const T* b = dptr(n.in1);
                const std::size_t m = numel(nodes_[n.in0]);
                T* ga = gptr(n.in0);
                T* gb = gptr(n.in1);
                for (std::size_t i = 0; i < m; ++i) {
                    const T d = T(2) * (a[i] - b[i]) * gy[0];
                    if (ga) ga[i] += d;
                    if (gb) gb[i] -= d;
                }
                break;
            }
            case Op::kLinComb: {
                for (int k = 0; k < n.aux_len; ++k) {
                    if (T* g = gptr(aux_[n.aux_ofs + k])) g[0] += auxd_[n.auxd_ofs + k] * gy[0];
                }
                break;
            }
            case Op::kLeaf:
                break;
        }
    }

    std::vector<Node> nodes_;
    std::vector<T> data_;
    std::vector<T> grad_;
    std::size_t grad_size_ = 0;
    std::vector<int> aux_;
    std::vector<T> auxd_;
    std::vector<int> param_leaves_;
    std::vector<T> scratch_;
};

}  // namespace comet
