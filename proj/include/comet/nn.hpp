#pragma once

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "comet/error.hpp"
#include "comet/rng.hpp"
#include "comet/tape.hpp"

namespace comet::nn {

// Elman cell: tanh(x*W_ih + b_ih + h*W_hh + b_hh). Pass an invalid Var for x
// on input-free cells; weights are stored [in, out].
template <class T>
Var elman_step(Tape<T>& tape, Var w_ih, Var b_ih, Var w_hh, Var b_hh, Var x, Var h) {
    Var rec = tape.linear(h, w_hh, b_hh);
    if (x.valid()) {
        Var inp = tape.linear(x, w_ih, b_ih);
        rec = tape.add(inp, rec);
    }
    return tape.tanh(rec);
}

struct GruParamVars {
    Var w_ir, w_iz, w_in;  // input weights [in, H]
    Var w_hr, w_hz, w_hn;  // recurrent weights [H, H]
    Var b_ir, b_iz, b_in;
    Var b_hr, b_hz, b_hn;
};

// Standard gated recurrent unit with the reset gate applied to the recurrent
// candidate term.
template <class T>
Var gru_step(Tape<T>& tape, const GruParamVars& p, Var x, Var h) {
    Var r = tape.sigmoid(tape.add(tape.linear(x, p.w_ir, p.b_ir), tape.linear(h, p.w_hr, p.b_hr)));
    Var z = tape.sigmoid(tape.add(tape.linear(x, p.w_iz, p.b_iz), tape.linear(h, p.w_hz, p.b_hz)));
    Var n = tape.tanh(
        tape.add(tape.linear(x, p.w_in, p.b_in), tape.mul(r, tape.linear(h, p.w_hn, p.b_hn))));
    // h' = (1-z)*n + z*h
    return tape.add(tape.mul(tape.affine(z, T(-1), T(1)), n), tape.mul(z, h));
}

struct GumbelSample {
    Var activation;           // [R,N]; soft simplex rows or exact one-hot rows
    std::vector<int> argmax;  // per-row argmax of the perturbed logits
};

// Soft mode: softmax((logits + g)/temperature), differentiable w.r.t. logits.
// Hard mode: exact one-hot at the argmax of the perturbed logits (constant).
template <class T>
GumbelSample gumbel_softmax(Tape<T>& tape, Var logits, T temperature, RngStream& rng, bool hard) {
    if (!(temperature > T(0))) throw ConfigError("temperature must be positive");
    const int R = tape.rows(logits), N = tape.cols(logits);
    Var noise = tape.constant(R, N);  // allocate before taking spans
    auto nv = tape.vals(noise);
    for (auto& v : nv) v = static_cast<T>(rng.gumbel());
    auto lv = tape.vals(logits);
    for (T v : lv)
        if (!std::isfinite(v)) throw NonFiniteLogits();

    GumbelSample out;
    out.argmax.resize(static_cast<std::size_t>(R));
    for (int r = 0; r < R; ++r) {
        int best = 0;
        T bestv = lv[static_cast<std::size_t>(r) * N] + nv[static_cast<std::size_t>(r) * N];
        for (int c = 1; c < N; ++c) {
            const T v = lv[static_cast<std::size_t>(r) * N + c] + nv[static_cast<std::size_t>(r) * N + c];
            if (v > bestv) {
                bestv = v;
                best = c;
            }
        }
        out.argmax[static_cast<std::size_t>(r)] = best;
    }

    if (hard) {
        Var onehot = tape.constant(R, N);
        auto ov = tape.vals(onehot);
        for (int r = 0; r < R; ++r) ov[static_cast<std::size_t>(r) * N + out.argmax[r]] = T(1);
        out.activation = onehot;
    } else {
        out.activation =
            tape.softmax_rows(tape.affine(tape.add(logits, noise), T(1) / temperature, T(0)));
    }
    return out;
}

// Isotropic multivariate normal log-density, plain scalar form:
// -d*ln(sigma*sqrt(2pi)) - |y-mu|^2 / (2 sigma^2)
inline double mvn_logpdf(std::span<const float> y, std::span<const float> mu, double sigma) {
    if (y.size() != mu.size()) throw ShapeMismatch("mvn_logpdf: y vs mu");
    if (!(sigma > 0.0)) throw NonPositiveSigma(sigma);
    double ss = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double d = static_cast<double>(y[i]) - mu[i];
        ss += d * d;
    }
    const double d_y = static_cast<double>(y.size());
    return -d_y * std::log(sigma * std::sqrt(2.0 * 3.14159265358979323846)) -
           ss / (2.0 * sigma * sigma);
}

// sigma = floor + softplus(rho); keeps the likelihood bounded on
// deterministic targets.
inline constexpr double kSigmaFloor = 0.01;

template <class T>
Var sigma_from_rho(Tape<T>& tape, Var rho) {
    return tape.affine(tape.softplus(rho), T(1), T(kSigmaFloor));
}

inline float rho_for_sigma(double sigma) {
    return static_cast<float>(std::log(std::expm1(sigma - kSigmaFloor)));
}

inline double sigma_from_rho_value(double rho) {
    return kSigmaFloor + (rho > 20.0 ? rho : std::log1p(std::exp(rho)));
}

}  // namespace comet::nn
