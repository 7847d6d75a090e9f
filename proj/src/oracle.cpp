#include "comet/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "comet/fixtures.hpp"
#include "comet/io.hpp"
#include "comet/smc.hpp"

namespace comet::oracle {

double hmm_log_marginal(std::span<const double> pi, const std::vector<std::vector<double>>& A,
                        const std::vector<std::vector<float>>& means, double sigma,
                        std::span<const float> obs, int d) {
    const int n = static_cast<int>(pi.size());
    const int T = static_cast<int>(obs.size()) / d;
    auto log_emit = [&](int t, int j) {
        double ss = 0;
        for (int c = 0; c < d; ++c) {
            const double diff = static_cast<double>(obs[static_cast<std::size_t>(t * d + c)]) -
                                static_cast<double>(means[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)]);
            ss += diff * diff;
        }
        return -d * std::log(sigma * std::sqrt(2.0 * 3.14159265358979323846)) -
               ss / (2.0 * sigma * sigma);
    };
    auto lse = [](std::span<const double> v) {
        double m = -std::numeric_limits<double>::infinity();
        for (double x : v) m = std::max(m, x);
        double s = 0;
        for (double x : v) s += std::exp(x - m);
        return m + std::log(s);
    };

    std::vector<double> alpha(static_cast<std::size_t>(n));
    std::vector<double> next(static_cast<std::size_t>(n));
    std::vector<double> tmp(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j)
        alpha[static_cast<std::size_t>(j)] = std::log(pi[static_cast<std::size_t>(j)]) + log_emit(0, j);
    double logz = 0;
    for (int t = 1; t < T; ++t) {
        for (int j = 0; j < n; ++j) {
            for (int i = 0; i < n; ++i)
                tmp[static_cast<std::size_t>(i)] =
                    alpha[static_cast<std::size_t>(i)] + std::log(A[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
            next[static_cast<std::size_t>(j)] = lse(tmp) + log_emit(t, j);
        }
        // rescale to keep the recursion stable over long horizons
        const double m = lse(next);
        for (int j = 0; j < n; ++j) alpha[static_cast<std::size_t>(j)] = next[static_cast<std::size_t>(j)] - m;
        logz += m;
    }
    return logz + lse(alpha);
}

GradCheckResult gradcheck(ParamStore store, const LossFn& loss, double step, double tol) {
    GradCheckResult res;
    res.n_params = static_cast<int>(store.total());
    std::vector<double> ad;
    loss(store, &ad);
    if (ad.size() != store.total()) throw ShapeMismatch("gradcheck: gradient size");

    for (int idx = 0; idx < res.n_params; ++idx) {
        float& slot = store.flat()[static_cast<std::size_t>(idx)];
        const float saved = slot;
        const float plus = static_cast<float>(static_cast<double>(saved) + step);
        const float minus = static_cast<float>(static_cast<double>(saved) - step);
        slot = plus;
        const double f_plus = loss(store, nullptr);
        slot = minus;
        const double f_minus = loss(store, nullptr);
        slot = saved;
        const double denom = static_cast<double>(plus) - static_cast<double>(minus);
        const double fd = (f_plus - f_minus) / denom;
        const double rel = std::abs(fd - ad[static_cast<std::size_t>(idx)]) /
                           std::max({std::abs(fd), std::abs(ad[static_cast<std::size_t>(idx)]), 1e-9});
        res.max_rel_err = std::max(res.max_rel_err, rel);
        if (rel > tol) {
            ++res.n_failed;
            if (res.failures.size() < 16) {
                std::string name = "?";
                for (int e = 0; e < store.entry_count(); ++e) {
                    const ParamEntry& pe = store.entry(e);
                    if (static_cast<std::size_t>(idx) >= pe.offset &&
                        static_cast<std::size_t>(idx) < pe.offset + pe.count) {
                        name = pe.name + "[" + std::to_string(idx - static_cast<int>(pe.offset)) + "]";
                        break;
                    }
                }
                res.failures.push_back(name + ": ad=" + std::to_string(ad[static_cast<std::size_t>(idx)]) +
                                       " fd=" + std::to_string(fd) + " rel=" + std::to_string(rel));
            }
        }
    }
    return res;
}

namespace {

// Tiny two-module episode with full feedback for the gradient toy.
tasks::Episode toy_episode(std::uint64_t seed) {
    tasks::Episode ep;
    ep.T = 3;
    ep.d_x = 3;
    ep.d_y = 3;
    RngStream rng = RngStream(seed).derive(rng_tag::kEpisode);
    ep.x.resize(9);
    ep.y.resize(9);
    for (auto& v : ep.x) v = static_cast<float>(rng.normal());
    for (auto& v : ep.y) v = static_cast<float>(rng.normal());
    ep.feedback = {1, 1, 1};
    ep.z_true = {0, 0, 1};
    return ep;
}

CompositionalModel toy_model(std::uint64_t seed, bool guided) {
    ModelConfig cfg;
    cfg.family = guided ? TaskFamily::kMotor : TaskFamily::kRule;
    cfg.n_modules = 2;
    cfg.hidden_gating = 4;
    cfg.hidden_module = 4;
    cfg.d_x = 3;
    cfg.d_y = 3;
    cfg.use_input = true;
    cfg.feed_prev_target = true;
    cfg.reset_hidden_on_switch = guided;  // exercise the reset path too
    cfg.per_module_readout = guided;
    return CompositionalModel::init(cfg, 0.3f, seed);
}

}  // namespace

GradCheckResult training_loss_gradcheck(std::uint64_t seed, bool guided, double step, double tol) {
    CompositionalModel model = toy_model(seed, guided);
    const tasks::Episode ep = toy_episode(seed);
    const int K = 8;
    const smc::FilterMode mode = guided ? smc::FilterMode::kGuided : smc::FilterMode::kBootstrap;
    const RngStream stream = RngStream(seed).derive(rng_tag::kIteration, 0);

    LossFn loss = [&](const ParamStore& ps, std::vector<double>* grad_out) {
        CompositionalModel m;
        m.config = model.config;
        m.params = ps;
        Tape<double> tape;
        std::vector<tasks::Episode> batch{ep};
        Var l = smc::training_loss(tape, m, batch, K, mode, stream, /*hard=*/false);
        const double value = tape.vals(l)[0];
        if (grad_out) {
            grad_out->assign(ps.total(), 0.0);
            tape.backward(l);
            tape.export_param_grads(grad_out->data());
        }
        return value;
    };
    return gradcheck(model.params, loss, step, tol);
}

CheckReport check_resampling() {
    CheckReport rep;
    {
        std::vector<double> w{0.25, 0.25, 0.25, 0.25};
        auto idx = smc::stratified_resample(w, 0.1);
        rep.record(idx == std::vector<int>{0, 1, 2, 3}, "equal weights, u=0.1 -> 0,1,2,3");
    }
    {
        std::vector<double> w{0.7, 0.1, 0.1, 0.1};
        auto idx = smc::stratified_resample(w, 0.2);
        rep.record(idx == std::vector<int>{0, 0, 1, 3}, "weights .7/.1/.1/.1, u=0.2 -> 0,0,1,3");
    }
    // floor/ceil copy counts over an exhaustive offset sweep, K <= 6
    bool prop = true;
    RngStream rng(20240201);
    for (int K = 2; K <= 6 && prop; ++K) {
        for (int rep_i = 0; rep_i < 20 && prop; ++rep_i) {
            std::vector<double> w(static_cast<std::size_t>(K));
            double s = 0;
            for (auto& x : w) {
                x = rng.uniform() + 1e-3;
                s += x;
            }
            for (auto& x : w) x /= s;
            const int sweeps = 400;
            for (int ui = 0; ui < sweeps && prop; ++ui) {
                const double u = (ui + 0.5) / sweeps / K;
                auto idx = smc::stratified_resample(w, u);
                std::vector<int> count(static_cast<std::size_t>(K), 0);
                for (int i : idx) ++count[static_cast<std::size_t>(i)];
                for (int k = 0; k < K; ++k) {
                    const double wk = w[static_cast<std::size_t>(k)] * K;
                    const int c = count[static_cast<std::size_t>(k)];
                    if (c != static_cast<int>(std::floor(wk)) && c != static_cast<int>(std::ceil(wk)))
                        prop = false;
                }
            }
        }
    }
    rep.record(prop, "copy counts are floor(wK) or ceil(wK) over u-sweep, K<=6");
    // equal weights: every index exactly once for any u
    bool ident = true;
    for (int K = 2; K <= 6 && ident; ++K) {
        std::vector<double> w(static_cast<std::size_t>(K), 1.0 / K);
        for (int ui = 0; ui < 50 && ident; ++ui) {
            const double u = (ui + 0.5) / 50.0 / K;
            auto idx = smc::stratified_resample(w, u);
            for (int i = 0; i < K; ++i)
                if (idx[static_cast<std::size_t>(i)] != i) ident = false;
        }
    }
    rep.record(ident, "equal weights select every particle exactly once");
    return rep;
}

CheckReport check_hmm_marginal(int K, int runs, double rel_tol) {
    CheckReport rep;
    const fixtures::HmmSurrogate s = fixtures::hmm_surrogate();
    const int T = 10;
    RngStream rng(424242);
    const fixtures::HmmSample sample = fixtures::sample_hmm(s, T, rng.derive(rng_tag::kEpisode));
    const tasks::Episode ep = fixtures::hmm_episode(s, sample);
    const double exact = hmm_log_marginal(s.pi, s.A, s.means, s.sigma, ep.y, s.d);

    double mean = 0;
    for (int r = 0; r < runs; ++r) {
        smc::PosteriorTrace tr = smc::run_filter(s.model, ep, K, smc::FilterMode::kBootstrap,
                                                 rng.derive(rng_tag::kEval, static_cast<std::uint64_t>(r)),
                                                 /*hard=*/true);
        mean += tr.log_marginal;
    }
    mean /= runs;
    const double rel = std::abs(mean - exact) / std::abs(exact);
    rep.record(rel <= rel_tol, "filter marginal " + io::fmt(mean, 4) + " vs exact " +
                                   io::fmt(exact, 4) + " (rel err " + io::fmt(rel, 4) + ")");
    return rep;
}

CheckReport check_gradients() {
    CheckReport rep;
    GradCheckResult boot = training_loss_gradcheck(3, /*guided=*/false);
    rep.record(boot.pass(), "bootstrap toy: " + std::to_string(boot.n_params - boot.n_failed) + "/" +
                                std::to_string(boot.n_params) + " within 1e-3 (max rel " +
                                io::fmt(boot.max_rel_err, 6) + ")");
    GradCheckResult guided = training_loss_gradcheck(5, /*guided=*/true);
    rep.record(guided.pass(), "guided toy: " + std::to_string(guided.n_params - guided.n_failed) +
                                  "/" + std::to_string(guided.n_params) + " within 1e-3 (max rel " +
                                  io::fmt(guided.max_rel_err, 6) + ")");
    return rep;
}

}  // namespace comet::oracle
