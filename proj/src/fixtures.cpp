#include "comet/fixtures.hpp"

#include <cmath>

#include "comet/error.hpp"

namespace comet::fixtures {

namespace {

constexpr int kSlots = 5;  // counter chain length per module

int unit(int module, int k) { return module * kSlots + (k - 1); }

void zero(std::span<float> v) {
    for (auto& x : v) x = 0.0f;
}

}  // namespace

void install_duration_gating(CompositionalModel& model, double alpha, double beta) {
    const ModelConfig& cfg = model.config;
    if (cfg.uniform_gating) throw ConfigError("uniform gating has no gating cell");
    const int N = cfg.n_modules;
    if (cfg.hidden_gating != N * kSlots)
        throw ConfigError("duration gating needs hidden_gating = " + std::to_string(N * kSlots));
    ParamStore& ps = model.params;

    auto w_ih = ps.values("gating.w_ih");   // [in, H]
    auto w_hh = ps.values("gating.w_hh");   // [H, H]
    auto b_ih = ps.values("gating.b_ih");
    auto b_hh = ps.values("gating.b_hh");
    auto h0 = ps.values("gating.h0");
    auto w_out = ps.values("gating.w_out");  // [H, N]
    auto b_out = ps.values("gating.b_out");
    zero(w_ih);
    zero(w_hh);
    zero(b_ih);
    zero(b_hh);
    zero(h0);
    zero(w_out);
    zero(b_out);

    const int in = cfg.gating_input();
    const int H = cfg.hidden_gating;
    const int z_base = in - N;  // activation occupies the trailing input block
    for (int i = 0; i < N; ++i) {
        for (int k = 1; k <= kSlots; ++k) {
            const int u = unit(i, k);
            // u(i,k) = tanh(alpha*(2 z_i + 2 u(i,k-1) - (k==1 ? 1 : 3)))
            w_ih[static_cast<std::size_t>(z_base + i) * H + u] = static_cast<float>(2 * alpha);
            if (k > 1)
                w_hh[static_cast<std::size_t>(unit(i, k - 1)) * H + u] = static_cast<float>(2 * alpha);
            b_hh[static_cast<std::size_t>(u)] = static_cast<float>(k == 1 ? -alpha : -3 * alpha);
        }
        const int dur = tasks::kDurations[static_cast<std::size_t>(i)];
        // logit_i = beta/2 * u(i,1) - beta * u(i,dur)
        w_out[static_cast<std::size_t>(unit(i, 1)) * N + i] += static_cast<float>(beta / 2);
        w_out[static_cast<std::size_t>(unit(i, dur)) * N + i] += static_cast<float>(-beta);
    }
}

CompositionalModel rule_oracle(double sigma) {
    ModelConfig cfg = ModelConfig::rule_defaults();
    cfg.hidden_gating = cfg.n_modules * kSlots;
    cfg.hidden_module = 6;
    CompositionalModel model = CompositionalModel::init(cfg, 0.01f, 7);
    ParamStore& ps = model.params;

    const double eps = 0.003;  // linear-regime scale for the tanh pathway
    for (int z = 0; z < 6; ++z) {
        const std::string p = "mod" + std::to_string(z) + ".";
        auto w_ih = ps.values(p + "w_ih");  // [12, 6]: x rows then y_prev rows
        auto w_hh = ps.values(p + "w_hh");
        auto b_ih = ps.values(p + "b_ih");
        auto b_hh = ps.values(p + "b_hh");
        auto h0 = ps.values(p + "h0");
        zero(w_ih);
        zero(w_hh);
        zero(b_ih);
        zero(b_hh);
        zero(h0);
        for (int i = 0; i < 6; ++i) {
            w_ih[static_cast<std::size_t>(i) * 6 + i] = static_cast<float>(eps);            // + x_i
            w_ih[static_cast<std::size_t>(6 + i) * 6 + (i + z) % 6] = static_cast<float>(eps);  // + shift(y_prev)
        }
    }
    auto out_w = ps.values("out.w");
    auto out_b = ps.values("out.b");
    zero(out_w);
    zero(out_b);
    for (int i = 0; i < 6; ++i) out_w[static_cast<std::size_t>(i) * 6 + i] = static_cast<float>(1.0 / eps);

    install_duration_gating(model);
    model.set_sigma(sigma);
    return model;
}

CompositionalModel motor_oracle(double sigma, bool uniform_gating) {
    ModelConfig cfg = ModelConfig::motor_defaults();
    cfg.hidden_gating = uniform_gating ? 32 : cfg.n_modules * kSlots;
    cfg.hidden_module = 2;
    cfg.uniform_gating = uniform_gating;
    CompositionalModel model = CompositionalModel::init(cfg, 0.001f, 11);
    ParamStore& ps = model.params;

    const double eps = 0.01;
    const double deg = 3.14159265358979323846 / 180.0;
    for (int z = 0; z < 6; ++z) {
        const std::string p = "mod" + std::to_string(z) + ".";
        auto w_hh = ps.values(p + "w_hh");  // [2,2]
        auto b_hh = ps.values(p + "b_hh");
        auto h0 = ps.values(p + "h0");
        auto w_out = ps.values(p + "w_out");  // [2,2]
        auto b_out = ps.values(p + "b_out");
        zero(w_hh);
        zero(b_hh);
        zero(h0);
        zero(w_out);
        zero(b_out);
        const double omega = (z % 2 == 0 ? 20.0 : -20.0) * deg;
        const double gamma = z % 2 == 0 ? 1.15 : 0.85;
        // row-vector update h' = h * W: W = gamma * rotation(omega)
        w_hh[0] = static_cast<float>(gamma * std::cos(omega));
        w_hh[1] = static_cast<float>(gamma * std::sin(omega));
        w_hh[2] = static_cast<float>(-gamma * std::sin(omega));
        w_hh[3] = static_cast<float>(gamma * std::cos(omega));
        // h0 = eps * v0 * W^-1 so the first advance emits v0 exactly
        const double theta0 = z * 60.0 * deg;
        const double v0x = std::cos(theta0), v0y = std::sin(theta0);
        const double c = std::cos(-omega) / gamma, s = std::sin(-omega) / gamma;
        h0[0] = static_cast<float>(eps * (v0x * c - v0y * s));
        h0[1] = static_cast<float>(eps * (v0x * s + v0y * c));
        w_out[0] = static_cast<float>(1.0 / eps);
        w_out[3] = static_cast<float>(1.0 / eps);
    }
    if (!uniform_gating) install_duration_gating(model);
    model.set_sigma(sigma);
    return model;
}

HmmSurrogate hmm_surrogate(double sigma) {
    HmmSurrogate s;
    s.sigma = sigma;
    s.A = {{0.80, 0.15, 0.05}, {0.10, 0.70, 0.20}, {0.25, 0.25, 0.50}};
    s.means = {{1.0f, 0.0f}, {-0.5f, 0.8660254f}, {-0.5f, -0.8660254f}};

    ModelConfig cfg;
    cfg.family = TaskFamily::kMotor;  // no x, no y_prev feed
    cfg.n_modules = 3;
    cfg.hidden_gating = 3;
    cfg.hidden_module = 3;
    cfg.d_x = 0;
    cfg.d_y = 2;
    cfg.use_input = false;
    cfg.feed_prev_target = false;
    cfg.reset_hidden_on_switch = false;
    cfg.per_module_readout = false;
    s.model = CompositionalModel::init(cfg, 0.01f, 13);
    ParamStore& ps = s.model.params;

    const double c = std::atanh(0.5);
    {
        auto w_ih = ps.values("gating.w_ih");  // [3,3]
        auto w_hh = ps.values("gating.w_hh");
        auto b_ih = ps.values("gating.b_ih");
        auto b_hh = ps.values("gating.b_hh");
        auto h0 = ps.values("gating.h0");
        auto w_out = ps.values("gating.w_out");
        auto b_out = ps.values("gating.b_out");
        zero(w_hh);
        zero(b_ih);
        zero(b_hh);
        zero(h0);
        zero(b_out);
        zero(w_ih);
        for (int i = 0; i < 3; ++i) w_ih[static_cast<std::size_t>(i) * 3 + i] = static_cast<float>(c);
        // one-hot z_prev -> g = 0.5*e_i -> logits_j = log A[i][j]
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                w_out[static_cast<std::size_t>(i) * 3 + j] = static_cast<float>(2.0 * std::log(s.A[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]));
    }
    for (int z = 0; z < 3; ++z) {
        const std::string p = "mod" + std::to_string(z) + ".";
        auto w_hh = ps.values(p + "w_hh");
        auto b_hh = ps.values(p + "b_hh");
        auto h0 = ps.values(p + "h0");
        zero(w_hh);
        zero(b_hh);
        zero(h0);
        b_hh[static_cast<std::size_t>(z)] = static_cast<float>(c);  // m = 0.5*e_z, constant
    }
    {
        auto out_w = ps.values("out.w");  // [3,2]
        auto out_b = ps.values("out.b");
        zero(out_w);
        zero(out_b);
        for (int z = 0; z < 3; ++z)
            for (int d = 0; d < 2; ++d)
                out_w[static_cast<std::size_t>(z) * 2 + d] = 2.0f * s.means[static_cast<std::size_t>(z)][static_cast<std::size_t>(d)];
    }
    s.model.set_sigma(sigma);

    // First-step distribution implied by the uniform initial activation:
    // g1 = tanh(c/3) on every unit, logits_j = 2 tanh(c/3) sum_i log A[i][j].
    const double g1 = std::tanh(c / 3.0);
    std::vector<double> logits(3, 0.0);
    for (int j = 0; j < 3; ++j) {
        double acc = 0;
        for (int i = 0; i < 3; ++i) acc += 2.0 * std::log(s.A[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
        logits[static_cast<std::size_t>(j)] = g1 * acc;
    }
    const double mx = std::max({logits[0], logits[1], logits[2]});
    double zsum = 0;
    s.pi.resize(3);
    for (int j = 0; j < 3; ++j) {
        s.pi[static_cast<std::size_t>(j)] = std::exp(logits[static_cast<std::size_t>(j)] - mx);
        zsum += s.pi[static_cast<std::size_t>(j)];
    }
    for (auto& p : s.pi) p /= zsum;
    return s;
}

HmmSample sample_hmm(const HmmSurrogate& s, int T, RngStream rng) {
    HmmSample out;
    out.obs.resize(static_cast<std::size_t>(T) * s.d);
    int z = 0;
    for (int t = 0; t < T; ++t) {
        const std::vector<double>& p = t == 0 ? s.pi : s.A[static_cast<std::size_t>(z)];
        const double u = rng.uniform();
        double acc = 0;
        z = s.n_states - 1;
        for (int j = 0; j < s.n_states; ++j) {
            acc += p[static_cast<std::size_t>(j)];
            if (u < acc) {
                z = j;
                break;
            }
        }
        out.states.push_back(z);
        for (int d = 0; d < s.d; ++d)
            out.obs[static_cast<std::size_t>(t) * s.d + d] =
                s.means[static_cast<std::size_t>(z)][static_cast<std::size_t>(d)] +
                static_cast<float>(s.sigma * rng.normal());
    }
    return out;
}

tasks::Episode hmm_episode(const HmmSurrogate& s, const HmmSample& sample) {
    tasks::Episode ep;
    ep.T = static_cast<int>(sample.states.size());
    ep.d_x = 0;
    ep.d_y = s.d;
    ep.y = sample.obs;
    ep.z_true = sample.states;
    ep.feedback.assign(static_cast<std::size_t>(ep.T), 1);
    return ep;
}

}  // namespace comet::fixtures
