#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "comet/error.hpp"
#include "comet/model.hpp"
#include "comet/tasks.hpp"

namespace comet::smc {

enum class FilterMode { kBootstrap, kGuided };

const char* mode_name(FilterMode mode);
FilterMode mode_from(const std::string& name);

// Systematic/stratified resampling: one offset u ~ U[0, 1/K), grid points
// b_i = u + i/K, particle k selected where cumulative weights satisfy
// b_{k-1} <= b < b_k.
std::vector<int> stratified_resample(std::span<const double> weights, double u);

struct StepRecord {
    std::vector<int> choice;      // pre-resampling module choice per particle
    std::vector<int> ancestor;    // resampling map (identity without feedback)
    std::vector<float> weight;    // pre-resampling normalized weights
    std::vector<float> mu;        // K*d_y particle predictions (when recorded)
    bool feedback = false;
};

struct PosteriorTrace {
    int T = 0;
    int n_modules = 0;
    int d_y = 0;
    std::vector<float> filtered;    // T*N, row t = p(z_t | y_{1:t})
    std::vector<int> map_sequence;  // highest-weight lineage via ancestor tracing
    std::vector<float> map_mu;      // T*d_y predictions along the MAP lineage
    double log_marginal = 0.0;
    std::vector<std::uint8_t> feedback;
    std::vector<int> z_true;
    std::vector<StepRecord> history;

    std::span<const float> row(int t) const {
        return {filtered.data() + static_cast<std::size_t>(t) * n_modules,
                static_cast<std::size_t>(n_modules)};
    }
};

void save_trace_csv(const PosteriorTrace& trace, const std::string& path);
PosteriorTrace load_trace_csv(const std::string& path);

// ---------------------------------------------------------------------------
// One episode's filter, built on a tape so training can backpropagate through
// it. Ancestor selection, hard argmax decisions, and the guided proposal's
// categorical draw are gradient-stopped; everything else flows.
// ---------------------------------------------------------------------------

template <class T>
class FilterRun {
public:
    FilterRun(Tape<T>& tape, const CompositionalModel& model, const tasks::Episode& ep, int K,
              FilterMode mode, RngStream stream, bool hard, bool record_mu)
        : tape_(tape), model_(model), ep_(ep), K_(K), mode_(mode), stream_(stream), hard_(hard),
          record_mu_(record_mu) {
        const ModelConfig& cfg = model.config;
        if (K < 2) throw ConfigError("particle count must be >= 2");
        if (ep.d_y != cfg.d_y) throw ShapeMismatch("episode d_y does not match model");
        if (cfg.use_input && ep.d_x != cfg.d_x) throw ShapeMismatch("episode d_x does not match model");
        if (ep.T < 1) throw ConfigError("episode is empty");
        mv_ = bind_model(tape_, model);
        st_ = initial_state(tape_, mv_, cfg, K);
    }

    void step(int t) { mode_ == FilterMode::kGuided ? guided_step(t) : bootstrap_step(t); }

    void run() {
        for (int t = 0; t < ep_.T; ++t) step(t);
    }

    // -log marginal likelihood as a scalar tape node
    Var loss() {
        std::vector<T> coeffs(loss_terms_.size(), T(-1));
        const T constant = T(n_feedback_) * std::log(T(K_));
        return tape_.lin_comb(loss_terms_, coeffs, constant);
    }

    double log_marginal() const { return log_marginal_; }
    const std::vector<StepRecord>& records() const { return records_; }

    PosteriorTrace trace() const {
        PosteriorTrace tr;
        const int N = model_.config.n_modules;
        tr.T = ep_.T;
        tr.n_modules = N;
        tr.d_y = ep_.d_y;
        tr.log_marginal = log_marginal_;
        tr.feedback = ep_.feedback;
        tr.z_true = ep_.z_true;
        tr.filtered.assign(static_cast<std::size_t>(tr.T) * N, 0.0f);
        for (int t = 0; t < tr.T; ++t) {
            const StepRecord& rec = records_[static_cast<std::size_t>(t)];
            for (int i = 0; i < K_; ++i) {
                const int z = rec.choice[static_cast<std::size_t>(rec.ancestor[static_cast<std::size_t>(i)])];
                tr.filtered[static_cast<std::size_t>(t) * N + z] += 1.0f / static_cast<float>(K_);
            }
        }
        tr.map_sequence.assign(static_cast<std::size_t>(tr.T), 0);
        if (record_mu_) tr.map_mu.assign(static_cast<std::size_t>(tr.T) * tr.d_y, 0.0f);
        const auto& wlast = records_.back().weight;
        int idx = 0;
        for (int i = 1; i < K_; ++i)
            if (wlast[static_cast<std::size_t>(i)] > wlast[static_cast<std::size_t>(idx)]) idx = i;
        for (int t = tr.T - 1; t >= 0; --t) {
            const StepRecord& rec = records_[static_cast<std::size_t>(t)];
            tr.map_sequence[static_cast<std::size_t>(t)] = rec.choice[static_cast<std::size_t>(idx)];
            if (record_mu_)
                for (int c = 0; c < tr.d_y; ++c)
                    tr.map_mu[static_cast<std::size_t>(t) * tr.d_y + c] =
                        rec.mu[static_cast<std::size_t>(idx) * tr.d_y + c];
            if (t > 0) idx = records_[static_cast<std::size_t>(t - 1)].ancestor[static_cast<std::size_t>(idx)];
        }
        tr.history = records_;
        return tr;
    }

    void bootstrap_step(int t) {
        const ModelConfig& cfg = model_.config;
        RngStream step_stream = stream_.derive(rng_tag::kStep, static_cast<std::uint64_t>(t));
        Var x_bc = input_var(t);
        GatingOut gate = gating_step(tape_, mv_, cfg, x_bc, st_.y_prev, st_.act, st_.g);
        RngStream gstream = step_stream.derive(rng_tag::kGumbel);
        auto sample = nn::gumbel_softmax(tape_, gate.logits, static_cast<T>(cfg.temperature),
                                         gstream, hard_);
        ModuleOut mod = module_step(tape_, mv_, cfg, sample.activation, sample.argmax, st_.choice,
                                    x_bc, st_.y_prev, st_.m);

        StepRecord rec;
        rec.choice = sample.argmax;
        rec.feedback = ep_.feedback[static_cast<std::size_t>(t)] != 0;
        if (record_mu_) record_mu(rec, mod.mu);

        if (rec.feedback) {
            Var y_const = tape_.constant(1, cfg.d_y, ep_.y_row(t).data());
            Var loglik = tape_.mvn_logpdf_rows(mod.mu, y_const, mv_.sigma);
            finish_feedback_step(t, rec, step_stream, loglik, gate.g_next, mod.m_next,
                                 sample.activation, sample.argmax, y_const);
        } else {
            finish_prior_step(rec, gate.g_next, mod.m_next, sample.activation, sample.argmax,
                              mod.mu);
        }
        records_.push_back(std::move(rec));
    }

    void guided_step(int t) {
        const ModelConfig& cfg = model_.config;
        if (!ep_.feedback[static_cast<std::size_t>(t)]) throw GuidedWithoutFeedback();
        RngStream step_stream = stream_.derive(rng_tag::kStep, static_cast<std::uint64_t>(t));
        Var x_bc = input_var(t);
        GatingOut gate = gating_step(tape_, mv_, cfg, x_bc, st_.y_prev, st_.act, st_.g);
        Var logcat = tape_.log_softmax_rows(gate.logits);
        Var y_const = tape_.constant(1, cfg.d_y, ep_.y_row(t).data());

        Var in;
        if (cfg.module_input() > 0) {
            std::vector<Var> parts;
            if (cfg.use_input) parts.push_back(x_bc);
            if (cfg.feed_prev_target) parts.push_back(st_.y_prev);
            in = parts.size() == 1 ? parts[0] : tape_.concat_cols(parts);
        }

        // Evaluate every candidate module; f_z = log p(z|history) + log p(y|z).
        std::vector<Var> h(static_cast<std::size_t>(cfg.n_modules));
        std::vector<Var> mu_z(static_cast<std::size_t>(cfg.n_modules));
        std::vector<Var> f(static_cast<std::size_t>(cfg.n_modules));
        for (int z = 0; z < cfg.n_modules; ++z) {
            Var m_in = st_.m;
            if (cfg.reset_hidden_on_switch) {
                std::vector<std::uint8_t> switched(static_cast<std::size_t>(K_));
                bool any = false;
                for (int r = 0; r < K_; ++r) {
                    switched[static_cast<std::size_t>(r)] = st_.choice[static_cast<std::size_t>(r)] != z ? 1 : 0;
                    any = any || switched[static_cast<std::size_t>(r)];
                }
                if (any) {
                    Var h0 = tape_.broadcast_rows(mv_.m_h0[static_cast<std::size_t>(z)], K_);
                    m_in = tape_.select_rows(switched, h0, st_.m);
                }
            }
            h[static_cast<std::size_t>(z)] =
                nn::elman_step(tape_, mv_.m_w_ih[static_cast<std::size_t>(z)], mv_.m_b_ih[static_cast<std::size_t>(z)],
                               mv_.m_w_hh[static_cast<std::size_t>(z)], mv_.m_b_hh[static_cast<std::size_t>(z)], in, m_in);
            mu_z[static_cast<std::size_t>(z)] =
                cfg.per_module_readout
                    ? tape_.linear(h[static_cast<std::size_t>(z)], mv_.m_w_out[static_cast<std::size_t>(z)], mv_.m_b_out[static_cast<std::size_t>(z)])
                    : tape_.linear(h[static_cast<std::size_t>(z)], mv_.out_w, mv_.out_b);
            Var ll = tape_.mvn_logpdf_rows(mu_z[static_cast<std::size_t>(z)], y_const, mv_.sigma);
            f[static_cast<std::size_t>(z)] = tape_.add(tape_.col_slice(logcat, z), ll);
        }
        Var F = tape_.concat_cols(f);
        Var l = tape_.logsumexp_rows(F);  // [K,1] log particle weights

        // Sample the proposal z ~ softmax(F[r,:]) (detached draw).
        std::vector<int> choice(static_cast<std::size_t>(K_));
        {
            auto fv = tape_.vals(F);
            RngStream cstream = step_stream.derive(rng_tag::kChoice);
            std::vector<double> p(static_cast<std::size_t>(cfg.n_modules));
            for (int r = 0; r < K_; ++r) {
                const T* row = fv.data() + static_cast<std::size_t>(r) * cfg.n_modules;
                double mx = -std::numeric_limits<double>::infinity();
                for (int z = 0; z < cfg.n_modules; ++z) mx = std::max(mx, static_cast<double>(row[z]));
                double s = 0;
                for (int z = 0; z < cfg.n_modules; ++z) {
                    p[static_cast<std::size_t>(z)] = std::isfinite(mx) ? std::exp(static_cast<double>(row[z]) - mx) : 0.0;
                    s += p[static_cast<std::size_t>(z)];
                }
                if (!(s > 0)) throw DegenerateWeights();
                const double draw = cstream.uniform() * s;
                double acc = 0;
                int sel = cfg.n_modules - 1;
                for (int z = 0; z < cfg.n_modules; ++z) {
                    acc += p[static_cast<std::size_t>(z)];
                    if (draw < acc) {
                        sel = z;
                        break;
                    }
                }
                choice[static_cast<std::size_t>(r)] = sel;
            }
        }
        Var m_next = tape_.choose_across(h, choice);
        Var mu_sel = tape_.choose_across(mu_z, choice);
        Var act = one_hot_const(choice, cfg.n_modules);

        StepRecord rec;
        rec.choice = choice;
        rec.feedback = true;
        if (record_mu_) record_mu(rec, mu_sel);
        finish_feedback_step(t, rec, step_stream, l, gate.g_next, m_next, act, choice, y_const);
        records_.push_back(std::move(rec));
    }

private:
    Var input_var(int t) {
        if (!model_.config.use_input) return {};
        Var x = tape_.constant(1, model_.config.d_x, ep_.x_row(t).data());
        return tape_.broadcast_rows(x, K_);
    }

    Var one_hot_const(std::span<const int> choice, int N) {
        Var v = tape_.constant(static_cast<int>(choice.size()), N);
        auto vv = tape_.vals(v);
        for (std::size_t r = 0; r < choice.size(); ++r)
            vv[r * static_cast<std::size_t>(N) + static_cast<std::size_t>(choice[r])] = T(1);
        return v;
    }

    void record_mu(StepRecord& rec, Var mu) {
        auto mv = tape_.vals(mu);
        rec.mu.resize(mv.size());
        for (std::size_t i = 0; i < mv.size(); ++i) rec.mu[i] = static_cast<float>(mv[i]);
    }

    // Weights, marginal accumulation, resampling, and state gathering for a
    // step with an observed target. loglik is the [K,1] log-weight column.
    void finish_feedback_step(int t, StepRecord& rec, RngStream& step_stream, Var loglik,
                              Var g_next, Var m_next, Var act, std::span<const int> cur_choice,
                              Var y_const) {
        const ModelConfig& cfg = model_.config;
        Var lse = tape_.logsumexp_col(loglik);
        loss_terms_.push_back(lse);
        ++n_feedback_;
        log_marginal_ += static_cast<double>(tape_.vals(lse)[0]) - std::log(static_cast<double>(K_));

        auto lv = tape_.vals(loglik);
        std::vector<double> w(static_cast<std::size_t>(K_));
        double mx = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < K_; ++i) {
            const double v = static_cast<double>(lv[static_cast<std::size_t>(i)]);
            if (std::isnan(v)) throw DegenerateWeights();
            mx = std::max(mx, v);
        }
        if (!std::isfinite(mx)) throw DegenerateWeights();
        double s = 0;
        for (int i = 0; i < K_; ++i) {
            w[static_cast<std::size_t>(i)] = std::exp(static_cast<double>(lv[static_cast<std::size_t>(i)]) - mx);
            s += w[static_cast<std::size_t>(i)];
        }
        for (auto& x : w) x /= s;

        const double u = step_stream.derive(rng_tag::kResample).uniform() / K_;
        std::vector<int> anc = stratified_resample(w, u);

        rec.weight.resize(w.size());
        for (std::size_t i = 0; i < w.size(); ++i) rec.weight[i] = static_cast<float>(w[i]);
        rec.ancestor = anc;

        st_.g = tape_.gather_rows(g_next, anc);
        st_.m = tape_.gather_rows(m_next, anc);
        st_.act = tape_.gather_rows(act, anc);
        for (int i = 0; i < K_; ++i)
            st_.choice[static_cast<std::size_t>(i)] = cur_choice[static_cast<std::size_t>(anc[static_cast<std::size_t>(i)])];
        if (cfg.feed_prev_target) st_.y_prev = tape_.broadcast_rows(y_const, K_);
        (void)t;
    }

    // A step without feedback: unit weights, no resampling, hypotheses roll
    // on through the prior; the particle's own prediction replaces the
    // unobserved target input.
    void finish_prior_step(StepRecord& rec, Var g_next, Var m_next, Var act,
                           std::span<const int> cur_choice, Var mu) {
        const ModelConfig& cfg = model_.config;
        rec.weight.assign(static_cast<std::size_t>(K_), 1.0f / static_cast<float>(K_));
        rec.ancestor.resize(static_cast<std::size_t>(K_));
        for (int i = 0; i < K_; ++i) rec.ancestor[static_cast<std::size_t>(i)] = i;
        st_.g = g_next;
        st_.m = m_next;
        st_.act = act;
        st_.choice.assign(cur_choice.begin(), cur_choice.end());
        if (cfg.feed_prev_target) st_.y_prev = mu;
    }

    Tape<T>& tape_;
    const CompositionalModel& model_;
    const tasks::Episode& ep_;
    int K_;
    FilterMode mode_;
    RngStream stream_;
    bool hard_;
    bool record_mu_;
    ModelVars mv_;
    StepVars st_;
    std::vector<Var> loss_terms_;
    int n_feedback_ = 0;
    double log_marginal_ = 0.0;
    std::vector<StepRecord> records_;
};

// Filtered posterior + MAP sequence + marginal for one episode.
// Inference default: hard activations, bootstrap proposals.
PosteriorTrace run_filter(const CompositionalModel& model, const tasks::Episode& ep, int K,
                          FilterMode mode, RngStream stream, bool hard = true);

// Mean negative log marginal over a batch, built on the caller's tape.
// Soft activations unless hard is requested (inference-style diagnostics).
template <class T>
Var training_loss(Tape<T>& tape, const CompositionalModel& model,
                  std::span<const tasks::Episode> batch, int K, FilterMode mode, RngStream stream,
                  bool hard = false) {
    if (batch.empty()) throw ConfigError("training batch is empty");
    std::vector<Var> losses;
    for (std::size_t e = 0; e < batch.size(); ++e) {
        FilterRun<T> fr(tape, model, batch[e], K, mode, stream.derive(rng_tag::kEpisode, e), hard,
                        false);
        fr.run();
        losses.push_back(fr.loss());
    }
    std::vector<T> coeffs(losses.size(), T(1) / T(losses.size()));
    return tape.lin_comb(losses, coeffs, T(0));
}

}  // namespace comet::smc
