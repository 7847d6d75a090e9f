#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "comet/nn.hpp"
#include "comet/param_store.hpp"
#include "comet/tasks.hpp"

namespace comet {

enum class TaskFamily { kRule, kMotor };

const char* family_name(TaskFamily family);
TaskFamily family_from(const std::string& name);

struct ModelConfig {
    TaskFamily family = TaskFamily::kRule;
    int n_modules = 6;
    int hidden_gating = 32;
    int hidden_module = 32;
    int d_x = 6;
    int d_y = 6;
    bool use_input = true;
    bool feed_prev_target = true;
    bool reset_hidden_on_switch = false;
    bool per_module_readout = false;
    bool uniform_gating = false;  // ablation: constant logits, module bank only
    float temperature = 1.0f;

    static ModelConfig rule_defaults();
    static ModelConfig motor_defaults();

    int gating_input() const {
        return (use_input ? d_x : 0) + (feed_prev_target ? d_y : 0) + n_modules;
    }
    int module_input() const { return (use_input ? d_x : 0) + (feed_prev_target ? d_y : 0); }

    void validate() const;
    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
    bool operator==(const ModelConfig&) const = default;
};

// Gating cell + N module cells + readout(s) + noise parameter, all living in
// one ParamStore. Parameter names follow "gating.*", "mod<k>.*", "out.*",
// "noise.rho".
struct CompositionalModel {
    ModelConfig config;
    ParamStore params;

    double sigma() const { return nn::sigma_from_rho_value(params.values("noise.rho")[0]); }
    void set_sigma(double sigma) { params.values("noise.rho")[0] = nn::rho_for_sigma(sigma); }

    static CompositionalModel init(const ModelConfig& config, float w_init, std::uint64_t seed);
};

std::vector<ParamDesc> model_param_descs(const ModelConfig& config);

void save_model(const CompositionalModel& model, const std::string& path);
CompositionalModel load_model(const std::string& path);

// ---------------------------------------------------------------------------
// Tape binding and stepping. All forward code is templated on the scalar type
// so tests can run the identical computation in double.
// ---------------------------------------------------------------------------

struct ModelVars {
    Var g_w_ih, g_b_ih, g_w_hh, g_b_hh, g_h0, g_w_out, g_b_out;
    std::vector<Var> m_w_ih, m_b_ih, m_w_hh, m_b_hh, m_h0;
    std::vector<Var> m_w_out, m_b_out;
    Var out_w, out_b;
    Var rho, sigma;
};

template <class T>
ModelVars bind_model(Tape<T>& tape, const CompositionalModel& model) {
    const ModelConfig& cfg = model.config;
    const ParamStore& ps = model.params;
    auto bind = [&](const std::string& name) -> Var {
        const ParamEntry& e = ps.entry(name);
        return tape.param(e.shape[0], e.shape.size() > 1 ? e.shape[1] : 1,
                          ps.values(name).data(), static_cast<int>(e.offset));
    };
    ModelVars mv;
    if (!cfg.uniform_gating) {
        mv.g_w_ih = bind("gating.w_ih");
        mv.g_b_ih = bind("gating.b_ih");
        mv.g_w_hh = bind("gating.w_hh");
        mv.g_b_hh = bind("gating.b_hh");
        mv.g_h0 = bind("gating.h0");
        mv.g_w_out = bind("gating.w_out");
        mv.g_b_out = bind("gating.b_out");
    }
    for (int k = 0; k < cfg.n_modules; ++k) {
        const std::string p = "mod" + std::to_string(k) + ".";
        if (cfg.module_input() > 0) {
            mv.m_w_ih.push_back(bind(p + "w_ih"));
            mv.m_b_ih.push_back(bind(p + "b_ih"));
        } else {
            mv.m_w_ih.push_back({});
            mv.m_b_ih.push_back({});
        }
        mv.m_w_hh.push_back(bind(p + "w_hh"));
        mv.m_b_hh.push_back(bind(p + "b_hh"));
        mv.m_h0.push_back(bind(p + "h0"));
        if (cfg.per_module_readout) {
            mv.m_w_out.push_back(bind(p + "w_out"));
            mv.m_b_out.push_back(bind(p + "b_out"));
        }
    }
    if (!cfg.per_module_readout) {
        mv.out_w = bind("out.w");
        mv.out_b = bind("out.b");
    }
    mv.rho = bind("noise.rho");
    mv.sigma = nn::sigma_from_rho(tape, mv.rho);
    return mv;
}

// Per-particle recurrent state carried between steps. `choice` is the hard
// argmax of the current activation, used for switch detection and posterior
// bookkeeping; -1 means "no module selected yet".
struct StepVars {
    Var g;        // [K, hidden_gating] (dummy when uniform gating)
    Var m;        // [K, hidden_module]
    Var act;      // [K, N] previous activation (soft or one-hot rows)
    Var y_prev;   // [K, d_y] previous target (observed or self-predicted)
    std::vector<int> choice;
};

template <class T>
StepVars initial_state(Tape<T>& tape, const ModelVars& mv, const ModelConfig& cfg, int K) {
    StepVars st;
    st.g = cfg.uniform_gating ? tape.constant(K, 1) : tape.broadcast_rows(mv.g_h0, K);
    Var uniform_act = tape.constant(K, cfg.n_modules);
    {
        auto v = tape.vals(uniform_act);
        const T u = T(1) / T(cfg.n_modules);
        for (auto& x : v) x = u;
    }
    st.act = uniform_act;
    std::vector<Var> h0_rows;
    for (int k = 0; k < cfg.n_modules; ++k) h0_rows.push_back(tape.broadcast_rows(mv.m_h0[static_cast<std::size_t>(k)], K));
    st.m = tape.mix(uniform_act, h0_rows);
    if (cfg.feed_prev_target) st.y_prev = tape.constant(K, cfg.d_y);  // y_0 = 0
    st.choice.assign(static_cast<std::size_t>(K), -1);
    return st;
}

struct GatingOut {
    Var g_next;
    Var logits;  // [K, N] unnormalized log-probabilities
};

// g_next = elman([x, y_prev, z_prev], g); logits = g_next * W_G + b.
// Uniform-gating ablation emits constant zero logits.
template <class T>
GatingOut gating_step(Tape<T>& tape, const ModelVars& mv, const ModelConfig& cfg, Var x_bc,
                      Var y_prev, Var z_prev, Var g) {
    if (cfg.uniform_gating) {
        const int K = tape.rows(z_prev);
        return {g, tape.constant(K, cfg.n_modules)};
    }
    std::vector<Var> parts;
    if (cfg.use_input) parts.push_back(x_bc);
    if (cfg.feed_prev_target) parts.push_back(y_prev);
    parts.push_back(z_prev);
    Var in = parts.size() == 1 ? parts[0] : tape.concat_cols(parts);
    Var g_next = nn::elman_step(tape, mv.g_w_ih, mv.g_b_ih, mv.g_w_hh, mv.g_b_hh, in, g);
    Var logits = tape.linear(g_next, mv.g_w_out, mv.g_b_out);
    return {g_next, logits};
}

struct ModuleOut {
    Var m_next;             // [K, hidden_module] activation-weighted state
    Var mu;                 // [K, d_y]
    std::vector<Var> h;     // per-module advanced states
    std::vector<Var> mu_z;  // per-module outputs (per-module readout only)
};

// Advances every module on the shared input and combines by the activation.
// When reset_hidden_on_switch is set and a particle's hard choice changed,
// its pre-step hidden state is replaced by the chosen module's initial state.
template <class T>
ModuleOut module_step(Tape<T>& tape, const ModelVars& mv, const ModelConfig& cfg, Var activation,
                      std::span<const int> cur_choice, std::span<const int> prev_choice, Var x_bc,
                      Var y_prev, Var m_prev) {
    const int K = tape.rows(activation);
    Var m_in = m_prev;
    if (cfg.reset_hidden_on_switch) {
        std::vector<std::uint8_t> switched(static_cast<std::size_t>(K));
        bool any = false;
        for (int r = 0; r < K; ++r) {
            switched[static_cast<std::size_t>(r)] = cur_choice[static_cast<std::size_t>(r)] != prev_choice[static_cast<std::size_t>(r)] ? 1 : 0;
            any = any || switched[static_cast<std::size_t>(r)];
        }
        if (any) {
            std::vector<Var> h0_rows;
            for (int k = 0; k < cfg.n_modules; ++k)
                h0_rows.push_back(tape.broadcast_rows(mv.m_h0[static_cast<std::size_t>(k)], K));
            Var reset_state = tape.choose_across(h0_rows, cur_choice);
            m_in = tape.select_rows(switched, reset_state, m_prev);
        }
    }

    Var in;
    if (cfg.module_input() > 0) {
        std::vector<Var> parts;
        if (cfg.use_input) parts.push_back(x_bc);
        if (cfg.feed_prev_target) parts.push_back(y_prev);
        in = parts.size() == 1 ? parts[0] : tape.concat_cols(parts);
    }

    ModuleOut out;
    for (int z = 0; z < cfg.n_modules; ++z) {
        out.h.push_back(nn::elman_step(tape, mv.m_w_ih[static_cast<std::size_t>(z)], mv.m_b_ih[static_cast<std::size_t>(z)],
                                       mv.m_w_hh[static_cast<std::size_t>(z)], mv.m_b_hh[static_cast<std::size_t>(z)], in, m_in));
    }
    out.m_next = tape.mix(activation, out.h);
    if (cfg.per_module_readout) {
        for (int z = 0; z < cfg.n_modules; ++z)
            out.mu_z.push_back(tape.linear(out.h[static_cast<std::size_t>(z)], mv.m_w_out[static_cast<std::size_t>(z)],
                                           mv.m_b_out[static_cast<std::size_t>(z)]));
        out.mu = tape.mix(activation, out.mu_z);
    } else {
        out.mu = tape.linear(out.m_next, mv.out_w, mv.out_b);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sampling the generative process (ancestral rollout through the model).
// ---------------------------------------------------------------------------

struct GeneratedEpisode {
    std::vector<int> z_seq;
    std::vector<float> y;  // T * d_y
};

GeneratedEpisode generate_episode(const CompositionalModel& model,
                                  std::span<const float> inputs,  // T*d_x or empty
                                  int T, RngStream rng, bool hard);

// ---------------------------------------------------------------------------
// Control models
// ---------------------------------------------------------------------------

enum class ControlKind { kPlainRnn, kTaskIdRnn, kUniformGating };

const char* control_kind_name(ControlKind kind);
ControlKind control_kind_from(const std::string& name);

// The two RNN controls share a gated cell sized to match the full model's
// total hidden units. The uniform-gating ablation reuses the compositional
// machinery with constant logits and lives in `inner`.
struct ControlModel {
    ControlKind kind = ControlKind::kPlainRnn;
    int hidden = 224;
    int n_tasks = 0;  // task-id one-hot width (train-task count)
    ModelConfig base;
    ParamStore params;          // GRU kinds
    CompositionalModel inner;   // uniform-gating kind

    static ControlModel init_rnn(ControlKind kind, const ModelConfig& base, int n_tasks,
                                 int hidden, float w_init, std::uint64_t seed);
    static ControlModel init_uniform(const ModelConfig& base, float w_init, std::uint64_t seed);

    int input_width() const {
        return (base.d_x > 0 ? base.d_x : 0) + base.d_y + (kind == ControlKind::kTaskIdRnn ? n_tasks : 0);
    }
};

void save_control(const ControlModel& control, const std::string& path);
ControlModel load_control(const std::string& path);

// Teacher-forced predictions for one episode; returns one [1,d_y] var per
// step. task_onehot must be provided exactly for the task-id kind (all-zero
// rows are how unseen tasks are encoded).
template <class T>
std::vector<Var> control_forward(Tape<T>& tape, const ControlModel& control,
                                 const tasks::Episode& ep, std::span<const float> task_onehot) {
    if (control.kind == ControlKind::kUniformGating)
        throw ConfigError("uniform-gating control runs through the filter, not control_forward");
    if (control.kind == ControlKind::kTaskIdRnn &&
        static_cast<int>(task_onehot.size()) != control.n_tasks)
        throw MissingTaskId();

    const ParamStore& ps = control.params;
    auto bind = [&](const std::string& name) -> Var {
        const ParamEntry& e = ps.entry(name);
        return tape.param(e.shape[0], e.shape.size() > 1 ? e.shape[1] : 1,
                          ps.values(name).data(), static_cast<int>(e.offset));
    };
    nn::GruParamVars gru;
    gru.w_ir = bind("ctrl.w_ir");
    gru.w_iz = bind("ctrl.w_iz");
    gru.w_in = bind("ctrl.w_in");
    gru.w_hr = bind("ctrl.w_hr");
    gru.w_hz = bind("ctrl.w_hz");
    gru.w_hn = bind("ctrl.w_hn");
    gru.b_ir = bind("ctrl.b_ir");
    gru.b_iz = bind("ctrl.b_iz");
    gru.b_in = bind("ctrl.b_in");
    gru.b_hr = bind("ctrl.b_hr");
    gru.b_hz = bind("ctrl.b_hz");
    gru.b_hn = bind("ctrl.b_hn");
    Var h = bind("ctrl.h0");
    Var w_out = bind("ctrl.out.w");
    Var b_out = bind("ctrl.out.b");

    Var task;
    if (control.kind == ControlKind::kTaskIdRnn)
        task = tape.constant(1, control.n_tasks, task_onehot.data());

    std::vector<Var> preds;
    std::vector<T> in_row(static_cast<std::size_t>(control.base.d_x + control.base.d_y), T(0));
    for (int t = 0; t < ep.T; ++t) {
        for (int c = 0; c < control.base.d_x; ++c)
            in_row[static_cast<std::size_t>(c)] = static_cast<T>(ep.x[static_cast<std::size_t>(t) * ep.d_x + c]);
        for (int c = 0; c < control.base.d_y; ++c)
            in_row[static_cast<std::size_t>(control.base.d_x + c)] =
                t == 0 ? T(0) : static_cast<T>(ep.y[static_cast<std::size_t>(t - 1) * ep.d_y + c]);
        Var xin = tape.constant(1, control.base.d_x + control.base.d_y, in_row.data());
        if (task.valid()) xin = tape.concat_cols(std::vector<Var>{xin, task});
        h = nn::gru_step(tape, gru, xin, h);
        preds.push_back(tape.linear(h, w_out, b_out));
    }
    return preds;
}

}  // namespace comet
