#include "comet/model.hpp"

#include <cmath>

#include "comet/error.hpp"

namespace comet {

const char* family_name(TaskFamily family) {
    return family == TaskFamily::kRule ? "rule" : "motor";
}

TaskFamily family_from(const std::string& name) {
    if (name == "rule") return TaskFamily::kRule;
    if (name == "motor") return TaskFamily::kMotor;
    throw ConfigError("unknown task family '" + name + "'");
}

ModelConfig ModelConfig::rule_defaults() {
    ModelConfig cfg;
    cfg.family = TaskFamily::kRule;
    cfg.d_x = 6;
    cfg.d_y = 6;
    cfg.use_input = true;
    cfg.feed_prev_target = true;
    cfg.reset_hidden_on_switch = false;
    cfg.per_module_readout = false;
    return cfg;
}

ModelConfig ModelConfig::motor_defaults() {
    ModelConfig cfg;
    cfg.family = TaskFamily::kMotor;
    cfg.d_x = 0;
    cfg.d_y = 2;
    cfg.use_input = false;
    cfg.feed_prev_target = false;
    cfg.reset_hidden_on_switch = true;
    cfg.per_module_readout = true;
    return cfg;
}

void ModelConfig::validate() const {
    if (n_modules < 2) throw ConfigError("n_modules must be >= 2");
    if (hidden_gating < 1 || hidden_module < 1) throw ConfigError("hidden sizes must be >= 1");
    if (!(temperature > 0.0f)) throw ConfigError("temperature must be positive");
    if (use_input && d_x < 1) throw ConfigError("use_input requires d_x >= 1");
    if (d_y < 1) throw ConfigError("d_y must be >= 1");
}

nlohmann::json ModelConfig::to_json() const {
    return {{"family", family_name(family)},
            {"n_modules", n_modules},
            {"hidden_gating", hidden_gating},
            {"hidden_module", hidden_module},
            {"d_x", d_x},
            {"d_y", d_y},
            {"use_input", use_input},
            {"feed_prev_target", feed_prev_target},
            {"reset_hidden_on_switch", reset_hidden_on_switch},
            {"per_module_readout", per_module_readout},
            {"uniform_gating", uniform_gating},
            {"temperature", temperature}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.family = family_from(j.at("family").get<std::string>());
    cfg.n_modules = j.at("n_modules").get<int>();
    cfg.hidden_gating = j.at("hidden_gating").get<int>();
    cfg.hidden_module = j.at("hidden_module").get<int>();
    cfg.d_x = j.at("d_x").get<int>();
    cfg.d_y = j.at("d_y").get<int>();
    cfg.use_input = j.at("use_input").get<bool>();
    cfg.feed_prev_target = j.at("feed_prev_target").get<bool>();
    cfg.reset_hidden_on_switch = j.at("reset_hidden_on_switch").get<bool>();
    cfg.per_module_readout = j.at("per_module_readout").get<bool>();
    cfg.uniform_gating = j.value("uniform_gating", false);
    cfg.temperature = j.at("temperature").get<float>();
    cfg.validate();
    return cfg;
}

std::vector<ParamDesc> model_param_descs(const ModelConfig& cfg) {
    std::vector<ParamDesc> d;
    if (!cfg.uniform_gating) {
        d.push_back({"gating.w_ih", ParamKind::kInputWeight, cfg.gating_input(), cfg.hidden_gating});
        d.push_back({"gating.b_ih", ParamKind::kBias, 0, cfg.hidden_gating});
        d.push_back({"gating.w_hh", ParamKind::kRecurrentWeight, cfg.hidden_gating, cfg.hidden_gating});
        d.push_back({"gating.b_hh", ParamKind::kBias, 0, cfg.hidden_gating});
        d.push_back({"gating.h0", ParamKind::kInitialState, 0, cfg.hidden_gating});
        d.push_back({"gating.w_out", ParamKind::kLinearWeight, cfg.hidden_gating, cfg.n_modules});
        d.push_back({"gating.b_out", ParamKind::kBias, 0, cfg.n_modules});
    }
    for (int k = 0; k < cfg.n_modules; ++k) {
        const std::string p = "mod" + std::to_string(k) + ".";
        if (cfg.module_input() > 0) {
            d.push_back({p + "w_ih", ParamKind::kInputWeight, cfg.module_input(), cfg.hidden_module});
            d.push_back({p + "b_ih", ParamKind::kBias, 0, cfg.hidden_module});
        }
        d.push_back({p + "w_hh", ParamKind::kRecurrentWeight, cfg.hidden_module, cfg.hidden_module});
        d.push_back({p + "b_hh", ParamKind::kBias, 0, cfg.hidden_module});
        d.push_back({p + "h0", ParamKind::kInitialState, 0, cfg.hidden_module});
        if (cfg.per_module_readout) {
            d.push_back({p + "w_out", ParamKind::kLinearWeight, cfg.hidden_module, cfg.d_y});
            d.push_back({p + "b_out", ParamKind::kBias, 0, cfg.d_y});
        }
    }
    if (!cfg.per_module_readout) {
        d.push_back({"out.w", ParamKind::kLinearWeight, cfg.hidden_module, cfg.d_y});
        d.push_back({"out.b", ParamKind::kBias, 0, cfg.d_y});
    }
    d.push_back({"noise.rho", ParamKind::kBias, 0, 1});
    return d;
}

CompositionalModel CompositionalModel::init(const ModelConfig& config, float w_init,
                                            std::uint64_t seed) {
    config.validate();
    CompositionalModel model;
    model.config = config;
    const auto descs = model_param_descs(config);
    model.params = init_params(descs, w_init, RngStream(seed).derive(rng_tag::kInit));
    model.set_sigma(1.0);
    return model;
}

void save_model(const CompositionalModel& model, const std::string& path) {
    nlohmann::json extra;
    extra["kind"] = "model";
    extra["config"] = model.config.to_json();
    save_store(model.params, extra, /*include_adam=*/false, path);
}

CompositionalModel load_model(const std::string& path) {
    nlohmann::json extra;
    CompositionalModel model;
    model.params = load_store(path, &extra);
    if (extra.value("kind", "") != "model")
        throw ConfigVersionMismatch(path + " is not a model file");
    model.config = ModelConfig::from_json(extra.at("config"));
    return model;
}

GeneratedEpisode generate_episode(const CompositionalModel& model, std::span<const float> inputs,
                                  int T, RngStream rng, bool hard) {
    const ModelConfig& cfg = model.config;
    if (T < 1) throw ConfigError("T must be >= 1");
    if (cfg.use_input && static_cast<int>(inputs.size()) != T * cfg.d_x)
        throw ShapeMismatch("generate_episode: inputs must be T*d_x");

    Tape<float> tape;
    ModelVars mv = bind_model(tape, model);
    StepVars st = initial_state(tape, mv, cfg, 1);
    const double sigma = model.sigma();

    GeneratedEpisode out;
    out.y.resize(static_cast<std::size_t>(T) * cfg.d_y);
    std::vector<int> prev_choice = st.choice;
    for (int t = 0; t < T; ++t) {
        RngStream step = rng.derive(rng_tag::kStep, static_cast<std::uint64_t>(t));
        Var x_bc;
        if (cfg.use_input)
            x_bc = tape.constant(1, cfg.d_x, inputs.data() + static_cast<std::size_t>(t) * cfg.d_x);
        GatingOut gate = gating_step(tape, mv, cfg, x_bc, st.y_prev, st.act, st.g);
        RngStream gstream = step.derive(rng_tag::kGumbel);
        auto sample = nn::gumbel_softmax(tape, gate.logits, cfg.temperature, gstream, hard);
        ModuleOut mod = module_step(tape, mv, cfg, sample.activation, sample.argmax, prev_choice,
                                    x_bc, st.y_prev, st.m);
        out.z_seq.push_back(sample.argmax[0]);

        // emit y_t ~ MVN(mu, sigma I)
        RngStream estream = step.derive(rng_tag::kEmit);
        std::vector<float> mu(tape.vals(mod.mu).begin(), tape.vals(mod.mu).end());
        Var y_t = tape.constant(1, cfg.d_y);
        auto yv = tape.vals(y_t);
        for (int c = 0; c < cfg.d_y; ++c) {
            yv[static_cast<std::size_t>(c)] =
                mu[static_cast<std::size_t>(c)] + static_cast<float>(sigma * estream.normal());
            out.y[static_cast<std::size_t>(t) * cfg.d_y + c] = yv[static_cast<std::size_t>(c)];
        }

        prev_choice = sample.argmax;
        st.g = gate.g_next;
        st.m = mod.m_next;
        st.act = sample.activation;
        if (cfg.feed_prev_target) st.y_prev = y_t;
        st.choice = sample.argmax;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Controls
// ---------------------------------------------------------------------------

const char* control_kind_name(ControlKind kind) {
    switch (kind) {
        case ControlKind::kPlainRnn: return "plain_rnn";
        case ControlKind::kTaskIdRnn: return "task_id_rnn";
        case ControlKind::kUniformGating: return "uniform_gating";
    }
    return "?";
}

ControlKind control_kind_from(const std::string& name) {
    if (name == "plain_rnn") return ControlKind::kPlainRnn;
    if (name == "task_id_rnn") return ControlKind::kTaskIdRnn;
    if (name == "uniform_gating") return ControlKind::kUniformGating;
    throw ConfigError("unknown control kind '" + name + "'");
}

ControlModel ControlModel::init_rnn(ControlKind kind, const ModelConfig& base, int n_tasks,
                                    int hidden, float w_init, std::uint64_t seed) {
    if (kind == ControlKind::kUniformGating) throw ConfigError("use init_uniform");
    if (kind == ControlKind::kTaskIdRnn && n_tasks < 1)
        throw ConfigError("task-id control needs the train-task count");
    ControlModel c;
    c.kind = kind;
    c.hidden = hidden;
    c.n_tasks = kind == ControlKind::kTaskIdRnn ? n_tasks : 0;
    c.base = base;
    const int in = c.input_width();
    std::vector<ParamDesc> d;
    for (const char* g : {"r", "z", "n"}) {
        d.push_back({std::string("ctrl.w_i") + g, ParamKind::kInputWeight, in, hidden});
        d.push_back({std::string("ctrl.w_h") + g, ParamKind::kRecurrentWeight, hidden, hidden});
        d.push_back({std::string("ctrl.b_i") + g, ParamKind::kBias, 0, hidden});
        d.push_back({std::string("ctrl.b_h") + g, ParamKind::kBias, 0, hidden});
    }
    d.push_back({"ctrl.h0", ParamKind::kInitialState, 0, hidden});
    d.push_back({"ctrl.out.w", ParamKind::kLinearWeight, hidden, base.d_y});
    d.push_back({"ctrl.out.b", ParamKind::kBias, 0, base.d_y});
    c.params = init_params(d, w_init, RngStream(seed).derive(rng_tag::kInit));
    return c;
}

ControlModel ControlModel::init_uniform(const ModelConfig& base, float w_init,
                                        std::uint64_t seed) {
    ControlModel c;
    c.kind = ControlKind::kUniformGating;
    c.base = base;
    ModelConfig cfg = base;
    cfg.uniform_gating = true;
    c.inner = CompositionalModel::init(cfg, w_init, seed);
    return c;
}

void save_control(const ControlModel& control, const std::string& path) {
    if (control.kind == ControlKind::kUniformGating) {
        save_model(control.inner, path);
        return;
    }
    nlohmann::json extra;
    extra["kind"] = "control";
    extra["control_kind"] = control_kind_name(control.kind);
    extra["hidden"] = control.hidden;
    extra["n_tasks"] = control.n_tasks;
    extra["base"] = control.base.to_json();
    save_store(control.params, extra, /*include_adam=*/false, path);
}

ControlModel load_control(const std::string& path) {
    nlohmann::json extra;
    ParamStore store = load_store(path, &extra);
    const std::string kind = extra.value("kind", "");
    if (kind == "model") {
        CompositionalModel inner = load_model(path);
        if (!inner.config.uniform_gating)
            throw ConfigVersionMismatch(path + " is a full model, not a control");
        ControlModel c;
        c.kind = ControlKind::kUniformGating;
        c.base = inner.config;
        c.inner = std::move(inner);
        return c;
    }
    if (kind != "control") throw ConfigVersionMismatch(path + " is not a control file");
    ControlModel c;
    c.kind = control_kind_from(extra.at("control_kind").get<std::string>());
    c.hidden = extra.at("hidden").get<int>();
    c.n_tasks = extra.at("n_tasks").get<int>();
    c.base = ModelConfig::from_json(extra.at("base"));
    c.params = std::move(store);
    return c;
}

}  // namespace comet
