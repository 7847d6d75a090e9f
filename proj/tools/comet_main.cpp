// Command-line front end: training, inference, evaluation, probing, figure
// regeneration, data generation, and the exactness checks.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <iostream>

#include <nlohmann/json.hpp>

#include "comet/error.hpp"
#include "comet/eval.hpp"
#include "comet/fixtures.hpp"
#include "comet/io.hpp"
#include "comet/kernels.hpp"
#include "comet/model.hpp"
#include "comet/oracle.hpp"
#include "comet/smc.hpp"
#include "comet/tasks.hpp"
#include "comet/train.hpp"

namespace {

using namespace comet;

constexpr const char* kVersion = "comet 1.0.0";

constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitDegenerate = 4;

std::string out_root() {
    const char* env = std::getenv("COMET_OUT");
    return env && *env ? env : ".";
}

std::string resolve_out(const std::string& out) {
    std::filesystem::path p(out);
    if (p.is_absolute()) return out;
    return (std::filesystem::path(out_root()) / p).string();
}

// Run manifest: config snapshot, seed, version, and a checksummed inventory
// of every file the command read or wrote.
struct ManifestScope {
    std::string dir;
    nlohmann::json j;
    std::vector<std::string> inputs;

    ManifestScope(const std::string& out_dir, const std::string& command,
                  const nlohmann::json& config, std::uint64_t seed)
        : dir(out_dir) {
        j["version"] = kVersion;
        j["command"] = command;
        j["config"] = config;
        j["seed"] = seed;
        j["kernel_isa"] = kern::isa_name(kern::active_isa());
        j["started_unix"] = std::chrono::duration_cast<std::chrono::seconds>(
                                std::chrono::system_clock::now().time_since_epoch())
                                .count();
    }

    void note_input(const std::string& path) { inputs.push_back(path); }

    void finish() {
        nlohmann::json in = nlohmann::json::array();
        for (const auto& p : inputs) {
            if (!io::file_exists(p)) continue;
            auto bytes = io::read_bytes(p);
            in.push_back({{"path", p}, {"sha256", io::sha256_hex(bytes)}});
        }
        j["inputs"] = in;
        nlohmann::json out = nlohmann::json::array();
        std::vector<std::string> files;
        for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
            if (!e.is_regular_file()) continue;
            const std::string rel = std::filesystem::relative(e.path(), dir).string();
            if (rel == "manifest.json") continue;
            files.push_back(rel);
        }
        std::sort(files.begin(), files.end());
        for (const auto& rel : files) {
            auto bytes = io::read_bytes((std::filesystem::path(dir) / rel).string());
            out.push_back({{"path", rel}, {"sha256", io::sha256_hex(bytes)}});
        }
        j["outputs"] = out;
        j["finished_unix"] = std::chrono::duration_cast<std::chrono::seconds>(
                                 std::chrono::system_clock::now().time_since_epoch())
                                 .count();
        io::write_text(dir + "/manifest.json", j.dump(2) + "\n");
    }
};

ModelConfig model_config_for(const train::TrainConfig& tc, bool uniform_gating) {
    ModelConfig mc = tc.family == TaskFamily::kRule ? ModelConfig::rule_defaults()
                                                    : ModelConfig::motor_defaults();
    mc.hidden_gating = tc.hidden;
    mc.hidden_module = tc.hidden;
    mc.temperature = tc.temperature;
    mc.uniform_gating = uniform_gating;
    return mc;
}

int cmd_train(const std::string& task, const std::string& config_path, std::uint64_t seed,
              const std::string& out, const std::string& control, const std::string& resume_path,
              int iterations_override, int threads, bool print_config) {
    train::TrainConfig tc;
    if (!resume_path.empty()) {
        tc = train::load_checkpoint(resume_path).config;
    } else if (!config_path.empty()) {
        if (!io::file_exists(config_path)) throw ConfigError("config file not found: " + config_path);
        tc = train::TrainConfig::from_json(nlohmann::json::parse(io::read_text(config_path)));
    } else {
        if (task.empty()) throw ConfigError("either --task, --config, or --resume is required");
        tc = train::TrainConfig::defaults_for(family_from(task));
    }
    if (!task.empty() && resume_path.empty()) {
        if (family_from(task) != tc.family) throw ConfigError("--task conflicts with config file");
    }
    if (seed != 0) tc.seed = seed;
    if (iterations_override > 0) tc.iterations = iterations_override;
    if (threads > 0) tc.threads = threads;
    tc.validate();

    if (print_config) {
        std::cout << tc.to_json().dump(2) << "\n";
        return 0;
    }
    if (out.empty()) throw ConfigError("--out is required");
    const std::string out_dir = resolve_out(out);
    io::ensure_dir(out_dir);

    const tasks::DatasetSplit split = tasks::make_split(tc.n_test, tc.seed);
    tasks::save_split(split, out_dir + "/split.json");
    io::write_text(out_dir + "/config.json", tc.to_json().dump(2) + "\n");

    ManifestScope manifest(out_dir, control.empty() ? "train" : "train --control " + control,
                           tc.to_json(), tc.seed);
    if (!config_path.empty()) manifest.note_input(config_path);
    if (!resume_path.empty()) manifest.note_input(resume_path);

    auto progress = [](const train::MetricsRow& r) {
        std::cout << "iter " << r.iteration << "  loss " << io::fmt(r.train_loss, 4) << "  mse "
                  << io::fmt(r.task_mse, 4) << "  module_acc " << io::fmt(r.module_acc, 3)
                  << "  gating_acc " << io::fmt(r.gating_acc, 3) << "  (" << io::fmt(r.wall_s, 1)
                  << "s)\n";
    };

    if (control.empty() || control == "uniform_gating") {
        CompositionalModel model;
        int start = 0;
        if (!resume_path.empty()) {
            train::Checkpoint ck = train::load_checkpoint(resume_path);
            model = std::move(ck.model);
            start = ck.iteration;
        } else {
            model = CompositionalModel::init(model_config_for(tc, control == "uniform_gating"),
                                             tc.w_init, tc.seed);
        }
        train::TrainResult res =
            train::train_primary(std::move(model), split, tc, out_dir, start, progress);
        eval::save_probes(res.model, out_dir);
        eval::emit_figures(out_dir);
    } else {
        ControlModel ctrl = ControlModel::init_rnn(
            control_kind_from(control), model_config_for(tc, false),
            static_cast<int>(split.train.size()), 224, tc.w_init, tc.seed);
        train::train_control(std::move(ctrl), split, tc, out_dir);
    }
    manifest.finish();
    return 0;
}

int cmd_infer(const std::string& model_path, const std::string& spec_str, double sparse,
              int particles, std::uint64_t seed, const std::string& out, int factor,
              const std::string& mode_str) {
    if (!io::file_exists(model_path)) throw ConfigError("model file not found: " + model_path);
    CompositionalModel model = load_model(model_path);
    const auto spec_ids = tasks::parse_spec(spec_str);
    tasks::TaskSpec spec{spec_ids[0], spec_ids[1], spec_ids[2]};
    const smc::FilterMode mode = smc::mode_from(mode_str);
    if (mode == smc::FilterMode::kGuided && sparse < 1.0)
        throw ConfigError("guided filtering needs feedback at every step");

    const std::string out_dir = resolve_out(out);
    io::ensure_dir(out_dir);
    RngStream root(seed);

    std::vector<int> ops(spec.begin(), spec.end());
    if (factor > 1) ops = tasks::extend_spec(spec, factor, root.derive(rng_tag::kSpecs));
    tasks::Episode ep = model.config.family == TaskFamily::kRule
                            ? tasks::gen_rule_episode(ops, root.derive(rng_tag::kEpisode))
                            : tasks::gen_motor_episode(ops);
    if (sparse < 1.0) ep.feedback = tasks::sparse_mask(ep.T, sparse, root.derive(rng_tag::kEval));

    nlohmann::json cfg{{"model", model_path},     {"spec", tasks::spec_str(ops)},
                       {"sparse", sparse},        {"particles", particles},
                       {"factor", factor},        {"mode", smc::mode_name(mode)}};
    ManifestScope manifest(out_dir, "infer", cfg, seed);
    manifest.note_input(model_path);

    smc::PosteriorTrace trace =
        smc::run_filter(model, ep, particles, mode, root.derive(rng_tag::kIteration), true);

    eval::ProbeResult probe = eval::probe_modules(model);
    const double acc = eval::map_accuracy(trace, ep.z_true, probe.permutation);
    const double raw_acc = eval::map_accuracy(trace, ep.z_true, {});

    tasks::save_episode_csv(ep, out_dir + "/episode.csv");
    smc::save_trace_csv(trace, out_dir + "/trace.csv");
    nlohmann::json summary;
    summary["log_marginal"] = trace.log_marginal;
    summary["map_accuracy"] = acc;
    summary["map_accuracy_unaligned"] = raw_acc;
    summary["module_permutation"] = probe.permutation;
    summary["T"] = ep.T;
    summary["feedback_steps"] =
        static_cast<int>(std::count(ep.feedback.begin(), ep.feedback.end(), 1));
    io::write_text(out_dir + "/summary.json", summary.dump(2) + "\n");
    if (model.config.family == TaskFamily::kMotor)
        eval::save_motor_path_csv(ep, trace, out_dir + "/path.csv");
    eval::emit_figures(out_dir);
    manifest.finish();
    std::cout << "log_marginal " << io::fmt(trace.log_marginal, 4) << "  map_accuracy "
              << io::fmt(acc, 4) << "\n";
    return 0;
}

int cmd_eval(const std::string& model_path, const std::string& split_path, const std::string& out,
             int particles, std::uint64_t seed, int episodes_per_spec) {
    if (!io::file_exists(model_path)) throw ConfigError("model file not found: " + model_path);
    if (!io::file_exists(split_path)) throw ConfigError("split file not found: " + split_path);
    CompositionalModel model = load_model(model_path);
    tasks::DatasetSplit split = tasks::load_split(split_path);
    const std::string out_dir = resolve_out(out);
    io::ensure_dir(out_dir);
    nlohmann::json cfg{{"model", model_path}, {"split", split_path}, {"particles", particles}};
    ManifestScope manifest(out_dir, "eval", cfg, seed);
    manifest.note_input(model_path);
    manifest.note_input(split_path);

    RngStream root(seed);
    auto episodes_for = [&](const std::vector<tasks::TaskSpec>& specs, std::uint64_t salt) {
        std::vector<tasks::Episode> eps;
        for (std::size_t i = 0; i < specs.size(); ++i)
            for (int r = 0; r < episodes_per_spec; ++r)
                eps.push_back(model.config.family == TaskFamily::kRule
                                  ? tasks::gen_rule_episode(
                                        specs[i],
                                        root.derive(rng_tag::kEpisode,
                                                    salt * 1000003 + i * 31 + static_cast<std::size_t>(r)))
                                  : tasks::gen_motor_episode(specs[i]));
        return eps;
    };
    auto train_eps = episodes_for(split.train, 1);
    auto test_eps = episodes_for(split.test, 2);

    eval::ProbeResult probe = eval::probe_modules(model);
    eval::TransitionProbe tp = eval::probe_transitions(model);

    double map_acc = 0;
    RngStream fstream = root.derive(rng_tag::kEval);
    for (std::size_t i = 0; i < test_eps.size(); ++i) {
        smc::PosteriorTrace tr =
            smc::run_filter(model, test_eps[i], particles, smc::FilterMode::kBootstrap,
                            fstream.derive(rng_tag::kEpisode, i), true);
        map_acc += eval::map_accuracy(tr, test_eps[i].z_true, probe.permutation);
    }
    map_acc /= static_cast<double>(test_eps.size());

    nlohmann::json report;
    report["module_accuracy"] = eval::module_accuracy(probe);
    report["gating_accuracy"] = eval::gating_accuracy(tp, probe.permutation);
    report["train_mse"] = eval::eval_mse_model(model, train_eps, particles, root.derive(101));
    report["test_mse"] = eval::eval_mse_model(model, test_eps, particles, root.derive(102));
    report["test_map_accuracy"] = map_acc;
    report["n_train_episodes"] = train_eps.size();
    report["n_test_episodes"] = test_eps.size();
    io::write_text(out_dir + "/eval.json", report.dump(2) + "\n");
    eval::save_probes(model, out_dir);
    eval::emit_figures(out_dir);
    manifest.finish();
    std::cout << report.dump(2) << "\n";
    return 0;
}

int cmd_probe(const std::string& model_path, const std::string& out) {
    if (!io::file_exists(model_path)) throw ConfigError("model file not found: " + model_path);
    CompositionalModel model = load_model(model_path);
    const std::string out_dir = resolve_out(out);
    io::ensure_dir(out_dir);
    ManifestScope manifest(out_dir, "probe", {{"model", model_path}}, 0);
    manifest.note_input(model_path);
    eval::save_probes(model, out_dir);
    eval::emit_figures(out_dir);
    manifest.finish();
    std::cout << io::read_text(out_dir + "/probe_summary.json");
    return 0;
}

int cmd_gen(const std::string& task, const std::string& out, const std::string& spec_str, int n,
            std::uint64_t seed, double sparse, int split_n_test) {
    const TaskFamily family = family_from(task);
    const std::string out_dir = resolve_out(out);
    io::ensure_dir(out_dir);
    nlohmann::json cfg{{"task", task}, {"n", n}, {"sparse", sparse}};
    ManifestScope manifest(out_dir, "gen", cfg, seed);
    RngStream root(seed);
    if (split_n_test > 0) {
        tasks::save_split(tasks::make_split(split_n_test, seed), out_dir + "/split.json");
    }
    auto all = tasks::all_specs();
    for (int i = 0; i < n; ++i) {
        tasks::TaskSpec spec;
        if (!spec_str.empty()) {
            const auto ids = tasks::parse_spec(spec_str);
            spec = {ids[0], ids[1], ids[2]};
        } else {
            spec = all[root.derive(rng_tag::kSpecs, static_cast<std::uint64_t>(i))
                           .below(static_cast<std::uint32_t>(all.size()))];
        }
        tasks::Episode ep =
            family == TaskFamily::kRule
                ? tasks::gen_rule_episode(spec,
                                          root.derive(rng_tag::kEpisode, static_cast<std::uint64_t>(i)))
                : tasks::gen_motor_episode(spec);
        if (sparse < 1.0)
            ep.feedback = tasks::sparse_mask(
                ep.T, sparse, root.derive(rng_tag::kEval, static_cast<std::uint64_t>(i)));
        tasks::save_episode_csv(ep, out_dir + "/episode_" + std::to_string(i) + ".csv");
    }
    manifest.finish();
    return 0;
}

int cmd_oracle(const std::string& check) {
    bool pass = true;
    auto show = [&](const std::string& name, const oracle::CheckReport& rep) {
        for (const auto& line : rep.lines) std::cout << "[" << name << "] " << line << "\n";
        pass = pass && rep.pass;
    };
    if (check == "resampling" || check == "all") show("resampling", oracle::check_resampling());
    if (check == "gradients" || check == "all") show("gradients", oracle::check_gradients());
    if (check == "hmm" || check == "all") show("hmm", oracle::check_hmm_marginal());
    if (check != "resampling" && check != "gradients" && check != "hmm" && check != "all")
        throw ConfigError("unknown check '" + check + "' (hmm|gradients|resampling|all)");
    std::cout << (pass ? "all checks passed\n" : "CHECKS FAILED\n");
    return pass ? 0 : 1;
}

int cmd_fixture(const std::string& kind, const std::string& out) {
    CompositionalModel model;
    if (kind == "rule") {
        model = fixtures::rule_oracle();
    } else if (kind == "motor") {
        model = fixtures::motor_oracle();
    } else if (kind == "motor-uniform") {
        model = fixtures::motor_oracle(0.05, /*uniform_gating=*/true);
    } else if (kind == "hmm") {
        model = fixtures::hmm_surrogate().model;
    } else {
        throw ConfigError("unknown fixture '" + kind + "' (rule|motor|motor-uniform|hmm)");
    }
    save_model(model, out);
    std::cout << "wrote " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"compositional sequence model: training, inference, and analysis"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    // train
    std::string tr_task, tr_config, tr_out, tr_control, tr_resume;
    std::uint64_t tr_seed = 0;
    int tr_iterations = 0, tr_threads = 0;
    bool tr_print = false;
    auto* train_cmd = app.add_subcommand("train", "train a model on a task family");
    train_cmd->add_option("--task", tr_task, "task family: rule|motor");
    train_cmd->add_option("--config", tr_config, "training config JSON");
    train_cmd->add_option("--seed", tr_seed, "training seed (overrides config)");
    train_cmd->add_option("--out", tr_out, "output run directory");
    train_cmd->add_option("--control", tr_control,
                          "train a control instead: plain_rnn|task_id_rnn|uniform_gating");
    train_cmd->add_option("--resume", tr_resume, "checkpoint file to continue from");
    train_cmd->add_option("--iterations", tr_iterations, "override iteration count");
    train_cmd->add_option("--threads", tr_threads, "worker thread cap");
    train_cmd->add_flag("--print-config", tr_print, "print the resolved config and exit");

    // infer
    std::string in_model, in_spec, in_out, in_mode = "bootstrap";
    double in_sparse = 1.0;
    int in_particles = 250, in_factor = 1;
    std::uint64_t in_seed = 1;
    auto* infer_cmd = app.add_subcommand("infer", "posterior inference on one test episode");
    infer_cmd->add_option("--model", in_model, "model file")->required();
    infer_cmd->add_option("--spec", in_spec, "comma-separated ids, e.g. 1,4,2")->required();
    infer_cmd->add_option("--sparse", in_sparse, "feedback density in (0,1]");
    infer_cmd->add_option("--particles", in_particles, "particle count");
    infer_cmd->add_option("--seed", in_seed, "episode/filter seed");
    infer_cmd->add_option("--out", in_out, "output directory")->required();
    infer_cmd->add_option("--factor", in_factor, "task length factor (>1 extends the spec)");
    infer_cmd->add_option("--mode", in_mode, "bootstrap|guided");

    // eval
    std::string ev_model, ev_split, ev_out;
    int ev_particles = 100, ev_eps = 2;
    std::uint64_t ev_seed = 1;
    auto* eval_cmd = app.add_subcommand("eval", "accuracy and MSE over a split");
    eval_cmd->add_option("--model", ev_model, "model file")->required();
    eval_cmd->add_option("--split", ev_split, "split JSON file")->required();
    eval_cmd->add_option("--out", ev_out, "output directory")->required();
    eval_cmd->add_option("--particles", ev_particles, "particle count");
    eval_cmd->add_option("--seed", ev_seed, "episode seed");
    eval_cmd->add_option("--episodes-per-spec", ev_eps, "episodes sampled per spec");

    // probe
    std::string pr_model, pr_out;
    auto* probe_cmd = app.add_subcommand("probe", "module and transition probes");
    probe_cmd->add_option("--model", pr_model, "model file")->required();
    probe_cmd->add_option("--out", pr_out, "output directory")->required();

    // plot
    std::string pl_run;
    auto* plot_cmd = app.add_subcommand("plot", "regenerate figures for a run directory");
    plot_cmd->add_option("--run", pl_run, "run directory")->required();

    // gen
    std::string gn_task, gn_out, gn_spec;
    int gn_n = 10, gn_split = 0;
    std::uint64_t gn_seed = 1;
    double gn_sparse = 1.0;
    auto* gen_cmd = app.add_subcommand("gen", "write episodes (and optionally a split) as CSV");
    gen_cmd->add_option("--task", gn_task, "task family: rule|motor")->required();
    gen_cmd->add_option("--out", gn_out, "output directory")->required();
    gen_cmd->add_option("--spec", gn_spec, "fixed spec instead of random ones");
    gen_cmd->add_option("--n", gn_n, "episode count");
    gen_cmd->add_option("--seed", gn_seed, "generator seed");
    gen_cmd->add_option("--sparse", gn_sparse, "feedback density in (0,1]");
    gen_cmd->add_option("--split", gn_split, "also write a split with this many held-out specs");

    // oracle
    std::string or_check = "all";
    auto* oracle_cmd = app.add_subcommand("oracle", "run exactness checks");
    oracle_cmd->add_option("--check", or_check, "hmm|gradients|resampling|all");

    // fixture
    std::string fx_kind, fx_out;
    auto* fixture_cmd = app.add_subcommand("fixture", "write a hand-built reference model");
    fixture_cmd->add_option("--kind", fx_kind, "rule|motor|motor-uniform|hmm")->required();
    fixture_cmd->add_option("--out", fx_out, "model file path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed())
            return cmd_train(tr_task, tr_config, tr_seed, tr_out, tr_control, tr_resume,
                             tr_iterations, tr_threads, tr_print);
        if (infer_cmd->parsed())
            return cmd_infer(in_model, in_spec, in_sparse, in_particles, in_seed, in_out, in_factor,
                             in_mode);
        if (eval_cmd->parsed())
            return cmd_eval(ev_model, ev_split, ev_out, ev_particles, ev_seed, ev_eps);
        if (probe_cmd->parsed()) return cmd_probe(pr_model, pr_out);
        if (plot_cmd->parsed()) {
            eval::emit_figures(pl_run);
            return 0;
        }
        if (gen_cmd->parsed())
            return cmd_gen(gn_task, gn_out, gn_spec, gn_n, gn_seed, gn_sparse, gn_split);
        if (oracle_cmd->parsed()) return cmd_oracle(or_check);
        if (fixture_cmd->parsed()) return cmd_fixture(fx_kind, fx_out);
    } catch (const DivergenceDetected& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const DegenerateWeights& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitDegenerate;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    return 0;
}
