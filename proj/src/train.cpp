#include "comet/train.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "comet/error.hpp"
#include "comet/eval.hpp"
#include "comet/io.hpp"
#include "comet/threading.hpp"

namespace comet::train {

TrainConfig TrainConfig::rule_defaults() {
    TrainConfig c;
    c.family = TaskFamily::kRule;
    c.lr = 3e-4f;
    c.w_init = 0.01f;
    c.filter_mode = smc::FilterMode::kBootstrap;
    return c;
}

TrainConfig TrainConfig::motor_defaults() {
    TrainConfig c;
    c.family = TaskFamily::kMotor;
    c.lr = 1e-4f;
    c.w_init = 0.001f;
    c.filter_mode = smc::FilterMode::kGuided;
    return c;
}

TrainConfig TrainConfig::defaults_for(TaskFamily family) {
    return family == TaskFamily::kRule ? rule_defaults() : motor_defaults();
}

void TrainConfig::validate() const {
    if (iterations < 0) throw ConfigError("iterations must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (particles < 2) throw ConfigError("particles must be >= 2");
    if (!(lr > 0) || !(clip_norm > 0) || !(w_init > 0) || !(temperature > 0))
        throw ConfigError("lr, clip_norm, w_init, temperature must be positive");
    if (checkpoint_every < 1 || eval_every < 1)
        throw ConfigError("checkpoint_every and eval_every must be >= 1");
    if (n_test < 1 || n_test >= 120) throw ConfigError("n_test must be in [1,119]");
    if (hidden < 1) throw ConfigError("hidden must be >= 1");
}

nlohmann::json TrainConfig::to_json() const {
    return {{"task", family_name(family)},
            {"iterations", iterations},
            {"batch_size", batch_size},
            {"particles", particles},
            {"lr", lr},
            {"clip_norm", clip_norm},
            {"w_init", w_init},
            {"temperature", temperature},
            {"filter_mode", smc::mode_name(filter_mode)},
            {"seed", seed},
            {"checkpoint_every", checkpoint_every},
            {"eval_every", eval_every},
            {"n_test", n_test},
            {"hidden", hidden},
            {"threads", threads},
            {"eval_episodes", eval_episodes},
            {"eval_particles", eval_particles}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TaskFamily family = family_from(j.at("task").get<std::string>());
    TrainConfig c = defaults_for(family);
    if (j.contains("iterations")) c.iterations = j.at("iterations").get<int>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
    if (j.contains("particles")) c.particles = j.at("particles").get<int>();
    if (j.contains("lr")) c.lr = j.at("lr").get<float>();
    if (j.contains("clip_norm")) c.clip_norm = j.at("clip_norm").get<float>();
    if (j.contains("w_init")) c.w_init = j.at("w_init").get<float>();
    if (j.contains("temperature")) c.temperature = j.at("temperature").get<float>();
    if (j.contains("filter_mode")) c.filter_mode = smc::mode_from(j.at("filter_mode").get<std::string>());
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("checkpoint_every")) c.checkpoint_every = j.at("checkpoint_every").get<int>();
    if (j.contains("eval_every")) c.eval_every = j.at("eval_every").get<int>();
    if (j.contains("n_test")) c.n_test = j.at("n_test").get<int>();
    if (j.contains("hidden")) c.hidden = j.at("hidden").get<int>();
    if (j.contains("threads")) c.threads = j.at("threads").get<int>();
    if (j.contains("eval_episodes")) c.eval_episodes = j.at("eval_episodes").get<int>();
    if (j.contains("eval_particles")) c.eval_particles = j.at("eval_particles").get<int>();
    c.validate();
    return c;
}

void MetricsLog::save_csv(const std::string& path) const {
    std::string out = "iteration,train_loss,task_mse,module_acc,gating_acc,wall_s\n";
    for (const MetricsRow& r : rows) {
        out += std::to_string(r.iteration) + "," + io::fmt(r.train_loss) + "," +
               io::fmt(r.task_mse) + "," + io::fmt(r.module_acc) + "," + io::fmt(r.gating_acc) +
               "," + io::fmt(r.wall_s, 3) + "\n";
    }
    io::write_text(path, out);
}

MetricsLog MetricsLog::load_csv(const std::string& path) {
    MetricsLog log;
    std::stringstream ss(io::read_text(path));
    std::string line;
    std::getline(ss, line);  // header
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        std::stringstream ls(line);
        std::string tok;
        std::vector<std::string> cells;
        while (std::getline(ls, tok, ',')) cells.push_back(tok);
        if (cells.size() != 6) throw IoFailure("bad metrics row in " + path);
        MetricsRow r;
        r.iteration = std::stoi(cells[0]);
        r.train_loss = std::stod(cells[1]);
        r.task_mse = std::stod(cells[2]);
        r.module_acc = std::stod(cells[3]);
        r.gating_acc = std::stod(cells[4]);
        r.wall_s = std::stod(cells[5]);
        log.rows.push_back(r);
    }
    return log;
}

std::vector<tasks::Episode> make_batch(const tasks::DatasetSplit& split, TaskFamily family,
                                       int batch_size, RngStream stream) {
    if (split.train.empty()) throw ConfigError("empty train split");
    RngStream spec_stream = stream.derive(rng_tag::kSpecs);
    std::vector<tasks::Episode> batch;
    batch.reserve(static_cast<std::size_t>(batch_size));
    for (int e = 0; e < batch_size; ++e) {
        const tasks::TaskSpec& spec =
            split.train[spec_stream.below(static_cast<std::uint32_t>(split.train.size()))];
        if (family == TaskFamily::kRule) {
            batch.push_back(tasks::gen_rule_episode(
                spec, stream.derive(rng_tag::kEpisode, static_cast<std::uint64_t>(e))));
        } else {
            batch.push_back(tasks::gen_motor_episode(spec));
        }
    }
    return batch;
}

MetricsRow evaluate_model(const CompositionalModel& model, const tasks::DatasetSplit& split,
                          const TrainConfig& config, int iteration, double train_loss,
                          double wall_s) {
    MetricsRow row;
    row.iteration = iteration;
    row.train_loss = train_loss;
    row.wall_s = wall_s;

    eval::ProbeResult probe = eval::probe_modules(model);
    row.module_acc = eval::module_accuracy(probe);
    eval::TransitionProbe tp = eval::probe_transitions(model);
    row.gating_acc = eval::gating_accuracy(tp, probe.permutation);

    RngStream eval_stream =
        RngStream(config.seed).derive(rng_tag::kEval, static_cast<std::uint64_t>(iteration));
    std::vector<tasks::Episode> eval_eps;
    for (int e = 0; e < config.eval_episodes; ++e) {
        const tasks::TaskSpec& spec = split.test[static_cast<std::size_t>(e) % split.test.size()];
        eval_eps.push_back(model.config.family == TaskFamily::kRule
                               ? tasks::gen_rule_episode(spec, eval_stream.derive(rng_tag::kEpisode,
                                                                                  static_cast<std::uint64_t>(e)))
                               : tasks::gen_motor_episode(spec));
    }
    row.task_mse = eval::eval_mse_model(model, eval_eps, config.eval_particles,
                                        eval_stream.derive(rng_tag::kEval));
    return row;
}

namespace {

// Per-episode gradients land in their own buffers and are reduced in episode
// order, so the result does not depend on the thread count.
struct GradWorkspace {
    std::vector<Tape<float>> tapes;
    std::vector<std::vector<float>> episode_grads;
    std::vector<double> episode_loss;

    void prepare(int threads, int batch, std::size_t total) {
        tapes.resize(static_cast<std::size_t>(threads));
        episode_grads.resize(static_cast<std::size_t>(batch));
        episode_loss.assign(static_cast<std::size_t>(batch), 0.0);
        for (auto& g : episode_grads) g.assign(total, 0.0f);
    }
};

std::string checkpoint_name(const std::string& dir, int iteration) {
    return dir + "/checkpoints/ckpt_" + std::to_string(iteration) + ".json";
}

}  // namespace

void save_checkpoint(const CompositionalModel& model, const TrainConfig& config, int iteration,
                     const std::string& path) {
    nlohmann::json extra;
    extra["kind"] = "checkpoint";
    extra["config"] = model.config.to_json();
    extra["train"] = config.to_json();
    extra["iteration"] = iteration;
    save_store(model.params, extra, /*include_adam=*/true, path);
}

Checkpoint load_checkpoint(const std::string& path) {
    nlohmann::json extra;
    Checkpoint ck;
    ck.model.params = load_store(path, &extra);
    if (extra.value("kind", "") != "checkpoint")
        throw ConfigVersionMismatch(path + " is not a checkpoint");
    ck.model.config = ModelConfig::from_json(extra.at("config"));
    ck.config = TrainConfig::from_json(extra.at("train"));
    ck.iteration = extra.at("iteration").get<int>();
    return ck;
}

TrainResult train_primary(CompositionalModel model, const tasks::DatasetSplit& split,
                          const TrainConfig& config, const std::string& out_dir,
                          int start_iteration,
                          const std::function<void(const MetricsRow&)>& on_eval) {
    config.validate();
    if (model.config.family != config.family)
        throw ConfigVersionMismatch("model family does not match training config");
    const bool to_disk = !out_dir.empty();
    if (to_disk) {
        io::ensure_dir(out_dir);
        io::ensure_dir(out_dir + "/checkpoints");
    }

    TrainResult result;
    result.model = std::move(model);
    const std::size_t total = result.model.params.total();
    const int threads = config.threads > 0 ? config.threads : default_threads();
    GradWorkspace ws;
    std::vector<float> grads(total);
    RngStream root(config.seed);
    const auto t_start = std::chrono::steady_clock::now();
    auto wall = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    };

    for (int iter = start_iteration; iter < config.iterations; ++iter) {
        RngStream it_stream = root.derive(rng_tag::kIteration, static_cast<std::uint64_t>(iter));
        std::vector<tasks::Episode> batch =
            make_batch(split, config.family, config.batch_size, it_stream);

        ws.prepare(threads, config.batch_size, total);
        const CompositionalModel& m = result.model;
        parallel_for(config.batch_size, threads, [&](int worker, int e) {
            Tape<float>& tape = ws.tapes[static_cast<std::size_t>(worker)];
            tape.reset();
            smc::FilterRun<float> fr(tape, m, batch[static_cast<std::size_t>(e)], config.particles,
                                     config.filter_mode,
                                     it_stream.derive(rng_tag::kEpisode, static_cast<std::uint64_t>(e)),
                                     /*hard=*/false, /*record_mu=*/false);
            fr.run();
            Var loss = fr.loss();
            ws.episode_loss[static_cast<std::size_t>(e)] = static_cast<double>(tape.vals(loss)[0]);
            tape.backward(loss);
            tape.export_param_grads(ws.episode_grads[static_cast<std::size_t>(e)].data());
        });

        double loss = 0;
        std::fill(grads.begin(), grads.end(), 0.0f);
        const float inv_b = 1.0f / static_cast<float>(config.batch_size);
        for (int e = 0; e < config.batch_size; ++e) {
            loss += ws.episode_loss[static_cast<std::size_t>(e)];
            const auto& g = ws.episode_grads[static_cast<std::size_t>(e)];
            for (std::size_t i = 0; i < total; ++i) grads[i] += g[i] * inv_b;
        }
        loss /= config.batch_size;
        if (!std::isfinite(loss)) throw DivergenceDetected(iter);

        clip_global_norm(grads, config.clip_norm);
        adam_step(result.model.params, grads, config.lr);

        const int done = iter + 1;
        if (done % config.eval_every == 0 || done == config.iterations) {
            MetricsRow row = evaluate_model(result.model, split, config, done, loss, wall());
            result.log.rows.push_back(row);
            if (on_eval) on_eval(row);
            if (to_disk) result.log.save_csv(out_dir + "/metrics.csv");
        }
        if (to_disk && (done % config.checkpoint_every == 0 || done == config.iterations)) {
            const std::string path = checkpoint_name(out_dir, done);
            save_checkpoint(result.model, config, done, path);
            result.checkpoints.push_back(path);
        }
    }

    if (to_disk) {
        save_model(result.model, out_dir + "/model.json");
        result.log.save_csv(out_dir + "/metrics.csv");
    }
    return result;
}

TrainResult resume(const std::string& checkpoint_path, const tasks::DatasetSplit& split,
                   const std::string& out_dir) {
    Checkpoint ck = load_checkpoint(checkpoint_path);
    return train_primary(std::move(ck.model), split, ck.config, out_dir, ck.iteration);
}

ControlTrainResult train_control(ControlModel control, const tasks::DatasetSplit& split,
                                 const TrainConfig& config, const std::string& out_dir) {
    config.validate();
    if (control.kind == ControlKind::kUniformGating)
        throw ConfigError("train the uniform-gating ablation through train_primary");
    const bool to_disk = !out_dir.empty();
    if (to_disk) io::ensure_dir(out_dir);

    ControlTrainResult result;
    result.control = std::move(control);
    const std::size_t total = result.control.params.total();
    const int threads = config.threads > 0 ? config.threads : default_threads();
    const int n_tasks = result.control.n_tasks;
    GradWorkspace ws;
    std::vector<float> grads(total);
    RngStream root(config.seed);
    const auto t_start = std::chrono::steady_clock::now();

    // train-split index per batch entry for the task-id one-hot
    std::vector<std::vector<float>> onehots(static_cast<std::size_t>(config.batch_size));

    for (int iter = 0; iter < config.iterations; ++iter) {
        RngStream it_stream = root.derive(rng_tag::kIteration, static_cast<std::uint64_t>(iter));
        RngStream spec_stream = it_stream.derive(rng_tag::kSpecs);
        std::vector<tasks::Episode> batch;
        for (int e = 0; e < config.batch_size; ++e) {
            const std::uint32_t si = spec_stream.below(static_cast<std::uint32_t>(split.train.size()));
            const tasks::TaskSpec& spec = split.train[si];
            batch.push_back(config.family == TaskFamily::kRule
                                ? tasks::gen_rule_episode(spec, it_stream.derive(rng_tag::kEpisode,
                                                                                 static_cast<std::uint64_t>(e)))
                                : tasks::gen_motor_episode(spec));
            if (result.control.kind == ControlKind::kTaskIdRnn) {
                onehots[static_cast<std::size_t>(e)].assign(static_cast<std::size_t>(n_tasks), 0.0f);
                onehots[static_cast<std::size_t>(e)][si] = 1.0f;
            }
        }

        ws.prepare(threads, config.batch_size, total);
        const ControlModel& c = result.control;
        parallel_for(config.batch_size, threads, [&](int worker, int e) {
            Tape<float>& tape = ws.tapes[static_cast<std::size_t>(worker)];
            tape.reset();
            const tasks::Episode& ep = batch[static_cast<std::size_t>(e)];
            std::span<const float> oh;
            if (c.kind == ControlKind::kTaskIdRnn) oh = onehots[static_cast<std::size_t>(e)];
            auto preds = control_forward(tape, c, ep, oh);
            std::vector<Var> terms;
            for (int t = 0; t < ep.T; ++t) {
                Var target = tape.constant(1, ep.d_y, ep.y_row(t).data());
                terms.push_back(tape.sq_diff_sum(preds[static_cast<std::size_t>(t)], target));
            }
            std::vector<float> coeffs(terms.size(),
                                      1.0f / static_cast<float>(ep.T * ep.d_y));
            Var loss = tape.lin_comb(terms, coeffs, 0.0f);
            ws.episode_loss[static_cast<std::size_t>(e)] = static_cast<double>(tape.vals(loss)[0]);
            tape.backward(loss);
            tape.export_param_grads(ws.episode_grads[static_cast<std::size_t>(e)].data());
        });

        double loss = 0;
        std::fill(grads.begin(), grads.end(), 0.0f);
        const float inv_b = 1.0f / static_cast<float>(config.batch_size);
        for (int e = 0; e < config.batch_size; ++e) {
            loss += ws.episode_loss[static_cast<std::size_t>(e)];
            const auto& g = ws.episode_grads[static_cast<std::size_t>(e)];
            for (std::size_t i = 0; i < total; ++i) grads[i] += g[i] * inv_b;
        }
        loss /= config.batch_size;
        if (!std::isfinite(loss)) throw DivergenceDetected(iter);

        clip_global_norm(grads, config.clip_norm);
        adam_step(result.control.params, grads, config.lr);

        const int done = iter + 1;
        if (done % config.eval_every == 0 || done == config.iterations) {
            MetricsRow row;
            row.iteration = done;
            row.train_loss = loss;
            row.task_mse = loss;
            row.wall_s =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
            result.log.rows.push_back(row);
            if (to_disk) result.log.save_csv(out_dir + "/metrics.csv");
        }
    }

    if (to_disk) {
        save_control(result.control, out_dir + "/control.json");
        result.log.save_csv(out_dir + "/metrics.csv");
    }
    return result;
}

}  // namespace comet::train
