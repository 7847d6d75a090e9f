#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "comet/model.hpp"
#include "comet/smc.hpp"
#include "comet/tasks.hpp"

namespace comet::train {

struct TrainConfig {
    TaskFamily family = TaskFamily::kRule;
    int iterations = 20000;
    int batch_size = 512;
    int particles = 250;
    float lr = 3e-4f;
    float clip_norm = 1.0f;
    float w_init = 0.01f;
    float temperature = 1.0f;
    smc::FilterMode filter_mode = smc::FilterMode::kBootstrap;
    std::uint64_t seed = 1;
    int checkpoint_every = 5000;
    int eval_every = 250;
    int n_test = 24;        // held-out specs in the split
    int hidden = 32;        // gating and module hidden width
    int threads = 0;        // 0 = hardware concurrency
    int eval_episodes = 16;
    int eval_particles = 100;

    static TrainConfig rule_defaults();
    static TrainConfig motor_defaults();
    static TrainConfig defaults_for(TaskFamily family);

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
    bool operator==(const TrainConfig&) const = default;
};

struct MetricsRow {
    int iteration = 0;
    double train_loss = 0;
    double task_mse = 0;
    double module_acc = 0;
    double gating_acc = 0;
    double wall_s = 0;
};

struct MetricsLog {
    std::vector<MetricsRow> rows;
    void save_csv(const std::string& path) const;
    static MetricsLog load_csv(const std::string& path);
};

struct TrainResult {
    CompositionalModel model;
    MetricsLog log;
    std::vector<std::string> checkpoints;
};

// Marginal-likelihood training through the particle filter. When out_dir is
// set, writes metrics.csv, checkpoints/, and the final model there.
// start_iteration > 0 continues a resumed run; iteration indices key the rng
// streams, so a resumed run reproduces the uninterrupted one exactly.
TrainResult train_primary(CompositionalModel model, const tasks::DatasetSplit& split,
                          const TrainConfig& config, const std::string& out_dir = "",
                          int start_iteration = 0,
                          const std::function<void(const MetricsRow&)>& on_eval = {});

// Supervised mean-squared-error training for the RNN controls (the
// uniform-gating ablation trains through train_primary on its inner model).
struct ControlTrainResult {
    ControlModel control;
    MetricsLog log;
};
ControlTrainResult train_control(ControlModel control, const tasks::DatasetSplit& split,
                                 const TrainConfig& config, const std::string& out_dir = "");

// Checkpoints: parameters + ADAM moments + configs + iteration. The rng is
// counter-based and keyed by iteration, so position is implied.
void save_checkpoint(const CompositionalModel& model, const TrainConfig& config, int iteration,
                     const std::string& path);

struct Checkpoint {
    CompositionalModel model;
    TrainConfig config;
    int iteration = 0;
};
Checkpoint load_checkpoint(const std::string& path);

// Continues a checkpointed run to config.iterations.
TrainResult resume(const std::string& checkpoint_path, const tasks::DatasetSplit& split,
                   const std::string& out_dir = "");

// Fresh evaluation metrics for a model (also used by the training loop).
MetricsRow evaluate_model(const CompositionalModel& model, const tasks::DatasetSplit& split,
                          const TrainConfig& config, int iteration, double train_loss,
                          double wall_s);

std::vector<tasks::Episode> make_batch(const tasks::DatasetSplit& split, TaskFamily family,
                                       int batch_size, RngStream stream);

}  // namespace comet::train
