#pragma once

#include <span>
#include <string>
#include <vector>

#include "comet/model.hpp"
#include "comet/smc.hpp"
#include "comet/tasks.hpp"

namespace comet::eval {

// Module recovery probe. Rule family: per-module 6x6 response matrices from
// one-hot y_prev inputs with zeroed x. Motor family: per-module 5-step
// isolated rollouts of 2D translations. The permutation maps learned module
// index -> ground-truth operation/skill id, fit exhaustively over all 720
// assignments (lexicographic tie-break).
struct ProbeResult {
    TaskFamily family = TaskFamily::kRule;
    int n_modules = 0;
    std::vector<std::vector<float>> responses;  // rule: 6x6 row-major; motor: 5x2
    std::vector<int> permutation;
    std::vector<double> scores;       // per-module Pearson correlation after alignment
    std::vector<double> step_errors;  // motor: mean per-step translation error
    double mean_score = 0;
};

ProbeResult probe_modules_rule(const CompositionalModel& model);
ProbeResult probe_modules_motor(const CompositionalModel& model);
ProbeResult probe_modules(const CompositionalModel& model);

// Gating probe: feed h repetitions of module i (one-hot z_prev, zeroed x and
// y_prev) and record softmax(W_G g) after each repetition.
struct TransitionProbe {
    int n_modules = 0;
    int max_depth = 0;
    std::vector<float> rows;  // [depth][module][n], depth 0 => one repetition

    std::span<const float> row(int depth, int module) const {
        const std::size_t o =
            (static_cast<std::size_t>(depth - 1) * n_modules + module) * static_cast<std::size_t>(n_modules);
        return {rows.data() + o, static_cast<std::size_t>(n_modules)};
    }
};

TransitionProbe probe_transitions(const CompositionalModel& model, int max_depth = 5);

// Mean per-module Pearson correlation with the aligned ground truth.
double module_accuracy(const ProbeResult& probe);

// Mean per-row Pearson correlation of learned vs generator transition rows,
// over depths up to each aligned module's duration. Zero-variance rows score 0.
double gating_accuracy(const TransitionProbe& probe, std::span<const int> permutation);

// Fraction of steps where the aligned MAP sequence matches the truth.
// An empty permutation means identity.
double map_accuracy(const smc::PosteriorTrace& trace, std::span<const int> z_true,
                    std::span<const int> permutation);

// MSE of the MAP lineage's predictions against targets over feedback steps.
double eval_mse_model(const CompositionalModel& model, std::span<const tasks::Episode> episodes,
                      int K, RngStream stream);
// Teacher-forced control predictions; task_onehots empty (plain control) or
// one row per episode (task-id control; all-zero row = unknown task).
double eval_mse_control(const ControlModel& control, std::span<const tasks::Episode> episodes,
                        std::span<const std::vector<float>> task_onehots);
double zero_predictor_mse(std::span<const tasks::Episode> episodes);

double pearson(std::span<const double> a, std::span<const double> b);

// Row i of the ground-truth response matrix for shift s is e_{(i+s) mod 6}.
std::vector<float> rule_truth_matrix(int s);

// Pairing scores for the motor assignment; rollouts shorter than the skill
// are padded with zero steps.
double motor_endpoint_distance(std::span<const float> rollout, const tasks::MotorSkill& skill);
double motor_step_error(std::span<const float> rollout, const tasks::MotorSkill& skill);

// Probe CSV artifacts consumed by the figure emitter.
void save_probes(const CompositionalModel& model, const std::string& dir);

// Per-step path segments for motor runs: the true trajectory, the MAP
// lineage, and the particles' prior rollouts over feedback gaps (the
// hypothesis branches). Consumed by the paths figure.
void save_motor_path_csv(const tasks::Episode& ep, const smc::PosteriorTrace& trace,
                         const std::string& path);

// Renders SVG figures (plus CSV data already on disk) for a run directory:
// learning curves for training runs, probe heatmaps when probe CSVs are
// present, posterior heatmap with MAP dots for inference runs, and motor
// paths with hypothesis branches.
void emit_figures(const std::string& run_dir);

}  // namespace comet::eval
