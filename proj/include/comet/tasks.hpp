#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "comet/rng.hpp"

namespace comet::tasks {

inline constexpr int kNumOps = 6;
// Steps each operation/skill occupies within a task, indexed by id.
inline constexpr std::array<int, kNumOps> kDurations{3, 3, 4, 4, 5, 5};

// An ordered triple of pairwise-distinct ids in {0..5}.
using TaskSpec = std::array<int, 3>;

bool spec_valid(const TaskSpec& spec);
std::string spec_str(std::span<const int> ops);
std::vector<int> parse_spec(const std::string& s);  // throws ConfigError

// Cyclic shift: out[(i+s) mod 6] = v[i].
void shift_apply(int s, std::span<const float> v, std::span<float> out);

struct MotorSkill {
    int id = 0;
    int duration = 0;
    std::vector<float> translations;  // duration x 2
};

// Constant-curvature, geometrically scaled translation sequences.
// heading starts at id*60deg, turns +-20deg per step, magnitude ratio
// 1.15 (even ids) / 0.85 (odd ids).
MotorSkill gen_motor_skill(int id);

struct Episode {
    int T = 0;
    int d_x = 0, d_y = 0;
    std::vector<float> x;            // T*d_x, empty when d_x == 0
    std::vector<float> y;            // T*d_y
    std::vector<std::uint8_t> feedback;  // per-step target visibility; last always true
    std::vector<int> z_true;         // ground-truth module per step
    std::vector<int> ops;            // the generating id sequence

    std::span<const float> x_row(int t) const { return {x.data() + static_cast<std::size_t>(t) * d_x, static_cast<std::size_t>(d_x)}; }
    std::span<const float> y_row(int t) const { return {y.data() + static_cast<std::size_t>(t) * d_y, static_cast<std::size_t>(d_y)}; }
};

// y_t = shift_{s_t}(y_{t-1}) + x_t with x_t ~ N(0, I6), y_0 = 0.
// zero_input replaces x by zeros (probe protocol).
Episode gen_rule_episode(std::span<const int> ops, RngStream rng, bool zero_input = false);
Episode gen_rule_episode(const TaskSpec& spec, RngStream rng, bool zero_input = false);

// Concatenated skill translations; no inputs, no observation noise.
Episode gen_motor_episode(std::span<const int> ops);
Episode gen_motor_episode(const TaskSpec& spec);

struct DatasetSplit {
    std::vector<TaskSpec> train;
    std::vector<TaskSpec> test;
    std::uint64_t seed = 0;
};

// All 120 ordered distinct triples, lexicographic.
std::vector<TaskSpec> all_specs();
// Uniform held-out sample of n_test triples, deterministic in seed.
DatasetSplit make_split(int n_test, std::uint64_t seed);

void save_split(const DatasetSplit& split, const std::string& path);
DatasetSplit load_split(const std::string& path);

// Independent Bernoulli(p) per step with the final step forced true.
std::vector<std::uint8_t> sparse_mask(int T, double p, RngStream rng);

// 3*factor ids; starts from the given spec, extended so that consecutive
// entries differ. factor == 1 returns the spec itself.
std::vector<int> extend_spec(const TaskSpec& spec, int factor, RngStream rng);

// Generator transition law: point mass on z until its duration is spent,
// then uniform over the other modules. run_len in [1, duration(z)].
std::vector<double> ground_truth_transitions(int z, int run_len);

void save_episode_csv(const Episode& ep, const std::string& path);
Episode load_episode_csv(const std::string& path);

}  // namespace comet::tasks
