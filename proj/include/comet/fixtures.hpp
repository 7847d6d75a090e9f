#pragma once

#include <cstdint>
#include <vector>

#include "comet/model.hpp"
#include "comet/rng.hpp"

namespace comet::fixtures {

// Hand-built models with known-correct behavior. They serve as ground truth
// for the probe/accuracy/filter machinery without any training, and as the
// reference systems for the exact-marginal checks.

// Writes a saturating-unit automaton into the gating cell: one unit chain per
// module counts repetitions; logits keep the current module selected until
// its duration is spent, then spread uniformly over the others.
void install_duration_gating(CompositionalModel& model, double alpha = 6.0, double beta = 12.0);

// Modules implement the six cyclic shifts (y_prev + x pathway in the linear
// regime of tanh); gating is the duration automaton.
CompositionalModel rule_oracle(double sigma = 0.1);

// Modules replay the six translation sequences through 2x2 scaled-rotation
// recurrences; per-module readout; hidden reset on switch.
CompositionalModel motor_oracle(double sigma = 0.05, bool uniform_gating = false);

// A 3-state chain with fixed transition table and isotropic normal emissions,
// realized exactly by a CompositionalModel (one-hot gating inputs hit the
// tanh preimages, so transition logits are exact).
struct HmmSurrogate {
    CompositionalModel model;
    int n_states = 3;
    int d = 2;
    double sigma = 0.3;
    std::vector<double> pi;                 // model-implied first-step distribution
    std::vector<std::vector<double>> A;     // row-stochastic transitions
    std::vector<std::vector<float>> means;  // per-state emission means
};

HmmSurrogate hmm_surrogate(double sigma = 0.3);

struct HmmSample {
    std::vector<int> states;
    std::vector<float> obs;  // T*d
};

HmmSample sample_hmm(const HmmSurrogate& s, int T, RngStream rng);

// Observation episode (full feedback) shaped for the surrogate model.
tasks::Episode hmm_episode(const HmmSurrogate& s, const HmmSample& sample);

}  // namespace comet::fixtures
