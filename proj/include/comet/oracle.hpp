#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "comet/param_store.hpp"

namespace comet::oracle {

// Exact log marginal likelihood of a discrete-state chain with isotropic
// normal emissions: log-domain alpha recursion, double precision throughout.
// Independent of the filter implementation it is used to check.
double hmm_log_marginal(std::span<const double> pi, const std::vector<std::vector<double>>& A,
                        const std::vector<std::vector<float>>& means, double sigma,
                        std::span<const float> obs, int d);

// loss(store, grad_out): evaluates a double-precision loss for the given
// parameters; when grad_out is non-null also fills the flat reverse-mode
// gradient. The checker perturbs the float32 master values and uses the
// actually-representable step in the difference quotient.
using LossFn = std::function<double(const ParamStore&, std::vector<double>*)>;

struct GradCheckResult {
    int n_params = 0;
    int n_failed = 0;
    double max_rel_err = 0;
    std::vector<std::string> failures;  // "name[idx]: ad=.. fd=.. rel=.."
    bool pass() const { return n_failed == 0; }
};

GradCheckResult gradcheck(ParamStore store, const LossFn& loss, double step = 1e-3,
                          double tol = 1e-4);

// Fixed filter-training toy (2 modules, hidden 4, T=3, K=8, shared rng):
// full finite-difference check of the marginal-likelihood loss in double.
GradCheckResult training_loss_gradcheck(std::uint64_t seed, bool guided = false,
                                        double step = 1e-3, double tol = 1e-3);

struct CheckReport {
    bool pass = true;
    std::vector<std::string> lines;
    void record(bool ok, const std::string& what) {
        pass = pass && ok;
        lines.push_back(std::string(ok ? "ok   " : "FAIL ") + what);
    }
};

// Hand-computed stratified resampling cases plus the floor/ceil copy-count
// property over an exhaustive offset sweep for K <= 6.
CheckReport check_resampling();

// Particle-filter marginal vs the exact recursion on the 3-state surrogate.
CheckReport check_hmm_marginal(int K = 1000, int runs = 20, double rel_tol = 0.02);

// Runs the training-loss gradient check at the acceptance tolerance.
CheckReport check_gradients();

}  // namespace comet::oracle
