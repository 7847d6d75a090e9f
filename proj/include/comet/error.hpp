#pragma once

#include <stdexcept>
#include <string>

namespace comet {

struct ShapeMismatch : std::runtime_error {
    explicit ShapeMismatch(const std::string& what) : std::runtime_error("shape mismatch: " + what) {}
};

struct NonPositiveSigma : std::runtime_error {
    explicit NonPositiveSigma(double sigma)
        : std::runtime_error("sigma must be positive, got " + std::to_string(sigma)) {}
};

struct NonFiniteLogits : std::runtime_error {
    NonFiniteLogits() : std::runtime_error("logits contain non-finite values") {}
};

struct UnnormalizedWeights : std::runtime_error {
    explicit UnnormalizedWeights(double sum)
        : std::runtime_error("weights must sum to 1, got " + std::to_string(sum)) {}
};

struct UOutOfRange : std::runtime_error {
    explicit UOutOfRange(double u) : std::runtime_error("u out of [0,1/K): " + std::to_string(u)) {}
};

struct DegenerateWeights : std::runtime_error {
    DegenerateWeights() : std::runtime_error("all particle weights vanished") {}
};

struct GuidedWithoutFeedback : std::runtime_error {
    GuidedWithoutFeedback() : std::runtime_error("guided filtering requires a target at every step") {}
};

struct MissingTaskId : std::runtime_error {
    MissingTaskId() : std::runtime_error("task-id control model requires a task id") {}
};

struct IoFailure : std::runtime_error {
    explicit IoFailure(const std::string& what) : std::runtime_error("io failure: " + what) {}
};

struct ManifestChecksumMismatch : std::runtime_error {
    explicit ManifestChecksumMismatch(const std::string& path)
        : std::runtime_error("blob checksum does not match manifest: " + path) {}
};

struct ConfigVersionMismatch : std::runtime_error {
    explicit ConfigVersionMismatch(const std::string& what)
        : std::runtime_error("config mismatch: " + what) {}
};

struct RunLongerThanDuration : std::runtime_error {
    RunLongerThanDuration(int run, int duration)
        : std::runtime_error("run length " + std::to_string(run) + " exceeds duration " +
                             std::to_string(duration)) {}
};

struct LengthMismatch : std::runtime_error {
    LengthMismatch(std::size_t a, std::size_t b)
        : std::runtime_error("length mismatch: " + std::to_string(a) + " vs " + std::to_string(b)) {}
};

struct DivergenceDetected : std::runtime_error {
    explicit DivergenceDetected(int iteration)
        : std::runtime_error("non-finite loss at iteration " + std::to_string(iteration)) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error("config error: " + what) {}
};

}  // namespace comet
