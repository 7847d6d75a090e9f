#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "comet/array.hpp"
#include "comet/rng.hpp"

namespace comet {

struct ParamEntry {
    std::string name;
    std::vector<int> shape;
    std::size_t offset = 0;
    std::size_t count = 0;
};

// Named float32 parameter arrays backed by one flat vector, with parallel
// ADAM moment buffers. The flat layout is what the tape, clipping, and the
// optimizer operate on; names are the external contract.
class ParamStore {
public:
    int add(const std::string& name, std::vector<int> shape);

    bool has(const std::string& name) const { return by_name_.count(name) > 0; }
    int index(const std::string& name) const;
    const ParamEntry& entry(int i) const { return entries_[static_cast<std::size_t>(i)]; }
    const ParamEntry& entry(const std::string& name) const { return entries_[check(name)]; }
    int entry_count() const { return static_cast<int>(entries_.size()); }

    std::span<float> values(const std::string& name);
    std::span<const float> values(const std::string& name) const;
    Array array(const std::string& name) const;

    std::span<float> flat() { return values_; }
    std::span<const float> flat() const { return values_; }
    std::span<float> adam_m() { return adam_m_; }
    std::span<float> adam_v() { return adam_v_; }
    std::span<const float> adam_m() const { return adam_m_; }
    std::span<const float> adam_v() const { return adam_v_; }
    std::size_t total() const { return values_.size(); }

    std::int64_t step_count = 0;
    float w_init = 0.0f;
    std::uint64_t init_seed = 0;

private:
    std::size_t check(const std::string& name) const;

    std::vector<ParamEntry> entries_;
    std::unordered_map<std::string, int> by_name_;
    std::vector<float> values_;
    std::vector<float> adam_m_;
    std::vector<float> adam_v_;
};

enum class ParamKind {
    kLinearWeight,     // Xavier uniform, gain w_init
    kInputWeight,      // Xavier uniform, gain w_init
    kRecurrentWeight,  // orthogonal scaled by w_init
    kBias,             // zero
    kInitialState,     // zero, learnable
};

struct ParamDesc {
    std::string name;
    ParamKind kind;
    int in = 0;   // fan-in (weights only)
    int out = 0;  // fan-out / vector length
};

ParamStore init_params(std::span<const ParamDesc> descs, float w_init, RngStream rng);

struct AdamSettings {
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

// Bias-corrected ADAM over the full flat gradient.
void adam_step(ParamStore& store, std::span<const float> grads, float lr,
               const AdamSettings& settings = {});
// Subset update by name; entries not present in grads are untouched.
void adam_step(ParamStore& store, const std::map<std::string, Array>& grads, float lr,
               const AdamSettings& settings = {});

// Scales grads in place so the global L2 norm is at most max_norm.
// Returns the factor applied (1.0 when already within bounds).
float clip_global_norm(std::span<float> grads, float max_norm);

// Manifest + sidecar blob persistence. `extra` is embedded verbatim in the
// manifest (model config, checkpoint metadata); the blob holds little-endian
// float32 values (and ADAM moments when include_adam) and its SHA-256 is
// recorded in the manifest.
void save_store(const ParamStore& store, const nlohmann::json& extra, bool include_adam,
                const std::string& path);
ParamStore load_store(const std::string& path, nlohmann::json* extra_out = nullptr);

}  // namespace comet
