#include "comet/param_store.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>

#include "comet/error.hpp"
#include "comet/io.hpp"

static_assert(std::endian::native == std::endian::little,
              "blob format is little-endian float32");

namespace comet {

int ParamStore::add(const std::string& name, std::vector<int> shape) {
    if (has(name)) throw ShapeMismatch("duplicate parameter " + name);
    ParamEntry e;
    e.name = name;
    e.shape = std::move(shape);
    e.count = Array::count(e.shape);
    e.offset = values_.size();
    values_.resize(values_.size() + e.count, 0.0f);
    adam_m_.resize(values_.size(), 0.0f);
    adam_v_.resize(values_.size(), 0.0f);
    entries_.push_back(std::move(e));
    by_name_[entries_.back().name] = static_cast<int>(entries_.size()) - 1;
    return static_cast<int>(entries_.size()) - 1;
}

int ParamStore::index(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? -1 : it->second;
}

std::size_t ParamStore::check(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw ShapeMismatch("unknown parameter " + name);
    return static_cast<std::size_t>(it->second);
}

std::span<float> ParamStore::values(const std::string& name) {
    const ParamEntry& e = entries_[check(name)];
    return {values_.data() + e.offset, e.count};
}

std::span<const float> ParamStore::values(const std::string& name) const {
    const ParamEntry& e = entries_[check(name)];
    return {values_.data() + e.offset, e.count};
}

Array ParamStore::array(const std::string& name) const {
    const ParamEntry& e = entries_[check(name)];
    Array a(e.shape);
    std::memcpy(a.v.data(), values_.data() + e.offset, e.count * sizeof(float));
    return a;
}

namespace {

// Orthonormalize the rows of a [n,n] double matrix with two passes of
// modified Gram-Schmidt.
void orthogonalize(std::vector<double>& a, int n) {
    for (int pass = 0; pass < 2; ++pass) {
        for (int i = 0; i < n; ++i) {
            double* ri = a.data() + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < i; ++j) {
                const double* rj = a.data() + static_cast<std::size_t>(j) * n;
                double dot = 0;
                for (int c = 0; c < n; ++c) dot += ri[c] * rj[c];
                for (int c = 0; c < n; ++c) ri[c] -= dot * rj[c];
            }
            double norm = 0;
            for (int c = 0; c < n; ++c) norm += ri[c] * ri[c];
            norm = std::sqrt(norm);
            for (int c = 0; c < n; ++c) ri[c] /= norm;
        }
    }
}

}  // namespace

ParamStore init_params(std::span<const ParamDesc> descs, float w_init, RngStream rng) {
    if (!(w_init > 0.0f)) throw ConfigError("w_init must be positive");
    ParamStore store;
    store.w_init = w_init;
    store.init_seed = rng.key();
    for (const ParamDesc& d : descs) {
        switch (d.kind) {
            case ParamKind::kLinearWeight:
            case ParamKind::kInputWeight: {
                store.add(d.name, {d.in, d.out});
                auto v = store.values(d.name);
                const double bound =
                    static_cast<double>(w_init) * std::sqrt(6.0 / (d.in + d.out));
                for (auto& x : v) x = static_cast<float>((rng.uniform() * 2.0 - 1.0) * bound);
                break;
            }
            case ParamKind::kRecurrentWeight: {
                if (d.in != d.out) throw ShapeMismatch("recurrent weight must be square: " + d.name);
                store.add(d.name, {d.in, d.out});
                const int n = d.in;
                std::vector<double> q(static_cast<std::size_t>(n) * n);
                for (auto& x : q) x = rng.normal();
                orthogonalize(q, n);
                auto v = store.values(d.name);
                for (std::size_t i = 0; i < v.size(); ++i)
                    v[i] = static_cast<float>(q[i] * w_init);
                break;
            }
            case ParamKind::kBias:
            case ParamKind::kInitialState: {
                store.add(d.name, {1, d.out});
                break;  // zeros
            }
        }
    }
    return store;
}

namespace {

void adam_slice(std::span<float> v, std::span<float> m, std::span<float> vv,
                std::span<const float> g, float lr, const AdamSettings& s, double bc1, double bc2) {
    for (std::size_t i = 0; i < v.size(); ++i) {
        m[i] = s.beta1 * m[i] + (1.0f - s.beta1) * g[i];
        vv[i] = s.beta2 * vv[i] + (1.0f - s.beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = vv[i] / bc2;
        v[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + s.eps));
    }
}

}  // namespace

void adam_step(ParamStore& store, std::span<const float> grads, float lr,
               const AdamSettings& settings) {
    if (grads.size() != store.total()) throw ShapeMismatch("gradient size != parameter count");
    store.step_count += 1;
    const double bc1 = 1.0 - std::pow(static_cast<double>(settings.beta1), store.step_count);
    const double bc2 = 1.0 - std::pow(static_cast<double>(settings.beta2), store.step_count);
    adam_slice(store.flat(), store.adam_m(), store.adam_v(), grads, lr, settings, bc1, bc2);
}

void adam_step(ParamStore& store, const std::map<std::string, Array>& grads, float lr,
               const AdamSettings& settings) {
    store.step_count += 1;
    const double bc1 = 1.0 - std::pow(static_cast<double>(settings.beta1), store.step_count);
    const double bc2 = 1.0 - std::pow(static_cast<double>(settings.beta2), store.step_count);
    for (const auto& [name, g] : grads) {
        const ParamEntry& e = store.entry(name);
        if (g.size() != e.count) throw ShapeMismatch("gradient shape for " + name);
        adam_slice(store.flat().subspan(e.offset, e.count),
                   store.adam_m().subspan(e.offset, e.count),
                   store.adam_v().subspan(e.offset, e.count),
                   std::span<const float>(g.v.data(), g.v.size()), lr, settings, bc1, bc2);
    }
}

float clip_global_norm(std::span<float> grads, float max_norm) {
    double ss = 0;
    for (float g : grads) ss += static_cast<double>(g) * g;
    const double norm = std::sqrt(ss);
    if (norm <= max_norm || norm == 0.0) return 1.0f;
    const float scale = static_cast<float>(max_norm / norm);
    for (auto& g : grads) g *= scale;
    return scale;
}

void save_store(const ParamStore& store, const nlohmann::json& extra, bool include_adam,
                const std::string& path) {
    std::vector<std::uint8_t> blob;
    const std::size_t n = store.total() * sizeof(float);
    blob.resize(include_adam ? 3 * n : n);
    std::memcpy(blob.data(), store.flat().data(), n);
    if (include_adam) {
        std::memcpy(blob.data() + n, store.adam_m().data(), n);
        std::memcpy(blob.data() + 2 * n, store.adam_v().data(), n);
    }
    const std::string blob_path = io::sidecar_path(path);

    nlohmann::json manifest;
    manifest["format"] = "comet-params-v1";
    manifest["blob"] = std::filesystem::path(blob_path).filename().string();
    manifest["sha256"] = io::sha256_hex(blob);
    manifest["include_adam"] = include_adam;
    manifest["step_count"] = store.step_count;
    manifest["w_init"] = store.w_init;
    manifest["seed"] = store.init_seed;
    nlohmann::json entries = nlohmann::json::array();
    for (int i = 0; i < store.entry_count(); ++i) {
        const ParamEntry& e = store.entry(i);
        entries.push_back({{"name", e.name},
                           {"shape", e.shape},
                           {"offset", e.offset},
                           {"count", e.count}});
    }
    manifest["entries"] = entries;
    if (!extra.is_null()) manifest["extra"] = extra;

    io::write_bytes(blob_path, blob);
    io::write_text(path, manifest.dump(2) + "\n");
}

ParamStore load_store(const std::string& path, nlohmann::json* extra_out) {
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(io::read_text(path));
    } catch (const nlohmann::json::exception& e) {
        throw IoFailure("bad manifest " + path + ": " + e.what());
    }
    if (manifest.value("format", "") != "comet-params-v1")
        throw ConfigVersionMismatch("unsupported manifest format in " + path);

    const std::string blob_path =
        (std::filesystem::path(path).parent_path() / manifest.at("blob").get<std::string>())
            .string();
    auto blob = io::read_bytes(blob_path);
    if (io::sha256_hex(blob) != manifest.at("sha256").get<std::string>())
        throw ManifestChecksumMismatch(blob_path);

    ParamStore store;
    store.step_count = manifest.value("step_count", std::int64_t(0));
    store.w_init = manifest.value("w_init", 0.0f);
    store.init_seed = manifest.value("seed", std::uint64_t(0));
    for (const auto& e : manifest.at("entries")) {
        store.add(e.at("name").get<std::string>(), e.at("shape").get<std::vector<int>>());
    }
    const bool include_adam = manifest.value("include_adam", false);
    const std::size_t n = store.total() * sizeof(float);
    if (blob.size() != (include_adam ? 3 * n : n))
        throw IoFailure("blob size mismatch for " + blob_path);
    std::memcpy(store.flat().data(), blob.data(), n);
    if (include_adam) {
        std::memcpy(store.adam_m().data(), blob.data() + n, n);
        std::memcpy(store.adam_v().data(), blob.data() + 2 * n, n);
    }
    if (extra_out) *extra_out = manifest.value("extra", nlohmann::json());
    return store;
}

}  // namespace comet
