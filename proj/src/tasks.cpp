#include "comet/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "comet/error.hpp"
#include "comet/io.hpp"

namespace comet::tasks {

bool spec_valid(const TaskSpec& spec) {
    for (int v : spec)
        if (v < 0 || v >= kNumOps) return false;
    return spec[0] != spec[1] && spec[0] != spec[2] && spec[1] != spec[2];
}

std::string spec_str(std::span<const int> ops) {
    std::string out;
    for (std::size_t i = 0; i < ops.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(ops[i]);
    }
    return out;
}

std::vector<int> parse_spec(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            out.push_back(std::stoi(tok));
        } catch (...) {
            throw ConfigError("bad spec token '" + tok + "'");
        }
    }
    if (out.size() != 3) throw ConfigError("spec must have exactly 3 ids, got '" + s + "'");
    TaskSpec spec{out[0], out[1], out[2]};
    if (!spec_valid(spec)) throw ConfigError("spec ids must be distinct and in 0..5: '" + s + "'");
    return out;
}

void shift_apply(int s, std::span<const float> v, std::span<float> out) {
    if (v.size() != 6 || out.size() != 6) throw ShapeMismatch("shift_apply expects 6-vectors");
    for (int i = 0; i < 6; ++i) out[(i + s) % 6] = v[i];
}

MotorSkill gen_motor_skill(int id) {
    if (id < 0 || id >= kNumOps) throw ConfigError("skill id out of range");
    MotorSkill skill;
    skill.id = id;
    skill.duration = kDurations[static_cast<std::size_t>(id)];
    const double deg = 3.14159265358979323846 / 180.0;
    const double theta0 = id * 60.0 * deg;
    const double omega = (id % 2 == 0 ? 20.0 : -20.0) * deg;
    const double gamma = id % 2 == 0 ? 1.15 : 0.85;
    double mag = 1.0;
    skill.translations.resize(static_cast<std::size_t>(skill.duration) * 2);
    for (int k = 0; k < skill.duration; ++k) {
        const double angle = theta0 + k * omega;
        skill.translations[static_cast<std::size_t>(k) * 2] = static_cast<float>(mag * std::cos(angle));
        skill.translations[static_cast<std::size_t>(k) * 2 + 1] = static_cast<float>(mag * std::sin(angle));
        mag *= gamma;
    }
    return skill;
}

namespace {

void fill_labels(Episode& ep, std::span<const int> ops) {
    ep.ops.assign(ops.begin(), ops.end());
    for (int op : ops) {
        if (op < 0 || op >= kNumOps) throw ConfigError("op id out of range");
        for (int k = 0; k < kDurations[static_cast<std::size_t>(op)]; ++k) ep.z_true.push_back(op);
    }
    ep.T = static_cast<int>(ep.z_true.size());
    ep.feedback.assign(static_cast<std::size_t>(ep.T), 1);
}

}  // namespace

Episode gen_rule_episode(std::span<const int> ops, RngStream rng, bool zero_input) {
    Episode ep;
    fill_labels(ep, ops);
    ep.d_x = 6;
    ep.d_y = 6;
    ep.x.assign(static_cast<std::size_t>(ep.T) * 6, 0.0f);
    ep.y.assign(static_cast<std::size_t>(ep.T) * 6, 0.0f);
    if (!zero_input) {
        for (auto& v : ep.x) v = static_cast<float>(rng.normal());
    }
    std::array<float, 6> prev{};  // y_0 = 0
    std::array<float, 6> shifted{};
    for (int t = 0; t < ep.T; ++t) {
        shift_apply(ep.z_true[static_cast<std::size_t>(t)], prev, shifted);
        for (int c = 0; c < 6; ++c) {
            const float y = shifted[static_cast<std::size_t>(c)] + ep.x[static_cast<std::size_t>(t) * 6 + c];
            ep.y[static_cast<std::size_t>(t) * 6 + c] = y;
            prev[static_cast<std::size_t>(c)] = y;
        }
    }
    return ep;
}

Episode gen_rule_episode(const TaskSpec& spec, RngStream rng, bool zero_input) {
    if (!spec_valid(spec)) throw ConfigError("invalid rule spec " + spec_str(spec));
    return gen_rule_episode(std::span<const int>(spec.data(), spec.size()), rng, zero_input);
}

Episode gen_motor_episode(std::span<const int> ops) {
    Episode ep;
    fill_labels(ep, ops);
    ep.d_x = 0;
    ep.d_y = 2;
    ep.y.reserve(static_cast<std::size_t>(ep.T) * 2);
    for (int op : ops) {
        const MotorSkill skill = gen_motor_skill(op);
        ep.y.insert(ep.y.end(), skill.translations.begin(), skill.translations.end());
    }
    return ep;
}

Episode gen_motor_episode(const TaskSpec& spec) {
    if (!spec_valid(spec)) throw ConfigError("invalid motor spec " + spec_str(spec));
    return gen_motor_episode(std::span<const int>(spec.data(), spec.size()));
}

std::vector<TaskSpec> all_specs() {
    std::vector<TaskSpec> out;
    for (int a = 0; a < kNumOps; ++a)
        for (int b = 0; b < kNumOps; ++b)
            for (int c = 0; c < kNumOps; ++c)
                if (a != b && a != c && b != c) out.push_back({a, b, c});
    return out;
}

DatasetSplit make_split(int n_test, std::uint64_t seed) {
    auto specs = all_specs();
    const int total = static_cast<int>(specs.size());
    if (n_test < 1 || n_test >= total)
        throw ConfigError("n_test must be in [1, " + std::to_string(total - 1) + "]");
    RngStream rng = RngStream(seed).derive(rng_tag::kSplit);
    std::vector<int> order(specs.size());
    std::iota(order.begin(), order.end(), 0);
    for (int i = total - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.below(static_cast<std::uint32_t>(i + 1)));
        std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    std::vector<int> test_idx(order.begin(), order.begin() + n_test);
    std::sort(test_idx.begin(), test_idx.end());
    DatasetSplit split;
    split.seed = seed;
    std::vector<bool> is_test(specs.size(), false);
    for (int i : test_idx) is_test[static_cast<std::size_t>(i)] = true;
    for (int i = 0; i < total; ++i) {
        (is_test[static_cast<std::size_t>(i)] ? split.test : split.train)
            .push_back(specs[static_cast<std::size_t>(i)]);
    }
    return split;
}

void save_split(const DatasetSplit& split, const std::string& path) {
    nlohmann::json j;
    j["seed"] = split.seed;
    auto dump = [](const std::vector<TaskSpec>& v) {
        nlohmann::json out = nlohmann::json::array();
        for (const auto& s : v) out.push_back({s[0], s[1], s[2]});
        return out;
    };
    j["train"] = dump(split.train);
    j["test"] = dump(split.test);
    io::write_text(path, j.dump(2) + "\n");
}

DatasetSplit load_split(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(io::read_text(path));
    } catch (const nlohmann::json::exception& e) {
        throw IoFailure("bad split file " + path + ": " + e.what());
    }
    DatasetSplit split;
    split.seed = j.value("seed", std::uint64_t(0));
    auto parse = [&](const char* key, std::vector<TaskSpec>& out) {
        for (const auto& row : j.at(key)) {
            TaskSpec s{row.at(0).get<int>(), row.at(1).get<int>(), row.at(2).get<int>()};
            if (!spec_valid(s)) throw ConfigError("invalid spec in split file");
            out.push_back(s);
        }
    };
    parse("train", split.train);
    parse("test", split.test);
    return split;
}

std::vector<std::uint8_t> sparse_mask(int T, double p, RngStream rng) {
    if (!(p > 0.0) || p > 1.0) throw ConfigError("feedback density must be in (0,1]");
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(T));
    for (auto& m : mask) m = rng.uniform() < p ? 1 : 0;
    if (T > 0) mask.back() = 1;
    return mask;
}

std::vector<int> extend_spec(const TaskSpec& spec, int factor, RngStream rng) {
    if (factor < 1) throw ConfigError("factor must be >= 1");
    if (!spec_valid(spec)) throw ConfigError("invalid spec " + spec_str(spec));
    std::vector<int> ops(spec.begin(), spec.end());
    while (static_cast<int>(ops.size()) < 3 * factor) {
        const int prev = ops.back();
        int next = static_cast<int>(rng.below(kNumOps - 1));
        if (next >= prev) ++next;  // uniform over ids != prev
        ops.push_back(next);
    }
    return ops;
}

std::vector<double> ground_truth_transitions(int z, int run_len) {
    if (z < 0 || z >= kNumOps) throw ConfigError("module id out of range");
    const int dur = kDurations[static_cast<std::size_t>(z)];
    if (run_len < 1) throw ConfigError("run length must be >= 1");
    if (run_len > dur) throw RunLongerThanDuration(run_len, dur);
    std::vector<double> row(kNumOps, 0.0);
    if (run_len < dur) {
        row[static_cast<std::size_t>(z)] = 1.0;
    } else {
        for (int j = 0; j < kNumOps; ++j)
            if (j != z) row[static_cast<std::size_t>(j)] = 1.0 / (kNumOps - 1);
    }
    return row;
}

void save_episode_csv(const Episode& ep, const std::string& path) {
    std::string out = "t,feedback,z_true";
    for (int c = 0; c < ep.d_x; ++c) out += ",x" + std::to_string(c);
    for (int c = 0; c < ep.d_y; ++c) out += ",y" + std::to_string(c);
    out += "\n";
    for (int t = 0; t < ep.T; ++t) {
        out += std::to_string(t) + "," + std::to_string(static_cast<int>(ep.feedback[static_cast<std::size_t>(t)])) + "," +
               std::to_string(ep.z_true[static_cast<std::size_t>(t)]);
        for (int c = 0; c < ep.d_x; ++c)
            out += "," + io::fmt(ep.x[static_cast<std::size_t>(t) * ep.d_x + c]);
        for (int c = 0; c < ep.d_y; ++c)
            out += "," + io::fmt(ep.y[static_cast<std::size_t>(t) * ep.d_y + c]);
        out += "\n";
    }
    io::write_text(path, out);
}

Episode load_episode_csv(const std::string& path) {
    const std::string text = io::read_text(path);
    std::stringstream ss(text);
    std::string line;
    if (!std::getline(ss, line)) throw IoFailure("empty episode file " + path);
    int d_x = 0, d_y = 0;
    {
        std::stringstream hs(line);
        std::string col;
        while (std::getline(hs, col, ',')) {
            if (col.rfind('x', 0) == 0) ++d_x;
            if (col.rfind('y', 0) == 0) ++d_y;
        }
    }
    Episode ep;
    ep.d_x = d_x;
    ep.d_y = d_y;
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        std::stringstream ls(line);
        std::string tok;
        std::vector<std::string> cells;
        while (std::getline(ls, tok, ',')) cells.push_back(tok);
        if (static_cast<int>(cells.size()) != 3 + d_x + d_y)
            throw IoFailure("bad episode row in " + path);
        ep.feedback.push_back(static_cast<std::uint8_t>(std::stoi(cells[1])));
        ep.z_true.push_back(std::stoi(cells[2]));
        for (int c = 0; c < d_x; ++c) ep.x.push_back(std::stof(cells[static_cast<std::size_t>(3 + c)]));
        for (int c = 0; c < d_y; ++c) ep.y.push_back(std::stof(cells[static_cast<std::size_t>(3 + d_x + c)]));
    }
    ep.T = static_cast<int>(ep.z_true.size());
    return ep;
}

}  // namespace comet::tasks
