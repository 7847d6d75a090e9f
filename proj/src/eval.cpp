#include "comet/eval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "comet/error.hpp"
#include "comet/io.hpp"
#include "comet/svg.hpp"

namespace comet::eval {

double pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.empty()) throw LengthMismatch(a.size(), b.size());
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa < 1e-24 || sbb < 1e-24) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

std::vector<float> rule_truth_matrix(int s) {
    std::vector<float> m(36, 0.0f);
    for (int i = 0; i < 6; ++i) m[static_cast<std::size_t>(i) * 6 + (i + s) % 6] = 1.0f;
    return m;
}

namespace {

// Exhaustive assignment over all permutations; strictly-better comparison on
// the total score keeps the lexicographically smallest optimum.
std::vector<int> best_permutation(int n, const std::function<double(int, int)>& pair_score,
                                  bool maximize) {
    std::vector<int> perm(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
    std::vector<int> best = perm;
    double best_total = 0;
    bool first = true;
    std::vector<int> p = perm;
    do {
        double total = 0;
        for (int j = 0; j < n; ++j) total += pair_score(j, p[static_cast<std::size_t>(j)]);
        if (first || (maximize ? total > best_total : total < best_total)) {
            best_total = total;
            best = p;
            first = false;
        }
    } while (std::next_permutation(p.begin(), p.end()));
    return best;
}

std::vector<double> to_double(std::span<const float> v) {
    return std::vector<double>(v.begin(), v.end());
}

}  // namespace

ProbeResult probe_modules_rule(const CompositionalModel& model) {
    const ModelConfig& cfg = model.config;
    if (cfg.family != TaskFamily::kRule) throw ConfigError("rule probe on a non-rule model");
    Tape<float> tape;
    ModelVars mv = bind_model(tape, model);

    ProbeResult out;
    out.family = cfg.family;
    out.n_modules = cfg.n_modules;
    for (int z = 0; z < cfg.n_modules; ++z) {
        std::vector<float> response(36, 0.0f);
        for (int i = 0; i < 6; ++i) {
            Var x = tape.constant(1, cfg.d_x);
            Var y_prev = tape.constant(1, cfg.d_y);
            tape.vals(y_prev)[static_cast<std::size_t>(i)] = 1.0f;
            std::vector<Var> parts;
            if (cfg.use_input) parts.push_back(x);
            if (cfg.feed_prev_target) parts.push_back(y_prev);
            Var in = parts.size() == 1 ? parts[0] : tape.concat_cols(parts);
            Var h = nn::elman_step(tape, mv.m_w_ih[static_cast<std::size_t>(z)], mv.m_b_ih[static_cast<std::size_t>(z)],
                                   mv.m_w_hh[static_cast<std::size_t>(z)], mv.m_b_hh[static_cast<std::size_t>(z)], in,
                                   mv.m_h0[static_cast<std::size_t>(z)]);
            Var mu = cfg.per_module_readout
                         ? tape.linear(h, mv.m_w_out[static_cast<std::size_t>(z)], mv.m_b_out[static_cast<std::size_t>(z)])
                         : tape.linear(h, mv.out_w, mv.out_b);
            auto muv = tape.vals(mu);
            for (int c = 0; c < 6; ++c) response[static_cast<std::size_t>(i) * 6 + c] = muv[static_cast<std::size_t>(c)];
        }
        out.responses.push_back(std::move(response));
    }

    std::array<std::array<double, 6>, 6> score{};
    for (int j = 0; j < 6; ++j) {
        const auto resp = to_double(out.responses[static_cast<std::size_t>(j)]);
        for (int s = 0; s < 6; ++s) {
            const auto truth = to_double(rule_truth_matrix(s));
            score[static_cast<std::size_t>(j)][static_cast<std::size_t>(s)] = pearson(resp, truth);
        }
    }
    out.permutation = best_permutation(
        6, [&](int j, int s) { return score[static_cast<std::size_t>(j)][static_cast<std::size_t>(s)]; }, true);
    for (int j = 0; j < 6; ++j)
        out.scores.push_back(score[static_cast<std::size_t>(j)][static_cast<std::size_t>(out.permutation[static_cast<std::size_t>(j)])]);
    double mean = 0;
    for (double s : out.scores) mean += s;
    out.mean_score = mean / 6.0;
    return out;
}

double motor_endpoint_distance(std::span<const float> rollout, const tasks::MotorSkill& skill) {
    double ex = 0, ey = 0;
    for (int k = 0; k < skill.duration; ++k) {
        // zero-padded when the rollout is shorter than the skill
        const double mx = 2 * k + 1 < static_cast<int>(rollout.size()) ? rollout[static_cast<std::size_t>(2 * k)] : 0.0;
        const double my = 2 * k + 1 < static_cast<int>(rollout.size()) ? rollout[static_cast<std::size_t>(2 * k + 1)] : 0.0;
        ex += mx - skill.translations[static_cast<std::size_t>(2 * k)];
        ey += my - skill.translations[static_cast<std::size_t>(2 * k + 1)];
    }
    return std::sqrt(ex * ex + ey * ey);
}

double motor_step_error(std::span<const float> rollout, const tasks::MotorSkill& skill) {
    double err = 0;
    for (int k = 0; k < skill.duration; ++k) {
        const double mx = 2 * k + 1 < static_cast<int>(rollout.size()) ? rollout[static_cast<std::size_t>(2 * k)] : 0.0;
        const double my = 2 * k + 1 < static_cast<int>(rollout.size()) ? rollout[static_cast<std::size_t>(2 * k + 1)] : 0.0;
        const double dx = mx - skill.translations[static_cast<std::size_t>(2 * k)];
        const double dy = my - skill.translations[static_cast<std::size_t>(2 * k + 1)];
        err += std::sqrt(dx * dx + dy * dy);
    }
    return err / skill.duration;
}

ProbeResult probe_modules_motor(const CompositionalModel& model) {
    const ModelConfig& cfg = model.config;
    if (cfg.family != TaskFamily::kMotor) throw ConfigError("motor probe on a non-motor model");
    Tape<float> tape;
    ModelVars mv = bind_model(tape, model);

    ProbeResult out;
    out.family = cfg.family;
    out.n_modules = cfg.n_modules;
    const int roll_steps = 5;
    for (int z = 0; z < cfg.n_modules; ++z) {
        std::vector<float> rollout;
        Var m = mv.m_h0[static_cast<std::size_t>(z)];
        for (int k = 0; k < roll_steps; ++k) {
            Var in;  // no inputs in the motor configuration
            if (cfg.module_input() > 0) in = tape.constant(1, cfg.module_input());
            Var h = nn::elman_step(tape, mv.m_w_ih[static_cast<std::size_t>(z)], mv.m_b_ih[static_cast<std::size_t>(z)],
                                   mv.m_w_hh[static_cast<std::size_t>(z)], mv.m_b_hh[static_cast<std::size_t>(z)], in, m);
            Var mu = cfg.per_module_readout
                         ? tape.linear(h, mv.m_w_out[static_cast<std::size_t>(z)], mv.m_b_out[static_cast<std::size_t>(z)])
                         : tape.linear(h, mv.out_w, mv.out_b);
            auto muv = tape.vals(mu);
            rollout.push_back(muv[0]);
            rollout.push_back(muv[1]);
            m = h;
        }
        out.responses.push_back(std::move(rollout));
    }

    std::vector<tasks::MotorSkill> skills;
    for (int s = 0; s < 6; ++s) skills.push_back(tasks::gen_motor_skill(s));
    out.permutation = best_permutation(
        6,
        [&](int j, int s) {
            return motor_endpoint_distance(out.responses[static_cast<std::size_t>(j)], skills[static_cast<std::size_t>(s)]);
        },
        false);
    for (int j = 0; j < 6; ++j) {
        const tasks::MotorSkill& skill = skills[static_cast<std::size_t>(out.permutation[static_cast<std::size_t>(j)])];
        out.step_errors.push_back(motor_step_error(out.responses[static_cast<std::size_t>(j)], skill));
        std::vector<double> a, b;
        for (int k = 0; k < skill.duration * 2; ++k) {
            a.push_back(out.responses[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)]);
            b.push_back(skill.translations[static_cast<std::size_t>(k)]);
        }
        out.scores.push_back(pearson(a, b));
    }
    double mean = 0;
    for (double s : out.scores) mean += s;
    out.mean_score = mean / 6.0;
    return out;
}

ProbeResult probe_modules(const CompositionalModel& model) {
    return model.config.family == TaskFamily::kRule ? probe_modules_rule(model)
                                                    : probe_modules_motor(model);
}

TransitionProbe probe_transitions(const CompositionalModel& model, int max_depth) {
    const ModelConfig& cfg = model.config;
    TransitionProbe out;
    out.n_modules = cfg.n_modules;
    out.max_depth = max_depth;
    out.rows.assign(static_cast<std::size_t>(max_depth) * cfg.n_modules * cfg.n_modules, 0.0f);

    Tape<float> tape;
    ModelVars mv = bind_model(tape, model);
    for (int i = 0; i < cfg.n_modules; ++i) {
        Var g = cfg.uniform_gating ? tape.constant(1, 1) : mv.g_h0;
        Var onehot = tape.constant(1, cfg.n_modules);
        tape.vals(onehot)[static_cast<std::size_t>(i)] = 1.0f;
        Var x, y_prev;
        if (cfg.use_input) x = tape.constant(1, cfg.d_x);
        if (cfg.feed_prev_target) y_prev = tape.constant(1, cfg.d_y);
        for (int h = 1; h <= max_depth; ++h) {
            GatingOut gate = gating_step(tape, mv, cfg, x, y_prev, onehot, g);
            Var probs = tape.softmax_rows(gate.logits);
            auto pv = tape.vals(probs);
            for (int n = 0; n < cfg.n_modules; ++n)
                out.rows[((static_cast<std::size_t>(h - 1) * cfg.n_modules + i) * cfg.n_modules) + static_cast<std::size_t>(n)] =
                    pv[static_cast<std::size_t>(n)];
            g = gate.g_next;
        }
    }
    return out;
}

double module_accuracy(const ProbeResult& probe) { return probe.mean_score; }

double gating_accuracy(const TransitionProbe& probe, std::span<const int> permutation) {
    const int n = probe.n_modules;
    if (static_cast<int>(permutation.size()) != n) throw LengthMismatch(permutation.size(), static_cast<std::size_t>(n));
    double total = 0;
    int count = 0;
    for (int j = 0; j < n; ++j) {
        const int s = permutation[static_cast<std::size_t>(j)];
        const int dur = tasks::kDurations[static_cast<std::size_t>(s)];
        for (int h = 1; h <= std::min(dur, probe.max_depth); ++h) {
            auto learned = probe.row(h, j);
            std::vector<double> aligned(static_cast<std::size_t>(n), 0.0);
            for (int jp = 0; jp < n; ++jp)
                aligned[static_cast<std::size_t>(permutation[static_cast<std::size_t>(jp)])] =
                    learned[static_cast<std::size_t>(jp)];
            const auto truth = tasks::ground_truth_transitions(s, h);
            total += pearson(aligned, truth);
            ++count;
        }
    }
    return count == 0 ? 0.0 : total / count;
}

double map_accuracy(const smc::PosteriorTrace& trace, std::span<const int> z_true,
                    std::span<const int> permutation) {
    if (trace.map_sequence.size() != z_true.size())
        throw LengthMismatch(trace.map_sequence.size(), z_true.size());
    int hits = 0;
    for (std::size_t t = 0; t < z_true.size(); ++t) {
        int mapped = trace.map_sequence[t];
        if (!permutation.empty()) mapped = permutation[static_cast<std::size_t>(mapped)];
        if (mapped == z_true[t]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(z_true.size());
}

double eval_mse_model(const CompositionalModel& model, std::span<const tasks::Episode> episodes,
                      int K, RngStream stream) {
    double total = 0;
    for (std::size_t e = 0; e < episodes.size(); ++e) {
        const tasks::Episode& ep = episodes[e];
        smc::PosteriorTrace tr = smc::run_filter(model, ep, K, smc::FilterMode::kBootstrap,
                                                 stream.derive(rng_tag::kEpisode, e), true);
        double se = 0;
        int n_fb = 0;
        for (int t = 0; t < ep.T; ++t) {
            if (!ep.feedback[static_cast<std::size_t>(t)]) continue;
            ++n_fb;
            for (int c = 0; c < ep.d_y; ++c) {
                const double d = tr.map_mu[static_cast<std::size_t>(t) * ep.d_y + c] -
                                 ep.y[static_cast<std::size_t>(t) * ep.d_y + c];
                se += d * d;
            }
        }
        total += se / (static_cast<double>(n_fb) * ep.d_y);
    }
    return total / static_cast<double>(episodes.size());
}

double eval_mse_control(const ControlModel& control, std::span<const tasks::Episode> episodes,
                        std::span<const std::vector<float>> task_onehots) {
    if (control.kind == ControlKind::kUniformGating)
        throw ConfigError("evaluate the uniform-gating ablation with eval_mse_model on .inner");
    double total = 0;
    Tape<float> tape;
    for (std::size_t e = 0; e < episodes.size(); ++e) {
        tape.reset();
        const tasks::Episode& ep = episodes[e];
        std::span<const float> oh;
        if (control.kind == ControlKind::kTaskIdRnn) {
            if (task_onehots.empty()) throw MissingTaskId();
            oh = task_onehots[e];
        }
        auto preds = control_forward(tape, control, ep, oh);
        double se = 0;
        int n_fb = 0;
        for (int t = 0; t < ep.T; ++t) {
            if (!ep.feedback[static_cast<std::size_t>(t)]) continue;
            ++n_fb;
            auto pv = tape.vals(preds[static_cast<std::size_t>(t)]);
            for (int c = 0; c < ep.d_y; ++c) {
                const double d = pv[static_cast<std::size_t>(c)] - ep.y[static_cast<std::size_t>(t) * ep.d_y + c];
                se += d * d;
            }
        }
        total += se / (static_cast<double>(n_fb) * ep.d_y);
    }
    return total / static_cast<double>(episodes.size());
}

double zero_predictor_mse(std::span<const tasks::Episode> episodes) {
    double total = 0;
    for (const tasks::Episode& ep : episodes) {
        double se = 0;
        int n_fb = 0;
        for (int t = 0; t < ep.T; ++t) {
            if (!ep.feedback[static_cast<std::size_t>(t)]) continue;
            ++n_fb;
            for (int c = 0; c < ep.d_y; ++c) {
                const double y = ep.y[static_cast<std::size_t>(t) * ep.d_y + c];
                se += y * y;
            }
        }
        total += se / (static_cast<double>(n_fb) * ep.d_y);
    }
    return total / static_cast<double>(episodes.size());
}

// ---------------------------------------------------------------------------
// Probe CSV artifacts
// ---------------------------------------------------------------------------

void save_probes(const CompositionalModel& model, const std::string& dir) {
    io::ensure_dir(dir);
    ProbeResult pr = probe_modules(model);
    TransitionProbe tp = probe_transitions(model);
    std::vector<int> inv(static_cast<std::size_t>(pr.n_modules));
    for (int j = 0; j < pr.n_modules; ++j) inv[static_cast<std::size_t>(pr.permutation[static_cast<std::size_t>(j)])] = j;

    if (model.config.family == TaskFamily::kRule) {
        std::string out = "kind,panel,row,c0,c1,c2,c3,c4,c5\n";
        for (int s = 0; s < 6; ++s) {
            const auto truth = rule_truth_matrix(s);
            const auto& learned = pr.responses[static_cast<std::size_t>(inv[static_cast<std::size_t>(s)])];
            for (int i = 0; i < 6; ++i) {
                out += "truth," + std::to_string(s) + "," + std::to_string(i);
                for (int c = 0; c < 6; ++c) out += "," + io::fmt(truth[static_cast<std::size_t>(i) * 6 + c]);
                out += "\n";
            }
            for (int i = 0; i < 6; ++i) {
                out += "learned," + std::to_string(s) + "," + std::to_string(i);
                for (int c = 0; c < 6; ++c) out += "," + io::fmt(learned[static_cast<std::size_t>(i) * 6 + c]);
                out += "\n";
            }
        }
        io::write_text(dir + "/probe_modules.csv", out);
    } else {
        std::string out = "kind,panel,step,dx,dy\n";
        for (int s = 0; s < 6; ++s) {
            const tasks::MotorSkill skill = tasks::gen_motor_skill(s);
            for (int k = 0; k < skill.duration; ++k)
                out += "truth," + std::to_string(s) + "," + std::to_string(k) + "," +
                       io::fmt(skill.translations[static_cast<std::size_t>(2 * k)]) + "," +
                       io::fmt(skill.translations[static_cast<std::size_t>(2 * k + 1)]) + "\n";
            const auto& learned = pr.responses[static_cast<std::size_t>(inv[static_cast<std::size_t>(s)])];
            for (int k = 0; k < skill.duration; ++k)
                out += "learned," + std::to_string(s) + "," + std::to_string(k) + "," +
                       io::fmt(learned[static_cast<std::size_t>(2 * k)]) + "," +
                       io::fmt(learned[static_cast<std::size_t>(2 * k + 1)]) + "\n";
        }
        io::write_text(dir + "/probe_modules.csv", out);
    }

    {
        std::string out = "kind,depth,panel,c0,c1,c2,c3,c4,c5\n";
        for (int h = 1; h <= tp.max_depth; ++h) {
            for (int s = 0; s < 6; ++s) {
                if (h <= tasks::kDurations[static_cast<std::size_t>(s)]) {
                    const auto truth = tasks::ground_truth_transitions(s, h);
                    out += "truth," + std::to_string(h) + "," + std::to_string(s);
                    for (int c = 0; c < 6; ++c) out += "," + io::fmt(truth[static_cast<std::size_t>(c)]);
                    out += "\n";
                }
                auto learned = tp.row(h, inv[static_cast<std::size_t>(s)]);
                std::vector<double> aligned(6, 0.0);
                for (int jp = 0; jp < 6; ++jp)
                    aligned[static_cast<std::size_t>(pr.permutation[static_cast<std::size_t>(jp)])] =
                        learned[static_cast<std::size_t>(jp)];
                out += "learned," + std::to_string(h) + "," + std::to_string(s);
                for (int c = 0; c < 6; ++c) out += "," + io::fmt(aligned[static_cast<std::size_t>(c)]);
                out += "\n";
            }
        }
        io::write_text(dir + "/probe_transitions.csv", out);
    }

    {
        nlohmann::json j;
        j["module_accuracy"] = module_accuracy(pr);
        j["gating_accuracy"] = gating_accuracy(tp, pr.permutation);
        j["permutation"] = pr.permutation;
        j["correlation"] = "pearson";
        io::write_text(dir + "/probe_summary.json", j.dump(2) + "\n");
    }
}

void save_motor_path_csv(const tasks::Episode& ep, const smc::PosteriorTrace& trace,
                         const std::string& path) {
    if (ep.d_y != 2) throw ConfigError("path data needs 2D targets");
    if (trace.history.empty()) throw ConfigError("trace has no particle history");
    std::string out = "kind,t,module,x0,y0,x1,y1\n";
    auto seg = [&](const char* kind, int t, int z, double x0, double y0, double x1, double y1) {
        out += std::string(kind) + "," + std::to_string(t) + "," + std::to_string(z) + "," +
               io::fmt(x0, 4) + "," + io::fmt(y0, 4) + "," + io::fmt(x1, 4) + "," + io::fmt(y1, 4) +
               "\n";
    };

    double tx = 0, ty = 0, mx = 0, my = 0;
    for (int t = 0; t < ep.T; ++t) {
        const double nx = tx + ep.y[static_cast<std::size_t>(t) * 2];
        const double ny = ty + ep.y[static_cast<std::size_t>(t) * 2 + 1];
        seg("true", t, ep.z_true[static_cast<std::size_t>(t)], tx, ty, nx, ny);
        tx = nx;
        ty = ny;
        const double mnx = mx + trace.map_mu[static_cast<std::size_t>(t) * 2];
        const double mny = my + trace.map_mu[static_cast<std::size_t>(t) * 2 + 1];
        seg("map", t, trace.map_sequence[static_cast<std::size_t>(t)], mx, my, mnx, mny);
        mx = mnx;
        my = mny;
    }

    // particle rollouts between feedback steps, deduplicated
    const int K = static_cast<int>(trace.history[0].choice.size());
    std::vector<double> px(static_cast<std::size_t>(K), 0.0), py(static_cast<std::size_t>(K), 0.0);
    std::set<std::string> seen;
    for (int t = 0; t < ep.T; ++t) {
        const smc::StepRecord& rec = trace.history[static_cast<std::size_t>(t)];
        std::vector<double> qx(static_cast<std::size_t>(K)), qy(static_cast<std::size_t>(K));
        for (int k = 0; k < K; ++k) {
            qx[static_cast<std::size_t>(k)] = px[static_cast<std::size_t>(k)] + rec.mu[static_cast<std::size_t>(k) * 2];
            qy[static_cast<std::size_t>(k)] = py[static_cast<std::size_t>(k)] + rec.mu[static_cast<std::size_t>(k) * 2 + 1];
            if (!rec.feedback) {
                char key[128];
                std::snprintf(key, sizeof(key), "%d:%d:%.3f:%.3f:%.3f:%.3f", t,
                              rec.choice[static_cast<std::size_t>(k)], px[static_cast<std::size_t>(k)],
                              py[static_cast<std::size_t>(k)], qx[static_cast<std::size_t>(k)], qy[static_cast<std::size_t>(k)]);
                if (seen.insert(key).second)
                    seg("branch", t, rec.choice[static_cast<std::size_t>(k)], px[static_cast<std::size_t>(k)],
                        py[static_cast<std::size_t>(k)], qx[static_cast<std::size_t>(k)], qy[static_cast<std::size_t>(k)]);
            }
        }
        for (int k = 0; k < K; ++k) {
            const int a = rec.ancestor[static_cast<std::size_t>(k)];
            px[static_cast<std::size_t>(k)] = qx[static_cast<std::size_t>(a)];
            py[static_cast<std::size_t>(k)] = qy[static_cast<std::size_t>(a)];
        }
    }
    io::write_text(path, out);
}

// ---------------------------------------------------------------------------
// Figures
// ---------------------------------------------------------------------------

namespace {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv(const std::string& path) {
    CsvTable t;
    std::stringstream ss(io::read_text(path));
    std::string line;
    bool first = true;
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ls(line);
        std::string tok;
        while (std::getline(ls, tok, ',')) cells.push_back(tok);
        if (first) {
            t.header = cells;
            first = false;
        } else {
            t.rows.push_back(cells);
        }
    }
    return t;
}

int col_of(const CsvTable& t, const std::string& name) {
    for (std::size_t i = 0; i < t.header.size(); ++i)
        if (t.header[i] == name) return static_cast<int>(i);
    throw IoFailure("missing column " + name);
}

void plot_curves(const std::string& dir) {
    CsvTable t = read_csv(dir + "/metrics.csv");
    const int ci = col_of(t, "iteration");
    const std::array<std::pair<const char*, const char*>, 4> series{
        {{"train_loss", "#4c72b0"}, {"task_mse", "#dd8452"}, {"module_acc", "#55a868"},
         {"gating_acc", "#c44e52"}}};
    svg::Canvas canvas(640, 360);
    const double mx = 60, my = 30, pw = 560, ph = 140;
    // panel 0: loss & mse, panel 1: accuracies
    for (int panel = 0; panel < 2; ++panel) {
        const double oy = my + panel * (ph + 40);
        canvas.rect(mx, oy, pw, ph, "#f7f7f7");
        double lo = 1e300, hi = -1e300;
        for (int s = panel * 2; s < panel * 2 + 2; ++s) {
            const int c = col_of(t, series[static_cast<std::size_t>(s)].first);
            for (const auto& r : t.rows) {
                const double v = std::stod(r[static_cast<std::size_t>(c)]);
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        }
        if (!(hi > lo)) hi = lo + 1;
        double it_max = 1;
        for (const auto& r : t.rows) it_max = std::max(it_max, std::stod(r[static_cast<std::size_t>(ci)]));
        for (int s = panel * 2; s < panel * 2 + 2; ++s) {
            const int c = col_of(t, series[static_cast<std::size_t>(s)].first);
            std::vector<std::pair<double, double>> pts;
            for (const auto& r : t.rows) {
                const double x = mx + std::stod(r[static_cast<std::size_t>(ci)]) / it_max * pw;
                const double y = oy + ph - (std::stod(r[static_cast<std::size_t>(c)]) - lo) / (hi - lo) * ph;
                pts.emplace_back(x, y);
            }
            canvas.polyline(pts, series[static_cast<std::size_t>(s)].second, 1.5);
            canvas.text(mx + 5, oy + 14 + 12 * (s - panel * 2), series[static_cast<std::size_t>(s)].first, 10,
                        "start");
        }
        canvas.text(mx, oy + ph + 14, "0", 9);
        canvas.text(mx + pw, oy + ph + 14, io::fmt(it_max, 0), 9, "end");
    }
    canvas.save(dir + "/curves.svg");
}

void plot_heat_panels(const std::string& in_csv, const std::string& out_svg, bool by_depth) {
    CsvTable t = read_csv(in_csv);
    const int ckind = col_of(t, "kind");
    const int cpanel = col_of(t, by_depth ? "panel" : "panel");
    const int cdepth = by_depth ? col_of(t, "depth") : -1;
    const int crow = by_depth ? cpanel : col_of(t, "row");
    const double cell = 9, gap = 14;
    const int panels = 6;
    const int depths = by_depth ? 5 : 1;
    const double block_w = 6 * cell + gap;
    const double block_h = 6 * cell + gap + 12;
    svg::Canvas canvas(40 + (by_depth ? depths : panels) * block_w,
                       30 + (by_depth ? panels * 0 + 2 : 2) * block_h);
    // two bands: truth on top, learned below
    for (const auto& r : t.rows) {
        const bool truth = r[static_cast<std::size_t>(ckind)] == "truth";
        double x0, y0;
        int rowidx;
        if (by_depth) {
            const int depth = std::stoi(r[static_cast<std::size_t>(cdepth)]);
            rowidx = std::stoi(r[static_cast<std::size_t>(cpanel)]);
            x0 = 30 + (depth - 1) * block_w;
            y0 = 20 + (truth ? 0 : 1) * block_h;
        } else {
            const int panel = std::stoi(r[static_cast<std::size_t>(cpanel)]);
            rowidx = std::stoi(r[static_cast<std::size_t>(crow)]);
            x0 = 30 + panel * block_w;
            y0 = 20 + (truth ? 0 : 1) * block_h;
        }
        for (int c = 0; c < 6; ++c) {
            const double v = std::stod(r[t.header.size() - 6 + static_cast<std::size_t>(c)]);
            canvas.rect(x0 + c * cell, y0 + rowidx * cell, cell, cell, svg::heat_color(v));
        }
    }
    canvas.text(10, 14, "truth (top) / learned (bottom)", 10);
    canvas.save(out_svg);
}

void plot_motor_probe(const std::string& in_csv, const std::string& out_svg) {
    CsvTable t = read_csv(in_csv);
    const int ckind = col_of(t, "kind");
    const int cpanel = col_of(t, "panel");
    const int cdx = col_of(t, "dx");
    const int cdy = col_of(t, "dy");
    svg::Canvas canvas(6 * 110 + 20, 150);
    for (int s = 0; s < 6; ++s) {
        const double ox = 20 + s * 110 + 45, oy = 80;
        for (const char* kind : {"truth", "learned"}) {
            std::vector<std::pair<double, double>> pts{{ox, oy}};
            double px = 0, py = 0;
            for (const auto& r : t.rows) {
                if (r[static_cast<std::size_t>(ckind)] != kind || std::stoi(r[static_cast<std::size_t>(cpanel)]) != s)
                    continue;
                px += std::stod(r[static_cast<std::size_t>(cdx)]);
                py += std::stod(r[static_cast<std::size_t>(cdy)]);
                pts.emplace_back(ox + px * 10, oy - py * 10);
            }
            const bool truth = std::string(kind) == "truth";
            canvas.polyline(pts, truth ? svg::module_color(s) : "#555555", truth ? 3.0 : 1.0);
        }
        canvas.text(20 + s * 110 + 45, 140, std::to_string(s), 10, "middle");
    }
    canvas.save(out_svg);
}

void plot_posterior(const std::string& dir) {
    CsvTable t = read_csv(dir + "/trace.csv");
    int n_modules = 0;
    for (const auto& h : t.header)
        if (h.size() > 1 && h[0] == 'p' && std::isdigit(static_cast<unsigned char>(h[1]))) ++n_modules;
    const int cfb = col_of(t, "feedback");
    const int cmap = col_of(t, "map");
    const int ctrue = col_of(t, "true");
    const int T = static_cast<int>(t.rows.size());
    const double cell = 16;
    svg::Canvas canvas(60 + T * cell, 60 + n_modules * cell + 20);
    for (int tt = 0; tt < T; ++tt) {
        const auto& r = t.rows[static_cast<std::size_t>(tt)];
        // feedback band
        if (std::stoi(r[static_cast<std::size_t>(cfb)]) != 0)
            canvas.rect(40 + tt * cell, 20, cell, 8, "#f2d544");
        for (int n = 0; n < n_modules; ++n) {
            const double v = std::stod(r[static_cast<std::size_t>(col_of(t, "p" + std::to_string(n)))]);
            canvas.rect(40 + tt * cell, 40 + n * cell, cell, cell, svg::heat_color(v));
        }
        const int m = std::stoi(r[static_cast<std::size_t>(cmap)]);
        canvas.circle(40 + tt * cell + cell / 2, 40 + m * cell + cell / 2, 3.0, "#e41a1c");
        const int z = std::stoi(r[static_cast<std::size_t>(ctrue)]);
        if (z >= 0)
            canvas.circle(40 + tt * cell + cell / 2, 40 + z * cell + cell / 2, 1.6, "#ffffff");
    }
    canvas.text(10, 34, "fb", 9);
    canvas.save(dir + "/posterior.svg");
}

void plot_paths(const std::string& dir) {
    CsvTable t = read_csv(dir + "/path.csv");
    const int ckind = col_of(t, "kind");
    const int cmod = col_of(t, "module");
    const int cx0 = col_of(t, "x0");
    const int cy0 = col_of(t, "y0");
    const int cx1 = col_of(t, "x1");
    const int cy1 = col_of(t, "y1");
    double lo = -1, hi = 1;
    for (const auto& r : t.rows) {
        for (int c : {cx0, cy0, cx1, cy1}) {
            lo = std::min(lo, std::stod(r[static_cast<std::size_t>(c)]));
            hi = std::max(hi, std::stod(r[static_cast<std::size_t>(c)]));
        }
    }
    const double size = 420, margin = 30;
    const double scale = (size - 2 * margin) / (hi - lo);
    auto X = [&](double v) { return margin + (v - lo) * scale; };
    auto Y = [&](double v) { return size - margin - (v - lo) * scale; };
    svg::Canvas canvas(size, size);
    // draw order: branches (dotted) under map (white halo) under true path ticks
    for (const char* kind : {"branch", "true", "map"}) {
        for (const auto& r : t.rows) {
            if (r[static_cast<std::size_t>(ckind)] != kind) continue;
            const int z = std::stoi(r[static_cast<std::size_t>(cmod)]);
            const double x0 = X(std::stod(r[static_cast<std::size_t>(cx0)]));
            const double y0 = Y(std::stod(r[static_cast<std::size_t>(cy0)]));
            const double x1 = X(std::stod(r[static_cast<std::size_t>(cx1)]));
            const double y1 = Y(std::stod(r[static_cast<std::size_t>(cy1)]));
            if (std::string(kind) == "true") {
                canvas.line(x0, y0, x1, y1, svg::module_color(z), 5.0);
            } else if (std::string(kind) == "map") {
                canvas.line(x0, y0, x1, y1, "#ffffff", 3.2);
                canvas.line(x0, y0, x1, y1, svg::module_color(z), 1.6);
            } else {
                canvas.line(x0, y0, x1, y1, svg::module_color(z), 0.8, /*dashed=*/true);
            }
        }
    }
    canvas.text(X(0), Y(0), "*", 16, "middle");
    canvas.save(dir + "/paths.svg");
}

}  // namespace

void emit_figures(const std::string& run_dir) {
    bool any = false;
    if (io::file_exists(run_dir + "/metrics.csv")) {
        plot_curves(run_dir);
        any = true;
    }
    if (io::file_exists(run_dir + "/probe_modules.csv")) {
        CsvTable t = read_csv(run_dir + "/probe_modules.csv");
        if (!t.header.empty() && t.header.back() == "dy")
            plot_motor_probe(run_dir + "/probe_modules.csv", run_dir + "/module_probe.svg");
        else
            plot_heat_panels(run_dir + "/probe_modules.csv", run_dir + "/module_probe.svg", false);
        any = true;
    }
    if (io::file_exists(run_dir + "/probe_transitions.csv")) {
        plot_heat_panels(run_dir + "/probe_transitions.csv", run_dir + "/transition_probe.svg",
                         true);
        any = true;
    }
    if (io::file_exists(run_dir + "/trace.csv")) {
        plot_posterior(run_dir);
        any = true;
    }
    if (io::file_exists(run_dir + "/path.csv")) {
        plot_paths(run_dir);
        any = true;
    }
    if (!any) throw IoFailure("nothing to plot in " + run_dir + ": missing metrics.csv/trace.csv");
}

}  // namespace comet::eval
