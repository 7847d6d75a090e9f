#include "comet/smc.hpp"

#include <sstream>

#include "comet/io.hpp"

namespace comet::smc {

const char* mode_name(FilterMode mode) {
    return mode == FilterMode::kBootstrap ? "bootstrap" : "guided";
}

FilterMode mode_from(const std::string& name) {
    if (name == "bootstrap") return FilterMode::kBootstrap;
    if (name == "guided") return FilterMode::kGuided;
    throw ConfigError("unknown filter mode '" + name + "'");
}

std::vector<int> stratified_resample(std::span<const double> weights, double u) {
    const int K = static_cast<int>(weights.size());
    if (K < 1) throw ConfigError("empty weight vector");
    double sum = 0;
    for (double w : weights) sum += w;
    if (std::abs(sum - 1.0) > 1e-6) throw UnnormalizedWeights(sum);
    if (u < 0.0 || u >= 1.0 / K) throw UOutOfRange(u);

    std::vector<int> out(static_cast<std::size_t>(K));
    int k = 0;
    double cum = weights[0];
    for (int i = 0; i < K; ++i) {
        const double b = u + static_cast<double>(i) / K;
        while (b >= cum && k < K - 1) {
            ++k;
            cum += weights[static_cast<std::size_t>(k)];
        }
        out[static_cast<std::size_t>(i)] = k;
    }
    return out;
}

PosteriorTrace run_filter(const CompositionalModel& model, const tasks::Episode& ep, int K,
                          FilterMode mode, RngStream stream, bool hard) {
    Tape<float> tape;
    FilterRun<float> fr(tape, model, ep, K, mode, stream, hard, /*record_mu=*/true);
    fr.run();
    return fr.trace();
}

void save_trace_csv(const PosteriorTrace& trace, const std::string& path) {
    std::string out = "t,feedback";
    for (int n = 0; n < trace.n_modules; ++n) out += ",p" + std::to_string(n);
    out += ",map,true\n";
    for (int t = 0; t < trace.T; ++t) {
        out += std::to_string(t) + "," + std::to_string(static_cast<int>(trace.feedback[static_cast<std::size_t>(t)]));
        for (int n = 0; n < trace.n_modules; ++n)
            out += "," + io::fmt(trace.row(t)[static_cast<std::size_t>(n)]);
        out += "," + std::to_string(trace.map_sequence[static_cast<std::size_t>(t)]);
        out += "," + std::to_string(trace.z_true.empty() ? -1 : trace.z_true[static_cast<std::size_t>(t)]);
        out += "\n";
    }
    io::write_text(path, out);
}

PosteriorTrace load_trace_csv(const std::string& path) {
    const std::string text = io::read_text(path);
    std::stringstream ss(text);
    std::string line;
    if (!std::getline(ss, line)) throw IoFailure("empty trace file " + path);
    int n_modules = 0;
    {
        std::stringstream hs(line);
        std::string col;
        while (std::getline(hs, col, ','))
            if (col.size() > 1 && col[0] == 'p') ++n_modules;
    }
    PosteriorTrace tr;
    tr.n_modules = n_modules;
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        std::stringstream ls(line);
        std::string tok;
        std::vector<std::string> cells;
        while (std::getline(ls, tok, ',')) cells.push_back(tok);
        if (static_cast<int>(cells.size()) != 4 + n_modules) throw IoFailure("bad trace row in " + path);
        tr.feedback.push_back(static_cast<std::uint8_t>(std::stoi(cells[1])));
        for (int n = 0; n < n_modules; ++n) tr.filtered.push_back(std::stof(cells[static_cast<std::size_t>(2 + n)]));
        tr.map_sequence.push_back(std::stoi(cells[static_cast<std::size_t>(2 + n_modules)]));
        tr.z_true.push_back(std::stoi(cells[static_cast<std::size_t>(3 + n_modules)]));
    }
    tr.T = static_cast<int>(tr.map_sequence.size());
    return tr;
}

}  // namespace comet::smc
