#include "gatelab/runner.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace gatelab {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

json verdict_to_json(const CollapseVerdict& v, const std::string& config_hash) {
    json cancel = json::object();
    for (const auto& [group, rate] : v.cancellation) cancel[group] = rate;
    const bool inf_gap = !std::isfinite(v.gap.mean);
    return json{{"config_hash", config_hash},
                {"gap_mean", inf_gap ? json("inf") : json(v.gap.mean)},
                {"gap_std", v.gap.stddev},
                {"gap_steps_included", v.gap.n_included},
                {"gap_steps_excluded", v.gap.n_excluded},
                {"cancellation", cancel},
                {"l_eff_flatness", v.l_eff_flatness},
                {"depth_drift", v.depth_drift},
                {"saturation_fraction", v.saturation_fraction},
                {"verdict", verdict_name(v.verdict)}};
}

void write_series(const TrainingTrace& trace, const std::string& dir, std::uint64_t seed) {
    const std::string tag = std::to_string(seed);
    {
        std::ofstream out(dir + "/series_norms_seed" + tag + ".tsv");
        out << "step\tprompt\tgate\tcoupling\tgate_net\n";
        for (const auto& r : trace.steps)
            out << r.step << "\t" << r.grad_norm_prompt << "\t" << r.grad_norm_gate << "\t"
                << r.grad_norm_coupling << "\t" << r.grad_norm_gate_net << "\n";
    }
    if (!trace.steps.empty() && !trace.steps.front().l_eff.empty()) {
        std::ofstream out(dir + "/series_leff_seed" + tag + ".tsv");
        out << "step";
        for (std::size_t d = 0; d < trace.steps.front().l_eff.size(); ++d)
            out << "\tlayer" << d;
        out << "\n";
        for (const auto& r : trace.steps) {
            out << r.step;
            for (double v : r.l_eff) out << "\t" << v;
            out << "\n";
        }
    }
    if (!trace.steps.empty() && !trace.steps.front().depth_act.empty()) {
        std::ofstream out(dir + "/series_depth_seed" + tag + ".tsv");
        out << "step";
        for (std::size_t d = 0; d < trace.steps.front().depth_act.size(); ++d)
            out << "\tw" << d;
        out << "\n";
        for (const auto& r : trace.steps) {
            out << r.step;
            for (double v : r.depth_act) out << "\t" << v;
            out << "\n";
        }
    }
}

json result_to_json(const RunConfig& cfg, const RunOutcome& outcome) {
    json seeds = json::array();
    for (const auto& s : outcome.seeds) {
        json entry{{"seed", s.seed},
                   {"base_acc", s.base_acc},
                   {"novel_acc", s.novel_acc},
                   {"h_mean", s.h_mean},
                   {"trace", fs::path(s.trace_path).filename().string()}};
        if (s.verdict) entry["verdict"] = verdict_to_json(*s.verdict, outcome.config_hash);
        if (!s.eval.has_l_eff_stats && s.eval.rep.alignment != 0.0)
            entry["representation"] = {{"alignment", s.eval.rep.alignment},
                                       {"silhouette", s.eval.rep.silhouette},
                                       {"separation", s.eval.rep.separation}};
        if (s.eval.has_l_eff_stats)
            entry["per_input_l_eff"] = {{"mean", s.eval.l_eff_mean}, {"std", s.eval.l_eff_std}};
        seeds.push_back(std::move(entry));
    }
    json groups = json::object();
    for (const auto& [g, n] : outcome.counts.per_group) groups[g] = n;
    return json{{"variant", to_string(cfg.variant.kind)},
                {"strategy", to_string(cfg.variant.strategy)},
                {"config_hash", outcome.config_hash},
                {"seeds", seeds},
                {"parameters",
                 {{"per_group", groups},
                  {"total", outcome.counts.total},
                  {"trainable", outcome.counts.trainable},
                  {"gate_overhead_ratio", outcome.counts.gate_overhead_ratio}}}};
}

void write_report_md(const json& result, const std::string& path) {
    std::ofstream out(path);
    out << "# Run report: " << result.at("variant").get<std::string>() << " ("
        << result.at("strategy").get<std::string>() << ")\n\n";
    out << "Config hash: `" << result.at("config_hash").get<std::string>() << "`\n\n";
    out << "| seed | base acc | novel acc | h-mean | verdict |\n";
    out << "|------|----------|-----------|--------|---------|\n";
    for (const auto& s : result.at("seeds")) {
        out << "| " << s.at("seed") << " | " << s.at("base_acc") << " | " << s.at("novel_acc")
            << " | " << s.at("h_mean") << " | "
            << (s.contains("verdict") ? s.at("verdict").at("verdict").get<std::string>()
                                      : std::string("n/a"))
            << " |\n";
    }
    out << "\nTrainable parameters: " << result.at("parameters").at("trainable") << " of "
        << result.at("parameters").at("total") << " (gate overhead ratio "
        << result.at("parameters").at("gate_overhead_ratio") << ")\n";
    for (const auto& s : result.at("seeds")) {
        if (!s.contains("verdict")) continue;
        const auto& v = s.at("verdict");
        out << "\n## Gate diagnostics, seed " << s.at("seed") << "\n\n"
            << "- magnitude gap mean: " << v.at("gap_mean") << " (std " << v.at("gap_std")
            << ", " << v.at("gap_steps_excluded") << " zero-gradient steps excluded)\n"
            << "- L_eff flatness: " << v.at("l_eff_flatness") << "\n"
            << "- depth drift: " << v.at("depth_drift") << "\n"
            << "- saturation fraction: " << v.at("saturation_fraction") << "\n"
            << "- cancellation rates: " << v.at("cancellation").dump() << "\n";
    }
    out << "\nPlot data: series_norms_seed*.tsv, series_leff_seed*.tsv, "
           "series_depth_seed*.tsv (tab-separated, one step per row).\n";
}

} // namespace

RunOutcome run_experiment(const RunConfig& cfg, const std::string& out_dir, std::size_t jobs) {
    cfg.validate();
    fs::create_directories(out_dir);

    RunOutcome outcome;
    outcome.config_hash = config_hash(cfg.raw);
    outcome.seeds.resize(cfg.seeds.size());

    std::mutex err_mutex;
    std::exception_ptr first_error;

    auto run_seed = [&](std::size_t idx) {
        try {
            const std::uint64_t seed = cfg.seeds[idx];
            SeedRun run = train_one_seed(cfg, seed);
            SeedSummary& s = outcome.seeds[idx];
            s.seed = seed;
            s.base_acc = run.eval.base_acc;
            s.novel_acc = run.eval.novel_acc;
            s.h_mean = run.eval.h_mean;
            s.eval = run.eval;
            s.trace_path = out_dir + "/trace_seed" + std::to_string(seed) + ".jsonl";
            save_trace(run.trace, s.trace_path);
            write_series(run.trace, out_dir, seed);
            if (run.trace.steps.size() >= 2 && !run.trace.steps.front().gate_grad.empty() &&
                run.trace.steps.back().epoch > run.trace.steps.front().epoch) {
                s.verdict = detect_collapse(run.trace, CollapseThresholds{});
                std::ofstream vout(s.trace_path + ".verdict.json");
                vout << verdict_to_json(*s.verdict, outcome.config_hash).dump(2) << "\n";
            }
            if (idx == 0) outcome.counts = run.counts;
        } catch (...) {
            std::lock_guard<std::mutex> lock(err_mutex);
            if (!first_error) first_error = std::current_exception();
        }
    };

    if (jobs <= 1) {
        for (std::size_t i = 0; i < cfg.seeds.size(); ++i) run_seed(i);
    } else {
        std::vector<std::thread> pool;
        std::size_t next = 0;
        std::mutex next_mutex;
        for (std::size_t w = 0; w < std::min(jobs, cfg.seeds.size()); ++w)
            pool.emplace_back([&]() {
                while (true) {
                    std::size_t idx;
                    {
                        std::lock_guard<std::mutex> lock(next_mutex);
                        if (next >= cfg.seeds.size()) return;
                        idx = next++;
                    }
                    run_seed(idx);
                }
            });
        for (auto& th : pool) th.join();
    }
    if (first_error) std::rethrow_exception(first_error);

    const json result = result_to_json(cfg, outcome);
    outcome.result_path = out_dir + "/result.json";
    std::ofstream rout(outcome.result_path);
    rout << result.dump(2) << "\n";
    write_report_md(result, out_dir + "/report.md");
    return outcome;
}

std::vector<SweepRow> run_sweep(const std::map<std::string, std::string>& pairs,
                                const std::string& out_dir, std::size_t jobs) {
    const std::vector<SweepCell> cells = expand_sweep(pairs);
    fs::create_directories(out_dir);
    std::vector<SweepRow> rows;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        const RunConfig cfg = config_from_pairs(cells[i].pairs);
        const std::string cell_dir = out_dir + "/cell" + std::to_string(i);
        const RunOutcome outcome = run_experiment(cfg, cell_dir, jobs);
        SweepRow row;
        row.label = cells[i].label;
        row.out_dir = cell_dir;
        std::string verdict = "n/a";
        for (const auto& s : outcome.seeds) {
            row.base_acc += s.base_acc;
            row.novel_acc += s.novel_acc;
            row.h_mean += s.h_mean;
            if (s.verdict) verdict = verdict_name(s.verdict->verdict);
        }
        const double n = static_cast<double>(outcome.seeds.size());
        row.base_acc /= n;
        row.novel_acc /= n;
        row.h_mean /= n;
        row.verdict = verdict;
        rows.push_back(std::move(row));
    }

    std::ofstream tsv(out_dir + "/sweep.tsv");
    tsv << "cell\tbase_acc\tnovel_acc\th_mean\tverdict\n";
    std::ofstream md(out_dir + "/sweep.md");
    md << "| cell | base acc | novel acc | h-mean | verdict |\n"
       << "|------|----------|-----------|--------|---------|\n";
    for (const auto& r : rows) {
        tsv << r.label << "\t" << r.base_acc << "\t" << r.novel_acc << "\t" << r.h_mean << "\t"
            << r.verdict << "\n";
        md << "| " << r.label << " | " << r.base_acc << " | " << r.novel_acc << " | "
           << r.h_mean << " | " << r.verdict << " |\n";
    }
    return rows;
}

bool diagnose_traces(const std::vector<std::string>& trace_paths, const std::string& out_dir) {
    fs::create_directories(out_dir);
    bool consistent = true;
    std::ofstream report(out_dir + "/diagnostics.md");
    report << "# Offline trace diagnostics\n";
    for (const std::string& path : trace_paths) {
        const TrainingTrace trace = load_trace(path);
        report << "\n## " << fs::path(path).filename().string() << "\n\n"
               << "- variant: " << trace.meta.variant << " (" << trace.meta.strategy << ")\n"
               << "- seed: " << trace.meta.seed << "\n"
               << "- steps: " << trace.steps.size() << "\n";
        if (trace.steps.empty() || trace.steps.front().gate_grad.empty()) {
            report << "- gate metrics: absent by design (no gate parameters)\n";
            continue;
        }
        const CollapseVerdict v = detect_collapse(trace, CollapseThresholds{});
        const json vj = verdict_to_json(v, trace.meta.config_hash);
        report << "- recomputed verdict: " << verdict_name(v.verdict) << "\n"
               << "- metrics: " << vj.dump() << "\n";

        const std::string sidecar = path + ".verdict.json";
        if (fs::exists(sidecar)) {
            std::ifstream in(sidecar);
            json stored = json::parse(in);
            if (stored.at("config_hash").get<std::string>() != trace.meta.config_hash)
                std::cerr << "warning: " << sidecar << ": config hash differs from trace header\n";
            if (stored.at("verdict").get<std::string>() != verdict_name(v.verdict)) {
                consistent = false;
                report << "- MISMATCH: stored verdict "
                       << stored.at("verdict").get<std::string>() << " vs recomputed "
                       << verdict_name(v.verdict) << "\n";
                std::cerr << "error: " << path << ": verdict mismatch (stored "
                          << stored.at("verdict").get<std::string>() << ", recomputed "
                          << verdict_name(v.verdict) << ")\n";
            }
        }
    }
    return consistent;
}

void write_report(const std::string& result_dir) {
    std::ifstream in(result_dir + "/result.json");
    if (!in) throw std::invalid_argument("report: no result.json in " + result_dir);
    const json result = json::parse(in);
    write_report_md(result, result_dir + "/report.md");
}

} // namespace gatelab
