#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gatelab/runner.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitNumerical = 2;
constexpr int kExitInconsistent = 3;

std::string resolve_out(const std::string& flag_value, const std::string& fallback) {
    if (!flag_value.empty()) return flag_value;
    if (const char* env = std::getenv("GATELAB_OUT")) return env;
    return fallback;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"gatelab: prompt-gating experiments over a frozen toy two-tower encoder"};
    app.require_subcommand(1);

    std::string out_flag;
    long long seed_override = -1;
    std::size_t jobs = 1;
    long long record_every = -1;
    app.add_option("--out", out_flag, "output root (overrides GATELAB_OUT)");
    app.add_option("--seed-override", seed_override, "replace the config's seed list");
    app.add_option("--jobs", jobs, "parallel seeds / sweep cells")->check(CLI::PositiveNumber);
    app.add_option("--record-every", record_every, "trace recording stride")
        ->check(CLI::PositiveNumber);

    std::string run_config_path;
    CLI::App* run_cmd = app.add_subcommand("run", "train one configuration across its seeds");
    run_cmd->add_option("config", run_config_path, "run config file")->required();

    std::string sweep_path;
    CLI::App* sweep_cmd = app.add_subcommand("sweep", "Cartesian sweep over config overrides");
    sweep_cmd->add_option("sweep-file", sweep_path, "sweep config file")->required();

    std::vector<std::string> trace_paths;
    CLI::App* diag_cmd = app.add_subcommand("diagnose", "recompute metrics from trace files");
    diag_cmd->add_option("traces", trace_paths, "trace JSONL files")->required();

    std::string result_dir;
    CLI::App* report_cmd = app.add_subcommand("report", "regenerate report.md from result.json");
    report_cmd->add_option("result-dir", result_dir, "run output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run_cmd->parsed()) {
            auto pairs = gatelab::parse_kv_file(run_config_path);
            if (seed_override >= 0) pairs["run.seeds"] = std::to_string(seed_override);
            if (record_every > 0) pairs["run.record_every"] = std::to_string(record_every);
            gatelab::RunConfig cfg = gatelab::config_from_pairs(pairs);
            const std::string out = resolve_out(out_flag, cfg.out_dir);
            const auto outcome = gatelab::run_experiment(cfg, out, jobs);
            for (const auto& s : outcome.seeds)
                std::cout << "seed " << s.seed << ": base " << s.base_acc << " novel "
                          << s.novel_acc << " h-mean " << s.h_mean
                          << (s.verdict ? std::string(" verdict ") +
                                              gatelab::verdict_name(s.verdict->verdict)
                                        : std::string())
                          << "\n";
            std::cout << "artifacts: " << outcome.result_path << "\n";
        } else if (sweep_cmd->parsed()) {
            auto pairs = gatelab::parse_kv_file(sweep_path);
            if (seed_override >= 0) pairs["run.seeds"] = std::to_string(seed_override);
            if (record_every > 0) pairs["run.record_every"] = std::to_string(record_every);
            const std::string out = resolve_out(out_flag, "sweep_out");
            const auto rows = gatelab::run_sweep(pairs, out, jobs);
            for (const auto& r : rows)
                std::cout << r.label << ": h-mean " << r.h_mean << " verdict " << r.verdict
                          << "\n";
            std::cout << "table: " << out << "/sweep.tsv\n";
        } else if (diag_cmd->parsed()) {
            const std::string out = resolve_out(out_flag, "diagnose_out");
            if (!gatelab::diagnose_traces(trace_paths, out)) return kExitInconsistent;
            std::cout << "report: " << out << "/diagnostics.md\n";
        } else if (report_cmd->parsed()) {
            gatelab::write_report(result_dir);
            std::cout << "report: " << result_dir << "/report.md\n";
        }
    } catch (const gatelab::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    }
    return kExitOk;
}
