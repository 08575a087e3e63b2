#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gatelab/config.hpp"
#include "gatelab/diagnostics.hpp"
#include "gatelab/trainer.hpp"

namespace gatelab {

struct SeedSummary {
    std::uint64_t seed = 0;
    double base_acc = 0.0;
    double novel_acc = 0.0;
    double h_mean = 0.0;
    std::string trace_path;
    std::optional<CollapseVerdict> verdict; // absent for gateless variants
    EvalResult eval;
};

struct RunOutcome {
    std::vector<SeedSummary> seeds;
    ParamCounts counts;
    std::string config_hash;
    std::string result_path;
};

// Trains every seed, writes trace JSONL + verdict sidecars + TSV series +
// result.json + report.md under out_dir. jobs > 1 runs seeds concurrently.
RunOutcome run_experiment(const RunConfig& cfg, const std::string& out_dir,
                          std::size_t jobs = 1);

struct SweepRow {
    std::string label;
    std::string out_dir;
    double base_acc = 0.0;  // mean over seeds
    double novel_acc = 0.0;
    double h_mean = 0.0;
    std::string verdict;
};

std::vector<SweepRow> run_sweep(const std::map<std::string, std::string>& pairs,
                                const std::string& out_dir, std::size_t jobs = 1);

// Offline recomputation of all metrics from persisted traces. Returns false
// if any recomputed verdict disagrees with the sidecar written at run time.
bool diagnose_traces(const std::vector<std::string>& trace_paths, const std::string& out_dir);

// Regenerates report.md from a run directory's result.json.
void write_report(const std::string& result_dir);

} // namespace gatelab
