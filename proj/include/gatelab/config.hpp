#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gatelab/data.hpp"
#include "gatelab/encoder.hpp"
#include "gatelab/gating.hpp"
#include "gatelab/objective.hpp"
#include "gatelab/optimizer.hpp"

namespace gatelab {

struct RunConfig {
    EncoderConfig encoder;
    TaskSpec task;
    VariantSpec variant;
    ObjectiveConfig objective;
    OptimizerConfig optimizer;
    GateInitConfig gate_init;
    std::vector<std::uint64_t> seeds{1, 2, 3};
    std::string out_dir = "out";
    std::size_t record_every = 1;

    // normalized key=value pairs the config was built from; hashed into
    // artifacts so diagnose can flag mismatched traces
    std::map<std::string, std::string> raw;

    void validate() const;
};

// Flat dotted key = value format; '#' starts a comment; blank lines ignored.
// Duplicate keys are errors.
std::map<std::string, std::string> parse_kv_text(const std::string& text,
                                                 const std::string& origin = "<string>");
std::map<std::string, std::string> parse_kv_file(const std::string& path);

// Builds a RunConfig from pairs; any key outside the documented set is a
// hard error naming the key.
RunConfig config_from_pairs(const std::map<std::string, std::string>& pairs);
RunConfig load_run_config(const std::string& path);

// FNV-1a 64-bit over the sorted normalized pairs, hex-encoded.
std::string config_hash(const std::map<std::string, std::string>& pairs);

struct SweepCell {
    std::string label; // "key=value,key=value" of swept entries
    std::map<std::string, std::string> pairs;
};

// Keys prefixed `sweep.` hold comma-separated alternatives; the cells are
// their Cartesian product over the shared base keys. No sweep keys -> error.
std::vector<SweepCell> expand_sweep(const std::map<std::string, std::string>& pairs);

} // namespace gatelab
