#include "gatelab/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace gatelab {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) out.push_back(trim(cur));
    return out;
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return d;
    } catch (...) {
        throw std::invalid_argument("config: key '" + key + "': '" + v + "' is not a number");
    }
}

std::size_t to_size(const std::string& key, const std::string& v) {
    const double d = to_double(key, v);
    if (d < 0 || d != static_cast<double>(static_cast<std::size_t>(d)))
        throw std::invalid_argument("config: key '" + key + "': '" + v +
                                    "' is not a non-negative integer");
    return static_cast<std::size_t>(d);
}

int to_int(const std::string& key, const std::string& v) {
    const double d = to_double(key, v);
    if (d != static_cast<double>(static_cast<int>(d)))
        throw std::invalid_argument("config: key '" + key + "': '" + v + "' is not an integer");
    return static_cast<int>(d);
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("config: key '" + key + "': '" + v + "' is not a boolean");
}

ParamGroup parse_group(const std::string& key, const std::string& name) {
    if (name == "prompt") return ParamGroup::Prompt;
    if (name == "gate") return ParamGroup::Gate;
    if (name == "coupling") return ParamGroup::Coupling;
    if (name == "backbone") return ParamGroup::Backbone;
    if (name == "gate_net") return ParamGroup::GateNet;
    throw std::invalid_argument("config: key '" + key + "': unknown parameter group '" + name +
                                "'");
}

// "0:2:prompt+coupling;2:4:gate;4:-1:all"
std::vector<PhaseSpan> parse_phases(const std::string& key, const std::string& v) {
    std::vector<PhaseSpan> phases;
    for (const std::string& span_str : split(v, ';')) {
        if (span_str.empty()) continue;
        const auto parts = split(span_str, ':');
        if (parts.size() != 3)
            throw std::invalid_argument("config: key '" + key + "': bad phase span '" + span_str +
                                        "' (want begin:end:groups)");
        PhaseSpan span;
        span.epoch_begin = to_int(key, parts[0]);
        span.epoch_end = to_int(key, parts[1]);
        if (parts[2] == "all") {
            span.groups = {ParamGroup::Prompt, ParamGroup::Gate, ParamGroup::Coupling,
                           ParamGroup::GateNet};
        } else {
            for (const std::string& g : split(parts[2], '+'))
                span.groups.insert(parse_group(key, g));
        }
        phases.push_back(std::move(span));
    }
    if (phases.empty())
        throw std::invalid_argument("config: key '" + key + "': no phase spans given");
    return phases;
}

// Returns false if the key is not recognized.
bool apply_key(RunConfig& cfg, const std::string& key, const std::string& v) {
    auto& enc = cfg.encoder;
    auto& task = cfg.task;
    auto& var = cfg.variant;
    auto& obj = cfg.objective;
    auto& opt = cfg.optimizer;

    if (key == "encoder.depth") enc.depth = to_size(key, v);
    else if (key == "encoder.d_text") enc.d_text = to_size(key, v);
    else if (key == "encoder.d_vis") enc.d_vis = to_size(key, v);
    else if (key == "encoder.n_heads") enc.n_heads = to_size(key, v);
    else if (key == "encoder.n_text_prompts") enc.n_text_prompts = to_size(key, v);
    else if (key == "encoder.n_vis_prompts") enc.n_vis_prompts = to_size(key, v);
    else if (key == "encoder.n_word_tokens") enc.n_word_tokens = to_size(key, v);
    else if (key == "encoder.n_patch_tokens") enc.n_patch_tokens = to_size(key, v);
    else if (key == "encoder.proj_dim") enc.proj_dim = to_size(key, v);
    else if (key == "encoder.vocab_size") enc.vocab_size = to_size(key, v);
    else if (key == "encoder.tau_clip") enc.tau_clip = to_double(key, v);
    else if (key == "encoder.seed") enc.seed = to_size(key, v);
    else if (key == "task.n_base_classes") task.n_base_classes = to_size(key, v);
    else if (key == "task.n_novel_classes") task.n_novel_classes = to_size(key, v);
    else if (key == "task.shots") task.shots = to_size(key, v);
    else if (key == "task.patch_dim") task.patch_dim = to_size(key, v);
    else if (key == "task.n_patch_tokens") task.n_patch_tokens = to_size(key, v);
    else if (key == "task.n_word_tokens") task.n_word_tokens = to_size(key, v);
    else if (key == "task.vocab_size") task.vocab_size = to_size(key, v);
    else if (key == "task.eval_per_class") task.eval_per_class = to_size(key, v);
    else if (key == "task.proto_scale") task.proto_scale = to_double(key, v);
    else if (key == "task.noise_std") task.noise_std = to_double(key, v);
    else if (key == "task.seed") task.seed = to_size(key, v);
    else if (key == "variant.kind") var.kind = parse_variant_kind(v);
    else if (key == "variant.strategy") var.strategy = parse_gating_strategy(v);
    else if (key == "variant.dropout_rate") var.dropout_rate = to_double(key, v);
    else if (key == "variant.extra_weight_decay") var.extra_weight_decay = to_double(key, v);
    else if (key == "variant.n_context") var.n_context = to_size(key, v);
    else if (key == "objective.lambda_cyc") obj.lambda_cyc = to_double(key, v);
    else if (key == "objective.lambda_sparse") obj.lambda_sparse = to_double(key, v);
    else if (key == "objective.lambda_smooth") obj.lambda_smooth = to_double(key, v);
    else if (key == "objective.lambda_ent") obj.lambda_ent = to_double(key, v);
    else if (key == "objective.label_smoothing") obj.label_smoothing = to_double(key, v);
    else if (key == "optimizer.base_lr") opt.base_lr = to_double(key, v);
    else if (key == "optimizer.gate_lr_multiplier") opt.gate_lr_multiplier = to_double(key, v);
    else if (key == "optimizer.clip_max_norm") opt.clip_max_norm = to_double(key, v);
    else if (key == "optimizer.kind") {
        if (v == "sgd") opt.kind = OptimizerKind::Sgd;
        else if (v == "adam") opt.kind = OptimizerKind::AdaptiveMoment;
        else
            throw std::invalid_argument("config: key '" + key + "': unknown optimizer '" + v +
                                        "'");
    } else if (key.rfind("optimizer.weight_decay.", 0) == 0) {
        opt.weight_decay[parse_group(key, key.substr(std::string("optimizer.weight_decay.")
                                                         .size()))] = to_double(key, v);
    } else if (key == "optimizer.equilibrium.enabled")
        opt.equilibrium.enabled = to_bool(key, v);
    else if (key == "optimizer.equilibrium.epsilon") opt.equilibrium.epsilon = to_double(key, v);
    else if (key == "optimizer.equilibrium.max_scale")
        opt.equilibrium.max_scale = to_double(key, v);
    else if (key == "optimizer.temperature.enabled") opt.temperature.enabled = to_bool(key, v);
    else if (key == "optimizer.temperature.tau_start")
        opt.temperature.tau_start = to_double(key, v);
    else if (key == "optimizer.temperature.tau_end") opt.temperature.tau_end = to_double(key, v);
    else if (key == "optimizer.temperature.anneal_epochs")
        opt.temperature.anneal_epochs = to_int(key, v);
    else if (key == "optimizer.phased") opt.phased = to_bool(key, v);
    else if (key == "optimizer.phases") opt.phases = parse_phases(key, v);
    else if (key == "optimizer.epochs") opt.epochs = to_int(key, v);
    else if (key == "optimizer.batch_size") opt.batch_size = to_int(key, v);
    else if (key == "gate_init.kind") cfg.gate_init.kind = parse_gate_init(v);
    else if (key == "gate_init.uniform_lo") cfg.gate_init.uniform_lo = to_double(key, v);
    else if (key == "gate_init.uniform_hi") cfg.gate_init.uniform_hi = to_double(key, v);
    else if (key == "gate_init.bias") cfg.gate_init.bias = to_double(key, v);
    else if (key == "run.seeds") {
        cfg.seeds.clear();
        for (const std::string& s : split(v, ','))
            if (!s.empty()) cfg.seeds.push_back(to_size(key, s));
        if (cfg.seeds.empty())
            throw std::invalid_argument("config: key 'run.seeds': need at least one seed");
    } else if (key == "run.out_dir") cfg.out_dir = v;
    else if (key == "run.record_every") {
        cfg.record_every = to_size(key, v);
        if (cfg.record_every == 0)
            throw std::invalid_argument("config: key 'run.record_every' must be >= 1");
    } else return false;
    return true;
}

} // namespace

void RunConfig::validate() const {
    encoder.validate();
    task.validate();
    objective.validate();
    optimizer.validate();
    if (seeds.empty()) throw std::invalid_argument("config: need at least one seed");
    if (task.patch_dim != encoder.d_vis)
        throw std::invalid_argument("config: task.patch_dim must equal encoder.d_vis");
    if (task.n_patch_tokens != encoder.n_patch_tokens)
        throw std::invalid_argument(
            "config: task.n_patch_tokens must equal encoder.n_patch_tokens");
    if (task.n_word_tokens != encoder.n_word_tokens)
        throw std::invalid_argument("config: task.n_word_tokens must equal encoder.n_word_tokens");
    if (task.vocab_size > encoder.vocab_size)
        throw std::invalid_argument("config: task.vocab_size exceeds encoder vocabulary");
    if (variant.is_context_kind() && variant.n_context > encoder.n_text_prompts * encoder.depth)
        throw std::invalid_argument("config: variant.n_context too large for encoder");
    if (variant.dropout_rate < 0.0 || variant.dropout_rate >= 1.0)
        throw std::invalid_argument("config: variant.dropout_rate must be in [0, 1)");
    if (variant.extra_weight_decay < 0.0)
        throw std::invalid_argument("config: variant.extra_weight_decay must be >= 0");
}

std::map<std::string, std::string> parse_kv_text(const std::string& text,
                                                 const std::string& origin) {
    std::map<std::string, std::string> pairs;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument(origin + ":" + std::to_string(line_no) +
                                        ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw std::invalid_argument(origin + ":" + std::to_string(line_no) + ": empty key");
        if (!pairs.emplace(key, value).second)
            throw std::invalid_argument(origin + ":" + std::to_string(line_no) +
                                        ": duplicate key '" + key + "'");
    }
    return pairs;
}

std::map<std::string, std::string> parse_kv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_kv_text(buf.str(), path);
}

RunConfig config_from_pairs(const std::map<std::string, std::string>& pairs) {
    RunConfig cfg;
    for (const auto& [key, value] : pairs)
        if (!apply_key(cfg, key, value))
            throw std::invalid_argument("config: unknown key '" + key + "'");
    cfg.task.embed_seed = cfg.encoder.seed; // prototypes replay the token table
    cfg.raw = pairs;
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    return config_from_pairs(parse_kv_file(path));
}

std::string config_hash(const std::map<std::string, std::string>& pairs) {
    std::uint64_t h = 1469598103934665603ull;
    auto feed = [&h](const std::string& s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ull;
        }
    };
    for (const auto& [key, value] : pairs) { // std::map iterates sorted
        feed(key);
        feed("=");
        feed(value);
        feed("\n");
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::vector<SweepCell> expand_sweep(const std::map<std::string, std::string>& pairs) {
    std::map<std::string, std::string> base;
    std::vector<std::pair<std::string, std::vector<std::string>>> axes;
    for (const auto& [key, value] : pairs) {
        if (key.rfind("sweep.", 0) == 0) {
            const std::string target = key.substr(6);
            std::vector<std::string> values;
            for (const std::string& v : split(value, ','))
                if (!v.empty()) values.push_back(v);
            if (values.empty())
                throw std::invalid_argument("sweep: key '" + key + "' lists no values");
            axes.emplace_back(target, std::move(values));
        } else {
            base.emplace(key, value);
        }
    }
    if (axes.empty()) throw std::invalid_argument("sweep: no sweep.* overrides given");

    std::vector<SweepCell> cells{{std::string(), base}};
    for (const auto& [target, values] : axes) {
        std::vector<SweepCell> next;
        for (const auto& cell : cells)
            for (const auto& v : values) {
                SweepCell c = cell;
                c.pairs[target] = v;
                c.label += (c.label.empty() ? "" : ",") + target + "=" + v;
                next.push_back(std::move(c));
            }
        cells = std::move(next);
    }
    return cells;
}

} // namespace gatelab
