#include "gatelab/trace.hpp"

#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace gatelab {

namespace {

using json = nlohmann::ordered_json;

json record_to_json(const StepRecord& r) {
    return json{{"step", r.step},
                {"epoch", r.epoch},
                {"loss",
                 {{"cls", r.loss_cls},
                  {"cyc", r.loss_cyc},
                  {"sparse", r.loss_sparse},
                  {"smooth", r.loss_smooth},
                  {"ent", r.loss_ent},
                  {"total", r.loss_total}}},
                {"grad_norm",
                 {{"prompt", r.grad_norm_prompt},
                  {"gate", r.grad_norm_gate},
                  {"coupling", r.grad_norm_coupling},
                  {"gate_net", r.grad_norm_gate_net}}},
                {"gate_grad", r.gate_grad},
                {"gate_act", r.gate_act},
                {"depth_act", r.depth_act},
                {"l_eff", r.l_eff},
                {"tau", r.tau}};
}

StepRecord record_from_json(const json& j) {
    StepRecord r;
    r.step = j.at("step").get<std::size_t>();
    r.epoch = j.at("epoch").get<std::size_t>();
    const json& l = j.at("loss");
    r.loss_cls = l.at("cls").get<double>();
    r.loss_cyc = l.at("cyc").get<double>();
    r.loss_sparse = l.at("sparse").get<double>();
    r.loss_smooth = l.at("smooth").get<double>();
    r.loss_ent = l.at("ent").get<double>();
    r.loss_total = l.at("total").get<double>();
    const json& g = j.at("grad_norm");
    r.grad_norm_prompt = g.at("prompt").get<double>();
    r.grad_norm_gate = g.at("gate").get<double>();
    r.grad_norm_coupling = g.at("coupling").get<double>();
    r.grad_norm_gate_net = g.at("gate_net").get<double>();
    r.gate_grad = j.at("gate_grad").get<std::vector<double>>();
    r.gate_act = j.at("gate_act").get<std::vector<double>>();
    r.depth_act = j.at("depth_act").get<std::vector<double>>();
    r.l_eff = j.at("l_eff").get<std::vector<double>>();
    r.tau = j.at("tau").get<double>();
    return r;
}

} // namespace

void save_trace(const TrainingTrace& trace, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_trace: cannot open " + path);
    json header{{"seed", trace.meta.seed},
                {"variant", trace.meta.variant},
                {"strategy", trace.meta.strategy},
                {"config_hash", trace.meta.config_hash},
                {"n_max", trace.meta.n_max},
                {"record_every", trace.meta.record_every}};
    out << header.dump() << "\n";
    for (const auto& r : trace.steps) out << record_to_json(r).dump() << "\n";
    if (!out) throw std::runtime_error("save_trace: write failed for " + path);
}

TrainingTrace load_trace(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_trace: cannot open " + path);
    std::string line;
    std::size_t line_no = 0;
    TrainingTrace trace;
    try {
        if (!std::getline(in, line)) throw std::runtime_error("empty trace file");
        ++line_no;
        json header = json::parse(line);
        trace.meta.seed = header.at("seed").get<std::uint64_t>();
        trace.meta.variant = header.at("variant").get<std::string>();
        trace.meta.strategy = header.at("strategy").get<std::string>();
        trace.meta.config_hash = header.at("config_hash").get<std::string>();
        trace.meta.n_max = header.at("n_max").get<std::size_t>();
        trace.meta.record_every = header.at("record_every").get<std::size_t>();
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            trace.steps.push_back(record_from_json(json::parse(line)));
        }
    } catch (const json::exception& e) {
        throw std::runtime_error("load_trace: " + path + " line " + std::to_string(line_no) +
                                 ": malformed record (" + e.what() + ")");
    }
    return trace;
}

} // namespace gatelab
