#include "gatelab/data.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "gatelab/rng.hpp"
#include "json.hpp"

namespace gatelab {

void TaskSpec::validate() const {
    if (shots < 1) throw std::invalid_argument("task: shots must be >= 1");
    if (n_base_classes < 2) throw std::invalid_argument("task: need >= 2 base classes");
    if (n_novel_classes < 1) throw std::invalid_argument("task: need >= 1 novel class");
    if (noise_std < 0.0) throw std::invalid_argument("task: noise_std must be >= 0");
    if (proto_scale <= 0.0) throw std::invalid_argument("task: proto_scale must be positive");
}

namespace {

std::vector<int> tokens_for_class(const TaskSpec& spec, std::size_t class_id) {
    std::vector<int> ids(spec.n_word_tokens);
    for (std::size_t i = 0; i < ids.size(); ++i)
        ids[i] = static_cast<int>(mix_seed(0xc1a55 + class_id, i) % spec.vocab_size);
    return ids;
}

Tensor noisy_sample(const Tensor& proto, double entry_noise, Rng& rng) {
    Tensor out = proto;
    for (auto& v : out.vec()) v += rng.normal(0.0, entry_noise);
    return out;
}

} // namespace

Dataset generate(const TaskSpec& spec, std::uint64_t seed) {
    spec.validate();
    Dataset ds;
    ds.spec = spec;
    ds.seed = seed;

    const std::size_t n_classes = spec.n_base_classes + spec.n_novel_classes;
    // per-entry scales chosen so token rows have norm ~ proto_scale and the
    // signal-to-noise ratio equals proto_scale / noise_std
    const double entry_proto = spec.proto_scale / std::sqrt(static_cast<double>(spec.patch_dim));
    const double entry_noise = spec.noise_std / std::sqrt(static_cast<double>(spec.patch_dim));

    // A class's prototype is its own embedded token sequence: the image
    // stand-in is literally a noisy rendering of the class name. The table
    // below replays the encoder's token-table draw (seed tag 0x33), so a
    // weight-tied two-tower backbone scores matching pairs high zero-shot and
    // prompt learning only has residual noise to clean up. Transfer to novel
    // classes is free for the same reason.
    if (spec.n_word_tokens != spec.n_patch_tokens)
        throw std::invalid_argument("task: embedded prototypes need n_word_tokens == n_patch_tokens");
    Rng table_rng(mix_seed(spec.embed_seed, 0x33));
    Tensor table({spec.vocab_size, spec.patch_dim});
    for (auto& v : table.vec()) v = table_rng.normal(0.0, entry_proto);
    std::vector<Tensor> protos;
    for (std::size_t c = 0; c < n_classes; ++c) {
        ds.class_tokens.push_back(tokens_for_class(spec, c));
        Tensor proto({spec.n_patch_tokens, spec.patch_dim});
        for (std::size_t i = 0; i < spec.n_patch_tokens; ++i) {
            const auto row = static_cast<std::size_t>(ds.class_tokens.back()[i]);
            for (std::size_t j = 0; j < spec.patch_dim; ++j) proto.at(i, j) = table.at(row, j);
        }
        protos.push_back(std::move(proto));
    }

    for (std::size_t c = 0; c < spec.n_base_classes; ++c) {
        Rng rng(mix_seed(seed, 0xa000 + c));
        for (std::size_t s = 0; s < spec.shots; ++s)
            ds.base_train.push_back(
                {noisy_sample(protos[c], entry_noise, rng), static_cast<int>(c), Split::BaseTrain});
        for (std::size_t s = 0; s < spec.eval_per_class; ++s)
            ds.base_test.push_back(
                {noisy_sample(protos[c], entry_noise, rng), static_cast<int>(c), Split::BaseTest});
    }
    for (std::size_t c = spec.n_base_classes; c < n_classes; ++c) {
        Rng rng(mix_seed(seed, 0xa000 + c));
        for (std::size_t s = 0; s < spec.eval_per_class; ++s)
            ds.novel_test.push_back(
                {noisy_sample(protos[c], entry_noise, rng), static_cast<int>(c), Split::NovelTest});
    }
    return ds;
}

double harmonic_mean(double base_acc, double novel_acc) {
    if (base_acc <= 0.0 || novel_acc <= 0.0)
        throw std::invalid_argument("harmonic_mean: accuracies must be positive");
    return 2.0 * base_acc * novel_acc / (base_acc + novel_acc);
}

namespace {

using nlohmann::json;

json sample_to_json(const Sample& s) {
    return json{{"label", s.label},
                {"split", s.split == Split::BaseTrain  ? "base-train"
                          : s.split == Split::BaseTest ? "base-test"
                                                       : "novel-test"},
                {"patches", s.patches.vec()}};
}

Sample sample_from_json(const json& j, const TaskSpec& spec) {
    Sample s;
    s.label = j.at("label").get<int>();
    const std::string split = j.at("split").get<std::string>();
    s.split = split == "base-train" ? Split::BaseTrain
              : split == "base-test" ? Split::BaseTest
                                     : Split::NovelTest;
    s.patches = Tensor({spec.n_patch_tokens, spec.patch_dim},
                       j.at("patches").get<std::vector<double>>());
    return s;
}

} // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_dataset: cannot open " + path);
    json header{{"spec",
                 {{"n_base_classes", ds.spec.n_base_classes},
                  {"n_novel_classes", ds.spec.n_novel_classes},
                  {"shots", ds.spec.shots},
                  {"patch_dim", ds.spec.patch_dim},
                  {"n_patch_tokens", ds.spec.n_patch_tokens},
                  {"n_word_tokens", ds.spec.n_word_tokens},
                  {"vocab_size", ds.spec.vocab_size},
                  {"eval_per_class", ds.spec.eval_per_class},
                  {"proto_scale", ds.spec.proto_scale},
                  {"noise_std", ds.spec.noise_std},
                  {"seed", ds.spec.seed}}},
                {"seed", ds.seed},
                {"class_tokens", ds.class_tokens}};
    out << header.dump() << "\n";
    for (auto* split : {&ds.base_train, &ds.base_test, &ds.novel_test})
        for (const auto& s : *split) out << sample_to_json(s).dump() << "\n";
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_dataset: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("load_dataset: empty file");
    json header = json::parse(line);
    Dataset ds;
    const json& sp = header.at("spec");
    ds.spec.n_base_classes = sp.at("n_base_classes").get<std::size_t>();
    ds.spec.n_novel_classes = sp.at("n_novel_classes").get<std::size_t>();
    ds.spec.shots = sp.at("shots").get<std::size_t>();
    ds.spec.patch_dim = sp.at("patch_dim").get<std::size_t>();
    ds.spec.n_patch_tokens = sp.at("n_patch_tokens").get<std::size_t>();
    ds.spec.n_word_tokens = sp.at("n_word_tokens").get<std::size_t>();
    ds.spec.vocab_size = sp.at("vocab_size").get<std::size_t>();
    ds.spec.eval_per_class = sp.at("eval_per_class").get<std::size_t>();
    ds.spec.proto_scale = sp.at("proto_scale").get<double>();
    ds.spec.noise_std = sp.at("noise_std").get<double>();
    ds.spec.seed = sp.at("seed").get<std::uint64_t>();
    ds.seed = header.at("seed").get<std::uint64_t>();
    ds.class_tokens = header.at("class_tokens").get<std::vector<std::vector<int>>>();
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, true);
        Sample s = sample_from_json(j, ds.spec);
        if (s.split == Split::BaseTrain) ds.base_train.push_back(std::move(s));
        else if (s.split == Split::BaseTest) ds.base_test.push_back(std::move(s));
        else ds.novel_test.push_back(std::move(s));
    }
    return ds;
}

} // namespace gatelab
