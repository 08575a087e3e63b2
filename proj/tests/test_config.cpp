#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "gatelab/config.hpp"
#include "gatelab/trace.hpp"

using namespace gatelab;

TEST_CASE("kv parser basics") {
    auto pairs = parse_kv_text("# comment\n"
                               "variant.kind = maple\n"
                               "\n"
                               "optimizer.base_lr = 0.01 # trailing comment\n");
    CHECK(pairs.at("variant.kind") == "maple");
    CHECK(pairs.at("optimizer.base_lr") == "0.01");
    CHECK(pairs.size() == 2);

    CHECK_THROWS_WITH_AS(parse_kv_text("a.b = 1\na.b = 2\n"), doctest::Contains("duplicate"),
                         std::invalid_argument);
    CHECK_THROWS_AS(parse_kv_text("just-a-token\n"), std::invalid_argument);
}

TEST_CASE("config building and unknown keys") {
    std::map<std::string, std::string> pairs{
        {"variant.kind", "adaptive-bimaple"},
        {"variant.strategy", "per-layer"},
        {"optimizer.base_lr", "0.01"},
        {"optimizer.kind", "adam"},
        {"optimizer.gate_lr_multiplier", "50"},
        {"objective.lambda_ent", "0.05"},
        {"run.seeds", "4,5"},
        {"run.record_every", "2"},
        {"task.noise_std", "0.7"},
    };
    RunConfig cfg = config_from_pairs(pairs);
    CHECK(cfg.variant.kind == VariantKind::AdaptiveBiMaple);
    CHECK(cfg.variant.strategy == GatingStrategy::PerLayer);
    CHECK(cfg.optimizer.base_lr == 0.01);
    CHECK(cfg.optimizer.kind == OptimizerKind::AdaptiveMoment);
    CHECK(cfg.optimizer.gate_lr_multiplier == 50.0);
    CHECK(cfg.objective.lambda_ent == 0.05);
    CHECK(cfg.seeds == std::vector<std::uint64_t>{4, 5});
    CHECK(cfg.record_every == 2);
    CHECK(cfg.task.noise_std == 0.7);

    pairs["no.such.key"] = "1";
    CHECK_THROWS_WITH_AS(config_from_pairs(pairs), doctest::Contains("no.such.key"),
                         std::invalid_argument);
}

TEST_CASE("cross-field validation") {
    // patch dim must match the encoder's visual width
    std::map<std::string, std::string> pairs{{"task.patch_dim", "32"}};
    CHECK_THROWS_AS(config_from_pairs(pairs), std::invalid_argument);

    std::map<std::string, std::string> bad_lr{{"optimizer.base_lr", "-1"}};
    CHECK_THROWS_AS(config_from_pairs(bad_lr), std::invalid_argument);

    std::map<std::string, std::string> bad_val{{"optimizer.base_lr", "not-a-number"}};
    CHECK_THROWS_AS(config_from_pairs(bad_val), std::invalid_argument);
}

TEST_CASE("config hash is stable and order-independent") {
    std::map<std::string, std::string> a{{"x.k", "1"}, {"y.k", "2"}};
    std::map<std::string, std::string> b{{"y.k", "2"}, {"x.k", "1"}};
    CHECK(config_hash(a) == config_hash(b));
    CHECK(config_hash(a).size() == 16);
    std::map<std::string, std::string> c{{"x.k", "1"}, {"y.k", "3"}};
    CHECK(config_hash(a) != config_hash(c));
}

TEST_CASE("sweep expansion") {
    std::map<std::string, std::string> pairs{
        {"variant.kind", "adaptive-bimaple"},
        {"sweep.optimizer.base_lr", "0.01,0.02"},
        {"sweep.variant.strategy", "per-token,per-layer"},
    };
    auto cells = expand_sweep(pairs);
    REQUIRE(cells.size() == 4);
    for (auto& cell : cells) {
        CHECK(cell.pairs.at("variant.kind") == "adaptive-bimaple");
        CHECK(cell.pairs.count("optimizer.base_lr") == 1);
        CHECK(cell.label.find("optimizer.base_lr=") != std::string::npos);
    }
    CHECK(cells[0].label != cells[1].label);

    std::map<std::string, std::string> no_sweep{{"variant.kind", "maple"}};
    CHECK_THROWS_AS(expand_sweep(no_sweep), std::invalid_argument);
}

TEST_CASE("phase list parsing") {
    std::map<std::string, std::string> pairs{
        {"optimizer.phased", "true"},
        {"optimizer.phases", "0:2:prompt+coupling;2:4:gate;4:-1:all"},
    };
    RunConfig cfg = config_from_pairs(pairs);
    REQUIRE(cfg.optimizer.phases.size() == 3);
    CHECK(cfg.optimizer.phases[0].epoch_begin == 0);
    CHECK(cfg.optimizer.phases[0].epoch_end == 2);
    CHECK(cfg.optimizer.phases[0].groups ==
          std::set<ParamGroup>{ParamGroup::Prompt, ParamGroup::Coupling});
    CHECK(cfg.optimizer.phases[2].epoch_end == -1);
    CHECK(cfg.optimizer.phases[2].groups.size() == 4);
}

TEST_CASE("trace round-trip and corrupt line reporting") {
    TrainingTrace tr;
    tr.meta.seed = 3;
    tr.meta.variant = "adaptive-bimaple";
    tr.meta.strategy = "per-token";
    tr.meta.config_hash = "deadbeef00000000";
    tr.meta.n_max = 8;
    for (std::size_t i = 0; i < 3; ++i) {
        StepRecord r;
        r.step = i;
        r.epoch = i;
        r.loss_cls = 1.5 - 0.1 * i;
        r.loss_total = r.loss_cls + 0.02;
        r.grad_norm_prompt = 0.5;
        r.grad_norm_gate = 0.004 + 1e-5 * i;
        r.gate_grad = {0.001, -0.002, 0.0005};
        r.gate_act = {0.73, 0.73};
        r.depth_act = {0.73};
        r.l_eff = {5.85};
        r.tau = 1.0;
        tr.steps.push_back(r);
    }
    const std::string path = "test_trace_roundtrip.jsonl";
    save_trace(tr, path);
    TrainingTrace back = load_trace(path);
    CHECK(back.meta.seed == 3);
    CHECK(back.meta.config_hash == "deadbeef00000000");
    REQUIRE(back.steps.size() == 3);
    CHECK(back.steps[1].loss_cls == tr.steps[1].loss_cls);
    CHECK(back.steps[2].gate_grad == tr.steps[2].gate_grad);
    CHECK(back.steps[0].l_eff == tr.steps[0].l_eff);

    // byte-identical on re-save
    save_trace(back, path + ".b");
    std::ifstream f1(path, std::ios::binary), f2(path + ".b", std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);

    // truncated line errors mention the line number
    std::ofstream out(path + ".c", std::ios::binary);
    out << s1.substr(0, s1.find('\n') + 1);
    out << "{\"step\": 0, truncated\n";
    out.close();
    CHECK_THROWS_WITH_AS(load_trace(path + ".c"), doctest::Contains("line 2"),
                         std::runtime_error);

    std::remove(path.c_str());
    std::remove((path + ".b").c_str());
    std::remove((path + ".c").c_str());
}
