#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <set>

#include "doctest.h"
#include "gatelab/data.hpp"

using namespace gatelab;

namespace {

TaskSpec small_spec() {
    TaskSpec s;
    s.n_base_classes = 4;
    s.n_novel_classes = 2;
    s.shots = 3;
    s.patch_dim = 8;
    s.n_patch_tokens = 4;
    s.n_word_tokens = 4;
    s.vocab_size = 16;
    s.eval_per_class = 6;
    return s;
}

} // namespace

TEST_CASE("split sizes and label ranges") {
    Dataset ds = generate(small_spec(), 9);
    CHECK(ds.base_train.size() == 4 * 3);
    CHECK(ds.base_test.size() == 4 * 6);
    CHECK(ds.novel_test.size() == 2 * 6);
    CHECK(ds.class_tokens.size() == 6);
    for (auto& s : ds.base_train) {
        CHECK(s.label >= 0);
        CHECK(s.label < 4);
        CHECK(s.split == Split::BaseTrain);
        CHECK(s.patches.rows() == 4);
        CHECK(s.patches.cols() == 8);
    }
    for (auto& s : ds.novel_test) {
        CHECK(s.label >= 4);
        CHECK(s.label < 6);
    }
    for (auto& toks : ds.class_tokens) {
        CHECK(toks.size() == 4);
        for (int t : toks) {
            CHECK(t >= 0);
            CHECK(t < 16);
        }
    }

    // default protocol sizes
    TaskSpec def;
    Dataset full = generate(def, 1);
    CHECK(full.base_train.size() == 20 * 16);
    CHECK(full.base_test.size() == 20 * 32);
    CHECK(full.novel_test.size() == 10 * 32);
}

TEST_CASE("generation is a pure function of spec and seed") {
    TaskSpec spec = small_spec();
    Dataset a = generate(spec, 77);
    Dataset b = generate(spec, 77);
    Dataset c = generate(spec, 78);

    REQUIRE(a.base_train.size() == b.base_train.size());
    bool identical = true;
    for (std::size_t i = 0; i < a.base_train.size(); ++i)
        if (a.base_train[i].patches.vec() != b.base_train[i].patches.vec()) identical = false;
    CHECK(identical);
    CHECK(a.class_tokens == b.class_tokens);

    bool differs = false;
    for (std::size_t i = 0; i < a.base_train.size(); ++i)
        if (a.base_train[i].patches.vec() != c.base_train[i].patches.vec()) differs = true;
    CHECK(differs);
    // word tokens depend only on the class id, not the draw seed
    CHECK(a.class_tokens == c.class_tokens);
}

TEST_CASE("zero noise makes classes exactly separable") {
    TaskSpec spec = small_spec();
    spec.noise_std = 0.0;
    Dataset ds = generate(spec, 5);
    // all samples of one class coincide with its prototype
    for (std::size_t i = 1; i < ds.base_train.size(); ++i)
        if (ds.base_train[i].label == ds.base_train[0].label)
            CHECK(ds.base_train[i].patches.vec() == ds.base_train[0].patches.vec());
    // distinct classes get distinct prototypes
    std::set<std::vector<double>> protos;
    for (auto& s : ds.base_train) protos.insert(s.patches.vec());
    CHECK(protos.size() == spec.n_base_classes);
}

TEST_CASE("harmonic mean formula and reference values") {
    CHECK(harmonic_mean(83.87, 57.65) == doctest::Approx(68.33).epsilon(0.0002));
    CHECK(harmonic_mean(77.07, 70.43) == doctest::Approx(73.60).epsilon(0.0002));
    CHECK(harmonic_mean(50.0, 50.0) == doctest::Approx(50.0).epsilon(1e-12));
    // h(x, x) = x and symmetry
    CHECK(harmonic_mean(20.0, 80.0) == doctest::Approx(harmonic_mean(80.0, 20.0)).epsilon(1e-12));
    // always below the arithmetic mean for unequal inputs
    CHECK(harmonic_mean(20.0, 80.0) < 50.0);
    CHECK_THROWS_AS(harmonic_mean(0.0, 50.0), std::invalid_argument);
    CHECK_THROWS_AS(harmonic_mean(50.0, -1.0), std::invalid_argument);
}

TEST_CASE("spec validation") {
    TaskSpec bad = small_spec();
    bad.shots = 0;
    CHECK_THROWS_AS(generate(bad, 1), std::invalid_argument);
    bad = small_spec();
    bad.n_base_classes = 1;
    CHECK_THROWS_AS(generate(bad, 1), std::invalid_argument);
    bad = small_spec();
    bad.noise_std = -0.1;
    CHECK_THROWS_AS(generate(bad, 1), std::invalid_argument);
    bad = small_spec();
    bad.proto_scale = 0.0;
    CHECK_THROWS_AS(generate(bad, 1), std::invalid_argument);
}

TEST_CASE("dataset JSONL round-trip") {
    TaskSpec spec = small_spec();
    Dataset ds = generate(spec, 31);
    const std::string path = "test_dataset_roundtrip.jsonl";
    save_dataset(ds, path);
    Dataset back = load_dataset(path);
    std::remove(path.c_str());

    CHECK(back.seed == ds.seed);
    CHECK(back.spec.n_base_classes == spec.n_base_classes);
    CHECK(back.class_tokens == ds.class_tokens);
    REQUIRE(back.base_train.size() == ds.base_train.size());
    REQUIRE(back.novel_test.size() == ds.novel_test.size());
    for (std::size_t i = 0; i < ds.base_train.size(); ++i) {
        CHECK(back.base_train[i].label == ds.base_train[i].label);
        CHECK(back.base_train[i].patches.vec() == ds.base_train[i].patches.vec());
    }
    CHECK_THROWS_AS(load_dataset("no_such_file.jsonl"), std::runtime_error);
}
