#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gatelab/tensor.hpp"

namespace gatelab {

struct TaskSpec {
    std::size_t n_base_classes = 20;
    std::size_t n_novel_classes = 10;
    std::size_t shots = 16;
    std::size_t patch_dim = 64;       // must equal encoder d_vis
    std::size_t n_patch_tokens = 16;  // must equal encoder n_patch_tokens
    std::size_t n_word_tokens = 16;
    std::size_t vocab_size = 8;
    std::size_t eval_per_class = 32;
    double proto_scale = 1.0;
    double noise_std = 0.4;
    std::uint64_t seed = 1234;
    std::uint64_t embed_seed = 7; // must equal encoder seed (shared token table)

    void validate() const;
};

enum class Split { BaseTrain, BaseTest, NovelTest };

struct Sample {
    Tensor patches; // (n_patch_tokens, patch_dim), the image stand-in
    int label = 0;  // global class id; novel ids start at n_base_classes
    Split split = Split::BaseTrain;
};

struct Dataset {
    TaskSpec spec;
    std::uint64_t seed = 0;
    std::vector<Sample> base_train;
    std::vector<Sample> base_test;
    std::vector<Sample> novel_test;
    std::vector<std::vector<int>> class_tokens; // word-token ids, base then novel
};

// Pure function of (spec, seed). Per class: one prototype token matrix, then
// samples = prototype + Gaussian noise. Word-token sequences derive
// deterministically from the class id.
Dataset generate(const TaskSpec& spec, std::uint64_t seed);

// 2ab / (a+b), both accuracies in (0, 100].
double harmonic_mean(double base_acc, double novel_acc);

// JSONL dump/load for reproducibility audits.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

} // namespace gatelab
