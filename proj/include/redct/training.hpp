#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "redct/ct_sim.hpp"
#include "redct/red_model.hpp"
#include "redct/tensor.hpp"

namespace redct {

struct TrainConfig {
    std::filesystem::path manifest;
    std::size_t patch_size = 32;
    std::size_t patches_per_image = 16;
    std::size_t batch_size = 8;
    std::size_t iterations = 2000;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double lambda_p = 0.1;
    std::uint64_t seed = 1;
    std::size_t checkpoint_every = 500;
    // Iterations trained on MSE alone before the perceptual term switches on.
    std::size_t warmup_iterations = 0;
    // Optional extractor weight file; empty uses the seeded default.
    std::filesystem::path extractor_weights;
    RedConfig red;

    // Throws InvalidConfig.
    void validate() const;
};

// key=value lines, '#' comments. Keys mirror the field names; the model is
// configured with layers (or num_layers), channels, kernel_size, model_seed.
// model_seed defaults to seed. Relative paths resolve against `base_dir`.
// Unknown keys and malformed values throw InvalidConfig.
TrainConfig parse_train_config(const std::string& text, const std::filesystem::path& base_dir = {});
TrainConfig load_train_config(const std::filesystem::path& path);
std::string format_train_config(const TrainConfig& config);

struct PatchPair {
    Tensor noisy;  // [1, P, P]
    Tensor clean;
    std::size_t row = 0;
    std::size_t col = 0;
};

// `count` patches at seeded uniform positions, taken at the same place in
// both images. Throws PatchTooLarge if the patch does not fit.
std::vector<PatchPair> extract_patches(const ImagePair& pair, std::size_t patch_size, std::size_t count,
                                       std::uint64_t seed);

struct HistoryRecord {
    std::size_t iteration = 0;  // 1-based
    double total = 0.0;
    double mse = 0.0;
    double perceptual = 0.0;
    double lambda_p = 0.0;        // weight in effect this iteration
    std::uint64_t patch_hash = 0;  // hash of the (image, row, col) batch positions
};

struct CheckpointRecord {
    std::size_t iteration = 0;
    double wall_seconds = 0.0;
    std::filesystem::path path;
};

struct RunHistory {
    std::vector<HistoryRecord> records;
    std::vector<CheckpointRecord> checkpoints;
};

// TSV with header "iteration\ttotal\tmse\tperceptual\tlambda_p\tpatch_hash".
void write_history(const std::filesystem::path& path, const RunHistory& history);

struct TrainOptions {
    // Where checkpoints, history.tsv and timing.tsv go; empty writes nothing.
    std::filesystem::path out_dir;
    // Workers for per-sample gradients. Results do not depend on it.
    std::size_t threads = 1;
    std::function<void(const HistoryRecord&)> on_iteration;
};

struct TrainResult {
    RedModel model;
    RunHistory history;
};

std::vector<ImagePair> load_pairs(const std::filesystem::path& manifest);

// Adam on the joint loss over seeded patch batches. Throws DivergedError on a
// non-finite loss or gradient, after saving last_good.rdck when out_dir is set.
TrainResult train(const TrainConfig& config, const std::vector<ImagePair>& data, const TrainOptions& options = {});
// Loads config.manifest first.
TrainResult train(const TrainConfig& config, const TrainOptions& options = {});

// Worker count from RED_DENOISE_THREADS, else the processor count.
std::size_t default_thread_count();

}  // namespace redct
