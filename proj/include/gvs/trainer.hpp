#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gvs/dataset.hpp"
#include "gvs/losses.hpp"
#include "gvs/networks.hpp"

namespace gvs {

struct TrainConfig {
    double lambda = 10.0;
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int batch_size = 8;
    int epochs = 20;
    bool use_difference_aware = true;
    WceMode wce_mode = WceMode::TwoClass;
    int steps_per_phase = 1;
    std::uint64_t seed = 0;
    GeneratorSpec generator;
    SegmentorSpec segmentor;

    void validate() const;
    Adam::Config adam() const { return Adam::Config{lr, beta1, beta2, adam_eps}; }
};

struct LossRow {
    std::int64_t step = 0;
    int epoch = 0;
    double l_seg = 0.0;  // L_s1 or L_wce, from the A step
    double l_s2 = 0.0;
    double l_r = 0.0;
    double l_g = 0.0;
};

struct TrainState {
    ParamSet generator;
    ParamSet segmentor;
    Adam opt_g;
    Adam opt_s;
    int epoch = 0;                  // completed epochs
    std::int64_t global_step = 0;   // completed A/B step pairs
    std::vector<LossRow> history;   // append-only
    Rng rng{0};                     // batch shuffling stream
    double last_l_seg = 0.0;
    double last_l_s2 = 0.0;
    double last_l_r = 0.0;
    double last_l_g = 0.0;
};

TrainState init_train_state(const TrainConfig& cfg);

// Step A: generator fixed, segmentor updated one optimizer step on the
// (difference-aware) segmentation loss against y_t. Raises NonFiniteLossError
// on a non-finite loss.
void step_A(const std::vector<const Sample*>& batch, TrainState& state, const TrainConfig& cfg);

// Step B: segmentor fixed, generator updated one optimizer step on
// L_s2 + lambda * L_R.
void step_B(const std::vector<const Sample*>& batch, TrainState& state, const TrainConfig& cfg);

// Full alternating run: per batch, `steps_per_phase` A steps then as many B
// steps. When run_dir is set, writes checkpoints/epoch_{e}.ckpt, losses.csv
// and config.resolved.json there. Pass a state to resume; training continues
// from state.epoch to cfg.epochs.
TrainState train_gvs(const std::vector<Sample>& data, const TrainConfig& cfg,
                     const std::optional<std::filesystem::path>& run_dir = std::nullopt,
                     std::optional<TrainState> resume_from = std::nullopt);

void write_loss_csv(const std::vector<LossRow>& history, const std::filesystem::path& path);

// --- plain supervised segmentor training ------------------------------------
// Shared by the A-Dice evaluation harness and the downstream segmentation
// protocol.

struct SegTrainConfig {
    SegmentorSpec spec;
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int batch_size = 8;
    int epochs = 20;
    std::uint64_t seed = 0;

    void validate() const;
    Adam::Config adam() const { return Adam::Config{lr, beta1, beta2, adam_eps}; }
};

// Trains a fresh segmentor on (images, masks) with plain cross-entropy;
// on_epoch runs after each full epoch (dice curve recording, etc.).
ParamSet train_segmentor(const std::vector<const ImageGrid*>& images, const std::vector<const LesionMask*>& masks,
                         const SegTrainConfig& cfg,
                         const std::function<void(int, ParamSet&)>& on_epoch = {});

}  // namespace gvs
