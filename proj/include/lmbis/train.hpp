#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lmbis/loss.hpp"
#include "lmbis/model.hpp"
#include "lmbis/optim.hpp"

namespace lmbis {

struct TrainConfig {
    float learning_rate = 1e-3f;
    int max_epochs = 50;
    int plateau_patience = 7;
    float lr_factor = 0.25f;
    int early_stop_patience = 15;
    int batch_size = 2;
    std::uint32_t seed = 7;
    float smoothing_eps = 1.0f;  // dice smoothing
    float val_fraction = 0.2f;   // train-split carve-out used by the CLI

    void validate() const {
        if (!(learning_rate >= 0.0f))
            throw std::invalid_argument("train config: learning_rate must be >= 0");
        if (max_epochs < 1) throw std::invalid_argument("train config: max_epochs must be >= 1");
        if (plateau_patience < 1 || early_stop_patience < 1)
            throw std::invalid_argument("train config: patience must be >= 1");
        if (!(lr_factor > 0.0f && lr_factor < 1.0f))
            throw std::invalid_argument("train config: lr_factor must be in (0,1)");
        if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
        if (!(val_fraction > 0.0f && val_fraction < 1.0f))
            throw std::invalid_argument("train config: val_fraction must be in (0,1)");
    }
};

// A sample already converted to network tensors.
struct TrainSample {
    Tensor image;      // (1, C_in, H, W), values in [0,1]
    Tensor gt_onehot;  // (1, num_classes, H, W)
    Tensor fov;        // (1, 1, H, W), {0,1}
    std::string source_id;
};

struct EpochStats {
    float train_loss = 0.0f;
    float val_dice = 0.0f;  // micro-averaged F1 at threshold 0.5 inside FOV
    float lr = 0.0f;        // learning rate used during the epoch
};

struct TrainResult {
    std::vector<EpochStats> history;
    bool early_stopped = false;
};

// Minibatch Adam on dice loss with the plateau schedule and early stopping.
// Deterministic under config.seed: the shuffle stream is the only source of
// randomness. Throws NumericError if the loss goes non-finite.
TrainResult train(Model& model, std::span<const TrainSample> train_set,
                  std::span<const TrainSample> val_set, const TrainConfig& config,
                  AdamState* optimizer_out = nullptr);

// Micro-averaged F1 of the binarized (threshold 0.5) vessel probability over
// FOV pixels, inference mode.
float validation_dice(Model& model, std::span<const TrainSample> samples);

}  // namespace lmbis
