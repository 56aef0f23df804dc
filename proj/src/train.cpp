#include "lmbis/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace lmbis {

namespace {

Tensor stack(std::span<const TrainSample> samples, std::span<const int> ids,
             const Tensor TrainSample::* field) {
    const Tensor& first = samples[ids[0]].*field;
    Tensor out(static_cast<int>(ids.size()), first.channels(), first.height(), first.width());
    const std::size_t per = first.size();
    for (std::size_t b = 0; b < ids.size(); ++b) {
        const Tensor& t = samples[ids[b]].*field;
        if (t.shape().c != first.shape().c || t.shape().h != first.shape().h ||
            t.shape().w != first.shape().w)
            throw ShapeError("train: samples in a batch must share shapes");
        std::copy_n(t.data().begin(), per, out.data().begin() + b * per);
    }
    return out;
}

}  // namespace

float validation_dice(Model& model, std::span<const TrainSample> samples) {
    std::uint64_t tp = 0, fp = 0, fn = 0;
    for (const auto& s : samples) {
        const Tensor prob = forward(model, s.image, model.config.pass_count, BNMode::infer);
        for (int y = 0; y < prob.height(); ++y) {
            for (int x = 0; x < prob.width(); ++x) {
                if (s.fov.at(0, 0, y, x) == 0.0f) continue;
                const bool pred = prob.at(0, kVesselChannel, y, x) >= 0.5f;
                const bool truth = s.gt_onehot.at(0, kVesselChannel, y, x) != 0.0f;
                if (pred && truth) ++tp;
                else if (pred) ++fp;
                else if (truth) ++fn;
            }
        }
    }
    const std::uint64_t denom = 2 * tp + fp + fn;
    return denom == 0 ? 1.0f : static_cast<float>(2.0 * tp / static_cast<double>(denom));
}

TrainResult train(Model& model, std::span<const TrainSample> train_set,
                  std::span<const TrainSample> val_set, const TrainConfig& config,
                  AdamState* optimizer_out) {
    config.validate();
    if (train_set.empty() || val_set.empty())
        throw std::invalid_argument("train: datasets must be nonempty");

    AdamState opt = AdamState::for_params(model.params);
    PlateauScheduler sched(config.learning_rate, config.plateau_patience, config.lr_factor);
    std::mt19937 shuffle_rng(config.seed);

    std::vector<int> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    TrainResult result;
    std::vector<float> dice_history;

    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        const float lr = sched.lr();

        double loss_sum = 0.0;
        int batches = 0;
        for (std::size_t at = 0; at < order.size(); at += config.batch_size) {
            const std::size_t take = std::min<std::size_t>(config.batch_size, order.size() - at);
            std::span<const int> ids(order.data() + at, take);

            const Tensor images = stack(train_set, ids, &TrainSample::image);
            const Tensor gts = stack(train_set, ids, &TrainSample::gt_onehot);
            const Tensor fovs = stack(train_set, ids, &TrainSample::fov);

            GraphTape tape;
            const Tensor prob =
                forward(model, images, model.config.pass_count, BNMode::train, &tape);
            auto dice = soft_dice_loss(prob, gts, fovs, config.smoothing_eps);
            if (!std::isfinite(dice.loss))
                throw NumericError("train: non-finite loss at epoch " +
                                   std::to_string(epoch + 1));
            const ParamStore grads = backward(model, tape, dice.d_prob);
            adam_step(model, grads, opt, lr);

            loss_sum += dice.loss;
            ++batches;
        }

        EpochStats stats;
        stats.train_loss = static_cast<float>(loss_sum / batches);
        stats.val_dice = validation_dice(model, val_set);
        stats.lr = lr;
        result.history.push_back(stats);
        dice_history.push_back(stats.val_dice);

        sched.step(stats.val_dice);
        if (early_stop(dice_history, config.early_stop_patience)) {
            result.early_stopped = true;
            break;
        }
    }

    if (optimizer_out) *optimizer_out = std::move(opt);
    return result;
}

}  // namespace lmbis
