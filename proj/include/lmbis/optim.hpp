#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lmbis/model.hpp"

namespace lmbis {

struct AdamConfig {
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

// First/second-moment buffers aligned with a parameter store.
class AdamState {
public:
    AdamState() = default;

    static AdamState for_params(const ParamStore& params) {
        AdamState s;
        s.m_.reserve(params.size());
        s.v_.reserve(params.size());
        for (int i = 0; i < params.size(); ++i) {
            s.m_.emplace_back(params.tensor(i).shape());
            s.v_.emplace_back(params.tensor(i).shape());
        }
        return s;
    }

    std::int64_t step_count() const { return t_; }
    int size() const { return static_cast<int>(m_.size()); }
    Tensor& moment1(int i) { return m_[i]; }
    Tensor& moment2(int i) { return v_[i]; }
    const Tensor& moment1(int i) const { return m_[i]; }
    const Tensor& moment2(int i) const { return v_[i]; }
    void set_step_count(std::int64_t t) { t_ = t; }

    friend void adam_step(ParamStore&, const ParamStore&, AdamState&, float, AdamConfig);

private:
    std::vector<Tensor> m_, v_;
    std::int64_t t_ = 0;
};

// One standard Adam update with bias correction. Aborts (throws NumericError)
// before touching any parameter if a gradient is non-finite.
void adam_step(ParamStore& params, const ParamStore& grads, AdamState& state, float lr,
               AdamConfig cfg = {});

inline void adam_step(Model& model, const ParamStore& grads, AdamState& state, float lr,
                      AdamConfig cfg = {}) {
    adam_step(model.params, grads, state, lr, cfg);
    ++model.revision;
}

// Plateau schedule on a higher-is-better validation metric: after `patience`
// consecutive epochs without strict improvement over the best seen value the
// learning rate is multiplied by `factor` and the stagnation counter resets.
class PlateauScheduler {
public:
    PlateauScheduler(float initial_lr, int patience, float factor)
        : lr_(initial_lr), patience_(patience), factor_(factor) {
        if (patience < 1) throw std::invalid_argument("plateau patience must be >= 1");
        if (!(factor > 0.0f && factor < 1.0f))
            throw std::invalid_argument("plateau factor must be in (0,1)");
    }

    float step(float metric) {
        if (!has_best_ || metric > best_) {
            best_ = metric;
            has_best_ = true;
            bad_epochs_ = 0;
        } else if (++bad_epochs_ >= patience_) {
            lr_ *= factor_;
            bad_epochs_ = 0;
        }
        return lr_;
    }

    float lr() const { return lr_; }

private:
    float lr_;
    int patience_;
    float factor_;
    float best_ = 0.0f;
    bool has_best_ = false;
    int bad_epochs_ = 0;
};

// Stateless view of the same rule: returns current_lr * factor exactly when
// the stagnation counter hits `patience` at the last epoch of the history.
float lr_on_plateau(std::span<const float> history, int patience, float factor,
                    float current_lr);

// True when the last `patience` epochs saw no strict improvement over the
// best value reached earlier.
bool early_stop(std::span<const float> history, int patience);

}  // namespace lmbis
