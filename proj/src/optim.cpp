#include "lmbis/optim.hpp"

#include <cmath>

namespace lmbis {

void adam_step(ParamStore& params, const ParamStore& grads, AdamState& state, float lr,
               AdamConfig cfg) {
    if (grads.size() != params.size() || state.size() != params.size())
        throw std::invalid_argument("adam_step: parameter/gradient/state misalignment");
    for (int i = 0; i < params.size(); ++i) {
        if (!grads.tensor(i).same_shape(params.tensor(i)))
            throw ShapeError("adam_step: gradient shape mismatch for " + params.name(i));
        for (float g : grads.tensor(i).data())
            if (!std::isfinite(g))
                throw NumericError("adam_step: non-finite gradient in " + params.name(i) +
                                   "; step aborted");
    }

    state.t_ += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t_));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t_));

    for (int i = 0; i < params.size(); ++i) {
        auto p = params.tensor(i).data();
        auto g = grads.tensor(i).data();
        auto m = state.m_[i].data();
        auto v = state.v_[i].data();
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = cfg.beta1 * m[j] + (1.0f - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0f - cfg.beta2) * g[j] * g[j];
            const float m_hat = static_cast<float>(m[j] / bc1);
            const float v_hat = static_cast<float>(v[j] / bc2);
            p[j] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
        }
    }
}

float lr_on_plateau(std::span<const float> history, int patience, float factor,
                    float current_lr) {
    if (history.empty())
        throw std::invalid_argument("lr_on_plateau: history must be nonempty");
    if (patience < 1) throw std::invalid_argument("lr_on_plateau: patience must be >= 1");

    float best = history[0];
    int bad = 0;
    bool fired_at_last = false;
    for (std::size_t i = 1; i < history.size(); ++i) {
        if (history[i] > best) {
            best = history[i];
            bad = 0;
        } else if (++bad >= patience) {
            bad = 0;
            fired_at_last = (i + 1 == history.size());
        }
    }
    return fired_at_last ? current_lr * factor : current_lr;
}

bool early_stop(std::span<const float> history, int patience) {
    if (history.empty()) return false;
    float best = history[0];
    int bad = 0;
    for (std::size_t i = 1; i < history.size(); ++i) {
        if (history[i] > best) {
            best = history[i];
            bad = 0;
        } else {
            ++bad;
        }
    }
    return bad >= patience;
}

}  // namespace lmbis
