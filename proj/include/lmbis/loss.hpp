#pragma once

#include "lmbis/tensor.hpp"

namespace lmbis {

// Class layout of the probability map: channel 0 background, channel 1 vessel.
inline constexpr int kVesselChannel = 1;

template <typename T>
struct DiceLossT {
    T loss;            // 1 - (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps)
    TensorT<T> d_prob; // gradient w.r.t. the full probability map
};

using DiceLoss = DiceLossT<float>;

// Soft dice on the vessel class, restricted to FOV pixels. gt_onehot must be
// strictly one-hot over the class channels; fov is (batch, 1, H, W) in {0,1}.
template <typename T>
DiceLossT<T> soft_dice_loss(const TensorT<T>& prob, const TensorT<T>& gt_onehot,
                            const TensorT<T>& fov, T smoothing_eps);

}  // namespace lmbis
