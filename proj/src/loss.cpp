#include "lmbis/loss.hpp"

#include <cmath>

namespace lmbis {

template <typename T>
DiceLossT<T> soft_dice_loss(const TensorT<T>& prob, const TensorT<T>& gt_onehot,
                            const TensorT<T>& fov, T smoothing_eps) {
    require_same_shape(prob, gt_onehot, "soft_dice_loss");
    if (fov.shape() != TensorShape{prob.batch(), 1, prob.height(), prob.width()})
        throw ShapeError("soft_dice_loss: fov must be (batch,1,H,W), got " +
                         fov.shape().str());
    if (prob.channels() <= kVesselChannel)
        throw ShapeError("soft_dice_loss: probability map lacks a vessel channel");
    if (smoothing_eps < T(0))
        throw std::invalid_argument("soft_dice_loss: smoothing eps must be >= 0");

    double sum_pg = 0.0, sum_p = 0.0, sum_g = 0.0;
    std::size_t fov_pixels = 0;
    for (int n = 0; n < prob.batch(); ++n) {
        for (int y = 0; y < prob.height(); ++y) {
            for (int x = 0; x < prob.width(); ++x) {
                const T m = fov.at(n, 0, y, x);
                if (m == T(0)) continue;
                if (m != T(1))
                    throw std::invalid_argument("soft_dice_loss: fov is not binary");
                ++fov_pixels;
                const T p = prob.at(n, kVesselChannel, y, x);
                const T g = gt_onehot.at(n, kVesselChannel, y, x);
                if (g != T(0) && g != T(1))
                    throw std::invalid_argument("soft_dice_loss: ground truth is not binary");
                sum_pg += static_cast<double>(p) * g;
                sum_p += p;
                sum_g += g;
            }
        }
    }
    if (fov_pixels == 0)
        throw std::invalid_argument("soft_dice_loss: empty FOV");

    const double numer = 2.0 * sum_pg + smoothing_eps;
    const double denom = sum_p + sum_g + smoothing_eps;

    DiceLossT<T> r;
    r.loss = static_cast<T>(1.0 - numer / denom);
    r.d_prob = TensorT<T>(prob.shape());
    const double inv_d2 = 1.0 / (denom * denom);
    for (int n = 0; n < prob.batch(); ++n) {
        for (int y = 0; y < prob.height(); ++y) {
            for (int x = 0; x < prob.width(); ++x) {
                if (fov.at(n, 0, y, x) == T(0)) continue;
                const double g = gt_onehot.at(n, kVesselChannel, y, x);
                // d/dp [1 - N/D] with dN/dp = 2g and dD/dp = 1
                r.d_prob.at(n, kVesselChannel, y, x) =
                    static_cast<T>((numer - 2.0 * g * denom) * inv_d2);
            }
        }
    }
    if (!std::isfinite(r.loss))
        throw NumericError("soft_dice_loss: non-finite loss");
    return r;
}

template DiceLossT<float> soft_dice_loss<float>(const TensorT<float>&,
                                                const TensorT<float>&,
                                                const TensorT<float>&, float);
template DiceLossT<double> soft_dice_loss<double>(const TensorT<double>&,
                                                  const TensorT<double>&,
                                                  const TensorT<double>&, double);

}  // namespace lmbis
