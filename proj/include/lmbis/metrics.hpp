#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lmbis/image.hpp"
#include "lmbis/tensor.hpp"

namespace lmbis {

struct ConfusionCounts {
    std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;

    std::uint64_t total() const { return tp + tn + fp + fn; }

    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp;
        tn += o.tn;
        fp += o.fp;
        fn += o.fn;
        return *this;
    }
};

// Pixel tallies restricted to fov == 1.
ConfusionCounts confusion(const Mask& pred, const Mask& gt, const Mask& fov);

struct MetricsReport {
    double se = 0, sp = 0, acc = 0, f1 = 0, auc_eq7 = 0, jaccard = 0;
    std::optional<double> roc_auc;
    ConfusionCounts counts;
};

// Se, Sp, Acc, F1, the single-point AUC form 1 - (FPR + FNR)/2, and Jaccard.
// A zero denominator scores 1 when its error count is also zero (vacuous
// perfection), 0 otherwise. Throws on an empty evaluation region.
MetricsReport compute_metrics(const ConfusionCounts& counts);

// Trapezoidal area under TPR-vs-FPR over 256 evenly spaced thresholds, with
// endpoints (0,0) and (1,1). Returns nullopt when the ground truth is all-one
// or all-zero inside the FOV (undefined; callers report and skip).
std::optional<double> roc_auc(const Tensor& prob, const Mask& gt, const Mask& fov,
                              int channel = 1);

// Vessel-class probability >= threshold. threshold must be inside [0,1].
Mask binarize(const Tensor& prob, float threshold = 0.5f, int channel = 1);

// TP green, FP red, FN blue, TN black, outside FOV dark gray.
ImageU8 render_overlay(const Mask& pred, const Mask& gt, const Mask& fov);

// One metric per line, fixed key names.
void write_metrics_kv(const std::filesystem::path& path, const MetricsReport& report);

struct NamedReport {
    std::string label;
    MetricsReport report;
};

std::string metrics_table(const std::vector<NamedReport>& rows);

}  // namespace lmbis
