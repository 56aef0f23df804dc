#include "lmbis/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace lmbis {

namespace {

void check_mask_shapes(const Mask& a, const Mask& b, const char* where) {
    if (a.width != b.width || a.height != b.height)
        throw ShapeError(std::string(where) + ": mask dimensions differ");
}

void check_binary(const Mask& m, const char* where) {
    for (std::uint8_t v : m.v)
        if (v > 1) throw std::invalid_argument(std::string(where) + ": mask is not binary");
}

double vacuous_ratio(std::uint64_t numer, std::uint64_t denom, std::uint64_t errors) {
    if (denom == 0) return errors == 0 ? 1.0 : 0.0;
    return static_cast<double>(numer) / static_cast<double>(denom);
}

}  // namespace

ConfusionCounts confusion(const Mask& pred, const Mask& gt, const Mask& fov) {
    check_mask_shapes(pred, gt, "confusion");
    check_mask_shapes(pred, fov, "confusion");
    check_binary(pred, "confusion");
    check_binary(gt, "confusion");
    check_binary(fov, "confusion");

    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
        if (!fov.v[i]) continue;
        const bool p = pred.v[i] != 0;
        const bool g = gt.v[i] != 0;
        if (p && g) ++c.tp;
        else if (p && !g) ++c.fp;
        else if (!p && g) ++c.fn;
        else ++c.tn;
    }
    return c;
}

MetricsReport compute_metrics(const ConfusionCounts& c) {
    if (c.total() == 0)
        throw std::invalid_argument("compute_metrics: empty evaluation region");

    MetricsReport r;
    r.counts = c;
    r.se = vacuous_ratio(c.tp, c.tp + c.fn, c.fn);
    r.sp = vacuous_ratio(c.tn, c.tn + c.fp, c.fp);
    r.acc = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
    r.f1 = vacuous_ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, c.fp + c.fn);
    const double fpr = c.fp + c.tn == 0 ? 0.0
                                        : static_cast<double>(c.fp) /
                                              static_cast<double>(c.fp + c.tn);
    const double fnr = c.fn + c.tp == 0 ? 0.0
                                        : static_cast<double>(c.fn) /
                                              static_cast<double>(c.fn + c.tp);
    r.auc_eq7 = 1.0 - 0.5 * (fpr + fnr);
    r.jaccard = vacuous_ratio(c.tp, c.tp + c.fp + c.fn, c.fp + c.fn);
    return r;
}

std::optional<double> roc_auc(const Tensor& prob, const Mask& gt, const Mask& fov,
                              int channel) {
    if (prob.batch() != 1 || channel < 0 || channel >= prob.channels())
        throw std::invalid_argument("roc_auc: expects a single-sample probability map");
    if (prob.height() != gt.height || prob.width() != gt.width)
        throw ShapeError("roc_auc: probability map and mask dimensions differ");
    check_mask_shapes(gt, fov, "roc_auc");

    std::uint64_t pos = 0, neg = 0;
    for (int y = 0; y < gt.height; ++y)
        for (int x = 0; x < gt.width; ++x)
            if (fov.at(y, x)) (gt.at(y, x) ? ++pos : ++neg);
    if (pos == 0 || neg == 0) return std::nullopt;  // undefined; caller skips

    constexpr int kThresholds = 256;
    std::vector<std::pair<double, double>> points;  // (fpr, tpr)
    points.reserve(kThresholds + 2);
    points.emplace_back(0.0, 0.0);
    points.emplace_back(1.0, 1.0);
    for (int i = 0; i < kThresholds; ++i) {
        const double t = static_cast<double>(i) / (kThresholds - 1);
        std::uint64_t tp = 0, fp = 0;
        for (int y = 0; y < gt.height; ++y) {
            for (int x = 0; x < gt.width; ++x) {
                if (!fov.at(y, x)) continue;
                if (static_cast<double>(prob.at(0, channel, y, x)) >= t)
                    (gt.at(y, x) ? ++tp : ++fp);
            }
        }
        points.emplace_back(static_cast<double>(fp) / neg, static_cast<double>(tp) / pos);
    }
    std::sort(points.begin(), points.end());

    double area = 0.0;
    for (std::size_t i = 1; i < points.size(); ++i)
        area += (points[i].first - points[i - 1].first) *
                (points[i].second + points[i - 1].second) * 0.5;
    return area;
}

Mask binarize(const Tensor& prob, float threshold, int channel) {
    if (!(threshold >= 0.0f && threshold <= 1.0f))
        throw std::invalid_argument("binarize: threshold must lie in [0,1]");
    if (prob.batch() != 1 || channel < 0 || channel >= prob.channels())
        throw std::invalid_argument("binarize: expects a single-sample probability map");

    Mask m(prob.height(), prob.width());
    for (int y = 0; y < prob.height(); ++y)
        for (int x = 0; x < prob.width(); ++x)
            m.at(y, x) = prob.at(0, channel, y, x) >= threshold ? 1 : 0;
    return m;
}

ImageU8 render_overlay(const Mask& pred, const Mask& gt, const Mask& fov) {
    check_mask_shapes(pred, gt, "render_overlay");
    check_mask_shapes(pred, fov, "render_overlay");
    check_binary(pred, "render_overlay");
    check_binary(gt, "render_overlay");

    ImageU8 img;
    img.width = pred.width;
    img.height = pred.height;
    img.channels = 3;
    img.pixels.assign(static_cast<std::size_t>(pred.width) * pred.height * 3, 0);
    for (int y = 0; y < pred.height; ++y) {
        for (int x = 0; x < pred.width; ++x) {
            std::uint8_t r = 0, g = 0, b = 0;
            if (!fov.at(y, x)) {
                r = g = b = 64;
            } else if (pred.at(y, x) && gt.at(y, x)) {
                g = 255;  // true positive
            } else if (pred.at(y, x)) {
                r = 255;  // false positive
            } else if (gt.at(y, x)) {
                b = 255;  // false negative
            }
            img.at(y, x, 0) = r;
            img.at(y, x, 1) = g;
            img.at(y, x, 2) = b;
        }
    }
    return img;
}

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace

void write_metrics_kv(const std::filesystem::path& path, const MetricsReport& r) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write metrics file: " + path.string());
    out << "se " << fmt(r.se) << "\n";
    out << "sp " << fmt(r.sp) << "\n";
    out << "acc " << fmt(r.acc) << "\n";
    out << "f1 " << fmt(r.f1) << "\n";
    out << "auc_eq7 " << fmt(r.auc_eq7) << "\n";
    out << "jaccard " << fmt(r.jaccard) << "\n";
    out << "roc_auc " << (r.roc_auc ? fmt(*r.roc_auc) : "nan") << "\n";
    out << "tp " << r.counts.tp << "\n";
    out << "tn " << r.counts.tn << "\n";
    out << "fp " << r.counts.fp << "\n";
    out << "fn " << r.counts.fn << "\n";
}

std::string metrics_table(const std::vector<NamedReport>& rows) {
    std::ostringstream out;
    char line[256];
    std::snprintf(line, sizeof(line), "%-16s %8s %8s %8s %8s %8s %8s %8s\n", "image", "se",
                  "sp", "acc", "f1", "auc_eq7", "jaccard", "roc_auc");
    out << line;
    for (const auto& row : rows) {
        const auto& r = row.report;
        std::snprintf(line, sizeof(line), "%-16s %8.4f %8.4f %8.4f %8.4f %8.4f %8.4f %8s\n",
                      row.label.c_str(), r.se, r.sp, r.acc, r.f1, r.auc_eq7, r.jaccard,
                      r.roc_auc ? fmt(*r.roc_auc).c_str() : "n/a");
        out << line;
    }
    return out.str();
}

}  // namespace lmbis
