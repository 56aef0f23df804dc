#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "lmbis/checkpoint.hpp"
#include "lmbis/loss.hpp"
#include "lmbis/metrics.hpp"
#include "lmbis/model.hpp"

namespace py = pybind11;
using namespace lmbis;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using ByteArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Tensor tensor_from(const FloatArray& arr) {
    if (arr.ndim() != 4)
        throw std::invalid_argument("expected a 4-d float32 array (batch, channels, h, w)");
    Tensor t(static_cast<int>(arr.shape(0)), static_cast<int>(arr.shape(1)),
             static_cast<int>(arr.shape(2)), static_cast<int>(arr.shape(3)));
    std::memcpy(t.data().data(), arr.data(), t.size() * sizeof(float));
    return t;
}

py::array_t<float> array_from(const Tensor& t) {
    py::array_t<float> arr({t.batch(), t.channels(), t.height(), t.width()});
    std::memcpy(arr.mutable_data(), t.data().data(), t.size() * sizeof(float));
    return arr;
}

Mask mask_from(const ByteArray& arr) {
    if (arr.ndim() != 2) throw std::invalid_argument("expected a 2-d uint8 mask");
    Mask m(static_cast<int>(arr.shape(0)), static_cast<int>(arr.shape(1)));
    std::memcpy(m.v.data(), arr.data(), m.v.size());
    return m;
}

NetworkConfig config_from(int width1, int width2, int width3, int multipath_width,
                          int passes, bool multipath, unsigned seed) {
    NetworkConfig cfg;
    cfg.stage_widths = {width1, width2, width3};
    cfg.multipath_width = multipath_width;
    cfg.pass_count = passes;
    cfg.multipath = multipath;
    cfg.seed = seed;
    cfg.validate();
    return cfg;
}

class Network {
public:
    explicit Network(Model model) : model_(std::move(model)) {}

    py::array_t<float> run(const FloatArray& image, bool training) {
        const Tensor in = tensor_from(image);
        return array_from(forward(model_, in, model_.config.pass_count,
                                  training ? BNMode::train : BNMode::infer));
    }

    std::int64_t parameter_count() const { return count_parameters(model_); }
    int passes() const { return model_.config.pass_count; }

    void save(const std::string& path) const {
        Checkpoint cp;
        cp.model = model_;
        save_checkpoint(path, cp);
    }

    static Network load(const std::string& path) {
        return Network(load_checkpoint(path).model);
    }

private:
    Model model_;
};

py::dict metrics_dict(const MetricsReport& r) {
    py::dict d;
    d["se"] = r.se;
    d["sp"] = r.sp;
    d["acc"] = r.acc;
    d["f1"] = r.f1;
    d["auc_eq7"] = r.auc_eq7;
    d["jaccard"] = r.jaccard;
    if (r.roc_auc) d["roc_auc"] = *r.roc_auc;
    d["tp"] = r.counts.tp;
    d["tn"] = r.counts.tn;
    d["fp"] = r.counts.fp;
    d["fn"] = r.counts.fn;
    return d;
}

}  // namespace

PYBIND11_MODULE(_lmbis, m) {
    m.doc() = "Lightweight multipath bidirectional-skip vessel segmentation core";

    py::class_<Network>(m, "Network")
        .def(py::init([](int width1, int width2, int width3, int multipath_width,
                         int passes, bool multipath, unsigned seed) {
                 return Network(build_network(config_from(
                     width1, width2, width3, multipath_width, passes, multipath, seed)));
             }),
             py::arg("width1") = 14, py::arg("width2") = 28, py::arg("width3") = 56,
             py::arg("multipath_width") = 28, py::arg("passes") = 2,
             py::arg("multipath") = true, py::arg("seed") = 42)
        .def("forward", &Network::run, py::arg("image"), py::arg("training") = true,
             "Run the network on an NCHW float32 image; returns the probability map.")
        .def_property_readonly("parameter_count", &Network::parameter_count)
        .def_property_readonly("passes", &Network::passes)
        .def("save", &Network::save, py::arg("path"))
        .def_static("load", &Network::load, py::arg("path"));

    m.def(
        "count_parameters",
        [](int width1, int width2, int width3, int multipath_width, int passes,
           bool multipath) {
            return expected_parameter_count(
                config_from(width1, width2, width3, multipath_width, passes, multipath, 0));
        },
        py::arg("width1") = 14, py::arg("width2") = 28, py::arg("width3") = 56,
        py::arg("multipath_width") = 28, py::arg("passes") = 2,
        py::arg("multipath") = true);

    m.def(
        "softmax_channels",
        [](const FloatArray& x) { return array_from(softmax_channels(tensor_from(x))); },
        py::arg("logits"));

    m.def(
        "dice_loss",
        [](const FloatArray& prob, const FloatArray& gt, const FloatArray& fov,
           float eps) {
            const auto r =
                soft_dice_loss(tensor_from(prob), tensor_from(gt), tensor_from(fov), eps);
            return py::make_tuple(r.loss, array_from(r.d_prob));
        },
        py::arg("prob"), py::arg("gt_onehot"), py::arg("fov"), py::arg("eps") = 1.0f);

    m.def(
        "metrics",
        [](const ByteArray& pred, const ByteArray& gt, const ByteArray& fov) {
            return metrics_dict(
                compute_metrics(confusion(mask_from(pred), mask_from(gt), mask_from(fov))));
        },
        py::arg("pred"), py::arg("gt"), py::arg("fov"));

    m.def(
        "binarize",
        [](const FloatArray& prob, float threshold) {
            const Mask mask = binarize(tensor_from(prob), threshold);
            py::array_t<std::uint8_t> arr({mask.height, mask.width});
            std::memcpy(arr.mutable_data(), mask.v.data(), mask.v.size());
            return arr;
        },
        py::arg("prob"), py::arg("threshold") = 0.5f);
}
