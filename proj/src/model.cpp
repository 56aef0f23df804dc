#include "lmbis/model.hpp"

#include <cmath>
#include <random>

namespace lmbis {

void NetworkConfig::validate() const {
    if (input_channels <= 0) throw std::invalid_argument("config: input_channels must be positive");
    if (num_classes < 2) throw std::invalid_argument("config: num_classes must be at least 2");
    for (int w : stage_widths)
        if (w <= 0) throw std::invalid_argument("config: stage widths must be positive");
    if (multipath_width <= 0) throw std::invalid_argument("config: multipath_width must be positive");
    if (pass_count != 1 && pass_count != 2)
        throw std::invalid_argument("config: pass_count must be 1 or 2");
    if (parameter_budget < 0)
        throw std::invalid_argument("config: parameter_budget must be >= 0");
}

namespace {

constexpr std::array<int, 3> kBranchKernels = {1, 3, 5};

// Registers parameters in a fixed emission order; the RNG is consumed in the
// same order, so a seed pins every weight.
class NetBuilder {
public:
    NetBuilder(Model& model, std::uint32_t seed) : model_(model), rng_(seed) {}

    void conv(const std::string& base, int cin, int cout, int k) {
        Tensor w(cout, cin, k, k);
        const float stddev = std::sqrt(2.0f / static_cast<float>(k * k * cin));
        std::normal_distribution<float> dist(0.0f, stddev);
        for (auto& v : w.data()) v = dist(rng_);
        model_.params.add(base + "/w", std::move(w));
        model_.params.add(base + "/b", Tensor(1, cout, 1, 1));
    }

    void conv_transpose(const std::string& base, int cin, int cout) {
        conv(base, cin, cout, 2);
    }

    void bn(const std::string& base, int c) {
        model_.params.add(base + "/gamma", Tensor::full({1, c, 1, 1}, 1.0f));
        model_.params.add(base + "/beta", Tensor(1, c, 1, 1));
        model_.bn_names.push_back(base);
        for (int p = 0; p < 2; ++p) {
            model_.bn_running[p].emplace_back();
            model_.bn_running[p].back().mean.assign(c, 0.0f);
            model_.bn_running[p].back().var.assign(c, 0.0f);
        }
    }

    void conv_bn(const std::string& base, int cin, int cout, int k) {
        conv(base + "/conv", cin, cout, k);
        bn(base + "/bn", cout);
    }

private:
    Model& model_;
    std::mt19937 rng_;
};

}  // namespace

Model build_network(const NetworkConfig& config) {
    config.validate();
    if (config.parameter_budget > 0) {
        const std::int64_t count = expected_parameter_count(config);
        if (count > config.parameter_budget)
            throw std::invalid_argument(
                "config: widths give " + std::to_string(count) +
                " parameters, over the requested budget of " +
                std::to_string(config.parameter_budget));
    }
    Model model;
    model.config = config;

    const auto [w1, w2, w3] = config.stage_widths;
    const int wm = config.multipath_width;
    NetBuilder b(model, config.seed);

    b.conv_bn("enc1", config.input_channels, w1, 3);
    b.conv_bn("enc2", w1, w2, 3);
    b.conv_bn("enc3", w2, w3, 3);

    if (config.multipath) {
        for (int stage = 1; stage <= 2; ++stage) {
            const int cin = stage == 1 ? w3 : wm;
            for (int k : kBranchKernels)
                b.conv_bn("mp/s" + std::to_string(stage) + "/k" + std::to_string(k), cin, wm, k);
        }
    } else {
        b.conv_bn("mp/single", w3, wm, 3);
    }

    b.conv_bn("neck/c1", wm, wm, 3);
    b.conv_bn("neck/c2", wm, wm, 3);

    b.conv("dec3/proj", w3, wm, 1);
    b.conv_bn("dec3", wm, w3, 3);

    b.conv_transpose("dec2/up", w3, w3);
    b.conv("dec2/proj", w2, w3, 1);
    b.conv_bn("dec2", w3, w2, 3);

    b.conv_transpose("dec1/up", w2, w2);
    b.conv("dec1/proj", w1, w2, 1);
    b.conv_bn("dec1", w2, w1, 3);

    b.conv("head", w1, config.num_classes, 1);

    if (config.pass_count == 2) {
        b.conv("rev1/proj", w1, config.input_channels, 1);
        b.conv("rev2/proj", w2, w1, 1);
        b.conv("rev3/proj", w3, w2, 1);
    }
    return model;
}

std::int64_t expected_parameter_count(const NetworkConfig& config) {
    config.validate();
    const auto conv = [](int cin, int cout, int k) -> std::int64_t {
        return static_cast<std::int64_t>(k) * k * cin * cout + cout;
    };
    const auto bn = [](int c) -> std::int64_t { return 2 * c; };

    const auto [w1, w2, w3] = config.stage_widths;
    const int wm = config.multipath_width;
    const int cin = config.input_channels;

    std::int64_t total = 0;
    total += conv(cin, w1, 3) + bn(w1);
    total += conv(w1, w2, 3) + bn(w2);
    total += conv(w2, w3, 3) + bn(w3);

    if (config.multipath) {
        for (int stage_in : {w3, wm})
            for (int k : kBranchKernels)
                total += conv(stage_in, wm, k) + bn(wm);
    } else {
        total += conv(w3, wm, 3) + bn(wm);
    }

    total += 2 * (conv(wm, wm, 3) + bn(wm));

    total += conv(w3, wm, 1) + conv(wm, w3, 3) + bn(w3);
    total += conv(w3, w3, 2) + conv(w2, w3, 1) + conv(w3, w2, 3) + bn(w2);
    total += conv(w2, w2, 2) + conv(w1, w2, 1) + conv(w2, w1, 3) + bn(w1);
    total += conv(w1, config.num_classes, 1);

    if (config.pass_count == 2)
        total += conv(w1, cin, 1) + conv(w2, w1, 1) + conv(w3, w2, 1);
    return total;
}

std::vector<LayerCount> per_layer_counts(const Model& model) {
    std::vector<LayerCount> rows;
    rows.reserve(model.params.size());
    for (int i = 0; i < model.params.size(); ++i)
        rows.push_back({model.params.name(i),
                        static_cast<std::int64_t>(model.params.tensor(i).size())});
    return rows;
}

// ---------------------------------------------------------------------------
// Forward tape construction.

namespace {

template <typename T>
class TapeBuilder {
public:
    TapeBuilder(ModelT<T>& model, GraphTapeT<T>& tape, BNMode mode, bool update_running)
        : model_(model), tape_(tape), mode_(mode), update_running_(update_running) {}

    int pass = 1;

    int input(TensorT<T> image) {
        tape_.input_slot = push(std::move(image));
        return tape_.input_slot;
    }

    int conv(const std::string& base, int in, ConvSpec spec) {
        auto [wid, bid] = param_pair(base);
        const auto& w = model_.params.tensor(wid);
        const auto& bias = model_.params.tensor(bid);
        const int out = push(conv2d<T>(slot(in), w, bias.data(), spec));
        record(OpKind::Conv, in, -1, out, wid, bid, spec);
        return out;
    }

    int conv_same(const std::string& base, int in) {
        const int k = model_.params.tensor(model_.params.find(base + "/w")).height();
        return conv(base, in, ConvSpec::same(k));
    }

    int conv_transpose(const std::string& base, int in) {
        auto [wid, bid] = param_pair(base);
        const int out = push(conv_transpose2d<T>(slot(in), model_.params.tensor(wid),
                                                 model_.params.tensor(bid).data()));
        record(OpKind::ConvT, in, -1, out, wid, bid, {});
        return out;
    }

    int relu_op(int in) {
        const int out = push(relu(slot(in)));
        record(OpKind::ReLU, in, -1, out, -1, -1, {});
        return out;
    }

    int bn_op(const std::string& base, int in) {
        const int gid = model_.params.find(base + "/gamma");
        const int bid = model_.params.find(base + "/beta");
        const int sid = model_.bn_index(base);
        if (gid < 0 || bid < 0 || sid < 0)
            throw std::logic_error("model wiring references missing BN " + base);

        BNBatchStatsT<T> stats;
        auto out = batchnorm2d<T>(slot(in), model_.params.tensor(gid).data(),
                                  model_.params.tensor(bid).data(),
                                  model_.bn_state(sid, pass), mode_, model_.bn_eps,
                                  model_.bn_momentum, &stats, update_running_);
        const int id = record(OpKind::BN, in, -1, push(std::move(out)), gid, bid, {});
        tape_.entries[id].bn_state = sid;
        tape_.entries[id].bn_train = (mode_ == BNMode::train);
        tape_.entries[id].bn_stats = std::move(stats);
        return tape_.entries[id].out;
    }

    int pool(int in) {
        auto r = maxpool2(slot(in));
        const int id = record(OpKind::MaxPool, in, -1, push(std::move(r.output)), -1, -1, {});
        tape_.entries[id].pool_indices = std::move(r.indices);
        return tape_.entries[id].out;
    }

    int add_op(int a, int bslot) {
        return record_out(OpKind::Add, a, bslot, push(add(slot(a), slot(bslot))));
    }

    int softmax_op(int in) {
        return record_out(OpKind::Softmax, in, -1, push(softmax_channels(slot(in))));
    }

    // conv -> ReLU -> BN, the unit every stage is made of.
    int conv_relu_bn(const std::string& base, int in) {
        return bn_op(base + "/bn", relu_op(conv_same(base + "/conv", in)));
    }

    const TensorT<T>& slot(int id) const { return tape_.slots[id]; }

private:
    int push(TensorT<T> t) {
        tape_.slots.push_back(std::move(t));
        return static_cast<int>(tape_.slots.size()) - 1;
    }

    std::pair<int, int> param_pair(const std::string& base) const {
        const int wid = model_.params.find(base + "/w");
        const int bid = model_.params.find(base + "/b");
        if (wid < 0 || bid < 0)
            throw std::logic_error("model wiring references missing conv " + base);
        return {wid, bid};
    }

    int record(OpKind kind, int in0, int in1, int out, int wid, int bid, ConvSpec spec) {
        TapeEntry<T> e;
        e.kind = kind;
        e.pass = pass;
        e.in0 = in0;
        e.in1 = in1;
        e.out = out;
        e.weight_id = wid;
        e.bias_id = bid;
        e.spec = spec;
        tape_.entries.push_back(std::move(e));
        return static_cast<int>(tape_.entries.size()) - 1;
    }

    int record_out(OpKind kind, int in0, int in1, int out) {
        record(kind, in0, in1, out, -1, -1, {});
        return out;
    }

    ModelT<T>& model_;
    GraphTapeT<T>& tape_;
    BNMode mode_;
    bool update_running_;
};

template <typename T>
struct PassOutputs {
    int d1 = -1, d2 = -1, d3 = -1;  // decoder feature slots, full/half/quarter res
    int logits = -1;
};

// One encoder->multipath->bottleneck->decoder sweep. prev holds the previous
// pass's decoder features for the reverse skips (slots < 0 on the first pass).
template <typename T>
PassOutputs<T> run_pass(TapeBuilder<T>& b, const NetworkConfig& cfg, int image_slot,
                        const PassOutputs<T>& prev, bool emit_logits) {
    int in1 = image_slot;
    if (prev.d1 >= 0) in1 = b.add_op(image_slot, b.conv_same("rev1/proj", prev.d1));
    const int e1 = b.conv_relu_bn("enc1", in1);

    int in2 = b.pool(e1);
    if (prev.d2 >= 0) in2 = b.add_op(in2, b.conv_same("rev2/proj", prev.d2));
    const int e2 = b.conv_relu_bn("enc2", in2);

    int in3 = b.pool(e2);
    if (prev.d3 >= 0) in3 = b.add_op(in3, b.conv_same("rev3/proj", prev.d3));
    const int e3 = b.conv_relu_bn("enc3", in3);  // stage 3 does not pool

    int m = e3;
    if (cfg.multipath) {
        for (int stage = 1; stage <= 2; ++stage) {
            const std::string prefix = "mp/s" + std::to_string(stage) + "/k";
            int sum = -1;
            for (int k : kBranchKernels) {
                const int branch = b.conv_relu_bn(prefix + std::to_string(k), m);
                sum = sum < 0 ? branch : b.add_op(sum, branch);
            }
            m = sum;
        }
    } else {
        m = b.conv_relu_bn("mp/single", m);
    }

    const int neck = b.conv_relu_bn("neck/c2", b.conv_relu_bn("neck/c1", m));

    PassOutputs<T> out;
    out.d3 = b.conv_relu_bn("dec3", b.add_op(neck, b.conv_same("dec3/proj", e3)));
    out.d2 = b.conv_relu_bn(
        "dec2", b.add_op(b.conv_transpose("dec2/up", out.d3), b.conv_same("dec2/proj", e2)));
    out.d1 = b.conv_relu_bn(
        "dec1", b.add_op(b.conv_transpose("dec1/up", out.d2), b.conv_same("dec1/proj", e1)));
    if (emit_logits) out.logits = b.conv_same("head", out.d1);
    return out;
}

}  // namespace

template <typename T>
TensorT<T> forward(ModelT<T>& model, const TensorT<T>& image, int pass_count,
                   BNMode mode, GraphTapeT<T>* tape, bool update_running) {
    const NetworkConfig& cfg = model.config;
    if (image.channels() != cfg.input_channels)
        throw ShapeError("forward: image has " + std::to_string(image.channels()) +
                         " channels, config expects " + std::to_string(cfg.input_channels));
    if (image.height() % 4 != 0 || image.width() % 4 != 0)
        throw ShapeError("forward: spatial dims must be divisible by 4, got " +
                         image.shape().str());
    if (pass_count != 1 && pass_count != 2)
        throw std::invalid_argument("forward: pass_count must be 1 or 2");
    if (pass_count == 2 && model.params.find("rev1/proj/w") < 0)
        throw std::logic_error("forward: model was built without reverse-skip projections");

    GraphTapeT<T> local;
    GraphTapeT<T>& t = tape ? *tape : local;
    t.clear();
    t.model_revision = model.revision;

    TapeBuilder<T> b(model, t, mode, update_running);
    const int image_slot = b.input(image);

    PassOutputs<T> prev;
    for (int pass = 1; pass <= pass_count; ++pass) {
        b.pass = pass;
        prev = run_pass(b, cfg, image_slot, prev, /*emit_logits=*/pass == pass_count);
    }
    t.logits_slot = prev.logits;
    t.output_slot = b.softmax_op(prev.logits);
    return t.slots[t.output_slot];
}

namespace {

template <typename T>
void accumulate(std::vector<TensorT<T>>& grads, int slot, TensorT<T>&& g) {
    if (grads[slot].empty()) {
        grads[slot] = std::move(g);
        return;
    }
    auto dst = grads[slot].data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
void add_into(TensorT<T>& dst, const TensorT<T>& src) {
    auto d = dst.data();
    auto s = src.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

template <typename T>
void add_into(TensorT<T>& dst, const std::vector<T>& src) {
    auto d = dst.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += src[i];
}

}  // namespace

template <typename T>
ParamStoreT<T> backward(const ModelT<T>& model, const GraphTapeT<T>& tape,
                        const TensorT<T>& d_prob, int pass_filter, TensorT<T>* d_image) {
    if (tape.entries.empty() || tape.output_slot < 0)
        throw std::logic_error("backward: missing activation cache");
    if (tape.model_revision != model.revision)
        throw std::logic_error("backward: stale activation cache (model was updated)");
    if (d_prob.shape() != tape.slots[tape.output_slot].shape())
        throw ShapeError("backward: upstream shape mismatch");

    ParamStoreT<T> grads;
    for (int i = 0; i < model.params.size(); ++i)
        grads.add(model.params.name(i), TensorT<T>(model.params.tensor(i).shape()));

    std::vector<TensorT<T>> slot_grads(tape.slots.size());
    slot_grads[tape.output_slot] = d_prob;

    for (auto it = tape.entries.rbegin(); it != tape.entries.rend(); ++it) {
        const auto& e = *it;
        TensorT<T> up = std::exchange(slot_grads[e.out], TensorT<T>());
        if (up.empty()) continue;  // no gradient reaches this op
        const bool take_params = pass_filter == 0 || e.pass == pass_filter;

        switch (e.kind) {
            case OpKind::Conv: {
                auto g = conv2d_backward<T>(tape.slots[e.in0],
                                            model.params.tensor(e.weight_id), e.spec, up);
                if (take_params) {
                    add_into(grads.tensor(e.weight_id), g.weights);
                    add_into(grads.tensor(e.bias_id), g.bias);
                }
                accumulate(slot_grads, e.in0, std::move(g.input));
                break;
            }
            case OpKind::ConvT: {
                auto g = conv_transpose2d_backward<T>(
                    tape.slots[e.in0], model.params.tensor(e.weight_id), up);
                if (take_params) {
                    add_into(grads.tensor(e.weight_id), g.weights);
                    add_into(grads.tensor(e.bias_id), g.bias);
                }
                accumulate(slot_grads, e.in0, std::move(g.input));
                break;
            }
            case OpKind::ReLU:
                accumulate(slot_grads, e.in0, relu_backward(tape.slots[e.in0], up));
                break;
            case OpKind::BN: {
                BNGradsT<T> g;
                if (e.bn_train) {
                    g = batchnorm2d_backward<T>(tape.slots[e.in0],
                                                model.params.tensor(e.weight_id).data(),
                                                e.bn_stats, model.bn_eps, up);
                } else {
                    g = batchnorm2d_backward_infer<T>(
                        tape.slots[e.in0], model.params.tensor(e.weight_id).data(),
                        model.bn_state(e.bn_state, e.pass), model.bn_eps, up);
                }
                if (take_params) {
                    add_into(grads.tensor(e.weight_id), g.gamma);
                    add_into(grads.tensor(e.bias_id), g.beta);
                }
                accumulate(slot_grads, e.in0, std::move(g.input));
                break;
            }
            case OpKind::MaxPool:
                accumulate(slot_grads, e.in0,
                           maxpool2_backward(e.pool_indices, tape.slots[e.in0].shape(), up));
                break;
            case OpKind::Softmax:
                accumulate(slot_grads, e.in0,
                           softmax_channels_backward(tape.slots[e.out], up));
                break;
            case OpKind::Add: {
                accumulate(slot_grads, e.in0, TensorT<T>(up));
                accumulate(slot_grads, e.in1, std::move(up));
                break;
            }
        }
    }
    if (d_image) {
        *d_image = slot_grads[tape.input_slot].empty()
                       ? TensorT<T>(tape.slots[tape.input_slot].shape())
                       : std::move(slot_grads[tape.input_slot]);
    }
    return grads;
}

// ---------------------------------------------------------------------------
// Standalone blocks.

template <typename T>
TensorT<T> conv_relu_bn(const TensorT<T>& input, ConvBNT<T>& unit) {
    return batchnorm2d(relu(conv2d(input, unit.conv)), unit.bn);
}

template <typename T>
TensorT<T> multipath_stage(const TensorT<T>& input, std::array<ConvBNT<T>, 3>& branches) {
    TensorT<T> sum;
    for (auto& branch : branches) {
        auto out = conv_relu_bn(input, branch);
        if (sum.empty()) {
            sum = std::move(out);
        } else {
            if (!sum.same_shape(out))
                throw ShapeError("multipath_stage: branch outputs disagree, " +
                                 sum.shape().str() + " vs " + out.shape().str());
            sum = add(sum, out);
        }
    }
    return sum;
}

template <typename T>
TensorT<T> multipath_block(const TensorT<T>& input, std::array<ConvBNT<T>, 3>& stage1,
                           std::array<ConvBNT<T>, 3>& stage2) {
    return multipath_stage(multipath_stage(input, stage1), stage2);
}

template <typename T>
EncoderOutT<T> encoder_block(const TensorT<T>& input, int stage_index, ConvBNT<T>& unit) {
    if (stage_index < 1 || stage_index > 3)
        throw std::invalid_argument("encoder_block: stage_index must be 1..3");
    EncoderOutT<T> out;
    out.features = conv_relu_bn(input, unit);
    out.downsampled = stage_index < 3 ? maxpool2(out.features).output : out.features;
    return out;
}

template <typename T>
TensorT<T> decoder_block(const TensorT<T>& input, const TensorT<T>& forward_skip,
                         ConvParamsT<T>* upsample, const ConvParamsT<T>& project,
                         ConvBNT<T>& unit) {
    TensorT<T> x = upsample ? conv_transpose2d<T>(input, upsample->weights,
                                                  std::span<const T>(upsample->bias))
                            : input;
    auto skip = conv2d(forward_skip, project);
    if (skip.height() != x.height() || skip.width() != x.width())
        throw ShapeError("decoder_block: skip " + skip.shape().str() +
                         " does not match upsampled input " + x.shape().str());
    return conv_relu_bn(add(x, skip), unit);
}

#define LMBIS_INSTANTIATE_MODEL(T)                                                        \
    template TensorT<T> forward<T>(ModelT<T>&, const TensorT<T>&, int, BNMode,            \
                                   GraphTapeT<T>*, bool);                                 \
    template ParamStoreT<T> backward<T>(const ModelT<T>&, const GraphTapeT<T>&,           \
                                        const TensorT<T>&, int, TensorT<T>*);             \
    template TensorT<T> conv_relu_bn<T>(const TensorT<T>&, ConvBNT<T>&);                  \
    template TensorT<T> multipath_stage<T>(const TensorT<T>&, std::array<ConvBNT<T>, 3>&); \
    template TensorT<T> multipath_block<T>(const TensorT<T>&, std::array<ConvBNT<T>, 3>&, \
                                           std::array<ConvBNT<T>, 3>&);                   \
    template EncoderOutT<T> encoder_block<T>(const TensorT<T>&, int, ConvBNT<T>&);        \
    template TensorT<T> decoder_block<T>(const TensorT<T>&, const TensorT<T>&,            \
                                         ConvParamsT<T>*, const ConvParamsT<T>&,          \
                                         ConvBNT<T>&);

LMBIS_INSTANTIATE_MODEL(float)
LMBIS_INSTANTIATE_MODEL(double)

#undef LMBIS_INSTANTIATE_MODEL

}  // namespace lmbis
