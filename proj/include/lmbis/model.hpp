#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lmbis/kernels.hpp"
#include "lmbis/tensor.hpp"

namespace lmbis {

// Architecture description. Defaults are the frozen production widths: they
// put the trainable parameter count at 168,943.
struct NetworkConfig {
    int input_channels = 3;
    int num_classes = 2;
    std::array<int, 3> stage_widths = {14, 28, 56};
    int multipath_width = 28;
    int pass_count = 2;     // 2 enables the reverse-skip refinement pass
    bool multipath = true;  // false replaces the block with a single 3x3 stage
    std::uint32_t seed = 42;
    std::int64_t parameter_budget = 0;  // > 0 makes build_network enforce a cap

    void validate() const;

    static NetworkConfig tiny() {
        NetworkConfig c;
        c.stage_widths = {2, 4, 8};
        c.multipath_width = 4;
        return c;
    }
};

// Insertion-ordered map name -> tensor. Order is the serialization and
// optimizer-state order, so it must be deterministic.
template <typename T>
class ParamStoreT {
public:
    int add(std::string name, TensorT<T> tensor) {
        if (index_.count(name))
            throw std::invalid_argument("duplicate parameter name: " + name);
        const int id = static_cast<int>(tensors_.size());
        index_.emplace(name, id);
        names_.push_back(std::move(name));
        tensors_.push_back(std::move(tensor));
        return id;
    }

    int size() const { return static_cast<int>(tensors_.size()); }
    const std::string& name(int id) const { return names_[id]; }
    TensorT<T>& tensor(int id) { return tensors_[id]; }
    const TensorT<T>& tensor(int id) const { return tensors_[id]; }

    int find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? -1 : it->second;
    }

    TensorT<T>& operator[](const std::string& name) {
        const int id = find(name);
        if (id < 0) throw std::out_of_range("no parameter named " + name);
        return tensors_[id];
    }

    const TensorT<T>& operator[](const std::string& name) const {
        const int id = find(name);
        if (id < 0) throw std::out_of_range("no parameter named " + name);
        return tensors_[id];
    }

    std::size_t element_count() const {
        std::size_t n = 0;
        for (const auto& t : tensors_) n += t.size();
        return n;
    }

private:
    std::vector<std::string> names_;
    std::vector<TensorT<T>> tensors_;
    std::unordered_map<std::string, int> index_;
};

using ParamStore = ParamStoreT<float>;

template <typename T>
struct ModelT {
    NetworkConfig config;
    ParamStoreT<T> params;  // conv weights/biases and BN gamma/beta
    std::vector<std::string> bn_names;
    // Running statistics are tracked per pass: the two executions of a shared
    // BN layer see different batch distributions, and a blended average would
    // reproduce neither at inference time.
    std::array<std::vector<BNRunningT<T>>, 2> bn_running;
    T bn_eps = T(kBNDefaultEps);
    T bn_momentum = T(kBNDefaultMomentum);
    std::uint64_t revision = 0;  // bumped on any parameter mutation

    int bn_index(const std::string& name) const {
        for (std::size_t i = 0; i < bn_names.size(); ++i)
            if (bn_names[i] == name) return static_cast<int>(i);
        return -1;
    }

    BNRunningT<T>& bn_state(int index, int pass) { return bn_running[pass - 1][index]; }
    const BNRunningT<T>& bn_state(int index, int pass) const {
        return bn_running[pass - 1][index];
    }

    template <typename U>
    ModelT<U> cast() const {
        ModelT<U> out;
        out.config = config;
        for (int i = 0; i < params.size(); ++i)
            out.params.add(params.name(i), params.tensor(i).template cast<U>());
        out.bn_names = bn_names;
        for (int p = 0; p < 2; ++p) {
            out.bn_running[p].reserve(bn_running[p].size());
            for (const auto& r : bn_running[p]) {
                BNRunningT<U> ru;
                ru.initialized = r.initialized;
                ru.mean.assign(r.mean.begin(), r.mean.end());
                ru.var.assign(r.var.begin(), r.var.end());
                out.bn_running[p].push_back(std::move(ru));
            }
        }
        out.bn_eps = static_cast<U>(bn_eps);
        out.bn_momentum = static_cast<U>(bn_momentum);
        out.revision = revision;
        return out;
    }
};

using Model = ModelT<float>;

// Conv weights from a fan-in-scaled Gaussian (variance 2/fan_in), zero
// biases, BN gamma 1 / beta 0. Deterministic under config.seed.
Model build_network(const NetworkConfig& config);

template <typename T>
std::int64_t count_parameters(const ModelT<T>& model) {
    return static_cast<std::int64_t>(model.params.element_count());
}

// Closed-form count over the config; an independent route that must agree
// exactly with count_parameters on the built model.
std::int64_t expected_parameter_count(const NetworkConfig& config);

struct LayerCount {
    std::string name;
    std::int64_t count;
};
std::vector<LayerCount> per_layer_counts(const Model& model);

// ---------------------------------------------------------------------------
// Forward execution tape. Each forward records the kernel applications it
// performed; backward replays them in reverse. A tape is only valid for the
// model revision that produced it.

enum class OpKind : std::uint8_t { Conv, ConvT, ReLU, BN, MaxPool, Softmax, Add };

template <typename T>
struct TapeEntry {
    OpKind kind{};
    int pass = 1;
    int in0 = -1;
    int in1 = -1;  // second operand of Add
    int out = -1;
    int weight_id = -1;  // conv/convT weights, BN gamma
    int bias_id = -1;    // conv/convT bias, BN beta
    ConvSpec spec{};
    int bn_state = -1;
    bool bn_train = true;
    BNBatchStatsT<T> bn_stats;
    std::vector<std::uint32_t> pool_indices;
};

template <typename T>
struct GraphTapeT {
    std::vector<TensorT<T>> slots;
    std::vector<TapeEntry<T>> entries;
    int input_slot = -1;
    int logits_slot = -1;
    int output_slot = -1;
    std::uint64_t model_revision = 0;

    void clear() {
        slots.clear();
        entries.clear();
        input_slot = logits_slot = output_slot = -1;
    }
};

using GraphTape = GraphTapeT<float>;

// Runs the full graph: encoder stages, multipath block, bottleneck, decoder
// stages with forward skips, then (optionally) a second encoder/decoder pass
// whose stage inputs are augmented by 1x1-projected pass-1 decoder features.
// Output is the softmax probability map, (batch, num_classes, H, W).
//
// In train mode BN running statistics are updated unless update_running is
// false; infer mode requires initialized running statistics.
template <typename T>
TensorT<T> forward(ModelT<T>& model, const TensorT<T>& image, int pass_count,
                   BNMode mode, GraphTapeT<T>* tape = nullptr,
                   bool update_running = true);

template <typename T>
TensorT<T> forward(ModelT<T>& model, const TensorT<T>& image, BNMode mode) {
    return forward(model, image, model.config.pass_count, mode);
}

// Gradients for every trainable parameter, aligned with model.params order
// (zeros for parameters the tape never touched). pass_filter restricts which
// pass's parameter uses accumulate (0 = all); activation gradients always
// flow through the whole tape. d_image, when given, receives the gradient
// with respect to the input image.
template <typename T>
ParamStoreT<T> backward(const ModelT<T>& model, const GraphTapeT<T>& tape,
                        const TensorT<T>& d_prob, int pass_filter = 0,
                        TensorT<T>* d_image = nullptr);

// ---------------------------------------------------------------------------
// Standalone building blocks. These mirror the stages the full graph is
// assembled from and exist as directly testable units.

template <typename T>
struct ConvBNT {
    ConvParamsT<T> conv;
    BatchNormStateT<T> bn;
};

using ConvBN = ConvBNT<float>;

// The unit every stage is made of: BN(ReLU(conv(x))).
template <typename T>
TensorT<T> conv_relu_bn(const TensorT<T>& input, ConvBNT<T>& unit);

// Sum of the three parallel branches (1x1, 3x3, 5x5), each conv -> ReLU -> BN.
template <typename T>
TensorT<T> multipath_stage(const TensorT<T>& input, std::array<ConvBNT<T>, 3>& branches);

// Two cascaded multipath stages.
template <typename T>
TensorT<T> multipath_block(const TensorT<T>& input, std::array<ConvBNT<T>, 3>& stage1,
                           std::array<ConvBNT<T>, 3>& stage2);

template <typename T>
struct EncoderOutT {
    TensorT<T> features;
    TensorT<T> downsampled;  // equals features for the unpooled stage
};

// Stages 1 and 2 max-pool their features; stage 3 does not (the encoder has
// exactly two downsamplings).
template <typename T>
EncoderOutT<T> encoder_block(const TensorT<T>& input, int stage_index, ConvBNT<T>& unit);

// BN(ReLU(conv3x3(upsample(input) + project(skip)))). upsample may be null
// for the stage mirroring the unpooled encoder stage.
template <typename T>
TensorT<T> decoder_block(const TensorT<T>& input, const TensorT<T>& forward_skip,
                         ConvParamsT<T>* upsample, const ConvParamsT<T>& project,
                         ConvBNT<T>& unit);

}  // namespace lmbis
