#include <doctest.h>

#include <cmath>
#include <random>

#include "lmbis/model.hpp"
#include "oracles.hpp"

using namespace lmbis;

namespace {

ConvBN make_unit(std::mt19937& rng, int cin, int cout, int k) {
    ConvBN u;
    u.conv.weights = oracles::random_tensor<float>(rng, {cout, cin, k, k}, -0.5f, 0.5f);
    u.conv.bias.assign(cout, 0.0f);
    std::uniform_real_distribution<float> bias(-0.2f, 0.2f);
    for (auto& b : u.conv.bias) b = bias(rng);
    u.conv.spec = ConvSpec::same(k);
    u.bn.gamma.assign(cout, 1.0f);
    u.bn.beta.assign(cout, 0.0f);
    std::uniform_real_distribution<float> g(0.5f, 1.5f);
    for (auto& v : u.bn.gamma) v = g(rng);
    for (auto& v : u.bn.beta) v = bias(rng);
    return u;
}

std::array<ConvBN, 3> make_branches(std::mt19937& rng, int cin, int cout) {
    return {make_unit(rng, cin, cout, 1), make_unit(rng, cin, cout, 3),
            make_unit(rng, cin, cout, 5)};
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

void zero_reverse_projections(Model& model) {
    for (const char* name : {"rev1/proj/w", "rev1/proj/b", "rev2/proj/w", "rev2/proj/b",
                             "rev3/proj/w", "rev3/proj/b"}) {
        auto& t = model.params[name];
        std::fill(t.data().begin(), t.data().end(), 0.0f);
    }
}

}  // namespace

TEST_SUITE("multipath") {
    TEST_CASE("zero input with zero biases and betas gives zero output") {
        std::mt19937 rng(30);
        auto branches = make_branches(rng, 4, 6);
        for (auto& b : branches) {
            std::fill(b.conv.bias.begin(), b.conv.bias.end(), 0.0f);
            std::fill(b.bn.beta.begin(), b.bn.beta.end(), 0.0f);
        }
        const Tensor out = multipath_stage(Tensor(1, 4, 8, 8), branches);
        for (float v : out.data()) CHECK(std::abs(v) < 1e-4f);
    }

    TEST_CASE("stage equals the sum of independently computed branches") {
        std::mt19937 rng(31);
        const Tensor in = oracles::random_tensor<float>(rng, {1, 3, 8, 8}, -1, 1);
        auto branches = make_branches(rng, 3, 5);

        // each branch evaluated on its own via the naive conv oracle plus
        // explicit relu and normalization arithmetic
        Tensor expected(1, 5, 8, 8);
        for (auto& branch : branches) {
            const int k = branch.conv.weights.height();
            Tensor conv = oracles::naive_conv2d(in, branch.conv.weights, branch.conv.bias,
                                                1, (k - 1) / 2);
            for (auto& v : conv.data()) v = std::max(v, 0.0f);
            for (int c = 0; c < 5; ++c) {
                double sum = 0, sq = 0;
                for (int y = 0; y < 8; ++y)
                    for (int x = 0; x < 8; ++x) sum += conv.at(0, c, y, x);
                const double mu = sum / 64.0;
                for (int y = 0; y < 8; ++y)
                    for (int x = 0; x < 8; ++x) {
                        const double d = conv.at(0, c, y, x) - mu;
                        sq += d * d;
                    }
                const double inv = 1.0 / std::sqrt(sq / 64.0 + branch.bn.eps);
                for (int y = 0; y < 8; ++y)
                    for (int x = 0; x < 8; ++x)
                        expected.at(0, c, y, x) += static_cast<float>(
                            (conv.at(0, c, y, x) - mu) * inv * branch.bn.gamma[c] +
                            branch.bn.beta[c]);
            }
        }

        auto stage_branches = branches;  // fresh BN states
        const Tensor out = multipath_stage(in, stage_branches);
        REQUIRE(out.same_shape(expected));
        for (std::size_t i = 0; i < out.size(); ++i)
            CHECK(out[i] == doctest::Approx(expected[i]).epsilon(2e-4));
    }

    TEST_CASE("shape contract: 1x8x32x32 -> 1x16x32x32") {
        std::mt19937 rng(32);
        auto branches = make_branches(rng, 8, 16);
        const Tensor out = multipath_stage(Tensor::full({1, 8, 32, 32}, 0.3f), branches);
        CHECK(out.shape() == TensorShape{1, 16, 32, 32});
    }

    TEST_CASE("mismatched branch widths are rejected") {
        std::mt19937 rng(33);
        std::array<ConvBN, 3> branches = {make_unit(rng, 4, 6, 1), make_unit(rng, 4, 7, 3),
                                          make_unit(rng, 4, 6, 5)};
        CHECK_THROWS_AS(multipath_stage(Tensor(1, 4, 8, 8), branches), ShapeError);
    }

    TEST_CASE("block equals two cascaded stages") {
        std::mt19937 rng(34);
        const Tensor in = oracles::random_tensor<float>(rng, {1, 4, 8, 8}, -1, 1);
        auto s1 = make_branches(rng, 4, 6);
        auto s2 = make_branches(rng, 6, 6);

        auto s1_copy = s1;
        auto s2_copy = s2;
        const Tensor composed = multipath_stage(multipath_stage(in, s1_copy), s2_copy);
        const Tensor block = multipath_block(in, s1, s2);
        CHECK(bitwise_equal(composed, block));
        CHECK(block.height() == in.height());
        CHECK(block.width() == in.width());
    }
}

TEST_SUITE("encoder_decoder_blocks") {
    TEST_CASE("stages 1-2 pool, stage 3 does not") {
        std::mt19937 rng(35);
        auto unit = make_unit(rng, 3, 4, 3);
        const Tensor in = oracles::random_tensor<float>(rng, {1, 3, 16, 16}, 0, 1);

        auto u1 = unit;
        const auto s1 = encoder_block(in, 1, u1);
        CHECK(s1.features.shape() == TensorShape{1, 4, 16, 16});
        CHECK(s1.downsampled.shape() == TensorShape{1, 4, 8, 8});

        auto u3 = unit;
        const auto s3 = encoder_block(in, 3, u3);
        CHECK(s3.downsampled.shape() == TensorShape{1, 4, 16, 16});
        CHECK(bitwise_equal(s3.features, s3.downsampled));
    }

    TEST_CASE("features match the conv-relu-bn composition") {
        std::mt19937 rng(36);
        auto unit = make_unit(rng, 2, 3, 3);
        const Tensor in = oracles::random_tensor<float>(rng, {1, 2, 8, 8}, -1, 1);

        auto unit_copy = unit;
        const Tensor direct = conv_relu_bn(in, unit_copy);
        auto unit_copy2 = unit;
        const auto enc = encoder_block(in, 2, unit_copy2);
        CHECK(bitwise_equal(direct, enc.features));
    }

    TEST_CASE("odd spatial size at a pooling stage is an error") {
        std::mt19937 rng(37);
        auto unit = make_unit(rng, 2, 3, 3);
        Tensor in(1, 2, 6, 8);
        in.at(0, 0, 0, 0) = 1.0f;
        // height 6 pools fine; a 7-row input would not survive stage 1
        CHECK_THROWS_AS(encoder_block(Tensor(1, 2, 7, 7), 1, unit), ShapeError);
    }

    TEST_CASE("decoder fuses an upsampled input with a projected skip") {
        std::mt19937 rng(38);
        ConvParams up;
        up.weights = oracles::random_tensor<float>(rng, {5, 4, 2, 2}, -0.5f, 0.5f);
        up.bias.assign(5, 0.1f);
        ConvParams proj;
        proj.weights = oracles::random_tensor<float>(rng, {5, 3, 1, 1}, -0.5f, 0.5f);
        proj.bias.assign(5, 0.0f);
        proj.spec = ConvSpec::same(1);
        auto unit = make_unit(rng, 5, 6, 3);

        const Tensor in = oracles::random_tensor<float>(rng, {1, 4, 4, 4}, -1, 1);
        const Tensor skip = oracles::random_tensor<float>(rng, {1, 3, 8, 8}, -1, 1);
        auto unit_for_block = unit;
        const Tensor out = decoder_block(in, skip, &up, proj, unit_for_block);
        CHECK(out.shape() == TensorShape{1, 6, 8, 8});

        // composition oracle
        auto unit_copy = unit;
        const Tensor fused = add(conv_transpose2d(in, up.weights, up.bias),
                                 conv2d(skip, proj.weights, proj.bias, proj.spec));
        CHECK(bitwise_equal(out, conv_relu_bn(fused, unit_copy)));
    }

    TEST_CASE("zero skip projection reduces to the upsample-conv path") {
        std::mt19937 rng(39);
        ConvParams up;
        up.weights = oracles::random_tensor<float>(rng, {4, 4, 2, 2}, -0.5f, 0.5f);
        up.bias.assign(4, 0.0f);
        ConvParams proj;
        proj.weights = Tensor(4, 3, 1, 1);
        proj.bias.assign(4, 0.0f);
        proj.spec = ConvSpec::same(1);
        auto unit = make_unit(rng, 4, 4, 3);

        const Tensor in = oracles::random_tensor<float>(rng, {1, 4, 4, 4}, -1, 1);
        const Tensor skip = oracles::random_tensor<float>(rng, {1, 3, 8, 8}, -1, 1);
        auto unit_copy = unit;
        auto unit_for_block = unit;
        const Tensor with_zero_skip = decoder_block(in, skip, &up, proj, unit_for_block);
        const Tensor plain =
            conv_relu_bn(conv_transpose2d(in, up.weights, up.bias), unit_copy);
        CHECK(bitwise_equal(with_zero_skip, plain));
    }

    TEST_CASE("spatial mismatch between input and skip is rejected") {
        std::mt19937 rng(40);
        ConvParams proj;
        proj.weights = oracles::random_tensor<float>(rng, {4, 3, 1, 1}, -1, 1);
        proj.bias.assign(4, 0.0f);
        proj.spec = ConvSpec::same(1);
        auto unit = make_unit(rng, 4, 4, 3);
        const Tensor in(1, 4, 8, 8);
        const Tensor skip(1, 3, 6, 6);
        CHECK_THROWS_AS(decoder_block<float>(in, skip, nullptr, proj, unit), ShapeError);
    }
}

TEST_SUITE("network") {
    TEST_CASE("default parameter count sits in the published budget") {
        const NetworkConfig cfg;
        const Model model = build_network(cfg);
        const std::int64_t total = count_parameters(model);
        CHECK(total == expected_parameter_count(cfg));  // two routes agree exactly
        CHECK(total >= 166840);                         // 0.172M - 3%
        CHECK(total <= 177160);                         // 0.172M + 3%
    }

    TEST_CASE("ablation ladder is strictly ordered") {
        NetworkConfig full;  // multipath + bidirectional
        NetworkConfig no_bidir = full;
        no_bidir.pass_count = 1;
        NetworkConfig baseline = no_bidir;
        baseline.multipath = false;

        const auto c_full = count_parameters(build_network(full));
        const auto c_nb = count_parameters(build_network(no_bidir));
        const auto c_base = count_parameters(build_network(baseline));
        CHECK(c_base < c_nb);
        CHECK(c_nb < c_full);
    }

    TEST_CASE("analytic count for a single conv + bn") {
        // conv 3x3, in 2, out 4, bias, plus BN(4): 3*3*2*4 + 4 + 2*4 = 84
        Model model;
        model.params.add("conv/w", Tensor(4, 2, 3, 3));
        model.params.add("conv/b", Tensor(1, 4, 1, 1));
        model.params.add("bn/gamma", Tensor(1, 4, 1, 1));
        model.params.add("bn/beta", Tensor(1, 4, 1, 1));
        CHECK(count_parameters(model) == 84);
    }

    TEST_CASE("empty model counts zero") { CHECK(count_parameters(Model{}) == 0); }

    TEST_CASE("dual-route count agreement across configs") {
        for (int pass = 1; pass <= 2; ++pass) {
            for (bool mp : {false, true}) {
                NetworkConfig cfg = NetworkConfig::tiny();
                cfg.pass_count = pass;
                cfg.multipath = mp;
                CHECK(count_parameters(build_network(cfg)) ==
                      expected_parameter_count(cfg));
            }
        }
    }

    TEST_CASE("budget enforcement rejects oversized configurations") {
        NetworkConfig cfg;  // 168,943 parameters
        cfg.parameter_budget = 100'000;
        CHECK_THROWS_AS(build_network(cfg), std::invalid_argument);
        cfg.parameter_budget = 177'160;
        CHECK(count_parameters(build_network(cfg)) == 168943);
        cfg.parameter_budget = 0;  // unenforced
        CHECK_NOTHROW(build_network(cfg));
    }

    TEST_CASE("same seed builds identical parameters") {
        NetworkConfig cfg = NetworkConfig::tiny();
        cfg.seed = 77;
        const Model a = build_network(cfg);
        const Model b = build_network(cfg);
        REQUIRE(a.params.size() == b.params.size());
        for (int i = 0; i < a.params.size(); ++i)
            CHECK(bitwise_equal(a.params.tensor(i), b.params.tensor(i)));
    }

    TEST_CASE("gamma starts at 1 and beta at 0") {
        const Model model = build_network(NetworkConfig::tiny());
        for (int i = 0; i < model.params.size(); ++i) {
            const auto& name = model.params.name(i);
            if (name.ends_with("/gamma"))
                for (float v : model.params.tensor(i).data()) CHECK(v == 1.0f);
            if (name.ends_with("/beta"))
                for (float v : model.params.tensor(i).data()) CHECK(v == 0.0f);
        }
    }

    TEST_CASE("initializer variance tracks 2/fan_in on large layers") {
        const Model model = build_network(NetworkConfig{});  // default widths
        int checked = 0;
        for (int i = 0; i < model.params.size(); ++i) {
            const auto& name = model.params.name(i);
            const auto& t = model.params.tensor(i);
            if (!name.ends_with("/w") || t.size() < 512) continue;
            const int fan_in = t.channels() * t.height() * t.width();
            const double target = 2.0 / fan_in;
            double sum = 0, sq = 0;
            for (float v : t.data()) {
                sum += v;
                sq += static_cast<double>(v) * v;
            }
            const double n = static_cast<double>(t.size());
            const double var = sq / n - (sum / n) * (sum / n);
            CHECK(var > 0.8 * target);
            CHECK(var < 1.2 * target);
            ++checked;
        }
        CHECK(checked >= 5);
    }
}

TEST_SUITE("forward") {
    TEST_CASE("probability map has unit channel sums and preserved size") {
        Model model = build_network(NetworkConfig::tiny());
        std::mt19937 rng(41);
        const Tensor image = oracles::random_tensor<float>(rng, {1, 3, 64, 64}, 0, 1);
        const Tensor prob = forward(model, image, 2, BNMode::train);
        REQUIRE(prob.shape() == TensorShape{1, 2, 64, 64});
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x) {
                const float sum = prob.at(0, 0, y, x) + prob.at(0, 1, y, x);
                CHECK(std::abs(sum - 1.0f) < 1e-6f);
                CHECK(prob.at(0, 0, y, x) >= 0.0f);
                CHECK(prob.at(0, 1, y, x) <= 1.0f);
            }
    }

    TEST_CASE("exactly two downsamplings per pass") {
        Model model = build_network(NetworkConfig::tiny());
        std::mt19937 rng(42);
        const Tensor image = oracles::random_tensor<float>(rng, {1, 3, 16, 16}, 0, 1);
        GraphTape tape;
        forward(model, image, 2, BNMode::train, &tape);
        int pools_pass1 = 0, pools_pass2 = 0;
        int min_h = 16;
        for (const auto& e : tape.entries) {
            if (e.kind == OpKind::MaxPool) (e.pass == 1 ? pools_pass1 : pools_pass2) += 1;
            min_h = std::min(min_h, tape.slots[e.out].height());
        }
        CHECK(pools_pass1 == 2);
        CHECK(pools_pass2 == 2);
        CHECK(min_h == 4);  // deepest resolution is input/4
    }

    TEST_CASE("zeroed reverse projections collapse pass 2 onto pass 1") {
        NetworkConfig cfg = NetworkConfig::tiny();
        cfg.seed = 11;
        Model model = build_network(cfg);
        zero_reverse_projections(model);
        std::mt19937 rng(43);
        const Tensor image = oracles::random_tensor<float>(rng, {1, 3, 16, 16}, 0, 1);

        const Tensor two_pass = forward<float>(model, image, 2, BNMode::train, nullptr, false);
        const Tensor one_pass = forward<float>(model, image, 1, BNMode::train, nullptr, false);
        CHECK(bitwise_equal(two_pass, one_pass));

        // and in inference mode once running statistics exist
        forward(model, image, 2, BNMode::train);
        const Tensor infer2 = forward(model, image, 2, BNMode::infer);
        const Tensor infer1 = forward(model, image, 1, BNMode::infer);
        CHECK(bitwise_equal(infer2, infer1));
    }

    TEST_CASE("deterministic across repeated runs") {
        NetworkConfig cfg = NetworkConfig::tiny();
        cfg.seed = 5;
        std::mt19937 rng(44);
        const Tensor image = oracles::random_tensor<float>(rng, {1, 3, 16, 16}, 0, 1);

        Model a = build_network(cfg);
        Model b = build_network(cfg);
        CHECK(bitwise_equal(forward(a, image, 2, BNMode::train),
                            forward(b, image, 2, BNMode::train)));
    }

    TEST_CASE("input contract violations") {
        Model model = build_network(NetworkConfig::tiny());
        CHECK_THROWS_AS(forward(model, Tensor(1, 3, 18, 16), 2, BNMode::train), ShapeError);
        CHECK_THROWS_AS(forward(model, Tensor(1, 4, 16, 16), 2, BNMode::train), ShapeError);

        NetworkConfig one_pass = NetworkConfig::tiny();
        one_pass.pass_count = 1;
        Model small = build_network(one_pass);
        CHECK_THROWS_AS(forward(small, Tensor(1, 3, 16, 16), 2, BNMode::train),
                        std::logic_error);
    }

    TEST_CASE("infer mode requires initialized statistics") {
        Model model = build_network(NetworkConfig::tiny());
        CHECK_THROWS_AS(forward(model, Tensor(1, 3, 16, 16), 2, BNMode::infer),
                        std::logic_error);
    }
}

TEST_SUITE("backward") {
    TEST_CASE("zero upstream gives all-zero gradients") {
        Model model = build_network(NetworkConfig::tiny());
        std::mt19937 rng(45);
        const Tensor image = oracles::random_tensor<float>(rng, {1, 3, 8, 8}, 0, 1);
        GraphTape tape;
        const Tensor prob = forward(model, image, 2, BNMode::train, &tape);
        const ParamStore grads = backward(model, tape, Tensor(prob.shape()));
        for (int i = 0; i < grads.size(); ++i)
            for (float v : grads.tensor(i).data()) CHECK(v == 0.0f);
    }

    TEST_CASE("tied two-pass gradient is the sum of per-pass gradients") {
        Model model = build_network(NetworkConfig::tiny());
        std::mt19937 rng(46);
        const Tensor image = oracles::random_tensor<float>(rng, {1, 3, 8, 8}, 0, 1);
        GraphTape tape;
        const Tensor prob = forward(model, image, 2, BNMode::train, &tape);
        const Tensor up = oracles::random_tensor<float>(rng, prob.shape(), -1, 1);

        const ParamStore both = backward(model, tape, up);
        const ParamStore pass1 = backward(model, tape, up, 1);
        const ParamStore pass2 = backward(model, tape, up, 2);
        for (int i = 0; i < both.size(); ++i) {
            const auto a = both.tensor(i).data();
            const auto p1 = pass1.tensor(i).data();
            const auto p2 = pass2.tensor(i).data();
            for (std::size_t j = 0; j < a.size(); ++j)
                CHECK(a[j] == doctest::Approx(p1[j] + p2[j]).epsilon(1e-6));
        }
    }

    TEST_CASE("a stale cache is rejected") {
        Model model = build_network(NetworkConfig::tiny());
        std::mt19937 rng(47);
        const Tensor image = oracles::random_tensor<float>(rng, {1, 3, 8, 8}, 0, 1);
        GraphTape tape;
        const Tensor prob = forward(model, image, 2, BNMode::train, &tape);
        ++model.revision;  // simulates a parameter update after the forward
        CHECK_THROWS_AS(backward(model, tape, Tensor(prob.shape())), std::logic_error);
        CHECK_THROWS_AS(backward(model, GraphTape{}, Tensor(prob.shape())),
                        std::logic_error);
    }
}
