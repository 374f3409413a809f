#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "gradcheck.hpp"
#include "vctrl/error.hpp"
#include "vctrl/vctrl_adapter.hpp"

using namespace vctrl;

namespace {

struct Setup {
    BaseParams base;
    VCtrlParams adapter;
    NetworkSpec spec;
};

Setup make_setup(int m, int n, Layout layout, int d_b, int d_c, std::uint64_t seed) {
    BaseConfig bc;
    bc.latent_channels = 12;
    bc.grid = {1, 2, 2};
    bc.width = d_b;
    bc.heads = 2;
    bc.blocks = m;
    bc.mlp_ratio = 2;
    bc.classes = 4;
    VCtrlConfig ac;
    ac.control_channels = 13;
    ac.width = d_c;
    ac.heads = 2;
    ac.mlp_ratio = 2;
    return {init_base(bc, seed), init_adapter(ac, d_b, n, seed + 100), make_network_spec(m, n, layout)};
}

ControlBundle random_bundle(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ControlBundle b{Tensor4(1, 2, 2, 13), {1, 2}};
    for (auto& v : b.z_m.data) v = u(rng);
    return b;
}

LatentTensor random_latent(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return {standard_normal({1, 2, 2, 12}, rng), {1, 2}};
}

void randomize_fuse(VCtrlParams& p, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 0.5);
    for (auto& f : p.fuse_out) {
        for (Eigen::Index i = 0; i < f.w.size(); ++i) f.w.data()[i] = normal(rng);
        for (Eigen::Index i = 0; i < f.b.size(); ++i) f.b.data()[i] = normal(rng);
    }
}

}  // namespace

TEST_CASE("space layout follows the stride rule") {
    CHECK(control_indices(30, 6, Layout::space) == std::vector<int>{1, 6, 11, 16, 21, 26});
    CHECK(control_indices(42, 5, Layout::space) == std::vector<int>{1, 9, 17, 25, 33});
    for (int m = 1; m <= 20; ++m) CHECK(control_indices(m, 1, Layout::space) == std::vector<int>{1});
    CHECK(control_indices(12, 4, Layout::end) == std::vector<int>{9, 10, 11, 12});
    CHECK_THROWS_AS(control_indices(4, 5, Layout::space), ParameterError);
    CHECK_THROWS_AS(control_indices(4, 0, Layout::even), ParameterError);
}

TEST_CASE("index sets are valid for every layout and 1 <= N <= M <= 64") {
    for (Layout layout : {Layout::even, Layout::end, Layout::space})
        for (int m = 1; m <= 64; ++m)
            for (int n = 1; n <= m; ++n) {
                const auto idx = control_indices(m, n, layout);
                REQUIRE(idx.size() == static_cast<std::size_t>(n));
                CHECK(idx.front() >= 1);
                CHECK(idx.back() <= m);
                CHECK(std::adjacent_find(idx.begin(), idx.end(), std::greater_equal<>()) == idx.end());
            }
}

TEST_CASE("even layout fuses densely over each anchor interval") {
    const auto even = fusion_schedule(make_network_spec(12, 4, Layout::even));
    CHECK(even.advance == std::vector<int>{0, -1, -1, 1, -1, -1, 2, -1, -1, 3, -1, -1});
    CHECK(even.fuse == std::vector<int>{0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3});
    const auto space = fusion_schedule(make_network_spec(12, 4, Layout::space));
    CHECK(space.fuse == space.advance);
    // 13 / 4 leaves a tail block that belongs to the last interval
    const auto tail = fusion_schedule(make_network_spec(13, 4, Layout::even));
    CHECK(tail.fuse.back() == 3);
}

TEST_CASE("size ratios") {
    CHECK(control_count(30, SizeRatio::small) == 2);
    CHECK(control_count(30, SizeRatio::medium) == 6);
    CHECK(control_count(30, SizeRatio::large) == 15);
    CHECK(control_count(12, SizeRatio::medium) == 2);
    CHECK(control_count(3, SizeRatio::small) == 1);
    const auto spec = make_network_spec(30, Layout::space, SizeRatio::medium);
    CHECK(spec.indices == std::vector<int>{1, 6, 11, 16, 21, 26});
    auto bad = spec;
    bad.indices[2] = 12;
    CHECK_THROWS_AS(validate_spec(bad), ConfigurationError);
}

TEST_CASE("network spec json round trip") {
    const auto spec = make_network_spec(12, Layout::even, SizeRatio::large);
    const auto j = spec_to_json(spec, 32);
    CHECK(j.dump() == R"({"M":12,"N":6,"layout":"even","ratio":"large","d_c":32,"indices":[1,3,5,7,9,11]})");
    const auto back = spec_from_json(nlohmann::json::parse(j.dump()));
    CHECK(back.indices == spec.indices);
    CHECK(back.ratio == spec.ratio);
}

TEST_CASE("adaptive average pooling bins") {
    Mat a(1, 4);
    a << 1, 3, 5, 7;
    const Mat pa = adaptive_avg_pool(a, 2);
    CHECK(pa(0, 0) == 2.0);
    CHECK(pa(0, 1) == 6.0);
    Mat b(1, 3);
    b << 1, 2, 3;
    const Mat pb = adaptive_avg_pool(b, 2);
    CHECK(pb(0, 0) == 1.5);
    CHECK(pb(0, 1) == 2.5);
    const Mat r = Mat::Random(3, 9);
    CHECK(adaptive_avg_pool(r, 9) == r);
    CHECK_THROWS_AS(adaptive_avg_pool(r, 0), ParameterError);
}

TEST_CASE("adaptive pooling preserves the mean when the width divides") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> normal;
    for (int d_c : {4, 8, 12, 32})
        for (int d_b : {1, 2, 4}) {
            if (d_c % d_b != 0) continue;
            Mat x(1, d_c);
            for (Eigen::Index i = 0; i < d_c; ++i) x(0, i) = normal(rng);
            CHECK(adaptive_avg_pool(x, d_b).mean() == doctest::Approx(x.mean()).epsilon(1e-12));
        }
}

TEST_CASE("adaptive pooling backward is the adjoint of the forward") {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> normal;
    for (int d_in : {3, 5, 8})
        for (int d_out : {2, 4, 7}) {
            Mat x(2, d_in), g(2, d_out);
            for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
            for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = normal(rng);
            const double lhs = (adaptive_avg_pool(x, d_out).array() * g.array()).sum();
            const double rhs = (x.array() * adaptive_avg_pool_backward(g, d_in).array()).sum();
            CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
        }
}

TEST_CASE("dist_align normalizes each channel to unit RMS") {
    VCtrlConfig cfg;
    cfg.control_channels = 3;
    cfg.width = 4;
    cfg.heads = 1;
    VCtrlParams p = init_adapter(cfg, 8, 1, 1);
    ControlBundle zero{Tensor4(1, 1, 2, 3, 0.0), {1, 1}};
    const TokenMap out = dist_align(zero, p);
    CHECK(out.tokens.rows() == 2);
    CHECK(out.tokens.isZero(0.0));

    // 2 tokens, channels constant at 2, -3, 0.5: each normalizes to +-1.
    ControlBundle constant{Tensor4(1, 1, 2, 3), {1, 1}};
    const double vals[3] = {2.0, -3.0, 0.5};
    for (std::size_t t = 0; t < 2; ++t)
        for (std::size_t c = 0; c < 3; ++c) constant.z_m.at(0, 0, t, c) = vals[c];
    p.align.w = Mat::Zero(3, 4);
    p.align.w.block(0, 0, 3, 3).setIdentity();
    const TokenMap unit = dist_align(constant, p);
    for (Eigen::Index t = 0; t < 2; ++t) {
        CHECK(unit.tokens(t, 0) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(unit.tokens(t, 1) == doctest::Approx(-1.0).epsilon(1e-12));
        CHECK(unit.tokens(t, 2) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(unit.tokens(t, 3) == 0.0);
    }
}

TEST_CASE("fresh adapter leaves the base forward bit-exact") {
    for (Layout layout : {Layout::even, Layout::end, Layout::space}) {
        auto s = make_setup(5, 2, layout, 8, 4, 31);
        for (int draw = 0; draw < 10; ++draw) {
            const auto z = random_latent(draw);
            const auto ctrl = controlled_forward(z, 1 + draw, draw % 4, random_bundle(draw + 50), s.base, s.adapter, s.spec);
            const auto base = base_forward(s.base, z, 1 + draw, draw % 4);
            CHECK(ctrl.eps_hat.data == base.eps_hat.data);
        }
    }
}

TEST_CASE("single control point hand trace") {
    // N = M = 1, d_c = d_b, fuse_out = identity: output = head(y_b + y_c - offset).
    auto s = make_setup(1, 1, Layout::space, 8, 8, 41);
    s.adapter.fuse_out[0].w = Mat::Identity(8, 8);
    const auto z = random_latent(3);
    const auto bundle = random_bundle(4);
    const auto out = controlled_forward(z, 6, 2, bundle, s.base, s.adapter, s.spec);

    DenoiserInput in;
    in.z = tokenize(z.data);
    in.t = {6};
    in.prompt = {2};
    EmbedCache ec;
    const Mat x0 = embed_forward(s.base, in, ec);
    const Mat y_b = block_forward({x0, {1, 2, 2}}, s.base.blocks[0], 2).tokens;
    const Mat c0 = nn::linear_forward(x0, s.adapter.entry) + dist_align(bundle, s.adapter).tokens;
    const Mat y_c = block_forward({c0, {1, 2, 2}}, s.adapter.blocks[0], 2).tokens;
    HeadCache hc;
    const Mat expected = head_forward(s.base, y_b + y_c, ec.offset, hc);
    const Mat got = tokenize(out.eps_hat.data);
    CHECK((got - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("control only affects taps after the first control point") {
    auto s = make_setup(6, 2, Layout::end, 8, 4, 51);
    randomize_fuse(s.adapter, 52);
    const auto z = random_latent(7);
    const auto a = controlled_forward(z, 10, 1, random_bundle(1), s.base, s.adapter, s.spec);
    const auto b = controlled_forward(z, 10, 1, random_bundle(2), s.base, s.adapter, s.spec);
    const int first = s.spec.indices.front();  // 5
    for (int i = 1; i <= 6; ++i) {
        const auto& ta = a.taps[static_cast<std::size_t>(i - 1)];
        const auto& tb = b.taps[static_cast<std::size_t>(i - 1)];
        if (i <= first) {
            CHECK(ta.input == tb.input);
            CHECK(ta.output == tb.output);
        } else {
            CHECK(ta.input != tb.input);
        }
    }
    CHECK(a.eps_hat.data != b.eps_hat.data);

    // Locality against the uncontrolled forward.
    const auto base = base_forward(s.base, z, 10, 1);
    for (int i = 1; i < first; ++i) CHECK(base.taps[static_cast<std::size_t>(i - 1)].output == a.taps[static_cast<std::size_t>(i - 1)].output);
}

TEST_CASE("spec and adapter mismatches are configuration errors") {
    auto s = make_setup(4, 2, Layout::space, 8, 4, 61);
    const auto z = random_latent(1);
    auto wrong = make_network_spec(4, 1, Layout::space);
    CHECK_THROWS_AS(controlled_forward(z, 1, 0, random_bundle(1), s.base, s.adapter, wrong), ConfigurationError);
    auto wrong_m = make_network_spec(5, 2, Layout::space);
    CHECK_THROWS_AS(controlled_forward(z, 1, 0, random_bundle(1), s.base, s.adapter, wrong_m), ConfigurationError);
    ControlBundle small{Tensor4(1, 2, 2, 7), {1, 2}};
    CHECK_THROWS_AS(controlled_forward(z, 1, 0, small, s.base, s.adapter, s.spec), DimensionError);
}

TEST_CASE("controlled analytic gradients match central differences") {
    const auto result = testing::run_gradient_check(7);
    INFO("worst tensor " << result.worst_tensor << " rel " << result.worst_rel_error);
    CHECK(result.failures.empty());
    CHECK(result.worst_rel_error < 1e-4);
}

TEST_CASE("adapter-only backward matches the full backward on adapter tensors") {
    auto m = testing::make_tiny_model(17);
    for (Layout layout : {Layout::even, Layout::end, Layout::space}) {
        m.spec = make_network_spec(3, 2, layout);
        ControlTrace trace;
        const Mat out = controlled_forward_batch(m.base, m.adapter, m.spec, m.input, &trace);
        const Mat dout = 2.0 * (out - m.eps) / static_cast<double>(out.size());
        BaseParams bg = zeros_like(m.base);
        VCtrlParams full = zeros_like(m.adapter), only = zeros_like(m.adapter);
        controlled_backward_batch(m.base, m.adapter, m.spec, trace, dout, &bg, &full);
        controlled_backward_batch(m.base, m.adapter, m.spec, trace, dout, nullptr, &only);
        std::vector<const Mat*> a, b;
        visit_adapter(full, [&](const std::string&, const Mat& g) { a.push_back(&g); });
        visit_adapter(only, [&](const std::string&, const Mat& g) { b.push_back(&g); });
        for (std::size_t i = 0; i < a.size(); ++i) CHECK((*a[i] - *b[i]).cwiseAbs().maxCoeff() < 1e-14);
    }
}
