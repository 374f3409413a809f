#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "gradcheck.hpp"
#include "vctrl/base_denoiser.hpp"
#include "vctrl/error.hpp"

using namespace vctrl;

namespace {

BaseConfig small_config() {
    BaseConfig c;
    c.latent_channels = 12;
    c.grid = {1, 2, 2};
    c.width = 8;
    c.heads = 2;
    c.blocks = 3;
    c.mlp_ratio = 2;
    c.classes = 3;
    return c;
}

Tensor4 random_latent(std::size_t f, std::size_t h, std::size_t w, std::size_t ch, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return standard_normal({f, h, w, ch}, rng);
}

double scalar_layer_norm(double v, double mean, double rstd, double gamma, double beta) {
    return (v - mean) * rstd * gamma + beta;
}

}  // namespace

TEST_CASE("block with zeroed output projections adds only the conditioning bias") {
    std::mt19937_64 rng(3);
    auto block = nn::init_block(8, 16, 1.0, rng);
    block.o = nn::Linear::zeros(8, 8);
    block.fc2 = nn::Linear::zeros(16, 8);
    TokenMap x{Mat::Random(5, 8), {1, 1, 5}};
    std::vector<double> cond = {0.1, -0.2, 0.3, 0.0, 1.0, 2.0, -3.0, 0.5};
    const TokenMap y = block_forward(x, block, 2, cond);
    for (Eigen::Index r = 0; r < 5; ++r)
        for (Eigen::Index c = 0; c < 8; ++c) CHECK(y.tokens(r, c) == doctest::Approx(x.tokens(r, c) + cond[c]).epsilon(1e-15));
}

TEST_CASE("block output shape equals input shape") {
    std::mt19937_64 rng(4);
    for (int tokens : {1, 3, 7}) {
        auto block = nn::init_block(8, 32, 0.5, rng);
        TokenMap x{Mat::Random(tokens, 8), {1, 1, static_cast<std::size_t>(tokens)}};
        const TokenMap y = block_forward(x, block, 4);
        CHECK(y.tokens.rows() == tokens);
        CHECK(y.tokens.cols() == 8);
    }
}

TEST_CASE("block rejects a width mismatch") {
    std::mt19937_64 rng(5);
    auto block = nn::init_block(8, 16, 1.0, rng);
    TokenMap x{Mat::Random(2, 6), {1, 1, 2}};
    CHECK_THROWS_AS(block_forward(x, block, 2), DimensionError);
}

TEST_CASE("single-token block matches a scalar hand computation") {
    // With one key the softmax weight is exactly 1, so attention reduces to
    // the value path followed by the output projection.
    std::mt19937_64 rng(11);
    auto b = nn::init_block(2, 3, 1.0, rng);
    b.ln1.gamma << 1.3, 0.7;
    b.ln1.beta << 0.1, -0.2;
    b.ln2.gamma << 0.9, 1.1;
    b.ln2.beta << -0.05, 0.15;
    b.v.b << 0.01, 0.02;
    b.o.b << -0.03, 0.04;
    b.fc1.b << 0.1, 0.0, -0.1;
    b.fc2.b << 0.2, -0.2;
    const double x[2] = {0.8, -0.4};

    auto norm = [](const double* v, const nn::LayerNorm& ln, double* out) {
        const double mean = 0.5 * (v[0] + v[1]);
        const double var = 0.5 * ((v[0] - mean) * (v[0] - mean) + (v[1] - mean) * (v[1] - mean));
        const double rstd = 1.0 / std::sqrt(var + 1e-5);
        for (int i = 0; i < 2; ++i) out[i] = scalar_layer_norm(v[i], mean, rstd, ln.gamma(0, i), ln.beta(0, i));
    };
    double h1[2], val[2], att[2], x1[2], h2[2], y[2];
    norm(x, b.ln1, h1);
    for (int j = 0; j < 2; ++j) val[j] = h1[0] * b.v.w(0, j) + h1[1] * b.v.w(1, j) + b.v.b(0, j);
    for (int j = 0; j < 2; ++j) att[j] = val[0] * b.o.w(0, j) + val[1] * b.o.w(1, j) + b.o.b(0, j);
    for (int j = 0; j < 2; ++j) x1[j] = x[j] + att[j];
    norm(x1, b.ln2, h2);
    double g[3];
    for (int j = 0; j < 3; ++j) {
        const double u = h2[0] * b.fc1.w(0, j) + h2[1] * b.fc1.w(1, j) + b.fc1.b(0, j);
        g[j] = 0.5 * u * (1.0 + std::erf(u / std::sqrt(2.0)));
    }
    for (int j = 0; j < 2; ++j) y[j] = x1[j] + g[0] * b.fc2.w(0, j) + g[1] * b.fc2.w(1, j) + g[2] * b.fc2.w(2, j) + b.fc2.b(0, j);

    TokenMap in{Mat(1, 2), {1, 1, 1}};
    in.tokens << x[0], x[1];
    const TokenMap out = block_forward(in, b, 1);
    CHECK(out.tokens(0, 0) == doctest::Approx(y[0]).epsilon(1e-12));
    CHECK(out.tokens(0, 1) == doctest::Approx(y[1]).epsilon(1e-12));
}

TEST_CASE("zero parameters with identity embeds predict zero noise") {
    auto c = small_config();
    c.width = 12;
    BaseParams p = zeros_like(init_base(c, 1));
    p.embed.w = Mat::Identity(12, 12);
    for (auto& b : p.blocks) {
        b.ln1.gamma.setOnes();
        b.ln2.gamma.setOnes();
    }
    const LatentTensor z{random_latent(1, 2, 2, 12, 9), {1, 2}};
    const auto out = base_forward(p, z, 5, 0);
    for (double v : out.eps_hat.data.data) CHECK(v == 0.0);
}

TEST_CASE("taps chain block outputs into the next block input") {
    const BaseParams p = init_base(small_config(), 2);
    const LatentTensor z{random_latent(1, 2, 2, 12, 10), {1, 2}};
    const auto out = base_forward(p, z, 7, 1);
    REQUIRE(out.taps.size() == 3);
    for (std::size_t i = 1; i < out.taps.size(); ++i) CHECK(out.taps[i].input == out.taps[i - 1].output);
}

TEST_CASE("base forward is deterministic and validates its conditioning") {
    const BaseParams p = init_base(small_config(), 2);
    const LatentTensor z{random_latent(1, 2, 2, 12, 10), {1, 2}};
    CHECK(base_forward(p, z, 4, 2).eps_hat.data == base_forward(p, z, 4, 2).eps_hat.data);
    CHECK_THROWS_AS(base_forward(p, z, 4, 3), ConditioningError);
    CHECK_THROWS_AS(base_forward(p, z, 4, -1), ConditioningError);
    const LatentTensor wrong{random_latent(1, 2, 2, 6, 10), {1, 1}};
    CHECK_THROWS_AS(base_forward(p, wrong, 4, 0), DimensionError);
}

TEST_CASE("attention is permutation equivariant without positional embedding") {
    BaseParams p = init_base(small_config(), 8);
    p.pos.setZero();
    const Tensor4 z = random_latent(1, 2, 2, 12, 12);
    const std::vector<std::size_t> perm = {2, 0, 3, 1};
    Tensor4 zp = z;
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t c = 0; c < 12; ++c) zp.data[i * 12 + c] = z.data[perm[i] * 12 + c];
    const auto a = base_forward(p, {z, {1, 2}}, 9, 0).eps_hat.data;
    const auto b = base_forward(p, {zp, {1, 2}}, 9, 0).eps_hat.data;
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t c = 0; c < 12; ++c) CHECK(b.data[i * 12 + c] == doctest::Approx(a.data[perm[i] * 12 + c]).epsilon(1e-12));
}

TEST_CASE("base-only analytic gradients match central differences") {
    auto m = testing::make_tiny_model(21);
    m.input.control.resize(0, 0);
    auto loss = [&]() {
        const Mat out = base_forward_batch(m.base, m.input, nullptr);
        return (out - m.eps).squaredNorm() / static_cast<double>(out.size());
    };
    BaseTrace trace;
    const Mat out = base_forward_batch(m.base, m.input, &trace);
    BaseParams grad = zeros_like(m.base);
    base_backward_batch(m.base, trace, 2.0 * (out - m.eps) / static_cast<double>(out.size()), grad);

    std::vector<Mat*> values;
    std::vector<const Mat*> analytic;
    std::vector<std::string> names;
    visit_base(m.base, [&](const std::string& n, Mat& v) {
        values.push_back(&v);
        names.push_back(n);
    });
    visit_base(grad, [&](const std::string&, const Mat& g) { analytic.push_back(&g); });
    double worst = 0.0;
    std::string worst_name;
    const double h = 1e-5;
    for (std::size_t t = 0; t < values.size(); ++t) {
        for (Eigen::Index i = 0; i < values[t]->size(); ++i) {
            double& v = values[t]->data()[i];
            const double orig = v;
            v = orig + h;
            const double up = loss();
            v = orig - h;
            const double down = loss();
            v = orig;
            const double rel = testing::relative_error(analytic[t]->data()[i], (up - down) / (2 * h));
            if (rel > worst) {
                worst = rel;
                worst_name = names[t];
            }
        }
    }
    INFO("worst tensor: " << worst_name);
    CHECK(worst < 1e-4);
}
