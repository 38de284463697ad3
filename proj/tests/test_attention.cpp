#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "convvit/attention.hpp"
#include "convvit/random.hpp"

using namespace convvit;

namespace {

double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.shape() == b.shape());
    double m = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

QkvProjection random_projection(Rng& rng, int h, int w) {
    QkvProjection p;
    p.shared = true;
    p.shared_bank.kernels = rng.normal_tensor({h * w, 1, h, w});
    p.shared_bank.group_size = 1;
    p.shared_bank.padding = Padding::Valid;
    return p;
}

ConvAttentionLayer random_layer(Rng& rng, int heads, int token_h, int token_w) {
    ConvAttentionLayer layer;
    init_attention_geometry(layer, heads, token_h, token_w);
    layer.wq = random_projection(rng, layer.head_h, layer.head_w);
    layer.wk = random_projection(rng, layer.head_h, layer.head_w);
    layer.wv = random_projection(rng, layer.head_h, layer.head_w);
    return layer;
}

// Compares the conv path against reference_mhsa through the head-index
// permutation; returns the max absolute deviation.
double conv_vs_reference(const ConvAttentionLayer& layer, const Tensor& x_tokens) {
    const int t = x_tokens.extent(0);
    const int th = layer.token_h, tw = layer.token_w;
    const int dim = th * tw;

    const Tensor ref_q = embed_reference_weights(layer.wq.shared_bank.kernels, layer.heads, th, tw);
    const Tensor ref_k = embed_reference_weights(layer.wk.shared_bank.kernels, layer.heads, th, tw);
    const Tensor ref_v = embed_reference_weights(layer.wv.shared_bank.kernels, layer.heads, th, tw);

    const Tensor flat = x_tokens.reshape({t, dim});
    const Tensor ref_out = reference_mhsa(flat, ref_q, ref_k, ref_v, layer.heads);
    const Tensor conv_out = conv_mhsa_forward(layer, x_tokens);

    const std::vector<int> perm = head_permutation(layer.heads, th, tw);
    double worst = 0.0;
    for (int tk = 0; tk < t; ++tk) {
        for (int f = 0; f < dim; ++f) {
            const double a = conv_out[static_cast<std::int64_t>(tk) * dim + f];
            const double b = ref_out.at(tk, perm[static_cast<std::size_t>(f)]);
            worst = std::max(worst, std::abs(a - b));
        }
    }
    return worst;
}

} // namespace

TEST_CASE("split_heads identity and exact tiling") {
    Rng rng(3);
    Tensor x = rng.normal_tensor({3, 6, 6});

    auto one = split_heads(x, 1);
    REQUIRE(one.size() == 1);
    CHECK(max_abs_diff(one[0], x) == 0.0);

    Tensor big = rng.normal_tensor({2, 16, 16});
    auto parts = split_heads(big, 16);
    REQUIRE(parts.size() == 16);
    for (const Tensor& p : parts) CHECK(p.shape() == std::vector<int>{2, 4, 4});
    // Head (r,c) holds the sub-patch starting at (4r, 4c).
    CHECK(parts[5].at(1, 0, 0) == big.at(1, 4, 4));
    CHECK(max_abs_diff(merge_heads(parts, 16, 16), big) == 0.0);

    auto nine = split_heads(x, 9);
    CHECK(nine.size() == 9);
    CHECK_THROWS_AS(split_heads(x, 5), config_error);
    CHECK_THROWS_AS(split_heads(x, 16), config_error);
}

TEST_CASE("attention_scores on constant tokens") {
    Tensor ones = Tensor::full({1, 2, 2}, 1.0);
    Tensor s = attention_scores(ones, ones, 4.0);
    REQUIRE(s.shape() == std::vector<int>{1, 1});
    CHECK(s.at(0, 0) == doctest::Approx(2.0));
}

TEST_CASE("zero keys give uniform attention rows") {
    Rng rng(5);
    Tensor q = rng.normal_tensor({4, 3, 3});
    Tensor k = Tensor::zeros({4, 3, 3});
    Tensor s = attention_scores(q, k, 9.0);
    for (std::int64_t i = 0; i < s.size(); ++i) CHECK(s[i] == 0.0);
    Tensor a = softmax(s, 1);
    for (std::int64_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(0.25));
}

TEST_CASE("attention_scores equals the scaled Gram matrix") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const int t = rng.uniform_int(1, 6);
        const int h = rng.uniform_int(1, 5), w = rng.uniform_int(1, 5);
        Tensor q = rng.normal_tensor({t, h, w});
        Tensor k = rng.normal_tensor({t, h, w});
        const double d = static_cast<double>(h * w);
        Tensor s = attention_scores(q, k, d);
        for (int i = 0; i < t; ++i) {
            for (int j = 0; j < t; ++j) {
                double dot = 0.0;
                for (int l = 0; l < h * w; ++l) {
                    dot += q[static_cast<std::int64_t>(i) * h * w + l] *
                           k[static_cast<std::int64_t>(j) * h * w + l];
                }
                CHECK(std::abs(s.at(i, j) - dot / std::sqrt(d)) < 1e-12);
            }
        }
    }
}

TEST_CASE("weighted_values selector and oracle behavior") {
    Rng rng(11);
    Tensor v = rng.normal_tensor({4, 2, 3});

    Tensor eye = Tensor::zeros({4, 4});
    for (int i = 0; i < 4; ++i) eye.at(i, i) = 1.0;
    CHECK(max_abs_diff(weighted_values(eye, v), v) == 0.0);

    Tensor pick = Tensor::zeros({4, 4});
    for (int i = 0; i < 4; ++i) pick.at(i, 3 - i) = 1.0;
    Tensor picked = weighted_values(pick, v);
    for (int i = 0; i < 4; ++i) {
        for (int l = 0; l < 6; ++l) {
            CHECK(picked[static_cast<std::int64_t>(i) * 6 + l] ==
                  v[static_cast<std::int64_t>(3 - i) * 6 + l]);
        }
    }

    // Row-normalized random weights against the direct sum.
    Tensor a = rng.uniform_tensor({4, 4}, 0.0, 1.0);
    for (int i = 0; i < 4; ++i) {
        double sum = 0.0;
        for (int j = 0; j < 4; ++j) sum += a.at(i, j);
        for (int j = 0; j < 4; ++j) a.at(i, j) /= sum;
    }
    Tensor y = weighted_values(a, v);
    for (int i = 0; i < 4; ++i) {
        for (int l = 0; l < 6; ++l) {
            double acc = 0.0;
            for (int j = 0; j < 4; ++j) acc += a.at(i, j) * v[static_cast<std::int64_t>(j) * 6 + l];
            CHECK(std::abs(y[static_cast<std::int64_t>(i) * 6 + l] - acc) < 1e-12);
        }
    }
}

TEST_CASE("single token attends only to itself") {
    Rng rng(13);
    ConvAttentionLayer layer = random_layer(rng, 1, 4, 4);
    Tensor x = rng.normal_tensor({1, 4, 4});
    Tensor y = conv_mhsa_forward(layer, x);
    Tensor v = project_tokens(layer.wv, x);
    CHECK(max_abs_diff(y, v) < 1e-15);
}

TEST_CASE("reference_mhsa basics") {
    Rng rng(17);
    const int dim = 6;
    Tensor wq = rng.normal_tensor({dim, dim});
    Tensor wk = rng.normal_tensor({dim, dim});
    Tensor wv = rng.normal_tensor({dim, dim});

    // One token: softmax over a single score is 1, output is its V row.
    Tensor x1 = rng.normal_tensor({1, dim});
    Tensor out1 = reference_mhsa(x1, wq, wk, wv, 1);
    for (int f = 0; f < dim; ++f) {
        double v = 0.0;
        for (int l = 0; l < dim; ++l) v += x1.at(0, l) * wv.at(l, f);
        CHECK(out1.at(0, f) == doctest::Approx(v).epsilon(1e-12));
    }

    // Zero query projection: uniform attention, every output is the V mean.
    Tensor x = rng.normal_tensor({5, dim});
    Tensor out = reference_mhsa(x, Tensor::zeros({dim, dim}), wk, wv, 1);
    for (int f = 0; f < dim; ++f) {
        double mean = 0.0;
        for (int tk = 0; tk < 5; ++tk) {
            for (int l = 0; l < dim; ++l) mean += x.at(tk, l) * wv.at(l, f);
        }
        mean /= 5.0;
        for (int tk = 0; tk < 5; ++tk) CHECK(out.at(tk, f) == doctest::Approx(mean).epsilon(1e-10));
    }
}

TEST_CASE("reference_mhsa against fully explicit dense arithmetic") {
    Rng rng(19);
    const int t = 4, dim = 9;
    Tensor x = rng.normal_tensor({t, dim});
    Tensor wq = rng.normal_tensor({dim, dim});
    Tensor wk = rng.normal_tensor({dim, dim});
    Tensor wv = rng.normal_tensor({dim, dim});

    // Everything below is written out longhand on purpose.
    double q[t][dim], k[t][dim], v[t][dim];
    for (int i = 0; i < t; ++i) {
        for (int f = 0; f < dim; ++f) {
            q[i][f] = k[i][f] = v[i][f] = 0.0;
            for (int l = 0; l < dim; ++l) {
                q[i][f] += x.at(i, l) * wq.at(l, f);
                k[i][f] += x.at(i, l) * wk.at(l, f);
                v[i][f] += x.at(i, l) * wv.at(l, f);
            }
        }
    }
    double expect[t][dim];
    for (int i = 0; i < t; ++i) {
        double scores[t];
        double mx = -1e300;
        for (int j = 0; j < t; ++j) {
            scores[j] = 0.0;
            for (int f = 0; f < dim; ++f) scores[j] += q[i][f] * k[j][f];
            scores[j] /= std::sqrt(9.0);
            mx = std::max(mx, scores[j]);
        }
        double z = 0.0;
        for (int j = 0; j < t; ++j) z += std::exp(scores[j] - mx);
        for (int f = 0; f < dim; ++f) {
            expect[i][f] = 0.0;
            for (int j = 0; j < t; ++j) {
                expect[i][f] += std::exp(scores[j] - mx) / z * v[j][f];
            }
        }
    }

    Tensor out = reference_mhsa(x, wq, wk, wv, 1);
    for (int i = 0; i < t; ++i) {
        for (int f = 0; f < dim; ++f) {
            CHECK(std::abs(out.at(i, f) - expect[i][f]) < 1e-12);
        }
    }
}

TEST_CASE("identity projections leave tokens unchanged through both paths") {
    const int th = 4, tw = 4, dim = 16;
    Tensor eye = Tensor::zeros({dim, dim});
    for (int i = 0; i < dim; ++i) eye.at(i, i) = 1.0;

    ConvAttentionLayer layer = transport_weights(eye, eye, eye, 1, th, tw);
    Rng rng(23);
    Tensor x = rng.normal_tensor({3, th, tw});

    // With Q=K=V=x the weighted sum is a convex mix of the tokens themselves;
    // both paths must agree exactly on it.
    CHECK(conv_vs_reference(layer, x) < 1e-12);
}

TEST_CASE("transport_weights round-trips the shared bank") {
    Rng rng(29);
    for (int heads : {1, 4}) {
        ConvAttentionLayer layer = random_layer(rng, heads, 8, 8);
        Tensor ref = embed_reference_weights(layer.wq.shared_bank.kernels, heads, 8, 8);
        ConvAttentionLayer back = transport_weights(ref, ref, ref, heads, 8, 8);
        CHECK(max_abs_diff(back.wq.shared_bank.kernels, layer.wq.shared_bank.kernels) == 0.0);
    }
}

TEST_CASE("transport_weights rejects weights that couple heads") {
    Rng rng(31);
    Tensor dense = rng.normal_tensor({16, 16});
    CHECK_THROWS_AS(transport_weights(dense, dense, dense, 4, 4, 4), config_error);
}

TEST_CASE("conv path equals reference attention after weight transport") {
    Rng rng(37);
    for (int heads : {1, 4, 16}) {
        double worst = 0.0;
        for (int trial = 0; trial < 8; ++trial) {
            ConvAttentionLayer layer = random_layer(rng, heads, 8, 8);
            const int t = rng.uniform_int(1, 7);
            Tensor x = rng.normal_tensor({t, 8, 8});
            worst = std::max(worst, conv_vs_reference(layer, x));
        }
        CHECK(worst < 1e-10);
    }
}

TEST_CASE("paper-scale geometry: 65 tokens, 16 heads, 16x16") {
    Rng rng(41);
    ConvAttentionLayer layer = random_layer(rng, 16, 16, 16);
    Tensor x = rng.normal_tensor({65, 16, 16});
    AttentionTrace trace;
    Tensor y = conv_mhsa_forward(layer, x, &trace);
    CHECK(y.shape() == std::vector<int>{65, 16, 16});
    REQUIRE(trace.scores.shape() == std::vector<int>{16, 65, 65});
    for (int head = 0; head < 16; ++head) {
        for (int i = 0; i < 65; ++i) {
            double sum = 0.0;
            for (int j = 0; j < 65; ++j) sum += trace.scores.at(head, i, j);
            CHECK(std::abs(sum - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("head locality under perturbation") {
    Rng rng(43);
    ConvAttentionLayer layer = random_layer(rng, 4, 6, 6);
    Tensor x = rng.normal_tensor({4, 6, 6});
    Tensor base = conv_mhsa_forward(layer, x);

    // Bump a pixel inside head (0,1)'s sub-patch of token 2: only the head-1
    // sub-patches of the output may move.
    Tensor bumped = x;
    bumped.at(2, 1, 4) += 1.0;
    Tensor moved = conv_mhsa_forward(layer, bumped);
    for (int tk = 0; tk < 4; ++tk) {
        for (int i = 0; i < 6; ++i) {
            for (int j = 0; j < 6; ++j) {
                const bool in_head1 = i < 3 && j >= 3;
                if (!in_head1) {
                    CHECK(moved.at(tk, i, j) == base.at(tk, i, j));
                }
            }
        }
    }
}

TEST_CASE("token permutation equivariance") {
    Rng rng(47);
    ConvAttentionLayer layer = random_layer(rng, 4, 4, 4);
    const int t = 6;
    Tensor x = rng.normal_tensor({t, 4, 4});
    Tensor y = conv_mhsa_forward(layer, x);

    const std::vector<int> perm{3, 0, 5, 1, 4, 2};
    Tensor xp({t, 4, 4});
    for (int i = 0; i < t; ++i) {
        std::copy(x.data() + perm[i] * 16, x.data() + (perm[i] + 1) * 16, xp.data() + i * 16);
    }
    Tensor yp = conv_mhsa_forward(layer, xp);
    for (int i = 0; i < t; ++i) {
        for (int l = 0; l < 16; ++l) {
            CHECK(std::abs(yp[static_cast<std::int64_t>(i) * 16 + l] -
                           y[static_cast<std::int64_t>(perm[i]) * 16 + l]) < 1e-12);
        }
    }
}
