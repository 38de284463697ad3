#include "convvit/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <unordered_map>

#include "convvit/random.hpp"

namespace convvit {

double lr_at(const ScheduleConfig& schedule, int epoch) {
    if (schedule.warmup_epochs >= schedule.total_epochs) {
        throw config_error("schedule: warmup must end before the run does");
    }
    if (epoch < 0 || epoch >= schedule.total_epochs) {
        throw config_error("schedule: epoch out of range");
    }
    if (epoch < schedule.warmup_epochs) {
        return schedule.base_lr * static_cast<double>(epoch) / schedule.warmup_epochs;
    }
    const double progress = static_cast<double>(epoch - schedule.warmup_epochs) /
                            (schedule.total_epochs - schedule.warmup_epochs);
    return schedule.eta_min +
           0.5 * (schedule.base_lr - schedule.eta_min) * (1.0 + std::cos(M_PI * progress));
}

GradMap zero_gradients(Model& model) {
    GradMap grads;
    for (const auto& [name, tensor] : named_parameters(model)) {
        grads.emplace_back(name, Tensor::zeros(tensor->shape()));
    }
    return grads;
}

// --- loss ------------------------------------------------------------------

double cross_entropy(const Tensor& logits, int target) {
    if (logits.rank() != 1) throw dimension_error("cross_entropy: logits must be rank 1");
    const int n = logits.extent(0);
    if (target < 0 || target >= n) throw config_error("cross_entropy: target out of range");
    double mx = logits[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += std::exp(logits[i] - mx);
    return std::log(sum) + mx - logits[target];
}

Tensor cross_entropy_grad(const Tensor& logits, int target) {
    Tensor g = softmax(logits, 0);
    g[target] -= 1.0;
    return g;
}

int argmax(const Tensor& logits) {
    int best = 0;
    for (int i = 1; i < logits.extent(0); ++i) {
        if (logits[i] > logits[best]) best = i;
    }
    return best;
}

double accuracy(const std::vector<Tensor>& logit_batch, const std::vector<int>& targets) {
    if (logit_batch.empty() || logit_batch.size() != targets.size()) {
        throw dimension_error("accuracy: batch sizes differ");
    }
    int hits = 0;
    for (std::size_t i = 0; i < logit_batch.size(); ++i) {
        if (argmax(logit_batch[i]) == targets[i]) ++hits;
    }
    return static_cast<double>(hits) / logit_batch.size();
}

// --- backward helpers --------------------------------------------------------

namespace {

// Adjoint of conv2d for both operands, mirroring the forward loops. d_input
// and d_kernels accumulate.
void conv2d_backward(const Tensor& input, const Tensor& kernels, Padding padding, int groups,
                     const Tensor& d_out, Tensor& d_input, Tensor& d_kernels) {
    const int c_in = input.extent(0), h = input.extent(1), w = input.extent(2);
    const int c_out = kernels.extent(0), kc = kernels.extent(1);
    const int kh = kernels.extent(2), kw = kernels.extent(3);

    int pad_top = 0, pad_left = 0, hp = h, wp = w;
    if (padding == Padding::Same) {
        pad_top = (kh - 1) / 2;
        pad_left = (kw - 1) / 2;
        hp = h + kh - 1;
        wp = w + kw - 1;
    }
    const int ho = hp - kh + 1, wo = wp - kw + 1;

    Tensor padded = Tensor::zeros({c_in, hp, wp});
    Tensor d_padded = Tensor::zeros({c_in, hp, wp});
    for (int c = 0; c < c_in; ++c) {
        for (int i = 0; i < h; ++i) {
            std::copy(input.data() + (static_cast<std::int64_t>(c) * h + i) * w,
                      input.data() + (static_cast<std::int64_t>(c) * h + i + 1) * w,
                      padded.data() + (static_cast<std::int64_t>(c) * hp + i + pad_top) * wp +
                          pad_left);
        }
    }

    const int cpg_out = c_out / groups;
    for (int k = 0; k < c_out; ++k) {
        const int c0 = (k / cpg_out) * kc;
        for (int p = 0; p < ho; ++p) {
            for (int q = 0; q < wo; ++q) {
                const double dv = d_out[(static_cast<std::int64_t>(k) * ho + p) * wo + q];
                if (dv == 0.0) continue;
                for (int cc = 0; cc < kc; ++cc) {
                    double* dk = d_kernels.data() +
                                 ((static_cast<std::int64_t>(k) * kc + cc) * kh) * kw;
                    const double* kk = kernels.data() +
                                       ((static_cast<std::int64_t>(k) * kc + cc) * kh) * kw;
                    const double* xx =
                        padded.data() + (static_cast<std::int64_t>(c0 + cc) * hp + p) * wp + q;
                    double* dx =
                        d_padded.data() + (static_cast<std::int64_t>(c0 + cc) * hp + p) * wp + q;
                    for (int i = 0; i < kh; ++i) {
                        const double* xr = xx + static_cast<std::int64_t>(i) * wp;
                        double* dxr = dx + static_cast<std::int64_t>(i) * wp;
                        double* dkr = dk + static_cast<std::int64_t>(i) * kw;
                        const double* kr = kk + static_cast<std::int64_t>(i) * kw;
                        for (int j = 0; j < kw; ++j) {
                            dkr[j] += dv * xr[j];
                            dxr[j] += dv * kr[j];
                        }
                    }
                }
            }
        }
    }

    for (int c = 0; c < c_in; ++c) {
        for (int i = 0; i < h; ++i) {
            const double* src =
                d_padded.data() + (static_cast<std::int64_t>(c) * hp + i + pad_top) * wp + pad_left;
            double* dst = d_input.data() + (static_cast<std::int64_t>(c) * h + i) * w;
            for (int j = 0; j < w; ++j) dst[j] += src[j];
        }
    }
}

// Backward through a shared bank: run the grouped adjoint with the repeated
// bank, then fold the per-group kernel gradients back onto the single bank.
void shared_backward(const SharedGroupedConv& layer, const Tensor& x, const Tensor& d_out,
                     Tensor& d_x, Tensor& d_bank, Tensor* d_bias) {
    const int groups = x.extent(0) / layer.group_size;
    const int m = layer.out_per_group();
    Tensor rep = repeat_bank(layer, groups);
    Tensor d_rep = Tensor::zeros(rep.shape());
    conv2d_backward(x, rep, layer.padding, groups, d_out, d_x, d_rep);

    const std::int64_t bank_len = d_bank.size();
    for (int j = 0; j < groups; ++j) {
        const double* src = d_rep.data() + static_cast<std::int64_t>(j) * bank_len;
        for (std::int64_t i = 0; i < bank_len; ++i) d_bank[i] += src[i];
    }
    if (d_bias) {
        const std::int64_t plane = static_cast<std::int64_t>(d_out.extent(1)) * d_out.extent(2);
        for (int k = 0; k < d_out.extent(0); ++k) {
            double acc = 0.0;
            const double* dy = d_out.data() + k * plane;
            for (std::int64_t i = 0; i < plane; ++i) acc += dy[i];
            (*d_bias)[k % m] += acc;
        }
    }
}

void unshared_backward(const UnsharedGroupedConv& layer, const Tensor& x, const Tensor& d_out,
                       Tensor& d_x, Tensor& d_kernels, Tensor* d_bias) {
    const int groups = x.extent(0) / layer.group_size;
    conv2d_backward(x, layer.kernels, layer.padding, groups, d_out, d_x, d_kernels);
    if (d_bias) {
        const std::int64_t plane = static_cast<std::int64_t>(d_out.extent(1)) * d_out.extent(2);
        for (int k = 0; k < d_out.extent(0); ++k) {
            double acc = 0.0;
            const double* dy = d_out.data() + k * plane;
            for (std::int64_t i = 0; i < plane; ++i) acc += dy[i];
            (*d_bias)[k] += acc;
        }
    }
}

// Per-token layer norm adjoint; returns d_x and accumulates the affine grads.
Tensor layer_norm_backward(const Tensor& x, const Tensor& gain, double eps, const Tensor& d_y,
                           Tensor& d_gain, Tensor& d_offset) {
    const int t = x.extent(0);
    const std::int64_t hw = static_cast<std::int64_t>(x.extent(1)) * x.extent(2);
    Tensor d_x(x.shape());

    for (int tk = 0; tk < t; ++tk) {
        const double* xi = x.data() + tk * hw;
        const double* dy = d_y.data() + tk * hw;
        double* dx = d_x.data() + tk * hw;

        double mean = 0.0;
        for (std::int64_t i = 0; i < hw; ++i) mean += xi[i];
        mean /= static_cast<double>(hw);
        double var = 0.0;
        for (std::int64_t i = 0; i < hw; ++i) var += (xi[i] - mean) * (xi[i] - mean);
        var /= static_cast<double>(hw);
        const double inv = 1.0 / std::sqrt(var + eps);

        double m1 = 0.0, m2 = 0.0;
        for (std::int64_t i = 0; i < hw; ++i) {
            const double xhat = (xi[i] - mean) * inv;
            const double dxh = dy[i] * gain[i];
            m1 += dxh;
            m2 += dxh * xhat;
            d_gain[i] += dy[i] * xhat;
            d_offset[i] += dy[i];
        }
        m1 /= static_cast<double>(hw);
        m2 /= static_cast<double>(hw);
        for (std::int64_t i = 0; i < hw; ++i) {
            const double xhat = (xi[i] - mean) * inv;
            dx[i] = (dy[i] * gain[i] - m1 - xhat * m2) * inv;
        }
    }
    return d_x;
}

struct GradLookup {
    std::unordered_map<std::string, Tensor*> by_name;

    explicit GradLookup(GradMap& grads) {
        for (auto& [name, tensor] : grads) by_name[name] = &tensor;
    }
    Tensor& operator()(const std::string& name) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw state_error("backward: no gradient slot for " + name);
        return *it->second;
    }
    Tensor* maybe(const std::string& name) {
        auto it = by_name.find(name);
        return it == by_name.end() ? nullptr : it->second;
    }
};

// Projection adjoint shared by Q, K and V paths; accumulates into d_xs.
void projection_backward(const QkvProjection& proj, const std::string& prefix, const Tensor& xs,
                         const Tensor& d_proj_tokens, GradLookup& grad, Tensor& d_xs) {
    const int t = xs.extent(0);
    Tensor d_raw;
    if (proj.padding() == Padding::Valid) {
        d_raw = d_proj_tokens.reshape({t * d_proj_tokens.extent(1) * d_proj_tokens.extent(2), 1, 1});
    } else {
        d_raw = d_proj_tokens;
    }
    if (proj.shared) {
        shared_backward(proj.shared_bank, xs, d_raw, d_xs, grad(prefix + ".kernels"),
                        grad.maybe(prefix + ".bias"));
    } else {
        unshared_backward(proj.unshared_bank, xs, d_raw, d_xs, grad(prefix + ".kernels"),
                          grad.maybe(prefix + ".bias"));
    }
}

// Attention adjoint for one block; returns d(n1).
Tensor attention_backward(const EncoderBlock& block, const BlockCache& cache,
                          const std::string& prefix, const Tensor& d_attn_out, GradLookup& grad) {
    const ConvAttentionLayer& layer = block.attn;
    const int t = cache.n1.extent(0);
    const int h = layer.head_h, w = layer.head_w;
    const int hw = h * w;
    const double inv_sqrt_d = 1.0 / std::sqrt(layer.scale_dim);

    std::vector<Tensor> d_head_out = split_heads(d_attn_out, layer.heads);
    std::vector<Tensor> d_head_in;
    d_head_in.reserve(static_cast<std::size_t>(layer.heads));

    for (int head = 0; head < layer.heads; ++head) {
        const Tensor& xs = cache.head_in[static_cast<std::size_t>(head)];
        const Tensor& q = cache.q[static_cast<std::size_t>(head)];
        const Tensor& k = cache.k[static_cast<std::size_t>(head)];
        const Tensor& v = cache.v[static_cast<std::size_t>(head)];
        const Tensor& a = cache.attn[static_cast<std::size_t>(head)];
        const Tensor& d_o = d_head_out[static_cast<std::size_t>(head)];

        // Weighted sum: O = A V.
        Tensor d_a({t, t});
        Tensor d_v = Tensor::zeros({t, h, w});
        for (int i = 0; i < t; ++i) {
            for (int j = 0; j < t; ++j) {
                double acc = 0.0;
                for (int l = 0; l < hw; ++l) {
                    acc += d_o[static_cast<std::int64_t>(i) * hw + l] *
                           v[static_cast<std::int64_t>(j) * hw + l];
                }
                d_a.at(i, j) = acc;
            }
        }
        for (int j = 0; j < t; ++j) {
            for (int l = 0; l < hw; ++l) {
                double acc = 0.0;
                for (int i = 0; i < t; ++i) {
                    acc += a.at(i, j) * d_o[static_cast<std::int64_t>(i) * hw + l];
                }
                d_v[static_cast<std::int64_t>(j) * hw + l] = acc;
            }
        }

        // Softmax rows.
        Tensor d_s({t, t});
        for (int i = 0; i < t; ++i) {
            double dot = 0.0;
            for (int j = 0; j < t; ++j) dot += d_a.at(i, j) * a.at(i, j);
            for (int j = 0; j < t; ++j) d_s.at(i, j) = a.at(i, j) * (d_a.at(i, j) - dot);
        }

        // Scores: S = Q K^T / sqrt(d).
        Tensor d_q = Tensor::zeros({t, h, w});
        Tensor d_k = Tensor::zeros({t, h, w});
        for (int i = 0; i < t; ++i) {
            for (int j = 0; j < t; ++j) {
                const double ds = d_s.at(i, j) * inv_sqrt_d;
                if (ds == 0.0) continue;
                for (int l = 0; l < hw; ++l) {
                    d_q[static_cast<std::int64_t>(i) * hw + l] +=
                        ds * k[static_cast<std::int64_t>(j) * hw + l];
                    d_k[static_cast<std::int64_t>(j) * hw + l] +=
                        ds * q[static_cast<std::int64_t>(i) * hw + l];
                }
            }
        }

        Tensor d_xs = Tensor::zeros({t, h, w});
        projection_backward(layer.wq, prefix + ".attn.wq", xs, d_q, grad, d_xs);
        projection_backward(layer.wk, prefix + ".attn.wk", xs, d_k, grad, d_xs);
        projection_backward(layer.wv, prefix + ".attn.wv", xs, d_v, grad, d_xs);
        d_head_in.push_back(std::move(d_xs));
    }
    return merge_heads(d_head_in, layer.token_h, layer.token_w);
}

Tensor block_backward(const EncoderBlock& block, const BlockCache& cache, const std::string& prefix,
                      const Tensor& d_x_out, GradLookup& grad) {
    const int t = cache.x_in.extent(0);
    const int h = cache.x_in.extent(1), w = cache.x_in.extent(2);
    const int hw = h * w;
    const int r = block.mlp.ratio;

    // x_out = x_mid + mlp_out.
    Tensor d_x_mid = d_x_out;

    // MLP reduce.
    Tensor d_raw2 = d_x_out.reshape({t * hw, 1, 1});
    Tensor d_hidden_act = Tensor::zeros({t * r, h, w});
    shared_backward(block.mlp.reduce, cache.hidden_act, d_raw2, d_hidden_act,
                    grad(prefix + ".mlp.reduce.kernels"), grad.maybe(prefix + ".mlp.reduce.bias"));

    // Activation.
    Tensor d_hidden_raw(d_hidden_act.shape());
    for (std::int64_t i = 0; i < d_hidden_raw.size(); ++i) {
        d_hidden_raw[i] = d_hidden_act[i] * gelu_derivative_scalar(cache.hidden_raw[i]);
    }

    // MLP expand.
    Tensor d_raw1 = d_hidden_raw.reshape({t * r * hw, 1, 1});
    Tensor d_n2 = Tensor::zeros({t, h, w});
    shared_backward(block.mlp.expand, cache.n2, d_raw1, d_n2,
                    grad(prefix + ".mlp.expand.kernels"), grad.maybe(prefix + ".mlp.expand.bias"));

    add_in_place(d_x_mid, layer_norm_backward(cache.x_mid, block.norm2_gain, 1e-6, d_n2,
                                              grad(prefix + ".norm2.gain"),
                                              grad(prefix + ".norm2.offset")));

    // x_mid = x_in + attn_out.
    Tensor d_x_in = d_x_mid;
    Tensor d_n1 = attention_backward(block, cache, prefix, d_x_mid, grad);
    add_in_place(d_x_in, layer_norm_backward(cache.x_in, block.norm1_gain, 1e-6, d_n1,
                                             grad(prefix + ".norm1.gain"),
                                             grad(prefix + ".norm1.offset")));
    return d_x_in;
}

} // namespace

void accumulate_backward(Model& model, const ForwardCache& cache, const Tensor& dlogits,
                         GradMap& grads) {
    if (cache.blocks.size() != model.blocks.size() || cache.final_norm.empty()) {
        throw state_error("backward: forward cache is missing");
    }
    const ModelConfig& c = model.config;
    const int t = c.tokens();
    const int h = c.embed_h, w = c.embed_w;
    const int hw = h * w;
    GradLookup grad(grads);

    // Classifier head on the class token.
    Tensor cls = Tensor::from_data(
        {1, h, w}, std::vector<double>(cache.final_norm.data(), cache.final_norm.data() + hw));
    Tensor d_cls = Tensor::zeros({1, h, w});
    shared_backward(model.head, cls, dlogits.reshape({c.num_classes, 1, 1}), d_cls,
                    grad("head.kernels"), grad.maybe("head.bias"));

    Tensor d_final_norm = Tensor::zeros({t, h, w});
    std::copy(d_cls.data(), d_cls.data() + hw, d_final_norm.data());

    Tensor d_x = layer_norm_backward(cache.final_in, model.final_gain, 1e-6, d_final_norm,
                                     grad("final_norm.gain"), grad("final_norm.offset"));

    for (int b = c.depth - 1; b >= 0; --b) {
        d_x = block_backward(model.blocks[static_cast<std::size_t>(b)],
                             cache.blocks[static_cast<std::size_t>(b)],
                             "block" + std::to_string(b), d_x, grad);
    }

    // Positional table and class token.
    if (model.pos.kind == PositionalKind::Trainable) {
        add_in_place(grad("pos.table"), d_x);
    }
    {
        Tensor& d_ct = grad("class_token");
        for (std::int64_t i = 0; i < hw; ++i) d_ct[i] += d_x[i];
    }

    // Tokenizer transpose convolution, one patch per token.
    Tensor& d_tok = grad("tokenizer.kernels");
    Tensor* d_tok_bias = grad.maybe("tokenizer.bias");
    const int s = model.tokenizer_stride, kk = model.tokenizer_kernel;
    const int p = c.patch_size;
    for (int token = 1; token < t; ++token) {
        const Tensor& patch = cache.patches[static_cast<std::size_t>(token - 1)];
        const double* dy = d_x.data() + static_cast<std::int64_t>(token) * hw;
        for (int ch = 0; ch < c.image_channels; ++ch) {
            for (int py = 0; py < p; ++py) {
                for (int px = 0; px < p; ++px) {
                    const double xv = patch.at(ch, py, px);
                    if (xv == 0.0) continue;
                    for (int i = 0; i < kk; ++i) {
                        const double* dyr = dy + static_cast<std::int64_t>(py * s + i) * w + px * s;
                        double* dkr = d_tok.data() +
                                      ((static_cast<std::int64_t>(ch) * 1 + 0) * kk + i) * kk;
                        for (int j = 0; j < kk; ++j) dkr[j] += xv * dyr[j];
                    }
                }
            }
        }
        if (d_tok_bias) {
            double acc = 0.0;
            for (int i = 0; i < hw; ++i) acc += dy[i];
            (*d_tok_bias)[0] += acc;
        }
    }
}

GradMap backward(Model& model, const ForwardCache& cache, const Tensor& dlogits) {
    GradMap grads = zero_gradients(model);
    accumulate_backward(model, cache, dlogits, grads);
    return grads;
}

// --- Adam ---------------------------------------------------------------------

AdamState init_adam(Model& model, AdamConfig config) {
    AdamState state;
    state.config = config;
    for (const auto& [name, tensor] : named_parameters(model)) {
        (void)name;
        state.first_moment.push_back(Tensor::zeros(tensor->shape()));
        state.second_moment.push_back(Tensor::zeros(tensor->shape()));
    }
    return state;
}

void adam_step(AdamState& state, Model& model, const GradMap& grads, double lr) {
    auto params = named_parameters(model);
    if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
        throw state_error("adam_step: parameter/gradient layout mismatch");
    }
    ++state.step;
    const double b1 = state.config.beta1, b2 = state.config.beta2;
    const double bc1 = 1.0 - std::pow(b1, state.step);
    const double bc2 = 1.0 - std::pow(b2, state.step);

    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].first != grads[i].first) {
            throw state_error("adam_step: gradient order mismatch at " + params[i].first);
        }
        Tensor& p = *params[i].second;
        const Tensor& g = grads[i].second;
        Tensor& m = state.first_moment[i];
        Tensor& v = state.second_moment[i];
        for (std::int64_t e = 0; e < p.size(); ++e) {
            m[e] = b1 * m[e] + (1.0 - b1) * g[e];
            v[e] = b2 * v[e] + (1.0 - b2) * g[e] * g[e];
            const double mhat = m[e] / bc1;
            const double vhat = v[e] / bc2;
            p[e] -= lr * mhat / (std::sqrt(vhat) + state.config.epsilon);
        }
        p.quantize();
    }
}

// --- toy data -------------------------------------------------------------------

std::vector<Sample> generate_dataset(const ToyDataset& spec) {
    if (spec.image_size < 8) throw config_error("toy dataset: image too small");
    Rng rng(spec.seed);
    const int s = spec.image_size;
    std::vector<Sample> out;
    out.reserve(static_cast<std::size_t>(spec.count));

    for (int idx = 0; idx < spec.count; ++idx) {
        Sample sample;
        sample.label = idx % spec.num_classes();
        sample.image = Tensor::zeros({1, s, s});

        if (spec.kind == ToyKind::QuadrantBlob) {
            // The labeled quadrant holds the brightest blob; two dimmer
            // distractor blobs sit in other quadrants under heavy noise.
            const int half = s / 2;
            const double sigma = s / 8.0;
            const int margin = std::max(2, s / 8);
            auto blob_center = [&](int quadrant, double& cy, double& cx) {
                const int qy = quadrant / 2, qx = quadrant % 2;
                cy = qy * half + margin + rng.uniform() * (half - 2 * margin);
                cx = qx * half + margin + rng.uniform() * (half - 2 * margin);
            };
            auto add_blob = [&](double cy, double cx, double amp) {
                for (int i = 0; i < s; ++i) {
                    for (int j = 0; j < s; ++j) {
                        const double d2 = (i - cy) * (i - cy) + (j - cx) * (j - cx);
                        sample.image.at(0, i, j) += amp * std::exp(-d2 / (2.0 * sigma * sigma));
                    }
                }
            };

            double cy = 0.0, cx = 0.0;
            blob_center(sample.label, cy, cx);
            add_blob(cy, cx, 1.0);

            int spare[3], n_spare = 0;
            for (int q = 0; q < 4; ++q) {
                if (q != sample.label) spare[n_spare++] = q;
            }
            const int drop = rng.uniform_int(0, 2);
            for (int d = 0; d < 3; ++d) {
                if (d == drop) continue;
                double dy = 0.0, dx = 0.0;
                blob_center(spare[d], dy, dx);
                add_blob(dy, dx, 0.55 + 0.15 * rng.uniform());
            }
            for (int i = 0; i < s; ++i) {
                for (int j = 0; j < s; ++j) sample.image.at(0, i, j) += 0.35 * rng.normal();
            }

            sample.box_y0 = std::max(0, static_cast<int>(std::floor(cy - 2 * sigma)));
            sample.box_x0 = std::max(0, static_cast<int>(std::floor(cx - 2 * sigma)));
            sample.box_y1 = std::min(s, static_cast<int>(std::ceil(cy + 2 * sigma)) + 1);
            sample.box_x1 = std::min(s, static_cast<int>(std::ceil(cx + 2 * sigma)) + 1);
        } else {
            const double period = 3.0 + rng.uniform() * 3.0;
            const double phase = rng.uniform() * 2.0 * M_PI;
            for (int i = 0; i < s; ++i) {
                for (int j = 0; j < s; ++j) {
                    const double axis = sample.label == 0 ? i : j;
                    sample.image.at(0, i, j) =
                        std::sin(2.0 * M_PI * axis / period + phase) + 0.25 * rng.normal();
                }
            }
            sample.box_y1 = s;
            sample.box_x1 = s;
        }
        out.push_back(std::move(sample));
    }
    return out;
}

// --- training loop ----------------------------------------------------------------

TrainResult train(Model& model, const ToyDataset& train_spec, const ToyDataset& val_spec,
                  const ScheduleConfig& schedule, const TrainOptions& options) {
    if (train_spec.num_classes() != model.config.num_classes) {
        throw config_error("train: dataset classes do not match the model");
    }
    const std::vector<Sample> train_data = generate_dataset(train_spec);
    const std::vector<Sample> val_data = generate_dataset(val_spec);

    AdamState adam = init_adam(model);
    Rng order_rng(options.seed);
    std::vector<int> order(train_data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    TrainResult result;
    result.csv_text = "epoch,lr,train_loss,train_acc,val_acc\n";
    char row[256];

    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        const double lr = lr_at(schedule, epoch);

        // Fisher-Yates with the run's private stream.
        for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
            std::swap(order[static_cast<std::size_t>(i)],
                      order[static_cast<std::size_t>(order_rng.uniform_int(0, i))]);
        }

        double loss_sum = 0.0;
        int hits = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(options.batch_size)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(options.batch_size));
            const int batch = static_cast<int>(stop - start);
            GradMap grads = zero_gradients(model);
            for (std::size_t b = start; b < stop; ++b) {
                const Sample& sample = train_data[static_cast<std::size_t>(order[b])];
                ForwardCache cache;
                Tensor logits = forward(model, sample.image, nullptr, &cache);
                loss_sum += cross_entropy(logits, sample.label);
                if (argmax(logits) == sample.label) ++hits;
                Tensor dlogits = cross_entropy_grad(logits, sample.label);
                scale_in_place(dlogits, 1.0 / batch);
                accumulate_backward(model, cache, dlogits, grads);
            }
            adam_step(adam, model, grads, lr);
        }

        const double train_loss = loss_sum / static_cast<double>(train_data.size());
        if (!std::isfinite(train_loss)) {
            throw state_error("train: loss diverged (not finite) at epoch " +
                              std::to_string(epoch));
        }

        int val_hits = 0;
        for (const Sample& sample : val_data) {
            if (argmax(forward(model, sample.image)) == sample.label) ++val_hits;
        }

        EpochMetrics m;
        m.epoch = epoch;
        m.lr = lr;
        m.train_loss = train_loss;
        m.train_acc = static_cast<double>(hits) / train_data.size();
        m.val_acc = static_cast<double>(val_hits) / val_data.size();
        result.log.push_back(m);
        std::snprintf(row, sizeof(row), "%d,%.17g,%.17g,%.17g,%.17g\n", m.epoch, m.lr, m.train_loss,
                      m.train_acc, m.val_acc);
        result.csv_text += row;
    }

    if (!options.metrics_csv.empty()) {
        std::ofstream out(options.metrics_csv);
        if (!out) throw io_error("train: cannot write " + options.metrics_csv);
        out << result.csv_text;
    }
    return result;
}

} // namespace convvit
