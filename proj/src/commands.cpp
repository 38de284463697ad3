#include "convvit/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>

#include <json.hpp>

#include "convvit/attention.hpp"
#include "convvit/io_util.hpp"
#include "convvit/model.hpp"
#include "convvit/random.hpp"
#include "convvit/training.hpp"

namespace convvit {

namespace {

std::string join_path(const std::string& dir, const std::string& name) {
    if (dir.empty() || dir == ".") return name;
    return dir.back() == '/' ? dir + name : dir + "/" + name;
}

double norm_rel_error(const Tensor& got, const Tensor& want) {
    double num = 0.0, den = 0.0;
    for (std::int64_t i = 0; i < got.size(); ++i) {
        num = std::max(num, std::abs(got[i] - want[i]));
        den = std::max(den, std::abs(want[i]));
    }
    return den == 0.0 ? num : num / den;
}

// The paper-shape deployment configuration used when no config file is given.
ModelConfig default_plan_config() {
    ModelConfig c;
    c.image_size = 32;
    c.image_channels = 3;
    c.patch_size = 4;
    c.embed_h = c.embed_w = 13;
    c.heads = 1;
    c.depth = 9;
    c.mlp_ratio = 2;
    c.positional = PositionalKind::Trainable;
    c.num_classes = 100;
    return c;
}

ModelConfig default_toy_config() {
    ModelConfig c;
    c.image_size = 16;
    c.image_channels = 1;
    c.patch_size = 4;
    c.embed_h = c.embed_w = 8;
    c.heads = 4;
    c.depth = 2;
    c.mlp_ratio = 2;
    c.positional = PositionalKind::Trainable;
    c.num_classes = 4;
    return c;
}

ModelConfig load_config_or(const RunConfig& run, ModelConfig fallback) {
    if (run.config_path.empty()) return fallback;
    return config_from_json(read_text_file(run.config_path));
}

void apply_precision(Model& model, Precision precision) {
    if (precision == Precision::Double) return;
    for (auto& [name, tensor] : named_parameters(model)) {
        (void)name;
        tensor->set_precision(precision);
    }
    model.pos.table.set_precision(precision);
}

// --- verify -------------------------------------------------------------------

struct SuiteResult {
    std::string name;
    int cases = 0;
    double max_error = 0.0;
    double threshold = 0.0;
    bool pass() const { return max_error < threshold; }
};

// Independent flatten-and-matmul evaluation used to check shared_forward.
Tensor matmul_oracle(const Tensor& bank, const Tensor* bias, int g, const Tensor& x) {
    const int t = x.extent(0), h = x.extent(1), w = x.extent(2);
    const int m_out = bank.extent(0);
    const int groups = t / g;
    Tensor out({groups, m_out});
    for (int j = 0; j < groups; ++j) {
        for (int m = 0; m < m_out; ++m) {
            double acc = bias ? (*bias)[m] : 0.0;
            for (int c = 0; c < g; ++c) {
                for (int i = 0; i < h; ++i) {
                    for (int l = 0; l < w; ++l) {
                        acc += x.at(j * g + c, i, l) * bank.at(m, c, i, l);
                    }
                }
            }
            out.at(j, m) = acc;
        }
    }
    return out;
}

SuiteResult run_linear_suite(std::uint64_t seed, bool inject_fault) {
    Rng rng(seed);
    SuiteResult suite{"linear_equivalence", 0, 0.0, 1e-12};
    const int group_sizes[] = {1, 2, 4};
    for (int trial = 0; trial < 100; ++trial) {
        const int g = group_sizes[rng.uniform_int(0, 2)];
        const int groups = rng.uniform_int(1, std::max(1, 16 / g));
        const int t = g * groups;
        const int h = rng.uniform_int(1, 8), w = rng.uniform_int(1, 8);
        const int m_out = rng.uniform_int(1, 12);

        SharedGroupedConv layer;
        layer.kernels = rng.normal_tensor({m_out, g, h, w});
        layer.group_size = g;
        layer.padding = Padding::Valid;
        if (trial % 2 == 0) layer.bias = rng.normal_tensor({m_out});
        Tensor x = rng.normal_tensor({t, h, w});

        Tensor want = matmul_oracle(layer.kernels, layer.bias ? &*layer.bias : nullptr, g, x);
        if (inject_fault && trial == 0) {
            layer.kernels[0] *= 1.0 + 1e-6;
        }
        Tensor got = shared_forward(layer, x).reshape({groups, m_out});

        double err = 0.0;
        for (std::int64_t i = 0; i < got.size(); ++i) {
            err = std::max(err, std::abs(got[i] - want[i]));
        }
        suite.max_error = std::max(suite.max_error, err);
        ++suite.cases;
    }
    return suite;
}

SuiteResult run_attention_suite(std::uint64_t seed) {
    Rng rng(seed);
    SuiteResult suite{"attention_equivalence", 0, 0.0, 1e-10};
    for (int heads : {1, 4, 16}) {
        for (int trial = 0; trial < 20; ++trial) {
            const int th = 8, tw = 8;
            const int grid = heads == 1 ? 1 : static_cast<int>(std::lround(std::sqrt(heads)));
            const int hh = th / grid, hw = tw / grid;
            const int t = rng.uniform_int(1, 7);

            Tensor bank_q = rng.normal_tensor({hh * hw, 1, hh, hw});
            Tensor bank_k = rng.normal_tensor({hh * hw, 1, hh, hw});
            Tensor bank_v = rng.normal_tensor({hh * hw, 1, hh, hw});
            const Tensor wq = embed_reference_weights(bank_q, heads, th, tw);
            const Tensor wk = embed_reference_weights(bank_k, heads, th, tw);
            const Tensor wv = embed_reference_weights(bank_v, heads, th, tw);

            ConvAttentionLayer layer = transport_weights(wq, wk, wv, heads, th, tw);
            Tensor x = rng.normal_tensor({t, th, tw});

            Tensor conv_out = conv_mhsa_forward(layer, x);
            Tensor ref_out = reference_mhsa(x.reshape({t, th * tw}), wq, wk, wv, heads);

            const std::vector<int> perm = head_permutation(heads, th, tw);
            Tensor ref_aligned({t, th * tw});
            for (int tk = 0; tk < t; ++tk) {
                for (int f = 0; f < th * tw; ++f) {
                    ref_aligned.at(tk, f) = ref_out.at(tk, perm[static_cast<std::size_t>(f)]);
                }
            }
            suite.max_error = std::max(
                suite.max_error, norm_rel_error(conv_out.reshape({t, th * tw}), ref_aligned));
            ++suite.cases;
        }
    }
    return suite;
}

// Direct valid correlation of square planes, the electronic reference.
Tensor valid_corr(const Tensor& input, const Tensor& kernel) {
    const int m = input.extent(0), n = kernel.extent(0);
    Tensor out({m - n + 1, m - n + 1});
    for (int p = 0; p <= m - n; ++p) {
        for (int q = 0; q <= m - n; ++q) {
            double acc = 0.0;
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < n; ++j) acc += input.at(p + i, q + j) * kernel.at(i, j);
            }
            out.at(p, q) = acc;
        }
    }
    return out;
}

Tensor tile_valid(const Tensor& tile, int n, int m) {
    Tensor out({m - n + 1, m - n + 1});
    for (int i = 0; i < out.extent(0); ++i) {
        for (int j = 0; j < out.extent(1); ++j) out.at(i, j) = tile.at(n - 1 + i, n - 1 + j);
    }
    return out;
}

SuiteResult run_optics_suite(std::uint64_t seed, TilingScheme scheme) {
    Rng rng(seed);
    const char* names[] = {"optics_kernel_tiling", "optics_channel_tiling", "optics_mixed_tiling"};
    SuiteResult suite{names[static_cast<int>(scheme)], 0, 0.0, 1e-9};
    DeviceSpec device{512, 1e6};

    for (int trial = 0; trial < 50; ++trial) {
        const int m = rng.uniform_int(4, 16);
        const int n = rng.uniform_int(1, m);
        double err = 0.0;

        if (scheme == TilingScheme::Kernel) {
            Tensor input = rng.normal_tensor({m, m});
            const int count = rng.uniform_int(1, 6);
            std::vector<Tensor> kernels, flipped;
            for (int g = 0; g < count; ++g) {
                kernels.push_back(rng.normal_tensor({n, n}));
                flipped.push_back(flip_plane(kernels.back()));
            }
            TilingResult r = kernel_tiling(input, flipped, device);
            for (int g = 0; g < count; ++g) {
                err = std::max(err, norm_rel_error(tile_valid(r.outputs[g], n, m),
                                                   valid_corr(input, kernels[g])));
            }
        } else if (scheme == TilingScheme::Channel) {
            const int roots[] = {1, 2, 3, 4};
            const int grid = roots[rng.uniform_int(0, 3)];
            const int n_c = grid * grid;
            std::vector<Tensor> inputs, kernels;
            for (int c = 0; c < n_c; ++c) {
                inputs.push_back(rng.normal_tensor({m, m}));
                kernels.push_back(rng.normal_tensor({n, n}));
            }
            TilingResult r = channel_tiling(inputs, kernels, device);
            Tensor want = valid_corr(inputs[0], kernels[0]);
            for (int c = 1; c < n_c; ++c) add_in_place(want, valid_corr(inputs[c], kernels[c]));
            err = norm_rel_error(tile_valid(r.outputs[0], n, m), want);
        } else {
            const int c_in = rng.uniform_int(1, 5);
            const int c_out = rng.uniform_int(1, 5);
            std::vector<Tensor> inputs;
            for (int c = 0; c < c_in; ++c) inputs.push_back(rng.normal_tensor({m, m}));
            Tensor kernels = rng.normal_tensor({c_out, c_in, n, n});
            TilingResult r = mixed_tiling(inputs, kernels, device);
            for (int o = 0; o < c_out; ++o) {
                Tensor want = Tensor::zeros({m - n + 1, m - n + 1});
                for (int c = 0; c < c_in; ++c) {
                    Tensor plane({n, n});
                    for (int i = 0; i < n; ++i) {
                        for (int j = 0; j < n; ++j) plane.at(i, j) = kernels.at(o, c, i, j);
                    }
                    add_in_place(want, valid_corr(inputs[c], plane));
                }
                err = std::max(err, norm_rel_error(tile_valid(r.outputs[o], n, m), want));
            }
        }
        suite.max_error = std::max(suite.max_error, err);
        ++suite.cases;
    }
    return suite;
}

} // namespace

int cmd_verify(const RunConfig& run) {
    ensure_directory(run.out_dir);
    std::vector<SuiteResult> suites;
    suites.push_back(run_linear_suite(run.seed, run.inject_fault));
    suites.push_back(run_attention_suite(run.seed + 1));
    suites.push_back(run_optics_suite(run.seed + 2, TilingScheme::Kernel));
    suites.push_back(run_optics_suite(run.seed + 3, TilingScheme::Channel));
    suites.push_back(run_optics_suite(run.seed + 4, TilingScheme::Mixed));

    bool all_pass = true;
    nlohmann::json report;
    report["schema_version"] = 1;
    report["suites"] = nlohmann::json::array();
    for (const SuiteResult& s : suites) {
        all_pass = all_pass && s.pass();
        report["suites"].push_back({{"name", s.name},
                                    {"cases", s.cases},
                                    {"max_error", s.max_error},
                                    {"threshold", s.threshold},
                                    {"pass", s.pass()}});
        std::printf("%-24s cases=%-4d max_error=%.3e threshold=%.0e %s\n", s.name.c_str(), s.cases,
                    s.max_error, s.threshold, s.pass() ? "ok" : "FAIL");
    }
    report["pass"] = all_pass;
    write_text_file(join_path(run.out_dir, "verify_report.json"), report.dump(2) + "\n");
    if (!all_pass) {
        for (const SuiteResult& s : suites) {
            if (!s.pass()) std::printf("verification failed in suite %s\n", s.name.c_str());
        }
    }
    return all_pass ? kExitOk : kExitFailure;
}

int cmd_plan(const RunConfig& run) {
    ensure_directory(run.out_dir);
    const ModelConfig config = load_config_or(run, default_plan_config());

    InferencePlan plan;
    try {
        plan = plan_inferences(config.tokens(), config.embed_h, config.embed_w, config.mlp_ratio,
                               config.depth, run.device());
    } catch (const infeasible_error& e) {
        std::printf("infeasible: %s\n", e.what());
        return kExitFailure;
    }

    const std::string table = inference_plan_table(plan, run.device());
    std::fputs(table.c_str(), stdout);
    write_text_file(join_path(run.out_dir, "plan.json"),
                    inference_plan_json(plan, run.device()) + "\n");
    write_text_file(join_path(run.out_dir, "plan.txt"), table);
    return kExitOk;
}

namespace {

ToyDataset dataset_from_name(const std::string& name, int image_size, int count,
                             std::uint64_t seed) {
    ToyDataset spec;
    if (name == "quadrant-blob") {
        spec.kind = ToyKind::QuadrantBlob;
    } else if (name == "two-class-texture") {
        spec.kind = ToyKind::TwoClassTexture;
    } else {
        throw config_error("unknown dataset " + name);
    }
    spec.image_size = image_size;
    spec.count = count;
    spec.seed = seed;
    return spec;
}

} // namespace

int cmd_train(const RunConfig& run) {
    ensure_directory(run.out_dir);
    const ModelConfig config = load_config_or(run, default_toy_config());
    if (config.image_channels != 1) {
        throw config_error("cmd_train: toy datasets are grayscale; set image_channels to 1");
    }

    ToyDataset train_spec =
        dataset_from_name(run.dataset, config.image_size, run.dataset_count, run.seed * 2 + 1);
    ToyDataset val_spec =
        dataset_from_name(run.dataset, config.image_size, run.val_count, run.seed * 2 + 2);
    if (train_spec.num_classes() != config.num_classes) {
        throw config_error("cmd_train: dataset classes do not match the model configuration");
    }

    Model model = init_model(config, run.seed);
    apply_precision(model, run.precision);

    ScheduleConfig schedule;
    schedule.base_lr = run.base_lr;
    schedule.warmup_epochs = run.warmup_epochs;
    schedule.total_epochs = run.epochs;

    TrainOptions options;
    options.epochs = run.epochs;
    options.batch_size = run.batch_size;
    options.seed = run.seed;
    options.metrics_csv = join_path(run.out_dir, "metrics.csv");

    TrainResult result = train(model, train_spec, val_spec, schedule, options);
    save_checkpoint(join_path(run.out_dir, "model.ckpt"), model, run.seed, run.epochs);

    const EpochMetrics& last = result.log.back();
    std::printf("trained %d epochs: train_acc=%.4f val_acc=%.4f (metrics.csv, model.ckpt)\n",
                options.epochs, last.train_acc, last.val_acc);
    return kExitOk;
}

int cmd_attnmap(const RunConfig& run) {
    ensure_directory(run.out_dir);
    if (run.checkpoint_path.empty()) throw config_error("cmd_attnmap: --checkpoint is required");
    Model model = load_checkpoint(run.checkpoint_path);
    apply_precision(model, run.precision);
    const ModelConfig& c = model.config;

    Tensor image;
    if (!run.image_path.empty()) {
        Tensor gray = read_pgm(run.image_path);
        if (gray.extent(1) != c.image_size || gray.extent(2) != c.image_size) {
            throw config_error("cmd_attnmap: image extent does not match the model");
        }
        image = Tensor({c.image_channels, c.image_size, c.image_size});
        for (int ch = 0; ch < c.image_channels; ++ch) {
            std::copy(gray.data(), gray.data() + gray.size(),
                      image.data() + static_cast<std::int64_t>(ch) * gray.extent(1) * gray.extent(2));
        }
    } else {
        ToyDataset spec;
        spec.image_size = c.image_size;
        spec.count = 1;
        spec.seed = run.seed;
        image = generate_dataset(spec)[0].image;
        if (c.image_channels != 1) {
            throw config_error("cmd_attnmap: provide --image for multi-channel models");
        }
    }

    std::vector<AttentionTrace> traces;
    forward(model, image, &traces);

    for (std::size_t layer = 0; layer < traces.size(); ++layer) {
        const std::string stem = join_path(run.out_dir, "layer" + std::to_string(layer));
        const int heads = traces[layer].scores.extent(0);
        const int t = traces[layer].scores.extent(1);
        export_trace_csv(traces[layer], stem + "_trace.csv");
        (void)heads;
        (void)t;
        Tensor map = attention_heatmap(traces[layer], c.patch_grid(), c.patch_size);
        write_matrix_csv(stem + "_heatmap.csv", map);
        write_pgm(stem + "_heatmap.pgm", map);
    }
    std::printf("wrote %zu attention layer exports to %s\n", traces.size(), run.out_dir.c_str());
    return kExitOk;
}

// --- simulate ------------------------------------------------------------------

namespace {

// Frequency-domain operands of one block, kernels flipped so the bench's
// true convolution realizes the layers' correlation convention.
struct OpticalBlock {
    std::vector<Spectrum> wq, wk, wv;                 // [h*w]
    std::vector<Spectrum> expand;                     // [r*h*w]
    std::vector<std::vector<Spectrum>> reduce;        // [h*w][r]
};

struct OpticalModel {
    int h = 0, w = 0;
    int rows = 0, cols = 0;  // transform extent for full-extent valid dots
    std::vector<OpticalBlock> blocks;
};

Tensor bank_plane(const Tensor& bank, int m, int c) {
    const int kh = bank.extent(2), kw = bank.extent(3);
    Tensor plane({kh, kw});
    for (int i = 0; i < kh; ++i) {
        for (int j = 0; j < kw; ++j) plane.at(i, j) = bank.at(m, c, i, j);
    }
    return plane;
}

OpticalModel build_optical_model(const Model& model) {
    const int h = model.config.embed_h, w = model.config.embed_w;
    OpticalModel om;
    om.h = h;
    om.w = w;
    om.rows = 2 * h - 1;
    om.cols = 2 * w - 1;

    for (const EncoderBlock& block : model.blocks) {
        OpticalBlock ob;
        auto bank_spectra = [&](const Tensor& bank) {
            std::vector<Spectrum> specs;
            specs.reserve(static_cast<std::size_t>(bank.extent(0)));
            for (int m = 0; m < bank.extent(0); ++m) {
                specs.push_back(fourier_forward(flip_plane(bank_plane(bank, m, 0)), om.rows, om.cols));
            }
            return specs;
        };
        ob.wq = bank_spectra(block.attn.wq.shared_bank.kernels);
        ob.wk = bank_spectra(block.attn.wk.shared_bank.kernels);
        ob.wv = bank_spectra(block.attn.wv.shared_bank.kernels);
        ob.expand = bank_spectra(block.mlp.expand.kernels);
        const Tensor& reduce = block.mlp.reduce.kernels;
        ob.reduce.resize(static_cast<std::size_t>(reduce.extent(0)));
        for (int m = 0; m < reduce.extent(0); ++m) {
            for (int c = 0; c < reduce.extent(1); ++c) {
                ob.reduce[static_cast<std::size_t>(m)].push_back(
                    fourier_forward(flip_plane(bank_plane(reduce, m, c)), om.rows, om.cols));
            }
        }
        om.blocks.push_back(std::move(ob));
    }
    return om;
}

// Full-extent valid value: centre of the true convolution of the padded
// operands, i.e. the token/kernel dot product as the camera sees it.
double bench_dot(const Spectrum& a, const Spectrum& b, const OpticalModel& om) {
    Tensor field = fourier_product_inverse(a, b, om.rows, om.cols);
    return field.at(om.h - 1, om.w - 1);
}

Spectrum token_spectrum(const Tensor& x, int token, const OpticalModel& om, bool flip) {
    const int h = om.h, w = om.w;
    Tensor plane({h, w});
    std::copy(x.data() + static_cast<std::int64_t>(token) * h * w,
              x.data() + static_cast<std::int64_t>(token + 1) * h * w, plane.data());
    if (flip) plane = flip_plane(plane);
    return fourier_forward(plane, om.rows, om.cols);
}

// Forward pass with every per-block convolution routed through the Fourier
// path; nonlinearities, norms and the (unplanned) tokenizer and classifier
// stay electronic.
Tensor optical_forward(const Model& model, const OpticalModel& om, const Tensor& image,
                       const InferencePlan& plan, std::int64_t& inference_count) {
    const ModelConfig& c = model.config;
    const int t = c.tokens();
    const int h = c.embed_h, w = c.embed_w;
    const int hw = h * w;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(hw));

    Tensor tokens = tokenize(model, image);
    Tensor x({t, h, w});
    std::copy(model.class_token.data(), model.class_token.data() + hw, x.data());
    std::copy(tokens.data(), tokens.data() + tokens.size(), x.data() + hw);
    x = add_positional(x, model.pos);

    for (std::size_t b = 0; b < om.blocks.size(); ++b) {
        const EncoderBlock& block = model.blocks[b];
        const OpticalBlock& ob = om.blocks[b];

        Tensor n1 = layer_norm(x, block.norm1_gain, block.norm1_offset);

        // QKV projections: one spectrum per token, one dot per output node.
        std::vector<Spectrum> sx;
        sx.reserve(static_cast<std::size_t>(t));
        for (int tk = 0; tk < t; ++tk) sx.push_back(token_spectrum(n1, tk, om, false));

        Tensor q({t, h, w}), k({t, h, w}), v({t, h, w});
        for (int tk = 0; tk < t; ++tk) {
            for (int m = 0; m < hw; ++m) {
                q[static_cast<std::int64_t>(tk) * hw + m] = bench_dot(sx[tk], ob.wq[m], om);
                k[static_cast<std::int64_t>(tk) * hw + m] = bench_dot(sx[tk], ob.wk[m], om);
                v[static_cast<std::int64_t>(tk) * hw + m] = bench_dot(sx[tk], ob.wv[m], om);
            }
        }
        if (block.attn.wq.shared_bank.bias) {
            for (int tk = 0; tk < t; ++tk) {
                for (int m = 0; m < hw; ++m) {
                    q[static_cast<std::int64_t>(tk) * hw + m] += (*block.attn.wq.shared_bank.bias)[m];
                    k[static_cast<std::int64_t>(tk) * hw + m] += (*block.attn.wk.shared_bank.bias)[m];
                    v[static_cast<std::int64_t>(tk) * hw + m] += (*block.attn.wv.shared_bank.bias)[m];
                }
            }
        }

        // All-to-all scores: queries against flipped keys.
        std::vector<Spectrum> sq, skf;
        sq.reserve(static_cast<std::size_t>(t));
        skf.reserve(static_cast<std::size_t>(t));
        for (int tk = 0; tk < t; ++tk) {
            sq.push_back(token_spectrum(q, tk, om, false));
            skf.push_back(token_spectrum(k, tk, om, true));
        }
        Tensor scores({t, t});
        for (int i = 0; i < t; ++i) {
            for (int j = 0; j < t; ++j) {
                scores.at(i, j) = bench_dot(sq[i], skf[j], om) * inv_sqrt_d;
            }
        }
        Tensor a = softmax(scores, 1);

        // Weighted sum: pointwise kernels scale the value spectra, which
        // superpose before one inverse transform per output token.
        std::vector<Spectrum> sv;
        sv.reserve(static_cast<std::size_t>(t));
        for (int tk = 0; tk < t; ++tk) {
            Tensor plane({h, w});
            std::copy(v.data() + static_cast<std::int64_t>(tk) * hw,
                      v.data() + static_cast<std::int64_t>(tk + 1) * hw, plane.data());
            sv.push_back(fourier_forward(plane, h, w));
        }
        Tensor attn_out({t, h, w});
        for (int i = 0; i < t; ++i) {
            Spectrum acc(sv[0].size(), 0.0);
            for (int j = 0; j < t; ++j) {
                const double weight = a.at(i, j);
                for (std::size_t s = 0; s < acc.size(); ++s) acc[s] += weight * sv[j][s];
            }
            Tensor plane = fourier_inverse(acc, h, w);
            std::copy(plane.data(), plane.data() + hw,
                      attn_out.data() + static_cast<std::int64_t>(i) * hw);
        }

        add_in_place(x, attn_out);
        Tensor n2 = layer_norm(x, block.norm2_gain, block.norm2_offset);

        // MLP expand.
        const int r = block.mlp.ratio;
        std::vector<Spectrum> sn2;
        sn2.reserve(static_cast<std::size_t>(t));
        for (int tk = 0; tk < t; ++tk) sn2.push_back(token_spectrum(n2, tk, om, false));
        Tensor hidden({t * r, h, w});
        for (int tk = 0; tk < t; ++tk) {
            for (int u = 0; u < r * hw; ++u) {
                double val = bench_dot(sn2[tk], ob.expand[u], om);
                if (block.mlp.expand.bias) val += (*block.mlp.expand.bias)[u];
                hidden[(static_cast<std::int64_t>(tk) * r * hw) + u] = val;
            }
        }
        hidden = gelu(hidden);

        // MLP reduce: each output sums its group's per-channel dots.
        std::vector<Spectrum> sh;
        sh.reserve(static_cast<std::size_t>(t * r));
        for (int chn = 0; chn < t * r; ++chn) sh.push_back(token_spectrum(hidden, chn, om, false));
        Tensor mlp_out({t, h, w});
        for (int tk = 0; tk < t; ++tk) {
            for (int m = 0; m < hw; ++m) {
                double acc = block.mlp.reduce.bias ? (*block.mlp.reduce.bias)[m] : 0.0;
                for (int chn = 0; chn < r; ++chn) {
                    acc += bench_dot(sh[tk * r + chn], ob.reduce[m][chn], om);
                }
                mlp_out[static_cast<std::int64_t>(tk) * hw + m] = acc;
            }
        }
        add_in_place(x, mlp_out);

        inference_count += plan.qkv + plan.scores + plan.weighted_sum + plan.mlp;
    }

    Tensor normed = layer_norm(x, model.final_gain, model.final_offset);
    Tensor cls = Tensor::from_data({1, h, w},
                                   std::vector<double>(normed.data(), normed.data() + hw));
    return shared_forward(model.head, cls).reshape({c.num_classes});
}

} // namespace

int cmd_simulate(const RunConfig& run) {
    ensure_directory(run.out_dir);

    Model model = [&] {
        if (!run.checkpoint_path.empty()) return load_checkpoint(run.checkpoint_path);
        // Without a checkpoint, simulate a freshly initialized model.
        return init_model(load_config_or(run, default_plan_config()), run.seed);
    }();
    const ModelConfig& c = model.config;
    if (c.heads != 1 || !c.weight_sharing || c.qkv_padding != Padding::Valid) {
        throw config_error(
            "cmd_simulate: the optical deployment shape is single-head shared valid convolution");
    }

    InferencePlan plan;
    try {
        plan = plan_inferences(c.tokens(), c.embed_h, c.embed_w, c.mlp_ratio, c.depth,
                               run.device());
    } catch (const infeasible_error& e) {
        std::printf("infeasible: %s\n", e.what());
        return kExitFailure;
    }

    const OpticalModel om = build_optical_model(model);

    std::vector<Tensor> images;
    if (!run.image_path.empty()) {
        Tensor gray = read_pgm(run.image_path);
        Tensor image({c.image_channels, c.image_size, c.image_size});
        if (gray.extent(1) != c.image_size || gray.extent(2) != c.image_size) {
            throw config_error("cmd_simulate: image extent does not match the model");
        }
        for (int ch = 0; ch < c.image_channels; ++ch) {
            std::copy(gray.data(), gray.data() + gray.size(),
                      image.data() + static_cast<std::int64_t>(ch) * c.image_size * c.image_size);
        }
        images.push_back(std::move(image));
    } else {
        Rng rng(run.seed);
        for (int i = 0; i < run.random_inputs; ++i) {
            images.push_back(rng.normal_tensor({c.image_channels, c.image_size, c.image_size}));
        }
    }

    double worst_dev = 0.0;
    int argmax_matches = 0;
    std::int64_t simulated = 0;
    for (const Tensor& image : images) {
        Tensor electronic = forward(model, image);
        std::int64_t count = 0;
        Tensor optical = optical_forward(model, om, image, plan, count);
        simulated = count;
        worst_dev = std::max(worst_dev, norm_rel_error(optical, electronic));
        if (argmax(optical) == argmax(electronic)) ++argmax_matches;
    }

    const bool pass = worst_dev < 1e-6 && argmax_matches == static_cast<int>(images.size()) &&
                      simulated == plan.total;
    nlohmann::json report;
    report["schema_version"] = 1;
    report["inputs"] = images.size();
    report["max_rel_logit_deviation"] = worst_dev;
    report["argmax_matches"] = argmax_matches;
    report["plan_total"] = plan.total;
    report["simulated_inferences"] = simulated;
    report["latency_seconds"] = plan.latency_seconds;
    report["pass"] = pass;
    write_text_file(join_path(run.out_dir, "simulate_report.json"), report.dump(2) + "\n");

    std::printf("simulated %zu input(s): max_rel_dev=%.3e argmax_matches=%d/%zu inferences=%lld\n",
                images.size(), worst_dev, argmax_matches, images.size(),
                static_cast<long long>(simulated));
    return pass ? kExitOk : kExitFailure;
}

} // namespace convvit
