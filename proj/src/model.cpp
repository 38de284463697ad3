#include "convvit/model.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "convvit/random.hpp"

namespace convvit {

namespace {
constexpr double kInitStd = 0.02;
constexpr char kCheckpointMagic[8] = {'C', 'V', 'V', 'I', 'T', 'C', 'P', '1'};
} // namespace

void ModelConfig::validate() const {
    if (image_size < 1 || patch_size < 1 || image_size % patch_size != 0) {
        throw config_error("config: image size must be a positive multiple of the patch size");
    }
    if (image_channels < 1) throw config_error("config: image channels must be positive");
    if (embed_h != embed_w) throw config_error("config: embedding geometry must be square");
    if (embed_h < 1) throw config_error("config: embedding extent must be positive");
    if (depth < 1) throw config_error("config: depth must be positive");
    if (mlp_ratio < 1) throw config_error("config: mlp ratio must be positive");
    if (num_classes < 2) throw config_error("config: need at least two classes");
    const int grid = heads == 1 ? 1 : static_cast<int>(std::lround(std::sqrt(heads)));
    if (grid * grid != heads) throw config_error("config: heads must be 1 or a perfect square");
    if (embed_h % grid != 0 || embed_w % grid != 0) {
        throw config_error("config: head grid must tile the embedding");
    }
}

ModelConfig config_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw io_error(std::string("config: invalid JSON: ") + e.what());
    }
    ModelConfig c;
    try {
        c.image_size = j.at("image_size").get<int>();
        c.image_channels = j.at("image_channels").get<int>();
        c.patch_size = j.at("patch_size").get<int>();
        c.embed_h = j.at("embed_h").get<int>();
        c.embed_w = j.at("embed_w").get<int>();
        c.heads = j.at("heads").get<int>();
        c.depth = j.at("depth").get<int>();
        c.mlp_ratio = j.at("mlp_ratio").get<int>();
        const std::string pos = j.at("positional").get<std::string>();
        if (pos == "trainable") {
            c.positional = PositionalKind::Trainable;
        } else if (pos == "sinusoidal") {
            c.positional = PositionalKind::Sinusoidal;
        } else {
            throw config_error("config: positional must be trainable or sinusoidal");
        }
        c.num_classes = j.at("num_classes").get<int>();
        c.weight_sharing = j.at("weight_sharing").get<bool>();
        const std::string pad = j.at("qkv_padding").get<std::string>();
        if (pad == "valid") {
            c.qkv_padding = Padding::Valid;
        } else if (pad == "same") {
            c.qkv_padding = Padding::Same;
        } else {
            throw config_error("config: qkv_padding must be valid or same");
        }
        c.bias = j.at("bias").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw io_error(std::string("config: missing field: ") + e.what());
    }
    c.validate();
    return c;
}

std::string config_to_json(const ModelConfig& c) {
    nlohmann::json j;
    j["image_size"] = c.image_size;
    j["image_channels"] = c.image_channels;
    j["patch_size"] = c.patch_size;
    j["embed_h"] = c.embed_h;
    j["embed_w"] = c.embed_w;
    j["heads"] = c.heads;
    j["depth"] = c.depth;
    j["mlp_ratio"] = c.mlp_ratio;
    j["positional"] = c.positional == PositionalKind::Trainable ? "trainable" : "sinusoidal";
    j["num_classes"] = c.num_classes;
    j["weight_sharing"] = c.weight_sharing;
    j["qkv_padding"] = c.qkv_padding == Padding::Valid ? "valid" : "same";
    j["bias"] = c.bias;
    return j.dump(2);
}

Tensor sinusoidal_table(int tokens, int embed_h, int embed_w) {
    const int dim = embed_h * embed_w;
    Tensor table({tokens, embed_h, embed_w});
    for (int pos = 0; pos < tokens; ++pos) {
        for (int f = 0; f < dim; ++f) {
            const int pair = f / 2;
            const double angle =
                pos * std::exp(-std::log(10000.0) * (2.0 * pair / static_cast<double>(dim)));
            table[static_cast<std::int64_t>(pos) * dim + f] =
                (f % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return table;
}

std::pair<int, int> tokenizer_geometry(int patch_size, int embed) {
    if (patch_size == 1) return {1, embed};
    const int stride = embed / patch_size;
    if (stride < 1) throw config_error("tokenizer: embedding smaller than the patch grid");
    const int kernel = embed - (patch_size - 1) * stride;
    if (kernel < 1) throw config_error("tokenizer: no kernel fits the requested embedding");
    return {stride, kernel};
}

namespace {

SharedGroupedConv make_shared_layer(Rng& rng, int m_out, int g, int kh, int kw, bool bias,
                                    Padding padding) {
    SharedGroupedConv layer;
    layer.kernels = rng.truncated_normal_tensor({m_out, g, kh, kw}, kInitStd);
    layer.group_size = g;
    layer.padding = padding;
    if (bias) layer.bias = Tensor::zeros({m_out});
    return layer;
}

QkvProjection make_qkv(Rng& rng, const ModelConfig& config, int head_h, int head_w) {
    QkvProjection proj;
    const bool valid = config.qkv_padding == Padding::Valid;
    const int m_out = valid ? head_h * head_w : 1;
    const int kh = valid ? head_h : config.patch_size;
    const int kw = valid ? head_w : config.patch_size;

    if (config.weight_sharing) {
        proj.shared = true;
        proj.shared_bank = make_shared_layer(rng, m_out, 1, kh, kw, config.bias, config.qkv_padding);
    } else {
        proj.shared = false;
        const int t = config.tokens();
        proj.unshared_bank.kernels = rng.truncated_normal_tensor({t * m_out, 1, kh, kw}, kInitStd);
        proj.unshared_bank.group_size = 1;
        proj.unshared_bank.out_per_group = m_out;
        proj.unshared_bank.padding = config.qkv_padding;
        if (config.bias) proj.unshared_bank.bias = Tensor::zeros({t * m_out});
    }
    return proj;
}

} // namespace

Model init_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Model model;
    model.config = config;
    Rng rng(seed);

    const int h = config.embed_h, w = config.embed_w;
    const auto [stride, kernel] = tokenizer_geometry(config.patch_size, h);
    model.tokenizer_stride = stride;
    model.tokenizer_kernel = kernel;
    model.tokenizer_kernels =
        rng.truncated_normal_tensor({config.image_channels, 1, kernel, kernel}, kInitStd);
    if (config.bias) model.tokenizer_bias = Tensor::zeros({1});

    model.class_token = rng.truncated_normal_tensor({h, w}, kInitStd);

    model.pos.kind = config.positional;
    if (config.positional == PositionalKind::Trainable) {
        model.pos.table = rng.truncated_normal_tensor({config.tokens(), h, w}, kInitStd);
    } else {
        model.pos.table = sinusoidal_table(config.tokens(), h, w);
    }

    model.blocks.resize(static_cast<std::size_t>(config.depth));
    for (EncoderBlock& block : model.blocks) {
        block.norm1_gain = Tensor::full({h, w}, 1.0);
        block.norm1_offset = Tensor::zeros({h, w});
        init_attention_geometry(block.attn, config.heads, h, w);
        block.attn.wq = make_qkv(rng, config, block.attn.head_h, block.attn.head_w);
        block.attn.wk = make_qkv(rng, config, block.attn.head_h, block.attn.head_w);
        block.attn.wv = make_qkv(rng, config, block.attn.head_h, block.attn.head_w);
        block.norm2_gain = Tensor::full({h, w}, 1.0);
        block.norm2_offset = Tensor::zeros({h, w});
        block.mlp.ratio = config.mlp_ratio;
        block.mlp.expand =
            make_shared_layer(rng, config.mlp_ratio * h * w, 1, h, w, config.bias, Padding::Valid);
        block.mlp.reduce =
            make_shared_layer(rng, h * w, config.mlp_ratio, h, w, config.bias, Padding::Valid);
    }

    model.final_gain = Tensor::full({h, w}, 1.0);
    model.final_offset = Tensor::zeros({h, w});
    model.head = make_shared_layer(rng, config.num_classes, 1, h, w, config.bias, Padding::Valid);
    return model;
}

Tensor tokenize(const Model& model, const Tensor& image) {
    const ModelConfig& c = model.config;
    if (image.rank() != 3 || image.extent(0) != c.image_channels ||
        image.extent(1) != c.image_size || image.extent(2) != c.image_size) {
        throw dimension_error("tokenize: image does not match the configuration");
    }
    const int grid = c.patch_grid();
    const int p = c.patch_size;
    Tensor tokens({grid * grid, c.embed_h, c.embed_w}, image.precision());

    for (int gy = 0; gy < grid; ++gy) {
        for (int gx = 0; gx < grid; ++gx) {
            Tensor patch({c.image_channels, p, p}, image.precision());
            for (int ch = 0; ch < c.image_channels; ++ch) {
                for (int i = 0; i < p; ++i) {
                    for (int j = 0; j < p; ++j) {
                        patch.at(ch, i, j) = image.at(ch, gy * p + i, gx * p + j);
                    }
                }
            }
            Tensor embedded = conv_transpose2d(patch, model.tokenizer_kernels, model.tokenizer_stride);
            const double b = model.tokenizer_bias ? (*model.tokenizer_bias)[0] : 0.0;
            double* dst = tokens.data() +
                          static_cast<std::int64_t>(gy * grid + gx) * c.embed_h * c.embed_w;
            for (std::int64_t i = 0; i < embedded.size(); ++i) dst[i] = embedded[i] + b;
        }
    }
    tokens.quantize();
    return tokens;
}

Tensor add_positional(const Tensor& x, const PositionalEncoding& enc) {
    return add(x, enc.table);
}

namespace {

// Expand, activate, reduce; optionally keeps the intermediates.
Tensor mlp_forward(const ConvMlp& mlp, const Tensor& x, Tensor* hidden_raw_out,
                   Tensor* hidden_act_out) {
    const int t = x.extent(0), h = x.extent(1), w = x.extent(2);
    Tensor hidden_raw = shared_forward(mlp.expand, x).reshape({t * mlp.ratio, h, w});
    Tensor hidden_act = gelu(hidden_raw);
    Tensor out = shared_forward(mlp.reduce, hidden_act).reshape({t, h, w});
    if (hidden_raw_out) *hidden_raw_out = std::move(hidden_raw);
    if (hidden_act_out) *hidden_act_out = std::move(hidden_act);
    return out;
}

Tensor attention_cached(const ConvAttentionLayer& layer, const Tensor& x, AttentionTrace* trace,
                        BlockCache* cache) {
    const int t = x.extent(0);
    std::vector<Tensor> parts = split_heads(x, layer.heads);
    if (trace) trace->scores = Tensor({layer.heads, t, t}, x.precision());

    std::vector<Tensor> outputs;
    outputs.reserve(parts.size());
    for (int head = 0; head < layer.heads; ++head) {
        const Tensor& xs = parts[static_cast<std::size_t>(head)];
        Tensor q = project_tokens(layer.wq, xs);
        Tensor k = project_tokens(layer.wk, xs);
        Tensor v = project_tokens(layer.wv, xs);
        Tensor s = attention_scores(q, k, layer.scale_dim);
        Tensor a = softmax(s, 1);
        if (trace) {
            std::copy(a.data(), a.data() + a.size(),
                      trace->scores.data() + static_cast<std::int64_t>(head) * t * t);
        }
        outputs.push_back(weighted_values(a, v));
        if (cache) {
            cache->q.push_back(std::move(q));
            cache->k.push_back(std::move(k));
            cache->v.push_back(std::move(v));
            cache->attn.push_back(std::move(a));
        }
    }
    if (cache) cache->head_in = std::move(parts);
    return merge_heads(outputs, layer.token_h, layer.token_w);
}

} // namespace

Tensor encoder_block(const EncoderBlock& block, const Tensor& x, AttentionTrace* trace,
                     BlockCache* cache) {
    Tensor n1 = layer_norm(x, block.norm1_gain, block.norm1_offset);
    Tensor attn_out = attention_cached(block.attn, n1, trace, cache);
    Tensor x_mid = add(x, attn_out);
    Tensor n2 = layer_norm(x_mid, block.norm2_gain, block.norm2_offset);

    Tensor hidden_raw, hidden_act;
    Tensor mlp_out = mlp_forward(block.mlp, n2, cache ? &hidden_raw : nullptr,
                                 cache ? &hidden_act : nullptr);
    Tensor x_out = add(x_mid, mlp_out);

    if (cache) {
        cache->x_in = x;
        cache->n1 = std::move(n1);
        cache->attn_out = std::move(attn_out);
        cache->x_mid = x_mid;
        cache->n2 = std::move(n2);
        cache->hidden_raw = std::move(hidden_raw);
        cache->hidden_act = std::move(hidden_act);
        cache->mlp_out = std::move(mlp_out);
        cache->x_out = x_out;
    }
    return x_out;
}

Tensor forward(const Model& model, const Tensor& image, std::vector<AttentionTrace>* traces,
               ForwardCache* cache) {
    const ModelConfig& c = model.config;
    const int t = c.tokens();
    const int h = c.embed_h, w = c.embed_w;

    Tensor tokens = tokenize(model, image);

    Tensor x({t, h, w}, image.precision());
    std::copy(model.class_token.data(), model.class_token.data() + model.class_token.size(),
              x.data());
    std::copy(tokens.data(), tokens.data() + tokens.size(),
              x.data() + static_cast<std::int64_t>(h) * w);
    x = add_positional(x, model.pos);

    if (cache) {
        cache->patches.clear();
        const int grid = c.patch_grid();
        const int p = c.patch_size;
        for (int gy = 0; gy < grid; ++gy) {
            for (int gx = 0; gx < grid; ++gx) {
                Tensor patch({c.image_channels, p, p}, image.precision());
                for (int ch = 0; ch < c.image_channels; ++ch) {
                    for (int i = 0; i < p; ++i) {
                        for (int j = 0; j < p; ++j) {
                            patch.at(ch, i, j) = image.at(ch, gy * p + i, gx * p + j);
                        }
                    }
                }
                cache->patches.push_back(std::move(patch));
            }
        }
        cache->embedded = x;
        cache->blocks.assign(static_cast<std::size_t>(c.depth), BlockCache{});
    }
    if (traces) traces->assign(static_cast<std::size_t>(c.depth), AttentionTrace{});

    for (int b = 0; b < c.depth; ++b) {
        x = encoder_block(model.blocks[static_cast<std::size_t>(b)], x,
                          traces ? &(*traces)[static_cast<std::size_t>(b)] : nullptr,
                          cache ? &cache->blocks[static_cast<std::size_t>(b)] : nullptr);
    }

    Tensor normed = layer_norm(x, model.final_gain, model.final_offset);
    Tensor cls = Tensor::from_data({1, h, w},
                                   std::vector<double>(normed.data(), normed.data() + h * w),
                                   normed.precision());
    Tensor logits = shared_forward(model.head, cls).reshape({c.num_classes});

    if (cache) {
        cache->final_in = std::move(x);
        cache->final_norm = std::move(normed);
        cache->logits = logits;
    }
    return logits;
}

Tensor attention_heatmap(const AttentionTrace& trace, int patch_grid, int patch_size) {
    if (trace.scores.rank() != 3) throw state_error("attention_heatmap: trace not collected");
    const int heads = trace.scores.extent(0);
    const int t = trace.scores.extent(1);
    if (t != patch_grid * patch_grid + 1) {
        throw dimension_error("attention_heatmap: trace size does not match the patch grid");
    }

    // Class-token query row, averaged over heads, class column dropped.
    std::vector<double> row(static_cast<std::size_t>(t - 1), 0.0);
    for (int head = 0; head < heads; ++head) {
        for (int j = 1; j < t; ++j) {
            row[static_cast<std::size_t>(j - 1)] += trace.scores.at(head, 0, j) / heads;
        }
    }

    double lo = row[0], hi = row[0];
    for (double v : row) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }

    const int s = patch_grid * patch_size;
    Tensor map = Tensor::zeros({s, s});
    if (hi > lo) {
        for (int gy = 0; gy < patch_grid; ++gy) {
            for (int gx = 0; gx < patch_grid; ++gx) {
                const double v = (row[static_cast<std::size_t>(gy * patch_grid + gx)] - lo) / (hi - lo);
                for (int i = 0; i < patch_size; ++i) {
                    for (int j = 0; j < patch_size; ++j) {
                        map.at(gy * patch_size + i, gx * patch_size + j) = v;
                    }
                }
            }
        }
    }
    return map;
}

namespace {

void push_projection(std::vector<std::pair<std::string, Tensor*>>& out, const std::string& prefix,
                     QkvProjection& proj) {
    if (proj.shared) {
        out.emplace_back(prefix + ".kernels", &proj.shared_bank.kernels);
        if (proj.shared_bank.bias) out.emplace_back(prefix + ".bias", &*proj.shared_bank.bias);
    } else {
        out.emplace_back(prefix + ".kernels", &proj.unshared_bank.kernels);
        if (proj.unshared_bank.bias) out.emplace_back(prefix + ".bias", &*proj.unshared_bank.bias);
    }
}

} // namespace

std::vector<std::pair<std::string, Tensor*>> named_parameters(Model& model) {
    std::vector<std::pair<std::string, Tensor*>> out;
    out.emplace_back("tokenizer.kernels", &model.tokenizer_kernels);
    if (model.tokenizer_bias) out.emplace_back("tokenizer.bias", &*model.tokenizer_bias);
    out.emplace_back("class_token", &model.class_token);
    if (model.pos.kind == PositionalKind::Trainable) {
        out.emplace_back("pos.table", &model.pos.table);
    }
    for (std::size_t b = 0; b < model.blocks.size(); ++b) {
        EncoderBlock& block = model.blocks[b];
        const std::string p = "block" + std::to_string(b);
        out.emplace_back(p + ".norm1.gain", &block.norm1_gain);
        out.emplace_back(p + ".norm1.offset", &block.norm1_offset);
        push_projection(out, p + ".attn.wq", block.attn.wq);
        push_projection(out, p + ".attn.wk", block.attn.wk);
        push_projection(out, p + ".attn.wv", block.attn.wv);
        out.emplace_back(p + ".norm2.gain", &block.norm2_gain);
        out.emplace_back(p + ".norm2.offset", &block.norm2_offset);
        out.emplace_back(p + ".mlp.expand.kernels", &block.mlp.expand.kernels);
        if (block.mlp.expand.bias) out.emplace_back(p + ".mlp.expand.bias", &*block.mlp.expand.bias);
        out.emplace_back(p + ".mlp.reduce.kernels", &block.mlp.reduce.kernels);
        if (block.mlp.reduce.bias) out.emplace_back(p + ".mlp.reduce.bias", &*block.mlp.reduce.bias);
    }
    out.emplace_back("final_norm.gain", &model.final_gain);
    out.emplace_back("final_norm.offset", &model.final_offset);
    out.emplace_back("head.kernels", &model.head.kernels);
    if (model.head.bias) out.emplace_back("head.bias", &*model.head.bias);
    return out;
}

std::int64_t parameter_count(const Model& model) {
    std::int64_t n = 0;
    for (const auto& [name, tensor] : named_parameters(const_cast<Model&>(model))) {
        (void)name;
        n += tensor->size();
    }
    return n;
}

// --- checkpoint I/O -----------------------------------------------------------

namespace {

template <typename T>
void write_pod(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& what) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
        throw io_error("checkpoint: truncated while reading " + what);
    }
    return v;
}

void write_tensor(std::ofstream& out, const std::string& name, const Tensor& t) {
    write_pod<std::uint64_t>(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (int d = 0; d < t.rank(); ++d) write_pod<std::uint64_t>(out, t.extent(d));
    write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(t.size()));
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(sizeof(double) * t.size()));
}

} // namespace

void save_checkpoint(const std::string& path, const Model& model, std::uint64_t seed, int epoch) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("checkpoint: cannot open " + path + " for writing");

    nlohmann::json header;
    header["format_version"] = 1;
    header["config"] = nlohmann::json::parse(config_to_json(model.config));
    header["seed"] = seed;
    header["epoch"] = epoch;
    const std::string header_text = header.dump();

    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    write_pod<std::uint32_t>(out, 1);
    write_pod<std::uint64_t>(out, header_text.size());
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));

    Model& mutable_model = const_cast<Model&>(model);
    auto params = named_parameters(mutable_model);
    const bool store_pos = model.pos.kind == PositionalKind::Sinusoidal;
    write_pod<std::uint64_t>(out, params.size() + (store_pos ? 1 : 0));
    for (const auto& [name, tensor] : params) write_tensor(out, name, *tensor);
    if (store_pos) write_tensor(out, "pos.table", model.pos.table);
    if (!out) throw io_error("checkpoint: write failed for " + path);
}

Model load_checkpoint(const std::string& path, std::uint64_t* seed, int* epoch) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("checkpoint: cannot open " + path);

    char magic[8];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
        throw io_error("checkpoint: bad magic");
    }
    const auto version = read_pod<std::uint32_t>(in, "version");
    if (version != 1) throw io_error("checkpoint: unsupported version");

    const auto header_len = read_pod<std::uint64_t>(in, "header length");
    std::string header_text(header_len, '\0');
    if (!in.read(header_text.data(), static_cast<std::streamsize>(header_len))) {
        throw io_error("checkpoint: truncated header");
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_text);
    } catch (const nlohmann::json::exception& e) {
        throw io_error(std::string("checkpoint: bad header JSON: ") + e.what());
    }
    const ModelConfig config = config_from_json(header.at("config").dump());
    if (seed) *seed = header.at("seed").get<std::uint64_t>();
    if (epoch) *epoch = header.at("epoch").get<int>();

    Model model = init_model(config, 0);

    auto params = named_parameters(model);
    std::vector<std::pair<std::string, Tensor*>> slots(params.begin(), params.end());
    if (model.pos.kind == PositionalKind::Sinusoidal) {
        slots.emplace_back("pos.table", &model.pos.table);
    }

    const auto count = read_pod<std::uint64_t>(in, "tensor count");
    std::vector<bool> filled(slots.size(), false);
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto name_len = read_pod<std::uint64_t>(in, "tensor name length");
        std::string name(name_len, '\0');
        if (!in.read(name.data(), static_cast<std::streamsize>(name_len))) {
            throw io_error("checkpoint: truncated tensor name");
        }
        const auto rank = read_pod<std::uint32_t>(in, name + " rank");
        std::vector<int> shape(rank);
        for (auto& e : shape) e = static_cast<int>(read_pod<std::uint64_t>(in, name + " extent"));
        const auto elems = read_pod<std::uint64_t>(in, name + " element count");
        std::vector<double> data(elems);
        if (!in.read(reinterpret_cast<char*>(data.data()),
                     static_cast<std::streamsize>(sizeof(double) * elems))) {
            throw io_error("checkpoint: truncated data for " + name);
        }

        bool placed = false;
        for (std::size_t s = 0; s < slots.size(); ++s) {
            if (slots[s].first != name) continue;
            Tensor loaded = Tensor::from_data(shape, std::move(data));
            if (!loaded.same_shape(*slots[s].second)) {
                throw io_error("checkpoint: shape mismatch for " + name);
            }
            *slots[s].second = std::move(loaded);
            filled[s] = true;
            placed = true;
            break;
        }
        if (!placed) throw io_error("checkpoint: unknown tensor " + name);
    }
    for (std::size_t s = 0; s < slots.size(); ++s) {
        if (!filled[s]) throw io_error("checkpoint: missing tensor " + slots[s].first);
    }
    return model;
}

} // namespace convvit
