#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "convvit/attention.hpp"
#include "convvit/linear_conv.hpp"
#include "convvit/tensor.hpp"

namespace convvit {

enum class PositionalKind { Trainable, Sinusoidal };

struct ModelConfig {
    int image_size = 32;
    int image_channels = 3;
    int patch_size = 4;
    int embed_h = 16;
    int embed_w = 16;
    int heads = 16;
    int depth = 9;
    int mlp_ratio = 2;
    PositionalKind positional = PositionalKind::Trainable;
    int num_classes = 100;
    bool weight_sharing = true;          // QKV banks shared across tokens
    Padding qkv_padding = Padding::Valid;
    bool bias = false;

    int patch_grid() const { return image_size / patch_size; }
    int tokens() const { return patch_grid() * patch_grid() + 1; }

    void validate() const;
};

ModelConfig config_from_json(const std::string& text);
std::string config_to_json(const ModelConfig& config);

struct PositionalEncoding {
    PositionalKind kind = PositionalKind::Trainable;
    Tensor table;  // [T, H, W]
};

// Deterministic sin/cos table over the flattened feature index, one row per
// token position, reshaped to the embedding geometry.
Tensor sinusoidal_table(int tokens, int embed_h, int embed_w);

// Two full-extent valid shared convolutions around an activation; the first
// multiplies the token count by the MLP ratio, the second restores it.
struct ConvMlp {
    SharedGroupedConv expand;  // g=1, M_out = r*H*W
    SharedGroupedConv reduce;  // g=r, M_out = H*W
    int ratio = 2;
};

struct EncoderBlock {
    Tensor norm1_gain, norm1_offset;  // [H, W]
    ConvAttentionLayer attn;
    Tensor norm2_gain, norm2_offset;
    ConvMlp mlp;
};

struct Model {
    ModelConfig config;
    int tokenizer_stride = 0;
    int tokenizer_kernel = 0;
    Tensor tokenizer_kernels;               // [C, 1, k, k]
    std::optional<Tensor> tokenizer_bias;   // [1]
    Tensor class_token;                     // [H, W]
    PositionalEncoding pos;
    std::vector<EncoderBlock> blocks;
    Tensor final_gain, final_offset;
    SharedGroupedConv head;                 // M_out = num_classes
};

// Geometry of the patch-to-embedding transpose convolution: stride H/P and a
// matching kernel when P divides H, otherwise the largest stride that fits
// with kernel H - (P-1)*stride.
std::pair<int, int> tokenizer_geometry(int patch_size, int embed);

Model init_model(const ModelConfig& config, std::uint64_t seed);

// Saved intermediates of one forward pass, consumed by the backward pass.
struct BlockCache {
    Tensor x_in, n1;
    std::vector<Tensor> head_in, q, k, v, attn; // per head; attn is post-softmax
    Tensor attn_out, x_mid, n2;
    Tensor hidden_raw, hidden_act;  // [T*r, H, W]
    Tensor mlp_out, x_out;
};

struct ForwardCache {
    std::vector<Tensor> patches;  // per token [C, P, P]
    Tensor embedded;              // [T, H, W] after class token + positional
    std::vector<BlockCache> blocks;
    Tensor final_in, final_norm;
    Tensor logits;
};

Tensor tokenize(const Model& model, const Tensor& image);
Tensor add_positional(const Tensor& x, const PositionalEncoding& enc);
Tensor encoder_block(const EncoderBlock& block, const Tensor& x, AttentionTrace* trace = nullptr,
                     BlockCache* cache = nullptr);

// Full pass: tokenize, prepend the class token, add positions, run the
// blocks, normalize, and read the class token out through the conv head.
Tensor forward(const Model& model, const Tensor& image,
               std::vector<AttentionTrace>* traces = nullptr, ForwardCache* cache = nullptr);

// Class-token attention row averaged over heads, upsampled to the image and
// min-max normalized; a flat trace maps to all zeros.
Tensor attention_heatmap(const AttentionTrace& trace, int patch_grid, int patch_size);

// Trainable tensors in a fixed, documented order; names are the checkpoint
// keys.
std::vector<std::pair<std::string, Tensor*>> named_parameters(Model& model);
std::int64_t parameter_count(const Model& model);

// Single-file checkpoint: magic, version, canonical JSON header (config,
// seed, epoch), then named little-endian double arrays.
void save_checkpoint(const std::string& path, const Model& model, std::uint64_t seed, int epoch);
Model load_checkpoint(const std::string& path, std::uint64_t* seed = nullptr, int* epoch = nullptr);

} // namespace convvit
