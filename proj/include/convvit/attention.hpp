#pragma once

#include <string>
#include <vector>

#include "convvit/linear_conv.hpp"
#include "convvit/tensor.hpp"

namespace convvit {

// Q/K/V projection bank. The shared form is the linear-layer emulation; the
// unshared form keeps an independent bank per token (ablation).
struct QkvProjection {
    bool shared = true;
    SharedGroupedConv shared_bank;
    UnsharedGroupedConv unshared_bank;

    Padding padding() const {
        return shared ? shared_bank.padding : unshared_bank.padding;
    }
};

// Maps token sub-patches [T, h, w] to projected tokens [T, h, w].
// Valid padding goes through the full-extent conv and reshapes the raw
// [T*h*w, 1, 1] stack back to token geometry; Same padding keeps the spatial
// extent directly (one kernel per group).
Tensor project_tokens(const QkvProjection& proj, const Tensor& x);

// Convolution-only multi-head self-attention.
struct ConvAttentionLayer {
    QkvProjection wq, wk, wv;
    int heads = 1;
    int token_h = 0, token_w = 0;  // embedding geometry H x W
    int head_h = 0, head_w = 0;    // per-head sub-patch geometry h x w
    double scale_dim = 1.0;        // d = h*w
};

// Post-softmax scores of one layer, [heads, T, T]; row (head, query) sums
// to one.
struct AttentionTrace {
    Tensor scores;
};

// Validates geometry and fills the derived head fields.
void init_attention_geometry(ConvAttentionLayer& layer, int heads, int token_h, int token_w);

// Cuts x [T, H, W] into one [T, h, w] tensor per head; heads walk the
// sub-patch grid row-major. merge_heads inverts exactly.
std::vector<Tensor> split_heads(const Tensor& x, int heads);
Tensor merge_heads(const std::vector<Tensor>& parts, int token_h, int token_w);

// S[i][j] = <Q_i, K_j> / sqrt(d), realized as T x T valid convolutions of
// full-extent operands.
Tensor attention_scores(const Tensor& q, const Tensor& k, double d);

// Output token i = sum_j A[i][j] * V_j, realized as a pointwise convolution
// with A as the kernel bank.
Tensor weighted_values(const Tensor& a, const Tensor& v);

// Full layer: per head, project Q/K/V, score, softmax over the key axis,
// weight the values, and merge each head's output back to its sub-patch.
Tensor conv_mhsa_forward(const ConvAttentionLayer& layer, const Tensor& x,
                         AttentionTrace* trace = nullptr);

// Textbook scaled dot-product attention on flattened tokens with the head
// split along the feature axis; the equivalence oracle.
Tensor reference_mhsa(const Tensor& x, const Tensor& wq, const Tensor& wk, const Tensor& wv,
                      int heads);

// Builds a conv attention layer from reference projection matrices [D, D].
// The matrices must be representable by a single shared bank: the column
// block of head k may read only the spatial sub-patch of head k, and all
// head blocks must carry identical weights. Anything else raises
// config_error.
ConvAttentionLayer transport_weights(const Tensor& wq, const Tensor& wk, const Tensor& wv,
                                     int heads, int token_h, int token_w);

// Inverse bridge used by the verification suites: lifts a shared bank
// [M, 1, h, w] to the [D, D] reference matrix transport_weights accepts.
Tensor embed_reference_weights(const Tensor& bank, int heads, int token_h, int token_w);

// perm[f] maps the row-major flat index of a token matrix to the reference
// feature index (head-major) produced by reference_mhsa.
std::vector<int> head_permutation(int heads, int token_h, int token_w);

// One file per layer: heads*T rows by T columns.
void export_trace_csv(const AttentionTrace& trace, const std::string& path);

} // namespace convvit
