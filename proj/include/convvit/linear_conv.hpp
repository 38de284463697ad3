#pragma once

#include <optional>

#include "convvit/tensor.hpp"

namespace convvit {

// Grouped convolution whose kernel bank is reused identically by every group
// of input channels. With group_size 1 this is the shared depthwise layer; a
// full-extent kernel under valid padding makes it act as one linear layer
// applied independently to each token.
struct SharedGroupedConv {
    Tensor kernels;              // [M_out, g, Kh, Kw], one bank for all groups
    int group_size = 1;          // g
    std::optional<Tensor> bias;  // [M_out]
    Padding padding = Padding::Valid;

    int out_per_group() const { return kernels.extent(0); }
    int kernel_h() const { return kernels.extent(2); }
    int kernel_w() const { return kernels.extent(3); }
};

// Flat matrix form of the same map: weight row m is the row-major flattening
// of kernel bank entry m.
struct LinearEquivalent {
    Tensor weight;               // [M_out, g*Kh*Kw]
    std::optional<Tensor> bias;  // [M_out]
};

// Per-group independent copies of a bank (the no-weight-sharing ablation).
struct UnsharedGroupedConv {
    Tensor kernels;              // [(T/g)*M_out, g, Kh, Kw]
    int group_size = 1;
    int out_per_group = 0;
    std::optional<Tensor> bias;  // [(T/g)*M_out]
    Padding padding = Padding::Valid;
};

// Applies the shared bank to x [T, H, W] with groups = T/g.
// Valid padding requires the kernel to span the whole input and yields the
// raw [(T/g)*M_out, 1, 1] stack, group-major; Same padding is plain grouped
// convolution with the bank repeated across groups. The caller reshapes the
// result to its target geometry.
Tensor shared_forward(const SharedGroupedConv& layer, const Tensor& x);

Tensor unshared_forward(const UnsharedGroupedConv& layer, const Tensor& x);

// Materializes the kernel tensor with the bank repeated for each of the
// `group_count` groups (the exact tensor conv2d consumes).
Tensor repeat_bank(const SharedGroupedConv& layer, int group_count);

LinearEquivalent to_linear(const SharedGroupedConv& layer);
SharedGroupedConv from_linear(const LinearEquivalent& weq, int g, int kh, int kw);

// Applies a LinearEquivalent to x [T, H, W]: each group of g consecutive
// channels is flattened row-major and multiplied by the weight matrix.
// Returns [T/g, M_out].
Tensor linear_apply(const LinearEquivalent& weq, const Tensor& x, int g);

// Copies the shared bank into T/g independent per-group banks.
UnsharedGroupedConv unshared_variant(const SharedGroupedConv& layer, int t);

} // namespace convvit
