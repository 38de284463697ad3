#include "convvit/linear_conv.hpp"

#include <string>

namespace convvit {

namespace {

void check_geometry(const SharedGroupedConv& layer, const Tensor& x) {
    if (x.rank() != 3) throw dimension_error("shared_forward: input must be [T,H,W]");
    if (layer.kernels.rank() != 4) {
        throw dimension_error("shared_forward: kernels must be [M_out,g,Kh,Kw]");
    }
    if (layer.group_size < 1) throw config_error("shared_forward: group size must be positive");
    if (layer.kernels.extent(1) != layer.group_size) {
        throw config_error("shared_forward: kernel bank depth must equal group size");
    }
    if (x.extent(0) % layer.group_size != 0) {
        throw config_error("shared_forward: channel count not divisible by group size");
    }
    if (layer.padding == Padding::Valid &&
        (layer.kernel_h() != x.extent(1) || layer.kernel_w() != x.extent(2))) {
        throw config_error("shared_forward: valid padding requires full-extent kernels");
    }
    if (layer.bias && (layer.bias->rank() != 1 || layer.bias->extent(0) != layer.out_per_group())) {
        throw config_error("shared_forward: bias must be [M_out]");
    }
}

} // namespace

Tensor repeat_bank(const SharedGroupedConv& layer, int group_count) {
    const int m = layer.out_per_group();
    const int g = layer.group_size;
    const int kh = layer.kernel_h(), kw = layer.kernel_w();
    Tensor rep({group_count * m, g, kh, kw}, layer.kernels.precision());
    const std::int64_t bank_len = layer.kernels.size();
    for (int j = 0; j < group_count; ++j) {
        std::copy(layer.kernels.data(), layer.kernels.data() + bank_len,
                  rep.data() + static_cast<std::int64_t>(j) * bank_len);
    }
    return rep;
}

Tensor shared_forward(const SharedGroupedConv& layer, const Tensor& x) {
    check_geometry(layer, x);
    const int groups = x.extent(0) / layer.group_size;
    Tensor out = conv2d(x, repeat_bank(layer, groups), layer.padding, groups);
    if (layer.bias) {
        const int m = layer.out_per_group();
        const std::int64_t plane = static_cast<std::int64_t>(out.extent(1)) * out.extent(2);
        for (int k = 0; k < out.extent(0); ++k) {
            const double b = (*layer.bias)[k % m];
            double* y = out.data() + k * plane;
            for (std::int64_t i = 0; i < plane; ++i) y[i] += b;
        }
        out.quantize();
    }
    return out;
}

Tensor unshared_forward(const UnsharedGroupedConv& layer, const Tensor& x) {
    if (x.rank() != 3) throw dimension_error("unshared_forward: input must be [T,H,W]");
    if (x.extent(0) % layer.group_size != 0) {
        throw config_error("unshared_forward: channel count not divisible by group size");
    }
    const int groups = x.extent(0) / layer.group_size;
    if (groups * layer.out_per_group != layer.kernels.extent(0)) {
        throw config_error("unshared_forward: bank count does not match input channels");
    }
    if (layer.padding == Padding::Valid &&
        (layer.kernels.extent(2) != x.extent(1) || layer.kernels.extent(3) != x.extent(2))) {
        throw config_error("unshared_forward: valid padding requires full-extent kernels");
    }
    Tensor out = conv2d(x, layer.kernels, layer.padding, groups);
    if (layer.bias) {
        const std::int64_t plane = static_cast<std::int64_t>(out.extent(1)) * out.extent(2);
        for (int k = 0; k < out.extent(0); ++k) {
            double* y = out.data() + k * plane;
            for (std::int64_t i = 0; i < plane; ++i) y[i] += (*layer.bias)[k];
        }
        out.quantize();
    }
    return out;
}

LinearEquivalent to_linear(const SharedGroupedConv& layer) {
    const int m = layer.out_per_group();
    const int row = layer.group_size * layer.kernel_h() * layer.kernel_w();
    LinearEquivalent weq;
    weq.weight = layer.kernels.reshape({m, row});
    weq.bias = layer.bias;
    return weq;
}

SharedGroupedConv from_linear(const LinearEquivalent& weq, int g, int kh, int kw) {
    if (weq.weight.rank() != 2) throw config_error("from_linear: weight must be [M_out, g*Kh*Kw]");
    if (weq.weight.extent(1) != g * kh * kw) {
        throw config_error("from_linear: weight row length must equal g*Kh*Kw");
    }
    SharedGroupedConv layer;
    layer.kernels = weq.weight.reshape({weq.weight.extent(0), g, kh, kw});
    layer.group_size = g;
    layer.bias = weq.bias;
    layer.padding = Padding::Valid;
    return layer;
}

Tensor linear_apply(const LinearEquivalent& weq, const Tensor& x, int g) {
    if (x.rank() != 3) throw dimension_error("linear_apply: input must be [T,H,W]");
    if (x.extent(0) % g != 0) throw config_error("linear_apply: channel count not divisible by g");
    const int m = weq.weight.extent(0);
    const int row = weq.weight.extent(1);
    const std::int64_t group_len = static_cast<std::int64_t>(g) * x.extent(1) * x.extent(2);
    if (group_len != row) throw config_error("linear_apply: flattened group length mismatch");

    const int groups = x.extent(0) / g;
    Tensor out({groups, m}, x.precision());
    for (int j = 0; j < groups; ++j) {
        const double* xg = x.data() + j * group_len;
        for (int o = 0; o < m; ++o) {
            const double* wr = weq.weight.data() + static_cast<std::int64_t>(o) * row;
            double acc = weq.bias ? (*weq.bias)[o] : 0.0;
            for (std::int64_t i = 0; i < group_len; ++i) acc += wr[i] * xg[i];
            out.at(j, o) = acc;
        }
    }
    out.quantize();
    return out;
}

UnsharedGroupedConv unshared_variant(const SharedGroupedConv& layer, int t) {
    if (t % layer.group_size != 0) {
        throw config_error("unshared_variant: channel count not divisible by group size");
    }
    const int groups = t / layer.group_size;
    UnsharedGroupedConv u;
    u.kernels = repeat_bank(layer, groups);
    u.group_size = layer.group_size;
    u.out_per_group = layer.out_per_group();
    u.padding = layer.padding;
    if (layer.bias) {
        Tensor b({groups * layer.out_per_group()});
        for (int j = 0; j < groups; ++j) {
            for (int o = 0; o < layer.out_per_group(); ++o) {
                b[static_cast<std::int64_t>(j) * layer.out_per_group() + o] = (*layer.bias)[o];
            }
        }
        u.bias = b;
    }
    return u;
}

} // namespace convvit
