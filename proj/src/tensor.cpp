#include "convvit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>

namespace convvit {

namespace {

std::int64_t element_count(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int e : shape) {
        if (e <= 0) {
            throw dimension_error("tensor extents must be positive");
        }
        n *= e;
    }
    return n;
}

} // namespace

Tensor::Tensor(std::vector<int> shape, Precision prec)
    : shape_(std::move(shape)),
      data_(static_cast<std::size_t>(element_count(shape_)), 0.0),
      precision_(prec) {}

Tensor Tensor::zeros(std::vector<int> shape, Precision prec) {
    return Tensor(std::move(shape), prec);
}

Tensor Tensor::full(std::vector<int> shape, double value, Precision prec) {
    Tensor t(std::move(shape), prec);
    std::fill(t.data_.begin(), t.data_.end(), value);
    t.quantize();
    return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> values, Precision prec) {
    if (element_count(shape) != static_cast<std::int64_t>(values.size())) {
        throw dimension_error("element count does not match shape");
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(values);
    t.precision_ = prec;
    t.quantize();
    return t;
}

void Tensor::set_precision(Precision prec) {
    precision_ = prec;
    quantize();
}

void Tensor::quantize() {
    if (precision_ == Precision::Single) {
        for (double& v : data_) {
            v = static_cast<double>(static_cast<float>(v));
        }
    }
}

double& Tensor::at(int i) {
    if (rank() != 1) throw dimension_error("at(i) requires rank 1");
    return data_[static_cast<std::size_t>(i)];
}

double& Tensor::at(int i, int j) {
    if (rank() != 2) throw dimension_error("at(i,j) requires rank 2");
    return data_[static_cast<std::size_t>(i) * shape_[1] + j];
}

double& Tensor::at(int i, int j, int k) {
    if (rank() != 3) throw dimension_error("at(i,j,k) requires rank 3");
    return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
}

double& Tensor::at(int i, int j, int k, int l) {
    if (rank() != 4) throw dimension_error("at(i,j,k,l) requires rank 4");
    return data_[((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
}

Tensor Tensor::reshape(std::vector<int> new_shape) const {
    if (element_count(new_shape) != size()) {
        throw dimension_error("reshape changes element count");
    }
    Tensor t;
    t.shape_ = std::move(new_shape);
    t.data_ = data_;
    t.precision_ = precision_;
    return t;
}

Tensor Tensor::permute(const std::vector<int>& axis_order) const {
    const int r = rank();
    if (static_cast<int>(axis_order.size()) != r) {
        throw dimension_error("permute order must name every axis once");
    }
    std::vector<bool> seen(static_cast<std::size_t>(r), false);
    for (int a : axis_order) {
        if (a < 0 || a >= r || seen[static_cast<std::size_t>(a)]) {
            throw dimension_error("permute order must be a permutation");
        }
        seen[static_cast<std::size_t>(a)] = true;
    }

    std::vector<int> new_shape(static_cast<std::size_t>(r));
    for (int d = 0; d < r; ++d) {
        new_shape[static_cast<std::size_t>(d)] = shape_[static_cast<std::size_t>(axis_order[d])];
    }

    std::vector<std::int64_t> src_strides(static_cast<std::size_t>(r), 1);
    for (int d = r - 2; d >= 0; --d) {
        src_strides[d] = src_strides[d + 1] * shape_[d + 1];
    }

    Tensor out(new_shape, precision_);
    std::vector<int> idx(static_cast<std::size_t>(r), 0);
    for (std::int64_t flat = 0; flat < size(); ++flat) {
        std::int64_t src = 0;
        for (int d = 0; d < r; ++d) {
            src += idx[d] * src_strides[static_cast<std::size_t>(axis_order[d])];
        }
        out.data_[static_cast<std::size_t>(flat)] = data_[static_cast<std::size_t>(src)];
        for (int d = r - 1; d >= 0; --d) {
            if (++idx[d] < new_shape[d]) break;
            idx[d] = 0;
        }
    }
    return out;
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Precision combine_precision(Precision a, Precision b) {
    return (a == Precision::Single && b == Precision::Single) ? Precision::Single
                                                              : Precision::Double;
}

// --- Elementwise ---------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw dimension_error("add: shape mismatch");
    Tensor out(a.shape(), combine_precision(a.precision(), b.precision()));
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    out.quantize();
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw dimension_error("sub: shape mismatch");
    Tensor out(a.shape(), combine_precision(a.precision(), b.precision()));
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    out.quantize();
    return out;
}

Tensor scale(const Tensor& a, double s) {
    Tensor out(a.shape(), a.precision());
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
    out.quantize();
    return out;
}

void add_in_place(Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw dimension_error("add_in_place: shape mismatch");
    for (std::int64_t i = 0; i < a.size(); ++i) a[i] += b[i];
    a.quantize();
}

void scale_in_place(Tensor& a, double s) {
    for (std::int64_t i = 0; i < a.size(); ++i) a[i] *= s;
    a.quantize();
}

// --- conv2d ---------------------------------------------------------------

Tensor conv2d(const Tensor& input, const Tensor& kernels, Padding padding, int groups) {
    if (input.rank() != 3) throw dimension_error("conv2d: input must be [C,H,W]");
    if (kernels.rank() != 4) throw dimension_error("conv2d: kernels must be [C_out,C_in/g,Kh,Kw]");
    const int c_in = input.extent(0), h = input.extent(1), w = input.extent(2);
    const int c_out = kernels.extent(0), kc = kernels.extent(1);
    const int kh = kernels.extent(2), kw = kernels.extent(3);
    if (groups < 1) throw config_error("conv2d: groups must be positive");
    if (c_in % groups != 0 || c_out % groups != 0) {
        throw config_error("conv2d: groups must divide both channel counts");
    }
    if (kc != c_in / groups) {
        throw dimension_error("conv2d: kernel channel extent must equal C_in/groups");
    }

    // Resolve padding; Same places the extra zero on the trailing side.
    int pad_top = 0, pad_left = 0, hp = h, wp = w;
    if (padding == Padding::Same) {
        pad_top = (kh - 1) / 2;
        pad_left = (kw - 1) / 2;
        hp = h + kh - 1;
        wp = w + kw - 1;
    }
    if (kh > hp || kw > wp) {
        throw dimension_error("conv2d: kernel larger than padded input");
    }
    const int ho = hp - kh + 1, wo = wp - kw + 1;

    const double* x = input.data();
    Tensor padded;
    if (padding == Padding::Same) {
        padded = Tensor::zeros({c_in, hp, wp}, input.precision());
        for (int c = 0; c < c_in; ++c) {
            for (int i = 0; i < h; ++i) {
                const double* src = input.data() + (static_cast<std::int64_t>(c) * h + i) * w;
                double* dst = padded.data() +
                              (static_cast<std::int64_t>(c) * hp + i + pad_top) * wp + pad_left;
                std::copy(src, src + w, dst);
            }
        }
        x = padded.data();
    }

    Tensor out({c_out, ho, wo}, combine_precision(input.precision(), kernels.precision()));
    const int cpg_out = c_out / groups;
    const double* kdata = kernels.data();
    double* y = out.data();

    for (int k = 0; k < c_out; ++k) {
        const int g = k / cpg_out;
        const int c0 = g * kc;
        for (int p = 0; p < ho; ++p) {
            for (int q = 0; q < wo; ++q) {
                double acc = 0.0;
                for (int cc = 0; cc < kc; ++cc) {
                    const double* kk = kdata + ((static_cast<std::int64_t>(k) * kc + cc) * kh) * kw;
                    const double* xx = x + (static_cast<std::int64_t>(c0 + cc) * hp + p) * wp + q;
                    for (int i = 0; i < kh; ++i) {
                        const double* xr = xx + static_cast<std::int64_t>(i) * wp;
                        const double* kr = kk + static_cast<std::int64_t>(i) * kw;
                        for (int j = 0; j < kw; ++j) {
                            acc += xr[j] * kr[j];
                        }
                    }
                }
                y[(static_cast<std::int64_t>(k) * ho + p) * wo + q] = acc;
            }
        }
    }
    out.quantize();
    return out;
}

// --- conv_transpose2d -------------------------------------------------------

Tensor conv_transpose2d(const Tensor& input, const Tensor& kernels, int stride) {
    if (input.rank() != 3) throw dimension_error("conv_transpose2d: input must be [C,Ph,Pw]");
    if (kernels.rank() != 4) throw dimension_error("conv_transpose2d: kernels must be [C,M,Kh,Kw]");
    if (stride < 1) throw config_error("conv_transpose2d: stride must be positive");
    const int c_in = input.extent(0), ph = input.extent(1), pw = input.extent(2);
    if (kernels.extent(0) != c_in) {
        throw dimension_error("conv_transpose2d: kernel channel extent mismatch");
    }
    const int m = kernels.extent(1), kh = kernels.extent(2), kw = kernels.extent(3);
    const int ho = (ph - 1) * stride + kh;
    const int wo = (pw - 1) * stride + kw;

    Tensor out({m, ho, wo}, combine_precision(input.precision(), kernels.precision()));
    for (int c = 0; c < c_in; ++c) {
        for (int py = 0; py < ph; ++py) {
            for (int px = 0; px < pw; ++px) {
                const double v = input.at(c, py, px);
                if (v == 0.0) continue;
                for (int o = 0; o < m; ++o) {
                    for (int i = 0; i < kh; ++i) {
                        for (int j = 0; j < kw; ++j) {
                            out.at(o, py * stride + i, px * stride + j) +=
                                v * kernels.at(c, o, i, j);
                        }
                    }
                }
            }
        }
    }
    out.quantize();
    return out;
}

// --- softmax ---------------------------------------------------------------

Tensor softmax(const Tensor& x, int axis) {
    if (axis < 0 || axis >= x.rank()) throw dimension_error("softmax: axis out of range");
    const int r = x.rank();
    std::vector<std::int64_t> strides(static_cast<std::size_t>(r), 1);
    for (int d = r - 2; d >= 0; --d) {
        strides[d] = strides[d + 1] * x.extent(d + 1);
    }
    const int n = x.extent(axis);
    const std::int64_t step = strides[static_cast<std::size_t>(axis)];

    Tensor out(x.shape(), x.precision());
    const std::int64_t slices = x.size() / n;
    std::vector<int> idx(static_cast<std::size_t>(r), 0);

    for (std::int64_t s = 0; s < slices; ++s) {
        // Base offset for this slice: idx enumerates all axes except `axis`.
        std::int64_t base = 0;
        for (int d = 0; d < r; ++d) {
            if (d != axis) base += idx[d] * strides[static_cast<std::size_t>(d)];
        }

        double mx = x[base];
        for (int i = 1; i < n; ++i) mx = std::max(mx, x[base + i * step]);
        double sum = 0.0;
        for (int i = 0; i < n; ++i) {
            const double e = std::exp(x[base + i * step] - mx);
            out[base + i * step] = e;
            sum += e;
        }
        for (int i = 0; i < n; ++i) out[base + i * step] /= sum;

        for (int d = r - 1; d >= 0; --d) {
            if (d == axis) continue;
            if (++idx[d] < x.extent(d)) break;
            idx[d] = 0;
        }
    }
    out.quantize();
    return out;
}

// --- layer_norm --------------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& offset, double eps) {
    if (x.rank() != 3) throw dimension_error("layer_norm: input must be [T,H,W]");
    if (eps <= 0.0) throw config_error("layer_norm: eps must be positive");
    const int t = x.extent(0), h = x.extent(1), w = x.extent(2);
    if (gain.rank() != 2 || gain.extent(0) != h || gain.extent(1) != w || !gain.same_shape(offset)) {
        throw dimension_error("layer_norm: gain/offset must be [H,W]");
    }
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;

    Tensor out(x.shape(), x.precision());
    for (int tk = 0; tk < t; ++tk) {
        const double* xi = x.data() + tk * hw;
        double* yo = out.data() + tk * hw;
        double mean = 0.0;
        for (std::int64_t i = 0; i < hw; ++i) mean += xi[i];
        mean /= static_cast<double>(hw);
        double var = 0.0;
        for (std::int64_t i = 0; i < hw; ++i) {
            const double d = xi[i] - mean;
            var += d * d;
        }
        var /= static_cast<double>(hw);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::int64_t i = 0; i < hw; ++i) {
            yo[i] = (xi[i] - mean) * inv * gain[i] + offset[i];
        }
    }
    out.quantize();
    return out;
}

// --- gelu ---------------------------------------------------------------------

namespace {
constexpr double kGeluCoeff = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / M_PI);
} // namespace

double gelu_scalar(double x) {
    const double u = kSqrt2OverPi * (x + kGeluCoeff * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_derivative_scalar(double x) {
    const double u = kSqrt2OverPi * (x + kGeluCoeff * x * x * x);
    const double th = std::tanh(u);
    const double sech2 = 1.0 - th * th;
    const double du = kSqrt2OverPi * (1.0 + 3.0 * kGeluCoeff * x * x);
    return 0.5 * (1.0 + th) + 0.5 * x * sech2 * du;
}

Tensor gelu(const Tensor& x) {
    Tensor out(x.shape(), x.precision());
    for (std::int64_t i = 0; i < x.size(); ++i) out[i] = gelu_scalar(x[i]);
    out.quantize();
    return out;
}

} // namespace convvit
