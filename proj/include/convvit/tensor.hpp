#pragma once

#include <cstdint>
#include <vector>

#include "convvit/errors.hpp"

namespace convvit {

// Storage precision of a tensor. Arithmetic always runs in double; tensors
// tagged Single have every stored element rounded to the nearest float, so
// results are reproducible regardless of the compute path.
enum class Precision { Single, Double };

enum class Padding { Valid, Same };

// Dense N-dimensional array of real scalars, row-major.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape, Precision prec = Precision::Double);

    static Tensor zeros(std::vector<int> shape, Precision prec = Precision::Double);
    static Tensor full(std::vector<int> shape, double value, Precision prec = Precision::Double);
    static Tensor from_data(std::vector<int> shape, std::vector<double> values,
                            Precision prec = Precision::Double);

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int extent(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    Precision precision() const { return precision_; }
    void set_precision(Precision prec);

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& buffer() { return data_; }
    const std::vector<double>& buffer() const { return data_; }

    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    // Rank-checked element access for the common low ranks.
    double& at(int i);
    double& at(int i, int j);
    double& at(int i, int j, int k);
    double& at(int i, int j, int k, int l);
    double at(int i) const { return const_cast<Tensor*>(this)->at(i); }
    double at(int i, int j) const { return const_cast<Tensor*>(this)->at(i, j); }
    double at(int i, int j, int k) const { return const_cast<Tensor*>(this)->at(i, j, k); }
    double at(int i, int j, int k, int l) const { return const_cast<Tensor*>(this)->at(i, j, k, l); }

    // Bijective re-indexing; element count must be conserved.
    Tensor reshape(std::vector<int> new_shape) const;
    // axis_order[d] names the source axis that becomes destination axis d.
    Tensor permute(const std::vector<int>& axis_order) const;

    bool all_finite() const;
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    // Rounds stored values to the tagged precision (no-op for Double).
    void quantize();

private:
    std::vector<int> shape_;
    std::vector<double> data_;
    Precision precision_ = Precision::Double;
};

// Result precision of an op combining a and b: Single only when both agree.
Precision combine_precision(Precision a, Precision b);

// --- Elementwise helpers -----------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
void add_in_place(Tensor& a, const Tensor& b);
void scale_in_place(Tensor& a, double s);

// --- Core operations ----------------------------------------------------

// 2D cross-correlation (no kernel flip) over grouped channels.
//   input   [C_in, H, W]
//   kernels [C_out, C_in/groups, Kh, Kw]
// Valid padding yields H-Kh+1 rows; Same keeps the input extent with
// symmetric zero padding, the extra zero going to the trailing side.
Tensor conv2d(const Tensor& input, const Tensor& kernels, Padding padding, int groups = 1);

// Transpose convolution used by the tokenizer.
//   input   [C, Ph, Pw]
//   kernels [C, M, Kh, Kw]
// Output [M, (Ph-1)*stride + Kh, (Pw-1)*stride + Kw].
Tensor conv_transpose2d(const Tensor& input, const Tensor& kernels, int stride);

// Numerically stable softmax along one axis (max subtraction).
Tensor softmax(const Tensor& x, int axis);

// Per-token normalization: each [H, W] slice of x [T, H, W] is brought to
// zero mean / unit variance, then transformed by gain and offset [H, W].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& offset, double eps = 1e-6);

// Tanh-approximated GELU, elementwise.
Tensor gelu(const Tensor& x);
double gelu_scalar(double x);
double gelu_derivative_scalar(double x);

} // namespace convvit
