#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "convvit/tensor.hpp"

namespace convvit {

// Optical device: square resolution in pixels and inference clock in Hz.
struct DeviceSpec {
    int resolution = 2160;
    double clock_hz = 2e6;
};

enum class TilingScheme { Kernel, Channel, Mixed };

// What each grid cell of a canvas carries.
struct CellContent {
    int row = 0, col = 0;
    int kernel_id = -1;   // -1 when the cell is zero padding
    int channel_id = -1;  // designated input channel, -1 if not applicable
};

// Rectangle of the optical output that carries a wanted result.
struct ValidRegion {
    int y = 0, x = 0;
    int rows = 0, cols = 0;
    int output_id = 0;  // kernel index / output channel the region belongs to
};

// Placement of one optical pass: where inputs and kernels sit on the canvas
// and where the valid outputs land.
struct TilingPlan {
    TilingScheme scheme = TilingScheme::Kernel;
    int cell = 0;                        // M + N - 1
    int grid_rows = 0, grid_cols = 0;    // kernel-block grid
    std::vector<CellContent> cells;
    std::vector<ValidRegion> valid_regions;
    int inference_index = 0;
};

// Per-block optical workload of the paper's deployment shape, plus totals.
struct InferencePlan {
    int qkv = 0;
    int scores = 0;
    int weighted_sum = 0;
    int mlp = 0;
    int blocks = 0;
    std::int64_t total = 0;
    double latency_seconds = 0.0;
};

// Full linear convolution via the frequency domain: both operands are
// zero-padded to (Hi+Hk-1) x (Wi+Wk-1), transformed, multiplied pointwise
// and transformed back.
Tensor fourier_conv(const Tensor& input, const Tensor& kernel);

// 180-degree rotation. Passing a flipped kernel turns the bench's true
// convolution into the correlation convention the conv layers use.
Tensor flip_plane(const Tensor& k);

// Half-plane r2c spectrum of a plane zero-padded to rows x cols. Paired with
// fourier_product_inverse these let a simulation reuse one operand's
// transform across many convolutions, the way a fixed mask stays on the
// Fourier plane across passes.
using Spectrum = std::vector<std::complex<double>>;
Spectrum fourier_forward(const Tensor& plane, int rows, int cols);
Tensor fourier_inverse(const Spectrum& a, int rows, int cols);
Tensor fourier_product_inverse(const Spectrum& a, const Spectrum& b, int rows, int cols);

// Largest channel count per pass: floor(R / (M+N-1)). Throws
// infeasible_error when even one cell does not fit.
int capacity(int resolution, int input_extent, int kernel_extent);

struct TilingResult {
    std::vector<Tensor> outputs;       // meaning depends on the scheme
    std::vector<TilingPlan> plans;
};

// One input [M,M] against many kernels [N,N]: each kernel is zero-padded to
// the cell size and placed on a grid; a single pass convolves the input with
// every kernel. Outputs are the full correlation maps, one per kernel.
// Kernels beyond the grid capacity spill into additional plans.
TilingResult kernel_tiling(const Tensor& input, const std::vector<Tensor>& kernels,
                           const DeviceSpec& device);

// N_c channels against N_c kernels; the central output tile carries the
// channel-summed correlation. N_c must be a perfect square; larger sets are
// split into square batches whose central tiles are summed.
TilingResult channel_tiling(const std::vector<Tensor>& inputs, const std::vector<Tensor>& kernels,
                            const DeviceSpec& device);

// Whole convolutional layer per pass: inputs tiled horizontally, kernels in
// a grid with one row per output channel; the centre tile of each row is the
// layer output for that channel. The depthwise flag zeroes every kernel in a
// row except the one for the row's designated input channel.
TilingResult mixed_tiling(const std::vector<Tensor>& inputs, const Tensor& kernels,
                          const DeviceSpec& device, bool depthwise = false);

// Paper-shape workload arithmetic: tokens T with H x W embeddings, MLP ratio
// r, single-head valid-convolution blocks.
InferencePlan plan_inferences(int tokens, int embed_h, int embed_w, int mlp_ratio, int blocks,
                              const DeviceSpec& device);

double estimate_latency(const InferencePlan& plan, const DeviceSpec& device);

std::string tiling_plan_json(const TilingPlan& plan);
std::string inference_plan_json(const InferencePlan& plan, const DeviceSpec& device);
std::string inference_plan_table(const InferencePlan& plan, const DeviceSpec& device);

} // namespace convvit
