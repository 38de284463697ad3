#include "convvit/optics.hpp"

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <cstdio>
#include <cstring>
#include <map>
#include <utility>

#include <json.hpp>

namespace convvit {

namespace {

// Cached FFTW plans and work buffers, keyed by transform extent. All access
// is single-threaded, matching the library's evaluation model.
class FftEngine {
public:
    static FftEngine& instance() {
        static FftEngine engine;
        return engine;
    }

    std::vector<std::complex<double>> forward(const Tensor& plane, int rows, int cols) {
        Entry& e = get(rows, cols);
        std::memset(e.real, 0, sizeof(double) * static_cast<std::size_t>(rows) * cols);
        const int ph = plane.extent(0), pw = plane.extent(1);
        for (int i = 0; i < ph; ++i) {
            std::memcpy(e.real + static_cast<std::size_t>(i) * cols,
                        plane.data() + static_cast<std::int64_t>(i) * pw,
                        sizeof(double) * static_cast<std::size_t>(pw));
        }
        fftw_execute(e.fwd);
        const std::size_t n = static_cast<std::size_t>(rows) * (cols / 2 + 1);
        std::vector<std::complex<double>> out(n);
        // fftw_complex and std::complex<double> share layout by contract.
        std::memcpy(static_cast<void*>(out.data()), static_cast<const void*>(e.cplx),
                    sizeof(std::complex<double>) * n);
        return out;
    }

    Tensor inverse(const std::vector<std::complex<double>>& freq, int rows, int cols) {
        Entry& e = get(rows, cols);
        const std::size_t n = static_cast<std::size_t>(rows) * (cols / 2 + 1);
        std::memcpy(e.cplx, freq.data(), sizeof(std::complex<double>) * n);
        fftw_execute(e.inv);
        Tensor out({rows, cols});
        const double norm = 1.0 / (static_cast<double>(rows) * cols);
        for (std::int64_t i = 0; i < out.size(); ++i) out[i] = e.real[i] * norm;
        return out;
    }

private:
    struct Entry {
        double* real = nullptr;
        fftw_complex* cplx = nullptr;
        fftw_plan fwd = nullptr;
        fftw_plan inv = nullptr;
    };

    Entry& get(int rows, int cols) {
        auto it = entries_.find({rows, cols});
        if (it != entries_.end()) return it->second;
        Entry e;
        e.real = fftw_alloc_real(static_cast<std::size_t>(rows) * cols);
        e.cplx = fftw_alloc_complex(static_cast<std::size_t>(rows) * (cols / 2 + 1));
        e.fwd = fftw_plan_dft_r2c_2d(rows, cols, e.real, e.cplx, FFTW_ESTIMATE);
        e.inv = fftw_plan_dft_c2r_2d(rows, cols, e.cplx, e.real, FFTW_ESTIMATE);
        return entries_.emplace(std::make_pair(rows, cols), e).first->second;
    }

    std::map<std::pair<int, int>, Entry> entries_;
};

void check_plane(const Tensor& t, const char* what) {
    if (t.rank() != 2) throw dimension_error(std::string(what) + " must be a 2D plane");
}

int ceil_div(std::int64_t a, std::int64_t b) {
    return static_cast<int>((a + b - 1) / b);
}

// Places `plane` (flipped already when correlation semantics are wanted) at
// grid cell (gr, gc) of a block with the given cell size.
void place_cell(Tensor& block, const Tensor& plane, int gr, int gc, int cell) {
    const int h = plane.extent(0), w = plane.extent(1);
    const int cols = block.extent(1);
    for (int i = 0; i < h; ++i) {
        double* dst = block.data() + static_cast<std::int64_t>(gr * cell + i) * cols + gc * cell;
        const double* src = plane.data() + static_cast<std::int64_t>(i) * w;
        for (int j = 0; j < w; ++j) dst[j] += src[j];
    }
}

Tensor slice_tile(const Tensor& field, int y, int x, int rows, int cols) {
    Tensor out({rows, cols});
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) out.at(i, j) = field.at(y + i, x + j);
    }
    return out;
}

} // namespace

Tensor flip_plane(const Tensor& k) {
    const int h = k.extent(0), w = k.extent(1);
    Tensor out({h, w}, k.precision());
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) out.at(i, j) = k.at(h - 1 - i, w - 1 - j);
    }
    return out;
}

Spectrum fourier_forward(const Tensor& plane, int rows, int cols) {
    check_plane(plane, "fourier_forward plane");
    if (plane.extent(0) > rows || plane.extent(1) > cols) {
        throw dimension_error("fourier_forward: plane exceeds the transform extent");
    }
    return FftEngine::instance().forward(plane, rows, cols);
}

Tensor fourier_inverse(const Spectrum& a, int rows, int cols) {
    if (a.size() != static_cast<std::size_t>(rows) * (cols / 2 + 1)) {
        throw dimension_error("fourier_inverse: spectrum extent mismatch");
    }
    return FftEngine::instance().inverse(a, rows, cols);
}

Tensor fourier_product_inverse(const Spectrum& a, const Spectrum& b, int rows, int cols) {
    if (a.size() != b.size() ||
        a.size() != static_cast<std::size_t>(rows) * (cols / 2 + 1)) {
        throw dimension_error("fourier_product_inverse: spectrum extents differ");
    }
    Spectrum prod(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) prod[i] = a[i] * b[i];
    return FftEngine::instance().inverse(prod, rows, cols);
}

Tensor fourier_conv(const Tensor& input, const Tensor& kernel) {
    check_plane(input, "fourier_conv input");
    check_plane(kernel, "fourier_conv kernel");
    const int rows = input.extent(0) + kernel.extent(0) - 1;
    const int cols = input.extent(1) + kernel.extent(1) - 1;
    return fourier_product_inverse(fourier_forward(input, rows, cols),
                                   fourier_forward(kernel, rows, cols), rows, cols);
}

int capacity(int resolution, int input_extent, int kernel_extent) {
    if (resolution < 1 || input_extent < 1 || kernel_extent < 1) {
        throw config_error("capacity: extents must be positive");
    }
    const int n = resolution / (input_extent + kernel_extent - 1);
    if (n == 0) {
        throw infeasible_error("capacity: cell of extent " +
                               std::to_string(input_extent + kernel_extent - 1) +
                               " exceeds device resolution " + std::to_string(resolution) +
                               " (capacity 0)");
    }
    return n;
}

// --- kernel tiling -----------------------------------------------------------

TilingResult kernel_tiling(const Tensor& input, const std::vector<Tensor>& kernels,
                           const DeviceSpec& device) {
    check_plane(input, "kernel_tiling input");
    if (kernels.empty()) throw config_error("kernel_tiling: no kernels");
    const int m = input.extent(0);
    const int n = kernels[0].extent(0);
    if (input.extent(1) != m) throw dimension_error("kernel_tiling: input must be square");
    for (const Tensor& k : kernels) {
        check_plane(k, "kernel_tiling kernel");
        if (k.extent(0) != n || k.extent(1) != n) {
            throw dimension_error("kernel_tiling: kernels must share a square extent");
        }
    }

    const int cell = m + n - 1;
    const int per_dim = capacity(device.resolution, m, n);
    const std::int64_t per_pass = static_cast<std::int64_t>(per_dim) * per_dim;

    TilingResult result;
    result.outputs.resize(kernels.size());
    int inference = 0;
    for (std::size_t first = 0; first < kernels.size(); first += per_pass) {
        const int count = static_cast<int>(
            std::min<std::int64_t>(per_pass, static_cast<std::int64_t>(kernels.size()) - first));
        const int cols = std::min(count, per_dim);
        const int rows = ceil_div(count, cols);

        TilingPlan plan;
        plan.scheme = TilingScheme::Kernel;
        plan.cell = cell;
        plan.grid_rows = rows;
        plan.grid_cols = cols;
        plan.inference_index = inference++;

        // Raw bench semantics: kernels go onto the mask as-is, so each tile is
        // the true linear convolution with its kernel. Callers wanting the
        // correlation convention pass pre-flipped kernels.
        Tensor kernel_block = Tensor::zeros({rows * cell, cols * cell});
        for (int g = 0; g < count; ++g) {
            const int gr = g / cols, gc = g % cols;
            place_cell(kernel_block, kernels[first + g], gr, gc, cell);
            plan.cells.push_back({gr, gc, static_cast<int>(first) + g, -1});
            plan.valid_regions.push_back({gr * cell + n - 1, gc * cell + n - 1,
                                          m - n + 1, m - n + 1, static_cast<int>(first) + g});
        }

        // The input is padded to the kernel-block extent; only its top-left
        // m x m corner is lit.
        Tensor input_block = Tensor::zeros({rows * cell, cols * cell});
        place_cell(input_block, input, 0, 0, cell);
        Tensor field = fourier_conv(input_block, kernel_block);

        for (int g = 0; g < count; ++g) {
            const int gr = g / cols, gc = g % cols;
            result.outputs[first + g] = slice_tile(field, gr * cell, gc * cell, cell, cell);
        }
        result.plans.push_back(std::move(plan));
    }
    return result;
}

// --- channel tiling -----------------------------------------------------------

namespace {

// One square batch of `real_count` live channels (the rest of the grid stays
// dark); returns the full central tile.
Tensor channel_batch(const std::vector<Tensor>& inputs, const std::vector<Tensor>& kernels,
                     int grid, int real_count, int label_base, int m, int n, TilingPlan& plan) {
    const int cell = m + n - 1;

    Tensor input_block = Tensor::zeros({grid * cell, grid * cell});
    Tensor kernel_block = Tensor::zeros({grid * cell, grid * cell});
    for (int c = 0; c < grid * grid; ++c) {
        const int ar = c / grid, ac = c % grid;
        // Mirrored placement makes every channel pair land on the centre tile.
        const int br = grid - 1 - ar, bc = grid - 1 - ac;
        if (c >= real_count) {
            plan.cells.push_back({br, bc, -1, -1});
            continue;
        }
        place_cell(input_block, inputs[static_cast<std::size_t>(c)], ar, ac, cell);
        place_cell(kernel_block, flip_plane(kernels[static_cast<std::size_t>(c)]), br, bc, cell);
        plan.cells.push_back({br, bc, label_base + c, label_base + c});
    }
    plan.grid_rows = grid;
    plan.grid_cols = grid;
    plan.cell = cell;
    plan.valid_regions.push_back(
        {(grid - 1) * cell + n - 1, (grid - 1) * cell + n - 1, m - n + 1, m - n + 1, 0});

    Tensor field = fourier_conv(input_block, kernel_block);
    return slice_tile(field, (grid - 1) * cell, (grid - 1) * cell, cell, cell);
}

} // namespace

TilingResult channel_tiling(const std::vector<Tensor>& inputs, const std::vector<Tensor>& kernels,
                            const DeviceSpec& device) {
    if (inputs.empty() || inputs.size() != kernels.size()) {
        throw config_error("channel_tiling: need one kernel per input channel");
    }
    const int m = inputs[0].extent(0);
    const int n = kernels[0].extent(0);
    for (const Tensor& t : inputs) {
        check_plane(t, "channel_tiling input");
        if (t.extent(0) != m || t.extent(1) != m) {
            throw dimension_error("channel_tiling: inputs must share a square extent");
        }
    }
    for (const Tensor& t : kernels) {
        check_plane(t, "channel_tiling kernel");
        if (t.extent(0) != n || t.extent(1) != n) {
            throw dimension_error("channel_tiling: kernels must share a square extent");
        }
    }

    const int n_c = static_cast<int>(inputs.size());
    {
        const int g = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n_c))));
        if (g * g != n_c) throw config_error("channel_tiling: channel count must be a perfect square");
    }

    const int per_dim = capacity(device.resolution, m, n);
    const int full_grid = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n_c))));

    // Largest square grid that fits decides the batch size; partial trailing
    // batches run on the smallest square that holds them.
    const int batch_grid = std::min(full_grid, per_dim);
    const int batch = batch_grid * batch_grid;

    TilingResult result;
    Tensor total;
    int inference = 0;
    for (int first = 0; first < n_c; first += batch) {
        const int count = std::min(batch, n_c - first);
        const int grid = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(count))));
        std::vector<Tensor> in_batch(inputs.begin() + first, inputs.begin() + first + count);
        std::vector<Tensor> k_batch(kernels.begin() + first, kernels.begin() + first + count);

        TilingPlan plan;
        plan.scheme = TilingScheme::Channel;
        plan.inference_index = inference++;
        Tensor tile = channel_batch(in_batch, k_batch, grid, count, first, m, n, plan);
        if (total.empty()) {
            total = tile;
        } else {
            add_in_place(total, tile);
        }
        result.plans.push_back(std::move(plan));
    }
    result.outputs.push_back(std::move(total));
    return result;
}

// --- mixed tiling ---------------------------------------------------------------

TilingResult mixed_tiling(const std::vector<Tensor>& inputs, const Tensor& kernels,
                          const DeviceSpec& device, bool depthwise) {
    if (inputs.empty()) throw config_error("mixed_tiling: no input channels");
    if (kernels.rank() != 4) throw dimension_error("mixed_tiling: kernels must be [C_out,C_in,N,N]");
    const int c_in = static_cast<int>(inputs.size());
    const int c_out = kernels.extent(0);
    if (kernels.extent(1) != c_in) {
        throw dimension_error("mixed_tiling: kernel depth must equal input channel count");
    }
    const int m = inputs[0].extent(0);
    const int n = kernels.extent(2);
    if (kernels.extent(3) != n) throw dimension_error("mixed_tiling: kernels must be square");
    for (const Tensor& t : inputs) {
        check_plane(t, "mixed_tiling input");
        if (t.extent(0) != m || t.extent(1) != m) {
            throw dimension_error("mixed_tiling: inputs must share a square extent");
        }
    }
    if (depthwise && c_out % c_in != 0) {
        throw config_error("mixed_tiling: depthwise layout needs C_out divisible by C_in");
    }

    const int cell = m + n - 1;
    const int cap = capacity(device.resolution, m, n);
    if (c_in > cap) {
        throw infeasible_error("mixed_tiling: " + std::to_string(c_in) +
                               " input channels exceed capacity " + std::to_string(cap) +
                               "; input splitting is not supported");
    }

    // Inputs tiled horizontally, once; reused by every output batch.
    Tensor input_block = Tensor::zeros({cell, c_in * cell});
    for (int c = 0; c < c_in; ++c) place_cell(input_block, inputs[static_cast<std::size_t>(c)], 0, c, cell);

    TilingResult result;
    result.outputs.resize(static_cast<std::size_t>(c_out));
    int inference = 0;
    for (int k0 = 0; k0 < c_out; k0 += cap) {
        const int rows = std::min(cap, c_out - k0);

        TilingPlan plan;
        plan.scheme = TilingScheme::Mixed;
        plan.cell = cell;
        plan.grid_rows = rows;
        plan.grid_cols = c_in;
        plan.inference_index = inference++;

        Tensor kernel_block = Tensor::zeros({rows * cell, c_in * cell});
        for (int k = k0; k < k0 + rows; ++k) {
            const int designated = depthwise ? k / (c_out / c_in) : -1;
            for (int c = 0; c < c_in; ++c) {
                if (depthwise && c != designated) {
                    plan.cells.push_back({k - k0, c_in - 1 - c, -1, c});
                    continue;
                }
                Tensor plane({n, n});
                for (int i = 0; i < n; ++i) {
                    for (int j = 0; j < n; ++j) plane.at(i, j) = kernels.at(k, c, i, j);
                }
                place_cell(kernel_block, flip_plane(plane), k - k0, c_in - 1 - c, cell);
                plan.cells.push_back({k - k0, c_in - 1 - c, k, c});
            }
            plan.valid_regions.push_back({(k - k0) * cell + n - 1, (c_in - 1) * cell + n - 1,
                                          m - n + 1, m - n + 1, k});
        }

        Tensor field = fourier_conv(input_block, kernel_block);
        for (int k = k0; k < k0 + rows; ++k) {
            result.outputs[static_cast<std::size_t>(k)] =
                slice_tile(field, (k - k0) * cell, (c_in - 1) * cell, cell, cell);
        }
        result.plans.push_back(std::move(plan));
    }
    return result;
}

// --- workload arithmetic ----------------------------------------------------------

InferencePlan plan_inferences(int tokens, int embed_h, int embed_w, int mlp_ratio, int blocks,
                              const DeviceSpec& device) {
    if (tokens < 1 || embed_h < 1 || embed_w < 1 || mlp_ratio < 1 || blocks < 1) {
        throw config_error("plan_inferences: all extents must be positive");
    }
    if (embed_h != embed_w) {
        throw config_error("plan_inferences: deployment shape requires square embeddings");
    }
    const int h = embed_h;
    const int cap = capacity(device.resolution, h, h);

    InferencePlan plan;
    plan.blocks = blocks;
    plan.qkv = ceil_div(3LL * tokens * h * h, cap);
    plan.scores = ceil_div(static_cast<std::int64_t>(tokens) * tokens, cap);

    const int pointwise_cap = capacity(device.resolution, h, 1);
    if (ceil_div(tokens, pointwise_cap) > 1) {
        throw infeasible_error("plan_inferences: weighted-sum stage needs " +
                               std::to_string(tokens) + " cells but capacity is " +
                               std::to_string(pointwise_cap));
    }
    plan.weighted_sum = 1;

    // MLP runs on kernel tiling, one pass per input channel per layer; the
    // widest bank must fit the kernel grid.
    const std::int64_t grid_cells = static_cast<std::int64_t>(cap) * cap;
    const std::int64_t widest = static_cast<std::int64_t>(mlp_ratio) * h * h;
    if (widest > grid_cells) {
        throw infeasible_error("plan_inferences: mlp stage bank of " + std::to_string(widest) +
                               " kernels exceeds grid of " + std::to_string(grid_cells));
    }
    plan.mlp = tokens + mlp_ratio * tokens;

    plan.total = static_cast<std::int64_t>(blocks) *
                 (plan.qkv + plan.scores + plan.weighted_sum + plan.mlp);
    plan.latency_seconds = static_cast<double>(plan.total) / device.clock_hz;
    return plan;
}

double estimate_latency(const InferencePlan& plan, const DeviceSpec& device) {
    return static_cast<double>(plan.total) / device.clock_hz;
}

// --- exports ------------------------------------------------------------------------

namespace {

const char* scheme_name(TilingScheme s) {
    switch (s) {
        case TilingScheme::Kernel: return "kernel";
        case TilingScheme::Channel: return "channel";
        case TilingScheme::Mixed: return "mixed";
    }
    return "?";
}

std::string format_ms(double seconds) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.1f ms", seconds * 1e3);
    return buf;
}

} // namespace

std::string tiling_plan_json(const TilingPlan& plan) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["scheme"] = scheme_name(plan.scheme);
    j["cell"] = plan.cell;
    j["grid"] = {plan.grid_rows, plan.grid_cols};
    j["inference_index"] = plan.inference_index;
    j["cells"] = nlohmann::json::array();
    for (const CellContent& c : plan.cells) {
        j["cells"].push_back({{"row", c.row},
                              {"col", c.col},
                              {"kernel", c.kernel_id},
                              {"channel", c.channel_id}});
    }
    j["valid_regions"] = nlohmann::json::array();
    for (const ValidRegion& v : plan.valid_regions) {
        j["valid_regions"].push_back(
            {{"y", v.y}, {"x", v.x}, {"rows", v.rows}, {"cols", v.cols}, {"output", v.output_id}});
    }
    return j.dump(2);
}

std::string inference_plan_json(const InferencePlan& plan, const DeviceSpec& device) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["device"] = {{"resolution", device.resolution}, {"clock_hz", device.clock_hz}};
    j["per_block"] = {{"qkv", plan.qkv},
                      {"scores", plan.scores},
                      {"weighted_sum", plan.weighted_sum},
                      {"mlp", plan.mlp}};
    j["blocks"] = plan.blocks;
    j["total"] = plan.total;
    j["latency_seconds"] = plan.latency_seconds;
    j["latency_display"] = format_ms(plan.latency_seconds);
    return j.dump(2);
}

std::string inference_plan_table(const InferencePlan& plan, const DeviceSpec& device) {
    std::string out;
    char line[160];
    std::snprintf(line, sizeof(line), "%-10s %-14s %10s %12s\n", "layer", "stage", "count",
                  "cumulative");
    out += line;
    std::int64_t cum = 0;
    for (int b = 0; b < plan.blocks; ++b) {
        const struct {
            const char* name;
            int count;
        } stages[] = {{"qkv", plan.qkv},
                      {"scores", plan.scores},
                      {"weighted_sum", plan.weighted_sum},
                      {"mlp", plan.mlp}};
        for (const auto& s : stages) {
            cum += s.count;
            std::snprintf(line, sizeof(line), "block %-4d %-14s %10d %12lld\n", b, s.name, s.count,
                          static_cast<long long>(cum));
            out += line;
        }
    }
    std::snprintf(line, sizeof(line), "total %lld, %s @ %.3g Hz (%.6g ms exact)\n",
                  static_cast<long long>(plan.total), format_ms(plan.latency_seconds).c_str(),
                  device.clock_hz, plan.latency_seconds * 1e3);
    out += line;
    return out;
}

} // namespace convvit
