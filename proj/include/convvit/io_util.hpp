#pragma once

#include <string>

#include "convvit/tensor.hpp"

namespace convvit {

void ensure_directory(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

// P2 (ASCII, 8-bit) grayscale image; values are clamped to [0, 1].
void write_pgm(const std::string& path, const Tensor& map01);
// Returns [1, H, W] scaled to [0, 1].
Tensor read_pgm(const std::string& path);

// Comma-separated doubles, one row per leading index of a rank-2 tensor.
void write_matrix_csv(const std::string& path, const Tensor& m);

} // namespace convvit
