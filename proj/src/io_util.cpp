#include "convvit/io_util.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace convvit {

void ensure_directory(const std::string& path) {
    if (path.empty() || path == ".") return;
    std::error_code ec;
    std::filesystem::create_directories(path, ec);
    if (ec) throw io_error("cannot create directory " + path + ": " + ec.message());
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot write " + path);
    out << text;
}

void write_pgm(const std::string& path, const Tensor& map01) {
    if (map01.rank() != 2) throw dimension_error("write_pgm: expected a 2D map");
    std::ofstream out(path);
    if (!out) throw io_error("cannot write " + path);
    const int h = map01.extent(0), w = map01.extent(1);
    out << "P2\n" << w << " " << h << "\n255\n";
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
            const double v = std::clamp(map01.at(i, j), 0.0, 1.0);
            out << static_cast<int>(std::lround(v * 255.0)) << (j + 1 < w ? " " : "");
        }
        out << "\n";
    }
}

Tensor read_pgm(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open " + path);

    auto next_token = [&in, &path]() {
        std::string tok;
        while (in >> tok) {
            if (tok[0] == '#') {
                std::string rest;
                std::getline(in, rest);
                continue;
            }
            return tok;
        }
        throw io_error("truncated PGM file " + path);
    };

    if (next_token() != "P2") throw io_error(path + ": only ASCII (P2) PGM is supported");
    const int w = std::stoi(next_token());
    const int h = std::stoi(next_token());
    const int maxval = std::stoi(next_token());
    if (w < 1 || h < 1 || maxval < 1) throw io_error(path + ": bad PGM header");

    Tensor img({1, h, w});
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
            img.at(0, i, j) = std::stod(next_token()) / maxval;
        }
    }
    return img;
}

void write_matrix_csv(const std::string& path, const Tensor& m) {
    if (m.rank() != 2) throw dimension_error("write_matrix_csv: expected a 2D tensor");
    std::ofstream out(path);
    if (!out) throw io_error("cannot write " + path);
    char buf[32];
    for (int i = 0; i < m.extent(0); ++i) {
        for (int j = 0; j < m.extent(1); ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", m.at(i, j));
            out << buf << (j + 1 < m.extent(1) ? "," : "");
        }
        out << "\n";
    }
}

} // namespace convvit
