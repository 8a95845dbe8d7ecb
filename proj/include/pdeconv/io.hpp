#pragma once

// File formats.
//
// Matrix text: first line `rows cols`, then `rows` lines of `cols`
// space-separated reals.  PGM: binary P5 with maxval 255 or 65535, linearly
// mapped through a sidecar `<stem>.scale` file holding `min max`.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pdeconv/core.hpp"

namespace pdeconv {

inline void write_matrix_text(std::ostream& out, std::size_t rows, std::size_t cols, std::span<const double> data) {
    char buf[40];
    out << rows << ' ' << cols << '\n';
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            std::snprintf(buf, sizeof buf, "%.17g", data[r * cols + c]);
            if (c) out << ' ';
            out << buf;
        }
        out << '\n';
    }
}

inline void write_matrix_text(const std::filesystem::path& path, const Image& img) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    write_matrix_text(out, img.rows(), img.cols(), img.values());
}

inline Image read_matrix_text(std::istream& in, const std::string& name = "matrix") {
    long rows = 0, cols = 0;
    if (!(in >> rows >> cols) || rows <= 0 || cols <= 0) throw Error(name + ": malformed matrix header");
    std::vector<double> data(static_cast<std::size_t>(rows * cols));
    for (double& x : data) {
        if (!(in >> x)) throw Error(name + ": truncated matrix data");
        if (x < 0.0 || !std::isfinite(x)) throw Error(name + ": negative or non-finite entry");
    }
    std::string extra;
    if (in >> extra) throw Error(name + ": trailing data after matrix");
    return Image(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols), std::move(data));
}

inline Image read_matrix_text(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    return read_matrix_text(in, path.string());
}

inline std::filesystem::path scale_sidecar(const std::filesystem::path& pgm) {
    auto p = pgm;
    p.replace_extension(".scale");
    return p;
}

/// Writes P5 and the `min max` sidecar.
inline void write_pgm(const std::filesystem::path& path, const Image& img, unsigned maxval = 65535) {
    if (maxval != 255 && maxval != 65535) throw Error("write_pgm: maxval must be 255 or 65535");
    const auto [lo_it, hi_it] = std::minmax_element(img.values().begin(), img.values().end());
    const double lo = *lo_it, hi = *hi_it;
    const double span = hi > lo ? hi - lo : 1.0;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << "P5\n" << img.cols() << ' ' << img.rows() << '\n' << maxval << '\n';
    for (double x : img.values()) {
        const auto q = static_cast<std::uint32_t>(std::lround((x - lo) / span * maxval));
        if (maxval == 255) {
            out.put(static_cast<char>(q));
        } else {
            out.put(static_cast<char>(q >> 8));
            out.put(static_cast<char>(q & 0xff));
        }
    }
    std::ofstream side(scale_sidecar(path));
    if (!side) throw Error("cannot write scale sidecar for " + path.string());
    char buf[80];
    std::snprintf(buf, sizeof buf, "%.17g %.17g\n", lo, hi);
    side << buf;
}

/// Reads P5; applies the sidecar mapping when present, else returns raw levels.
inline Image read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    auto next_token = [&]() {
        std::string tok;
        char ch;
        while (in.get(ch)) {
            if (ch == '#') {
                std::string skip;
                std::getline(in, skip);
            } else if (std::isspace(static_cast<unsigned char>(ch))) {
                if (!tok.empty()) break;
            } else {
                tok.push_back(ch);
            }
        }
        return tok;
    };
    if (next_token() != "P5") throw Error(path.string() + ": not a binary PGM (P5)");
    long cols = 0, rows = 0, maxval = 0;
    try {
        cols = std::stol(next_token());
        rows = std::stol(next_token());
        maxval = std::stol(next_token());
    } catch (const std::exception&) {
        throw Error(path.string() + ": malformed PGM header");
    }
    if (cols <= 0 || rows <= 0 || (maxval != 255 && maxval != 65535)) throw Error(path.string() + ": unsupported PGM header");

    double lo = 0.0, hi = static_cast<double>(maxval);
    if (std::ifstream side(scale_sidecar(path)); side) {
        if (!(side >> lo >> hi)) throw Error(path.string() + ": malformed scale sidecar");
    }
    const double span = hi > lo ? hi - lo : 0.0;

    std::vector<double> data(static_cast<std::size_t>(rows * cols));
    for (double& x : data) {
        unsigned q = 0;
        const int b0 = in.get();
        if (b0 == EOF) throw Error(path.string() + ": truncated PGM data");
        q = static_cast<unsigned>(b0);
        if (maxval == 65535) {
            const int b1 = in.get();
            if (b1 == EOF) throw Error(path.string() + ": truncated PGM data");
            q = (q << 8) | static_cast<unsigned>(b1);
        }
        x = lo + span * static_cast<double>(q) / static_cast<double>(maxval);
        if (x < 0.0) throw Error(path.string() + ": scale sidecar maps to negative values");
    }
    return Image(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols), std::move(data));
}

inline bool is_pgm_path(const std::filesystem::path& path) {
    auto ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".pgm";
}

inline Image load_image(const std::filesystem::path& path) {
    return is_pgm_path(path) ? read_pgm(path) : read_matrix_text(path);
}

inline void save_image(const std::filesystem::path& path, const Image& img) {
    if (is_pgm_path(path)) write_pgm(path, img);
    else write_matrix_text(path, img);
}

}  // namespace pdeconv
