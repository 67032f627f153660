#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "invdes/error.hpp"

namespace invdes {

/// Two-phase microstructure image. Pixels live in [-1, 1]; the binary view is
/// sign(pixel) with phase A = -1 and phase B = +1 (a pixel of exactly 0
/// counts as phase A).
struct Microstructure {
    int side = 0;
    Eigen::ArrayXf pixels;  // side*side values, row-major

    bool binary_at(int i) const { return pixels[i] > 0.0f; }

    /// Number of positive-phase pixels.
    long positive_count() const {
        long n = 0;
        for (int i = 0; i < pixels.size(); ++i) n += binary_at(i) ? 1 : 0;
        return n;
    }

    void validate() const {
        if (side < 1 || pixels.size() != static_cast<long>(side) * side)
            throw ShapeError("microstructure: side/pixel mismatch");
        if (!pixels.isFinite().all()) throw NumericError("microstructure: non-finite pixels");
        if ((pixels < -1.0f).any() || (pixels > 1.0f).any())
            throw NumericError("microstructure: pixels outside [-1, 1]");
    }
};

/// Writes the binary view as 8-bit binary PGM (P5): 0 = phase A, 255 = phase B.
void write_pgm(const std::string& path, const Microstructure& m);

/// Reads a PGM written by write_pgm back into a {-1, +1} microstructure.
Microstructure read_pgm(const std::string& path);

/// Writes a horizontal strip of images separated by 1-pixel gray gutters.
void write_pgm_grid(const std::string& path, const std::vector<Microstructure>& images);

}  // namespace invdes
