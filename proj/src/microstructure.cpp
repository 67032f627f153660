#include "invdes/microstructure.hpp"

#include <fstream>

namespace invdes {

void write_pgm(const std::string& path, const Microstructure& m) {
    m.validate();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("pgm: cannot open '" + path + "' for writing");
    f << "P5\n" << m.side << " " << m.side << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(m.side));
    for (int y = 0; y < m.side; ++y) {
        for (int x = 0; x < m.side; ++x)
            row[static_cast<std::size_t>(x)] = m.binary_at(y * m.side + x) ? 255 : 0;
        f.write(reinterpret_cast<const char*>(row.data()), m.side);
    }
    if (!f) throw IoError("pgm: write failed for '" + path + "'");
}

Microstructure read_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("pgm: cannot open '" + path + "'");
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    f >> magic >> w >> h >> maxval;
    if (magic != "P5" || w != h || w < 1 || maxval != 255)
        throw IoError("pgm: '" + path + "' is not a square P5/255 image");
    f.get();  // single whitespace after header
    Microstructure m;
    m.side = w;
    m.pixels.resize(static_cast<long>(w) * h);
    std::vector<unsigned char> buf(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw IoError("pgm: truncated '" + path + "'");
    for (std::size_t i = 0; i < buf.size(); ++i)
        m.pixels[static_cast<long>(i)] = buf[i] >= 128 ? 1.0f : -1.0f;
    return m;
}

void write_pgm_grid(const std::string& path, const std::vector<Microstructure>& images) {
    if (images.empty()) throw IoError("pgm grid: no images");
    const int side = images[0].side;
    for (const auto& m : images) {
        m.validate();
        if (m.side != side) throw ShapeError("pgm grid: mixed image sides");
    }
    const int gutter = 1;
    const int w = static_cast<int>(images.size()) * side + (static_cast<int>(images.size()) - 1) * gutter;
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("pgm grid: cannot open '" + path + "' for writing");
    f << "P5\n" << w << " " << side << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(w), 128);
    for (int y = 0; y < side; ++y) {
        int x0 = 0;
        for (const auto& m : images) {
            for (int x = 0; x < side; ++x)
                row[static_cast<std::size_t>(x0 + x)] = m.binary_at(y * side + x) ? 255 : 0;
            x0 += side + gutter;
        }
        f.write(reinterpret_cast<const char*>(row.data()), w);
    }
    if (!f) throw IoError("pgm grid: write failed for '" + path + "'");
}

}  // namespace invdes
