#include "invdes/property.hpp"

namespace invdes {

double volume_fraction(const Microstructure& m) {
    m.validate();
    return static_cast<double>(m.positive_count()) /
           (static_cast<double>(m.side) * static_cast<double>(m.side));
}

double interface_density(const Microstructure& m) {
    m.validate();
    const int s = m.side;
    if (s < 2) return 0.0;
    long opposite = 0;
    for (int y = 0; y < s; ++y) {
        for (int x = 0; x < s; ++x) {
            const bool p = m.binary_at(y * s + x);
            if (x + 1 < s && p != m.binary_at(y * s + x + 1)) ++opposite;
            if (y + 1 < s && p != m.binary_at((y + 1) * s + x)) ++opposite;
        }
    }
    const double total_pairs = 2.0 * s * (s - 1);
    return static_cast<double>(opposite) / total_pairs;
}

double absorption(const Microstructure& m) {
    const double vf = volume_fraction(m);
    const double iface = interface_density(m);
    return 0.5 + 0.3 * (0.6 * (4.0 * vf * (1.0 - vf)) + 0.4 * iface);
}

}  // namespace invdes
