#include "invdes/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "invdes/error.hpp"

namespace invdes {

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f32(std::vector<std::uint8_t>& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

struct Reader {
    const std::vector<std::uint8_t>& buf;
    std::size_t pos = 0;

    std::uint8_t u8() {
        if (pos + 1 > buf.size()) throw IoError("checkpoint: truncated file");
        return buf[pos++];
    }
    std::uint16_t u16() {
        std::uint16_t v = u8();
        return static_cast<std::uint16_t>(v | (static_cast<std::uint16_t>(u8()) << 8));
    }
    std::uint32_t u32() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
        return v;
    }
    float f32() {
        std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
};

constexpr std::uint16_t kVersion = 1;

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedArray>& tensors) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), {'M', 'F', 'C', 'K'});
    put_u16(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        if (t.name.size() > 0xffff) throw IoError("checkpoint: tensor name too long");
        put_u16(out, static_cast<std::uint16_t>(t.name.size()));
        out.insert(out.end(), t.name.begin(), t.name.end());
        if (t.shape.size() > 0xff) throw IoError("checkpoint: rank too large");
        out.push_back(static_cast<std::uint8_t>(t.shape.size()));
        std::size_t n = 1;
        for (Index d : t.shape) {
            put_u32(out, static_cast<std::uint32_t>(d));
            n *= static_cast<std::size_t>(d);
        }
        if (n != t.data.size()) throw IoError("checkpoint: '" + t.name + "' shape/data mismatch");
        for (float v : t.data) put_f32(out, v);
    }
    return out;
}

std::vector<NamedArray> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    Reader r{bytes};
    if (bytes.size() < 4 || bytes[0] != 'M' || bytes[1] != 'F' || bytes[2] != 'C' || bytes[3] != 'K')
        throw IoError("checkpoint: bad magic");
    r.pos = 4;
    const std::uint16_t version = r.u16();
    if (version != kVersion)
        throw IoError("checkpoint: unsupported version " + std::to_string(version));
    const std::uint32_t count = r.u32();
    std::vector<NamedArray> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedArray t;
        const std::uint16_t name_len = r.u16();
        t.name.resize(name_len);
        for (std::uint16_t j = 0; j < name_len; ++j) t.name[j] = static_cast<char>(r.u8());
        const std::uint8_t rank = r.u8();
        std::size_t n = 1;
        for (std::uint8_t j = 0; j < rank; ++j) {
            const std::uint32_t d = r.u32();
            t.shape.push_back(static_cast<Index>(d));
            n *= d;
        }
        t.data.resize(n);
        for (std::size_t j = 0; j < n; ++j) t.data[j] = r.f32();
        out.push_back(std::move(t));
    }
    return out;
}

void save_checkpoint(const std::string& path, const std::vector<NamedArray>& tensors) {
    const auto bytes = encode_checkpoint(tensors);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("checkpoint: cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("checkpoint: write failed for '" + path + "'");
}

std::vector<NamedArray> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("checkpoint: cannot open '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

}  // namespace invdes
