#include "stvg/serialize.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace stvg {

namespace {

constexpr char kMagic[4] = {'S', 'T', 'V', 'T'};

void write_bytes(std::ostream& os, const void* p, size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!os) throw std::runtime_error("tensor write failed");
}

void read_bytes(std::istream& is, void* p, size_t n) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (is.gcount() != static_cast<std::streamsize>(n))
        throw std::runtime_error("tensor read failed: truncated stream");
}

}  // namespace

void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    write_bytes(os, b, 4);
}

void write_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    write_bytes(os, b, 8);
}

void write_f64(std::ostream& os, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    write_u64(os, bits);
}

void write_string(std::ostream& os, const std::string& s) {
    write_u32(os, static_cast<uint32_t>(s.size()));
    if (!s.empty()) write_bytes(os, s.data(), s.size());
}

uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    read_bytes(is, b, 4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}

uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    read_bytes(is, b, 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

double read_f64(std::istream& is) {
    const uint64_t bits = read_u64(is);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

std::string read_string(std::istream& is) {
    const uint32_t n = read_u32(is);
    std::string s(n, '\0');
    if (n) read_bytes(is, s.data(), n);
    return s;
}

void write_tensor(std::ostream& os, const Tensor& t) {
    write_bytes(os, kMagic, 4);
    write_u32(os, kTensorFormatVersion);
    write_u32(os, static_cast<uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) write_u64(os, static_cast<uint64_t>(t.dim(i)));
    for (int64_t i = 0; i < t.size(); ++i) write_f64(os, t.data()[i]);
}

Tensor read_tensor(std::istream& is) {
    char magic[4];
    read_bytes(is, magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("tensor read failed: bad magic");
    const uint32_t version = read_u32(is);
    if (version != kTensorFormatVersion)
        throw std::runtime_error("tensor read failed: unsupported version " +
                                 std::to_string(version));
    const uint32_t rank = read_u32(is);
    if (rank > 16) throw std::runtime_error("tensor read failed: implausible rank");
    Shape shape(rank);
    int64_t n = 1;
    for (uint32_t i = 0; i < rank; ++i) {
        const uint64_t e = read_u64(is);
        if (e == 0 || e > (1ull << 32)) throw std::runtime_error("tensor read failed: bad extent");
        shape[i] = static_cast<int>(e);
        n *= shape[i];
    }
    std::vector<double> data(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) data[static_cast<size_t>(i)] = read_f64(is);
    return Tensor::from_data(std::move(shape), std::move(data));
}

void save_tensor_file(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    write_tensor(os, t);
}

Tensor load_tensor_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open for read: " + path);
    return read_tensor(is);
}

}  // namespace stvg
