#include "stcn/io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace stcn {

namespace {

constexpr std::uint32_t kFormatVersion = 1;

void put_bytes(std::ostream& out, const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    put_bytes(out, b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    put_bytes(out, b, 8);
}

void put_f64(std::ostream& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
}

void put_string(std::ostream& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    put_bytes(out, s.data(), s.size());
}

void get_bytes(std::istream& in, void* p, std::size_t n, const char* what) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) {
        throw IoError(std::string("truncated stream while reading ") + what);
    }
}

std::uint32_t get_u32(std::istream& in, const char* what) {
    unsigned char b[4];
    get_bytes(in, b, 4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t get_u64(std::istream& in, const char* what) {
    unsigned char b[8];
    get_bytes(in, b, 8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

double get_f64(std::istream& in, const char* what) {
    const std::uint64_t bits = get_u64(in, what);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

std::string get_string(std::istream& in, const char* what) {
    const std::uint32_t n = get_u32(in, what);
    std::string s(n, '\0');
    if (n) get_bytes(in, s.data(), n, what);
    return s;
}

void expect_magic(std::istream& in, const char* magic, const char* what) {
    char buf[4];
    get_bytes(in, buf, 4, what);
    if (std::memcmp(buf, magic, 4) != 0) {
        throw IoError(std::string("bad magic while reading ") + what + ", expected \"" + magic +
                      "\"");
    }
}

void expect_version(std::istream& in, const char* what) {
    const std::uint32_t v = get_u32(in, what);
    if (v != kFormatVersion) {
        throw IoError(std::string("unsupported format version ") + std::to_string(v) + " for " +
                      what);
    }
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string() + " for reading");
    return in;
}

} // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
    put_bytes(out, "STCN", 4);
    put_u32(out, kFormatVersion);
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) put_u64(out, e);
    for (std::size_t i = 0; i < t.size(); ++i) put_f64(out, t[i]);
}

Tensor read_tensor(std::istream& in) {
    expect_magic(in, "STCN", "tensor");
    expect_version(in, "tensor");
    const std::uint32_t rank = get_u32(in, "tensor rank");
    if (rank == 0 || rank > 32) {
        throw IoError("implausible tensor rank " + std::to_string(rank));
    }
    Shape shape(rank);
    for (std::uint32_t i = 0; i < rank; ++i) {
        shape[i] = static_cast<std::size_t>(get_u64(in, "tensor extent"));
        if (shape[i] == 0) throw IoError("tensor extent of zero");
    }
    const std::size_t n = shape_numel(shape);
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) data[i] = get_f64(in, "tensor payload");
    return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
    auto out = open_out(path);
    write_tensor(out, t);
    if (!out) throw IoError("failed writing " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
    auto in = open_in(path);
    return read_tensor(in);
}

void save_archive(const std::filesystem::path& path, const NamedTensors& tensors) {
    // Precompute payload offsets: blob size is 12 + 8*rank + 8*numel bytes.
    std::vector<std::uint64_t> offsets(tensors.size());
    std::uint64_t off = 0;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        offsets[i] = off;
        const Tensor& t = tensors[i].second;
        off += 12 + 8 * t.rank() + 8 * t.size();
    }
    auto out = open_out(path);
    put_bytes(out, "STCA", 4);
    put_u32(out, kFormatVersion);
    put_u64(out, tensors.size());
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        const auto& [name, t] = tensors[i];
        put_string(out, name);
        put_u32(out, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t e : t.shape()) put_u64(out, e);
        put_u64(out, offsets[i]);
    }
    for (const auto& [name, t] : tensors) write_tensor(out, t);
    if (!out) throw IoError("failed writing " + path.string());
}

NamedTensors load_archive(const std::filesystem::path& path) {
    auto in = open_in(path);
    expect_magic(in, "STCA", "archive");
    expect_version(in, "archive");
    const std::uint64_t count = get_u64(in, "archive entry count");
    struct Entry {
        std::string name;
        Shape shape;
        std::uint64_t offset;
    };
    std::vector<Entry> entries(count);
    for (auto& e : entries) {
        e.name = get_string(in, "archive entry name");
        const std::uint32_t rank = get_u32(in, "archive entry rank");
        e.shape.resize(rank);
        for (std::uint32_t d = 0; d < rank; ++d)
            e.shape[d] = static_cast<std::size_t>(get_u64(in, "archive entry extent"));
        e.offset = get_u64(in, "archive entry offset");
    }
    const std::streampos payload_start = in.tellg();
    NamedTensors out;
    out.reserve(count);
    for (const auto& e : entries) {
        in.seekg(payload_start + static_cast<std::streamoff>(e.offset));
        Tensor t = read_tensor(in);
        if (t.shape() != e.shape) {
            throw IoError("archive entry \"" + e.name + "\": manifest shape " +
                          shape_str(e.shape) + " does not match payload " + shape_str(t.shape()));
        }
        out.emplace_back(e.name, std::move(t));
    }
    return out;
}

void save_feature(const std::filesystem::path& path, const FeatureSequence& f) {
    auto out = open_out(path);
    put_bytes(out, "STCF", 4);
    put_u32(out, kFormatVersion);
    put_u32(out, static_cast<std::uint32_t>(f.label));
    put_string(out, f.modality);
    write_tensor(out, f.values);
    if (!out) throw IoError("failed writing " + path.string());
}

FeatureSequence load_feature(const std::filesystem::path& path) {
    auto in = open_in(path);
    expect_magic(in, "STCF", "feature cache entry");
    expect_version(in, "feature cache entry");
    FeatureSequence f;
    f.label = get_u32(in, "feature label");
    f.modality = get_string(in, "feature modality");
    f.values = read_tensor(in);
    if (f.values.rank() != 2) {
        throw IoError("feature cache entry holds a non-matrix tensor " +
                      shape_str(f.values.shape()));
    }
    return f;
}

} // namespace stcn
