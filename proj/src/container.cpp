#include "stdmae/container.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "stdmae/errors.hpp"

namespace stdmae {

namespace {

constexpr char kMagic[8] = {'S', 'T', 'D', 'M', 'A', 'E', 'C', 'K'};

void put_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(const unsigned char* b) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

} // namespace

void write_container(const std::filesystem::path& path, const nlohmann::json& header, const NamedParams& tensors) {
    nlohmann::json h = header;
    h["tensors"] = nlohmann::json::array();
    for (const auto& [name, t] : tensors) h["tensors"].push_back({{"name", name}, {"shape", t.shape()}});
    const std::string text = h.dump();

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(kMagic, 8);
    put_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    std::vector<unsigned char> buf;
    for (const auto& [name, t] : tensors) {
        buf.resize(t.numel() * 4);
        std::size_t k = 0;
        for (Real v : t.values()) {
            const float f = static_cast<float>(v);
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            for (int i = 0; i < 4; ++i) buf[k++] = static_cast<unsigned char>(bits >> (8 * i));
        }
        out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    }
    if (!out) throw DataError("write failed: " + path.string());
}

Container read_container(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0)
        throw DataError(path.string() + ": not a checkpoint container");
    const std::uint64_t hlen = get_u64(bytes.data() + 8);
    if (hlen > bytes.size() - 16) throw DataError(path.string() + ": truncated header");
    Container c;
    try {
        c.header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(hlen));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": malformed header: " + e.what());
    }
    std::size_t pos = 16 + hlen;
    if (!c.header.contains("tensors") || !c.header["tensors"].is_array())
        throw DataError(path.string() + ": header lacks tensor table");
    for (const auto& entry : c.header["tensors"]) {
        const auto name = entry.at("name").get<std::string>();
        const auto shape = entry.at("shape").get<Shape>();
        const std::size_t n = numel_of(shape);
        if (bytes.size() - pos < n * 4) throw DataError(path.string() + ": truncated tensor " + name);
        std::vector<Real> v(n);
        for (std::size_t i = 0; i < n; ++i, pos += 4) {
            std::uint32_t bits = 0;
            for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(bytes[pos + k]) << (8 * k);
            float f;
            std::memcpy(&f, &bits, 4);
            v[i] = f;
        }
        c.tensors.emplace_back(name, Tensor(shape, std::move(v)));
    }
    if (pos != bytes.size()) throw DataError(path.string() + ": trailing bytes after tensors");
    return c;
}

void round_to_float32(std::span<Real> values) {
    for (Real& v : values) v = static_cast<Real>(static_cast<float>(v));
}

void round_to_float32(const NamedParams& params) {
    for (const auto& [name, t] : params) round_to_float32(Tensor(t).values_mut());
}

std::string hex64(std::uint64_t v) {
    std::ostringstream s;
    s << std::hex;
    s.width(16);
    s.fill('0');
    s << v;
    return s.str();
}

std::string file_hash(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::uint64_t h = 1469598103934665603ULL;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof buf);
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ULL;
        }
    }
    return hex64(h);
}

void assign_params(const NamedParams& dst, const NamedParams& src) {
    std::map<std::string, const Tensor*> by_name;
    for (const auto& [name, t] : src) by_name[name] = &t;
    for (const auto& [name, t] : dst) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw DataError("checkpoint lacks parameter " + name);
        if (it->second->shape() != t.shape())
            throw DataError("parameter " + name + " has shape " + shape_str(it->second->shape()) + ", expected " +
                            shape_str(t.shape()));
        auto d = Tensor(t).values_mut();
        auto s = it->second->values();
        std::copy(s.begin(), s.end(), d.begin());
    }
}

} // namespace stdmae
