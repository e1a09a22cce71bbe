#include "dcppd/serialize.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace dcppd {

namespace {
constexpr char kMagic[4] = {'D', 'C', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void write_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

void write_u64(std::vector<unsigned char>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

std::uint32_t read_u32(const unsigned char* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}

std::uint64_t read_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

void write_f32(std::vector<unsigned char>& out, const std::vector<double>& values) {
    for (double d : values) {
        float f = static_cast<float>(d);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        write_u32(out, bits);
    }
}

void read_f32(const unsigned char* p, std::size_t count, std::vector<double>& out) {
    out.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t bits = read_u32(p + 4 * i);
        float f;
        std::memcpy(&f, &bits, 4);
        out[i] = static_cast<double>(f);
    }
}

void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for write: " + path.string());
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed: " + path.string());
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for read: " + path.string());
    f.seekg(0, std::ios::end);
    const auto n = f.tellg();
    f.seekg(0);
    std::vector<unsigned char> bytes(static_cast<std::size_t>(n));
    f.read(reinterpret_cast<char*>(bytes.data()), n);
    if (!f) throw std::runtime_error("read failed: " + path.string());
    return bytes;
}

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return &t;
    return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const std::string& config_json,
                     const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
    nlohmann::ordered_json header;
    header["format_version"] = kVersion;
    header["byte_order"] = "little";
    header["dtype"] = "float32";
    header["config"] =
        config_json.empty() ? nlohmann::ordered_json::object() : nlohmann::ordered_json::parse(config_json);

    nlohmann::ordered_json dir = nlohmann::ordered_json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        nlohmann::ordered_json e;
        e["name"] = name;
        e["shape"] = t->shape;
        e["offset"] = offset;
        dir.push_back(e);
        offset += static_cast<std::uint64_t>(t->numel());
    }
    header["tensors"] = dir;

    const std::string hs = header.dump();
    std::vector<unsigned char> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    write_u32(out, kVersion);
    write_u64(out, hs.size());
    out.insert(out.end(), hs.begin(), hs.end());
    for (const auto& [name, t] : tensors) write_f32(out, t->data);
    write_file(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw std::runtime_error("not a checkpoint file: " + path.string());
    const std::uint32_t version = read_u32(bytes.data() + 4);
    if (version != kVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    const std::uint64_t hlen = read_u64(bytes.data() + 8);
    if (16 + hlen > bytes.size()) throw std::runtime_error("truncated checkpoint header");

    Checkpoint ck;
    ck.header_json.assign(reinterpret_cast<const char*>(bytes.data() + 16), hlen);
    auto header = nlohmann::ordered_json::parse(ck.header_json);
    ck.config_json = header.at("config").dump();

    const unsigned char* blob = bytes.data() + 16 + hlen;
    const std::size_t blob_elems = (bytes.size() - 16 - hlen) / 4;
    for (const auto& e : header.at("tensors")) {
        Tensor t;
        for (const auto& d : e.at("shape")) t.shape.push_back(d.get<std::int64_t>());
        const auto offset = e.at("offset").get<std::uint64_t>();
        const auto n = static_cast<std::size_t>(t.numel());
        if (offset + n > blob_elems) throw std::runtime_error("truncated checkpoint tensor data");
        read_f32(blob + 4 * offset, n, t.data);
        ck.tensors.emplace_back(e.at("name").get<std::string>(), std::move(t));
    }
    return ck;
}

}  // namespace dcppd
