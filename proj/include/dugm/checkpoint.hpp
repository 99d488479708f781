#pragma once

// Checkpoint container: a binary file of named float64 tensors ("FPRM",
// little-endian, same conventions as FRAS) next to a JSON manifest.
//
//   magic "FPRM" | u32 tensor_count
//   per tensor: u32 name_len | name bytes | u32 rank | u32 dims[rank] | f64 payload

#include <dugm/raster.hpp>

#include <json.hpp>

#include <bit>
#include <filesystem>
#include <string>
#include <vector>

namespace dugm {

struct NamedTensor {
    std::string name;
    std::vector<std::uint32_t> shape;
    std::vector<double> values;

    std::size_t element_count() const {
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        return n;
    }
};

inline std::string encode_tensors(const std::vector<NamedTensor>& tensors) {
    std::string out("FPRM", 4);
    detail::put_u32(out, std::uint32_t(tensors.size()));
    for (const auto& t : tensors) {
        if (t.values.size() != t.element_count()) throw FormatError("tensor " + t.name + ": shape/payload mismatch");
        detail::put_u32(out, std::uint32_t(t.name.size()));
        out += t.name;
        detail::put_u32(out, std::uint32_t(t.shape.size()));
        for (auto d : t.shape) detail::put_u32(out, d);
        for (double v : t.values) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
    return out;
}

inline std::vector<NamedTensor> decode_tensors(std::string_view bytes) {
    auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    std::size_t pos = 0;
    auto need = [&](std::size_t n) {
        if (bytes.size() - pos < n) throw FormatError("FPRM: truncated container");
    };
    auto u32 = [&] {
        need(4);
        auto v = detail::get_u32(p + pos);
        pos += 4;
        return v;
    };
    need(4);
    if (bytes.substr(0, 4) != "FPRM") throw FormatError("FPRM: bad magic");
    pos = 4;
    const std::uint32_t count = u32();
    std::vector<NamedTensor> out(count);
    for (auto& t : out) {
        const std::uint32_t len = u32();
        need(len);
        t.name.assign(bytes.substr(pos, len));
        pos += len;
        const std::uint32_t rank = u32();
        t.shape.resize(rank);
        for (auto& d : t.shape) d = u32();
        const std::size_t n = t.element_count();
        need(8 * n);
        t.values.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            t.values[i] = std::bit_cast<double>(detail::get_u64(p + pos));
            if (!std::isfinite(t.values[i])) throw FormatError("FPRM: non-finite value in " + t.name);
            pos += 8;
        }
    }
    if (pos != bytes.size()) throw FormatError("FPRM: trailing bytes");
    return out;
}

inline std::filesystem::path params_path(const std::filesystem::path& prefix) {
    return prefix.string() + ".params";
}
inline std::filesystem::path manifest_path(const std::filesystem::path& prefix) { return prefix.string() + ".json"; }

/// Writes <prefix>.params and <prefix>.json. The manifest gains a "tensors"
/// array listing names and shapes.
inline void save_checkpoint(const std::filesystem::path& prefix, const std::vector<NamedTensor>& tensors,
                            nlohmann::json manifest) {
    if (prefix.has_parent_path()) std::filesystem::create_directories(prefix.parent_path());
    manifest["tensors"] = nlohmann::json::array();
    for (const auto& t : tensors) manifest["tensors"].push_back({{"name", t.name}, {"shape", t.shape}});
    detail::write_file(params_path(prefix), encode_tensors(tensors));
    detail::write_file(manifest_path(prefix), manifest.dump(2) + "\n");
}

struct Checkpoint {
    nlohmann::json manifest;
    std::vector<NamedTensor> tensors;

    const NamedTensor& tensor(const std::string& name) const {
        for (const auto& t : tensors)
            if (t.name == name) return t;
        throw FormatError("checkpoint: missing tensor " + name);
    }
};

inline Checkpoint load_checkpoint(const std::filesystem::path& prefix) {
    Checkpoint c;
    try {
        c.manifest = nlohmann::json::parse(detail::read_file(manifest_path(prefix)));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("checkpoint manifest: " + std::string(e.what()));
    }
    c.tensors = decode_tensors(detail::read_file(params_path(prefix)));
    return c;
}

} // namespace dugm
