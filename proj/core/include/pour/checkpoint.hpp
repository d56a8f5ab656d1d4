#pragma once

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <utility>

#include "pour/error.hpp"
#include "pour/tensor.hpp"

namespace pour {

// Weight snapshot on disk: "POUR" magic, format version byte, little-endian
// u32 entry count, then per entry a u16-length name, u8 rank, u32 extents and
// the f32 payload. Entries keep the model's parameter declaration order.

struct CheckpointEntry {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

namespace detail {

inline void ckpt_put_u32(std::string& s, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(char((v >> (8 * i)) & 0xff));
}

inline void ckpt_put_u16(std::string& s, std::uint16_t v) {
    s.push_back(char(v & 0xff));
    s.push_back(char((v >> 8) & 0xff));
}

struct CkptReader {
    const unsigned char* p;
    std::size_t n, pos = 0;
    const unsigned char* take(std::size_t k, const char* what) {
        if (pos + k > n)
            throw FormatError(std::string("checkpoint: truncated while reading ") + what);
        const unsigned char* r = p + pos;
        pos += k;
        return r;
    }
    std::uint32_t u32(const char* what) {
        const unsigned char* b = take(4, what);
        return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
               std::uint32_t(b[3]) << 24;
    }
    std::uint16_t u16(const char* what) {
        const unsigned char* b = take(2, what);
        return std::uint16_t(b[0] | (b[1] << 8));
    }
};

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path,
                            const std::vector<std::pair<std::string, Tensor>>& params) {
    std::string buf;
    buf.append("POUR", 4);
    buf.push_back(char(1));
    detail::ckpt_put_u32(buf, std::uint32_t(params.size()));
    for (const auto& [name, t] : params) {
        if (name.size() > 0xffff)
            throw ContractError("save_checkpoint: parameter name too long: " + name);
        detail::ckpt_put_u16(buf, std::uint16_t(name.size()));
        buf.append(name);
        buf.push_back(char(t.shape().size()));
        for (int e : t.shape()) detail::ckpt_put_u32(buf, std::uint32_t(e));
        static_assert(sizeof(float) == 4);
        const std::size_t bytes = t.value().size() * 4;
        std::size_t at = buf.size();
        buf.resize(at + bytes);
        std::memcpy(buf.data() + at, t.value().data(), bytes);
    }
    std::FILE* f = std::fopen(path.string().c_str(), "wb");
    if (!f) throw IoError("save_checkpoint: cannot open " + path.string() + " for writing");
    const bool ok = std::fwrite(buf.data(), 1, buf.size(), f) == buf.size();
    const bool closed = std::fclose(f) == 0;
    if (!ok || !closed) throw IoError("save_checkpoint: short write to " + path.string());
}

inline std::vector<CheckpointEntry> load_checkpoint(const std::filesystem::path& path) {
    std::FILE* f = std::fopen(path.string().c_str(), "rb");
    if (!f) throw IoError("load_checkpoint: cannot open " + path.string());
    std::string buf;
    char chunk[1 << 16];
    std::size_t got;
    while ((got = std::fread(chunk, 1, sizeof chunk, f)) > 0) buf.append(chunk, got);
    std::fclose(f);

    detail::CkptReader r{reinterpret_cast<const unsigned char*>(buf.data()), buf.size()};
    const unsigned char* magic = r.take(4, "magic");
    if (std::memcmp(magic, "POUR", 4) != 0)
        throw FormatError("checkpoint: bad magic in " + path.string());
    const unsigned ver = *r.take(1, "version");
    if (ver != 1)
        throw FormatError("checkpoint: unsupported version " + std::to_string(ver) + " in " +
                          path.string());
    const std::uint32_t count = r.u32("entry count");
    std::vector<CheckpointEntry> entries;
    entries.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        CheckpointEntry e;
        const std::uint16_t nlen = r.u16("name length");
        const unsigned char* nb = r.take(nlen, "name");
        e.name.assign(reinterpret_cast<const char*>(nb), nlen);
        const unsigned rank = *r.take(1, "rank");
        std::int64_t numel = 1;
        for (unsigned j = 0; j < rank; ++j) {
            const std::uint32_t ext = r.u32("extent");
            if (ext == 0 || ext > 0x7fffffffu)
                throw FormatError("checkpoint: bad extent for entry " + e.name);
            e.shape.push_back(int(ext));
            numel *= ext;
        }
        if (numel > (std::int64_t(1) << 31))
            throw FormatError("checkpoint: entry " + e.name + " implausibly large");
        e.data.resize(std::size_t(numel));
        const unsigned char* pd = r.take(std::size_t(numel) * 4, "payload");
        std::memcpy(e.data.data(), pd, std::size_t(numel) * 4);
        entries.push_back(std::move(e));
    }
    if (r.pos != r.n)
        throw FormatError("checkpoint: " + std::to_string(r.n - r.pos) +
                          " trailing bytes in " + path.string());
    return entries;
}

// Copies saved values into an existing parameter list; names and shapes must
// match exactly (same architecture and config).
inline void restore_checkpoint(const std::filesystem::path& path,
                               const std::vector<std::pair<std::string, Tensor>>& params) {
    auto entries = load_checkpoint(path);
    if (entries.size() != params.size())
        throw FormatError("checkpoint: " + path.string() + " holds " +
                          std::to_string(entries.size()) + " entries, model has " +
                          std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& [name, t] = params[i];
        if (entries[i].name != name)
            throw FormatError("checkpoint: entry " + std::to_string(i) + " is '" +
                              entries[i].name + "', expected '" + name + "'");
        if (entries[i].shape != t.shape())
            throw FormatError("checkpoint: shape mismatch for " + name + ": file " +
                              shape_str(entries[i].shape) + ", model " + shape_str(t.shape()));
        t.node()->value = entries[i].data;
    }
}

}  // namespace pour
