#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "mp/tensor.hpp"

namespace mp {

// Named-tensor container with a bit-exact binary format:
//   magic "MPW1"
//   u32 LE entry count
//   per entry: u16 LE name length, UTF-8 name, u8 rank, rank x u32 LE extents,
//              raw LE float32 data
// Entries are kept sorted by name so serialization is canonical.
class ModelWeights {
  public:
    static constexpr int kFormatVersion = 1;

    std::map<std::string, Tensor> entries;

    bool has(const std::string& name) const { return entries.count(name) != 0; }

    const Tensor& get(const std::string& name) const {
        auto it = entries.find(name);
        if (it == entries.end()) throw MissingWeightError(name);
        return it->second;
    }

    Tensor& get(const std::string& name) {
        auto it = entries.find(name);
        if (it == entries.end()) throw MissingWeightError(name);
        return it->second;
    }

    void set(const std::string& name, Tensor t) { entries[name] = std::move(t); }

    void merge(const ModelWeights& other) {
        for (const auto& [k, v] : other.entries) entries[k] = v;
    }

    int64_t parameter_count() const {
        int64_t n = 0;
        for (const auto& [k, v] : entries) n += v.size();
        return n;
    }

    std::string serialize() const {
        std::ostringstream os(std::ios::binary);
        os.write("MPW1", 4);
        write_u32(os, static_cast<uint32_t>(entries.size()));
        for (const auto& [name, t] : entries) {
            if (name.size() > 0xffff) throw ContractError("weight name too long: " + name);
            write_u16(os, static_cast<uint16_t>(name.size()));
            os.write(name.data(), static_cast<std::streamsize>(name.size()));
            os.put(static_cast<char>(t.rank()));
            for (int e : t.shape) write_u32(os, static_cast<uint32_t>(e));
            write_floats(os, t.data);
        }
        return os.str();
    }

    static ModelWeights deserialize(const std::string& bytes) {
        ModelWeights w;
        size_t pos = 0;
        auto need = [&](size_t n, const char* what) {
            if (pos + n > bytes.size())
                throw FormatError(std::string("weight file truncated while reading ") + what);
        };
        need(4, "magic");
        if (std::memcmp(bytes.data(), "MPW1", 4) != 0)
            throw FormatError("weight file: bad magic, expected MPW1");
        pos = 4;
        need(4, "entry count");
        const uint32_t count = read_u32(bytes, pos);
        for (uint32_t i = 0; i < count; ++i) {
            need(2, "name length");
            const uint16_t nlen = read_u16(bytes, pos);
            need(nlen, "name");
            std::string name = bytes.substr(pos, nlen);
            pos += nlen;
            need(1, "rank");
            const uint8_t rank = static_cast<uint8_t>(bytes[pos++]);
            if (rank < 1 || rank > 4)
                throw FormatError("weight file: entry '" + name + "' has invalid rank " +
                                  std::to_string(rank));
            std::vector<int> shape(rank);
            int64_t n = 1;
            for (uint8_t r = 0; r < rank; ++r) {
                need(4, "extent");
                const uint32_t e = read_u32(bytes, pos);
                if (e == 0 || e > (1u << 28))
                    throw FormatError("weight file: entry '" + name + "' has invalid extent");
                shape[r] = static_cast<int>(e);
                n *= e;
            }
            need(static_cast<size_t>(n) * 4, "tensor data");
            std::vector<float> data(static_cast<size_t>(n));
            std::memcpy(data.data(), bytes.data() + pos, static_cast<size_t>(n) * 4);
            pos += static_cast<size_t>(n) * 4;
            Tensor t(std::move(shape), std::move(data));
            if (!t.all_finite())
                throw FormatError("weight file: entry '" + name + "' contains non-finite values");
            if (w.entries.count(name))
                throw FormatError("weight file: duplicate entry '" + name + "'");
            w.entries.emplace(std::move(name), std::move(t));
        }
        if (pos != bytes.size()) throw FormatError("weight file: trailing bytes after entries");
        return w;
    }

    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw FormatError("cannot open for writing: " + path);
        const std::string bytes = serialize();
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw FormatError("write failed: " + path);
    }

    static ModelWeights load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw FormatError("cannot open weight file: " + path);
        std::ostringstream ss;
        ss << f.rdbuf();
        return deserialize(ss.str());
    }

  private:
    static void write_u16(std::ostream& os, uint16_t v) {
        os.put(static_cast<char>(v & 0xff));
        os.put(static_cast<char>((v >> 8) & 0xff));
    }
    static void write_u32(std::ostream& os, uint32_t v) {
        for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    static void write_floats(std::ostream& os, const std::vector<float>& v) {
        // assumes little-endian host, true everywhere this builds
        os.write(reinterpret_cast<const char*>(v.data()),
                 static_cast<std::streamsize>(v.size() * 4));
    }
    static uint16_t read_u16(const std::string& b, size_t& pos) {
        const uint16_t v = static_cast<uint16_t>(static_cast<uint8_t>(b[pos]) |
                                                 (static_cast<uint8_t>(b[pos + 1]) << 8));
        pos += 2;
        return v;
    }
    static uint32_t read_u32(const std::string& b, size_t& pos) {
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(b[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
};

}  // namespace mp
