#include "maple/emb_file.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "maple/common.hpp"

namespace maple {

namespace {

constexpr char kMagic[4] = {'E', 'M', 'B', '1'};

template <typename T>
T load_le(const unsigned char* p) {
    T v{};
    std::memcpy(&v, p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        auto* b = reinterpret_cast<unsigned char*>(&v);
        std::reverse(b, b + sizeof(T));
    }
    return v;
}

template <typename T>
void store_le(std::string& out, T v) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(b, b + sizeof(T));
    }
    out.append(reinterpret_cast<const char*>(b), sizeof(T));
}

class Reader {
public:
    Reader(const std::vector<unsigned char>& buf, const std::filesystem::path& path)
        : buf_(buf), path_(path) {}

    const unsigned char* take(std::size_t n) {
        if (buf_.size() - pos_ < n) {
            throw DataError("truncated embeddings file: " + path_.string());
        }
        const unsigned char* p = buf_.data() + pos_;
        pos_ += n;
        return p;
    }

    bool done() const { return pos_ == buf_.size(); }

private:
    const std::vector<unsigned char>& buf_;
    const std::filesystem::path& path_;
    std::size_t pos_ = 0;
};

}  // namespace

EmbFile read_emb_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open embeddings file: " + path.string());
    }
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    Reader r(buf, path);
    if (std::memcmp(r.take(4), kMagic, 4) != 0) {
        throw DataError("bad magic in embeddings file: " + path.string());
    }
    EmbFile file;
    const auto count = load_le<std::uint32_t>(r.take(4));
    file.dim = load_le<std::uint32_t>(r.take(4));
    file.records.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        EmbRecord rec;
        const auto key_len = load_le<std::uint16_t>(r.take(2));
        const auto* key = r.take(key_len);
        rec.key.assign(reinterpret_cast<const char*>(key), key_len);
        rec.values.resize(file.dim);
        const auto* data = r.take(std::size_t{4} * file.dim);
        for (std::uint32_t j = 0; j < file.dim; ++j) {
            rec.values[j] = load_le<float>(data + 4 * j);
        }
        file.records.push_back(std::move(rec));
    }
    if (!r.done()) {
        throw DataError("trailing bytes in embeddings file: " + path.string());
    }
    return file;
}

void write_emb_file(const std::filesystem::path& path, const EmbFile& file) {
    std::string out(kMagic, 4);
    store_le<std::uint32_t>(out, static_cast<std::uint32_t>(file.records.size()));
    store_le<std::uint32_t>(out, file.dim);
    for (const auto& rec : file.records) {
        if (rec.key.size() > UINT16_MAX) {
            throw DataError("embedding key too long: " + rec.key.substr(0, 64));
        }
        if (rec.values.size() != file.dim) {
            throw DataError("embedding dimension mismatch for key " + rec.key);
        }
        store_le<std::uint16_t>(out, static_cast<std::uint16_t>(rec.key.size()));
        out += rec.key;
        for (float v : rec.values) {
            store_le<float>(out, v);
        }
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw DataError("cannot write embeddings file: " + path.string());
    }
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

}  // namespace maple
