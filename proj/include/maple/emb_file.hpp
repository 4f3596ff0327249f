#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace maple {

// One record of an EMB1 file. Values stay 32-bit here; widening happens in
// the corpus loader.
struct EmbRecord {
    std::string key;
    std::vector<float> values;
};

struct EmbFile {
    std::uint32_t dim = 0;
    std::vector<EmbRecord> records;
};

// Layout: "EMB1", u32 count, u32 dim, then per record u16 key length, key
// bytes, dim float32. All integers and floats little-endian.
EmbFile read_emb_file(const std::filesystem::path& path);
void write_emb_file(const std::filesystem::path& path, const EmbFile& file);

}  // namespace maple
