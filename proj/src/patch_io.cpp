#include "pathsearch/patch_io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>

#include "byte_io.hpp"

namespace pathsearch {

namespace {
constexpr std::string_view kMagic = "PEMB";
constexpr std::uint32_t kVersion = 1;
}  // namespace

std::vector<std::uint8_t> encode_pemb(const PatchEmbeddingMatrix& patches) {
    detail::ByteWriter w;
    w.raw(kMagic);
    w.u32(kVersion);
    w.u32(static_cast<std::uint32_t>(patches.n_patches()));
    w.u32(static_cast<std::uint32_t>(patches.dim()));
    const Matrix& data = patches.data();
    for (Eigen::Index i = 0; i < data.size(); ++i) w.f32(static_cast<float>(data.data()[i]));
    return w.take();
}

PatchEmbeddingMatrix decode_pemb(std::span<const std::uint8_t> bytes) {
    detail::ByteReader r(bytes);
    if (r.str(4, "PEMB magic") != kMagic) throw FormatError("bad PEMB magic", 0);
    if (const auto v = r.u32("PEMB version"); v != kVersion) {
        throw FormatError("unsupported PEMB version " + std::to_string(v), 4);
    }
    const std::uint32_t n = r.u32("patch count");
    const std::uint32_t c = r.u32("embedding dim");
    if (n == 0 || c == 0) throw FormatError("PEMB header declares an empty matrix", 8);
    const std::uint64_t expected = std::uint64_t{n} * c * 4;
    if (r.remaining() < expected) throw FormatError("PEMB payload truncated", r.offset() + r.remaining());
    if (r.remaining() > expected) throw FormatError("trailing bytes after PEMB payload", r.offset() + expected);
    Matrix data(n, c);
    for (Eigen::Index i = 0; i < data.size(); ++i) {
        const std::uint64_t at = r.offset();
        const double v = r.f32("patch value");
        if (!std::isfinite(v)) throw NumericError("non-finite patch value at byte offset " + std::to_string(at));
        data.data()[i] = v;
    }
    return PatchEmbeddingMatrix(std::move(data));
}

void write_pemb(const std::filesystem::path& path, const PatchEmbeddingMatrix& patches) {
    detail::write_file_bytes(path, encode_pemb(patches));
}

PatchEmbeddingMatrix read_pemb(const std::filesystem::path& path) {
    return decode_pemb(detail::read_file_bytes(path));
}

PatchEmbeddingMatrix read_patch_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string(), 0);
    std::vector<std::vector<double>> rows;
    std::string line;
    std::uint64_t offset = 0;
    while (std::getline(in, line)) {
        const std::uint64_t line_start = offset;
        offset += line.size() + 1;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        std::vector<double> row;
        std::size_t pos = 0;
        while (pos <= line.size()) {
            std::size_t end = line.find(',', pos);
            if (end == std::string::npos) end = line.size();
            std::string_view field(line.data() + pos, end - pos);
            while (!field.empty() && field.front() == ' ') field.remove_prefix(1);
            while (!field.empty() && field.back() == ' ') field.remove_suffix(1);
            double v = 0.0;
            auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
            if (ec != std::errc() || ptr != field.data() + field.size()) {
                throw FormatError("bad numeric field in " + path.string(), line_start + pos);
            }
            if (!std::isfinite(v)) {
                throw NumericError("non-finite value in " + path.string() + " at byte offset " +
                                   std::to_string(line_start + pos));
            }
            row.push_back(v);
            pos = end + 1;
        }
        if (!rows.empty() && row.size() != rows.front().size()) {
            throw FormatError("ragged CSV row in " + path.string(), line_start);
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw FormatError("no patches in " + path.string(), 0);
    Matrix data(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < rows[i].size(); ++j) {
            data(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
        }
    }
    return PatchEmbeddingMatrix(std::move(data));
}

PatchEmbeddingMatrix read_patches(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string(), 0);
    char head[4] = {};
    in.read(head, 4);
    if (in.gcount() == 4 && std::string_view(head, 4) == kMagic) return read_pemb(path);
    return read_patch_csv(path);
}

}  // namespace pathsearch
