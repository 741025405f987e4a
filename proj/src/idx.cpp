#include "stablegroups/datagen.hpp"

#include <fstream>
#include <iomanip>
#include <iterator>
#include <sstream>

namespace stablegroups::datagen {

namespace {

std::uint32_t read_be32(const std::vector<std::uint8_t>& buf, std::size_t at) {
    return (std::uint32_t{buf[at]} << 24) | (std::uint32_t{buf[at + 1]} << 16) |
           (std::uint32_t{buf[at + 2]} << 8) | std::uint32_t{buf[at + 3]};
}

void put_be32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>((v >> 24) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>(v & 0xff));
}

std::string hex(std::uint32_t v) {
    std::ostringstream os;
    os << "0x" << std::hex << std::setw(8) << std::setfill('0') << v;
    return os.str();
}

} // namespace

IdxFile read_idx(const std::string& path, std::uint32_t expected_magic) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 4) throw IdxTruncated(path + ": truncated header");
    IdxFile f;
    f.magic = read_be32(buf, 0);
    if (f.magic != expected_magic)
        throw IdxBadMagic(path + ": bad magic " + hex(f.magic) + ", expected " + hex(expected_magic));
    const std::size_t ndims = f.magic & 0xff;
    if (buf.size() < 4 + 4 * ndims) throw IdxTruncated(path + ": truncated header");
    std::size_t count = 1;
    for (std::size_t k = 0; k < ndims; ++k) {
        f.dims.push_back(read_be32(buf, 4 + 4 * k));
        count *= f.dims.back();
    }
    const std::size_t header = 4 + 4 * ndims;
    if (buf.size() - header < count)
        throw IdxTruncated(path + ": truncated payload (" + std::to_string(buf.size() - header) +
                           " of " + std::to_string(count) + " bytes)");
    if (buf.size() - header > count)
        throw IdxCountMismatch(path + ": payload longer than declared dimensions");
    f.payload.assign(buf.begin() + static_cast<std::ptrdiff_t>(header), buf.end());
    return f;
}

void write_idx(const std::string& path, const IdxFile& f) {
    std::string out;
    put_be32(out, f.magic);
    for (std::uint32_t d : f.dims) put_be32(out, d);
    out.append(f.payload.begin(), f.payload.end());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write " + path);
    os.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!os) throw DataError("write failed: " + path);
}

IdxData load_idx(const std::string& images_path, const std::string& labels_path) {
    IdxFile img = read_idx(images_path, kIdxImageMagic);
    IdxFile lab = read_idx(labels_path, kIdxLabelMagic);
    if (img.dims.size() != 3) throw IdxCountMismatch(images_path + ": expected 3 dimensions");
    if (lab.dims.size() != 1) throw IdxCountMismatch(labels_path + ": expected 1 dimension");
    if (img.dims[0] != lab.dims[0])
        throw IdxCountMismatch("image count " + std::to_string(img.dims[0]) + " != label count " +
                               std::to_string(lab.dims[0]));
    IdxData d;
    d.rows = img.dims[0];
    d.cols = std::size_t{img.dims[1]} * img.dims[2];
    d.features.resize(img.payload.size());
    for (std::size_t i = 0; i < img.payload.size(); ++i) d.features[i] = img.payload[i] / 255.0;
    d.labels.assign(lab.payload.begin(), lab.payload.end());
    return d;
}

} // namespace stablegroups::datagen
