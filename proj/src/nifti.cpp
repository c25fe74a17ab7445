#include "lesiontrack/nifti.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lesiontrack/error.hpp"

namespace lesiontrack {

namespace {

constexpr int kHeaderSize = 348;
constexpr int kVoxOffset = 352;

// byte offsets inside the 348-byte nifti_1_header
namespace off {
constexpr int sizeof_hdr = 0;
constexpr int dim = 40;
constexpr int datatype = 70;
constexpr int bitpix = 72;
constexpr int pixdim = 76;
constexpr int vox_offset = 108;
constexpr int scl_slope = 112;
constexpr int scl_inter = 116;
constexpr int xyzt_units = 123;
constexpr int descrip = 148;
constexpr int qform_code = 252;
constexpr int sform_code = 254;
constexpr int quatern_b = 256;
constexpr int qoffset_x = 268;
constexpr int srow_x = 280;
constexpr int magic = 344;
}  // namespace off

bool is_gzip_path(const std::filesystem::path& p) { return p.extension() == ".gz"; }

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw IoError("cannot open " + path.string());
    unsigned char sig[2] = {0, 0};
    probe.read(reinterpret_cast<char*>(sig), 2);
    const bool gz = probe.gcount() == 2 && sig[0] == 0x1f && sig[1] == 0x8b;
    std::vector<unsigned char> bytes;
    if (!gz) {
        probe.seekg(0, std::ios::end);
        const auto n = static_cast<std::size_t>(probe.tellg());
        probe.seekg(0);
        bytes.resize(n);
        probe.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(probe.gcount()) != n) throw IoError("short read from " + path.string());
        return bytes;
    }
    gzFile f = gzopen(path.string().c_str(), "rb");
    if (!f) throw IoError("cannot open " + path.string());
    std::array<unsigned char, 1 << 16> buf{};
    int n = 0;
    while ((n = gzread(f, buf.data(), static_cast<unsigned>(buf.size()))) > 0) bytes.insert(bytes.end(), buf.begin(), buf.begin() + n);
    const bool failed = n < 0;
    gzclose(f);
    if (failed) throw IoError("gzip decode failed for " + path.string());
    return bytes;
}

void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
    const auto parent = path.parent_path();
    if (!parent.empty() && !std::filesystem::is_directory(parent))
        throw IoError("output directory does not exist: " + parent.string());
    if (is_gzip_path(path)) {
        gzFile f = gzopen(path.string().c_str(), "wb6");
        if (!f) throw IoError("cannot write " + path.string());
        const int n = gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
        const int rc = gzclose(f);
        if (n != static_cast<int>(bytes.size()) || rc != Z_OK) throw IoError("gzip write failed for " + path.string());
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

class HeaderReader {
public:
    HeaderReader(const std::vector<unsigned char>& bytes, bool swap) : bytes_(bytes), swap_(swap) {}

    template <class T>
    T get(int offset) const {
        T v;
        std::array<unsigned char, sizeof(T)> raw{};
        std::memcpy(raw.data(), bytes_.data() + offset, sizeof(T));
        if (swap_) std::reverse(raw.begin(), raw.end());
        std::memcpy(&v, raw.data(), sizeof(T));
        return v;
    }

private:
    const std::vector<unsigned char>& bytes_;
    bool swap_;
};

template <class T>
void put(std::vector<unsigned char>& bytes, int offset, T v) {
    std::memcpy(bytes.data() + offset, &v, sizeof(T));
}

int bytes_per_voxel(nifti::Datatype dt) {
    switch (dt) {
        case nifti::Datatype::UInt8: return 1;
        case nifti::Datatype::Int16:
        case nifti::Datatype::UInt16: return 2;
        case nifti::Datatype::Int32:
        case nifti::Datatype::Float32: return 4;
        case nifti::Datatype::Float64: return 8;
    }
    return 0;
}

bool is_integer(nifti::Datatype dt) { return dt != nifti::Datatype::Float32 && dt != nifti::Datatype::Float64; }

/// Parsed file: canonical grid plus the permutation needed to reorder data.
struct Parsed {
    nifti::HeaderInfo info;
    std::array<int, 3> file_dim{};
    std::array<int, 3> axis_of{};  // canonical axis for each file axis
    std::array<bool, 3> flip{};
    std::size_t data_offset = kVoxOffset;
    bool swap = false;
};

std::string matrix_string(const Mat3& m) {
    std::ostringstream os;
    os << "[";
    for (int r = 0; r < 3; ++r) {
        os << (r ? "; " : "") << m[r][0] << " " << m[r][1] << " " << m[r][2];
    }
    os << "]";
    return os.str();
}

Parsed parse_header(const std::vector<unsigned char>& bytes, const std::string& name) {
    if (bytes.size() < kHeaderSize) throw FormatError(name + ": file too short for a NIfTI-1 header");
    Parsed p;
    int sizeof_hdr;
    std::memcpy(&sizeof_hdr, bytes.data() + off::sizeof_hdr, 4);
    if (sizeof_hdr != kHeaderSize) {
        HeaderReader swapped(bytes, true);
        if (swapped.get<int>(off::sizeof_hdr) != kHeaderSize)
            throw FormatError(name + ": malformed header (sizeof_hdr != 348)");
        p.swap = true;
    }
    const HeaderReader h(bytes, p.swap);
    const char* magic = reinterpret_cast<const char*>(bytes.data() + off::magic);
    if (std::strncmp(magic, "n+1", 4) != 0 && std::strncmp(magic, "ni1", 4) != 0)
        throw FormatError(name + ": malformed header (bad magic, expected n+1)");
    if (std::strncmp(magic, "ni1", 4) == 0)
        throw FormatError(name + ": two-file NIfTI (ni1) pairs are not supported; use .nii");

    const auto ndim = h.get<short>(off::dim);
    if (ndim < 1 || ndim > 7) throw FormatError(name + ": malformed header (dim[0] = " + std::to_string(ndim) + ")");
    for (int a = 0; a < 3; ++a) {
        const short d = a < ndim ? h.get<short>(off::dim + 2 * (a + 1)) : short{1};
        if (d < 1) throw FormatError(name + ": malformed header (non-positive dimension)");
        p.file_dim[a] = d;
    }
    for (int a = 3; a < ndim; ++a)
        if (h.get<short>(off::dim + 2 * (a + 1)) > 1) throw FormatError(name + ": 4D and higher NIfTI files are not supported");

    const auto dt = h.get<short>(off::datatype);
    switch (dt) {
        case 2: case 4: case 8: case 16: case 64: case 512:
            p.info.datatype = static_cast<nifti::Datatype>(dt);
            break;
        default:
            throw FormatError(name + ": unsupported NIfTI datatype code " + std::to_string(dt));
    }
    const float vox_offset = h.get<float>(off::vox_offset);
    p.data_offset = vox_offset >= kHeaderSize ? static_cast<std::size_t>(vox_offset) : kVoxOffset;
    p.info.scl_slope = h.get<float>(off::scl_slope);
    p.info.scl_inter = h.get<float>(off::scl_inter);

    std::array<double, 4> pixdim{};
    for (int a = 0; a < 4; ++a) pixdim[a] = h.get<float>(off::pixdim + 4 * a);

    Mat3 m{};
    Vec3 t{};
    const short sform = h.get<short>(off::sform_code);
    const short qform = h.get<short>(off::qform_code);
    if (sform > 0) {
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) m[r][c] = h.get<float>(off::srow_x + 16 * r + 4 * c);
            t[r] = h.get<float>(off::srow_x + 16 * r + 12);
        }
    } else if (qform > 0) {
        const double b = h.get<float>(off::quatern_b), c = h.get<float>(off::quatern_b + 4),
                     d = h.get<float>(off::quatern_b + 8);
        const double a = std::sqrt(std::max(0.0, 1.0 - (b * b + c * c + d * d)));
        const double qfac = pixdim[0] < 0 ? -1.0 : 1.0;
        const Mat3 r = {{{a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)},
                         {2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)},
                         {2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b}}};
        for (int row = 0; row < 3; ++row)
            for (int col = 0; col < 3; ++col) m[row][col] = r[row][col] * pixdim[col + 1] * (col == 2 ? qfac : 1.0);
        for (int row = 0; row < 3; ++row) t[row] = h.get<float>(off::qoffset_x + 4 * row);
    } else {
        for (int a = 0; a < 3; ++a) m[a][a] = pixdim[a + 1] > 0 ? pixdim[a + 1] : 1.0;
    }

    // Every file axis must map onto exactly one world axis.
    std::array<bool, 3> used{};
    for (int col = 0; col < 3; ++col) {
        double norm = 0.0;
        int best = 0;
        for (int row = 0; row < 3; ++row) {
            norm += m[row][col] * m[row][col];
            if (std::abs(m[row][col]) > std::abs(m[best][col])) best = row;
        }
        norm = std::sqrt(norm);
        if (!(norm > 0.0)) throw FormatError(name + ": malformed header (degenerate affine " + matrix_string(m) + ")");
        for (int row = 0; row < 3; ++row)
            if (row != best && std::abs(m[row][col]) > 1e-4 * norm)
                throw FormatError(name + ": non-axis-aligned orientation, direction matrix " + matrix_string(m));
        if (used[best]) throw FormatError(name + ": non-axis-aligned orientation, direction matrix " + matrix_string(m));
        used[best] = true;
        p.axis_of[col] = best;
        p.flip[col] = m[best][col] < 0;
        p.info.grid.spacing[best] = std::abs(m[best][col]);
        p.info.grid.shape[best] = p.file_dim[col];
    }
    // origin = world position of the file voxel that becomes canonical (0,0,0)
    std::array<double, 3> idx{};
    for (int col = 0; col < 3; ++col) idx[col] = p.flip[col] ? p.file_dim[col] - 1 : 0;
    for (int row = 0; row < 3; ++row)
        p.info.grid.origin[row] = t[row] + m[row][0] * idx[0] + m[row][1] * idx[1] + m[row][2] * idx[2];
    p.info.grid.validate();
    return p;
}

/// Decodes voxel values (as double) into canonical order.
std::vector<double> decode(const std::vector<unsigned char>& bytes, const Parsed& p, const std::string& name) {
    const int bpv = bytes_per_voxel(p.info.datatype);
    const std::size_t n = p.info.grid.size();
    if (bytes.size() < p.data_offset + n * static_cast<std::size_t>(bpv))
        throw FormatError(name + ": file truncated (voxel data shorter than header dimensions)");
    const unsigned char* base = bytes.data() + p.data_offset;

    auto value_at = [&](std::size_t i) -> double {
        std::array<unsigned char, 8> raw{};
        std::memcpy(raw.data(), base + i * bpv, static_cast<std::size_t>(bpv));
        if (p.swap) std::reverse(raw.begin(), raw.begin() + bpv);
        switch (p.info.datatype) {
            case nifti::Datatype::UInt8: return raw[0];
            case nifti::Datatype::Int16: { std::int16_t v; std::memcpy(&v, raw.data(), 2); return v; }
            case nifti::Datatype::UInt16: { std::uint16_t v; std::memcpy(&v, raw.data(), 2); return v; }
            case nifti::Datatype::Int32: { std::int32_t v; std::memcpy(&v, raw.data(), 4); return v; }
            case nifti::Datatype::Float32: { float v; std::memcpy(&v, raw.data(), 4); return v; }
            case nifti::Datatype::Float64: { double v; std::memcpy(&v, raw.data(), 8); return v; }
        }
        return 0.0;
    };

    std::vector<double> out(n);
    const auto& fd = p.file_dim;
    const auto& g = p.info.grid;
    std::size_t file_idx = 0;
    for (int k = 0; k < fd[2]; ++k)
        for (int j = 0; j < fd[1]; ++j)
            for (int i = 0; i < fd[0]; ++i, ++file_idx) {
                const std::array<int, 3> fi{i, j, k};
                std::array<int, 3> ci{};
                for (int a = 0; a < 3; ++a) ci[p.axis_of[a]] = p.flip[a] ? fd[a] - 1 - fi[a] : fi[a];
                const double v = value_at(file_idx);
                if (std::isnan(v)) throw FormatError(name + ": NaN voxel values are not allowed");
                out[g.index(ci[0], ci[1], ci[2])] = v;
            }
    return out;
}

std::vector<unsigned char> encode_header(const GridRef& g, nifti::Datatype dt) {
    std::vector<unsigned char> bytes(kVoxOffset, 0);
    put<int>(bytes, off::sizeof_hdr, kHeaderSize);
    const std::array<short, 8> dim{3, static_cast<short>(g.shape[0]), static_cast<short>(g.shape[1]),
                                   static_cast<short>(g.shape[2]), 1, 1, 1, 1};
    for (int a = 0; a < 8; ++a) put<short>(bytes, off::dim + 2 * a, dim[a]);
    put<short>(bytes, off::datatype, static_cast<short>(dt));
    put<short>(bytes, off::bitpix, static_cast<short>(8 * bytes_per_voxel(dt)));
    const std::array<float, 8> pixdim{1.0f, static_cast<float>(g.spacing.x), static_cast<float>(g.spacing.y),
                                      static_cast<float>(g.spacing.z), 1.0f, 1.0f, 1.0f, 1.0f};
    for (int a = 0; a < 8; ++a) put<float>(bytes, off::pixdim + 4 * a, pixdim[a]);
    put<float>(bytes, off::vox_offset, static_cast<float>(kVoxOffset));
    put<float>(bytes, off::scl_slope, 0.0f);
    put<float>(bytes, off::scl_inter, 0.0f);
    bytes[off::xyzt_units] = 2;  // mm
    const char descrip[] = "lesiontrack";
    std::memcpy(bytes.data() + off::descrip, descrip, sizeof(descrip));
    put<short>(bytes, off::qform_code, 1);
    put<short>(bytes, off::sform_code, 1);
    for (int a = 0; a < 3; ++a) put<float>(bytes, off::quatern_b + 4 * a, 0.0f);
    for (int a = 0; a < 3; ++a) put<float>(bytes, off::qoffset_x + 4 * a, static_cast<float>(g.origin[a]));
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) put<float>(bytes, off::srow_x + 16 * r + 4 * c, r == c ? static_cast<float>(g.spacing[r]) : 0.0f);
        put<float>(bytes, off::srow_x + 16 * r + 12, static_cast<float>(g.origin[r]));
    }
    std::memcpy(bytes.data() + off::magic, "n+1\0", 4);
    return bytes;
}

template <class T>
void save_raw(const GridRef& g, const std::vector<T>& data, nifti::Datatype dt, const std::filesystem::path& path) {
    for (int a = 0; a < 3; ++a)
        if (g.shape[a] > 32767) throw InvalidArgument("NIfTI-1 dimensions are limited to 32767");
    auto bytes = encode_header(g, dt);
    const std::size_t header = bytes.size();
    bytes.resize(header + data.size() * sizeof(T));
    std::memcpy(bytes.data() + header, data.data(), data.size() * sizeof(T));
    write_file(path, bytes);
}

}  // namespace

nifti::HeaderInfo nifti::read_header(const std::filesystem::path& path) {
    return parse_header(read_file(path), path.string()).info;
}

Volume load_volume(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    const auto p = parse_header(bytes, path.string());
    const auto values = decode(bytes, p, path.string());
    const bool scaled = p.info.scl_slope != 0.0 && (p.info.scl_slope != 1.0 || p.info.scl_inter != 0.0);
    std::vector<float> data(values.size());
    for (std::size_t i = 0; i < values.size(); ++i)
        data[i] = static_cast<float>(scaled ? values[i] * p.info.scl_slope + p.info.scl_inter : values[i]);
    return Volume(p.info.grid, std::move(data));
}

InstanceMask load_mask(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    const auto p = parse_header(bytes, path.string());
    const auto values = decode(bytes, p, path.string());
    std::vector<std::uint16_t> labels(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double v = values[i];
        if (v < 0.0 || v > 65535.0 || v != std::floor(v))
            throw FormatError(path.string() + ": mask values must be non-negative integers <= 65535");
        labels[i] = static_cast<std::uint16_t>(v);
    }
    return InstanceMask(p.info.grid, std::move(labels));
}

std::variant<Volume, InstanceMask> load_nifti(const std::filesystem::path& path) {
    const auto info = nifti::read_header(path);
    if (is_integer(info.datatype) && info.scl_slope == 0.0) return load_mask(path);
    return load_volume(path);
}

void save_nifti(const Volume& v, const std::filesystem::path& path) {
    save_raw(v.grid, v.data, nifti::Datatype::Float32, path);
}

void save_nifti(const InstanceMask& m, const std::filesystem::path& path) {
    save_raw(m.grid, m.labels, nifti::Datatype::UInt16, path);
}

void save_nifti(const BinaryMask& m, const std::filesystem::path& path) {
    save_raw(m.grid, m.data, nifti::Datatype::UInt8, path);
}

}  // namespace lesiontrack
