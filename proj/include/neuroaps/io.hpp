#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "neuroaps/core_types.hpp"

// On-disk formats. Layouts here are normative: APC1 point clouds, APH1
// phantom bundles, and the text manifest with a trailing checksum line.
// Encoders/decoders are pure; file writes go through a temp-file rename.

namespace neuroaps::io {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
/// Wrong magic or unparseable structure.
struct FormatError : IoError {
    using IoError::IoError;
};
/// Declared size inconsistent with the actual byte count.
struct LengthError : IoError {
    using IoError::IoError;
};
/// A field decoded fine but holds an out-of-range value.
struct ValueError : IoError {
    using IoError::IoError;
};
/// Manifest body does not match its checksum line.
struct IntegrityError : IoError {
    using IoError::IoError;
};

// ---------------------------------------------------------------------------
// Little-endian byte helpers
// ---------------------------------------------------------------------------

inline void put_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 24));
}

inline void put_u64le(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f32le(std::vector<std::uint8_t>& out, float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32le(out, v);
}

inline std::uint32_t get_u32le(std::span<const std::uint8_t> b, std::size_t off) {
    return static_cast<std::uint32_t>(b[off]) | (static_cast<std::uint32_t>(b[off + 1]) << 8) |
           (static_cast<std::uint32_t>(b[off + 2]) << 16) |
           (static_cast<std::uint32_t>(b[off + 3]) << 24);
}

inline std::uint64_t get_u64le(std::span<const std::uint8_t> b, std::size_t off) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[off + i];
    return v;
}

inline float get_f32le(std::span<const std::uint8_t> b, std::size_t off) {
    const std::uint32_t v = get_u32le(b, off);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
}

// ---------------------------------------------------------------------------
// Point cloud format "APC1"
//
//   header (12 bytes): magic "APC1" | u32 LE point count |
//                      u8 class (0=CN, 1=AD, 255=unlabelled) | 3 zero bytes
//   body: per point f32 x, f32 y, f32 intensity, u8 region  (13 bytes)
// ---------------------------------------------------------------------------

inline constexpr std::uint8_t kUnlabelled = 255;
inline constexpr std::size_t kCloudHeaderBytes = 12;
inline constexpr std::size_t kPointRecordBytes = 13;

inline std::vector<std::uint8_t> encode_cloud(const PointCloud& cloud) {
    std::vector<std::uint8_t> out;
    out.reserve(kCloudHeaderBytes + kPointRecordBytes * cloud.points.size());
    out.insert(out.end(), {'A', 'P', 'C', '1'});
    put_u32le(out, static_cast<std::uint32_t>(cloud.points.size()));
    out.push_back(cloud.class_label ? static_cast<std::uint8_t>(*cloud.class_label)
                                    : kUnlabelled);
    out.insert(out.end(), {0, 0, 0});
    for (const LabeledPoint& p : cloud.points) {
        put_f32le(out, p.x);
        put_f32le(out, p.y);
        put_f32le(out, p.intensity);
        out.push_back(static_cast<std::uint8_t>(p.region));
    }
    return out;
}

/// Inverse of encode_cloud. Rejects bad magic, size mismatches, region codes
/// > 3, and out-of-range coordinates/intensities. Never reads past the input.
inline PointCloud decode_cloud(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kCloudHeaderBytes) throw LengthError("cloud: shorter than 12-byte header");
    if (std::memcmp(bytes.data(), "APC1", 4) != 0)
        throw FormatError("cloud: bad magic, expected APC1");
    const std::uint32_t count = get_u32le(bytes, 4);
    const std::uint8_t cls = bytes[8];
    const std::size_t expected = kCloudHeaderBytes + kPointRecordBytes * std::size_t{count};
    if (bytes.size() != expected)
        throw LengthError("cloud: header declares " + std::to_string(count) + " points (" +
                          std::to_string(expected) + " bytes) but input has " +
                          std::to_string(bytes.size()));
    if (cls != 0 && cls != 1 && cls != kUnlabelled)
        throw ValueError("cloud: class byte must be 0, 1 or 255");

    PointCloud cloud;
    if (cls != kUnlabelled) cloud.class_label = static_cast<ClassLabel>(cls);
    cloud.points.reserve(count);
    std::size_t off = kCloudHeaderBytes;
    for (std::uint32_t i = 0; i < count; ++i, off += kPointRecordBytes) {
        LabeledPoint p;
        p.x = get_f32le(bytes, off);
        p.y = get_f32le(bytes, off + 4);
        p.intensity = get_f32le(bytes, off + 8);
        const std::uint8_t region = bytes[off + 12];
        if (region >= kRegionCount)
            throw ValueError("cloud: region code " + std::to_string(region) + " at point " +
                             std::to_string(i));
        if (!std::isfinite(p.x) || p.x < -1.0f || p.x > 1.0f || !std::isfinite(p.y) ||
            p.y < -1.0f || p.y > 1.0f)
            throw ValueError("cloud: coordinate out of [-1, 1] at point " + std::to_string(i));
        if (!std::isfinite(p.intensity) || p.intensity < 0.0f || p.intensity > 1.0f)
            throw ValueError("cloud: intensity out of [0, 1] at point " + std::to_string(i));
        p.region = static_cast<RegionLabel>(region);
        cloud.points.push_back(p);
    }
    return cloud;
}

// ---------------------------------------------------------------------------
// Atomic file IO
// ---------------------------------------------------------------------------

inline void write_file_atomic(const std::filesystem::path& path,
                              std::span<const std::uint8_t> bytes) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open for write: " + tmp.string());
        f.write(reinterpret_cast<const char*>(bytes.data()),
                static_cast<std::streamsize>(bytes.size()));
        if (!f) throw IoError("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
    write_file_atomic(path, std::span<const std::uint8_t>(
                                reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

inline void write_cloud_file(const std::filesystem::path& path, const PointCloud& cloud) {
    write_file_atomic(path, encode_cloud(cloud));
}

inline PointCloud read_cloud_file(const std::filesystem::path& path) {
    PointCloud c = decode_cloud(read_file(path));
    c.source_id = path.stem().string();
    return c;
}

// ---------------------------------------------------------------------------
// Dataset manifest
//
// Human-readable, tab-separated:
//   line 1: "neuroaps-manifest v1"
//   rows:   sample_id <TAB> class <TAB> path <TAB> split
//   last:   "checksum <16 hex digits>"   (FNV-1a 64 over all row bytes)
// ---------------------------------------------------------------------------

enum class Split : std::uint8_t { Train = 0, Test = 1 };

inline const char* split_name(Split s) { return s == Split::Train ? "train" : "test"; }

struct ManifestRecord {
    std::string sample_id;
    ClassLabel label = ClassLabel::CN;
    std::string path;
    Split split = Split::Train;

    bool operator==(const ManifestRecord&) const = default;
};

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
    return h;
}

inline std::string encode_manifest(const std::vector<ManifestRecord>& records) {
    for (const auto& r : records) {
        if (r.sample_id.find_first_of("\t\n") != std::string::npos ||
            r.path.find_first_of("\t\n") != std::string::npos)
            throw ValueError("manifest: tab/newline not allowed in id or path");
    }
    std::string body;
    for (const auto& r : records) {
        body += r.sample_id;
        body += '\t';
        body += class_name(r.label);
        body += '\t';
        body += r.path;
        body += '\t';
        body += split_name(r.split);
        body += '\n';
    }
    char digest[17];
    std::snprintf(digest, sizeof digest, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(body)));
    return "neuroaps-manifest v1\n" + body + "checksum " + digest + "\n";
}

inline std::vector<ManifestRecord> parse_manifest(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "neuroaps-manifest v1")
        throw FormatError("manifest: missing 'neuroaps-manifest v1' header");

    std::vector<ManifestRecord> records;
    std::string body;
    std::string checksum_line;
    while (std::getline(in, line)) {
        if (line.rfind("checksum ", 0) == 0) {
            checksum_line = line;
            break;
        }
        body += line;
        body += '\n';
        ManifestRecord r;
        std::size_t a = line.find('\t');
        std::size_t b = (a == std::string::npos) ? a : line.find('\t', a + 1);
        std::size_t c = (b == std::string::npos) ? b : line.find('\t', b + 1);
        if (c == std::string::npos) throw FormatError("manifest: row needs 4 tab-separated fields");
        r.sample_id = line.substr(0, a);
        const std::string cls = line.substr(a + 1, b - a - 1);
        r.path = line.substr(b + 1, c - b - 1);
        const std::string split = line.substr(c + 1);
        if (cls == "AD")
            r.label = ClassLabel::AD;
        else if (cls == "CN")
            r.label = ClassLabel::CN;
        else
            throw ValueError("manifest: class must be AD or CN, got '" + cls + "'");
        if (split == "train")
            r.split = Split::Train;
        else if (split == "test")
            r.split = Split::Test;
        else
            throw ValueError("manifest: split must be train or test, got '" + split + "'");
        records.push_back(std::move(r));
    }
    if (checksum_line.empty()) throw FormatError("manifest: missing checksum line");

    char expected[17];
    std::snprintf(expected, sizeof expected, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(body)));
    if (checksum_line != std::string("checksum ") + expected)
        throw IntegrityError("manifest: checksum mismatch (body was modified?)");
    return records;
}

inline void write_manifest_file(const std::filesystem::path& path,
                                const std::vector<ManifestRecord>& records) {
    write_file_atomic(path, encode_manifest(records));
}

inline std::vector<ManifestRecord> read_manifest_file(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    return parse_manifest(std::string(bytes.begin(), bytes.end()));
}

// ---------------------------------------------------------------------------
// Phantom bundle format "APH1": one slice plus its region masks
//
//   magic "APH1" | u32 width | u32 height | u8 class | 3 zero bytes
//   f32 pixels row-major | 5 byte-masks (brain, hippocampus, ventricles,
//   surface, interior), each width*height bytes of 0/1
// ---------------------------------------------------------------------------

struct PhantomSample {
    SliceImage slice;
    RegionMasks masks;
    ClassLabel label = ClassLabel::CN;
};

inline std::vector<std::uint8_t> encode_phantom(const PhantomSample& s) {
    const std::size_t n = s.slice.size();
    std::vector<std::uint8_t> out;
    out.reserve(12 + 4 * n + 5 * n);
    out.insert(out.end(), {'A', 'P', 'H', '1'});
    put_u32le(out, static_cast<std::uint32_t>(s.slice.width));
    put_u32le(out, static_cast<std::uint32_t>(s.slice.height));
    out.push_back(static_cast<std::uint8_t>(s.label));
    out.insert(out.end(), {0, 0, 0});
    for (float v : s.slice.pixels) put_f32le(out, v);
    auto put_mask = [&](const Mask& m) {
        out.insert(out.end(), m.data.begin(), m.data.end());
    };
    put_mask(s.masks.brain);
    for (const auto& m : s.masks.region) put_mask(m);
    return out;
}

inline PhantomSample decode_phantom(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 16) throw LengthError("phantom: shorter than header");
    if (std::memcmp(bytes.data(), "APH1", 4) != 0)
        throw FormatError("phantom: bad magic, expected APH1");
    const std::uint32_t w = get_u32le(bytes, 4);
    const std::uint32_t h = get_u32le(bytes, 8);
    const std::uint8_t cls = bytes[12];
    if (w == 0 || h == 0 || w > 1 << 16 || h > 1 << 16)
        throw ValueError("phantom: implausible dimensions");
    if (cls > 1) throw ValueError("phantom: class byte must be 0 or 1");
    const std::size_t n = std::size_t{w} * h;
    const std::size_t expected = 16 + 4 * n + 5 * n;
    if (bytes.size() != expected)
        throw LengthError("phantom: expected " + std::to_string(expected) + " bytes, got " +
                          std::to_string(bytes.size()));

    PhantomSample s;
    s.label = static_cast<ClassLabel>(cls);
    s.slice = SliceImage(static_cast<int>(w), static_cast<int>(h));
    std::size_t off = 16;
    for (std::size_t i = 0; i < n; ++i, off += 4) {
        const float v = get_f32le(bytes, off);
        if (!std::isfinite(v)) throw ValueError("phantom: non-finite pixel");
        s.slice.pixels[i] = v;
    }
    auto get_mask = [&](Mask& m) {
        m = Mask(static_cast<int>(w), static_cast<int>(h));
        for (std::size_t i = 0; i < n; ++i, ++off) {
            if (bytes[off] > 1) throw ValueError("phantom: mask byte must be 0 or 1");
            m.data[i] = bytes[off];
        }
    };
    get_mask(s.masks.brain);
    for (auto& m : s.masks.region) get_mask(m);
    return s;
}

inline void write_phantom_file(const std::filesystem::path& path, const PhantomSample& s) {
    write_file_atomic(path, encode_phantom(s));
}

inline PhantomSample read_phantom_file(const std::filesystem::path& path) {
    return decode_phantom(read_file(path));
}

}  // namespace neuroaps::io
