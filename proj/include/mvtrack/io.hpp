#pragma once

// File formats: point clouds (text or XMPC binary), flow dumps (XMPF) and
// 16-bit depth graymaps.

#include "mvtrack/depth_render.hpp"
#include "mvtrack/map_manager.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvtrack {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

template <class T>
void put(std::string& out, T v) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    out.append(b, sizeof(T));
}

template <class T>
T get(std::istream& is, const std::string& path) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError(path + ": truncated file");
    return v;
}

inline std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::runtime_error("failed writing " + path);
}

inline bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace detail

inline constexpr char kCloudMagic[4] = {'X', 'M', 'P', 'C'};
inline constexpr char kFlowMagic[4] = {'X', 'M', 'P', 'F'};
inline constexpr std::uint32_t kFormatVersion = 1;

/// Binary cloud: "XMPC", u32 version, u64 count, count * 3 float32 (x y z).
inline std::string encode_cloud_binary(const PointCloud& c) {
    std::string out(kCloudMagic, 4);
    detail::put<std::uint32_t>(out, kFormatVersion);
    detail::put<std::uint64_t>(out, c.size());
    out.reserve(out.size() + 12 * c.size());
    for (const Vec3& p : c.points) {
        for (int k = 0; k < 3; ++k) detail::put<float>(out, static_cast<float>(p[k]));
    }
    return out;
}

/// Text cloud: one "x y z" line per point.
inline std::string encode_cloud_text(const PointCloud& c) {
    std::string out;
    char buf[96];
    for (const Vec3& p : c.points) {
        std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g\n", p.x(), p.y(), p.z());
        out += buf;
    }
    return out;
}

inline PointCloud decode_cloud(const std::string& bytes, const std::string& path = "<memory>") {
    PointCloud c;
    if (bytes.size() >= 4 && std::memcmp(bytes.data(), kCloudMagic, 4) == 0) {
        std::istringstream is(bytes.substr(4));
        const auto version = detail::get<std::uint32_t>(is, path);
        if (version != kFormatVersion) throw FormatError(path + ": unsupported cloud version " + std::to_string(version));
        const auto n = detail::get<std::uint64_t>(is, path);
        if (bytes.size() != 16 + 12 * n) throw FormatError(path + ": cloud size does not match its header");
        c.points.reserve(n);
        for (std::uint64_t i = 0; i < n; ++i) {
            const float x = detail::get<float>(is, path), y = detail::get<float>(is, path), z = detail::get<float>(is, path);
            c.points.emplace_back(x, y, z);
        }
        return c;
    }
    std::istringstream is(bytes);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
        std::istringstream ls(line);
        Vec3 p;
        std::string extra;
        if (!(ls >> p.x() >> p.y() >> p.z()) || (ls >> extra))
            throw FormatError(path + ":" + std::to_string(lineno) + ": expected 'x y z'");
        c.points.push_back(p);
    }
    return c;
}

/// Writes text when the path ends in .txt or .xyz, binary otherwise.
inline void save_cloud(const PointCloud& c, const std::string& path) {
    const bool text = detail::ends_with(path, ".txt") || detail::ends_with(path, ".xyz");
    detail::write_file(path, text ? encode_cloud_text(c) : encode_cloud_binary(c));
}

inline PointCloud load_cloud(const std::string& path) { return decode_cloud(detail::read_file(path), path); }

/// Flow dump: "XMPF", u32 version, u64 pixel count, u32 width, u32 height,
/// then float32 planes du, dv, valid (0 or 1).
inline std::string encode_flow(const FlowField& f) {
    std::string out(kFlowMagic, 4);
    const std::size_t n = static_cast<std::size_t>(f.width) * f.height;
    detail::put<std::uint32_t>(out, kFormatVersion);
    detail::put<std::uint64_t>(out, n);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(f.width));
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(f.height));
    out.reserve(out.size() + 12 * n);
    for (std::size_t i = 0; i < n; ++i) detail::put<float>(out, f.du[i]);
    for (std::size_t i = 0; i < n; ++i) detail::put<float>(out, f.dv[i]);
    for (std::size_t i = 0; i < n; ++i) detail::put<float>(out, f.valid[i] ? 1.0f : 0.0f);
    return out;
}

inline FlowField decode_flow(const std::string& bytes, const std::string& path = "<memory>") {
    if (bytes.size() < 24 || std::memcmp(bytes.data(), kFlowMagic, 4) != 0) throw FormatError(path + ": not a flow dump");
    std::istringstream is(bytes.substr(4));
    const auto version = detail::get<std::uint32_t>(is, path);
    if (version != kFormatVersion) throw FormatError(path + ": unsupported flow version " + std::to_string(version));
    const auto n = detail::get<std::uint64_t>(is, path);
    const auto w = detail::get<std::uint32_t>(is, path);
    const auto h = detail::get<std::uint32_t>(is, path);
    if (static_cast<std::uint64_t>(w) * h != n || bytes.size() != 24 + 12 * n)
        throw FormatError(path + ": flow size does not match its header");
    FlowField f(static_cast<int>(w), static_cast<int>(h));
    for (std::size_t i = 0; i < n; ++i) f.du[i] = detail::get<float>(is, path);
    for (std::size_t i = 0; i < n; ++i) f.dv[i] = detail::get<float>(is, path);
    for (std::size_t i = 0; i < n; ++i) f.valid[i] = detail::get<float>(is, path) != 0.0f;
    return f;
}

inline void save_flow(const FlowField& f, const std::string& path) { detail::write_file(path, encode_flow(f)); }
inline FlowField load_flow(const std::string& path) { return decode_flow(detail::read_file(path), path); }

inline constexpr double kDefaultDepthScale = 256.0;  // units per meter

/// 16-bit binary graymap (P5, big-endian samples). Depth is stored as
/// round(depth * scale), clamped to 65535; invalid pixels are 0. The scale is
/// declared in a "# depth_scale" header comment.
inline std::string encode_depth_pgm(const DepthMap& d, double scale = kDefaultDepthScale) {
    if (!(scale > 0.0)) throw std::invalid_argument("depth scale must be positive");
    char head[128];
    std::snprintf(head, sizeof head, "P5\n# depth_scale %.17g\n%d %d\n65535\n", scale, d.width, d.height);
    std::string out(head);
    out.reserve(out.size() + 2 * d.depth.size());
    for (std::size_t i = 0; i < d.depth.size(); ++i) {
        std::uint16_t v = 0;
        if (d.valid[i]) v = static_cast<std::uint16_t>(std::min(65535.0, std::max(1.0, std::round(d.depth[i] * scale))));
        out.push_back(static_cast<char>(v >> 8));
        out.push_back(static_cast<char>(v & 0xFF));
    }
    return out;
}

struct DepthImage {
    int width = 0;
    int height = 0;
    double scale = kDefaultDepthScale;
    std::vector<double> depth;  // meters, 0 where invalid
};

inline DepthImage decode_depth_pgm(const std::string& bytes, const std::string& path = "<memory>") {
    std::size_t pos = 0;
    DepthImage img;
    auto next_token = [&]() {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                const std::size_t eol = bytes.find('\n', pos);
                const std::string comment = bytes.substr(pos, eol - pos);
                if (comment.rfind("# depth_scale", 0) == 0) img.scale = std::stod(comment.substr(13));
                pos = eol == std::string::npos ? bytes.size() : eol + 1;
            } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
        const std::size_t start = pos;
        while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        return bytes.substr(start, pos - start);
    };
    if (next_token() != "P5") throw FormatError(path + ": not a binary graymap");
    try {
        img.width = std::stoi(next_token());
        img.height = std::stoi(next_token());
        if (std::stoi(next_token()) != 65535) throw FormatError(path + ": expected 16-bit samples");
    } catch (const std::logic_error&) {
        throw FormatError(path + ": malformed graymap header");
    }
    ++pos;  // single whitespace before the raster
    const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
    if (bytes.size() - pos != 2 * n) throw FormatError(path + ": raster size does not match the header");
    img.depth.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto hi = static_cast<unsigned char>(bytes[pos + 2 * i]);
        const auto lo = static_cast<unsigned char>(bytes[pos + 2 * i + 1]);
        img.depth[i] = static_cast<double>((hi << 8) | lo) / img.scale;
    }
    return img;
}

inline void save_depth_pgm(const DepthMap& d, const std::string& path, double scale = kDefaultDepthScale) {
    detail::write_file(path, encode_depth_pgm(d, scale));
}

}  // namespace mvtrack
