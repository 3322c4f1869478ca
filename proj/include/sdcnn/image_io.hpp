#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sdcnn/errors.hpp"
#include "sdcnn/image.hpp"

namespace sdcnn {

namespace fs = std::filesystem;

// Writes bytes to a temp file in the same directory and renames it into
// place, so a crashed run never leaves a half-written artifact behind.
inline void atomic_write_file(const fs::path& path, const void* bytes, std::size_t n) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
        out.write(static_cast<const char*>(bytes), static_cast<std::streamsize>(n));
        if (!out) throw IoError("short write to '" + tmp.string() + "'");
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename '" + tmp.string() + "' to '" + path.string() + "'");
}

inline void atomic_write_text(const fs::path& path, const std::string& text) {
    atomic_write_file(path, text.data(), text.size());
}

inline std::string read_text_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return text;
}

// ---------------------------------------------------------------------------
// PGM (binary P5, 8- or 16-bit; 16-bit samples are big-endian per netpbm)
// ---------------------------------------------------------------------------

namespace detail {
inline int pgm_next_token(std::istream& in, std::string& tok) {
    tok.clear();
    int c = in.get();
    while (c != EOF) {
        if (c == '#') { // comment runs to end of line
            while (c != EOF && c != '\n') c = in.get();
        } else if (std::isspace(c)) {
            c = in.get();
        } else {
            break;
        }
    }
    while (c != EOF && !std::isspace(c)) {
        tok.push_back(static_cast<char>(c));
        c = in.get();
    }
    return tok.empty() ? EOF : 0;
}
} // namespace detail

inline ImageGrid read_pgm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::string tok;
    if (detail::pgm_next_token(in, tok) == EOF || tok != "P5")
        throw IoError("'" + path.string() + "' is not a binary PGM (P5) file");
    long w = 0, h = 0, maxval = 0;
    try {
        if (detail::pgm_next_token(in, tok) == EOF) throw IoError("truncated header");
        w = std::stol(tok);
        if (detail::pgm_next_token(in, tok) == EOF) throw IoError("truncated header");
        h = std::stol(tok);
        if (detail::pgm_next_token(in, tok) == EOF) throw IoError("truncated header");
        maxval = std::stol(tok);
    } catch (const std::logic_error&) {
        throw IoError("malformed PGM header in '" + path.string() + "'");
    }
    if (w < 1 || h < 1 || maxval < 1 || maxval > 65535)
        throw IoError("unsupported PGM geometry in '" + path.string() + "'");
    ImageGrid img(static_cast<int>(w), static_cast<int>(h));
    const bool wide = maxval > 255;
    const std::size_t npix = img.size();
    std::vector<unsigned char> raw(npix * (wide ? 2 : 1));
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size())
        throw IoError("truncated pixel data in '" + path.string() + "'");
    if (wide) {
        for (std::size_t i = 0; i < npix; ++i)
            img.data[i] = static_cast<double>((raw[2 * i] << 8) | raw[2 * i + 1]);
    } else {
        for (std::size_t i = 0; i < npix; ++i) img.data[i] = static_cast<double>(raw[i]);
    }
    return img;
}

// Values are rounded and clamped to [0, maxval].
inline void write_pgm16(const fs::path& path, const ImageGrid& img, int maxval = 16383) {
    if (maxval < 256 || maxval > 65535) throw ConfigError("write_pgm16 maxval must be in [256, 65535]");
    std::string header = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) +
                         "\n" + std::to_string(maxval) + "\n";
    std::vector<unsigned char> bytes(header.begin(), header.end());
    bytes.reserve(bytes.size() + img.size() * 2);
    for (double v : img.data) {
        long s = std::lround(v);
        s = std::clamp(s, 0L, static_cast<long>(maxval));
        bytes.push_back(static_cast<unsigned char>((s >> 8) & 0xff));
        bytes.push_back(static_cast<unsigned char>(s & 0xff));
    }
    atomic_write_file(path, bytes.data(), bytes.size());
}

// ---------------------------------------------------------------------------
// Raw float32 grid: little-endian samples + JSON sidecar "<file>.json"
// carrying {"width": W, "height": H}
// ---------------------------------------------------------------------------

inline fs::path f32_sidecar_path(const fs::path& path) { return path.string() + ".json"; }

inline ImageGrid read_f32(const fs::path& path) {
    const fs::path side = f32_sidecar_path(path);
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(read_text_file(side));
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad sidecar '" + side.string() + "': " + e.what());
    }
    if (!meta.contains("width") || !meta.contains("height"))
        throw IoError("sidecar '" + side.string() + "' lacks width/height");
    const int w = meta["width"].get<int>();
    const int h = meta["height"].get<int>();
    if (w < 1 || h < 1) throw IoError("sidecar '" + side.string() + "' has invalid dimensions");
    ImageGrid img(w, h);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::vector<float> raw(img.size());
    in.read(reinterpret_cast<char*>(raw.data()),
            static_cast<std::streamsize>(raw.size() * sizeof(float)));
    if (static_cast<std::size_t>(in.gcount()) != raw.size() * sizeof(float))
        throw IoError("'" + path.string() + "' shorter than sidecar dimensions imply");
    for (std::size_t i = 0; i < raw.size(); ++i) img.data[i] = static_cast<double>(raw[i]);
    return img;
}

inline void write_f32(const fs::path& path, const ImageGrid& img) {
    std::vector<float> raw(img.size());
    for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = static_cast<float>(img.data[i]);
    atomic_write_file(path, raw.data(), raw.size() * sizeof(float));
    nlohmann::json meta;
    meta["width"] = img.width;
    meta["height"] = img.height;
    atomic_write_text(f32_sidecar_path(path), meta.dump() + "\n");
}

// Dispatch on extension: ".pgm" -> PGM, anything else -> raw float32 grid.
inline ImageGrid load_image(const fs::path& path) {
    if (path.extension() == ".pgm") return read_pgm(path);
    return read_f32(path);
}

} // namespace sdcnn
