#pragma once

// File formats.
//
// FMAT (features): "FMAT" | u32 version=1 | u64 rows | u64 cols |
//   rows*cols float32, row-major. All integers and floats little-endian.
// SFWT (weights):  "SFWT" | u32 version=1 | u64 tensor count | per tensor:
//   u32 name length | name bytes | u64 rows | u64 cols | rows*cols float64.
//   Tensors appear in for_each_tensor order.
// Config: UTF-8 `key = value` lines, `#` starts a comment.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "speechformer/errors.hpp"
#include "speechformer/model.hpp"
#include "speechformer/tensor.hpp"

namespace speechformer {

inline constexpr std::uint32_t kFormatVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffU);
    os.write(b, 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffU);
    os.write(b, 8);
}

inline std::uint64_t get_le(std::istream& is, int bytes, const char* what) {
    unsigned char b[8] = {};
    if (!is.read(reinterpret_cast<char*>(b), bytes)) {
        throw FormatError(std::string("truncated file while reading ") + what);
    }
    std::uint64_t v = 0;
    for (int i = bytes - 1; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

inline void expect_magic(std::istream& is, std::string_view magic) {
    char b[4] = {};
    if (!is.read(b, 4) || std::string_view(b, 4) != magic) {
        throw FormatError("bad magic: expected \"" + std::string(magic) + "\"");
    }
    const auto version = get_le(is, 4, "version");
    if (version != kFormatVersion) {
        throw FormatError("unsupported " + std::string(magic) + " version " + std::to_string(version));
    }
}

inline void expect_eof(std::istream& is, std::string_view magic) {
    if (is.peek() != std::char_traits<char>::eof()) {
        throw FormatError("trailing bytes after " + std::string(magic) + " payload");
    }
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot open " + path + " for writing");
    return os;
}

inline std::ifstream open_in(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path);
    return is;
}

} // namespace detail

// ---------------------------------------------------------------------------
// FMAT

/// Values are narrowed to float32.
inline void write_features(std::ostream& os, const Matrix& m) {
    os.write("FMAT", 4);
    detail::put_u32(os, kFormatVersion);
    detail::put_u64(os, m.rows());
    detail::put_u64(os, m.cols());
    for (double v : m.values()) detail::put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    if (!os) throw FormatError("failed writing FMAT payload");
}

/// Payload is widened to double on load.
inline Matrix read_features(std::istream& is) {
    detail::expect_magic(is, "FMAT");
    const auto rows = detail::get_le(is, 8, "rows");
    const auto cols = detail::get_le(is, 8, "cols");
    if (cols != 0 && rows > std::numeric_limits<std::uint32_t>::max() / cols) {
        throw FormatError("FMAT shape too large: " + std::to_string(rows) + "x" + std::to_string(cols));
    }
    Matrix m(rows, cols);
    for (double& v : m.values()) {
        const auto f = std::bit_cast<float>(static_cast<std::uint32_t>(detail::get_le(is, 4, "payload")));
        if (!std::isfinite(f)) throw FormatError("FMAT payload contains a non-finite value");
        v = static_cast<double>(f);
    }
    detail::expect_eof(is, "FMAT");
    return m;
}

inline void save_features(const std::string& path, const Matrix& m) {
    auto os = detail::open_out(path);
    write_features(os, m);
}

inline Matrix load_features(const std::string& path) {
    auto is = detail::open_in(path);
    return read_features(is);
}

// ---------------------------------------------------------------------------
// SFWT

inline void write_checkpoint(std::ostream& os, const ModelConfig& config, const ModelWeights& w) {
    std::uint64_t count = 0;
    for_each_tensor(config, w, [&](const std::string&, TensorKind, std::span<const double>,
                                   std::size_t, std::size_t) { ++count; });
    os.write("SFWT", 4);
    detail::put_u32(os, kFormatVersion);
    detail::put_u64(os, count);
    for_each_tensor(config, w,
                    [&](const std::string& name, TensorKind, std::span<const double> values,
                        std::size_t rows, std::size_t cols) {
                        detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
                        os.write(name.data(), static_cast<std::streamsize>(name.size()));
                        detail::put_u64(os, rows);
                        detail::put_u64(os, cols);
                        for (double v : values) detail::put_u64(os, std::bit_cast<std::uint64_t>(v));
                    });
    if (!os) throw FormatError("failed writing SFWT payload");
}

/// Tensor names and shapes must match what `config` implies, in order.
inline ModelWeights read_checkpoint(std::istream& is, const ModelConfig& config) {
    ModelWeights w = allocate_weights(config);
    detail::expect_magic(is, "SFWT");
    const auto count = detail::get_le(is, 8, "tensor count");
    std::uint64_t seen = 0;
    for_each_tensor(config, w,
                    [&](const std::string& name, TensorKind, std::span<double> values,
                        std::size_t rows, std::size_t cols) {
                        if (seen++ >= count) {
                            throw FormatError("checkpoint has " + std::to_string(count) +
                                              " tensors, config needs more (missing " + name + ")");
                        }
                        const auto len = detail::get_le(is, 4, "name length");
                        if (len > 4096) throw FormatError("implausible tensor name length");
                        std::string got(len, '\0');
                        if (!is.read(got.data(), static_cast<std::streamsize>(len))) {
                            throw FormatError("truncated tensor name");
                        }
                        if (got != name) {
                            throw FormatError("checkpoint tensor \"" + got + "\" where \"" + name +
                                              "\" was expected");
                        }
                        const auto r = detail::get_le(is, 8, "rows");
                        const auto c = detail::get_le(is, 8, "cols");
                        if (r != rows || c != cols) {
                            throw FormatError("tensor " + name + " has shape " +
                                              Matrix::shape_string(r, c) + ", config expects " +
                                              Matrix::shape_string(rows, cols));
                        }
                        for (double& v : values) {
                            v = std::bit_cast<double>(detail::get_le(is, 8, "payload"));
                            if (!std::isfinite(v)) {
                                throw FormatError("tensor " + name + " contains a non-finite value");
                            }
                        }
                    });
    if (seen != count) {
        throw FormatError("checkpoint has " + std::to_string(count) + " tensors, config expects " +
                          std::to_string(seen));
    }
    detail::expect_eof(is, "SFWT");
    return w;
}

inline void save_checkpoint(const std::string& path, const ModelConfig& config, const ModelWeights& w) {
    auto os = detail::open_out(path);
    write_checkpoint(os, config, w);
}

inline ModelWeights load_checkpoint(const std::string& path, const ModelConfig& config) {
    auto is = detail::open_in(path);
    return read_checkpoint(is, config);
}

// ---------------------------------------------------------------------------
// config text

struct RunConfig {
    ModelConfig model;
    std::uint64_t seed = 0;
};

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& value) {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
        if (value.empty() || value[0] == '-') throw std::invalid_argument(value);
        v = std::stoull(value, &pos);
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": expected a non-negative integer, got \"" + value + "\"");
    }
    if (pos != value.size()) {
        throw ConfigError("config key " + key + ": expected a non-negative integer, got \"" + value + "\"");
    }
    return v;
}

inline double parse_real(const std::string& key, const std::string& value) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(value, &pos);
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": expected a number, got \"" + value + "\"");
    }
    if (pos != value.size() || !std::isfinite(v)) {
        throw ConfigError("config key " + key + ": expected a number, got \"" + value + "\"");
    }
    return v;
}

inline std::vector<std::size_t> parse_list(const std::string& key, const std::string& value) {
    std::vector<std::size_t> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_uint(key, trim(item)));
    if (out.empty()) throw ConfigError("config key " + key + ": empty list");
    return out;
}

} // namespace detail

/// Missing keys keep their defaults; `blocks` defaults to {12} for the
/// baseline and {2,2,4,4} otherwise.
inline RunConfig parse_config(std::string_view text) {
    RunConfig rc;
    bool blocks_set = false;
    std::stringstream ss{std::string(text)};
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(ss, raw)) {
        ++line_no;
        if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
        const std::string line = detail::trim(raw);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        }
        const std::string key = detail::trim(std::string_view(line).substr(0, eq));
        const std::string value = detail::trim(std::string_view(line).substr(eq + 1));
        ModelConfig& m = rc.model;
        if (key == "variant") {
            if (value == "baseline") m.variant = Variant::baseline;
            else if (value == "speechformer") m.variant = Variant::speechformer;
            else throw ConfigError("config key variant: expected baseline or speechformer, got \"" + value + "\"");
        } else if (key == "d_model") {
            m.d_model = detail::parse_uint(key, value);
        } else if (key == "num_heads") {
            m.num_heads = detail::parse_uint(key, value);
        } else if (key == "hop1_ms") {
            m.hop1_ms = detail::parse_real(key, value);
        } else if (key == "blocks") {
            m.blocks = detail::parse_list(key, value);
            blocks_set = true;
        } else if (key == "expand") {
            m.expand = detail::parse_list(key, value);
        } else if (key == "num_classes") {
            m.num_classes = detail::parse_uint(key, value);
        } else if (key == "ffn_ratio") {
            m.ffn_ratio = detail::parse_real(key, value);
        } else if (key == "scale_mode") {
            if (value == "dh") m.scale_mode = ScaleMode::dh;
            else if (value == "sqrt_dh") m.scale_mode = ScaleMode::sqrt_dh;
            else throw ConfigError("config key scale_mode: expected dh or sqrt_dh, got \"" + value + "\"");
        } else if (key == "seed") {
            rc.seed = detail::parse_uint(key, value);
        } else {
            throw ConfigError("config line " + std::to_string(line_no) + ": unknown key \"" + key + "\"");
        }
    }
    if (rc.model.variant == Variant::baseline) {
        if (!blocks_set) rc.model.blocks = {12};
        rc.model.expand.clear();
    }
    rc.model.validate();
    return rc;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path);
    std::stringstream buf;
    buf << is.rdbuf();
    return parse_config(buf.str());
}

} // namespace speechformer
