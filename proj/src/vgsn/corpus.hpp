#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace vgsn {

// ---- binary PGM (P5, maxval 255) --------------------------------------------

struct GrayImage {
    int width = 0;
    int height = 0;
    std::vector<float> pixels;  // row-major, values in [0,1], v/255

    float at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

namespace detail {

inline std::string next_pgm_token(std::istream& is) {
    std::string tok;
    int ch;
    while ((ch = is.get()) != EOF) {
        if (ch == '#') {  // comment runs to end of line
            while ((ch = is.get()) != EOF && ch != '\n') {
            }
            continue;
        }
        if (std::isspace(ch)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(ch));
    }
    if (tok.empty()) fail(ErrorCategory::format, "truncated PGM header");
    return tok;
}

}  // namespace detail

inline GrayImage load_pgm(std::istream& is) {
    char m0 = static_cast<char>(is.get());
    char m1 = static_cast<char>(is.get());
    if (!is || m0 != 'P' || m1 != '5')
        fail(ErrorCategory::format, std::string("unsupported PGM magic (want P5, got ") + m0 + m1 +
                                        ")");
    auto parse_int = [](const std::string& tok) {
        try {
            std::size_t pos = 0;
            long v = std::stol(tok, &pos);
            if (pos != tok.size()) throw std::invalid_argument(tok);
            return v;
        } catch (const std::exception&) {
            fail(ErrorCategory::format, "bad PGM header token: " + tok);
        }
    };
    long w = parse_int(detail::next_pgm_token(is));
    long h = parse_int(detail::next_pgm_token(is));
    long maxval = parse_int(detail::next_pgm_token(is));
    if (w <= 0 || h <= 0) fail(ErrorCategory::format, "PGM dimensions must be positive");
    if (maxval != 255) fail(ErrorCategory::format, "only maxval 255 PGM supported");
    // header token reader consumed exactly one whitespace after maxval
    GrayImage img;
    img.width = static_cast<int>(w);
    img.height = static_cast<int>(h);
    std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
    std::vector<unsigned char> raw(n);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n)
        fail(ErrorCategory::format, "truncated PGM payload");
    img.pixels.resize(n);
    for (std::size_t i = 0; i < n; ++i) img.pixels[i] = static_cast<float>(raw[i]) / 255.0f;
    return img;
}

inline GrayImage load_pgm_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(ErrorCategory::io, "cannot open " + path.string());
    return load_pgm(f);
}

// Canonical writer: `P5\n<w> <h>\n255\n` then round-half-up bytes.
inline void save_pgm(std::ostream& os, const GrayImage& img) {
    for (float v : img.pixels)
        if (!(v >= 0.0f && v <= 1.0f))
            fail(ErrorCategory::invalid_argument, "PGM pixel value outside [0,1]");
    os << "P5\n" << img.width << ' ' << img.height << "\n255\n";
    std::vector<unsigned char> raw(img.pixels.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        long q = static_cast<long>(std::floor(static_cast<double>(img.pixels[i]) * 255.0 + 0.5));
        raw[i] = static_cast<unsigned char>(std::clamp(q, 0L, 255L));
    }
    os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!os) fail(ErrorCategory::io, "failed writing PGM stream");
}

inline void save_pgm_file(const std::filesystem::path& path, const GrayImage& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) fail(ErrorCategory::io, "cannot open " + path.string() + " for writing");
    save_pgm(f, img);
}

// ---- paired corpus -----------------------------------------------------------

struct GlyphPair {
    std::uint32_t codepoint = 0;
    GrayImage image_a;  // source font, the network input
    GrayImage image_b;  // target font
};

struct PairedCorpus {
    std::vector<GlyphPair> pairs;  // sorted by codepoint
    int image_size = 0;
    std::vector<std::uint32_t> skipped;  // present in only one font
};

// Filenames follow `U+XXXX.pgm` with 4-6 uppercase hex digits.
inline bool parse_codepoint_filename(const std::string& name, std::uint32_t* out) {
    if (name.size() < 10 || name.size() > 12) return false;
    if (name.rfind("U+", 0) != 0) return false;
    if (name.substr(name.size() - 4) != ".pgm") return false;
    std::string hex = name.substr(2, name.size() - 6);
    if (hex.size() < 4 || hex.size() > 6) return false;
    std::uint32_t v = 0;
    for (char c : hex) {
        if (!((c >= '0' && c <= '9') || (c >= 'A' && c <= 'F'))) return false;
        v = v * 16 + static_cast<std::uint32_t>(c <= '9' ? c - '0' : c - 'A' + 10);
    }
    if (v > 0x10FFFF) return false;
    *out = v;
    return true;
}

inline std::string codepoint_filename(std::uint32_t cp) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "U+%04X.pgm", cp);
    return buf;
}

namespace detail {

inline std::map<std::uint32_t, std::filesystem::path> scan_font_dir(
    const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir))
        fail(ErrorCategory::io, "not a directory: " + dir.string());
    std::map<std::uint32_t, std::filesystem::path> out;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string name = entry.path().filename().string();
        std::uint32_t cp;
        if (!parse_codepoint_filename(name, &cp)) {
            if (name.size() > 4 && name.substr(name.size() - 4) == ".pgm")
                fail(ErrorCategory::format, "unparsable glyph filename: " + name);
            continue;  // ignore non-pgm files
        }
        out[cp] = entry.path();
    }
    return out;
}

}  // namespace detail

inline PairedCorpus load_paired_corpus(const std::filesystem::path& dir_a,
                                       const std::filesystem::path& dir_b) {
    auto fa = detail::scan_font_dir(dir_a);
    auto fb = detail::scan_font_dir(dir_b);
    PairedCorpus corpus;
    for (const auto& [cp, path_a] : fa) {
        auto it = fb.find(cp);
        if (it == fb.end()) {
            corpus.skipped.push_back(cp);
            continue;
        }
        GlyphPair pair;
        pair.codepoint = cp;
        pair.image_a = load_pgm_file(path_a);
        pair.image_b = load_pgm_file(it->second);
        if (pair.image_a.width != pair.image_a.height)
            fail(ErrorCategory::format, "glyph " + codepoint_filename(cp) + " is not square");
        if (pair.image_a.width != pair.image_b.width ||
            pair.image_a.height != pair.image_b.height)
            fail(ErrorCategory::format,
                 "dimension mismatch between fonts for " + codepoint_filename(cp));
        if (corpus.image_size == 0)
            corpus.image_size = pair.image_a.width;
        else if (corpus.image_size != pair.image_a.width)
            fail(ErrorCategory::format, "corpus image sizes are not uniform (" +
                                            codepoint_filename(cp) + ")");
        corpus.pairs.push_back(std::move(pair));
    }
    for (const auto& [cp, path_b] : fb)
        if (!fa.count(cp)) corpus.skipped.push_back(cp);
    if (corpus.pairs.empty())
        fail(ErrorCategory::invalid_argument, "empty corpus: no codepoints shared by both fonts");
    return corpus;
}

template <typename Real>
struct Batch {
    Tensor<Real> input;   // [b,H,W,1], font A
    Tensor<Real> target;  // [b,H,W,1], font B
    std::vector<std::uint32_t> codepoints;
};

template <typename Real>
std::vector<Batch<Real>> make_batches(const PairedCorpus& corpus, int batch_size, Rng& rng) {
    if (corpus.pairs.empty()) fail(ErrorCategory::invalid_argument, "empty corpus");
    if (batch_size < 1) fail(ErrorCategory::invalid_argument, "batch size must be >= 1");
    std::vector<std::size_t> order(corpus.pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle(order, rng);
    int hw = corpus.image_size;
    std::vector<Batch<Real>> batches;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        std::size_t b = std::min<std::size_t>(batch_size, order.size() - start);
        Batch<Real> batch;
        batch.input = Tensor<Real>(Shape{static_cast<int>(b), hw, hw, 1});
        batch.target = Tensor<Real>(Shape{static_cast<int>(b), hw, hw, 1});
        for (std::size_t i = 0; i < b; ++i) {
            const GlyphPair& pair = corpus.pairs[order[start + i]];
            batch.codepoints.push_back(pair.codepoint);
            std::size_t off = i * static_cast<std::size_t>(hw) * hw;
            for (std::size_t p = 0; p < static_cast<std::size_t>(hw) * hw; ++p) {
                batch.input.data[off + p] = static_cast<Real>(pair.image_a.pixels[p]);
                batch.target.data[off + p] = static_cast<Real>(pair.image_b.pixels[p]);
            }
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

}  // namespace vgsn
