// Synthetic paired-font fixtures. Font A draws each glyph as a shared frame
// plus a codepoint-dependent block; font B renders the same geometry with
// dilated (bolder) strokes, standing in for a second font style.
#pragma once

#include <unistd.h>

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "vgsn/corpus.hpp"

namespace fixtures {

namespace fs = std::filesystem;

inline vgsn::GrayImage blank(int size) {
    vgsn::GrayImage img;
    img.width = img.height = size;
    img.pixels.assign(static_cast<std::size_t>(size) * size, 0.0f);
    return img;
}

inline void fill_rect(vgsn::GrayImage& img, int y0, int x0, int y1, int x1) {
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x)
            if (y >= 0 && y < img.height && x >= 0 && x < img.width)
                img.pixels[static_cast<std::size_t>(y) * img.width + x] = 1.0f;
}

inline vgsn::GrayImage dilate(const vgsn::GrayImage& img) {
    vgsn::GrayImage out = img;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            float m = 0.0f;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    int yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= img.height || xx < 0 || xx >= img.width) continue;
                    m = std::max(m, img.at(yy, xx));
                }
            out.pixels[static_cast<std::size_t>(y) * img.width + x] = m;
        }
    return out;
}

// Block positions keyed by (codepoint % 16); index 5 reuses index 0's block
// and adds a small corner dot, so a held-out glyph stays near a trained one.
inline vgsn::GrayImage make_glyph_a(std::uint32_t cp, int size) {
    vgsn::GrayImage img = blank(size);
    int t = std::max(size / 16, 1);  // stroke thickness
    // frame
    fill_rect(img, t, t, 2 * t, size - t);
    fill_rect(img, size - 2 * t, t, size - t, size - t);
    fill_rect(img, t, t, size - t, 2 * t);
    fill_rect(img, t, size - 2 * t, size - t, size - t);
    // variable block
    int q = size / 4;
    int positions[6][2] = {{q, q},         {q, 2 * q},             {2 * q, q},
                           {2 * q, 2 * q}, {q + q / 2, q + q / 2}, {q, q}};
    int idx = static_cast<int>(cp % 16) % 6;
    int by = positions[idx][0], bx = positions[idx][1];
    int bs = std::max(size / 5, 2);
    fill_rect(img, by, bx, by + bs, bx + bs);
    if (idx == 5) fill_rect(img, 3 * q - 1, 3 * q - 1, 3 * q + 1, 3 * q + 1);
    return img;
}

inline vgsn::GrayImage make_glyph_b(std::uint32_t cp, int size) {
    return dilate(make_glyph_a(cp, size));
}

inline void write_fixture_fonts(const fs::path& dir_a, const fs::path& dir_b,
                                const std::vector<std::uint32_t>& codepoints, int size) {
    fs::create_directories(dir_a);
    fs::create_directories(dir_b);
    for (auto cp : codepoints) {
        vgsn::save_pgm_file(dir_a / vgsn::codepoint_filename(cp), make_glyph_a(cp, size));
        vgsn::save_pgm_file(dir_b / vgsn::codepoint_filename(cp), make_glyph_b(cp, size));
    }
}

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = fs::temp_directory_path() /
                (tag + "-" + std::to_string(rd()) + "-" + std::to_string(::getpid()));
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

}  // namespace fixtures
