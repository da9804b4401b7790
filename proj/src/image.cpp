#include "shapevoc/image.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace shapevoc {

namespace {

int read_pnm_token(std::istream& in) {
    // skips whitespace and '#' comments
    while (true) {
        int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            break;
        }
    }
    int v;
    if (!(in >> v)) throw std::runtime_error("truncated PNM header");
    return v;
}

Image load_pnm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open image: " + path);
    char magic[2];
    in.read(magic, 2);
    if (!in || magic[0] != 'P') throw std::runtime_error("not a PNM file: " + path);
    int kind = magic[1] - '0';
    if (kind != 2 && kind != 3 && kind != 5 && kind != 6)
        throw std::runtime_error("unsupported PNM variant in " + path);
    int w = read_pnm_token(in);
    int h = read_pnm_token(in);
    int maxv = read_pnm_token(in);
    if (w <= 0 || h <= 0 || maxv <= 0 || maxv > 65535)
        throw std::runtime_error("bad PNM header in " + path);
    int channels = (kind == 3 || kind == 6) ? 3 : 1;
    size_t count = static_cast<size_t>(w) * h * channels;
    std::vector<double> raw(count);
    if (kind == 2 || kind == 3) {
        for (size_t i = 0; i < count; ++i) raw[i] = read_pnm_token(in);
    } else {
        in.get();  // single whitespace after maxval
        if (maxv < 256) {
            std::vector<unsigned char> buf(count);
            in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count));
            if (!in) throw std::runtime_error("truncated PNM data in " + path);
            for (size_t i = 0; i < count; ++i) raw[i] = buf[i];
        } else {
            std::vector<unsigned char> buf(count * 2);
            in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
            if (!in) throw std::runtime_error("truncated PNM data in " + path);
            for (size_t i = 0; i < count; ++i) raw[i] = buf[2 * i] * 256 + buf[2 * i + 1];
        }
    }
    Image img(w, h);
    for (size_t i = 0; i < static_cast<size_t>(w) * h; ++i) {
        double v = channels == 1 ? raw[i]
                                 : 0.299 * raw[3 * i] + 0.587 * raw[3 * i + 1] + 0.114 * raw[3 * i + 2];
        img.data[i] = static_cast<float>(v / maxv);
    }
    return img;
}

Image load_png_file(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw std::runtime_error("cannot open image: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("corrupt PNG: " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
    int w = static_cast<int>(png_get_image_width(png, info));
    int h = static_cast<int>(png_get_image_height(png, info));
    int channels = png_get_channels(png, info);
    std::vector<unsigned char> row(static_cast<size_t>(w) * channels);
    Image img(w, h);
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < w; ++x) {
            double v;
            if (channels >= 3)
                v = 0.299 * row[x * channels] + 0.587 * row[x * channels + 1] + 0.114 * row[x * channels + 2];
            else
                v = row[x * channels];
            img.at(x, y) = static_cast<float>(v / 255.0);
        }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

void write_png_impl(int w, int h, int channels, const unsigned char* bytes, const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw std::runtime_error("cannot write image: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw std::runtime_error("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw std::runtime_error("PNG write failed: " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < h; ++y)
        png_write_row(png, const_cast<png_bytep>(bytes + static_cast<size_t>(y) * w * channels));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

}  // namespace

Image load_image(const std::string& path) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw std::runtime_error("cannot open image: " + path);
    unsigned char sig[2] = {0, 0};
    probe.read(reinterpret_cast<char*>(sig), 2);
    probe.close();
    if (sig[0] == 'P') return load_pnm(path);
    if (sig[0] == 0x89 && sig[1] == 'P') return load_png_file(path);
    throw std::runtime_error("unrecognized image format: " + path);
}

void save_pgm(const Image& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write image: " + path);
    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> row(img.width);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            float v = std::clamp(img.at(x, y), 0.f, 1.f);
            row[x] = static_cast<unsigned char>(std::lround(v * 255.f));
        }
        out.write(reinterpret_cast<char*>(row.data()), img.width);
    }
}

void save_png(const Image& img, const std::string& path) {
    std::vector<unsigned char> bytes(static_cast<size_t>(img.width) * img.height);
    for (size_t i = 0; i < bytes.size(); ++i)
        bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(img.data[i], 0.f, 1.f) * 255.f));
    write_png_impl(img.width, img.height, 1, bytes.data(), path);
}

void save_png(const RgbImage& img, const std::string& path) {
    write_png_impl(img.width, img.height, 3, img.data.data(), path);
}

Image resize_bilinear(const Image& img, int new_w, int new_h) {
    if (new_w <= 0 || new_h <= 0) throw std::invalid_argument("resize_bilinear: bad target size");
    if (new_w == img.width && new_h == img.height) return img;
    Image out(new_w, new_h);
    double sx = static_cast<double>(img.width) / new_w;
    double sy = static_cast<double>(img.height) / new_h;
    for (int y = 0; y < new_h; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        double wy = fy - y0;
        int ya = std::clamp(y0, 0, img.height - 1);
        int yb = std::clamp(y0 + 1, 0, img.height - 1);
        for (int x = 0; x < new_w; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            double wx = fx - x0;
            int xa = std::clamp(x0, 0, img.width - 1);
            int xb = std::clamp(x0 + 1, 0, img.width - 1);
            double v = (1 - wy) * ((1 - wx) * img.at(xa, ya) + wx * img.at(xb, ya)) +
                       wy * ((1 - wx) * img.at(xa, yb) + wx * img.at(xb, yb));
            out.at(x, y) = static_cast<float>(v);
        }
    }
    return out;
}

Image gaussian_blur(const Image& img, double sigma) {
    if (sigma <= 0.0) return img;
    int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<float> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        double v = std::exp(-0.5 * i * i / (sigma * sigma));
        k[i + radius] = static_cast<float>(v);
        sum += v;
    }
    for (auto& v : k) v = static_cast<float>(v / sum);

    auto reflect = [](int i, int n) {
        // reflect-101 style borders: -1 -> 1, n -> n-2
        while (i < 0 || i >= n) {
            if (i < 0) i = -i;
            if (i >= n) i = 2 * n - 2 - i;
        }
        return i;
    };

    Image tmp(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            float acc = 0.f;
            for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * img.at(reflect(x + i, img.width), y);
            tmp.at(x, y) = acc;
        }
    Image out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            float acc = 0.f;
            for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp.at(x, reflect(y + i, img.height));
            out.at(x, y) = acc;
        }
    return out;
}

std::vector<PyramidLevel> build_pyramid(const Image& img, int scales_per_octave, int min_dim,
                                        double blur_factor, double upscale, int max_levels) {
    if (scales_per_octave < 1) throw std::invalid_argument("build_pyramid: scales_per_octave must be >= 1");
    if (img.width <= 0 || img.height <= 0) throw std::invalid_argument("build_pyramid: empty image");
    double ratio = std::pow(2.0, 1.0 / scales_per_octave);
    int w0 = std::max(1, static_cast<int>(std::lround(img.width * upscale)));
    int h0 = std::max(1, static_cast<int>(std::lround(img.height * upscale)));

    std::vector<PyramidLevel> levels;
    Image cur = (w0 == img.width && h0 == img.height) ? img : resize_bilinear(img, w0, h0);
    levels.push_back({cur, static_cast<double>(cur.width) / img.width,
                      static_cast<double>(cur.height) / img.height});
    for (int k = 1; max_levels <= 0 || static_cast<int>(levels.size()) < max_levels; ++k) {
        double f = std::pow(2.0, -static_cast<double>(k) / scales_per_octave);
        int w = std::max(1, static_cast<int>(std::lround(w0 * f)));
        int h = std::max(1, static_cast<int>(std::lround(h0 * f)));
        if (std::min(w, h) < min_dim) break;
        cur = resize_bilinear(gaussian_blur(cur, blur_factor * ratio), w, h);
        levels.push_back({cur, static_cast<double>(cur.width) / img.width,
                          static_cast<double>(cur.height) / img.height});
    }
    return levels;
}

}  // namespace shapevoc
