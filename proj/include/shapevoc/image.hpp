#pragma once
#include <string>
#include <vector>

namespace shapevoc {

// Single-channel float image, row major, values in [0, 1].
struct Image {
    int width = 0;
    int height = 0;
    std::vector<float> data;

    Image() = default;
    Image(int w, int h, float fill = 0.f) : width(w), height(h), data(static_cast<size_t>(w) * h, fill) {}

    float& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
    float at(int x, int y) const { return data[static_cast<size_t>(y) * width + x]; }
    bool inside(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
};

// Loads PGM/PPM (binary or ASCII) and PNG; color inputs are converted to
// grayscale with the usual luma weights.
Image load_image(const std::string& path);
void save_pgm(const Image& img, const std::string& path);
// 8-bit RGB buffer, used for overlays and debug renderings.
struct RgbImage {
    int width = 0, height = 0;
    std::vector<unsigned char> data;  // 3 bytes per pixel
    RgbImage() = default;
    RgbImage(int w, int h) : width(w), height(h), data(static_cast<size_t>(w) * h * 3, 255) {}
    unsigned char* px(int x, int y) { return &data[(static_cast<size_t>(y) * width + x) * 3]; }
    unsigned char& at(int x, int y, int ch) {
        return data[(static_cast<size_t>(y) * width + x) * 3 + static_cast<size_t>(ch)];
    }
};
void save_png(const Image& img, const std::string& path);
void save_png(const RgbImage& img, const std::string& path);

Image resize_bilinear(const Image& img, int new_w, int new_h);
// Separable Gaussian blur with reflected borders.
Image gaussian_blur(const Image& img, double sigma);

struct PyramidLevel {
    Image image;
    double scale_x = 1.0;  // working pixels per original pixel
    double scale_y = 1.0;
};

// Scale pyramid: optional initial upscale, then repeated blur-and-resample by
// 2^(1/scales_per_octave) until the short side falls below min_dim (or
// max_levels is reached). The blur before each resample uses
// sigma = blur_factor * step ratio.
std::vector<PyramidLevel> build_pyramid(const Image& img, int scales_per_octave, int min_dim,
                                        double blur_factor = 0.8, double upscale = 1.0,
                                        int max_levels = 0);

}  // namespace shapevoc
