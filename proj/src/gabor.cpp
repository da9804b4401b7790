#include "shapevoc/gabor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace shapevoc {

std::vector<GaborKernel> build_gabor_bank(const FeatureConfig& cfg) {
    if (cfg.lambda <= 0 || cfg.gamma <= 0 || cfg.sigma <= 0)
        throw std::invalid_argument("build_gabor_bank: lambda/gamma/sigma must be positive");
    if (cfg.num_orientations < 1)
        throw std::invalid_argument("build_gabor_bank: need at least one orientation");

    int radius = static_cast<int>(std::ceil(3.0 * cfg.sigma / std::min(1.0, cfg.gamma)));
    int side = 2 * radius + 1;
    std::vector<GaborKernel> bank(cfg.num_orientations);
    for (int i = 0; i < cfg.num_orientations; ++i) {
        double psi = i * M_PI / cfg.num_orientations;
        GaborKernel& k = bank[i];
        k.psi = psi;
        k.radius = radius;
        k.even.resize(static_cast<size_t>(side) * side);
        k.odd.resize(static_cast<size_t>(side) * side);
        double c = std::cos(psi), s = std::sin(psi);
        double even_sum = 0.0;
        for (int y = -radius; y <= radius; ++y)
            for (int x = -radius; x <= radius; ++x) {
                double u = x * c - y * s;
                double v = x * s + y * c;
                double env = std::exp(-(u * u + cfg.gamma * cfg.gamma * v * v) / (2.0 * cfg.sigma * cfg.sigma));
                double phase = 2.0 * M_PI * u / cfg.lambda;
                size_t idx = static_cast<size_t>(y + radius) * side + (x + radius);
                k.even[idx] = static_cast<float>(env * std::cos(phase));
                k.odd[idx] = static_cast<float>(env * std::cos(phase - M_PI / 2.0));
                even_sum += k.even[idx];
            }
        // remove the DC component of the even kernel (the odd one is zero-sum
        // by antisymmetry) so flat regions give exactly zero energy
        float mean = static_cast<float>(even_sum / (static_cast<double>(side) * side));
        for (auto& ev : k.even) ev -= mean;
    }
    return bank;
}

EnergyVolume orientation_energy(const Image& img, const std::vector<GaborKernel>& bank) {
    if (bank.empty()) throw std::invalid_argument("orientation_energy: empty filter bank");
    int radius = bank[0].radius;
    if (img.width < 2 * radius + 1 || img.height < 2 * radius + 1)
        throw std::invalid_argument("orientation_energy: image smaller than kernel support");

    int w = img.width, h = img.height, n = static_cast<int>(bank.size());
    // reflect-pad once so the inner convolution loop needs no bounds checks
    int pw = w + 2 * radius, ph = h + 2 * radius;
    std::vector<float> pad(static_cast<size_t>(pw) * ph);
    auto reflect = [](int i, int n_) {
        while (i < 0 || i >= n_) {
            if (i < 0) i = -i;
            if (i >= n_) i = 2 * n_ - 2 - i;
        }
        return i;
    };
    for (int y = 0; y < ph; ++y) {
        int sy = reflect(y - radius, h);
        for (int x = 0; x < pw; ++x) pad[static_cast<size_t>(y) * pw + x] = img.at(reflect(x - radius, w), sy);
    }

    EnergyVolume vol;
    vol.width = w;
    vol.height = h;
    vol.orientations = n;
    vol.e.assign(static_cast<size_t>(w) * h * n, 0.f);

    int side = 2 * radius + 1;
    float maxe = 0.f;
    for (int i = 0; i < n; ++i) {
        const GaborKernel& k = bank[i];
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                float re = 0.f, im = 0.f;
                const float* base = &pad[static_cast<size_t>(y) * pw + x];
                const float* ke = k.even.data();
                const float* ko = k.odd.data();
                for (int ky = 0; ky < side; ++ky) {
                    const float* row = base + static_cast<size_t>(ky) * pw;
                    for (int kx = 0; kx < side; ++kx) {
                        float v = row[kx];
                        re += v * ke[ky * side + kx];
                        im += v * ko[ky * side + kx];
                    }
                }
                float e = std::sqrt(re * re + im * im);
                vol.at(x, y, i) = e;
                maxe = std::max(maxe, e);
            }
        }
    }
    if (maxe > 0.f)
        for (auto& e : vol.e) e /= maxe;
    return vol;
}

void nms_step(double psi, int& dx, int& dy) {
    // quantized step along the carrier direction (the edge normal)
    dx = static_cast<int>(std::lround(std::cos(psi)));
    dy = static_cast<int>(std::lround(-std::sin(psi)));
    if (dx == 0 && dy == 0) dx = 1;
}

FeatureSet extract_features(const Image& img, const FeatureConfig& cfg) {
    std::vector<GaborKernel> bank = build_gabor_bank(cfg);
    EnergyVolume vol = orientation_energy(img, bank);
    int radius = bank[0].radius;
    int w = vol.width, h = vol.height, n = vol.orientations;

    std::vector<uint8_t> keep(static_cast<size_t>(w) * h, 0);
    for (int i = 0; i < n; ++i) {
        int dx, dy;
        nms_step(bank[i].psi, dx, dy);
        for (int y = radius; y < h - radius; ++y)
            for (int x = radius; x < w - radius; ++x) {
                float e = vol.at(x, y, i);
                if (e < cfg.energy_floor) continue;
                int xa = x + dx, ya = y + dy, xb = x - dx, yb = y - dy;
                float ea = img.inside(xa, ya) ? vol.at(xa, ya, i) : 0.f;
                float eb = img.inside(xb, yb) ? vol.at(xb, yb, i) : 0.f;
                if (e >= ea && e >= eb) keep[static_cast<size_t>(y) * w + x] = 1;
            }
    }

    FeatureSet fs;
    fs.width = w;
    fs.height = h;
    fs.num_orientations = n;
    for (int y = radius; y < h - radius; ++y)
        for (int x = radius; x < w - radius; ++x) {
            if (!keep[static_cast<size_t>(y) * w + x]) continue;
            OrientedFeature of;
            of.x = x;
            of.y = y;
            of.f.resize(n);
            int dom = 0;
            for (int i = 0; i < n; ++i) {
                of.f[i] = vol.at(x, y, i);
                if (of.f[i] > of.f[dom]) dom = i;
            }
            of.dominant = dom;
            fs.features.push_back(std::move(of));
        }
    return fs;
}

std::string feature_sets_to_bytes(const std::vector<FeatureSet>& sets) {
    std::string out;
    auto put_u32 = [&out](uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); };
    out.append("SVFC", 4);
    put_u32(1);  // version
    put_u32(static_cast<uint32_t>(sets.size()));
    for (const FeatureSet& fs : sets) {
        put_u32(static_cast<uint32_t>(fs.width));
        put_u32(static_cast<uint32_t>(fs.height));
        put_u32(static_cast<uint32_t>(fs.num_orientations));
        put_u32(static_cast<uint32_t>(fs.features.size()));
        for (const OrientedFeature& of : fs.features) {
            put_u32(static_cast<uint32_t>(of.x));
            put_u32(static_cast<uint32_t>(of.y));
            out.append(reinterpret_cast<const char*>(of.f.data()), of.f.size() * sizeof(float));
        }
    }
    return out;
}

std::vector<FeatureSet> feature_sets_from_bytes(const std::string& bytes) {
    size_t pos = 0;
    auto get = [&](void* dst, size_t len) {
        if (pos + len > bytes.size()) throw std::runtime_error("truncated feature cache entry");
        std::memcpy(dst, bytes.data() + pos, len);
        pos += len;
    };
    char magic[4];
    get(magic, 4);
    if (std::memcmp(magic, "SVFC", 4) != 0) throw std::runtime_error("not a feature cache entry");
    uint32_t version, count;
    get(&version, 4);
    if (version != 1) throw std::runtime_error("unsupported feature cache version");
    get(&count, 4);
    std::vector<FeatureSet> sets(count);
    for (FeatureSet& fs : sets) {
        uint32_t w, h, n, m;
        get(&w, 4);
        get(&h, 4);
        get(&n, 4);
        get(&m, 4);
        fs.width = static_cast<int>(w);
        fs.height = static_cast<int>(h);
        fs.num_orientations = static_cast<int>(n);
        fs.features.resize(m);
        for (OrientedFeature& of : fs.features) {
            uint32_t x, y;
            get(&x, 4);
            get(&y, 4);
            of.x = static_cast<int>(x);
            of.y = static_cast<int>(y);
            of.f.resize(n);
            get(of.f.data(), n * sizeof(float));
            of.dominant = static_cast<int>(std::max_element(of.f.begin(), of.f.end()) - of.f.begin());
        }
    }
    return sets;
}

}  // namespace shapevoc
