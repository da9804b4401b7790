#include "shapevoc/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>

namespace shapevoc {

namespace {

constexpr double kBackground = 0.86;
constexpr double kInk = 0.12;

double point_segment_dist(double px, double py, double ax, double ay, double bx, double by) {
    double dx = bx - ax, dy = by - ay;
    double len2 = dx * dx + dy * dy;
    double t = len2 <= 0.0 ? 0.0 : ((px - ax) * dx + (py - ay) * dy) / len2;
    t = std::clamp(t, 0.0, 1.0);
    double qx = ax + t * dx, qy = ay + t * dy;
    return std::hypot(px - qx, py - qy);
}

}  // namespace

void draw_polyline(Image& img, const std::vector<std::pair<double, double>>& pts,
                   double thickness, double dark) {
    if (pts.size() < 2 || thickness <= 0.0) return;
    double half = 0.5 * thickness;
    for (size_t s = 0; s + 1 < pts.size(); ++s) {
        auto [ax, ay] = pts[s];
        auto [bx, by] = pts[s + 1];
        int x0 = std::max(0, static_cast<int>(std::floor(std::min(ax, bx) - half - 1.0)));
        int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(std::max(ax, bx) + half + 1.0)));
        int y0 = std::max(0, static_cast<int>(std::floor(std::min(ay, by) - half - 1.0)));
        int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(std::max(ay, by) + half + 1.0)));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                double d = point_segment_dist(x, y, ax, ay, bx, by);
                // one-pixel soft edge around the stroke core
                double a = std::clamp(half + 0.5 - d, 0.0, 1.0);
                if (a <= 0.0) continue;
                float& px = img.at(x, y);
                px = static_cast<float>(px + a * (dark - px));
            }
    }
}

namespace {

std::vector<std::pair<double, double>> arc_points(double cx, double cy, double r, double a0,
                                                  double a1, int steps = 24) {
    std::vector<std::pair<double, double>> pts;
    for (int i = 0; i <= steps; ++i) {
        double a = a0 + (a1 - a0) * i / steps;
        pts.emplace_back(cx + r * std::cos(a), cy + r * std::sin(a));
    }
    return pts;
}

// Canonical object outlines in a unit frame, returned as stroke polylines.
// Each shape fits roughly in [-0.5, 0.5]^2 before scaling.
std::vector<std::vector<std::pair<double, double>>> shape_strokes(const std::string& label,
                                                                  Rng& rng) {
    auto jitter = [&](double a) { return a + rng.uniform(-0.02, 0.02); };
    std::vector<std::vector<std::pair<double, double>>> strokes;
    if (label == "mug") {
        double w = 0.36, h = 0.5;  // half body extents
        std::vector<std::pair<double, double>> body = {
            {jitter(-w), jitter(-h)}, {jitter(w * 0.8), jitter(-h)}, {jitter(w * 0.8), jitter(h)},
            {jitter(-w), jitter(h)},  {jitter(-w), jitter(-h)},
        };
        strokes.push_back(body);
        strokes.push_back(arc_points(w * 0.8, jitter(0.0), 0.28, -0.45 * M_PI, 0.45 * M_PI));
    } else if (label == "bracket") {
        strokes.push_back({{jitter(-0.32), jitter(-0.5)},
                           {jitter(-0.32), jitter(0.48)},
                           {jitter(0.5), jitter(0.48)}});
        // short inner return lip to give the arms some structure
        strokes.push_back({{jitter(-0.14), jitter(-0.5)},
                           {jitter(-0.14), jitter(0.3)},
                           {jitter(0.5), jitter(0.3)}});
    } else if (label == "ring") {
        std::vector<std::pair<double, double>> poly;
        int sides = 8;
        double phase = rng.uniform(-0.08, 0.08);
        for (int i = 0; i <= sides; ++i) {
            double a = phase + 2.0 * M_PI * i / sides;
            double r = 0.5 + rng.uniform(-0.015, 0.015);
            poly.emplace_back(r * std::cos(a), r * std::sin(a));
        }
        strokes.push_back(poly);
    } else {
        throw std::invalid_argument("synth_object: unknown label '" + label + "'");
    }
    return strokes;
}

struct Placed {
    std::vector<std::vector<std::pair<double, double>>> strokes;
    BoxI box;
};

Placed place_shape(const std::string& label, double cx, double cy, double diag, Rng& rng) {
    auto strokes = shape_strokes(label, rng);
    double rot = rng.uniform(-0.1, 0.1);
    double sx = 1.0 + rng.uniform(-0.06, 0.06);
    double sy = 1.0 + rng.uniform(-0.06, 0.06);
    double cr = std::cos(rot), sr = std::sin(rot);

    // unit-frame extents after the affine map, to convert diag to scale
    double ux0 = 1e9, uy0 = 1e9, ux1 = -1e9, uy1 = -1e9;
    for (auto& stroke : strokes)
        for (auto& [x, y] : stroke) {
            double xx = sx * x, yy = sy * y;
            double rx = cr * xx - sr * yy, ry = sr * xx + cr * yy;
            x = rx;
            y = ry;
            ux0 = std::min(ux0, rx);
            uy0 = std::min(uy0, ry);
            ux1 = std::max(ux1, rx);
            uy1 = std::max(uy1, ry);
        }
    double udiag = std::hypot(ux1 - ux0, uy1 - uy0);
    double scale = diag / udiag;

    Placed out;
    double bx0 = 1e9, by0 = 1e9, bx1 = -1e9, by1 = -1e9;
    for (auto& stroke : strokes) {
        for (auto& [x, y] : stroke) {
            x = cx + scale * x;
            y = cy + scale * y;
            bx0 = std::min(bx0, x);
            by0 = std::min(by0, y);
            bx1 = std::max(bx1, x);
            by1 = std::max(by1, y);
        }
        out.strokes.push_back(stroke);
    }
    out.box = BoxI{bx0 - 2.0, by0 - 2.0, bx1 + 2.0, by1 + 2.0};
    return out;
}

void add_clutter(Image& img, int strokes, const BoxI* avoid, double clearance, Rng& rng) {
    int tries = 0;
    int placed = 0;
    while (placed < strokes && tries < strokes * 40) {
        ++tries;
        double x0 = rng.uniform(4.0, img.width - 4.0);
        double y0 = rng.uniform(4.0, img.height - 4.0);
        double len = rng.uniform(12.0, 40.0);
        double ang = rng.uniform(0.0, 2.0 * M_PI);
        std::vector<std::pair<double, double>> pts;
        if (rng.uniform() < 0.6) {
            int segs = 1 + rng.uniform_int(2);
            pts.emplace_back(x0, y0);
            double a = ang;
            for (int s = 0; s < segs; ++s) {
                double l = len / segs;
                x0 += l * std::cos(a);
                y0 += l * std::sin(a);
                pts.emplace_back(x0, y0);
                a += rng.uniform(-0.9, 0.9);
            }
        } else {
            double r = rng.uniform(8.0, 22.0);
            pts = arc_points(x0, y0, r, ang, ang + rng.uniform(1.0, 2.5));
        }
        if (avoid) {
            bool hit = false;
            for (const auto& [px, py] : pts)
                if (px > avoid->x0 - clearance && px < avoid->x1 + clearance &&
                    py > avoid->y0 - clearance && py < avoid->y1 + clearance) {
                    hit = true;
                    break;
                }
            if (hit) continue;
        }
        draw_polyline(img, pts, 2.0, kInk);
        ++placed;
    }
}

}  // namespace

Image synth_natural(int w, int h, int strokes, Rng& rng) {
    Image img(w, h);
    std::fill(img.data.begin(), img.data.end(), static_cast<float>(kBackground));
    add_clutter(img, strokes, nullptr, 0.0, rng);
    return img;
}

SynthObject synth_object(const std::string& label, int w, int h, double diag, int clutter,
                         Rng& rng) {
    Image img(w, h);
    std::fill(img.data.begin(), img.data.end(), static_cast<float>(kBackground));

    // keep the whole box inside the canvas
    double margin = 0.5 * diag + 8.0;
    double lox = std::min(margin, w * 0.5), hix = std::max(w - margin, w * 0.5);
    double loy = std::min(margin, h * 0.5), hiy = std::max(h - margin, h * 0.5);
    double cx = lox >= hix ? w * 0.5 : rng.uniform(lox, hix);
    double cy = loy >= hiy ? h * 0.5 : rng.uniform(loy, hiy);

    Placed p = place_shape(label, cx, cy, diag, rng);
    for (const auto& stroke : p.strokes) draw_polyline(img, stroke, 2.4, kInk);
    add_clutter(img, clutter, &p.box, 12.0, rng);

    SynthObject out;
    out.img = std::move(img);
    out.box = p.box;
    out.box.x0 = std::max(0.0, out.box.x0);
    out.box.y0 = std::max(0.0, out.box.y0);
    out.box.x1 = std::min(static_cast<double>(w), out.box.x1);
    out.box.y1 = std::min(static_cast<double>(h), out.box.y1);
    return out;
}

void write_synth_corpus(const std::string& dir, const SynthCorpusSpec& spec) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "natural");
    for (const std::string& label : spec.labels)
        fs::create_directories(fs::path(dir) / "classes" / label);

    char name[64];

    std::vector<ManifestRecord> natural;
    Rng nrng(fork_seed(spec.seed, "synth-natural"));
    for (int i = 0; i < spec.natural_images; ++i) {
        Image img = synth_natural(spec.natural_size, spec.natural_size, 4 + nrng.uniform_int(5),
                                  nrng);
        std::snprintf(name, sizeof(name), "natural/nat_%04d.pgm", i);
        save_pgm(img, (fs::path(dir) / name).string());
        ManifestRecord rec;
        rec.path = name;
        natural.push_back(rec);
    }
    save_manifest(natural, (fs::path(dir) / "natural.jsonl").string());

    std::vector<ManifestRecord> train, test;
    for (const std::string& label : spec.labels) {
        Rng rng(fork_seed(spec.seed, "synth-" + label));
        int val_from = spec.train_per_class -
                       static_cast<int>(std::lround(spec.val_fraction * spec.train_per_class));
        for (int i = 0; i < spec.train_per_class; ++i) {
            double diag = rng.uniform(spec.train_diag_min, spec.train_diag_max);
            SynthObject o =
                synth_object(label, spec.train_size, spec.train_size, diag, 2 + rng.uniform_int(2),
                             rng);
            std::snprintf(name, sizeof(name), "classes/%s/train_%04d.pgm", label.c_str(), i);
            save_pgm(o.img, (fs::path(dir) / name).string());
            ManifestRecord rec;
            rec.path = name;
            rec.klass = label;
            rec.split = i < val_from ? "train" : "val";
            rec.boxes = {o.box};
            train.push_back(rec);
        }
        for (int i = 0; i < spec.test_per_class; ++i) {
            double diag = rng.uniform(spec.test_diag_min, spec.test_diag_max);
            SynthObject o =
                synth_object(label, spec.test_size, spec.test_size, diag, 3 + rng.uniform_int(3),
                             rng);
            std::snprintf(name, sizeof(name), "classes/%s/test_%04d.pgm", label.c_str(), i);
            save_pgm(o.img, (fs::path(dir) / name).string());
            ManifestRecord rec;
            rec.path = name;
            rec.klass = label;
            rec.split = "test";
            rec.boxes = {o.box};
            test.push_back(rec);
        }
    }
    save_manifest(train, (fs::path(dir) / "train.jsonl").string());
    save_manifest(test, (fs::path(dir) / "test.jsonl").string());
}

}  // namespace shapevoc
