#include "shapevoc/render.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

namespace shapevoc {

namespace {

struct Stamp {
    double x, y;  // layer-1 pixel position
    int model;    // layer-1 model id
};

// Depth-first expansion of a composition's mean configuration. Positions are
// kept in layer-1 pixel units; a layer-l state at p places its parts at
// p + mu / rho_cum(l-1).
void expand_mean(const Vocabulary& v, int layer, int comp_id, double px, double py,
                 std::vector<Stamp>& out, int depth) {
    if (depth > v.object_layer + 2) throw std::runtime_error("render: expansion too deep");
    if (layer == 1) {
        out.push_back({px, py, comp_id});
        return;
    }
    const Composition& c = v.comp(layer, comp_id);
    double rc = v.rho_cum(layer - 1);
    for (const Part& part : c.parts) {
        if (part.polarity != Polarity::normal) continue;
        double cx = px + part.mu.x() / rc;
        double cy = py + part.mu.y() / rc;
        int or_id = part.appearance.begin()->first;  // strongest entry below
        double best_w = part.appearance.begin()->second;
        for (const auto& [o, w] : part.appearance)
            if (w > best_w) {
                best_w = w;
                or_id = o;
            }
        if (layer - 1 >= 1 && layer - 1 < static_cast<int>(v.or_layers.size())) {
            const auto& nodes = v.or_layers[static_cast<size_t>(layer - 1)];
            if (or_id < 0 || or_id >= static_cast<int>(nodes.size()))
                throw std::runtime_error("render: appearance references missing OR node");
            const OrNode& node = nodes[static_cast<size_t>(or_id)];
            if (node.members.empty()) continue;
            expand_mean(v, layer - 1, node.members.front(), cx, cy, out, depth + 1);
        }
    }
}

void draw_segment(Image& img, double x0, double y0, double x1, double y1, double value) {
    int steps = static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0))) * 2) + 1;
    for (int i = 0; i <= steps; ++i) {
        double t = static_cast<double>(i) / steps;
        int x = static_cast<int>(std::lround(x0 + t * (x1 - x0)));
        int y = static_cast<int>(std::lround(y0 + t * (y1 - y0)));
        if (x >= 0 && y >= 0 && x < img.width && y < img.height)
            img.at(x, y) = static_cast<float>(value);
    }
}

const int kPalette[][3] = {
    {220, 60, 50}, {50, 120, 220}, {40, 170, 80}, {230, 160, 30}, {150, 60, 200}, {30, 180, 180},
};
constexpr int kPaletteSize = 6;

void draw_box(RgbImage& img, const BoxI& b, const int rgb[3]) {
    int x0 = std::clamp(static_cast<int>(std::lround(b.x0)), 0, img.width - 1);
    int x1 = std::clamp(static_cast<int>(std::lround(b.x1)), 0, img.width - 1);
    int y0 = std::clamp(static_cast<int>(std::lround(b.y0)), 0, img.height - 1);
    int y1 = std::clamp(static_cast<int>(std::lround(b.y1)), 0, img.height - 1);
    for (int x = x0; x <= x1; ++x)
        for (int y : {y0, y1})
            for (int ch = 0; ch < 3; ++ch)
                img.at(x, y, ch) = static_cast<uint8_t>(rgb[ch]);
    for (int y = y0; y <= y1; ++y)
        for (int x : {x0, x1})
            for (int ch = 0; ch < 3; ++ch)
                img.at(x, y, ch) = static_cast<uint8_t>(rgb[ch]);
}

}  // namespace

Image render_composition(const Vocabulary& v, int layer, int comp_id, int canvas) {
    if (layer < 1) throw std::invalid_argument("render_composition: bad layer");
    std::vector<Stamp> stamps;
    expand_mean(v, layer, comp_id, 0.0, 0.0, stamps, 0);
    if (stamps.empty()) throw std::runtime_error("render_composition: empty expansion");

    double seg = 0.5 * v.features.lambda;
    double x0 = 1e9, y0 = 1e9, x1 = -1e9, y1 = -1e9;
    for (const Stamp& s : stamps) {
        x0 = std::min(x0, s.x - seg);
        y0 = std::min(y0, s.y - seg);
        x1 = std::max(x1, s.x + seg);
        y1 = std::max(y1, s.y + seg);
    }
    int margin = 4;
    int w = canvas > 0 ? canvas : static_cast<int>(std::ceil(x1 - x0)) + 2 * margin;
    int h = canvas > 0 ? canvas : static_cast<int>(std::ceil(y1 - y0)) + 2 * margin;
    w = std::max(w, 8);
    h = std::max(h, 8);
    double ox = canvas > 0 ? 0.5 * w - 0.5 * (x0 + x1) : margin - x0;
    double oy = canvas > 0 ? 0.5 * h - 0.5 * (y0 + y1) : margin - y0;

    Image img(w, h);
    std::fill(img.data.begin(), img.data.end(), 1.0f);
    int n = std::max(1, static_cast<int>(v.layer1.size()));
    for (const Stamp& s : stamps) {
        double psi = M_PI * s.model / n;
        double dx = seg * std::cos(psi), dy = -seg * std::sin(psi);
        draw_segment(img, s.x + ox - dx, s.y + oy - dy, s.x + ox + dx, s.y + oy + dy, 0.0);
    }
    return img;
}

RgbImage render_detections(const Image& img, const std::vector<Detection>& dets) {
    RgbImage out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            auto g = static_cast<uint8_t>(std::clamp(img.at(x, y), 0.0f, 1.0f) * 255.0f);
            for (int ch = 0; ch < 3; ++ch) out.at(x, y, ch) = g;
        }

    std::set<std::string> labels;
    for (const Detection& d : dets) labels.insert(d.klass);
    std::map<std::string, int> color;
    int idx = 0;
    for (const std::string& l : labels) color[l] = idx++ % kPaletteSize;

    for (const Detection& d : dets) draw_box(out, d.box, kPalette[color[d.klass]]);
    return out;
}

std::string sharing_graph_dot(const Vocabulary& v) {
    // Reachable OR ids per class and layer, walking appearance entries down.
    std::map<std::string, std::map<int, std::set<int>>> used;
    for (const auto& [label, members] : v.classes) {
        std::set<int> comps(members.begin(), members.end());
        for (int l = v.object_layer; l >= 2; --l) {
            std::set<int> next;
            for (int cid : comps) {
                const Composition& c = v.comp(l, cid);
                for (const Part& p : c.parts)
                    for (const auto& [or_id, w] : p.appearance) {
                        if (w <= 0.0) continue;
                        used[label][l - 1].insert(or_id);
                        const auto& nodes = v.or_layers[static_cast<size_t>(l - 1)];
                        if (or_id >= 0 && or_id < static_cast<int>(nodes.size()))
                            for (int m : nodes[static_cast<size_t>(or_id)].members) next.insert(m);
                    }
            }
            comps = std::move(next);
        }
    }

    std::ostringstream os;
    os << "digraph sharing {\n  rankdir=BT;\n  node [shape=box, fontsize=10];\n";
    for (const auto& [label, layers] : used)
        os << "  \"class:" << label << "\" [shape=ellipse, style=bold];\n";
    std::set<std::pair<int, int>> emitted;
    for (const auto& [label, layers] : used)
        for (const auto& [l, ids] : layers)
            for (int id : ids)
                if (emitted.insert({l, id}).second)
                    os << "  \"or:" << l << ":" << id << "\" [label=\"L" << l << " #" << id
                       << "\"];\n";
    for (const auto& [label, layers] : used) {
        auto it = layers.find(v.object_layer - 1);
        if (it == layers.end()) continue;
        for (int id : it->second)
            os << "  \"or:" << v.object_layer - 1 << ":" << id << "\" -> \"class:" << label
               << "\";\n";
    }
    // node-to-node edges between consecutive OR layers, via member parts
    for (int l = 2; l < static_cast<int>(v.or_layers.size()); ++l) {
        std::set<std::pair<int, int>> edges;
        for (const OrNode& node : v.or_layers[static_cast<size_t>(l)])
            for (int cid : node.members) {
                const Composition& c = v.comp(l, cid);
                for (const Part& p : c.parts)
                    for (const auto& [or_id, w] : p.appearance)
                        if (w > 0.0) edges.insert({or_id, node.id});
            }
        for (const auto& [below, above] : edges)
            if (emitted.count({l - 1, below}) && emitted.count({l, above}))
                os << "  \"or:" << l - 1 << ":" << below << "\" -> \"or:" << l << ":" << above
                   << "\";\n";
    }
    os << "}\n";
    return os.str();
}

RgbImage render_curves(const EvalReport& r, int width, int height) {
    RgbImage img(width, height);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = 255;

    int ml = 48, mr = 16, mt = 16, mb = 36;  // plot margins
    int pw = width - ml - mr, ph = height - mt - mb;
    double fmax = r.fppi_point;
    for (const auto& [label, c] : r.per_class)
        for (double f : c.fppi) fmax = std::max(fmax, f);
    if (fmax <= 0.0) fmax = 1.0;

    auto px = [&](double f) { return ml + static_cast<int>(std::lround(f / fmax * pw)); };
    auto py = [&](double rec) { return mt + static_cast<int>(std::lround((1.0 - rec) * ph)); };

    const int axis[3] = {40, 40, 40};
    for (int x = ml; x <= ml + pw; ++x)
        for (int ch = 0; ch < 3; ++ch) img.at(x, py(0.0), ch) = static_cast<uint8_t>(axis[ch]);
    for (int y = mt; y <= mt + ph; ++y)
        for (int ch = 0; ch < 3; ++ch) img.at(px(0.0), y, ch) = static_cast<uint8_t>(axis[ch]);
    // operating-point marker
    const int mark[3] = {170, 170, 170};
    for (int y = mt; y <= mt + ph; y += 3)
        for (int ch = 0; ch < 3; ++ch)
            img.at(px(r.fppi_point), y, ch) = static_cast<uint8_t>(mark[ch]);

    int idx = 0;
    for (const auto& [label, c] : r.per_class) {
        const int* rgb = kPalette[idx++ % kPaletteSize];
        double fx = 0.0, fy = 0.0;
        for (size_t k = 0; k < c.fppi.size(); ++k) {
            double nx = c.fppi[k], ny = c.recall[k];
            int x0 = px(fx), y0 = py(fy), x1 = px(nx), y1 = py(ny);
            int steps = std::max(std::abs(x1 - x0), std::abs(y1 - y0)) + 1;
            for (int s = 0; s <= steps; ++s) {
                double t = static_cast<double>(s) / steps;
                int x = static_cast<int>(std::lround(x0 + t * (x1 - x0)));
                int y = static_cast<int>(std::lround(y0 + t * (y1 - y0)));
                if (x >= 0 && x < width && y >= 0 && y < height)
                    for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = static_cast<uint8_t>(rgb[ch]);
            }
            fx = nx;
            fy = ny;
        }
    }
    return img;
}

}  // namespace shapevoc
