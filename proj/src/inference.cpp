#include "shapevoc/inference.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "shapevoc/geometry.hpp"

namespace shapevoc {

namespace {

// Dense (or_id, cell) -> pooled-state index lookup for one layer.
struct OrGrid {
    int w = 0, h = 0, nodes = 0;
    std::vector<int32_t> idx;

    OrGrid(const LayerStates& ls, int num_nodes) : w(ls.grid_w), h(ls.grid_h), nodes(num_nodes) {
        idx.assign(static_cast<size_t>(w) * h * std::max(1, nodes), -1);
        for (size_t i = 0; i < ls.pooled.size(); ++i) {
            const OrState& s = ls.pooled[i];
            idx[(static_cast<size_t>(s.or_id) * h + s.y) * w + s.x] = static_cast<int32_t>(i);
        }
    }
    int32_t at(int or_id, int x, int y) const {
        if (x < 0 || x >= w || y < 0 || y >= h || or_id < 0 || or_id >= nodes) return -1;
        return idx[(static_cast<size_t>(or_id) * h + y) * w + x];
    }
};

struct PartCtx {
    Eigen::Matrix2d sigma_inv;
    int hx = 0, hy = 0;  // scan box half extents around anchor + mu
};

double score_composition_impl(const Composition& comp, int ax, int ay, const LayerStates& below,
                              const OrGrid& grid, const std::vector<PartCtx>& ctx, double r2,
                              double alpha, std::vector<int32_t>* children) {
    double total = 1.0;
    if (children) children->assign(comp.parts.size(), -1);
    for (size_t pi = 0; pi < comp.parts.size(); ++pi) {
        const Part& p = comp.parts[pi];
        const PartCtx& pc = ctx[pi];
        double cx = ax + p.mu.x(), cy = ay + p.mu.y();
        int x_lo = std::max(0, static_cast<int>(std::floor(cx)) - pc.hx);
        int x_hi = std::min(grid.w - 1, static_cast<int>(std::ceil(cx)) + pc.hx);
        int y_lo = std::max(0, static_cast<int>(std::floor(cy)) - pc.hy);
        int y_hi = std::min(grid.h - 1, static_cast<int>(std::ceil(cy)) + pc.hy);

        if (p.polarity == Polarity::normal) {
            double best = 0.0;
            int32_t best_idx = -1;
            for (auto [or_id, w] : p.appearance) {
                for (int y = y_lo; y <= y_hi; ++y)
                    for (int x = x_lo; x <= x_hi; ++x) {
                        int32_t si = grid.at(or_id, x, y);
                        if (si < 0) continue;
                        Eigen::Vector2d d(x - ax - p.mu.x(), y - ay - p.mu.y());
                        double m2 = mahalanobis2(d, pc.sigma_inv);
                        if (m2 > r2) continue;
                        double val = below.pooled[static_cast<size_t>(si)].score * std::exp(-0.5 * m2) * w;
                        if (val > best) {
                            best = val;
                            best_idx = si;
                        }
                    }
            }
            if (!(best > 0.0)) return 0.0;
            total *= best;
            if (children) (*children)[pi] = best_idx;
        } else {
            // Repulsive part: constant deformation alpha, the hat-score 1-score
            // maximized over present candidates; an absent part contributes 1.
            double best = 0.0;
            bool any = false;
            double max_w = 0.0;
            for (auto [or_id, w] : p.appearance) {
                max_w = std::max(max_w, w);
                for (int y = y_lo; y <= y_hi; ++y)
                    for (int x = x_lo; x <= x_hi; ++x) {
                        int32_t si = grid.at(or_id, x, y);
                        if (si < 0) continue;
                        Eigen::Vector2d d(x - ax - p.mu.x(), y - ay - p.mu.y());
                        if (mahalanobis2(d, pc.sigma_inv) > r2) continue;
                        any = true;
                        best = std::max(best, w * (1.0 - below.pooled[static_cast<size_t>(si)].score));
                    }
            }
            total *= alpha * (any ? best : max_w);
        }
    }
    return total;
}

std::vector<PartCtx> make_part_ctx(const Composition& comp, double r2, int cap) {
    std::vector<PartCtx> ctx(comp.parts.size());
    for (size_t pi = 0; pi < comp.parts.size(); ++pi) {
        const Part& p = comp.parts[pi];
        double det = p.sigma.determinant();
        if (!(det > 0.0)) throw std::invalid_argument("score_composition: singular part covariance");
        ctx[pi].sigma_inv = p.sigma.inverse();
        Eigen::Vector2i box = mahalanobis_box(p.sigma, r2, cap);
        ctx[pi].hx = box.x();
        ctx[pi].hy = box.y();
    }
    return ctx;
}

void sort_canonical(std::vector<CompState>& v) {
    std::sort(v.begin(), v.end(), [](const CompState& a, const CompState& b) {
        if (a.comp != b.comp) return a.comp < b.comp;
        if (a.y != b.y) return a.y < b.y;
        return a.x < b.x;
    });
}

}  // namespace

double support_overlap(const std::vector<int64_t>& a, const std::vector<int64_t>& b) {
    size_t i = 0, j = 0, inter = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] == b[j]) {
            ++inter;
            ++i;
            ++j;
        } else if (a[i] < b[j]) {
            ++i;
        } else {
            ++j;
        }
    }
    size_t uni = a.size() + b.size() - inter;
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<int64_t> support_union(const std::vector<int64_t>& a, const std::vector<int64_t>& b) {
    std::vector<int64_t> out;
    out.reserve(a.size() + b.size());
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

LayerStates match_layer1(const FeatureSet& fs, const Vocabulary& v, double tau) {
    for (const Layer1Model& m : v.layer1)
        if (!m.estimated)
            throw std::runtime_error("match_layer1: layer-1 parameters are unestimated placeholders");
    if (fs.num_orientations != v.features.num_orientations && !fs.features.empty())
        throw std::invalid_argument("match_layer1: orientation count mismatch");

    int n = v.features.num_orientations;
    std::vector<Eigen::MatrixXd> sigma_inv(v.layer1.size());
    for (size_t i = 0; i < v.layer1.size(); ++i) sigma_inv[i] = v.layer1[i].sigma.inverse();

    LayerStates ls;
    ls.grid_w = fs.width;
    ls.grid_h = fs.height;
    Eigen::VectorXd fhat(n);
    for (size_t mi = 0; mi < v.layer1.size(); ++mi) {
        const Layer1Model& m = v.layer1[mi];
        for (const OrientedFeature& of : fs.features) {
            float dom = of.f[static_cast<size_t>(of.dominant)];
            if (!(dom > 0.f)) continue;
            for (int k = 0; k < n; ++k) fhat[k] = of.f[static_cast<size_t>(k)] / dom;
            Eigen::VectorXd d = fhat - m.mu;
            double score = std::exp(-0.5 * d.dot(sigma_inv[mi] * d));
            if (score > 0.0 && score >= tau) {
                CompState st;
                st.comp = m.id;
                st.x = of.x;
                st.y = of.y;
                st.score = score;
                st.support = {pack_loc(of.x, of.y)};
                ls.comps.push_back(std::move(st));
            }
        }
    }
    sort_canonical(ls.comps);
    return ls;
}

double score_composition(const Composition& comp, int ax, int ay, const LayerStates& below,
                         const Vocabulary& v, double tau, std::vector<int32_t>* children) {
    int nodes = 0;
    for (const OrState& s : below.pooled) nodes = std::max(nodes, s.or_id + 1);
    for (const Part& p : comp.parts)
        for (auto [or_id, w] : p.appearance) nodes = std::max(nodes, or_id + 1);
    OrGrid grid(below, nodes);
    double r2 = mahalanobis_radius2(tau);
    auto ctx = make_part_ctx(comp, r2, std::max(below.grid_w, below.grid_h));
    return score_composition_impl(comp, ax, ay, below, grid, ctx, r2, v.alpha_repulsive, children);
}

LayerStates build_layer(const Vocabulary& v, int layer, const LayerStates& below,
                        const InferOptions& opt) {
    if (layer < 2 || layer > v.object_layer) throw std::invalid_argument("build_layer: bad layer index");
    const auto& comps = v.layers[static_cast<size_t>(layer)];
    LayerStates out;
    out.grid_w = below.grid_w;
    out.grid_h = below.grid_h;
    if (below.pooled.empty() || comps.empty()) return out;

    int nodes = static_cast<int>(v.or_layers[static_cast<size_t>(layer - 1)].size());
    OrGrid grid(below, nodes);

    // contiguous range of pooled states per OR id (pooled is sorted by or_id)
    std::vector<std::pair<size_t, size_t>> ranges(static_cast<size_t>(std::max(1, nodes)), {0, 0});
    for (size_t i = 0; i < below.pooled.size();) {
        size_t j = i;
        while (j < below.pooled.size() && below.pooled[j].or_id == below.pooled[i].or_id) ++j;
        ranges[static_cast<size_t>(below.pooled[i].or_id)] = {i, j};
        i = j;
    }

    std::vector<uint32_t> stamp(static_cast<size_t>(below.grid_w) * below.grid_h, 0);
    uint32_t generation = 0;

    for (const Composition& comp : comps) {
        double tau_eff = opt.tau_override >= 0.0
                             ? opt.tau_override
                             : (opt.use_learned_tau ? v.effective_tau(layer, comp.id)
                                                    : v.tau(layer));
        double r2 = mahalanobis_radius2(tau_eff);
        auto ctx = make_part_ctx(comp, r2, std::max(below.grid_w, below.grid_h));

        // anchors spawn around states matching the reference part; its mean is
        // pinned at zero so the spawn box is the reference search box itself
        Eigen::Matrix2d ref_sigma = comp.parts[0].sigma;
        Eigen::Vector2i ref_box = mahalanobis_box(ref_sigma, r2, std::max(below.grid_w, below.grid_h));

        ++generation;
        std::vector<CompState> states;
        for (auto [or_id, w] : comp.parts[0].appearance) {
            if (or_id < 0 || or_id >= nodes) continue;
            auto [lo, hi] = ranges[static_cast<size_t>(or_id)];
            for (size_t si = lo; si < hi; ++si) {
                const OrState& s = below.pooled[si];
                for (int dy = -ref_box.y(); dy <= ref_box.y(); ++dy)
                    for (int dx = -ref_box.x(); dx <= ref_box.x(); ++dx) {
                        int ax = s.x - dx, ay = s.y - dy;
                        if (ax < 0 || ax >= below.grid_w || ay < 0 || ay >= below.grid_h) continue;
                        size_t cell = static_cast<size_t>(ay) * below.grid_w + ax;
                        if (stamp[cell] == generation) continue;
                        stamp[cell] = generation;
                        CompState st;
                        st.comp = comp.id;
                        st.x = ax;
                        st.y = ay;
                        st.score = score_composition_impl(comp, ax, ay, below, grid, ctx, r2,
                                                          v.alpha_repulsive, &st.children);
                        if (!(st.score > 0.0) || st.score < tau_eff) continue;
                        for (size_t pi = 0; pi < st.children.size(); ++pi) {
                            int32_t ci = st.children[pi];
                            if (ci < 0) continue;
                            const OrState& child = below.pooled[static_cast<size_t>(ci)];
                            const CompState& member = below.comps[static_cast<size_t>(child.best)];
                            st.support = support_union(st.support, member.support);
                        }
                        states.push_back(std::move(st));
                    }
            }
        }
        sort_canonical(states);
        for (auto& st : states) out.comps.push_back(std::move(st));
    }
    return out;
}

void downsample(LayerStates& ls, double rho) {
    if (!(rho > 0.0 && rho <= 1.0)) throw std::invalid_argument("downsample: rho must be in (0,1]");
    int new_w = ls.grid_w > 0 ? static_cast<int>(std::floor((ls.grid_w - 1) * rho)) + 1 : 0;
    int new_h = ls.grid_h > 0 ? static_cast<int>(std::floor((ls.grid_h - 1) * rho)) + 1 : 0;

    struct Mapped {
        int comp, nx, ny, ox, oy;
        size_t idx;
    };
    std::vector<Mapped> mapped;
    mapped.reserve(ls.comps.size());
    for (size_t i = 0; i < ls.comps.size(); ++i) {
        const CompState& s = ls.comps[i];
        mapped.push_back({s.comp, static_cast<int>(std::floor(s.x * rho)),
                          static_cast<int>(std::floor(s.y * rho)), s.x, s.y, i});
    }
    std::sort(mapped.begin(), mapped.end(), [](const Mapped& a, const Mapped& b) {
        return std::tie(a.comp, a.ny, a.nx, a.oy, a.ox) < std::tie(b.comp, b.ny, b.nx, b.oy, b.ox);
    });

    std::vector<CompState> kept;
    for (size_t i = 0; i < mapped.size();) {
        size_t j = i;
        size_t best = i;
        while (j < mapped.size() && mapped[j].comp == mapped[i].comp && mapped[j].ny == mapped[i].ny &&
               mapped[j].nx == mapped[i].nx) {
            if (ls.comps[mapped[j].idx].score > ls.comps[mapped[best].idx].score) best = j;
            ++j;
        }
        CompState s = std::move(ls.comps[mapped[best].idx]);
        s.x = mapped[best].nx;
        s.y = mapped[best].ny;
        kept.push_back(std::move(s));
        i = j;
    }
    ls.comps = std::move(kept);
    ls.grid_w = new_w;
    ls.grid_h = new_h;
    ls.pooled.clear();
}

void pool_or(LayerStates& ls, const Vocabulary& v, int layer) {
    const auto& nodes = v.or_layers.at(static_cast<size_t>(layer));
    if (nodes.empty() && !ls.comps.empty())
        throw std::runtime_error("pool_or: OR layer " + std::to_string(layer) + " is not defined");
    size_t comp_count = layer == 1 ? v.layer1.size() : v.layers[static_cast<size_t>(layer)].size();
    std::vector<int> node_of(comp_count, -1);
    for (const OrNode& n : nodes)
        for (int m : n.members)
            if (m >= 0 && m < static_cast<int>(comp_count)) node_of[static_cast<size_t>(m)] = n.id;

    struct Entry {
        int or_id, y, x;
        size_t idx;
    };
    std::vector<Entry> entries;
    entries.reserve(ls.comps.size());
    for (size_t i = 0; i < ls.comps.size(); ++i) {
        int nid = node_of.at(static_cast<size_t>(ls.comps[i].comp));
        if (nid < 0)
            throw std::runtime_error("pool_or: composition " + std::to_string(ls.comps[i].comp) +
                                     " is not in any OR node at layer " + std::to_string(layer));
        entries.push_back({nid, ls.comps[i].y, ls.comps[i].x, i});
    }
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        return std::tie(a.or_id, a.y, a.x, a.idx) < std::tie(b.or_id, b.y, b.x, b.idx);
    });

    ls.pooled.clear();
    for (size_t i = 0; i < entries.size();) {
        size_t j = i, best = i;
        while (j < entries.size() && entries[j].or_id == entries[i].or_id && entries[j].y == entries[i].y &&
               entries[j].x == entries[i].x) {
            if (ls.comps[entries[j].idx].score > ls.comps[entries[best].idx].score) best = j;
            ++j;
        }
        OrState s;
        s.or_id = entries[i].or_id;
        s.x = entries[i].x;
        s.y = entries[i].y;
        s.score = ls.comps[entries[best].idx].score;
        s.best = static_cast<int32_t>(entries[best].idx);
        ls.pooled.push_back(s);
        i = j;
    }
}

InferenceGraph infer(const FeatureSet& fs, const Vocabulary& v, const InferOptions& opt) {
    int top = opt.max_layer > 0 ? opt.max_layer : v.object_layer;
    top = std::min(top, v.object_layer);
    InferenceGraph g;
    g.image_w = fs.width;
    g.image_h = fs.height;
    g.layers.resize(static_cast<size_t>(top) + 1);

    double tau1 = opt.tau_override >= 0.0 ? opt.tau_override : v.tau(1);
    LayerStates cur;
    auto it = opt.tau_override < 0.0 && opt.use_learned_tau ? v.comp_tau.find(1) : v.comp_tau.end();
    if (it != v.comp_tau.end() && !it->second.empty()) {
        // learned per-model thresholds may sit below the global one, so match
        // at the loosest of them and re-filter per model
        double loosest = tau1;
        for (auto [id, t] : it->second) loosest = std::min(loosest, t);
        cur = match_layer1(fs, v, loosest);
        std::vector<CompState> kept;
        for (auto& s : cur.comps) {
            auto ct = it->second.find(s.comp);
            double t = ct != it->second.end() ? ct->second : tau1;
            if (s.score >= t) kept.push_back(std::move(s));
        }
        cur.comps = std::move(kept);
    } else {
        cur = match_layer1(fs, v, tau1);
    }
    downsample(cur, v.rho[1]);
    pool_or(cur, v, 1);
    g.layers[1] = std::move(cur);

    for (int l = 2; l <= top; ++l) {
        LayerStates next = build_layer(v, l, g.layers[static_cast<size_t>(l - 1)], opt);
        downsample(next, v.rho[static_cast<size_t>(l)]);
        if (!v.or_layers[static_cast<size_t>(l)].empty() ||
            v.layers[static_cast<size_t>(l)].empty())
            pool_or(next, v, l);
        g.layers[static_cast<size_t>(l)] = std::move(next);
    }
    return g;
}

ParseGraph parse_graph(const InferenceGraph& g, int layer, int comp_index) {
    if (layer < 1 || layer > g.top_layer() ||
        comp_index < 0 || comp_index >= static_cast<int>(g.layers[static_cast<size_t>(layer)].comps.size()))
        throw std::out_of_range("parse_graph: unknown state");
    ParseGraph pg;
    pg.comp_indices.assign(g.layers.size(), {});
    std::vector<std::pair<int, int>> queue{{layer, comp_index}};
    std::vector<std::vector<char>> seen(g.layers.size());
    for (size_t l = 1; l < g.layers.size(); ++l) seen[l].assign(g.layers[l].comps.size(), 0);
    while (!queue.empty()) {
        auto [l, ci] = queue.back();
        queue.pop_back();
        if (seen[static_cast<size_t>(l)][static_cast<size_t>(ci)]) continue;
        seen[static_cast<size_t>(l)][static_cast<size_t>(ci)] = 1;
        pg.comp_indices[static_cast<size_t>(l)].push_back(ci);
        const CompState& s = g.layers[static_cast<size_t>(l)].comps[static_cast<size_t>(ci)];
        for (int32_t child : s.children) {
            if (child < 0) continue;
            const OrState& os = g.layers[static_cast<size_t>(l - 1)].pooled[static_cast<size_t>(child)];
            queue.push_back({l - 1, os.best});
        }
    }
    for (auto& v : pg.comp_indices) std::sort(v.begin(), v.end());
    return pg;
}

const std::vector<int64_t>& support(const InferenceGraph& g, int layer, int comp_index) {
    if (layer < 1 || layer > g.top_layer() ||
        comp_index < 0 || comp_index >= static_cast<int>(g.layers[static_cast<size_t>(layer)].comps.size()))
        throw std::out_of_range("support: unknown state");
    return g.layers[static_cast<size_t>(layer)].comps[static_cast<size_t>(comp_index)].support;
}

}  // namespace shapevoc
