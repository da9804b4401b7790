#include "shapevoc/structure_learning.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include "shapevoc/geometry.hpp"

namespace shapevoc {

double PairHistogram::total() const {
    return std::accumulate(counts.begin(), counts.end(), 0.0);
}

namespace {

// Pooled states of one graph layer indexed for radius queries: positions
// sorted by (y, x) with a per-row span table.
struct StateIndex {
    const LayerStates* ls = nullptr;
    std::vector<int> order;           // pooled indices sorted by (y, x)
    std::vector<size_t> row_begin;    // grid_h + 1 offsets into order

    explicit StateIndex(const LayerStates& layer) : ls(&layer) {
        order.resize(layer.pooled.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            const OrState& s = layer.pooled[a];
            const OrState& t = layer.pooled[b];
            if (s.y != t.y) return s.y < t.y;
            if (s.x != t.x) return s.x < t.x;
            return a < b;
        });
        row_begin.assign(static_cast<size_t>(layer.grid_h) + 1, 0);
        for (int idx : order) ++row_begin[static_cast<size_t>(layer.pooled[idx].y) + 1];
        for (size_t i = 1; i < row_begin.size(); ++i) row_begin[i] += row_begin[i - 1];
    }

    // Pooled indices within Euclidean distance `radius` of (cx, cy),
    // excluding the state at exactly (cx, cy) when skip_self is set.
    template <class Fn>
    void for_neighbors(int cx, int cy, double radius, Fn&& fn) const {
        int ri = static_cast<int>(std::floor(radius));
        double r2 = radius * radius;
        int y0 = std::max(0, cy - ri);
        int y1 = std::min(ls->grid_h - 1, cy + ri);
        for (int y = y0; y <= y1; ++y) {
            for (size_t k = row_begin[y]; k < row_begin[static_cast<size_t>(y) + 1]; ++k) {
                const OrState& s = ls->pooled[order[k]];
                if (s.x < cx - ri) continue;
                if (s.x > cx + ri) break;
                double dx = s.x - cx, dy = s.y - cy;
                if (dx * dx + dy * dy <= r2) fn(order[k]);
            }
        }
    }
};

const std::vector<int64_t>& pooled_support(const LayerStates& ls, const OrState& s) {
    return ls.comps[static_cast<size_t>(s.best)].support;
}

}  // namespace

HistogramSet accumulate_histograms(const std::vector<const InferenceGraph*>& graphs, int layer,
                                   double radius, double overlap_max) {
    if (radius <= 0.0) throw std::invalid_argument("accumulate_histograms: radius must be positive");
    HistogramSet hs;
    hs.r = static_cast<int>(std::ceil(radius));
    for (const InferenceGraph* g : graphs) {
        if (layer > g->top_layer()) continue;
        const LayerStates& ls = g->layers[static_cast<size_t>(layer)];
        StateIndex index(ls);
        for (size_t i = 0; i < ls.pooled.size(); ++i) {
            const OrState& a = ls.pooled[i];
            index.for_neighbors(a.x, a.y, radius, [&](int j) {
                if (j == static_cast<int>(i)) return;
                const OrState& b = ls.pooled[static_cast<size_t>(j)];
                if (support_overlap(pooled_support(ls, a), pooled_support(ls, b)) >= overlap_max)
                    return;
                auto key = std::make_pair(a.or_id, b.or_id);
                auto hit = hs.pairs.find(key);
                if (hit == hs.pairs.end())
                    hit = hs.pairs.emplace(key, PairHistogram(hs.r)).first;
                hit->second.at(b.x - a.x, b.y - a.y) += 1.0;
            });
        }
    }
    return hs;
}

namespace {

std::vector<double> binomial_smooth(const PairHistogram& h) {
    static const double k[3] = {0.25, 0.5, 0.25};
    int side = 2 * h.r + 1;
    std::vector<double> tmp(h.counts.size(), 0.0), out(h.counts.size(), 0.0);
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
            double acc = 0.0;
            for (int d = -1; d <= 1; ++d) {
                int xx = x + d;
                if (xx < 0 || xx >= side) continue;
                acc += k[d + 1] * h.counts[static_cast<size_t>(y) * side + xx];
            }
            tmp[static_cast<size_t>(y) * side + x] = acc;
        }
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
            double acc = 0.0;
            for (int d = -1; d <= 1; ++d) {
                int yy = y + d;
                if (yy < 0 || yy >= side) continue;
                acc += k[d + 1] * tmp[static_cast<size_t>(yy) * side + x];
            }
            out[static_cast<size_t>(y) * side + x] = acc;
        }
    return out;
}

}  // namespace

std::vector<Mode> find_modes(const PairHistogram& h, const ModeParams& p) {
    if (p.fit_window < 0 || p.min_separation < 0)
        throw std::invalid_argument("find_modes: window and separation must be non-negative");
    int side = 2 * h.r + 1;
    std::vector<double> c = p.smooth ? binomial_smooth(h) : h.counts;
    double total = std::accumulate(c.begin(), c.end(), 0.0);
    if (total <= 0.0) return {};
    double floor_mass = std::max(p.mass_floor_frac * total, 1e-12);

    auto cell = [&](int x, int y) -> double {
        if (x < 0 || y < 0 || x >= side || y >= side) return 0.0;
        return c[static_cast<size_t>(y) * side + x];
    };

    // Peaks: cells above the mass floor that dominate their 8-neighborhood.
    struct Peak {
        double v;
        int x, y;
    };
    std::vector<Peak> peaks;
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
            double v = cell(x, y);
            if (v < floor_mass) continue;
            bool is_max = true;
            for (int dy = -1; dy <= 1 && is_max; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    if (dx == 0 && dy == 0) continue;
                    if (cell(x + dx, y + dy) > v) {
                        is_max = false;
                        break;
                    }
                }
            if (is_max) peaks.push_back({v, x, y});
        }
    std::sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) {
        if (a.v != b.v) return a.v > b.v;
        if (a.y != b.y) return a.y < b.y;
        return a.x < b.x;
    });

    int min_sep2 = p.min_separation * p.min_separation;
    std::vector<Peak> kept;
    for (const Peak& pk : peaks) {
        bool ok = true;
        for (const Peak& q : kept) {
            int dx = pk.x - q.x, dy = pk.y - q.y;
            if (dx * dx + dy * dy < min_sep2) {
                ok = false;
                break;
            }
        }
        if (ok) kept.push_back(pk);
    }

    std::vector<Mode> modes;
    for (const Peak& pk : kept) {
        double mass = 0.0, mx = 0.0, my = 0.0;
        for (int dy = -p.fit_window; dy <= p.fit_window; ++dy)
            for (int dx = -p.fit_window; dx <= p.fit_window; ++dx) {
                double w = cell(pk.x + dx, pk.y + dy);
                mass += w;
                mx += w * (pk.x + dx - h.r);
                my += w * (pk.y + dy - h.r);
            }
        if (mass <= 0.0) continue;
        mx /= mass;
        my /= mass;
        Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
        for (int dy = -p.fit_window; dy <= p.fit_window; ++dy)
            for (int dx = -p.fit_window; dx <= p.fit_window; ++dx) {
                double w = cell(pk.x + dx, pk.y + dy);
                if (w <= 0.0) continue;
                Eigen::Vector2d d(pk.x + dx - h.r - mx, pk.y + dy - h.r - my);
                cov += w * d * d.transpose();
            }
        cov /= mass;
        Mode m;
        m.mu = Eigen::Vector2d(mx, my);
        m.sigma = spd_floor(cov, p.sigma_floor);
        m.mass = mass;
        modes.push_back(m);
    }
    std::sort(modes.begin(), modes.end(), [](const Mode& a, const Mode& b) {
        if (a.mass != b.mass) return a.mass > b.mass;
        if (a.mu.y() != b.mu.y()) return a.mu.y() < b.mu.y();
        return a.mu.x() < b.mu.x();
    });
    return modes;
}

std::vector<Duplet> make_duplets(const HistogramSet& hs, const ModeParams& p) {
    std::vector<Duplet> out;
    for (const auto& [key, hist] : hs.pairs) {
        for (const Mode& m : find_modes(hist, p)) {
            Duplet d;
            d.ref_or = key.first;
            d.second_or = key.second;
            d.mu = m.mu;
            d.sigma = m.sigma;
            out.push_back(d);
        }
    }
    return out;
}

namespace {

// Unique layer-1 locations of a graph, indexed by row for circle queries.
struct FeatureIndex {
    std::vector<int64_t> locs;  // sorted packed (y, x)
    std::vector<size_t> row_begin;
    int height = 0;

    explicit FeatureIndex(const InferenceGraph& g) {
        if (g.top_layer() < 1) throw std::runtime_error("candidate pool: graph lacks layer 1");
        const LayerStates& l1 = g.layers[1];
        for (const CompState& s : l1.comps) locs.push_back(pack_loc(s.x, s.y));
        std::sort(locs.begin(), locs.end());
        locs.erase(std::unique(locs.begin(), locs.end()), locs.end());
        height = l1.grid_h;
        row_begin.assign(static_cast<size_t>(height) + 1, 0);
        for (int64_t l : locs) ++row_begin[static_cast<size_t>(unpack_y(l)) + 1];
        for (size_t i = 1; i < row_begin.size(); ++i) row_begin[i] += row_begin[i - 1];
    }

    std::vector<int64_t> in_circle(double cx, double cy, double radius) const {
        std::vector<int64_t> out;
        double r2 = radius * radius;
        int y0 = std::max(0, static_cast<int>(std::ceil(cy - radius)));
        int y1 = std::min(height - 1, static_cast<int>(std::floor(cy + radius)));
        for (int y = y0; y <= y1; ++y)
            for (size_t k = row_begin[y]; k < row_begin[static_cast<size_t>(y) + 1]; ++k) {
                double dx = unpack_x(locs[k]) - cx, dy = y - cy;
                if (dx * dx + dy * dy <= r2) out.push_back(locs[k]);
            }
        return out;  // already sorted: packed order is (y, x)
    }
};

struct DupletMatch {
    int duplet = 0;
    double score = 0.0;
    const std::vector<int64_t>* support = nullptr;
};

// Key for candidate dedup across neighborhoods: ref OR id + sorted duplets.
struct CandKey {
    int ref_or;
    std::vector<int> duplets;
    bool operator<(const CandKey& o) const {
        if (ref_or != o.ref_or) return ref_or < o.ref_or;
        return duplets < o.duplets;
    }
};

struct SubsetSink {
    // Called for every enumerated subset with its coverage.
    virtual void accept(const CandKey& key, double coverage) = 0;
    virtual ~SubsetSink() = default;
};

// Depth-first expansion of duplet-match subsets under the pairwise
// second-part overlap constraint. `members` carries supports of the second
// parts picked so far; `uni` the running support union with the center.
void expand_subsets(const std::vector<DupletMatch>& matches, size_t from, int ref_or,
                    int max_extra, double overlap_max, const std::vector<int64_t>& nbhd,
                    std::vector<int>& picked, std::vector<const std::vector<int64_t>*>& members,
                    const std::vector<int64_t>& uni, SubsetSink& sink) {
    if (static_cast<int>(picked.size()) >= max_extra) return;
    for (size_t i = from; i < matches.size(); ++i) {
        const DupletMatch& m = matches[i];
        bool ok = true;
        for (const std::vector<int64_t>* sup : members)
            if (support_overlap(*sup, *m.support) >= overlap_max) {
                ok = false;
                break;
            }
        if (!ok) continue;
        picked.push_back(m.duplet);
        members.push_back(m.support);
        std::vector<int64_t> u = support_union(uni, *m.support);
        double coverage = support_overlap(u, nbhd);
        CandKey key{ref_or, picked};
        sink.accept(key, coverage);
        expand_subsets(matches, i + 1, ref_or, max_extra, overlap_max, nbhd, picked, members, u,
                       sink);
        members.pop_back();
        picked.pop_back();
    }
}

}  // namespace

CandidatePool enumerate_candidates(const std::vector<const InferenceGraph*>& graphs, int layer,
                                   const Vocabulary& v, std::vector<Duplet> duplets,
                                   const EnumerateParams& p, const std::vector<int>& existing) {
    if (layer < 2) throw std::invalid_argument("enumerate_candidates: layer must be >= 2");
    CandidatePool pool;
    pool.duplets = std::move(duplets);
    double rho_below = v.rho_cum(layer - 1);

    // Duplet lookup by reference OR id, preserving list order.
    std::map<int, std::vector<int>> by_ref;
    for (size_t i = 0; i < pool.duplets.size(); ++i)
        by_ref[pool.duplets[i].ref_or].push_back(static_cast<int>(i));
    std::vector<Eigen::Matrix2d> dup_inv(pool.duplets.size());
    double match_r2 = mahalanobis_radius2(p.tau);
    for (size_t i = 0; i < pool.duplets.size(); ++i) {
        Eigen::Matrix2d s = pool.duplets[i].sigma;
        if (s.determinant() <= 0.0)
            throw std::invalid_argument("enumerate_candidates: duplet covariance not positive definite");
        dup_inv[i] = s.inverse();
    }

    // Existing compositions are rescored per graph via one build_layer pass
    // and grouped by anchor location.
    struct ExistState {
        double score;
        const std::vector<int64_t>* support;
    };

    // pass 1 accumulates per-candidate totals; pass 2 records the matches of
    // the surviving pool. Both passes walk neighborhoods identically.
    std::map<CandKey, std::pair<double, int>> totals;
    std::set<CandKey> surviving;
    std::map<CandKey, int> cand_index;

    for (int pass = 0; pass < 2; ++pass) {
        int nbhd_counter = 0;
        if (pass == 1) {
            // Seed candidate slots: existing compositions first, then the
            // top max_pool_candidates learned subsets by accumulated score.
            for (int comp_id : existing) {
                Candidate c;
                c.existing_comp = comp_id;
                c.ref_or = -1;
                pool.candidates.push_back(c);
            }
            std::vector<std::pair<CandKey, std::pair<double, int>>> ranked(totals.begin(),
                                                                           totals.end());
            std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
                if (a.second.first != b.second.first) return a.second.first > b.second.first;
                return a.first < b.first;
            });
            if (static_cast<int>(ranked.size()) > p.max_pool_candidates)
                ranked.resize(static_cast<size_t>(p.max_pool_candidates));
            for (const auto& [key, acc] : ranked) {
                Candidate c;
                c.ref_or = key.ref_or;
                c.duplets = key.duplets;
                c.score = acc.first;
                c.count = acc.second;
                cand_index[key] = static_cast<int>(pool.candidates.size());
                surviving.insert(key);
                pool.candidates.push_back(c);
            }
        }

        for (size_t gi = 0; gi < graphs.size(); ++gi) {
            const InferenceGraph& g = *graphs[gi];
            if (layer - 1 > g.top_layer()) continue;
            const LayerStates& below = g.layers[static_cast<size_t>(layer - 1)];
            FeatureIndex feats(g);
            StateIndex index(below);

            std::map<int64_t, std::vector<std::pair<int, ExistState>>> exist_at;
            LayerStates exist_states;
            if (!existing.empty()) {
                exist_states = build_layer(v, layer, below);
                for (const CompState& s : exist_states.comps)
                    exist_at[pack_loc(s.x, s.y)].push_back(
                        {s.comp, ExistState{s.score, &s.support}});
            }

            // Deterministic center subsample when a layer has more states
            // than the per-image cap.
            std::vector<int> centers(below.pooled.size());
            std::iota(centers.begin(), centers.end(), 0);
            if (static_cast<int>(centers.size()) > p.max_centers_per_image) {
                Rng rng(fork_seed(p.seed, "centers") + gi);
                rng.shuffle(centers);
                centers.resize(static_cast<size_t>(p.max_centers_per_image));
                std::sort(centers.begin(), centers.end());
            }

            for (int ci : centers) {
                const OrState& center = below.pooled[static_cast<size_t>(ci)];
                int nbhd_id = nbhd_counter++;

                std::vector<int64_t> nbhd =
                    feats.in_circle(center.x / rho_below, center.y / rho_below,
                                    p.radius / rho_below);
                if (nbhd.empty()) continue;

                // Best match per duplet whose reference OR matches the center.
                std::vector<DupletMatch> matches;
                auto ref_it = by_ref.find(center.or_id);
                if (ref_it != by_ref.end()) {
                    for (int di : ref_it->second) {
                        const Duplet& d = pool.duplets[di];
                        double best = 0.0;
                        const std::vector<int64_t>* best_sup = nullptr;
                        index.for_neighbors(center.x, center.y, p.radius, [&](int j) {
                            const OrState& s = below.pooled[static_cast<size_t>(j)];
                            if (s.or_id != d.second_or) return;
                            Eigen::Vector2d off(s.x - center.x, s.y - center.y);
                            double m2 = mahalanobis2(off - d.mu, dup_inv[di]);
                            if (m2 > match_r2) return;
                            double val = s.score * std::exp(-0.5 * m2);
                            if (val > best) {
                                best = val;
                                best_sup = &pooled_support(below, s);
                            }
                        });
                        double score = center.score * best;
                        if (best_sup != nullptr && score > 0.0 && score >= p.tau)
                            matches.push_back({di, score, best_sup});
                    }
                }
                std::sort(matches.begin(), matches.end(), [](const DupletMatch& a,
                                                             const DupletMatch& b) {
                    if (a.score != b.score) return a.score > b.score;
                    return a.duplet < b.duplet;
                });
                if (static_cast<int>(matches.size()) > p.max_duplets_per_neighborhood)
                    matches.resize(static_cast<size_t>(p.max_duplets_per_neighborhood));
                std::sort(matches.begin(), matches.end(),
                          [](const DupletMatch& a, const DupletMatch& b) {
                              return a.duplet < b.duplet;
                          });

                const std::vector<int64_t>& csup = pooled_support(below, center);

                struct Pass1Sink : SubsetSink {
                    std::map<CandKey, std::pair<double, int>>* totals;
                    double best = 0.0;
                    void accept(const CandKey& key, double cov) override {
                        auto& acc = (*totals)[key];
                        acc.first += cov;
                        acc.second += 1;
                        best = std::max(best, cov);
                    }
                };
                struct Pass2Sink : SubsetSink {
                    const std::set<CandKey>* surviving;
                    const std::map<CandKey, int>* index;
                    CandidatePool* pool;
                    int nbhd;
                    void accept(const CandKey& key, double cov) override {
                        if (surviving->count(key) == 0) return;
                        pool->candidates[static_cast<size_t>(index->at(key))].matches.push_back(
                            {nbhd, static_cast<float>(cov)});
                    }
                };

                std::vector<int> picked;
                std::vector<const std::vector<int64_t>*> members;
                if (pass == 0) {
                    Pass1Sink sink;
                    sink.totals = &totals;
                    expand_subsets(matches, 0, center.or_id, p.max_parts - 1, p.overlap_max, nbhd,
                                   picked, members, csup, sink);
                    double best = sink.best;
                    if (!existing.empty()) {
                        auto eit = exist_at.find(pack_loc(center.x, center.y));
                        if (eit != exist_at.end())
                            for (const auto& [comp_id, es] : eit->second) {
                                (void)comp_id;
                                best = std::max(best, support_overlap(*es.support, nbhd));
                            }
                    }
                    if (best > 0.0) pool.best_coverage.push_back(static_cast<float>(best));
                } else {
                    Pass2Sink sink;
                    sink.surviving = &surviving;
                    sink.index = &cand_index;
                    sink.pool = &pool;
                    sink.nbhd = nbhd_id;
                    expand_subsets(matches, 0, center.or_id, p.max_parts - 1, p.overlap_max, nbhd,
                                   picked, members, csup, sink);
                    if (!existing.empty()) {
                        auto eit = exist_at.find(pack_loc(center.x, center.y));
                        if (eit != exist_at.end())
                            for (const auto& [comp_id, es] : eit->second) {
                                size_t slot = 0;
                                while (slot < existing.size() &&
                                       existing[slot] != comp_id)
                                    ++slot;
                                if (slot == existing.size()) continue;
                                double cov = support_overlap(*es.support, nbhd);
                                Candidate& c = pool.candidates[slot];
                                c.score += cov;
                                c.count += 1;
                                c.matches.push_back({nbhd_id, static_cast<float>(cov)});
                            }
                    }
                }
            }
        }
        pool.num_neighborhoods = nbhd_counter;
    }
    return pool;
}

double selection_objective(const CandidatePool& pool, const std::vector<int>& chosen, double C) {
    std::vector<float> best(static_cast<size_t>(pool.num_neighborhoods), 0.f);
    int parts = 0;
    for (int ci : chosen) {
        const Candidate& c = pool.candidates.at(static_cast<size_t>(ci));
        parts += c.parts();
        for (const PoolEntry& e : c.matches)
            best[static_cast<size_t>(e.neighborhood)] =
                std::max(best[static_cast<size_t>(e.neighborhood)], e.coverage);
    }
    double cov = 0.0;
    for (float b : best) cov += b;
    return cov - C * parts;
}

double parts_penalty(const CandidatePool& pool, double frac) {
    if (pool.best_coverage.empty()) return 0.0;
    double s = 0.0;
    for (float b : pool.best_coverage) s += b;
    return frac * s / static_cast<double>(pool.best_coverage.size());
}

Selection greedy_select(const CandidatePool& pool, const SelectionParams& p,
                        const std::vector<int>& preselected) {
    size_t n = pool.candidates.size();
    // Residual per-candidate match lists; claimed coverage is subtracted and
    // entries below residual_epsilon are dropped.
    std::vector<std::vector<PoolEntry>> residual(n);
    for (size_t i = 0; i < n; ++i) residual[i] = pool.candidates[i].matches;
    std::vector<float> claimed(static_cast<size_t>(pool.num_neighborhoods), 0.f);
    std::vector<char> chosen_mask(n, 0);
    std::vector<int> chosen;

    auto gain_of = [&](size_t i) {
        double g = 0.0;
        for (const PoolEntry& e : residual[i]) {
            double r = e.coverage - claimed[static_cast<size_t>(e.neighborhood)];
            if (r > 0.0) g += r;
        }
        return g - p.C * pool.candidates[i].parts();
    };
    auto claim = [&](size_t i) {
        chosen_mask[i] = 1;
        chosen.push_back(static_cast<int>(i));
        for (const PoolEntry& e : residual[i]) {
            auto& cl = claimed[static_cast<size_t>(e.neighborhood)];
            cl = std::max(cl, e.coverage);
        }
        for (size_t j = 0; j < n; ++j) {
            if (chosen_mask[j]) continue;
            auto& rm = residual[j];
            rm.erase(std::remove_if(rm.begin(), rm.end(),
                                    [&](const PoolEntry& e) {
                                        return e.coverage -
                                                   claimed[static_cast<size_t>(e.neighborhood)] <
                                               p.residual_epsilon;
                                    }),
                     rm.end());
        }
    };

    for (int i : preselected) claim(static_cast<size_t>(i));

    double first_gain = -1.0;
    for (;;) {
        double best_gain = 0.0;
        int best = -1;
        for (size_t i = 0; i < n; ++i) {
            if (chosen_mask[i]) continue;
            double g = gain_of(i);
            if (g > best_gain) {
                best_gain = g;
                best = static_cast<int>(i);
            }
        }
        if (best < 0) break;
        if (first_gain < 0.0) first_gain = best_gain;
        else if (best_gain < p.stop_frac * first_gain) break;
        claim(static_cast<size_t>(best));
    }
    std::sort(chosen.begin(), chosen.end());
    Selection out;
    out.chosen = std::move(chosen);
    out.objective = selection_objective(pool, out.chosen, p.C);
    return out;
}

Selection mcmc_refine(const CandidatePool& pool, const std::vector<int>& start,
                      const SelectionParams& sp, const McmcParams& mp, Rng& rng,
                      const std::vector<int>& frozen) {
    size_t n = pool.candidates.size();
    std::vector<char> in(n, 0), is_frozen(n, 0);
    for (int i : start) in[static_cast<size_t>(i)] = 1;
    for (int i : frozen) is_frozen[static_cast<size_t>(i)] = 1;

    auto current_chosen = [&]() {
        std::vector<int> v;
        for (size_t i = 0; i < n; ++i)
            if (in[i]) v.push_back(static_cast<int>(i));
        return v;
    };

    double cur = selection_objective(pool, current_chosen(), sp.C);
    Selection best;
    best.chosen = current_chosen();
    best.objective = cur;

    for (int it = 0; it < mp.iterations; ++it) {
        std::vector<int> ins, outs;
        for (size_t i = 0; i < n; ++i) {
            if (in[i] && !is_frozen[i]) ins.push_back(static_cast<int>(i));
            if (!in[i]) outs.push_back(static_cast<int>(i));
        }
        double u = rng.uniform();
        int add = -1, remove = -1;
        if (u < mp.exchange_prob) {
            if (!ins.empty() && !outs.empty()) {
                remove = ins[static_cast<size_t>(rng.uniform_int(ins.size()))];
                add = outs[static_cast<size_t>(rng.uniform_int(outs.size()))];
            }
        } else if (u < mp.exchange_prob + 0.5 * (1.0 - mp.exchange_prob)) {
            if (!outs.empty()) add = outs[static_cast<size_t>(rng.uniform_int(outs.size()))];
        } else {
            if (!ins.empty()) remove = ins[static_cast<size_t>(rng.uniform_int(ins.size()))];
        }
        if (add < 0 && remove < 0) continue;
        if (add >= 0) in[static_cast<size_t>(add)] = 1;
        if (remove >= 0) in[static_cast<size_t>(remove)] = 0;
        double prop = selection_objective(pool, current_chosen(), sp.C);
        double accept = prop >= cur ? 1.0 : std::min(1.0, std::pow(mp.beta, prop - cur));
        if (rng.uniform() < accept) {
            cur = prop;
            if (cur > best.objective) {
                best.objective = cur;
                best.chosen = current_chosen();
            }
        } else {
            if (add >= 0) in[static_cast<size_t>(add)] = 0;
            if (remove >= 0) in[static_cast<size_t>(remove)] = 1;
        }
    }
    return best;
}

std::vector<Composition> instantiate_candidates(const CandidatePool& pool,
                                                const std::vector<int>& chosen, double epsilon_ref,
                                                int next_id) {
    std::vector<Composition> out;
    for (int ci : chosen) {
        const Candidate& c = pool.candidates.at(static_cast<size_t>(ci));
        if (c.existing_comp >= 0) continue;
        Composition comp;
        comp.id = next_id++;
        Part ref;
        ref.appearance = {{c.ref_or, 1.0}};
        ref.mu = Eigen::Vector2d::Zero();
        ref.sigma = (epsilon_ref * epsilon_ref) * Eigen::Matrix2d::Identity();
        comp.parts.push_back(ref);
        for (int di : c.duplets) {
            const Duplet& d = pool.duplets.at(static_cast<size_t>(di));
            Part part;
            part.appearance = {{d.second_or, 1.0}};
            part.mu = d.mu;
            part.sigma = d.sigma;
            comp.parts.push_back(part);
        }
        canonicalize_parts(comp);
        out.push_back(std::move(comp));
    }
    return out;
}

std::vector<int> select_object_layer(const std::vector<Composition>& candidates,
                                     const std::vector<const InferenceGraph*>& val_graphs,
                                     const std::vector<std::vector<BoxI>>& val_boxes,
                                     const Vocabulary& v, const ObjectSelectParams& p) {
    if (val_graphs.size() != val_boxes.size())
        throw std::invalid_argument("select_object_layer: graphs/boxes size mismatch");
    size_t num_boxes = 0;
    for (const auto& bs : val_boxes) num_boxes += bs.size();
    if (num_boxes == 0)
        throw std::runtime_error("select_object_layer: no validation boxes to fit against");

    int O = v.object_layer;
    struct Det {
        size_t cand;
        int graph;
        double score;
        BoxI box;
    };

    // Detections of every candidate on every validation graph, computed once.
    Vocabulary scratch = v;
    if (static_cast<int>(scratch.layers.size()) <= O)
        scratch.layers.resize(static_cast<size_t>(O) + 1);
    std::vector<std::vector<Det>> dets(candidates.size());
    for (size_t ci = 0; ci < candidates.size(); ++ci) {
        Composition comp = candidates[ci];
        comp.id = 0;
        scratch.layers[O] = {comp};
        scratch.comp_tau.erase(O);
        for (size_t gi = 0; gi < val_graphs.size(); ++gi) {
            if (O - 1 > val_graphs[gi]->top_layer()) continue;
            const LayerStates& below = val_graphs[gi]->layers[static_cast<size_t>(O - 1)];
            for (const CompState& s : build_layer(scratch, O, below).comps) {
                if (s.support.empty()) continue;
                int64_t first = s.support.front();
                double x0 = unpack_x(first), y0 = unpack_y(first), x1 = x0, y1 = y0;
                for (int64_t l : s.support) {
                    x0 = std::min(x0, static_cast<double>(unpack_x(l)));
                    x1 = std::max(x1, static_cast<double>(unpack_x(l)));
                    y0 = std::min(y0, static_cast<double>(unpack_y(l)));
                    y1 = std::max(y1, static_cast<double>(unpack_y(l)));
                }
                dets[ci].push_back({ci, static_cast<int>(gi), s.score,
                                    BoxI{x0 - p.box_pad, y0 - p.box_pad, x1 + p.box_pad,
                                         y1 + p.box_pad}});
            }
        }
    }

    auto iou = [](const BoxI& a, const BoxI& b) {
        double ix0 = std::max(a.x0, b.x0), iy0 = std::max(a.y0, b.y0);
        double ix1 = std::min(a.x1, b.x1), iy1 = std::min(a.y1, b.y1);
        double iw = std::max(0.0, ix1 - ix0), ih = std::max(0.0, iy1 - iy0);
        double inter = iw * ih;
        double ua = std::max(0.0, a.x1 - a.x0) * std::max(0.0, a.y1 - a.y0) +
                    std::max(0.0, b.x1 - b.x0) * std::max(0.0, b.y1 - b.y0) - inter;
        return ua <= 0.0 ? 0.0 : inter / ua;
    };

    // F-measure of a candidate set: pooled detections, per-graph NMS, then
    // greedy matching against the boxes.
    auto f_measure = [&](const std::vector<char>& mask) {
        std::vector<Det> all;
        for (size_t ci = 0; ci < candidates.size(); ++ci)
            if (mask[ci]) all.insert(all.end(), dets[ci].begin(), dets[ci].end());
        std::sort(all.begin(), all.end(), [](const Det& a, const Det& b) {
            if (a.score != b.score) return a.score > b.score;
            if (a.cand != b.cand) return a.cand < b.cand;
            if (a.graph != b.graph) return a.graph < b.graph;
            if (a.box.y0 != b.box.y0) return a.box.y0 < b.box.y0;
            return a.box.x0 < b.box.x0;
        });
        std::vector<Det> kept;
        for (const Det& d : all) {
            bool dup = false;
            for (const Det& k : kept)
                if (k.graph == d.graph && iou(k.box, d.box) > p.nms_iou) {
                    dup = true;
                    break;
                }
            if (!dup) kept.push_back(d);
        }
        std::vector<std::vector<char>> used(val_boxes.size());
        for (size_t gi = 0; gi < val_boxes.size(); ++gi)
            used[gi].assign(val_boxes[gi].size(), 0);
        int tp = 0, fp = 0;
        for (const Det& d : kept) {
            double best = 0.0;
            int best_b = -1;
            const auto& boxes = val_boxes[static_cast<size_t>(d.graph)];
            for (size_t bi = 0; bi < boxes.size(); ++bi) {
                if (used[static_cast<size_t>(d.graph)][bi]) continue;
                double o = iou(d.box, boxes[bi]);
                if (o > best) {
                    best = o;
                    best_b = static_cast<int>(bi);
                }
            }
            if (best_b >= 0 && best >= p.iou) {
                used[static_cast<size_t>(d.graph)][static_cast<size_t>(best_b)] = 1;
                ++tp;
            } else {
                ++fp;
            }
        }
        int fn = static_cast<int>(num_boxes) - tp;
        double denom = 2.0 * tp + fp + fn;
        return denom <= 0.0 ? 0.0 : 2.0 * tp / denom;
    };

    std::vector<char> mask(candidates.size(), 0);
    std::vector<int> chosen;
    double cur_f = 0.0;
    for (;;) {
        double best_f = cur_f;
        int best = -1;
        for (size_t ci = 0; ci < candidates.size(); ++ci) {
            if (mask[ci]) continue;
            mask[ci] = 1;
            double f = f_measure(mask);
            mask[ci] = 0;
            if (f > best_f) {
                best_f = f;
                best = static_cast<int>(ci);
            }
        }
        if (best < 0 || best_f - cur_f < p.gain_floor) break;
        mask[static_cast<size_t>(best)] = 1;
        chosen.push_back(best);
        cur_f = best_f;
    }
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

int add_repulsive_parts(Vocabulary& v, int layer) {
    if (layer < 2 || layer >= static_cast<int>(v.layers.size())) return 0;
    std::vector<Composition>& comps = v.layers[static_cast<size_t>(layer)];

    // Normal-part signature: multiset of (or id, rounded offset).
    auto signature = [](const Composition& c) {
        std::vector<std::tuple<int, int, int>> sig;
        for (const Part& p : c.parts)
            if (p.polarity == Polarity::normal)
                sig.emplace_back(p.appearance.begin()->first,
                                 static_cast<int>(std::lround(p.mu.x())),
                                 static_cast<int>(std::lround(p.mu.y())));
        std::sort(sig.begin(), sig.end());
        return sig;
    };

    int added = 0;
    std::vector<std::vector<std::tuple<int, int, int>>> sigs;
    sigs.reserve(comps.size());
    for (const Composition& c : comps) sigs.push_back(signature(c));

    for (size_t a = 0; a < comps.size(); ++a) {
        for (size_t b = 0; b < comps.size(); ++b) {
            if (a == b) continue;
            // b strictly contains a: every part of a appears in b and b has more.
            if (sigs[b].size() <= sigs[a].size()) continue;
            if (!std::includes(sigs[b].begin(), sigs[b].end(), sigs[a].begin(), sigs[a].end()))
                continue;
            std::vector<std::tuple<int, int, int>> extra;
            std::set_difference(sigs[b].begin(), sigs[b].end(), sigs[a].begin(), sigs[a].end(),
                                std::back_inserter(extra));
            int normal = 0;
            for (const Part& p : comps[a].parts)
                if (p.polarity == Polarity::normal) ++normal;
            for (const auto& [or_id, mx, my] : extra) {
                bool present = false;
                for (const Part& p : comps[a].parts)
                    if (p.polarity == Polarity::repulsive &&
                        p.appearance.begin()->first == or_id &&
                        std::lround(p.mu.x()) == mx && std::lround(p.mu.y()) == my) {
                        present = true;
                        break;
                    }
                if (present) continue;
                Part rep;
                rep.polarity = Polarity::repulsive;
                rep.appearance = {{or_id, 1.0}};
                rep.mu = Eigen::Vector2d(mx, my);
                // Geometry of repulsive parts reuses the matching part of the
                // containing composition when one exists.
                rep.sigma = Eigen::Matrix2d::Identity();
                for (const Part& p : comps[b].parts)
                    if (p.polarity == Polarity::normal &&
                        p.appearance.begin()->first == or_id &&
                        std::lround(p.mu.x()) == mx && std::lround(p.mu.y()) == my) {
                        rep.mu = p.mu;
                        rep.sigma = p.sigma;
                        break;
                    }
                comps[a].parts.push_back(rep);
                ++added;
            }
            (void)normal;
        }
    }
    for (Composition& c : comps) canonicalize_parts(c);
    return added;
}

}  // namespace shapevoc
