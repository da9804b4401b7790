#include "shapevoc/param_learning.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

#include "shapevoc/geometry.hpp"

namespace shapevoc {

void estimate_layer1(Vocabulary& v, const std::vector<FeatureSet>& sets, double sigma_floor,
                     int min_samples) {
    if (v.layer1.empty()) throw std::invalid_argument("estimate_layer1: vocabulary has no layer-1 models");
    int n = static_cast<int>(v.layer1.size());
    std::vector<std::vector<Eigen::VectorXd>> samples(static_cast<size_t>(n));
    for (const FeatureSet& fs : sets) {
        for (const OrientedFeature& f : fs.features) {
            if (static_cast<int>(f.f.size()) != n)
                throw std::invalid_argument("estimate_layer1: feature dimension mismatch");
            if (f.dominant < 0 || f.dominant >= n)
                throw std::invalid_argument("estimate_layer1: dominant index out of range");
            double d = f.f[static_cast<size_t>(f.dominant)];
            if (d <= 0.0) continue;
            Eigen::VectorXd x(n);
            for (int i = 0; i < n; ++i) x[i] = f.f[static_cast<size_t>(i)] / d;
            samples[static_cast<size_t>(f.dominant)].push_back(std::move(x));
        }
    }
    for (int i = 0; i < n; ++i) {
        Layer1Model& m = v.layer1[static_cast<size_t>(i)];
        const auto& xs = samples[static_cast<size_t>(i)];
        if (static_cast<int>(xs.size()) < min_samples) {
            m.mu = Eigen::VectorXd::Zero(n);
            m.mu[i] = 1.0;
            m.sigma = sigma_floor * Eigen::MatrixXd::Identity(n, n);
        } else {
            Eigen::VectorXd mu = Eigen::VectorXd::Zero(n);
            for (const auto& x : xs) mu += x;
            mu /= static_cast<double>(xs.size());
            Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(n, n);
            for (const auto& x : xs) {
                Eigen::VectorXd d = x - mu;
                cov += d * d.transpose();
            }
            cov /= static_cast<double>(xs.size());
            m.mu = mu;
            m.sigma = spd_floor(cov, sigma_floor);
        }
        m.estimated = true;
    }
}

std::vector<double> refine_geometry(Vocabulary& v, int layer,
                                    const std::vector<const LayerStates*>& below,
                                    const GeometryRefineParams& p,
                                    const std::vector<int>& comp_ids) {
    if (layer < 2 || layer >= static_cast<int>(v.layers.size()))
        throw std::invalid_argument("refine_geometry: layer out of range");
    std::vector<Composition>& comps = v.layers[static_cast<size_t>(layer)];
    auto wanted = [&](int id) {
        return comp_ids.empty() || std::find(comp_ids.begin(), comp_ids.end(), id) != comp_ids.end();
    };

    auto total_score = [&]() {
        double total = 0.0;
        for (const LayerStates* b : below) {
            LayerStates ls = build_layer(v, layer, *b);
            for (const CompState& s : ls.comps) total += s.score;
        }
        return total;
    };

    std::vector<double> trace;
    trace.push_back(total_score());

    for (int round = 0; round < p.rounds; ++round) {
        // Offsets of the winning child per (composition, part), one sample
        // per anchor state.
        std::map<std::pair<int, size_t>, std::vector<Eigen::Vector2d>> offsets;
        for (const LayerStates* b : below) {
            LayerStates ls = build_layer(v, layer, *b);
            for (const CompState& s : ls.comps) {
                const Composition& comp = v.comp(layer, s.comp);
                for (size_t k = 0; k < comp.parts.size(); ++k) {
                    int32_t c = s.children[k];
                    if (c < 0) continue;
                    const OrState& child = b->pooled[static_cast<size_t>(c)];
                    offsets[{s.comp, k}].push_back(
                        Eigen::Vector2d(child.x - s.x, child.y - s.y));
                }
            }
        }

        std::vector<Composition> backup = comps;
        bool changed = false;
        for (Composition& comp : comps) {
            if (!wanted(comp.id)) continue;
            for (size_t k = 1; k < comp.parts.size(); ++k) {
                Part& part = comp.parts[k];
                if (part.polarity != Polarity::normal) continue;
                auto it = offsets.find({comp.id, k});
                if (it == offsets.end() || it->second.size() < 2) continue;
                const auto& xs = it->second;
                Eigen::Vector2d mu = Eigen::Vector2d::Zero();
                for (const auto& x : xs) mu += x;
                mu /= static_cast<double>(xs.size());
                Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
                for (const auto& x : xs) {
                    Eigen::Vector2d d = x - mu;
                    cov += d * d.transpose();
                }
                cov /= static_cast<double>(xs.size());
                part.mu = mu;
                part.sigma = spd_floor(cov, p.sigma_floor);
                changed = true;
            }
        }
        if (!changed) {
            trace.push_back(trace.back());
            continue;
        }
        double now = total_score();
        if (now + 1e-12 < trace.back()) {
            comps = std::move(backup);
            trace.push_back(trace.back());
            break;
        }
        trace.push_back(now);
    }
    return trace;
}

void estimate_object_appearance(Vocabulary& v, const std::vector<const InferenceGraph*>& graphs,
                                double min_iou, const std::vector<int>& comp_ids) {
    int O = v.object_layer;
    if (O >= static_cast<int>(v.layers.size()))
        throw std::invalid_argument("estimate_object_appearance: vocabulary has no object layer");
    std::vector<Composition>& comps = v.layers[static_cast<size_t>(O)];
    auto wanted = [&](int id) {
        return comp_ids.empty() || std::find(comp_ids.begin(), comp_ids.end(), id) != comp_ids.end();
    };

    // counts[(comp id, part)][or id]
    std::map<std::pair<int, size_t>, std::map<int, double>> counts;
    for (const InferenceGraph* g : graphs) {
        if (O > g->top_layer()) continue;
        const LayerStates& lo = g->layers[static_cast<size_t>(O)];
        const LayerStates& lb = g->layers[static_cast<size_t>(O - 1)];

        std::map<int64_t, std::vector<size_t>> at_loc;
        for (size_t i = 0; i < lb.pooled.size(); ++i)
            at_loc[pack_loc(lb.pooled[i].x, lb.pooled[i].y)].push_back(i);

        for (const CompState& s : lo.comps) {
            if (!wanted(s.comp)) continue;
            for (size_t k = 0; k < s.children.size(); ++k) {
                int32_t c = s.children[k];
                if (c < 0) continue;
                const OrState& child = lb.pooled[static_cast<size_t>(c)];
                const std::vector<int64_t>& csup =
                    lb.comps[static_cast<size_t>(child.best)].support;
                for (size_t j : at_loc[pack_loc(child.x, child.y)]) {
                    const OrState& other = lb.pooled[j];
                    const std::vector<int64_t>& osup =
                        lb.comps[static_cast<size_t>(other.best)].support;
                    if (support_overlap(csup, osup) >= min_iou)
                        counts[{s.comp, k}][other.or_id] += 1.0;
                }
            }
        }
    }

    for (Composition& comp : comps) {
        if (!wanted(comp.id)) continue;
        for (size_t k = 0; k < comp.parts.size(); ++k) {
            Part& part = comp.parts[k];
            if (part.polarity != Polarity::normal) continue;
            auto it = counts.find({comp.id, k});
            if (it == counts.end()) continue;
            double total = 0.0;
            for (const auto& [or_id, c] : it->second) total += c;
            if (total <= 0.0) continue;
            std::map<int, double> hist;
            for (const auto& [or_id, c] : it->second)
                if (c > 0.0) hist[or_id] = c / total;
            if (!hist.empty()) part.appearance = std::move(hist);
        }
    }
}

}  // namespace shapevoc
