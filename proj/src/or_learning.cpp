#include "shapevoc/or_learning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace shapevoc {

std::vector<std::vector<int>> average_linkage(const std::vector<std::vector<double>>& dist,
                                              double cutoff) {
    size_t n = dist.size();
    for (const auto& row : dist)
        if (row.size() != n) throw std::invalid_argument("average_linkage: matrix not square");

    std::vector<std::vector<int>> clusters;
    for (size_t i = 0; i < n; ++i) clusters.push_back({static_cast<int>(i)});

    auto avg = [&](const std::vector<int>& a, const std::vector<int>& b) {
        double s = 0.0;
        for (int i : a)
            for (int j : b) {
                double d = dist[static_cast<size_t>(i)][static_cast<size_t>(j)];
                if (!std::isfinite(d)) return std::numeric_limits<double>::infinity();
                s += d;
            }
        return s / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
    };

    while (clusters.size() > 1) {
        double best = std::numeric_limits<double>::infinity();
        size_t bi = 0, bj = 0;
        for (size_t i = 0; i < clusters.size(); ++i)
            for (size_t j = i + 1; j < clusters.size(); ++j) {
                double d = avg(clusters[i], clusters[j]);
                if (d < best) {
                    best = d;
                    bi = i;
                    bj = j;
                }
            }
        if (!(best < cutoff)) break;
        clusters[bi].insert(clusters[bi].end(), clusters[bj].begin(), clusters[bj].end());
        std::sort(clusters[bi].begin(), clusters[bi].end());
        clusters.erase(clusters.begin() + static_cast<long>(bj));
    }
    for (auto& c : clusters) std::sort(c.begin(), c.end());
    std::sort(clusters.begin(), clusters.end(),
              [](const std::vector<int>& a, const std::vector<int>& b) { return a[0] < b[0]; });
    return clusters;
}

std::vector<std::vector<double>> comp_prototypes(const std::vector<const InferenceGraph*>& graphs,
                                                 int layer, int num_comps,
                                                 const OrLearnParams& p) {
    struct Det {
        double score;
        int graph;
        size_t idx;
        const std::vector<int64_t>* support;
    };
    std::vector<std::vector<Det>> dets(static_cast<size_t>(num_comps));
    for (size_t gi = 0; gi < graphs.size(); ++gi) {
        const InferenceGraph& g = *graphs[gi];
        if (layer > g.top_layer()) continue;
        const LayerStates& ls = g.layers[static_cast<size_t>(layer)];
        for (size_t si = 0; si < ls.comps.size(); ++si) {
            const CompState& s = ls.comps[si];
            if (s.comp < 0 || s.comp >= num_comps) continue;
            dets[static_cast<size_t>(s.comp)].push_back(
                {s.score, static_cast<int>(gi), si, &s.support});
        }
    }

    std::vector<std::vector<double>> protos(static_cast<size_t>(num_comps));
    for (int c = 0; c < num_comps; ++c) {
        auto& ds = dets[static_cast<size_t>(c)];
        std::sort(ds.begin(), ds.end(), [](const Det& a, const Det& b) {
            if (a.score != b.score) return a.score > b.score;
            if (a.graph != b.graph) return a.graph < b.graph;
            return a.idx < b.idx;
        });
        if (static_cast<int>(ds.size()) > p.sample_detections)
            ds.resize(static_cast<size_t>(p.sample_detections));
        if (ds.empty()) continue;

        std::vector<std::vector<double>> descs;
        descs.reserve(ds.size());
        for (const Det& d : ds) {
            // Single-point supports are degenerate for a shape descriptor;
            // skip those detections.
            if (d.support->size() < 2) continue;
            descs.push_back(shape_context(*d.support, p.sc));
        }
        if (descs.empty()) continue;
        size_t best = 0;
        double best_sum = std::numeric_limits<double>::infinity();
        for (size_t i = 0; i < descs.size(); ++i) {
            double s = 0.0;
            for (size_t j = 0; j < descs.size(); ++j)
                if (j != i) s += chi2_distance(descs[i], descs[j]);
            if (s < best_sum) {
                best_sum = s;
                best = i;
            }
        }
        protos[static_cast<size_t>(c)] = descs[best];
    }
    return protos;
}

void learn_or_layer(Vocabulary& v, int layer, const std::vector<const InferenceGraph*>& graphs,
                    const OrLearnParams& p, bool extend) {
    if (layer < 2 || layer >= static_cast<int>(v.layers.size()))
        throw std::invalid_argument("learn_or_layer: layer out of range");
    if (layer >= static_cast<int>(v.or_layers.size()))
        v.or_layers.resize(static_cast<size_t>(layer) + 1);
    int num_comps = static_cast<int>(v.layers[static_cast<size_t>(layer)].size());

    std::vector<OrNode>& nodes = v.or_layers[static_cast<size_t>(layer)];
    if (!extend) nodes.clear();

    std::vector<char> covered(static_cast<size_t>(num_comps), 0);
    for (const OrNode& node : nodes)
        for (int m : node.members)
            if (m >= 0 && m < num_comps) covered[static_cast<size_t>(m)] = 1;

    std::vector<int> fresh;
    for (int c = 0; c < num_comps; ++c)
        if (!covered[static_cast<size_t>(c)]) fresh.push_back(c);
    if (fresh.empty()) return;

    std::vector<std::vector<double>> protos = comp_prototypes(graphs, layer, num_comps, p);
    const double inf = std::numeric_limits<double>::infinity();
    auto proto_dist = [&](int a, int b) {
        if (protos[static_cast<size_t>(a)].empty() || protos[static_cast<size_t>(b)].empty())
            return inf;
        return chi2_distance(protos[static_cast<size_t>(a)], protos[static_cast<size_t>(b)]);
    };

    // Fresh compositions close to an existing node join it (average linkage
    // against its members); the rest are clustered among themselves.
    std::vector<int> leftover;
    for (int c : fresh) {
        double best = inf;
        int best_node = -1;
        for (const OrNode& node : nodes) {
            double s = 0.0;
            bool finite = true;
            for (int m : node.members) {
                double d = proto_dist(c, m);
                if (!std::isfinite(d)) {
                    finite = false;
                    break;
                }
                s += d;
            }
            if (!finite || node.members.empty()) continue;
            double a = s / static_cast<double>(node.members.size());
            if (a < best) {
                best = a;
                best_node = node.id;
            }
        }
        if (best_node >= 0 && best < p.cutoff) {
            OrNode& node = nodes[static_cast<size_t>(best_node)];
            node.members.push_back(c);
            std::sort(node.members.begin(), node.members.end());
        } else {
            leftover.push_back(c);
        }
    }

    if (!leftover.empty()) {
        std::vector<std::vector<double>> dist(leftover.size(),
                                              std::vector<double>(leftover.size(), 0.0));
        for (size_t i = 0; i < leftover.size(); ++i)
            for (size_t j = 0; j < leftover.size(); ++j)
                if (i != j) dist[i][j] = proto_dist(leftover[i], leftover[j]);
        for (const auto& cluster : average_linkage(dist, p.cutoff)) {
            OrNode node;
            node.id = static_cast<int>(nodes.size());
            for (int li : cluster) node.members.push_back(leftover[static_cast<size_t>(li)]);
            std::sort(node.members.begin(), node.members.end());
            nodes.push_back(std::move(node));
        }
    }
}

}  // namespace shapevoc
