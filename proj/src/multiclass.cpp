#include "shapevoc/multiclass.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

#include "shapevoc/gabor.hpp"
#include "shapevoc/or_learning.hpp"
#include "shapevoc/param_learning.hpp"
#include "shapevoc/rng.hpp"
#include "shapevoc/structure_learning.hpp"

namespace shapevoc {

std::pair<Image, BoxI> crop_object(const Image& img, const BoxI& box, double margin,
                                   double diagonal) {
    double bw = box.x1 - box.x0, bh = box.y1 - box.y0;
    if (bw <= 0.0 || bh <= 0.0) throw std::invalid_argument("crop_object: degenerate box");
    if (diagonal <= 0.0) throw std::invalid_argument("crop_object: diagonal must be positive");

    int cx0 = std::max(0, static_cast<int>(std::floor(box.x0 - margin * bw)));
    int cy0 = std::max(0, static_cast<int>(std::floor(box.y0 - margin * bh)));
    int cx1 = std::min(img.width, static_cast<int>(std::ceil(box.x1 + margin * bw)));
    int cy1 = std::min(img.height, static_cast<int>(std::ceil(box.y1 + margin * bh)));
    if (cx1 <= cx0 || cy1 <= cy0) throw std::invalid_argument("crop_object: box outside image");

    Image crop(cx1 - cx0, cy1 - cy0);
    for (int y = cy0; y < cy1; ++y)
        for (int x = cx0; x < cx1; ++x) crop.at(x - cx0, y - cy0) = img.at(x, y);

    double s = diagonal / std::hypot(bw, bh);
    int nw = std::max(1, static_cast<int>(std::lround(crop.width * s)));
    int nh = std::max(1, static_cast<int>(std::lround(crop.height * s)));
    double sx = static_cast<double>(nw) / crop.width;
    double sy = static_cast<double>(nh) / crop.height;
    Image scaled = resize_bilinear(crop, nw, nh);

    BoxI out{(box.x0 - cx0) * sx, (box.y0 - cy0) * sy, (box.x1 - cx0) * sx, (box.y1 - cy0) * sy};
    return {std::move(scaled), out};
}

InferenceGraph infer_image(const Image& img, const Vocabulary& v, int max_layer,
                           const InferOptions& opt) {
    FeatureSet fs = extract_features(img, v.features);
    InferOptions o = opt;
    o.max_layer = max_layer;
    return infer(fs, v, o);
}

namespace {

ModeParams mode_params(const PipelineConfig& cfg, int layer) {
    ModeParams mp;
    mp.mass_floor_frac = cfg.learning.mode_mass_floor;
    mp.min_separation = cfg.learning.mode_min_separation;
    mp.fit_window = cfg.learning.mode_fit_window;
    mp.smooth = layer > cfg.learning.hist_smooth_above_layer;
    mp.sigma_floor = cfg.learning.geometry_sigma_floor;
    return mp;
}

EnumerateParams enumerate_params(const PipelineConfig& cfg, const Vocabulary& v, int layer) {
    EnumerateParams ep;
    ep.tau = v.tau(layer);
    ep.radius = v.radii[static_cast<size_t>(layer)];
    ep.overlap_max = cfg.learning.overlap_max;
    ep.max_centers_per_image = cfg.learning.max_centers_per_image;
    ep.max_duplets_per_neighborhood = cfg.learning.max_duplets_per_neighborhood;
    ep.max_pool_candidates = layer == v.object_layer ? cfg.learning.object_pool_candidates
                                                     : cfg.learning.max_pool_candidates;
    ep.seed = fork_seed(cfg.seed, "enumerate") + static_cast<uint64_t>(layer);
    return ep;
}

OrLearnParams or_params(const PipelineConfig& cfg) {
    OrLearnParams p;
    p.cutoff = cfg.learning.or_cluster_cutoff;
    p.sample_detections = cfg.learning.or_sample_detections;
    p.sc.radial_bins = cfg.learning.sc_radial_bins;
    p.sc.angular_bins = cfg.learning.sc_angular_bins;
    return p;
}

std::vector<const InferenceGraph*> ptrs(const std::vector<InferenceGraph>& gs) {
    std::vector<const InferenceGraph*> out;
    out.reserve(gs.size());
    for (const InferenceGraph& g : gs) out.push_back(&g);
    return out;
}

std::vector<const LayerStates*> layer_ptrs(const std::vector<InferenceGraph>& gs, int layer) {
    std::vector<const LayerStates*> out;
    for (const InferenceGraph& g : gs)
        if (layer <= g.top_layer()) out.push_back(&g.layers[static_cast<size_t>(layer)]);
    return out;
}

// One learning pass for a single composition layer: histograms over the OR
// states below, duplets from their modes, candidate enumeration, greedy
// selection with MCMC refinement, instantiation. Existing compositions are
// preselected and frozen. Returns the ids of the newly added compositions.
std::vector<int> grow_layer(Vocabulary& v, int layer, const std::vector<InferenceGraph>& graphs,
                            const PipelineConfig& cfg) {
    std::vector<const InferenceGraph*> gp = ptrs(graphs);
    HistogramSet hs = accumulate_histograms(gp, layer - 1, v.radii[static_cast<size_t>(layer)],
                                            cfg.learning.overlap_max);
    std::vector<Duplet> duplets = make_duplets(hs, mode_params(cfg, layer));

    std::vector<int> existing;
    if (layer < static_cast<int>(v.layers.size()))
        for (const Composition& c : v.layers[static_cast<size_t>(layer)]) existing.push_back(c.id);

    CandidatePool pool =
        enumerate_candidates(gp, layer, v, std::move(duplets), enumerate_params(cfg, v, layer),
                             existing);

    SelectionParams sp;
    sp.C = parts_penalty(pool, cfg.learning.parts_penalty_frac);
    sp.residual_epsilon = cfg.learning.residual_epsilon;
    sp.stop_frac = cfg.learning.stop_frac;

    std::vector<int> preselected;
    for (size_t i = 0; i < existing.size(); ++i) preselected.push_back(static_cast<int>(i));

    Selection sel = greedy_select(pool, sp, preselected);
    McmcParams mp;
    mp.beta = cfg.learning.mcmc_beta;
    mp.iterations = cfg.learning.mcmc_iterations;
    mp.exchange_prob = cfg.learning.mcmc_exchange_prob;
    Rng rng(fork_seed(cfg.seed, "mcmc") + static_cast<uint64_t>(layer));
    sel = mcmc_refine(pool, sel.chosen, sp, mp, rng, preselected);

    if (static_cast<int>(v.layers.size()) <= layer) v.layers.resize(static_cast<size_t>(layer) + 1);
    int next_id = static_cast<int>(v.layers[static_cast<size_t>(layer)].size());
    std::vector<Composition> fresh =
        instantiate_candidates(pool, sel.chosen, v.epsilon_ref, next_id);
    std::vector<int> new_ids;
    for (Composition& c : fresh) {
        new_ids.push_back(c.id);
        v.layers[static_cast<size_t>(layer)].push_back(std::move(c));
    }
    return new_ids;
}

void rebuild(std::vector<InferenceGraph>& graphs, const std::vector<FeatureSet>& sets,
             const Vocabulary& v, int max_layer) {
    graphs.clear();
    InferOptions opt;
    opt.max_layer = max_layer;
    for (const FeatureSet& fs : sets) graphs.push_back(infer(fs, v, opt));
}

std::vector<FeatureSet> extract_all(const std::vector<Image>& images, const Vocabulary& v) {
    std::vector<FeatureSet> sets;
    sets.reserve(images.size());
    for (const Image& img : images) sets.push_back(extract_features(img, v.features));
    return sets;
}

}  // namespace

void learn_generic_layers(Vocabulary& v, const std::vector<Image>& natural,
                          const PipelineConfig& cfg) {
    if (natural.empty())
        throw std::invalid_argument("learn_generic_layers: no natural images given");
    std::vector<FeatureSet> sets = extract_all(natural, v);
    estimate_layer1(v, sets, cfg.learning.layer1_sigma_floor, cfg.learning.layer1_min_samples);

    std::vector<InferenceGraph> graphs;
    for (int l = 2; l <= cfg.learning.generic_layers; ++l) {
        rebuild(graphs, sets, v, l - 1);
        std::vector<int> added = grow_layer(v, l, graphs, cfg);
        if (v.layers[static_cast<size_t>(l)].empty())
            throw std::runtime_error("learn_generic_layers: no compositions selected at layer " +
                                     std::to_string(l));
        rebuild(graphs, sets, v, l - 1);
        GeometryRefineParams gp{cfg.learning.em_rounds, cfg.learning.geometry_sigma_floor};
        refine_geometry(v, l, layer_ptrs(graphs, l - 1), gp, added);

        rebuild(graphs, sets, v, l);
        learn_or_layer(v, l, ptrs(graphs), or_params(cfg), false);
    }
}

void learn_class(Vocabulary& v, const ClassDataset& data, const PipelineConfig& cfg) {
    if (data.label.empty()) throw std::invalid_argument("learn_class: empty class label");
    if (v.classes.count(data.label))
        throw std::invalid_argument("learn_class: class '" + data.label + "' already learned");
    if (data.train.empty()) throw std::invalid_argument("learn_class: empty class dataset");
    if (data.train.size() != data.train_boxes.size() || data.val.size() != data.val_boxes.size())
        throw std::invalid_argument("learn_class: images/boxes size mismatch");

    // Object-centered crops at the canonical training scale.
    std::vector<Image> crops;
    std::vector<BoxI> crop_boxes;
    for (size_t i = 0; i < data.train.size(); ++i)
        for (const BoxI& b : data.train_boxes[i]) {
            auto [img, box] =
                crop_object(data.train[i], b, cfg.learning.crop_margin,
                            cfg.learning.object_diagonal);
            crops.push_back(std::move(img));
            crop_boxes.push_back(box);
        }
    std::vector<Image> val_crops;
    std::vector<std::vector<BoxI>> val_crop_boxes;
    for (size_t i = 0; i < data.val.size(); ++i)
        for (const BoxI& b : data.val_boxes[i]) {
            auto [img, box] =
                crop_object(data.val[i], b, cfg.learning.crop_margin,
                            cfg.learning.object_diagonal);
            val_crops.push_back(std::move(img));
            val_crop_boxes.push_back({box});
        }
    if (crops.empty()) throw std::invalid_argument("learn_class: no training boxes");
    if (val_crops.empty()) throw std::invalid_argument("learn_class: no validation boxes");

    std::vector<FeatureSet> sets = extract_all(crops, v);
    std::vector<FeatureSet> val_sets = extract_all(val_crops, v);
    int O = v.object_layer;

    std::vector<InferenceGraph> graphs;
    for (int l = cfg.learning.generic_layers + 1; l < O; ++l) {
        rebuild(graphs, sets, v, l - 1);
        std::vector<int> added = grow_layer(v, l, graphs, cfg);
        if (v.layers[static_cast<size_t>(l)].empty())
            throw std::runtime_error("learn_class: no compositions at layer " + std::to_string(l));
        if (!added.empty()) {
            rebuild(graphs, sets, v, l - 1);
            GeometryRefineParams gp{cfg.learning.em_rounds, cfg.learning.geometry_sigma_floor};
            refine_geometry(v, l, layer_ptrs(graphs, l - 1), gp, added);
        }
        rebuild(graphs, sets, v, l);
        learn_or_layer(v, l, ptrs(graphs), or_params(cfg), true);
    }

    // Object layer: enumerate aspect candidates on the crops, pick by
    // detection F-measure on the validation crops.
    rebuild(graphs, sets, v, O - 1);
    std::vector<const InferenceGraph*> gp = ptrs(graphs);
    HistogramSet hs =
        accumulate_histograms(gp, O - 1, v.radii[static_cast<size_t>(O)], cfg.learning.overlap_max);
    std::vector<Duplet> duplets = make_duplets(hs, mode_params(cfg, O));
    CandidatePool pool =
        enumerate_candidates(gp, O, v, std::move(duplets), enumerate_params(cfg, v, O));
    std::vector<int> all_new;
    for (size_t i = 0; i < pool.candidates.size(); ++i) all_new.push_back(static_cast<int>(i));
    std::vector<Composition> candidates =
        instantiate_candidates(pool, all_new, v.epsilon_ref, 0);
    if (candidates.empty())
        throw std::runtime_error("learn_class: no object-layer candidates for '" + data.label +
                                 "'");

    std::vector<InferenceGraph> val_graphs;
    rebuild(val_graphs, val_sets, v, O - 1);
    ObjectSelectParams op;
    op.tau = v.tau(O);
    op.gain_floor = cfg.learning.object_f_gain_floor;
    op.iou = cfg.detection.iou_threshold;
    op.nms_iou = cfg.detection.nms_iou;
    op.box_pad = cfg.detection.box_pad;
    std::vector<int> picked =
        select_object_layer(candidates, ptrs(val_graphs), val_crop_boxes, v, op);
    if (picked.empty())
        throw std::runtime_error("learn_class: object selection kept nothing for '" + data.label +
                                 "'");

    if (static_cast<int>(v.layers.size()) <= O) v.layers.resize(static_cast<size_t>(O) + 1);
    std::vector<int> class_ids;
    for (int ci : picked) {
        Composition comp = candidates[static_cast<size_t>(ci)];
        comp.id = static_cast<int>(v.layers[static_cast<size_t>(O)].size());
        class_ids.push_back(comp.id);
        v.layers[static_cast<size_t>(O)].push_back(std::move(comp));
    }
    v.classes[data.label] = class_ids;

    // Object-layer OR nodes stay singletons; extend to cover the new ids.
    if (static_cast<int>(v.or_layers.size()) <= O) v.or_layers.resize(static_cast<size_t>(O) + 1);
    std::vector<OrNode>& onodes = v.or_layers[static_cast<size_t>(O)];
    for (int id = static_cast<int>(onodes.size());
         id < static_cast<int>(v.layers[static_cast<size_t>(O)].size()); ++id)
        onodes.push_back({id, {id}});

    rebuild(graphs, sets, v, O);
    estimate_object_appearance(v, ptrs(graphs), cfg.learning.appearance_iou, class_ids);
}

Vocabulary learn_incremental(const std::vector<Image>& natural,
                             const std::vector<ClassDataset>& classes,
                             const PipelineConfig& cfg) {
    Vocabulary v = layer1_default(cfg.features, cfg.learning.num_layers, cfg.tau_by_layer(),
                                  cfg.radii_by_layer(), cfg.rho_by_layer(),
                                  cfg.inference.epsilon_ref, cfg.inference.alpha_repulsive);
    learn_generic_layers(v, natural, cfg);
    for (const ClassDataset& data : classes) learn_class(v, data, cfg);
    return v;
}

void learn_thresholds(Vocabulary& v, const std::vector<ClassDataset>& classes,
                      const PipelineConfig& cfg, double safety_fraction) {
    if (safety_fraction < 0.0)
        throw std::invalid_argument("learn_thresholds: negative safety fraction");
    int O = v.object_layer;
    std::map<std::pair<int, int>, double> min_score;  // (layer, comp id) -> min
    int positives = 0;

    InferOptions opt;
    opt.use_learned_tau = false;  // thresholds derive from the unpruned pass

    for (const ClassDataset& data : classes) {
        auto cit = v.classes.find(data.label);
        if (cit == v.classes.end())
            throw std::invalid_argument("learn_thresholds: unknown class '" + data.label + "'");
        const std::vector<int>& own = cit->second;

        for (size_t i = 0; i < data.train.size(); ++i) {
            for (const BoxI& b : data.train_boxes[i]) {
                auto [crop, cbox] = crop_object(data.train[i], b, cfg.learning.crop_margin,
                                                cfg.learning.object_diagonal);
                InferenceGraph g = infer_image(crop, v, O, opt);
                if (O > g.top_layer()) continue;
                const LayerStates& lo = g.layers[static_cast<size_t>(O)];

                int best = -1;
                for (size_t si = 0; si < lo.comps.size(); ++si) {
                    const CompState& s = lo.comps[si];
                    if (std::find(own.begin(), own.end(), s.comp) == own.end()) continue;
                    if (best < 0 || s.score > lo.comps[static_cast<size_t>(best)].score)
                        best = static_cast<int>(si);
                }
                if (best < 0) continue;
                const CompState& top = lo.comps[static_cast<size_t>(best)];
                if (top.support.empty()) continue;
                BoxI db = support_box(top.support, 1.0, 1.0, cfg.detection.box_pad);
                if (box_iou(db, cbox) < cfg.detection.iou_threshold) continue;

                ParseGraph pg = parse_graph(g, O, best);
                for (size_t l = 1; l < pg.comp_indices.size(); ++l)
                    for (int idx : pg.comp_indices[l]) {
                        const CompState& s = g.layers[l].comps[static_cast<size_t>(idx)];
                        auto key = std::make_pair(static_cast<int>(l), s.comp);
                        auto it = min_score.find(key);
                        if (it == min_score.end() || s.score < it->second)
                            min_score[key] = s.score;
                    }
                ++positives;
            }
        }
    }
    if (positives == 0) throw std::runtime_error("learn_thresholds: no positive detections");

    v.comp_tau.clear();
    for (const auto& [key, m] : min_score)
        v.comp_tau[key.first][key.second] = safety_fraction * m;
}

std::pair<double, double> degree_share(const Vocabulary& v, int layer) {
    if (v.classes.size() < 2)
        throw std::invalid_argument("degree_share: needs at least two classes");
    if (layer < 1 || layer >= static_cast<int>(v.or_layers.size()) ||
        v.or_layers[static_cast<size_t>(layer)].empty())
        throw std::invalid_argument("degree_share: no OR nodes at layer " + std::to_string(layer));

    int O = v.object_layer;
    // used[l] per class: OR ids at layer l reachable from its object comps.
    std::vector<std::map<int, std::set<int>>> usage;  // class -> layer -> or ids
    for (const auto& [label, members] : v.classes) {
        std::map<int, std::set<int>> used;
        std::set<int> comps(members.begin(), members.end());
        for (int l = O; l >= 2; --l) {
            std::set<int> next;
            for (int cid : comps) {
                const Composition& c = v.comp(l, cid);
                for (const Part& p : c.parts)
                    for (const auto& [or_id, w] : p.appearance) {
                        if (w <= 0.0) continue;
                        used[l - 1].insert(or_id);
                        if (l - 1 >= 1 && l - 1 < static_cast<int>(v.or_layers.size())) {
                            const auto& nodes = v.or_layers[static_cast<size_t>(l - 1)];
                            if (or_id >= 0 && or_id < static_cast<int>(nodes.size()))
                                for (int m : nodes[static_cast<size_t>(or_id)].members)
                                    next.insert(m);
                        }
                    }
            }
            comps = std::move(next);
        }
        usage.push_back(std::move(used));
    }

    const auto& nodes = v.or_layers[static_cast<size_t>(layer)];
    double C = static_cast<double>(v.classes.size());
    std::vector<double> shares;
    for (const OrNode& node : nodes) {
        int used = 0;
        for (const auto& u : usage) {
            auto it = u.find(layer);
            if (it != u.end() && it->second.count(node.id)) ++used;
        }
        shares.push_back((std::max(used, 1) - 1) / (C - 1.0));
    }
    double mean = 0.0;
    for (double s : shares) mean += s;
    mean /= static_cast<double>(shares.size());
    double var = 0.0;
    for (double s : shares) var += (s - mean) * (s - mean);
    var /= static_cast<double>(shares.size());
    return {mean, std::sqrt(var)};
}

}  // namespace shapevoc
