#include "shapevoc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "shapevoc/gabor.hpp"

namespace shapevoc {

double box_iou(const BoxI& a, const BoxI& b) {
    double ix0 = std::max(a.x0, b.x0), iy0 = std::max(a.y0, b.y0);
    double ix1 = std::min(a.x1, b.x1), iy1 = std::min(a.y1, b.y1);
    double iw = std::max(0.0, ix1 - ix0), ih = std::max(0.0, iy1 - iy0);
    double inter = iw * ih;
    double aa = std::max(0.0, a.x1 - a.x0) * std::max(0.0, a.y1 - a.y0);
    double ab = std::max(0.0, b.x1 - b.x0) * std::max(0.0, b.y1 - b.y0);
    double uni = aa + ab - inter;
    return uni <= 0.0 ? 0.0 : inter / uni;
}

BoxI support_box(const std::vector<int64_t>& support, double scale_x, double scale_y, double pad) {
    if (support.empty()) throw std::invalid_argument("support_box: empty support");
    if (scale_x <= 0.0 || scale_y <= 0.0)
        throw std::invalid_argument("support_box: scales must be positive");
    double x0 = unpack_x(support.front()), x1 = x0;
    double y0 = unpack_y(support.front()), y1 = y0;
    for (int64_t l : support) {
        x0 = std::min(x0, static_cast<double>(unpack_x(l)));
        x1 = std::max(x1, static_cast<double>(unpack_x(l)));
        y0 = std::min(y0, static_cast<double>(unpack_y(l)));
        y1 = std::max(y1, static_cast<double>(unpack_y(l)));
    }
    return BoxI{x0 / scale_x - pad, y0 / scale_y - pad, x1 / scale_x + pad, y1 / scale_y + pad};
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_thr) {
    std::sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.klass != b.klass) return a.klass < b.klass;
        if (a.level != b.level) return a.level < b.level;
        if (a.box.y0 != b.box.y0) return a.box.y0 < b.box.y0;
        return a.box.x0 < b.box.x0;
    });
    std::vector<Detection> kept;
    for (Detection& d : dets) {
        bool dup = false;
        for (const Detection& k : kept)
            if (box_iou(k.box, d.box) > iou_thr) {
                dup = true;
                break;
            }
        if (!dup) kept.push_back(std::move(d));
    }
    return kept;
}

std::vector<Detection> detect(const Image& img, const Vocabulary& v, const DetectionParams& p,
                              double tau_override) {
    std::map<int, std::string> comp_class;
    for (const auto& [label, ids] : v.classes)
        for (int id : ids)
            if (comp_class.find(id) == comp_class.end()) comp_class[id] = label;

    std::vector<PyramidLevel> pyr =
        build_pyramid(img, v.features.scales_per_octave, v.features.pyramid_min_dim,
                      v.features.pyramid_blur_factor, p.upscale, p.num_scales);

    InferOptions opt;
    opt.tau_override = tau_override;
    int O = v.object_layer;

    std::vector<Detection> dets;
    for (size_t li = 0; li < pyr.size(); ++li) {
        FeatureSet fs;
        try {
            fs = extract_features(pyr[li].image, v.features);
        } catch (const std::invalid_argument&) {
            continue;  // level smaller than the kernel support
        }
        InferenceGraph g = infer(fs, v, opt);
        if (O > g.top_layer()) continue;
        for (const CompState& s : g.layers[static_cast<size_t>(O)].comps) {
            auto it = comp_class.find(s.comp);
            if (it == comp_class.end()) continue;
            if (s.support.empty()) continue;
            BoxI b = support_box(s.support, pyr[li].scale_x, pyr[li].scale_y, p.box_pad);
            b.x0 = std::max(0.0, b.x0);
            b.y0 = std::max(0.0, b.y0);
            b.x1 = std::min(static_cast<double>(img.width), b.x1);
            b.y1 = std::min(static_cast<double>(img.height), b.y1);
            dets.push_back({it->second, s.comp, static_cast<int>(li), s.score, b});
        }
    }
    return nms(std::move(dets), p.nms_iou);
}

namespace {

Curve class_curve(const std::vector<std::vector<Detection>>& dets_per_image,
                  const std::vector<std::vector<BoxI>>& truths, double iou_threshold,
                  double fppi_point) {
    Curve c;
    c.num_images = static_cast<int>(dets_per_image.size());
    for (const auto& t : truths) c.num_truths += static_cast<int>(t.size());

    struct Det {
        double score;
        int image;
        BoxI box;
    };
    std::vector<Det> all;
    for (size_t i = 0; i < dets_per_image.size(); ++i)
        for (const Detection& d : dets_per_image[i])
            all.push_back({d.score, static_cast<int>(i), d.box});
    std::sort(all.begin(), all.end(), [](const Det& a, const Det& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.image != b.image) return a.image < b.image;
        if (a.box.y0 != b.box.y0) return a.box.y0 < b.box.y0;
        return a.box.x0 < b.box.x0;
    });

    std::vector<std::vector<char>> used(truths.size());
    for (size_t i = 0; i < truths.size(); ++i) used[i].assign(truths[i].size(), 0);
    std::vector<char> tp(all.size(), 0);
    for (size_t k = 0; k < all.size(); ++k) {
        const Det& d = all[k];
        const auto& boxes = truths[static_cast<size_t>(d.image)];
        double best = 0.0;
        int best_b = -1;
        for (size_t bi = 0; bi < boxes.size(); ++bi) {
            if (used[static_cast<size_t>(d.image)][bi]) continue;
            double o = box_iou(d.box, boxes[bi]);
            if (o > best) {
                best = o;
                best_b = static_cast<int>(bi);
            }
        }
        if (best_b >= 0 && best >= iou_threshold) {
            used[static_cast<size_t>(d.image)][static_cast<size_t>(best_b)] = 1;
            tp[k] = 1;
        }
    }

    // Sweep: one curve point per distinct score (prefix of the sorted list).
    int tps = 0, fps = 0;
    for (size_t k = 0; k < all.size(); ++k) {
        if (tp[k]) ++tps;
        else ++fps;
        if (k + 1 < all.size() && all[k + 1].score == all[k].score) continue;
        c.thresholds.push_back(all[k].score);
        c.recall.push_back(c.num_truths > 0 ? static_cast<double>(tps) / c.num_truths : 0.0);
        c.precision.push_back(static_cast<double>(tps) / static_cast<double>(tps + fps));
        c.fppi.push_back(c.num_images > 0 ? static_cast<double>(fps) / c.num_images : 0.0);
    }

    // recall@EER: interpolate the recall/precision crossing along the sweep;
    // when the curves never cross, fall back to the best min(P, R).
    double eer = 0.0;
    bool crossed = false;
    for (size_t k = 0; k + 1 < c.recall.size() && !crossed; ++k) {
        double d0 = c.precision[k] - c.recall[k];
        double d1 = c.precision[k + 1] - c.recall[k + 1];
        if ((d0 >= 0.0 && d1 <= 0.0) || (d0 <= 0.0 && d1 >= 0.0)) {
            double denom = d0 - d1;
            double a = denom == 0.0 ? 0.0 : d0 / denom;
            eer = c.recall[k] + a * (c.recall[k + 1] - c.recall[k]);
            crossed = true;
        }
    }
    if (!crossed)
        for (size_t k = 0; k < c.recall.size(); ++k)
            eer = std::max(eer, std::min(c.precision[k], c.recall[k]));
    c.recall_at_eer = eer;

    // Recall at the FPPI operating point, linear in FPPI from the implicit
    // empty-prefix point (0, 0).
    double prev_f = 0.0, prev_r = 0.0, rate = 0.0;
    bool found = false;
    for (size_t k = 0; k < c.fppi.size() && !found; ++k) {
        if (c.fppi[k] >= fppi_point) {
            double denom = c.fppi[k] - prev_f;
            double a = denom == 0.0 ? 1.0 : (fppi_point - prev_f) / denom;
            rate = prev_r + a * (c.recall[k] - prev_r);
            found = true;
        }
        prev_f = c.fppi[k];
        prev_r = c.recall[k];
    }
    if (!found) rate = prev_r;  // curve never reaches the point
    c.recall_at_fppi = rate;
    return c;
}

}  // namespace

EvalReport evaluate(const std::vector<std::vector<Detection>>& dets_per_image,
                    const std::vector<std::vector<BoxI>>& truth_boxes,
                    const std::vector<std::vector<std::string>>& truth_labels,
                    double iou_threshold, double fppi_point) {
    if (dets_per_image.size() != truth_boxes.size() || truth_boxes.size() != truth_labels.size())
        throw std::invalid_argument("evaluate: per-image inputs differ in length");
    for (size_t i = 0; i < truth_boxes.size(); ++i)
        if (truth_boxes[i].size() != truth_labels[i].size())
            throw std::invalid_argument("evaluate: truth boxes and labels differ in length");

    std::set<std::string> labels;
    for (const auto& ls : truth_labels)
        for (const auto& l : ls) labels.insert(l);
    for (const auto& ds : dets_per_image)
        for (const Detection& d : ds) labels.insert(d.klass);

    EvalReport r;
    r.iou_threshold = iou_threshold;
    r.fppi_point = fppi_point;
    for (const std::string& label : labels) {
        std::vector<std::vector<Detection>> dets(dets_per_image.size());
        std::vector<std::vector<BoxI>> truths(truth_boxes.size());
        for (size_t i = 0; i < dets_per_image.size(); ++i) {
            for (const Detection& d : dets_per_image[i])
                if (d.klass == label) dets[i].push_back(d);
            for (size_t b = 0; b < truth_boxes[i].size(); ++b)
                if (truth_labels[i][b] == label) truths[i].push_back(truth_boxes[i][b]);
        }
        r.per_class[label] = class_curve(dets, truths, iou_threshold, fppi_point);
    }
    return r;
}

std::string report_to_json(const EvalReport& r) {
    nlohmann::json j;
    j["format"] = "shapevoc-eval";
    j["version"] = 1;
    j["iou_threshold"] = r.iou_threshold;
    j["fppi_point"] = r.fppi_point;
    nlohmann::json classes = nlohmann::json::object();
    for (const auto& [label, c] : r.per_class) {
        nlohmann::json jc;
        jc["num_truths"] = c.num_truths;
        jc["num_images"] = c.num_images;
        jc["recall_at_eer"] = c.recall_at_eer;
        jc["recall_at_fppi"] = c.recall_at_fppi;
        jc["thresholds"] = c.thresholds;
        jc["recall"] = c.recall;
        jc["precision"] = c.precision;
        jc["fppi"] = c.fppi;
        classes[label] = std::move(jc);
    }
    j["classes"] = std::move(classes);
    return j.dump(1);
}

std::vector<double> classification_features(const InferenceGraph& g, const Vocabulary& v,
                                            int layer) {
    if (layer < 1 || layer >= static_cast<int>(v.or_layers.size()))
        throw std::invalid_argument("classification_features: layer out of range");
    size_t n = v.or_layers[static_cast<size_t>(layer)].size();
    const int angular = 5, radial = 2;
    std::vector<double> out(static_cast<size_t>(angular * radial) * n, 0.0);
    if (layer > g.top_layer()) return out;
    const LayerStates& ls = g.layers[static_cast<size_t>(layer)];
    if (ls.grid_w <= 0 || ls.grid_h <= 0) return out;

    double cx = 0.5 * (ls.grid_w - 1), cy = 0.5 * (ls.grid_h - 1);
    double rmax = std::hypot(std::max(cx, ls.grid_w - 1 - cx), std::max(cy, ls.grid_h - 1 - cy));
    for (const OrState& s : ls.pooled) {
        if (s.or_id < 0 || static_cast<size_t>(s.or_id) >= n) continue;
        double dx = s.x - cx, dy = s.y - cy;
        double r = std::hypot(dx, dy);
        int rbin = (rmax > 0.0 && r >= 0.5 * rmax) ? 1 : 0;
        double ang = std::atan2(dy, dx);
        if (ang < 0.0) ang += 2.0 * M_PI;
        int abin = std::min(angular - 1, static_cast<int>(ang / (2.0 * M_PI / angular)));
        size_t cell = static_cast<size_t>(rbin * angular + abin);
        out[cell * n + static_cast<size_t>(s.or_id)] += s.score;
    }
    return out;
}

}  // namespace shapevoc
