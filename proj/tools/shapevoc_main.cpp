// Command line driver: corpus synthesis, feature extraction, vocabulary
// learning, detection, evaluation and rendering. Subcommands read an optional
// JSON config (built-in defaults otherwise). Failures print to stderr and
// exit with code 1; files a failed run created are removed first.
#include <algorithm>
#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "shapevoc/config.hpp"
#include "shapevoc/eval.hpp"
#include "shapevoc/gabor.hpp"
#include "shapevoc/image.hpp"
#include "shapevoc/inference.hpp"
#include "shapevoc/manifest.hpp"
#include "shapevoc/multiclass.hpp"
#include "shapevoc/render.hpp"
#include "shapevoc/serialize_util.hpp"
#include "shapevoc/synth.hpp"
#include "shapevoc/vocabulary.hpp"

namespace fs = std::filesystem;
using namespace shapevoc;

namespace {

// Paths created by the running subcommand, removed in reverse order when it
// throws. Only genuinely new paths are recorded; atomic writers already keep
// pre-existing files intact on failure.
std::vector<std::string> g_created;

void mark_new(const std::string& path) {
    if (!fs::exists(path)) g_created.push_back(path);
}

void remove_created() {
    for (auto it = g_created.rbegin(); it != g_created.rend(); ++it) {
        std::error_code ec;
        fs::remove_all(*it, ec);
    }
}

PipelineConfig load_cfg(const std::string& path, uint64_t seed_override) {
    PipelineConfig cfg = path.empty() ? PipelineConfig{} : load_config(path);
    if (seed_override != 0) cfg.seed = seed_override;
    return cfg;
}

Image load_record_image(const std::string& manifest_path, const ManifestRecord& rec) {
    return load_image(join_path(manifest_dir(manifest_path), rec.path));
}

// Labeled records grouped into per-class datasets; records with split "val"
// feed the validation side, everything else the training side.
std::map<std::string, ClassDataset> build_datasets(const std::string& manifest_path,
                                                   const std::vector<ManifestRecord>& records) {
    std::map<std::string, ClassDataset> out;
    for (const ManifestRecord& rec : records) {
        if (rec.klass.empty() || rec.boxes.empty()) continue;
        ClassDataset& d = out[rec.klass];
        d.label = rec.klass;
        Image img = load_record_image(manifest_path, rec);
        if (rec.split == "val") {
            d.val.push_back(std::move(img));
            d.val_boxes.push_back(rec.boxes);
        } else {
            d.train.push_back(std::move(img));
            d.train_boxes.push_back(rec.boxes);
        }
    }
    return out;
}

void print_layer_sizes(const Vocabulary& v) {
    std::printf("layer 1: %zu models, %zu or nodes\n", v.layer1.size(), v.or_layers[1].size());
    for (int l = 2; l <= v.object_layer; ++l) {
        size_t repulsive = 0;
        for (const Composition& c : v.layers[l])
            for (size_t k = 1; k < c.parts.size(); ++k)
                if (c.parts[k].polarity == Polarity::repulsive) ++repulsive;
        std::printf("layer %d: %zu compositions (%zu repulsive parts), %zu or nodes\n", l,
                    v.layers[l].size(), repulsive,
                    l < (int)v.or_layers.size() ? v.or_layers[l].size() : 0);
    }
    for (const auto& [label, ids] : v.classes) {
        std::printf("class %s:", label.c_str());
        for (int id : ids) std::printf(" %d", id);
        std::printf("\n");
    }
}

// ---------------------------------------------------------------- detections

std::string detection_line(const std::string& path, const Detection& d) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s\t%s\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\n", path.c_str(),
                  d.klass.c_str(), d.box.x0, d.box.y0, d.box.x1, d.box.y1, d.score);
    return buf;
}

// One line per detection: path, class, x0, y0, x1, y1, score (tab separated).
std::map<std::string, std::vector<Detection>> read_detections(const std::string& path) {
    std::istringstream in(read_file_bytes(path));
    std::map<std::string, std::vector<Detection>> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string img, klass, field;
        Detection d;
        if (!std::getline(ls, img, '\t') || !std::getline(ls, klass, '\t'))
            throw std::runtime_error(path + ": malformed detection at line " +
                                     std::to_string(line_no));
        double nums[5];
        for (double& x : nums) {
            if (!std::getline(ls, field, '\t'))
                throw std::runtime_error(path + ": malformed detection at line " +
                                         std::to_string(line_no));
            x = std::stod(field);
        }
        d.klass = klass;
        d.box = {nums[0], nums[1], nums[2], nums[3]};
        d.score = nums[4];
        out[img].push_back(d);
    }
    return out;
}

EvalReport report_from_json(const std::string& path) {
    nlohmann::json j = nlohmann::json::parse(read_file_bytes(path));
    if (j.value("format", "") != "shapevoc-eval")
        throw std::runtime_error(path + ": not an evaluation report");
    EvalReport r;
    r.iou_threshold = j.at("iou_threshold").get<double>();
    r.fppi_point = j.at("fppi_point").get<double>();
    for (const auto& [label, c] : j.at("classes").items()) {
        Curve& curve = r.per_class[label];
        curve.thresholds = c.at("thresholds").get<std::vector<double>>();
        curve.recall = c.at("recall").get<std::vector<double>>();
        curve.precision = c.at("precision").get<std::vector<double>>();
        curve.fppi = c.at("fppi").get<std::vector<double>>();
        curve.recall_at_eer = c.at("recall_at_eer").get<double>();
        curve.recall_at_fppi = c.at("recall_at_fppi").get<double>();
        curve.num_truths = c.at("num_truths").get<int>();
        curve.num_images = c.at("num_images").get<int>();
    }
    return r;
}

// ---------------------------------------------------------------- subcommands

struct CommonArgs {
    std::string config;
    uint64_t seed = 0;  // 0 keeps the config seed
};

void run_synth(const CommonArgs& common, const std::string& out, int natural, int train,
               int test) {
    PipelineConfig cfg = load_cfg(common.config, common.seed);
    SynthCorpusSpec spec;
    spec.seed = cfg.seed;
    if (natural > 0) spec.natural_images = natural;
    if (train > 0) spec.train_per_class = train;
    if (test > 0) spec.test_per_class = test;
    mark_new(out);
    write_synth_corpus(out, spec);
    std::printf("wrote corpus under %s: %d natural images, %zu classes, %d train + %d test each\n",
                out.c_str(), spec.natural_images, spec.labels.size(), spec.train_per_class,
                spec.test_per_class);
}

void run_extract(const CommonArgs& common, const std::string& manifest, const std::string& out) {
    PipelineConfig cfg = load_cfg(common.config, common.seed);
    const FeatureConfig& f = cfg.features;
    std::ostringstream key_src;
    key_src << f.lambda << ' ' << f.gamma << ' ' << f.sigma << ' ' << f.num_orientations << ' '
            << f.energy_floor;
    const std::string ks = key_src.str();
    const uint64_t cfg_key = fnv1a(ks.data(), ks.size());

    auto records = load_manifest(manifest);
    mark_new(out);
    fs::create_directories(out);
    std::ostringstream index;
    int fresh = 0;
    for (const ManifestRecord& rec : records) {
        std::string bytes = read_file_bytes(join_path(manifest_dir(manifest), rec.path));
        uint64_t key = fnv1a(bytes.data(), bytes.size(), cfg_key);
        char name[32];
        std::snprintf(name, sizeof name, "%016" PRIx64 ".svfc", key);
        std::string cache_path = join_path(out, name);
        size_t count;
        if (fs::exists(cache_path)) {
            count = feature_sets_from_bytes(read_file_bytes(cache_path)).at(0).features.size();
        } else {
            FeatureSet set = extract_features(load_record_image(manifest, rec), f);
            count = set.features.size();
            mark_new(cache_path);
            write_file_atomic(cache_path, feature_sets_to_bytes({set}));
            ++fresh;
        }
        index << rec.path << '\t' << name << '\t' << count << '\n';
    }
    std::string index_path = join_path(out, "index.tsv");
    mark_new(index_path);
    write_file_atomic(index_path, index.str());
    std::printf("cached features for %zu images (%d new) under %s\n", records.size(), fresh,
                out.c_str());
}

void run_learn_generic(const CommonArgs& common, const std::string& manifest,
                       const std::string& out) {
    PipelineConfig cfg = load_cfg(common.config, common.seed);
    auto records = load_manifest(manifest);
    std::vector<Image> natural;
    natural.reserve(records.size());
    for (const ManifestRecord& rec : records) natural.push_back(load_record_image(manifest, rec));

    Vocabulary v = layer1_default(cfg.features, cfg.learning.num_layers, cfg.tau_by_layer(),
                                  cfg.radii_by_layer(), cfg.rho_by_layer(),
                                  cfg.inference.epsilon_ref, cfg.inference.alpha_repulsive);
    learn_generic_layers(v, natural, cfg);
    auto problems = validate(v);
    if (!problems.empty()) throw std::runtime_error("invalid vocabulary: " + problems.front());
    mark_new(out);
    save_vocabulary(v, out);
    print_layer_sizes(v);
}

void run_learn_class(const CommonArgs& common, const std::string& vocab_path,
                     const std::string& manifest, const std::string& label,
                     const std::string& out) {
    PipelineConfig cfg = load_cfg(common.config, common.seed);
    Vocabulary v = load_vocabulary(vocab_path);
    auto datasets = build_datasets(manifest, load_manifest(manifest));
    auto it = datasets.find(label);
    if (it == datasets.end())
        throw std::runtime_error("no records labeled '" + label + "' in " + manifest);

    std::vector<size_t> before(v.object_layer + 1);
    for (int l = 2; l <= v.object_layer; ++l) before[l] = v.layers[l].size();
    learn_class(v, it->second, cfg);
    auto problems = validate(v);
    if (!problems.empty()) throw std::runtime_error("invalid vocabulary: " + problems.front());
    mark_new(out);
    save_vocabulary(v, out);
    for (int l = 2; l <= v.object_layer; ++l)
        std::printf("layer %d: +%zu compositions (now %zu)\n", l, v.layers[l].size() - before[l],
                    v.layers[l].size());
}

void run_thresholds(const CommonArgs& common, const std::string& vocab_path,
                    const std::string& manifest, double safety, const std::string& out) {
    PipelineConfig cfg = load_cfg(common.config, common.seed);
    Vocabulary v = load_vocabulary(vocab_path);
    auto datasets = build_datasets(manifest, load_manifest(manifest));
    std::vector<ClassDataset> classes;
    for (const auto& [label, ids] : v.classes) {
        auto it = datasets.find(label);
        if (it != datasets.end()) classes.push_back(std::move(it->second));
    }
    if (classes.empty())
        throw std::runtime_error("no records in " + manifest + " match a vocabulary class");
    if (safety < 0.0) safety = cfg.learning.safety_fraction;
    learn_thresholds(v, classes, cfg, safety);
    mark_new(out);
    save_vocabulary(v, out);
    size_t n = 0;
    for (const auto& [l, per_comp] : v.comp_tau) n += per_comp.size();
    std::printf("learned thresholds for %zu compositions (safety %.3g)\n", n, safety);
}

void run_detect(const CommonArgs& common, const std::string& vocab_path,
                const std::string& image_path, const std::string& manifest, double tau,
                const std::string& out) {
    PipelineConfig cfg = load_cfg(common.config, common.seed);
    Vocabulary v = load_vocabulary(vocab_path);
    std::vector<std::pair<std::string, Image>> images;
    if (!image_path.empty()) images.emplace_back(image_path, load_image(image_path));
    if (!manifest.empty())
        for (const ManifestRecord& rec : load_manifest(manifest))
            images.emplace_back(rec.path, load_record_image(manifest, rec));
    if (images.empty()) throw std::runtime_error("detect: need --image or --images");

    std::ostringstream lines;
    size_t total = 0;
    for (const auto& [path, img] : images) {
        std::vector<Detection> dets = detect(img, v, cfg.detection, tau);
        total += dets.size();
        for (const Detection& d : dets) lines << detection_line(path, d);
    }
    if (out.empty() || out == "-") {
        std::fputs(lines.str().c_str(), stdout);
    } else {
        mark_new(out);
        write_file_atomic(out, lines.str());
        std::printf("%zu detections over %zu images -> %s\n", total, images.size(), out.c_str());
    }
}

void run_evaluate(const CommonArgs& common, const std::string& dets_path,
                  const std::string& truth_manifest, double iou, double fppi,
                  const std::string& out, const std::string& plot) {
    PipelineConfig cfg = load_cfg(common.config, common.seed);
    if (iou < 0.0) iou = cfg.detection.iou_threshold;
    if (fppi < 0.0) fppi = cfg.detection.fppi_point;

    auto records = load_manifest(truth_manifest);
    std::map<std::string, size_t> index;
    std::vector<std::vector<Detection>> dets(records.size());
    std::vector<std::vector<BoxI>> boxes(records.size());
    std::vector<std::vector<std::string>> labels(records.size());
    for (size_t i = 0; i < records.size(); ++i) {
        index[records[i].path] = i;
        for (const BoxI& b : records[i].boxes) {
            boxes[i].push_back(b);
            labels[i].push_back(records[i].klass);
        }
    }
    for (auto& [path, per_image] : read_detections(dets_path)) {
        auto it = index.find(path);
        if (it == index.end())
            throw std::runtime_error("detections mention " + path + " which is not in " +
                                     truth_manifest);
        dets[it->second] = std::move(per_image);
    }

    EvalReport report = evaluate(dets, boxes, labels, iou, fppi);
    mark_new(out);
    write_file_atomic(out, report_to_json(report));
    for (const auto& [label, curve] : report.per_class)
        std::printf("%s: recall@EER %.4f, recall@%.2g fppi %.4f (%d truths)\n", label.c_str(),
                    curve.recall_at_eer, fppi, curve.recall_at_fppi, curve.num_truths);
    if (!plot.empty()) {
        mark_new(plot);
        save_png(render_curves(report), plot);
    }
}

void run_classify_features(const CommonArgs& common, const std::string& vocab_path,
                           const std::string& manifest, int layer, const std::string& out) {
    PipelineConfig cfg = load_cfg(common.config, common.seed);
    Vocabulary v = load_vocabulary(vocab_path);
    if (layer <= 0) layer = cfg.detection.classification_layer;
    std::ostringstream lines;
    for (const ManifestRecord& rec : load_manifest(manifest)) {
        InferOptions opt;
        opt.max_layer = layer;
        InferenceGraph g = infer_image(load_record_image(manifest, rec), v, layer, opt);
        nlohmann::json j{{"path", rec.path},
                         {"class", rec.klass},
                         {"features", classification_features(g, v, layer)}};
        lines << j.dump() << '\n';
    }
    mark_new(out);
    write_file_atomic(out, lines.str());
}

void run_inspect(const std::string& vocab_path) {
    Vocabulary v = load_vocabulary(vocab_path);
    std::printf("object layer: %d\n", v.object_layer);
    print_layer_sizes(v);
    size_t n = 0;
    for (const auto& [l, per_comp] : v.comp_tau) n += per_comp.size();
    std::printf("learned thresholds: %zu compositions\n", n);
    if (v.classes.size() >= 2) {
        for (int l = 2; l < v.object_layer; ++l) {
            auto [mean, stddev] = degree_share(v, l);
            std::printf("degree share layer %d: %.4f (stddev %.4f)\n", l, mean, stddev);
        }
    }
    std::printf("storage: %ju bytes\n", (uintmax_t)fs::file_size(vocab_path));
}

void run_render(const std::string& vocab_path, const std::string& compositions_dir, int layer,
                int comp, const std::string& sharing_out, const std::string& image_path,
                const std::string& dets_path, const std::string& overlay_out,
                const std::string& report_path, const std::string& curves_out) {
    bool did = false;
    if (!compositions_dir.empty()) {
        Vocabulary v = load_vocabulary(vocab_path);
        mark_new(compositions_dir);
        fs::create_directories(compositions_dir);
        int lo = layer > 0 ? layer : 2;
        int hi = layer > 0 ? layer : v.object_layer;
        int count = 0;
        for (int l = lo; l <= hi; ++l) {
            for (const Composition& c : v.layers[l]) {
                if (comp >= 0 && c.id != comp) continue;
                char name[64];
                std::snprintf(name, sizeof name, "layer%d_comp%03d.png", l, c.id);
                std::string path = join_path(compositions_dir, name);
                mark_new(path);
                save_png(render_composition(v, l, c.id), path);
                ++count;
            }
        }
        if (count == 0) throw std::runtime_error("render: no compositions matched");
        std::printf("rendered %d compositions under %s\n", count, compositions_dir.c_str());
        did = true;
    }
    if (!sharing_out.empty()) {
        Vocabulary v = load_vocabulary(vocab_path);
        mark_new(sharing_out);
        write_file_atomic(sharing_out, sharing_graph_dot(v));
        std::printf("wrote sharing graph %s\n", sharing_out.c_str());
        did = true;
    }
    if (!overlay_out.empty()) {
        if (image_path.empty() || dets_path.empty())
            throw std::runtime_error("render: --overlay needs --image and --detections");
        Image img = load_image(image_path);
        auto grouped = read_detections(dets_path);
        std::vector<Detection> dets;
        if (auto it = grouped.find(image_path); it != grouped.end()) dets = it->second;
        mark_new(overlay_out);
        save_png(render_detections(img, dets), overlay_out);
        std::printf("wrote overlay %s (%zu detections)\n", overlay_out.c_str(), dets.size());
        did = true;
    }
    if (!curves_out.empty()) {
        if (report_path.empty()) throw std::runtime_error("render: --curves needs --report");
        mark_new(curves_out);
        save_png(render_curves(report_from_json(report_path)), curves_out);
        std::printf("wrote curves %s\n", curves_out.c_str());
        did = true;
    }
    if (!did)
        throw std::runtime_error(
            "render: pick at least one of --compositions, --sharing, --overlay, --curves");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hierarchical compositional shape vocabulary toolkit"};
    app.require_subcommand(1);

    CommonArgs common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config, "pipeline config JSON");
        sub->add_option("--seed", common.seed, "override the config seed");
    };

    std::string out, manifest, vocab_path, label, image_path, dets_path, truth_manifest;
    std::string plot, sharing_out, overlay_out, report_path, curves_out, compositions_dir;
    int natural = 0, train = 0, test = 0, layer = 0, comp = -1;
    double tau = -1.0, safety = -1.0, iou = -1.0, fppi = -1.0;

    CLI::App* synth = app.add_subcommand("synth", "generate the synthetic shape corpus");
    add_common(synth);
    synth->add_option("--out", out, "corpus directory")->required();
    synth->add_option("--natural", natural, "number of unlabeled images");
    synth->add_option("--train", train, "training images per class");
    synth->add_option("--test", test, "test images per class");
    synth->callback([&] { run_synth(common, out, natural, train, test); });

    CLI::App* extract = app.add_subcommand("extract", "fill a feature cache from a manifest");
    add_common(extract);
    extract->add_option("--images", manifest, "image manifest (JSONL)")->required();
    extract->add_option("--out", out, "cache directory")->required();
    extract->callback([&] { run_extract(common, manifest, out); });

    CLI::App* generic = app.add_subcommand("learn-generic",
                                           "layer-1 statistics plus the shared generic layers");
    add_common(generic);
    generic->add_option("--images", manifest, "unlabeled image manifest")->required();
    generic->add_option("--out", out, "output vocabulary JSON")->required();
    generic->callback([&] { run_learn_generic(common, manifest, out); });

    CLI::App* cls = app.add_subcommand("learn-class", "append one object class to a vocabulary");
    add_common(cls);
    cls->add_option("--vocab", vocab_path, "input vocabulary")->required();
    cls->add_option("--images", manifest, "labeled manifest with train/val splits")->required();
    cls->add_option("--label", label, "class label to learn")->required();
    cls->add_option("--out", out, "output vocabulary JSON")->required();
    cls->callback([&] { run_learn_class(common, vocab_path, manifest, label, out); });

    CLI::App* thr = app.add_subcommand("thresholds", "per-composition score thresholds");
    add_common(thr);
    thr->add_option("--vocab", vocab_path, "input vocabulary")->required();
    thr->add_option("--images", manifest, "labeled manifest")->required();
    thr->add_option("--safety", safety, "fraction of the minimum positive score");
    thr->add_option("--out", out, "output vocabulary JSON")->required();
    thr->callback([&] { run_thresholds(common, vocab_path, manifest, safety, out); });

    CLI::App* det = app.add_subcommand("detect", "multi-scale detection");
    add_common(det);
    det->add_option("--vocab", vocab_path, "vocabulary")->required();
    det->add_option("--image", image_path, "single image");
    det->add_option("--images", manifest, "image manifest");
    det->add_option("--tau", tau, "threshold override (>= 0 replaces learned thresholds)");
    det->add_option("--out", out, "detections file, '-' or empty for stdout");
    det->callback([&] { run_detect(common, vocab_path, image_path, manifest, tau, out); });

    CLI::App* ev = app.add_subcommand("evaluate", "recall/precision/FPPI report from detections");
    add_common(ev);
    ev->add_option("--detections", dets_path, "detections file from 'detect'")->required();
    ev->add_option("--truth", truth_manifest, "ground-truth manifest")->required();
    ev->add_option("--iou", iou, "match threshold");
    ev->add_option("--fppi", fppi, "FPPI operating point");
    ev->add_option("--out", out, "report JSON")->required();
    ev->add_option("--plot", plot, "also render recall-vs-FPPI curves (PNG)");
    ev->callback([&] { run_evaluate(common, dets_path, truth_manifest, iou, fppi, out, plot); });

    CLI::App* feats = app.add_subcommand("classify-features",
                                         "fixed-length per-image feature vectors (JSONL)");
    add_common(feats);
    feats->add_option("--vocab", vocab_path, "vocabulary")->required();
    feats->add_option("--images", manifest, "image manifest")->required();
    feats->add_option("--layer", layer, "OR layer to pool (default from config)");
    feats->add_option("--out", out, "output JSONL")->required();
    feats->callback([&] { run_classify_features(common, vocab_path, manifest, layer, out); });

    CLI::App* ins = app.add_subcommand("inspect", "layer sizes, classes, sharing, storage");
    ins->add_option("--vocab", vocab_path, "vocabulary")->required();
    ins->callback([&] { run_inspect(vocab_path); });

    CLI::App* ren = app.add_subcommand("render", "mean shapes, overlays, sharing graph, curves");
    ren->add_option("--vocab", vocab_path, "vocabulary (for --compositions / --sharing)");
    ren->add_option("--compositions", compositions_dir, "directory for mean-shape PNGs");
    ren->add_option("--layer", layer, "restrict compositions to one layer");
    ren->add_option("--comp", comp, "restrict compositions to one id");
    ren->add_option("--sharing", sharing_out, "sharing graph DOT file");
    ren->add_option("--image", image_path, "image for --overlay");
    ren->add_option("--detections", dets_path, "detections file for --overlay");
    ren->add_option("--overlay", overlay_out, "detection overlay PNG");
    ren->add_option("--report", report_path, "evaluation report for --curves");
    ren->add_option("--curves", curves_out, "recall-vs-FPPI PNG");
    ren->callback([&] {
        run_render(vocab_path, compositions_dir, layer, comp, sharing_out, image_path, dets_path,
                   overlay_out, report_path, curves_out);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        remove_created();
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
