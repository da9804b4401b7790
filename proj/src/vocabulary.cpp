#include "shapevoc/vocabulary.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "shapevoc/serialize_util.hpp"

using json = nlohmann::json;

namespace shapevoc {

const Composition& Vocabulary::comp(int layer, int id) const {
    const auto& L = layers.at(static_cast<size_t>(layer));
    if (id >= 0 && id < static_cast<int>(L.size()) && L[static_cast<size_t>(id)].id == id)
        return L[static_cast<size_t>(id)];
    for (const Composition& c : L)
        if (c.id == id) return c;
    throw std::out_of_range("unknown composition id " + std::to_string(id) + " at layer " +
                            std::to_string(layer));
}

double Vocabulary::effective_tau(int layer, int comp_id) const {
    auto lit = comp_tau.find(layer);
    if (lit != comp_tau.end()) {
        auto cit = lit->second.find(comp_id);
        if (cit != lit->second.end()) return cit->second;
    }
    return global_tau[static_cast<size_t>(layer)];
}

double Vocabulary::rho_cum(int layer) const {
    double f = 1.0;
    for (int l = 1; l <= layer && l < static_cast<int>(rho.size()); ++l) f *= rho[static_cast<size_t>(l)];
    return f;
}

int Vocabulary::or_node_of(int layer, int comp_id) const {
    if (layer >= static_cast<int>(or_layers.size())) return -1;
    for (const OrNode& node : or_layers[static_cast<size_t>(layer)])
        if (std::binary_search(node.members.begin(), node.members.end(), comp_id)) return node.id;
    return -1;
}

Vocabulary layer1_default(const FeatureConfig& cfg, int object_layer,
                          const std::vector<double>& global_tau, const std::vector<double>& radii,
                          const std::vector<double>& rho, double epsilon_ref, double alpha_repulsive) {
    if (object_layer < 2) throw std::invalid_argument("layer1_default: need at least two layers");
    Vocabulary v;
    v.object_layer = object_layer;
    v.features = cfg;
    v.epsilon_ref = epsilon_ref;
    v.alpha_repulsive = alpha_repulsive;
    v.global_tau = global_tau;
    v.radii = radii;
    v.rho = rho;
    if (v.global_tau.size() != static_cast<size_t>(object_layer) + 1 ||
        v.radii.size() != static_cast<size_t>(object_layer) + 1 ||
        v.rho.size() != static_cast<size_t>(object_layer) + 1)
        throw std::invalid_argument("layer1_default: tau/radii/rho must have one entry per layer");

    int n = cfg.num_orientations;
    v.layer1.resize(static_cast<size_t>(n));
    v.layers.assign(static_cast<size_t>(object_layer) + 1, {});
    v.or_layers.assign(static_cast<size_t>(object_layer) + 1, {});
    for (int i = 0; i < n; ++i) {
        Layer1Model& m = v.layer1[static_cast<size_t>(i)];
        m.id = i;
        m.mu = Eigen::VectorXd::Unit(n, i);
        m.sigma = Eigen::MatrixXd::Identity(n, n);
        m.estimated = false;
        v.or_layers[1].push_back({i, {i}});
    }
    return v;
}

void canonicalize_parts(Composition& comp) {
    if (comp.parts.size() <= 2) return;
    auto key = [](const Part& p) {
        int or_id = p.appearance.empty() ? -1 : p.appearance.begin()->first;
        long angle = std::lround(std::atan2(p.mu.y(), p.mu.x()) * 180.0 / M_PI);
        long qx = std::lround(p.mu.x() * 2.0), qy = std::lround(p.mu.y() * 2.0);
        return std::make_tuple(p.polarity == Polarity::repulsive ? 1 : 0, or_id, angle, qy, qx);
    };
    std::stable_sort(comp.parts.begin() + 1, comp.parts.end(),
                     [&](const Part& a, const Part& b) { return key(a) < key(b); });
}

std::vector<std::string> validate(const Vocabulary& v) {
    std::vector<std::string> out;
    auto bad = [&out](int layer, int id, const std::string& why) {
        std::ostringstream ss;
        ss << "layer " << layer << " comp " << id << ": " << why;
        out.push_back(ss.str());
    };

    int O = v.object_layer;
    if (v.global_tau.size() != static_cast<size_t>(O) + 1) out.push_back("global_tau has wrong length");
    if (v.radii.size() != static_cast<size_t>(O) + 1) out.push_back("radii has wrong length");
    if (v.rho.size() != static_cast<size_t>(O) + 1) out.push_back("rho has wrong length");
    for (int l = 1; l <= O && l < static_cast<int>(v.rho.size()); ++l)
        if (!(v.rho[static_cast<size_t>(l)] > 0.0 && v.rho[static_cast<size_t>(l)] <= 1.0))
            out.push_back("rho out of (0,1] at layer " + std::to_string(l));

    int n = v.features.num_orientations;
    for (size_t i = 0; i < v.layer1.size(); ++i) {
        const Layer1Model& m = v.layer1[i];
        if (m.id != static_cast<int>(i)) bad(1, m.id, "ids must be dense and ordered");
        if (m.mu.size() != n || m.sigma.rows() != n || m.sigma.cols() != n)
            bad(1, m.id, "parameter dimensions disagree with orientation count");
        else {
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m.sigma);
            if (es.eigenvalues().minCoeff() <= 0.0) bad(1, m.id, "covariance not positive definite");
        }
    }

    if (v.layers.size() != static_cast<size_t>(O) + 1) out.push_back("layers has wrong length");
    if (v.or_layers.size() != static_cast<size_t>(O) + 1) out.push_back("or_layers has wrong length");

    auto or_ids_at = [&](int layer) {
        std::vector<int> ids;
        if (layer >= 1 && layer < static_cast<int>(v.or_layers.size()))
            for (const OrNode& node : v.or_layers[static_cast<size_t>(layer)]) ids.push_back(node.id);
        return ids;
    };

    for (int l = 2; l <= O && l < static_cast<int>(v.layers.size()); ++l) {
        std::vector<int> below = or_ids_at(l - 1);
        for (size_t ci = 0; ci < v.layers[static_cast<size_t>(l)].size(); ++ci) {
            const Composition& c = v.layers[static_cast<size_t>(l)][ci];
            if (c.id != static_cast<int>(ci)) bad(l, c.id, "ids must be dense and ordered");
            if (c.parts.empty()) {
                bad(l, c.id, "composition has no parts");
                continue;
            }
            int normal_count = 0;
            for (const Part& p : c.parts)
                if (p.polarity == Polarity::normal) ++normal_count;
            if (normal_count < 1 || normal_count > 10)
                bad(l, c.id, "normal part count out of [1,10]");
            const Part& ref = c.parts[0];
            if (ref.polarity != Polarity::normal) bad(l, c.id, "reference part must be normal");
            if (ref.mu.x() != 0.0 || ref.mu.y() != 0.0) bad(l, c.id, "reference part mean must be zero");
            double e2 = v.epsilon_ref * v.epsilon_ref;
            if (ref.sigma(0, 0) != e2 || ref.sigma(1, 1) != e2 || ref.sigma(0, 1) != 0.0 ||
                ref.sigma(1, 0) != 0.0)
                bad(l, c.id, "reference part covariance must be epsilon^2 I");
            for (size_t pi = 0; pi < c.parts.size(); ++pi) {
                const Part& p = c.parts[pi];
                if (p.appearance.empty()) {
                    bad(l, c.id, "part " + std::to_string(pi) + " has empty appearance");
                    continue;
                }
                double wsum = 0.0;
                for (auto [or_id, w] : p.appearance) {
                    wsum += w;
                    if (w <= 0.0 || w > 1.0)
                        bad(l, c.id, "part " + std::to_string(pi) + " has weight outside (0,1]");
                    if (!std::binary_search(below.begin(), below.end(), or_id))
                        bad(l, c.id,
                            "part " + std::to_string(pi) + " references missing OR id " + std::to_string(or_id));
                }
                if (l < O) {
                    if (p.appearance.size() != 1 || std::abs(wsum - 1.0) > 1e-12)
                        bad(l, c.id, "part " + std::to_string(pi) + " must be one-hot below the object layer");
                } else if (std::abs(wsum - 1.0) > 1e-9) {
                    bad(l, c.id, "part " + std::to_string(pi) + " appearance weights must sum to 1");
                }
                Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(p.sigma);
                if (es.eigenvalues().minCoeff() <= 0.0)
                    bad(l, c.id, "part " + std::to_string(pi) + " covariance not positive definite");
                double r = v.radii[static_cast<size_t>(l)];
                if (std::abs(p.mu.x()) > r || std::abs(p.mu.y()) > r)
                    bad(l, c.id, "part " + std::to_string(pi) + " mean outside neighborhood radius");
            }
            Composition canon = c;
            canonicalize_parts(canon);
            if (!(canon == c)) bad(l, c.id, "parts not in canonical order");
        }
    }

    // OR layers partition their composition layer
    for (int l = 1; l <= O && l < static_cast<int>(v.or_layers.size()); ++l) {
        size_t comp_count = l == 1 ? v.layer1.size() : v.layers[static_cast<size_t>(l)].size();
        std::vector<int> seen(comp_count, 0);
        std::vector<int> node_ids;
        for (const OrNode& node : v.or_layers[static_cast<size_t>(l)]) {
            node_ids.push_back(node.id);
            if (!std::is_sorted(node.members.begin(), node.members.end()))
                out.push_back("layer " + std::to_string(l) + " OR node " + std::to_string(node.id) +
                              ": members not sorted");
            for (int m : node.members) {
                if (m < 0 || m >= static_cast<int>(comp_count))
                    out.push_back("layer " + std::to_string(l) + " OR node " + std::to_string(node.id) +
                                  ": unknown member " + std::to_string(m));
                else
                    seen[static_cast<size_t>(m)] += 1;
            }
        }
        for (size_t i = 0; i < node_ids.size(); ++i)
            if (node_ids[i] != static_cast<int>(i))
                out.push_back("layer " + std::to_string(l) + ": OR ids must be dense and ordered");
        for (size_t m = 0; m < comp_count; ++m)
            if (seen[m] != 1)
                out.push_back("layer " + std::to_string(l) + " comp " + std::to_string(m) +
                              (seen[m] == 0 ? ": not covered by any OR node" : ": in multiple OR nodes"));
    }

    for (const auto& [label, members] : v.classes) {
        for (int id : members) {
            bool known = false;
            if (static_cast<size_t>(O) < v.layers.size())
                for (const Composition& c : v.layers[static_cast<size_t>(O)])
                    if (c.id == id) known = true;
            if (!known)
                out.push_back("class " + label + ": references missing object composition " + std::to_string(id));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// serialization

namespace {

json encode_mat(const Eigen::MatrixXd& m) {
    std::vector<double> v(static_cast<size_t>(m.size()));
    Eigen::Map<Eigen::MatrixXd>(v.data(), m.rows(), m.cols()) = m;
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"b64", encode_f64(v)}};
}

Eigen::MatrixXd decode_mat(const json& j) {
    auto rows = j.at("rows").get<Eigen::Index>();
    auto cols = j.at("cols").get<Eigen::Index>();
    std::vector<double> v = decode_f64(j.at("b64").get<std::string>());
    if (static_cast<Eigen::Index>(v.size()) != rows * cols)
        throw std::runtime_error("matrix payload size mismatch");
    return Eigen::Map<Eigen::MatrixXd>(v.data(), rows, cols);
}

json encode_part(const Part& p) {
    json appearance;
    std::vector<int> ids;
    std::vector<double> ws;
    for (auto [or_id, w] : p.appearance) {
        ids.push_back(or_id);
        ws.push_back(w);
    }
    appearance["ids"] = ids;
    appearance["weights"] = encode_f64(ws);
    return {{"appearance", appearance},
            {"mu", encode_f64({p.mu.x(), p.mu.y()})},
            {"sigma", encode_f64({p.sigma(0, 0), p.sigma(0, 1), p.sigma(1, 0), p.sigma(1, 1)})},
            {"polarity", p.polarity == Polarity::repulsive ? "repulsive" : "normal"}};
}

Part decode_part(const json& j) {
    Part p;
    auto ids = j.at("appearance").at("ids").get<std::vector<int>>();
    auto ws = decode_f64(j.at("appearance").at("weights").get<std::string>());
    if (ids.size() != ws.size()) throw std::runtime_error("appearance payload size mismatch");
    for (size_t i = 0; i < ids.size(); ++i) p.appearance[ids[i]] = ws[i];
    auto mu = decode_f64(j.at("mu").get<std::string>());
    auto sg = decode_f64(j.at("sigma").get<std::string>());
    if (mu.size() != 2 || sg.size() != 4) throw std::runtime_error("part geometry payload size mismatch");
    p.mu = Eigen::Vector2d(mu[0], mu[1]);
    p.sigma << sg[0], sg[1], sg[2], sg[3];
    p.polarity = j.at("polarity").get<std::string>() == "repulsive" ? Polarity::repulsive : Polarity::normal;
    return p;
}

}  // namespace

void save_vocabulary(const Vocabulary& v, const std::string& path) {
    json j;
    j["format"] = "shapevoc-vocabulary";
    j["version"] = 1;
    j["object_layer"] = v.object_layer;
    j["features"] = {{"lambda", v.features.lambda},
                     {"gamma", v.features.gamma},
                     {"sigma", v.features.sigma},
                     {"num_orientations", v.features.num_orientations},
                     {"energy_floor", v.features.energy_floor},
                     {"scales_per_octave", v.features.scales_per_octave},
                     {"pyramid_min_dim", v.features.pyramid_min_dim},
                     {"pyramid_blur_factor", v.features.pyramid_blur_factor}};
    j["epsilon_ref"] = encode_f64({v.epsilon_ref});
    j["alpha_repulsive"] = encode_f64({v.alpha_repulsive});
    j["global_tau"] = encode_f64(v.global_tau);
    j["radii"] = encode_f64(v.radii);
    j["rho"] = encode_f64(v.rho);

    json l1 = json::array();
    for (const Layer1Model& m : v.layer1)
        l1.push_back({{"id", m.id}, {"estimated", m.estimated}, {"mu", encode_mat(m.mu)}, {"sigma", encode_mat(m.sigma)}});
    j["layer1"] = l1;

    json layers = json::object();
    for (int l = 2; l < static_cast<int>(v.layers.size()); ++l) {
        json arr = json::array();
        for (const Composition& c : v.layers[static_cast<size_t>(l)]) {
            json parts = json::array();
            for (const Part& p : c.parts) parts.push_back(encode_part(p));
            arr.push_back({{"id", c.id}, {"parts", parts}});
        }
        layers[std::to_string(l)] = arr;
    }
    j["layers"] = layers;

    json ors = json::object();
    for (int l = 1; l < static_cast<int>(v.or_layers.size()); ++l) {
        json arr = json::array();
        for (const OrNode& n : v.or_layers[static_cast<size_t>(l)])
            arr.push_back({{"id", n.id}, {"members", n.members}});
        ors[std::to_string(l)] = arr;
    }
    j["or_layers"] = ors;

    j["classes"] = v.classes;

    json taus = json::object();
    for (const auto& [layer, by_comp] : v.comp_tau) {
        std::vector<int> ids;
        std::vector<double> vals;
        for (auto [id, t] : by_comp) {
            ids.push_back(id);
            vals.push_back(t);
        }
        taus[std::to_string(layer)] = {{"ids", ids}, {"values", encode_f64(vals)}};
    }
    j["comp_tau"] = taus;

    write_file_atomic(path, j.dump(1) + "\n");
}

Vocabulary load_vocabulary(const std::string& path) {
    json j;
    try {
        j = json::parse(read_file_bytes(path));
    } catch (const json::parse_error& e) {
        throw std::runtime_error("corrupt vocabulary file " + path + ": " + e.what());
    }
    if (j.value("format", "") != "shapevoc-vocabulary")
        throw std::runtime_error(path + " is not a vocabulary file");
    if (j.value("version", -1) != 1)
        throw std::runtime_error("unsupported vocabulary version in " + path);

    Vocabulary v;
    v.object_layer = j.at("object_layer").get<int>();
    const json& f = j.at("features");
    v.features.lambda = f.at("lambda").get<double>();
    v.features.gamma = f.at("gamma").get<double>();
    v.features.sigma = f.at("sigma").get<double>();
    v.features.num_orientations = f.at("num_orientations").get<int>();
    v.features.energy_floor = f.at("energy_floor").get<double>();
    v.features.scales_per_octave = f.at("scales_per_octave").get<int>();
    v.features.pyramid_min_dim = f.at("pyramid_min_dim").get<int>();
    v.features.pyramid_blur_factor = f.at("pyramid_blur_factor").get<double>();
    v.epsilon_ref = decode_f64(j.at("epsilon_ref").get<std::string>()).at(0);
    v.alpha_repulsive = decode_f64(j.at("alpha_repulsive").get<std::string>()).at(0);
    v.global_tau = decode_f64(j.at("global_tau").get<std::string>());
    v.radii = decode_f64(j.at("radii").get<std::string>());
    v.rho = decode_f64(j.at("rho").get<std::string>());

    for (const json& m : j.at("layer1")) {
        Layer1Model lm;
        lm.id = m.at("id").get<int>();
        lm.estimated = m.at("estimated").get<bool>();
        lm.mu = decode_mat(m.at("mu"));
        lm.sigma = decode_mat(m.at("sigma"));
        v.layer1.push_back(std::move(lm));
    }

    v.layers.assign(static_cast<size_t>(v.object_layer) + 1, {});
    for (const auto& [key, arr] : j.at("layers").items()) {
        int l = std::stoi(key);
        if (l < 2 || l > v.object_layer) throw std::runtime_error("vocabulary layer index out of range");
        for (const json& cj : arr) {
            Composition c;
            c.id = cj.at("id").get<int>();
            for (const json& pj : cj.at("parts")) c.parts.push_back(decode_part(pj));
            v.layers[static_cast<size_t>(l)].push_back(std::move(c));
        }
    }

    v.or_layers.assign(static_cast<size_t>(v.object_layer) + 1, {});
    for (const auto& [key, arr] : j.at("or_layers").items()) {
        int l = std::stoi(key);
        if (l < 1 || l > v.object_layer) throw std::runtime_error("vocabulary OR layer index out of range");
        for (const json& nj : arr)
            v.or_layers[static_cast<size_t>(l)].push_back(
                {nj.at("id").get<int>(), nj.at("members").get<std::vector<int>>()});
    }

    v.classes = j.at("classes").get<std::map<std::string, std::vector<int>>>();

    for (const auto& [key, tj] : j.at("comp_tau").items()) {
        int l = std::stoi(key);
        auto ids = tj.at("ids").get<std::vector<int>>();
        auto vals = decode_f64(tj.at("values").get<std::string>());
        if (ids.size() != vals.size()) throw std::runtime_error("comp_tau payload size mismatch");
        for (size_t i = 0; i < ids.size(); ++i) v.comp_tau[l][ids[i]] = vals[i];
    }

    std::vector<std::string> problems = validate(v);
    if (!problems.empty())
        throw std::runtime_error("vocabulary " + path + " failed validation: " + problems.front());
    return v;
}

}  // namespace shapevoc
