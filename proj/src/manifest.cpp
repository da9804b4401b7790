#include "shapevoc/manifest.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "shapevoc/serialize_util.hpp"

using json = nlohmann::json;

namespace shapevoc {

std::vector<ManifestRecord> load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest: " + path);
    std::vector<ManifestRecord> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": bad manifest line: " + e.what());
        }
        ManifestRecord r;
        r.path = j.at("path").get<std::string>();
        if (j.contains("class")) r.klass = j.at("class").get<std::string>();
        if (j.contains("split")) r.split = j.at("split").get<std::string>();
        if (j.contains("boxes"))
            for (const json& b : j.at("boxes")) {
                if (b.size() != 4)
                    throw std::runtime_error(path + ":" + std::to_string(lineno) + ": box needs 4 numbers");
                r.boxes.push_back({b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()});
            }
        out.push_back(std::move(r));
    }
    return out;
}

void save_manifest(const std::vector<ManifestRecord>& records, const std::string& path) {
    std::ostringstream out;
    for (const ManifestRecord& r : records) {
        json j;
        j["path"] = r.path;
        if (!r.klass.empty()) j["class"] = r.klass;
        j["split"] = r.split;
        if (!r.boxes.empty()) {
            json boxes = json::array();
            for (const BoxI& b : r.boxes) boxes.push_back({b.x0, b.y0, b.x1, b.y1});
            j["boxes"] = boxes;
        }
        out << j.dump() << "\n";
    }
    write_file_atomic(path, out.str());
}

std::string manifest_dir(const std::string& manifest_path) {
    return std::filesystem::path(manifest_path).parent_path().string();
}

std::string join_path(const std::string& dir, const std::string& rel) {
    if (rel.empty()) return dir;
    std::filesystem::path p(rel);
    if (p.is_absolute() || dir.empty()) return rel;
    return (std::filesystem::path(dir) / p).string();
}

}  // namespace shapevoc
