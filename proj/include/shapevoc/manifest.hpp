#pragma once
#include <optional>
#include <string>
#include <vector>

namespace shapevoc {

struct BoxI {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // inclusive-exclusive pixel corners
    bool operator==(const BoxI&) const = default;
};

struct ManifestRecord {
    std::string path;              // image file, relative to the manifest
    std::string klass;             // empty for unlabeled images
    std::string split = "train";   // train / val / test
    std::vector<BoxI> boxes;       // ground-truth object boxes, may be empty
};

// One JSON object per line: {"path": ..., "class": ..., "split": ..., "boxes": [[x0,y0,x1,y1], ...]}
std::vector<ManifestRecord> load_manifest(const std::string& path);
void save_manifest(const std::vector<ManifestRecord>& records, const std::string& path);

// Directory of the manifest file, used to resolve relative image paths.
std::string manifest_dir(const std::string& manifest_path);
std::string join_path(const std::string& dir, const std::string& rel);

}  // namespace shapevoc
