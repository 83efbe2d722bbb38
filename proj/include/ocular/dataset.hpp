#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ocular/box.hpp"

namespace ocular {

// Coarse bounding-box annotation: the box is deliberately larger than the
// fine region it covers, with its edges outside the fine boundary.
struct Annotation {
    int class_id = 0;  // 0 = iris, 1 = periocular
    Box box;           // normalized center/size
};

enum class Split { train, test, val };

const char* split_name(Split s);
Split parse_split(const std::string& name);

struct ManifestEntry {
    std::string image_id;
    std::string image_path;       // relative to the manifest's directory
    std::string annotation_path;  // likewise
    Split split = Split::train;
};

struct DatasetManifest {
    uint64_t seed = 0;
    std::vector<ManifestEntry> entries;
    std::filesystem::path base_dir;  // set when loaded; resolves relative paths

    std::filesystem::path resolve(const std::string& rel) const { return base_dir / rel; }
    std::vector<ManifestEntry> in_split(Split s) const;
};

// One object per line: "class_id cx cy w h", floats in [0,1], six decimal
// places on write, LF endings. An empty file is an empty list.
std::vector<Annotation> read_annotations(const std::filesystem::path& path);
void write_annotations(const std::filesystem::path& path, const std::vector<Annotation>& annos);

// Header line "# seed=<n>", then one tab-separated line per entry:
// image_id <TAB> image_path <TAB> annotation_path <TAB> split
DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

// Seeded shuffle, then contiguous 40/40/20 train/test/val assignment with
// floor rounding; leftover items go to train.
void make_splits(DatasetManifest& manifest, uint64_t seed);

struct SynthOptions {
    int count = 100;
    uint64_t seed = 1;
    int image_size = 160;  // >= 64
};

// Renders `count` grayscale eye-like images plus coarse annotations into
// output_dir and writes manifest.tsv. Each image has a noisy background, a
// lighter rounded-rectangle periocular patch with darker eyelid arcs, and a
// dark iris ellipse with a darker pupil inside it. The coarse boxes expand
// the exact (fine) region outward by a per-image random margin of 5-15% of
// the region size. Fine boxes are also written to <image>.fine.txt; they are
// not part of the dataset interface and exist so tests can check that every
// coarse box strictly contains its fine region. Fully deterministic per seed.
DatasetManifest synth_generate(const SynthOptions& options,
                               const std::filesystem::path& output_dir);

}  // namespace ocular
