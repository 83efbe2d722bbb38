#include "ocular/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ocular/common.hpp"
#include "ocular/image_io.hpp"
#include "ocular/rng.hpp"

namespace ocular {

const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::test: return "test";
        case Split::val: return "val";
    }
    return "?";
}

Split parse_split(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "test") return Split::test;
    if (name == "val") return Split::val;
    throw FormatError("unknown split name: " + name);
}

std::vector<ManifestEntry> DatasetManifest::in_split(Split s) const {
    std::vector<ManifestEntry> out;
    for (const ManifestEntry& e : entries)
        if (e.split == s) out.push_back(e);
    return out;
}

namespace {

double parse_double(const std::string& token, const std::string& where) {
    double v = 0;
    auto [p, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
    if (ec != std::errc() || p != token.data() + token.size())
        throw FormatError(where + ": non-numeric token '" + token + "'");
    return v;
}

long parse_long(const std::string& token, const std::string& where) {
    long v = 0;
    auto [p, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
    if (ec != std::errc() || p != token.data() + token.size())
        throw FormatError(where + ": non-numeric token '" + token + "'");
    return v;
}

}  // namespace

std::vector<Annotation> read_annotations(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open annotation file: " + path.string());
    std::vector<Annotation> annos;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = path.string() + ":" + std::to_string(line_no);
        std::istringstream ss(line);
        std::vector<std::string> tokens;
        std::string t;
        while (ss >> t) tokens.push_back(t);
        if (tokens.size() != 5)
            throw FormatError(where + ": expected 5 fields (class cx cy w h), got " +
                              std::to_string(tokens.size()));
        Annotation a;
        const long cls = parse_long(tokens[0], where);
        if (cls != 0 && cls != 1)
            throw FormatError(where + ": class_id must be 0 or 1, got " + tokens[0]);
        a.class_id = static_cast<int>(cls);
        a.box.cx = parse_double(tokens[1], where);
        a.box.cy = parse_double(tokens[2], where);
        a.box.w = parse_double(tokens[3], where);
        a.box.h = parse_double(tokens[4], where);
        for (double v : {a.box.cx, a.box.cy, a.box.w, a.box.h})
            if (!(v >= 0.0 && v <= 1.0))
                throw FormatError(where + ": value outside [0,1]");
        if (!(a.box.w > 0) || !(a.box.h > 0))
            throw FormatError(where + ": box size must be positive");
        annos.push_back(a);
    }
    return annos;
}

void write_annotations(const std::filesystem::path& path, const std::vector<Annotation>& annos) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open annotation file for writing: " + path.string());
    char line[160];
    for (const Annotation& a : annos) {
        std::snprintf(line, sizeof(line), "%d %.6f %.6f %.6f %.6f\n", a.class_id, a.box.cx,
                      a.box.cy, a.box.w, a.box.h);
        out << line;
    }
    if (!out) throw IoError("write failed: " + path.string());
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest: " + path.string());
    DatasetManifest m;
    m.base_dir = path.parent_path();

    std::string line;
    if (!std::getline(in, line) || line.rfind("# seed=", 0) != 0)
        throw FormatError(path.string() + ": missing '# seed=<n>' header line");
    m.seed = static_cast<uint64_t>(
        parse_long(line.substr(7), path.string() + ":1"));

    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = path.string() + ":" + std::to_string(line_no);
        std::vector<std::string> fields;
        size_t start = 0;
        for (;;) {
            size_t tab = line.find('\t', start);
            fields.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        if (fields.size() != 4)
            throw FormatError(where + ": expected 4 tab-separated fields, got " +
                              std::to_string(fields.size()));
        ManifestEntry e;
        e.image_id = fields[0];
        e.image_path = fields[1];
        e.annotation_path = fields[2];
        e.split = parse_split(fields[3]);
        if (e.image_id.empty()) throw FormatError(where + ": empty image_id");
        m.entries.push_back(std::move(e));
    }
    return m;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open manifest for writing: " + path.string());
    out << "# seed=" << manifest.seed << "\n";
    for (const ManifestEntry& e : manifest.entries)
        out << e.image_id << "\t" << e.image_path << "\t" << e.annotation_path << "\t"
            << split_name(e.split) << "\n";
    if (!out) throw IoError("write failed: " + path.string());
}

void make_splits(DatasetManifest& manifest, uint64_t seed) {
    const size_t n = manifest.entries.size();
    if (n == 0) throw Error("make_splits: empty image list");

    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    deterministic_shuffle(order, rng);

    // 40/40/20 train/test/val, floor rounding, remainder to train.
    const size_t n_test = n * 4 / 10;
    const size_t n_val = n * 2 / 10;
    const size_t n_train = n - n_test - n_val;

    for (size_t pos = 0; pos < n; ++pos) {
        Split s = pos < n_train ? Split::train : (pos < n_train + n_test ? Split::test : Split::val);
        manifest.entries[order[pos]].split = s;
    }
    manifest.seed = seed;
}

namespace {

struct SynthScene {
    // All geometry in pixels; cx/cy are centers.
    double pcx, pcy, pw, ph;       // periocular patch rect
    double corner_radius;
    double icx, icy, iax, iay;     // iris ellipse center and semi-axes
    double pupil_radius;
    double margin;                 // coarse expansion, fraction of region size
    double bg_base, bg_noise, patch_base, patch_noise;
    double lid_dark, lid_thick, lid_depth;
    double iris_value, pupil_value;
};

SynthScene draw_scene(Rng& rng, int p) {
    SynthScene s;
    s.bg_base = rng.uniform(55, 90);
    s.bg_noise = rng.uniform(6, 18);
    s.patch_base = rng.uniform(150, 195);
    s.patch_noise = rng.uniform(3, 9);

    s.pw = rng.uniform(0.45, 0.68) * p;
    s.ph = rng.uniform(0.36, 0.54) * p;
    s.margin = rng.uniform(0.05, 0.15);

    // Keep the coarse periocular box strictly inside the image so no box is
    // ever clipped and strict coarse-over-fine containment is guaranteed.
    const double half_wc = s.pw * (0.5 + s.margin) + 2.0;
    const double half_hc = s.ph * (0.5 + s.margin) + 2.0;
    s.pcx = rng.uniform(half_wc, p - half_wc);
    s.pcy = rng.uniform(half_hc, p - half_hc);

    s.corner_radius = rng.uniform(0.15, 0.30) * std::min(s.pw, s.ph);
    s.lid_dark = rng.uniform(25, 45);
    s.lid_thick = rng.uniform(0.05, 0.09) * s.ph;
    s.lid_depth = rng.uniform(0.14, 0.22) * s.ph;

    const double iris_r = rng.uniform(0.36, 0.48) * (s.ph / 2);
    const double stretch = rng.uniform(0.90, 1.10);
    s.iax = iris_r * stretch;
    s.iay = iris_r;
    s.icx = s.pcx + rng.uniform(-0.08, 0.08) * s.pw;
    s.icy = s.pcy + rng.uniform(-0.05, 0.05) * s.ph;
    s.iris_value = rng.uniform(35, 60);
    s.pupil_radius = rng.uniform(0.35, 0.45) * iris_r;
    s.pupil_value = rng.uniform(8, 28);
    return s;
}

bool in_rounded_rect(const SynthScene& s, double x, double y) {
    const double dx = std::abs(x - s.pcx), dy = std::abs(y - s.pcy);
    if (dx > s.pw / 2 || dy > s.ph / 2) return false;
    const double ex = dx - (s.pw / 2 - s.corner_radius);
    const double ey = dy - (s.ph / 2 - s.corner_radius);
    if (ex > 0 && ey > 0) return ex * ex + ey * ey <= s.corner_radius * s.corner_radius;
    return true;
}

bool in_eyelid(const SynthScene& s, double x, double y) {
    const double dx = x - s.pcx;
    const double u = 2.0 * dx / s.pw;  // -1..1 across the patch
    if (u < -1 || u > 1) return false;
    const double bow = s.lid_depth * (1.0 - u * u);
    const double top = s.pcy - s.ph / 2 + bow;
    const double bottom = s.pcy + s.ph / 2 - bow;
    return std::abs(y - top) <= s.lid_thick || std::abs(y - bottom) <= s.lid_thick;
}

bool in_ellipse(double x, double y, double cx, double cy, double ax, double ay) {
    const double dx = (x - cx) / ax, dy = (y - cy) / ay;
    return dx * dx + dy * dy <= 1.0;
}

Box coarse_box(double cx, double cy, double w, double h, double margin, int p) {
    // Expand each side by margin * region size, then clip to the image.
    double x0 = std::max(0.0, cx - w / 2 - margin * w);
    double y0 = std::max(0.0, cy - h / 2 - margin * h);
    double x1 = std::min(static_cast<double>(p), cx + w / 2 + margin * w);
    double y1 = std::min(static_cast<double>(p), cy + h / 2 + margin * h);
    Box b;
    b.cx = (x0 + x1) / 2 / p;
    b.cy = (y0 + y1) / 2 / p;
    b.w = (x1 - x0) / p;
    b.h = (y1 - y0) / p;
    return b;
}

std::string image_id_for(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "img_%06d", index);
    return buf;
}

}  // namespace

DatasetManifest synth_generate(const SynthOptions& options,
                               const std::filesystem::path& output_dir) {
    if (options.count < 1) throw Error("synth_generate: count must be >= 1");
    if (options.image_size < 64) throw Error("synth_generate: image_size must be >= 64");

    std::error_code ec;
    std::filesystem::create_directories(output_dir, ec);
    if (ec || !std::filesystem::is_directory(output_dir))
        throw IoError("cannot create output directory: " + output_dir.string());

    const int p = options.image_size;
    DatasetManifest manifest;
    manifest.seed = options.seed;

    for (int idx = 0; idx < options.count; ++idx) {
        // Independent stream per image: regeneration order never matters.
        Rng rng(options.seed ^ Rng::split_mix(0x51EDB7 + static_cast<uint64_t>(idx)));
        SynthScene s = draw_scene(rng, p);

        ImageBuffer img;
        img.width = p;
        img.height = p;
        img.channels = 1;
        img.pixels.resize(static_cast<size_t>(p) * p);
        for (int y = 0; y < p; ++y) {
            for (int x = 0; x < p; ++x) {
                const double u = rng.uniform(-1, 1);  // one draw per pixel, branch-free stream
                const double fx = x + 0.5, fy = y + 0.5;
                double v;
                if (in_rounded_rect(s, fx, fy)) {
                    v = s.patch_base + s.patch_noise * u;
                    if (in_eyelid(s, fx, fy)) v -= s.lid_dark;
                    if (in_ellipse(fx, fy, s.icx, s.icy, s.iax, s.iay)) {
                        v = s.iris_value + 6 * u;
                        if (in_ellipse(fx, fy, s.icx, s.icy, s.pupil_radius, s.pupil_radius))
                            v = s.pupil_value + 4 * u;
                    }
                } else {
                    v = s.bg_base + s.bg_noise * u;
                }
                img.at(y, x) = static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
            }
        }

        const std::string id = image_id_for(idx);
        write_pnm(output_dir / (id + ".pgm"), img);

        // Fine (exact) regions; coarse annotations expand them outward.
        std::vector<Annotation> fine = {
            {0, Box{s.icx / p, s.icy / p, 2 * s.iax / p, 2 * s.iay / p}},
            {1, Box{s.pcx / p, s.pcy / p, s.pw / p, s.ph / p}},
        };
        std::vector<Annotation> coarse = {
            {0, coarse_box(s.icx, s.icy, 2 * s.iax, 2 * s.iay, s.margin, p)},
            {1, coarse_box(s.pcx, s.pcy, s.pw, s.ph, s.margin, p)},
        };
        write_annotations(output_dir / (id + ".txt"), coarse);
        write_annotations(output_dir / (id + ".fine.txt"), fine);

        manifest.entries.push_back(
            ManifestEntry{id, id + ".pgm", id + ".txt", Split::train});
    }

    make_splits(manifest, options.seed);
    manifest.base_dir = output_dir;
    write_manifest(output_dir / "manifest.tsv", manifest);
    return manifest;
}

}  // namespace ocular
