#include "ocular/detect.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace ocular {

std::vector<Detection> decode(const Tensor<float>& feature_map, const NetworkConfig& config,
                              double conf_threshold) {
    const Shape4& s = feature_map.shape();
    const int a = config.num_anchors;
    const int c = config.num_classes;
    const int slot = config.slot_channels();
    if (s.n != 1)
        throw Error("decode: expected a single-image feature map, got batch " + s.str());
    if (s.c % a != 0 || s.c != slot * a)
        throw Error("decode: channel count " + std::to_string(s.c) + " != (C+5)*A = " +
                    std::to_string(slot * a) + " for C=" + std::to_string(c) +
                    ", A=" + std::to_string(a));
    const int grid = s.h;
    if (s.w != grid) throw Error("decode: feature map must be square, got " + s.str());

    std::vector<Detection> out;
    std::vector<double> probs(static_cast<size_t>(c));
    for (int i = 0; i < grid; ++i) {
        for (int j = 0; j < grid; ++j) {
            for (int an = 0; an < a; ++an) {
                const int base = an * slot;
                const double tx = feature_map.at(0, base + kTx, i, j);
                const double ty = feature_map.at(0, base + kTy, i, j);
                const double tw = feature_map.at(0, base + kTw, i, j);
                const double th = feature_map.at(0, base + kTh, i, j);
                const double to = feature_map.at(0, base + kTo, i, j);
                const auto& [pw, ph] = config.anchor_priors[static_cast<size_t>(an)];

                Box box;
                box.cx = (j + sigmoid(tx)) / grid;
                box.cy = (i + sigmoid(ty)) / grid;
                box.w = pw * std::exp(tw) / grid;
                box.h = ph * std::exp(th) / grid;
                const double objectness = sigmoid(to);

                if (c == 1) {
                    probs[0] = 1.0;  // softmax over a single logit
                } else {
                    double mx = feature_map.at(0, base + kClassLogits, i, j);
                    for (int k = 1; k < c; ++k)
                        mx = std::max(mx, static_cast<double>(
                                              feature_map.at(0, base + kClassLogits + k, i, j)));
                    double sum = 0;
                    for (int k = 0; k < c; ++k) {
                        probs[static_cast<size_t>(k)] =
                            std::exp(feature_map.at(0, base + kClassLogits + k, i, j) - mx);
                        sum += probs[static_cast<size_t>(k)];
                    }
                    for (int k = 0; k < c; ++k) probs[static_cast<size_t>(k)] /= sum;
                }

                for (int k = 0; k < c; ++k) {
                    const double score = objectness * probs[static_cast<size_t>(k)];
                    if (score >= conf_threshold)
                        out.push_back(Detection{box, k, score});
                }
            }
        }
    }
    return out;
}

RawBoxTargets encode_box(const Box& box, int cell_i, int cell_j, double pw, double ph, int grid) {
    RawBoxTargets t;
    t.sig_tx = box.cx * grid - cell_j;
    t.sig_ty = box.cy * grid - cell_i;
    t.tw = std::log(box.w * grid / pw);
    t.th = std::log(box.h * grid / ph);
    return t;
}

std::vector<Detection> nms(const std::vector<Detection>& detections, double iou_threshold) {
    if (!(iou_threshold > 0 && iou_threshold < 1))
        throw Error("nms: iou_threshold must be in (0,1)");
    // Stable sort keeps input order on confidence ties.
    std::vector<size_t> order(detections.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](size_t l, size_t r) {
        return detections[l].confidence > detections[r].confidence;
    });

    std::vector<Detection> kept;
    for (size_t idx : order) {
        const Detection& d = detections[idx];
        bool suppressed = false;
        for (const Detection& k : kept) {
            if (k.class_id != d.class_id) continue;
            if (iou(k.box, d.box) > iou_threshold) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(d);
    }
    return kept;
}

void write_detection_file(const std::filesystem::path& path,
                          const std::vector<DetectionRecord>& records) {
    std::ofstream out(path, std::ios::binary);  // binary: pin LF endings
    if (!out) throw IoError("cannot open detection file for writing: " + path.string());
    char line[256];
    for (const DetectionRecord& r : records) {
        std::snprintf(line, sizeof(line), "%s %d %.6f %.6f %.6f %.6f %.6f\n", r.image_id.c_str(),
                      r.det.class_id, r.det.confidence, r.det.box.cx, r.det.box.cy, r.det.box.w,
                      r.det.box.h);
        out << line;
    }
    if (!out) throw IoError("write failed: " + path.string());
}

std::vector<DetectionRecord> read_detection_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open detection file: " + path.string());
    std::vector<DetectionRecord> records;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ss(line);
        DetectionRecord r;
        if (!(ss >> r.image_id >> r.det.class_id >> r.det.confidence >> r.det.box.cx >>
              r.det.box.cy >> r.det.box.w >> r.det.box.h))
            throw FormatError(path.string() + ":" + std::to_string(line_no) +
                              ": malformed detection line");
        std::string extra;
        if (ss >> extra)
            throw FormatError(path.string() + ":" + std::to_string(line_no) +
                              ": trailing tokens on detection line");
        if (r.det.confidence < 0 || r.det.confidence > 1)
            throw FormatError(path.string() + ":" + std::to_string(line_no) +
                              ": confidence outside [0,1]");
        if (!(r.det.box.w > 0) || !(r.det.box.h > 0))
            throw FormatError(path.string() + ":" + std::to_string(line_no) +
                              ": box size must be positive");
        records.push_back(std::move(r));
    }
    return records;
}

}  // namespace ocular
