#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "ocular/box.hpp"
#include "ocular/network.hpp"
#include "ocular/tensor.hpp"

namespace ocular {

// Raw per-slot prediction order inside a feature-map cell: each anchor owns a
// contiguous run of (C + 5) channels laid out tx, ty, tw, th, to, then the C
// class logits. Channel index = a * (C + 5) + field.
enum RawField { kTx = 0, kTy = 1, kTw = 2, kTh = 3, kTo = 4, kClassLogits = 5 };

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

// Decodes the raw (1, (C+5)*A, S, S) map into scored boxes. For cell (i,j)
// and anchor (pw,ph): cx=(j+sig(tx))/S, cy=(i+sig(ty))/S, w=pw*e^tw/S,
// h=ph*e^th/S; score = sig(to) * softmax(class logits)[c]. One Detection is
// emitted per class whose score >= conf_threshold, scanning cells in
// row-major order, then anchors, then classes.
std::vector<Detection> decode(const Tensor<float>& feature_map, const NetworkConfig& config,
                              double conf_threshold);

// Inverse map used for target assignment and round-trip checks: raw values
// that decode back to `box` under anchor (pw,ph) at cell (i,j).
struct RawBoxTargets {
    double sig_tx, sig_ty;  // targets for sig(tx), sig(ty) in [0,1)
    double tw, th;
};
RawBoxTargets encode_box(const Box& box, int cell_i, int cell_j, double pw, double ph, int grid);

// Greedy per-class suppression: keep the highest-confidence detection,
// discard same-class detections with IoU strictly above the threshold
// against any kept box. Output is sorted by descending confidence (ties keep
// input order); classes never suppress each other.
std::vector<Detection> nms(const std::vector<Detection>& detections, double iou_threshold);

// One line per detection: image_id class_id confidence cx cy w h
// (six decimal places, LF endings). Shared with the metrics module and used
// to ingest external detectors' results.
struct DetectionRecord {
    std::string image_id;
    Detection det;
};

void write_detection_file(const std::filesystem::path& path,
                          const std::vector<DetectionRecord>& records);
std::vector<DetectionRecord> read_detection_file(const std::filesystem::path& path);

}  // namespace ocular
