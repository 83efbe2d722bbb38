#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ocular/box.hpp"
#include "ocular/detect.hpp"

namespace ocular {

struct GroundTruth {
    std::string image_id;
    int class_id = 0;
    Box box;
};

// Greedy PASCAL-VOC matching outcome. Per class, detections are kept in
// descending-confidence order (confidence ties keep input order) with their
// TP/FP flag; a ground-truth box is matched by at most one detection, and a
// detection is a true positive only when its best unmatched same-class
// ground truth on the same image has IoU strictly above the threshold.
struct MatchResult {
    struct Flagged {
        double confidence = 0;
        bool tp = false;
    };
    std::map<int, std::vector<Flagged>> per_class;  // sorted desc by confidence
    std::map<int, int> num_gt;
    double iou_threshold = 0.5;
};

MatchResult match_detections(const std::vector<DetectionRecord>& detections,
                             const std::vector<GroundTruth>& ground_truth,
                             const std::vector<int>& class_set, double iou_threshold = 0.5);

struct PrCurve {
    std::vector<double> precision, recall;  // cumulative, per detection
    double average_precision = 0;
    bool undefined_gt = false;  // num_gt == 0
};

enum class ApInterpolation { all_point, eleven_point };

// Area under the precision envelope (all-point interpolation by default; the
// 11-point variant is available for comparability with older protocols).
PrCurve pr_and_ap(const std::vector<MatchResult::Flagged>& flags, int num_gt,
                  ApInterpolation interp = ApInterpolation::all_point);

struct FScore {
    int tp = 0, fp = 0;
    double precision = 0, recall = 0, f = 0;
};

// Dataset-level aggregate P/R/F over detections with confidence >= conf_threshold.
FScore f_score(const std::vector<MatchResult::Flagged>& flags, int num_gt,
               double conf_threshold = 0.25);

// Mean of per-image best-detection IoUs; entries for images with no
// detection of the class are 0. Errors on an empty series.
double mean_iou(const std::vector<double>& per_image_best);

struct ClassReport {
    int class_id = 0;
    int num_gt = 0;
    int num_detections = 0;
    FScore fscore;
    double mean_iou = 0;
    double average_precision = 0;
    bool ap_undefined_gt = false;
};

struct EvalReport {
    int num_images = 0;
    double iou_threshold = 0.5;
    double conf_threshold = 0.25;
    ApInterpolation interpolation = ApInterpolation::all_point;
    std::vector<ClassReport> classes;
    double map = 0;  // arithmetic mean of per-class AP
    // Per test image (manifest order) and class: IoU of the
    // highest-confidence detection against the ground truth, 0 when the
    // class went undetected. This is the paired series for the signed-rank
    // comparison between detection conditions.
    std::vector<std::string> image_ids;
    std::map<int, std::vector<double>> per_image_iou;
};

struct EvalOptions {
    double iou_threshold = 0.5;
    double conf_threshold = 0.25;
    ApInterpolation interpolation = ApInterpolation::all_point;
};

// Assembles the full report for one detection condition. image_ids defines
// the evaluation set (and the per-image series order); a detection whose
// image_id is not in it is an error.
EvalReport evaluate(const std::vector<DetectionRecord>& detections,
                    const std::vector<GroundTruth>& ground_truth,
                    const std::vector<std::string>& image_ids, const std::vector<int>& class_set,
                    const EvalOptions& options = {});

const char* class_name(int class_id);

void write_report_text(const EvalReport& report, const std::filesystem::path& path);
void write_report_csv(const EvalReport& report, const std::filesystem::path& path);

}  // namespace ocular
