#include "ocular/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace ocular {

MatchResult match_detections(const std::vector<DetectionRecord>& detections,
                             const std::vector<GroundTruth>& ground_truth,
                             const std::vector<int>& class_set, double iou_threshold) {
    std::set<int> classes(class_set.begin(), class_set.end());
    for (const DetectionRecord& d : detections)
        if (!classes.count(d.det.class_id))
            throw Error("match_detections: unknown class_id " + std::to_string(d.det.class_id) +
                        " for image " + d.image_id);
    for (const GroundTruth& g : ground_truth)
        if (!classes.count(g.class_id))
            throw Error("match_detections: unknown class_id " + std::to_string(g.class_id) +
                        " in ground truth for image " + g.image_id);

    MatchResult result;
    result.iou_threshold = iou_threshold;
    for (int c : class_set) {
        result.per_class[c] = {};
        result.num_gt[c] = 0;
    }
    for (const GroundTruth& g : ground_truth) result.num_gt[g.class_id]++;

    for (int c : class_set) {
        // Confidence-descending processing order; ties keep input order.
        std::vector<size_t> order;
        for (size_t i = 0; i < detections.size(); ++i)
            if (detections[i].det.class_id == c) order.push_back(i);
        std::stable_sort(order.begin(), order.end(), [&](size_t l, size_t r) {
            return detections[l].det.confidence > detections[r].det.confidence;
        });

        std::vector<bool> gt_matched(ground_truth.size(), false);
        for (size_t idx : order) {
            const DetectionRecord& d = detections[idx];
            double best = -1;
            size_t best_gt = ground_truth.size();
            for (size_t g = 0; g < ground_truth.size(); ++g) {
                if (gt_matched[g]) continue;
                if (ground_truth[g].class_id != c || ground_truth[g].image_id != d.image_id)
                    continue;
                double v = iou(d.det.box, ground_truth[g].box);
                if (v > best) {
                    best = v;
                    best_gt = g;
                }
            }
            bool tp = best > iou_threshold && best_gt < ground_truth.size();
            if (tp) gt_matched[best_gt] = true;
            result.per_class[c].push_back({d.det.confidence, tp});
        }
    }
    return result;
}

PrCurve pr_and_ap(const std::vector<MatchResult::Flagged>& flags, int num_gt,
                  ApInterpolation interp) {
    if (num_gt < 0) throw Error("pr_and_ap: num_gt must be >= 0");
    PrCurve curve;
    if (num_gt == 0) {
        curve.undefined_gt = true;
        curve.average_precision = 0;
        return curve;
    }

    int tp = 0, fp = 0;
    for (const auto& f : flags) {
        tp += f.tp ? 1 : 0;
        fp += f.tp ? 0 : 1;
        curve.precision.push_back(static_cast<double>(tp) / (tp + fp));
        curve.recall.push_back(static_cast<double>(tp) / num_gt);
    }

    const size_t n = curve.precision.size();
    std::vector<double> envelope(n);
    double running = 0;
    for (size_t i = n; i-- > 0;) {
        running = std::max(running, curve.precision[i]);
        envelope[i] = running;
    }

    double ap = 0;
    if (interp == ApInterpolation::all_point) {
        double prev_recall = 0;
        for (size_t i = 0; i < n; ++i) {
            if (curve.recall[i] > prev_recall) {
                ap += (curve.recall[i] - prev_recall) * envelope[i];
                prev_recall = curve.recall[i];
            }
        }
    } else {
        for (int k = 0; k <= 10; ++k) {
            const double r = k / 10.0;
            double best = 0;
            for (size_t i = 0; i < n; ++i)
                if (curve.recall[i] >= r) best = std::max(best, envelope[i]);
            ap += best / 11.0;
        }
    }
    curve.average_precision = ap;
    return curve;
}

FScore f_score(const std::vector<MatchResult::Flagged>& flags, int num_gt, double conf_threshold) {
    FScore s;
    for (const auto& f : flags) {
        if (f.confidence < conf_threshold) continue;
        if (f.tp)
            s.tp++;
        else
            s.fp++;
    }
    s.precision = (s.tp + s.fp) > 0 ? static_cast<double>(s.tp) / (s.tp + s.fp) : 0.0;
    s.recall = num_gt > 0 ? static_cast<double>(s.tp) / num_gt : 0.0;
    s.f = (s.precision + s.recall) > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall)
                                       : 0.0;
    return s;
}

double mean_iou(const std::vector<double>& per_image_best) {
    if (per_image_best.empty()) throw Error("mean_iou: empty series");
    double sum = 0;
    for (double v : per_image_best) sum += v;
    return sum / static_cast<double>(per_image_best.size());
}

EvalReport evaluate(const std::vector<DetectionRecord>& detections,
                    const std::vector<GroundTruth>& ground_truth,
                    const std::vector<std::string>& image_ids, const std::vector<int>& class_set,
                    const EvalOptions& options) {
    if (image_ids.empty()) throw Error("evaluate: empty image set");

    std::set<std::string> known(image_ids.begin(), image_ids.end());
    std::string offenders;
    std::set<std::string> seen_offenders;
    for (const DetectionRecord& d : detections) {
        if (!known.count(d.image_id) && seen_offenders.insert(d.image_id).second)
            offenders += (offenders.empty() ? "" : ", ") + d.image_id;
    }
    if (!offenders.empty())
        throw Error("evaluate: detections reference image ids outside the evaluation set: " +
                    offenders);

    EvalReport report;
    report.num_images = static_cast<int>(image_ids.size());
    report.iou_threshold = options.iou_threshold;
    report.conf_threshold = options.conf_threshold;
    report.interpolation = options.interpolation;
    report.image_ids = image_ids;

    MatchResult match =
        match_detections(detections, ground_truth, class_set, options.iou_threshold);

    double ap_sum = 0;
    for (int c : class_set) {
        ClassReport cr;
        cr.class_id = c;
        cr.num_gt = match.num_gt[c];
        cr.num_detections = static_cast<int>(match.per_class[c].size());
        cr.fscore = f_score(match.per_class[c], cr.num_gt, options.conf_threshold);
        PrCurve curve = pr_and_ap(match.per_class[c], cr.num_gt, options.interpolation);
        cr.average_precision = curve.average_precision;
        cr.ap_undefined_gt = curve.undefined_gt;

        // Per-image series: best-confidence detection of the class vs the
        // class's ground truth (max IoU when several boxes share the class).
        std::vector<double>& series = report.per_image_iou[c];
        series.reserve(image_ids.size());
        for (const std::string& id : image_ids) {
            const DetectionRecord* best = nullptr;
            for (const DetectionRecord& d : detections)
                if (d.det.class_id == c && d.image_id == id &&
                    (!best || d.det.confidence > best->det.confidence))
                    best = &d;
            double v = 0;
            if (best) {
                for (const GroundTruth& g : ground_truth)
                    if (g.class_id == c && g.image_id == id)
                        v = std::max(v, iou(best->det.box, g.box));
            }
            series.push_back(v);
        }
        cr.mean_iou = mean_iou(series);

        report.classes.push_back(cr);
        ap_sum += cr.average_precision;
    }
    report.map = class_set.empty() ? 0 : ap_sum / static_cast<double>(class_set.size());
    return report;
}

const char* class_name(int class_id) {
    switch (class_id) {
        case 0: return "iris";
        case 1: return "periocular";
        default: return "unknown";
    }
}

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace

void write_report_text(const EvalReport& report, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open report for writing: " + path.string());
    out << "# detection evaluation report\n";
    out << "images\t" << report.num_images << "\n";
    out << "iou_threshold\t" << fmt(report.iou_threshold) << "\n";
    out << "conf_threshold\t" << fmt(report.conf_threshold) << "\n";
    out << "ap_interpolation\t"
        << (report.interpolation == ApInterpolation::all_point ? "all-point" : "11-point") << "\n";
    out << "\n";
    out << "class\tname\tnum_gt\tnum_det\ttp\tfp\tmean_iou\tprecision\trecall\tf_score\tap\n";
    for (const ClassReport& c : report.classes) {
        out << c.class_id << "\t" << class_name(c.class_id) << "\t" << c.num_gt << "\t"
            << c.num_detections << "\t" << c.fscore.tp << "\t" << c.fscore.fp << "\t"
            << fmt(c.mean_iou) << "\t" << fmt(c.fscore.precision) << "\t" << fmt(c.fscore.recall)
            << "\t" << fmt(c.fscore.f) << "\t" << fmt(c.average_precision)
            << (c.ap_undefined_gt ? "\t(no ground truth)" : "") << "\n";
    }
    out << "\nmAP\t" << fmt(report.map) << "\n";
    out << "\n# per-image IoU of the highest-confidence detection\n";
    out << "image_id\tclass\tiou\n";
    for (size_t i = 0; i < report.image_ids.size(); ++i)
        for (const auto& [c, series] : report.per_image_iou)
            out << report.image_ids[i] << "\t" << c << "\t" << fmt(series[i]) << "\n";
    if (!out) throw IoError("write failed: " + path.string());
}

void write_report_csv(const EvalReport& report, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open report for writing: " + path.string());
    out << "class,name,num_gt,num_det,tp,fp,mean_iou,precision,recall,f_score,ap\n";
    for (const ClassReport& c : report.classes)
        out << c.class_id << "," << class_name(c.class_id) << "," << c.num_gt << ","
            << c.num_detections << "," << c.fscore.tp << "," << c.fscore.fp << ","
            << fmt(c.mean_iou) << "," << fmt(c.fscore.precision) << "," << fmt(c.fscore.recall)
            << "," << fmt(c.fscore.f) << "," << fmt(c.average_precision) << "\n";
    out << "mAP,,,,,,,,,," << fmt(report.map) << "\n";
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace ocular
