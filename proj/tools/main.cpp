#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>

#include <CLI11.hpp>

#include "ocular/config.hpp"
#include "ocular/dataset.hpp"
#include "ocular/detect.hpp"
#include "ocular/image_io.hpp"
#include "ocular/metrics.hpp"
#include "ocular/network.hpp"
#include "ocular/stats.hpp"
#include "ocular/training.hpp"

namespace {

using namespace ocular;

RunConfig load_config_or_default(const std::string& path) {
    return path.empty() ? RunConfig{} : load_run_config(path);
}

std::vector<GroundTruth> load_ground_truth(const DatasetManifest& manifest,
                                           const std::vector<ManifestEntry>& entries) {
    std::vector<GroundTruth> gt;
    for (const ManifestEntry& e : entries)
        for (const Annotation& a : read_annotations(manifest.resolve(e.annotation_path)))
            gt.push_back(GroundTruth{e.image_id, a.class_id, a.box});
    return gt;
}

std::vector<std::string> test_image_ids(const std::vector<ManifestEntry>& entries) {
    std::vector<std::string> ids;
    for (const ManifestEntry& e : entries) ids.push_back(e.image_id);
    return ids;
}

// Single-condition detection files carry the model-local class 0; force them
// to one global class when merging conditions.
std::vector<DetectionRecord> remap_single_class(std::vector<DetectionRecord> records,
                                                int target_class, const std::string& label) {
    std::set<int> seen;
    for (const DetectionRecord& r : records) seen.insert(r.det.class_id);
    if (seen.size() > 1)
        throw FormatError(label + ": expected a single-class detection file, found " +
                          std::to_string(seen.size()) + " classes");
    for (DetectionRecord& r : records) r.det.class_id = target_class;
    return records;
}

int cmd_synth(int count, uint64_t seed, int size, const std::string& out_dir) {
    SynthOptions options;
    options.count = count;
    options.seed = seed;
    options.image_size = size;
    DatasetManifest manifest = synth_generate(options, out_dir);
    std::cout << "generated " << manifest.entries.size() << " images in " << out_dir << " ("
              << manifest.in_split(Split::train).size() << " train, "
              << manifest.in_split(Split::test).size() << " test, "
              << manifest.in_split(Split::val).size() << " val)\n";
    return 0;
}

int cmd_split(const std::string& manifest_path, uint64_t seed) {
    DatasetManifest manifest = read_manifest(manifest_path);
    make_splits(manifest, seed);
    write_manifest(manifest_path, manifest);
    std::cout << "reassigned splits for " << manifest.entries.size() << " entries (seed " << seed
              << ")\n";
    return 0;
}

struct ClassChoice {
    int num_classes;
    int single_class;  // -1 for the 2-class model
};

ClassChoice parse_classes(const std::string& classes) {
    if (classes == "both") return {2, -1};
    if (classes == "iris") return {1, 0};
    return {1, 1};  // periocular; values enforced at parse time
}

void apply_bn_momentum(Model& model, double momentum) {
    for (ConvBlock& block : model.blocks)
        if (block.has_bn) block.bn.momentum = static_cast<float>(momentum);
}

int cmd_train(const std::string& manifest_path, const std::string& classes,
              const std::string& config_path, const std::string& weights_out,
              const std::string& loss_out) {
    RunConfig config = load_config_or_default(config_path);
    ClassChoice choice = parse_classes(classes);
    DatasetManifest manifest = read_manifest(manifest_path);

    Model model = build_yolov2(to_network_config(config, choice.num_classes), config.train.seed);
    apply_bn_momentum(model, config.bn_momentum);

    TrainResult result = train(model, manifest, config.train, choice.single_class);
    save_weights(model, weights_out);
    write_loss_csv(loss_out.empty() ? weights_out + ".loss.csv" : loss_out, result);

    if (!result.epoch_mean_loss.empty())
        std::cout << "trained " << config.train.epochs << " epochs, mean loss "
                  << result.epoch_mean_loss.front() << " -> " << result.epoch_mean_loss.back()
                  << "\n";
    std::cout << "weights written to " << weights_out << "\n";
    return 0;
}

int cmd_detect(const std::string& weights_path, const std::string& manifest_path,
               const std::string& out_path, const std::string& config_path) {
    RunConfig config = load_config_or_default(config_path);
    WeightsHeader header = read_weights_header(weights_path);

    NetworkConfig net = to_network_config(config, header.num_classes);
    net.num_anchors = header.num_anchors;
    net.input_channels = header.input_channels;
    net.input_size = header.input_size;
    validate(net);
    Model model = build_yolov2(net, config.train.seed);
    load_weights(model, weights_path);

    DatasetManifest manifest = read_manifest(manifest_path);
    const std::vector<ManifestEntry> entries = manifest.in_split(Split::test);
    if (entries.empty()) throw Error("detect: manifest test split is empty");

    std::vector<DetectionRecord> records;
    for (const ManifestEntry& e : entries) {
        ImageBuffer img = read_pnm(manifest.resolve(e.image_path));
        Tensor<float> input = image_to_tensor(img, net.input_channels);
        Tensor<float> raw = forward(model, input, /*training=*/false);
        std::vector<Detection> dets = nms(decode(raw, net, config.conf_threshold), config.nms_iou);
        for (const Detection& d : dets) records.push_back(DetectionRecord{e.image_id, d});
    }
    write_detection_file(out_path, records);
    std::cout << records.size() << " detections over " << entries.size() << " test images -> "
              << out_path << "\n";
    return 0;
}

int cmd_eval(const std::string& detections_path, const std::string& detections2_path,
             const std::string& manifest_path, const std::string& report_path,
             const std::string& config_path) {
    RunConfig config = load_config_or_default(config_path);
    DatasetManifest manifest = read_manifest(manifest_path);
    const std::vector<ManifestEntry> entries = manifest.in_split(Split::test);
    if (entries.empty()) throw Error("eval: manifest test split is empty");

    std::vector<DetectionRecord> detections = read_detection_file(detections_path);
    if (!detections2_path.empty()) {
        // Two single-condition files, one per region: first is the iris run,
        // second the periocular run.
        detections = remap_single_class(std::move(detections), 0, detections_path);
        for (DetectionRecord& r :
             remap_single_class(read_detection_file(detections2_path), 1, detections2_path))
            detections.push_back(std::move(r));
    }

    EvalOptions options;
    options.conf_threshold = config.eval_conf_threshold;
    options.interpolation = config.interpolation;
    EvalReport report = evaluate(detections, load_ground_truth(manifest, entries),
                                 test_image_ids(entries), {0, 1}, options);
    write_report_text(report, report_path);
    write_report_csv(report, report_path + ".csv");
    std::cout << "mAP " << report.map << ", report -> " << report_path << "\n";
    return 0;
}

void write_compare_report(const std::filesystem::path& path, const EvalReport& multi,
                          const EvalReport& single,
                          const std::vector<WilcoxonResult>& tests, double alpha) {
    auto fmt = [](double v) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.6f", v);
        return std::string(buf);
    };
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open report for writing: " + path.string());
    out << "# multi vs single detection comparison\n";
    out << "images\t" << multi.num_images << "\n";
    out << "alpha\t" << fmt(alpha) << "\n\n";

    out << "condition\tclass\tname\tnum_gt\tnum_det\ttp\tfp\tmean_iou\tprecision\trecall\t"
           "f_score\tap\n";
    for (const auto* report : {&multi, &single}) {
        const char* cond = report == &multi ? "multi" : "single";
        for (const ClassReport& c : report->classes)
            out << cond << "\t" << c.class_id << "\t" << class_name(c.class_id) << "\t" << c.num_gt
                << "\t" << c.num_detections << "\t" << c.fscore.tp << "\t" << c.fscore.fp << "\t"
                << fmt(c.mean_iou) << "\t" << fmt(c.fscore.precision) << "\t"
                << fmt(c.fscore.recall) << "\t" << fmt(c.fscore.f) << "\t"
                << fmt(c.average_precision) << "\n";
    }
    out << "\ncondition\tmAP\n";
    out << "multi\t" << fmt(multi.map) << "\n";
    out << "single\t" << fmt(single.map) << "\n";

    out << "\n# wilcoxon signed-rank on paired per-image IoU (multi vs single)\n";
    out << "class\tname\tn_effective\tw_statistic\tp_value\tmethod\tsignificant\n";
    for (size_t i = 0; i < tests.size(); ++i) {
        const WilcoxonResult& t = tests[i];
        char pbuf[64];
        std::snprintf(pbuf, sizeof(pbuf), "%.9g", t.p_value);
        out << i << "\t" << class_name(static_cast<int>(i)) << "\t" << t.n_effective << "\t"
            << fmt(t.statistic) << "\t" << pbuf << "\t" << t.method() << "\t"
            << (t.significant ? "yes" : "no") << "\n";
    }
    out << "\n";
    for (size_t i = 0; i < tests.size(); ++i) {
        out << "verdict\tclass " << i << " (" << class_name(static_cast<int>(i)) << "): "
            << (tests[i].significant
                    ? "statistically different between multi and single at alpha="
                    : "no statistical difference between multi and single at alpha=")
            << fmt(alpha) << "\n";
    }
    if (!out) throw IoError("write failed: " + path.string());
}

int cmd_compare(const std::string& multi_path, const std::string& iris_path,
                const std::string& peri_path, const std::string& manifest_path,
                const std::string& report_path, const std::string& config_path) {
    RunConfig config = load_config_or_default(config_path);
    DatasetManifest manifest = read_manifest(manifest_path);
    const std::vector<ManifestEntry> entries = manifest.in_split(Split::test);
    if (entries.empty()) throw Error("compare: manifest test split is empty");

    const std::vector<GroundTruth> gt = load_ground_truth(manifest, entries);
    const std::vector<std::string> ids = test_image_ids(entries);

    std::vector<DetectionRecord> multi = read_detection_file(multi_path);
    std::vector<DetectionRecord> single =
        remap_single_class(read_detection_file(iris_path), 0, iris_path);
    for (DetectionRecord& r : remap_single_class(read_detection_file(peri_path), 1, peri_path))
        single.push_back(std::move(r));

    EvalOptions options;
    options.conf_threshold = config.eval_conf_threshold;
    options.interpolation = config.interpolation;
    EvalReport multi_report = evaluate(multi, gt, ids, {0, 1}, options);
    EvalReport single_report = evaluate(single, gt, ids, {0, 1}, options);

    std::vector<WilcoxonResult> tests;
    for (int c : {0, 1})
        tests.push_back(wilcoxon_signed_rank(multi_report.per_image_iou[c],
                                             single_report.per_image_iou[c], config.alpha));

    write_compare_report(report_path, multi_report, single_report, tests, config.alpha);
    std::cout << "multi mAP " << multi_report.map << ", single mAP " << single_report.map
              << ", report -> " << report_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ocular: train and evaluate iris/periocular detectors"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    int synth_count = 100;
    uint64_t synth_seed = 1;
    int synth_size = 160;
    std::string synth_out;
    synth->add_option("--count", synth_count, "number of images")->required();
    synth->add_option("--seed", synth_seed, "generator seed")->required();
    synth->add_option("--size", synth_size, "square image size in pixels");
    synth->add_option("--out", synth_out, "output directory")->required();

    // split
    auto* split = app.add_subcommand("split", "reassign train/test/val splits");
    std::string split_manifest;
    uint64_t split_seed = 1;
    split->add_option("--manifest", split_manifest, "manifest file")->required();
    split->add_option("--seed", split_seed, "shuffle seed")->required();

    // train
    auto* train_cmd = app.add_subcommand("train", "train a detector");
    std::string train_manifest, train_classes, train_config, train_weights, train_loss;
    train_cmd->add_option("--manifest", train_manifest, "manifest file")->required();
    train_cmd->add_option("--classes", train_classes, "iris | periocular | both")
        ->required()
        ->check(CLI::IsMember({"iris", "periocular", "both"}));
    train_cmd->add_option("--config", train_config, "key=value config file");
    train_cmd->add_option("--weights-out", train_weights, "output weights file")->required();
    train_cmd->add_option("--loss-out", train_loss, "loss history csv (default <weights>.loss.csv)");

    // detect
    auto* detect_cmd = app.add_subcommand("detect", "run detection over the test split");
    std::string det_weights, det_manifest, det_out, det_config;
    detect_cmd->add_option("--weights", det_weights, "weights file")->required();
    detect_cmd->add_option("--manifest", det_manifest, "manifest file")->required();
    detect_cmd->add_option("--out", det_out, "output detection file")->required();
    detect_cmd->add_option("--config", det_config, "key=value config file");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a detection file");
    std::string eval_dets, eval_dets2, eval_manifest, eval_report, eval_config;
    eval_cmd->add_option("--detections", eval_dets, "detection file")->required();
    eval_cmd->add_option("--detections2", eval_dets2,
                         "periocular single-run file to merge (iris file first)");
    eval_cmd->add_option("--manifest", eval_manifest, "manifest file")->required();
    eval_cmd->add_option("--report", eval_report, "output report path")->required();
    eval_cmd->add_option("--config", eval_config, "key=value config file");

    // compare
    auto* cmp = app.add_subcommand("compare", "multi vs single conditions with significance test");
    std::string cmp_multi, cmp_iris, cmp_peri, cmp_manifest, cmp_report, cmp_config;
    cmp->add_option("--multi", cmp_multi, "2-class detection file")->required();
    cmp->add_option("--single-iris", cmp_iris, "iris single-run detection file")->required();
    cmp->add_option("--single-peri", cmp_peri, "periocular single-run detection file")->required();
    cmp->add_option("--manifest", cmp_manifest, "manifest file")->required();
    cmp->add_option("--report", cmp_report, "output report path")->required();
    cmp->add_option("--config", cmp_config, "key=value config file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;  // usage errors -> 1, --help -> 0
    }

    try {
        if (synth->parsed()) return cmd_synth(synth_count, synth_seed, synth_size, synth_out);
        if (split->parsed()) return cmd_split(split_manifest, split_seed);
        if (train_cmd->parsed())
            return cmd_train(train_manifest, train_classes, train_config, train_weights,
                             train_loss);
        if (detect_cmd->parsed()) return cmd_detect(det_weights, det_manifest, det_out, det_config);
        if (eval_cmd->parsed())
            return cmd_eval(eval_dets, eval_dets2, eval_manifest, eval_report, eval_config);
        if (cmp->parsed())
            return cmd_compare(cmp_multi, cmp_iris, cmp_peri, cmp_manifest, cmp_report,
                               cmp_config);
    } catch (const ocular::NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const ocular::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
