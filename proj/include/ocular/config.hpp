#pragma once

#include <filesystem>

#include "ocular/metrics.hpp"
#include "ocular/network.hpp"
#include "ocular/training.hpp"

namespace ocular {

// Flat key=value run configuration shared by the CLI subcommands. Every key
// is optional; '#' starts a comment. Unknown keys are rejected.
struct RunConfig {
    Profile profile = Profile::full;
    int input_size = 0;  // 0 = profile default (416 full, 160 tiny)
    int input_channels = 1;
    int num_anchors = 5;
    AnchorPriors anchors;  // empty = built-in priors

    TrainConfig train;
    double bn_momentum = 0.99;

    double conf_threshold = 0.25;  // detect
    double nms_iou = 0.45;
    double eval_conf_threshold = 0.25;
    ApInterpolation interpolation = ApInterpolation::all_point;
    double alpha = 0.05;

    int effective_input_size() const {
        if (input_size > 0) return input_size;
        return profile == Profile::tiny ? 160 : 416;
    }
};

RunConfig load_run_config(const std::filesystem::path& path);

NetworkConfig to_network_config(const RunConfig& config, int num_classes);

}  // namespace ocular
