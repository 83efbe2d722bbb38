#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ocular/dataset.hpp"
#include "ocular/image_io.hpp"
#include "ocular/network.hpp"

namespace ocular {

struct TrainConfig {
    int epochs = 60;
    int batch_size = 8;
    double learning_rate = 1e-3;
    double momentum = 0.9;
    double weight_decay = 5e-4;   // applied to convolution weights only
    double lambda_coord = 5.0;
    double lambda_noobj = 0.5;
    uint64_t seed = 1;
    Profile profile = Profile::full;
};

// One slot per (cell, anchor). Exactly one slot is responsible for each
// ground-truth box: the cell containing the box center, and within it the
// anchor prior with maximal IoU against the box size (compared as
// co-centered rectangles). tx/ty are targets for sigmoid(raw); tw/th are
// targets for the raw values themselves.
struct TargetMap {
    int grid = 0, anchors = 0, classes = 0;
    std::vector<uint8_t> responsible;  // grid*grid*anchors, row-major cells then anchor
    std::vector<float> tx, ty, tw, th;
    std::vector<int> class_id;

    int slot(int cell_i, int cell_j, int anchor) const {
        return (cell_i * grid + cell_j) * anchors + anchor;
    }
};

// If two boxes claim the same (cell, anchor), the later one in list order
// falls back to its next-best prior; a cell with every anchor taken is an
// error. Boxes whose center falls outside [0,1]^2 are rejected.
TargetMap assign_targets(const std::vector<Annotation>& annotations, const NetworkConfig& config);

template <typename T>
struct LossResult {
    double loss = 0;       // mean over the batch
    Tensor<T> grad;        // d(loss)/d(raw output), same shape as the input
};

// Sum-squared detection loss over a raw (B, (C+5)*A, S, S) output:
//   lambda_coord * sum_resp [(sig(tx)-tx')^2 + (sig(ty)-ty')^2
//                            + (tw-tw')^2 + (th-th')^2]
// + sum_resp (sig(to)-1)^2
// + lambda_noobj * sum_nonresp sig(to)^2
// + sum_resp cross_entropy(softmax(class logits), class')
// averaged over the batch. Raises NumericError if the loss is not finite.
template <typename T>
LossResult<T> detection_loss(const Tensor<T>& raw_output, const std::vector<TargetMap>& targets,
                             const TrainConfig& config);

struct TrainResult {
    std::vector<double> epoch_mean_loss;
};

// Seeded-shuffled mini-batch SGD with momentum and weight decay over the
// manifest's train split. For a single-class model, single_class selects
// which annotation class (0 or 1) the model is trained on; annotations of
// the other class are dropped and the kept one becomes model class 0.
// Identical (seed, data, config) gives bit-identical final weights.
TrainResult train(Model& model, const DatasetManifest& manifest, const TrainConfig& config,
                  int single_class = -1);

void write_loss_csv(const std::filesystem::path& path, const TrainResult& result);

// Converts an 8-bit image to a (1,C,H,W) tensor scaled to [0,1]. A grayscale
// image may be replicated to 3 channels; RGB to 1 channel is an error.
Tensor<float> image_to_tensor(const ImageBuffer& image, int expect_channels);

// k-means over box sizes (1 - IoU distance, co-centered comparison) to
// derive anchor priors from data. Boxes are (w,h) in grid-cell units.
AnchorPriors kmeans_anchors(const std::vector<std::pair<double, double>>& boxes, int k,
                            uint64_t seed, int iterations = 100);

}  // namespace ocular
