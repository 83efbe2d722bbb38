#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "ocular/kernels.hpp"
#include "ocular/tensor.hpp"

namespace ocular {

enum class LayerKind { conv, maxpool, detection };
enum class LayerGroup { external, internal, none };

// One row of the 25-layer architecture. Expected shapes are (C,H,W) for a
// single image and are fixed at build time from the network configuration.
struct LayerSpec {
    int index = 0;
    LayerKind kind = LayerKind::conv;
    LayerGroup group = LayerGroup::none;
    int filters = 0;  // conv only
    int kernel = 0;   // conv: 1 or 3; maxpool: 2
    int stride = 1;   // conv: 1; maxpool: 2
    bool batch_norm = false;
    Shape3 in_shape, out_shape;
};

enum class Profile { full, tiny };

inline const char* profile_name(Profile p) { return p == Profile::full ? "full" : "tiny"; }

// Anchor priors are (width, height) pairs in grid-cell units.
using AnchorPriors = std::vector<std::pair<double, double>>;

AnchorPriors default_anchor_priors();

struct NetworkConfig {
    int num_classes = 2;    // 1 (separate) or 2 (simultaneous)
    int num_anchors = 5;
    int input_channels = 1; // 1 or 3
    int input_size = 416;   // divisible by 32
    Profile profile = Profile::full;
    AnchorPriors anchor_priors = default_anchor_priors();

    int grid_size() const { return input_size / 32; }
    int head_filters() const { return (num_classes + 5) * num_anchors; }
    int slot_channels() const { return num_classes + 5; }
};

void validate(const NetworkConfig& config);

// Parameters of one convolutional layer. All layers except the last carry
// batch normalization and no convolution bias; the stored shift vector acts
// as the normalization's beta. The last (prediction) layer is plain
// convolution plus bias.
struct ConvBlock {
    ConvParams<float> conv;
    BatchNormParams<float> bn;
    bool has_bn = true;
    int layer_index = 0;
};

struct Model {
    NetworkConfig config;
    std::vector<LayerSpec> layers;   // 25 entries
    std::vector<ConvBlock> blocks;   // one per conv layer, in layer order
    uint64_t init_seed = 0;

    ConvBlock& block_for_layer(int layer_index);
    const ConvBlock& block_for_layer(int layer_index) const;
};

// Builds the 25-layer detector. The tiny profile quarters every filter width
// except the prediction head, whose size is always (C + 5) * A.
Model build_yolov2(const NetworkConfig& config, uint64_t seed = 1);

// Layer table only (no parameters); exposed for shape conformance checks.
std::vector<LayerSpec> make_layer_specs(const NetworkConfig& config);

// Per-layer activations kept by the training-mode forward pass so the
// backward pass can be run. activations[i] is the output of layer i;
// index -1 (the network input) is stored separately.
struct ForwardTrace {
    Tensor<float> input;
    std::vector<Tensor<float>> conv_out;           // per layer; empty tensor when not conv
    std::vector<Tensor<float>> bn_out;             // post-normalization, pre-activation
    std::vector<Tensor<float>> activations;        // layer outputs
    std::vector<BatchNormStats<float>> bn_stats;   // per layer; empty when not batch-normed
    std::vector<std::vector<int64_t>> pool_argmax; // per layer; empty when not maxpool
};

// Inference-style forward. training only selects batch-norm statistics (and
// updates the running estimates); no trace is recorded.
Tensor<float> forward(Model& model, const Tensor<float>& batch, bool training);

// Forward pass that records everything backward() needs. Uses batch
// statistics and updates the running estimates.
Tensor<float> forward_train(Model& model, const Tensor<float>& batch, ForwardTrace& trace);

// Parameter gradients, mirrored on Model::blocks.
struct ParamGrads {
    struct BlockGrads {
        Tensor<float> weights;
        std::vector<float> bias;   // conv bias or batch-norm beta
        std::vector<float> gamma;  // batch-normed layers only
    };
    std::vector<BlockGrads> blocks;
};

ParamGrads make_zero_grads(const Model& model);

// Backpropagates grad_output through the recorded trace, accumulating into
// grads. Returns nothing; the gradient wrt the network input is discarded.
void backward(const Model& model, const ForwardTrace& trace, const Tensor<float>& grad_output,
              ParamGrads& grads);

// Weights file: 8-byte magic "OCLRWTS1"; four little-endian int32 fields
// (num_classes, num_anchors, input_channels, input_size); then per conv
// layer in index order: bias, then (batch-normed layers) gamma,
// running_mean, running_var, then weights in (out,in,kh,kw) row-major order.
// All payload values are little-endian 32-bit floats.
void save_weights(const Model& model, const std::filesystem::path& path);
void load_weights(Model& model, const std::filesystem::path& path);

struct WeightsHeader {
    int num_classes = 0, num_anchors = 0, input_channels = 0, input_size = 0;
};

// Reads only the magic and the four header fields, so a caller can build a
// matching model before loading the payload.
WeightsHeader read_weights_header(const std::filesystem::path& path);

}  // namespace ocular
