#include "ocular/network.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "ocular/rng.hpp"

namespace ocular {

namespace {

constexpr float kLeakySlope = 0.1f;
constexpr char kWeightsMagic[8] = {'O', 'C', 'L', 'R', 'W', 'T', 'S', '1'};

struct RowDef {
    LayerKind kind;
    LayerGroup group;
    int filters;  // full-profile width; 0 marks the prediction head
    int kernel;
};

// Rows 0-24: 19 convolutions, 5 max-pools and the detection layer. The
// external group is 3x3, the internal group 1x1, alternating so the 1x1
// layers compress the feature space between 3x3 layers.
constexpr std::array<RowDef, 25> kRows = {{
    {LayerKind::conv, LayerGroup::external, 32, 3},    // 0
    {LayerKind::maxpool, LayerGroup::none, 0, 2},      // 1
    {LayerKind::conv, LayerGroup::external, 64, 3},    // 2
    {LayerKind::maxpool, LayerGroup::none, 0, 2},      // 3
    {LayerKind::conv, LayerGroup::external, 128, 3},   // 4
    {LayerKind::conv, LayerGroup::internal, 64, 1},    // 5
    {LayerKind::conv, LayerGroup::external, 128, 3},   // 6
    {LayerKind::maxpool, LayerGroup::none, 0, 2},      // 7
    {LayerKind::conv, LayerGroup::external, 256, 3},   // 8
    {LayerKind::conv, LayerGroup::internal, 128, 1},   // 9
    {LayerKind::conv, LayerGroup::external, 256, 3},   // 10
    {LayerKind::maxpool, LayerGroup::none, 0, 2},      // 11
    {LayerKind::conv, LayerGroup::external, 512, 3},   // 12
    {LayerKind::conv, LayerGroup::internal, 256, 1},   // 13
    {LayerKind::conv, LayerGroup::external, 512, 3},   // 14
    {LayerKind::conv, LayerGroup::internal, 256, 1},   // 15
    {LayerKind::conv, LayerGroup::external, 512, 3},   // 16
    {LayerKind::maxpool, LayerGroup::none, 0, 2},      // 17
    {LayerKind::conv, LayerGroup::external, 1024, 3},  // 18
    {LayerKind::conv, LayerGroup::internal, 512, 1},   // 19
    {LayerKind::conv, LayerGroup::external, 1024, 3},  // 20
    {LayerKind::conv, LayerGroup::internal, 512, 1},   // 21
    {LayerKind::conv, LayerGroup::external, 1024, 3},  // 22
    {LayerKind::conv, LayerGroup::none, 0, 1},         // 23: (C+5)*A filters
    {LayerKind::detection, LayerGroup::none, 0, 0},    // 24
}};

int scaled_filters(const NetworkConfig& config, int row_index) {
    const RowDef& row = kRows[static_cast<size_t>(row_index)];
    if (row.filters == 0) return config.head_filters();
    return config.profile == Profile::tiny ? row.filters / 4 : row.filters;
}

}  // namespace

AnchorPriors default_anchor_priors() {
    return {{0.6, 0.9}, {1.2, 1.8}, {2.4, 3.2}, {4.5, 5.5}, {8.0, 9.0}};
}

void validate(const NetworkConfig& config) {
    if (config.num_classes != 1 && config.num_classes != 2)
        throw Error("network config: num_classes must be 1 or 2, got " +
                    std::to_string(config.num_classes));
    if (config.num_anchors <= 0)
        throw Error("network config: num_anchors must be positive, got " +
                    std::to_string(config.num_anchors));
    if (config.input_channels != 1 && config.input_channels != 3)
        throw Error("network config: input_channels must be 1 or 3, got " +
                    std::to_string(config.input_channels));
    if (config.input_size <= 0 || config.input_size % 32 != 0)
        throw Error("network config: input_size must be a positive multiple of 32, got " +
                    std::to_string(config.input_size));
    if (static_cast<int>(config.anchor_priors.size()) != config.num_anchors)
        throw Error("network config: " + std::to_string(config.anchor_priors.size()) +
                    " anchor priors for num_anchors=" + std::to_string(config.num_anchors));
    for (const auto& [pw, ph] : config.anchor_priors)
        if (!(pw > 0) || !(ph > 0)) throw Error("network config: anchor priors must be positive");
}

std::vector<LayerSpec> make_layer_specs(const NetworkConfig& config) {
    validate(config);
    std::vector<LayerSpec> specs;
    specs.reserve(kRows.size());
    Shape3 cur{config.input_channels, config.input_size, config.input_size};
    for (int i = 0; i < static_cast<int>(kRows.size()); ++i) {
        const RowDef& row = kRows[static_cast<size_t>(i)];
        LayerSpec s;
        s.index = i;
        s.kind = row.kind;
        s.group = row.group;
        s.in_shape = cur;
        switch (row.kind) {
            case LayerKind::conv:
                s.filters = scaled_filters(config, i);
                s.kernel = row.kernel;
                s.stride = 1;
                s.batch_norm = i != 23;  // prediction head: bias only
                s.out_shape = {s.filters, cur.h, cur.w};
                break;
            case LayerKind::maxpool:
                s.kernel = 2;
                s.stride = 2;
                s.out_shape = {cur.c, cur.h / 2, cur.w / 2};
                break;
            case LayerKind::detection:
                s.out_shape = cur;
                break;
        }
        specs.push_back(s);
        cur = s.out_shape;
    }
    return specs;
}

ConvBlock& Model::block_for_layer(int layer_index) {
    for (auto& b : blocks)
        if (b.layer_index == layer_index) return b;
    throw Error("model: no conv block for layer " + std::to_string(layer_index));
}

const ConvBlock& Model::block_for_layer(int layer_index) const {
    return const_cast<Model*>(this)->block_for_layer(layer_index);
}

Model build_yolov2(const NetworkConfig& config, uint64_t seed) {
    Model model;
    model.config = config;
    model.layers = make_layer_specs(config);
    model.init_seed = seed;

    Rng rng(seed);
    for (const LayerSpec& spec : model.layers) {
        if (spec.kind != LayerKind::conv) continue;
        ConvBlock block;
        block.layer_index = spec.index;
        block.has_bn = spec.batch_norm;
        block.conv.out_channels = spec.filters;
        block.conv.in_channels = spec.in_shape.c;
        block.conv.kernel = spec.kernel;
        block.conv.weights = Tensor<float>(spec.filters, spec.in_shape.c, spec.kernel, spec.kernel);
        block.conv.bias.assign(static_cast<size_t>(spec.filters), 0.0f);

        // He-style fan-in scaling, uniform on [-sqrt(6/fan_in), +sqrt(6/fan_in)].
        const double fan_in = static_cast<double>(spec.in_shape.c) * spec.kernel * spec.kernel;
        const double bound = std::sqrt(6.0 / fan_in);
        for (int64_t i = 0; i < block.conv.weights.size(); ++i)
            block.conv.weights[i] = static_cast<float>(rng.uniform(-bound, bound));

        if (block.has_bn) {
            const size_t c = static_cast<size_t>(spec.filters);
            block.bn.gamma.assign(c, 1.0f);
            block.bn.beta.assign(c, 0.0f);
            block.bn.running_mean.assign(c, 0.0f);
            block.bn.running_var.assign(c, 1.0f);
        }
        model.blocks.push_back(std::move(block));
    }
    return model;
}

namespace {

void check_input_shape(const Model& model, const Tensor<float>& batch) {
    const Shape4& s = batch.shape();
    if (s.c != model.config.input_channels || s.h != model.config.input_size ||
        s.w != model.config.input_size || s.n <= 0)
        throw Error("forward: layer 0 expects input (n," +
                    std::to_string(model.config.input_channels) + "," +
                    std::to_string(model.config.input_size) + "," +
                    std::to_string(model.config.input_size) + "), got " + s.str());
}

void check_layer_input(const LayerSpec& spec, const Shape4& got) {
    if (got.c != spec.in_shape.c || got.h != spec.in_shape.h || got.w != spec.in_shape.w)
        throw Error("forward: layer " + std::to_string(spec.index) + " expects (c,h,w)=(" +
                    std::to_string(spec.in_shape.c) + "," + std::to_string(spec.in_shape.h) + "," +
                    std::to_string(spec.in_shape.w) + "), got " + got.str());
}

}  // namespace

Tensor<float> forward(Model& model, const Tensor<float>& batch, bool training) {
    check_input_shape(model, batch);
    Tensor<float> cur = batch;
    for (const LayerSpec& spec : model.layers) {
        check_layer_input(spec, cur.shape());
        switch (spec.kind) {
            case LayerKind::conv: {
                ConvBlock& block = model.block_for_layer(spec.index);
                cur = conv2d_forward(cur, block.conv);
                if (block.has_bn) {
                    cur = batchnorm_apply(cur, block.bn, training);
                    cur = leaky_relu(cur, kLeakySlope);
                }
                break;
            }
            case LayerKind::maxpool:
                cur = maxpool2(cur);
                break;
            case LayerKind::detection:
                break;  // raw predictions pass through; decoding is a separate stage
        }
    }
    return cur;
}

Tensor<float> forward_train(Model& model, const Tensor<float>& batch, ForwardTrace& trace) {
    check_input_shape(model, batch);
    const size_t n_layers = model.layers.size();
    trace.input = batch;
    trace.conv_out.assign(n_layers, {});
    trace.bn_out.assign(n_layers, {});
    trace.activations.assign(n_layers, {});
    trace.bn_stats.assign(n_layers, {});
    trace.pool_argmax.assign(n_layers, {});

    Tensor<float> cur = batch;
    for (const LayerSpec& spec : model.layers) {
        check_layer_input(spec, cur.shape());
        const size_t i = static_cast<size_t>(spec.index);
        switch (spec.kind) {
            case LayerKind::conv: {
                ConvBlock& block = model.block_for_layer(spec.index);
                Tensor<float> z = conv2d_forward(cur, block.conv);
                if (block.has_bn) {
                    trace.conv_out[i] = z;
                    Tensor<float> y =
                        batchnorm_apply(z, block.bn, /*training=*/true, &trace.bn_stats[i]);
                    trace.bn_out[i] = y;
                    cur = leaky_relu(y, kLeakySlope);
                } else {
                    cur = std::move(z);
                }
                break;
            }
            case LayerKind::maxpool:
                cur = maxpool2(cur, &trace.pool_argmax[i]);
                break;
            case LayerKind::detection:
                break;
        }
        trace.activations[i] = cur;
    }
    return cur;
}

ParamGrads make_zero_grads(const Model& model) {
    ParamGrads g;
    g.blocks.resize(model.blocks.size());
    for (size_t b = 0; b < model.blocks.size(); ++b) {
        const ConvBlock& block = model.blocks[b];
        g.blocks[b].weights = Tensor<float>(block.conv.weights.shape());
        g.blocks[b].bias.assign(static_cast<size_t>(block.conv.out_channels), 0.0f);
        if (block.has_bn) g.blocks[b].gamma.assign(block.bn.gamma.size(), 0.0f);
    }
    return g;
}

void backward(const Model& model, const ForwardTrace& trace, const Tensor<float>& grad_output,
              ParamGrads& grads) {
    if (grads.blocks.size() != model.blocks.size())
        throw Error("backward: gradient accumulator does not match model");

    Tensor<float> grad = grad_output;
    size_t block_idx = model.blocks.size();
    for (auto it = model.layers.rbegin(); it != model.layers.rend(); ++it) {
        const LayerSpec& spec = *it;
        const size_t i = static_cast<size_t>(spec.index);
        const Tensor<float>& layer_input =
            spec.index == 0 ? trace.input : trace.activations[i - 1];
        switch (spec.kind) {
            case LayerKind::detection:
                break;
            case LayerKind::maxpool:
                grad = maxpool2_backward(layer_input.shape(), trace.pool_argmax[i], grad);
                break;
            case LayerKind::conv: {
                --block_idx;
                const ConvBlock& block = model.blocks[block_idx];
                ParamGrads::BlockGrads& bg = grads.blocks[block_idx];
                if (block.has_bn) {
                    grad = leaky_relu_backward(trace.bn_out[i], kLeakySlope, grad);
                    BatchNormGrads<float> bng =
                        batchnorm_backward(trace.conv_out[i], block.bn, trace.bn_stats[i], grad);
                    for (size_t c = 0; c < bng.gamma.size(); ++c) {
                        bg.gamma[c] += bng.gamma[c];
                        bg.bias[c] += bng.beta[c];  // shift vector doubles as beta
                    }
                    grad = std::move(bng.input);
                    ConvGrads<float> cg = conv2d_backward(layer_input, block.conv, grad);
                    for (int64_t k = 0; k < cg.weights.size(); ++k) bg.weights[k] += cg.weights[k];
                    grad = std::move(cg.input);
                } else {
                    ConvGrads<float> cg = conv2d_backward(layer_input, block.conv, grad);
                    for (int64_t k = 0; k < cg.weights.size(); ++k) bg.weights[k] += cg.weights[k];
                    for (size_t c = 0; c < cg.bias.size(); ++c) bg.bias[c] += cg.bias[c];
                    grad = std::move(cg.input);
                }
                break;
            }
        }
    }
}

namespace {

void write_f32_le(std::ofstream& out, const float* v, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        uint32_t u = std::bit_cast<uint32_t>(v[i]);
        unsigned char b[4] = {static_cast<unsigned char>(u), static_cast<unsigned char>(u >> 8),
                              static_cast<unsigned char>(u >> 16),
                              static_cast<unsigned char>(u >> 24)};
        out.write(reinterpret_cast<const char*>(b), 4);
    }
}

void write_i32_le(std::ofstream& out, int32_t v) {
    uint32_t u = static_cast<uint32_t>(v);
    unsigned char b[4] = {static_cast<unsigned char>(u), static_cast<unsigned char>(u >> 8),
                          static_cast<unsigned char>(u >> 16), static_cast<unsigned char>(u >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

// Reads n floats; on short read reports the expected vs actual byte counts
// for the current layer.
void read_f32_le(std::ifstream& in, float* v, size_t n, int layer_index) {
    std::vector<unsigned char> buf(n * 4);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<size_t>(in.gcount()) != buf.size())
        throw FormatError("weights file truncated in layer " + std::to_string(layer_index) +
                          ": expected " + std::to_string(buf.size()) + " bytes, got " +
                          std::to_string(in.gcount()));
    for (size_t i = 0; i < n; ++i) {
        uint32_t u = static_cast<uint32_t>(buf[4 * i]) | (static_cast<uint32_t>(buf[4 * i + 1]) << 8) |
                     (static_cast<uint32_t>(buf[4 * i + 2]) << 16) |
                     (static_cast<uint32_t>(buf[4 * i + 3]) << 24);
        v[i] = std::bit_cast<float>(u);
    }
}

int32_t read_i32_le(std::ifstream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (in.gcount() != 4) throw FormatError("weights file truncated in header");
    uint32_t u = static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
                 (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
    return static_cast<int32_t>(u);
}

}  // namespace

void save_weights(const Model& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open weights file for writing: " + path.string());
    out.write(kWeightsMagic, sizeof(kWeightsMagic));
    write_i32_le(out, model.config.num_classes);
    write_i32_le(out, model.config.num_anchors);
    write_i32_le(out, model.config.input_channels);
    write_i32_le(out, model.config.input_size);
    for (const ConvBlock& block : model.blocks) {
        const size_t c = static_cast<size_t>(block.conv.out_channels);
        if (block.has_bn) {
            write_f32_le(out, block.bn.beta.data(), c);
            write_f32_le(out, block.bn.gamma.data(), c);
            write_f32_le(out, block.bn.running_mean.data(), c);
            write_f32_le(out, block.bn.running_var.data(), c);
        } else {
            write_f32_le(out, block.conv.bias.data(), c);
        }
        write_f32_le(out, block.conv.weights.data(), static_cast<size_t>(block.conv.weights.size()));
    }
    if (!out) throw IoError("write failed: " + path.string());
}

WeightsHeader read_weights_header(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open weights file: " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (in.gcount() != 8 || std::memcmp(magic, kWeightsMagic, 8) != 0)
        throw FormatError(path.string() + ": not a weights file");
    WeightsHeader h;
    h.num_classes = read_i32_le(in);
    h.num_anchors = read_i32_le(in);
    h.input_channels = read_i32_le(in);
    h.input_size = read_i32_le(in);
    return h;
}

void load_weights(Model& model, const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open weights file: " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (in.gcount() != 8 || std::memcmp(magic, kWeightsMagic, 8) != 0)
        throw FormatError(path.string() + ": not a weights file");
    const int32_t c = read_i32_le(in);
    const int32_t a = read_i32_le(in);
    const int32_t ch = read_i32_le(in);
    const int32_t sz = read_i32_le(in);
    if (c != model.config.num_classes || a != model.config.num_anchors ||
        ch != model.config.input_channels || sz != model.config.input_size)
        throw FormatError(path.string() + ": weights header (classes=" + std::to_string(c) +
                          ", anchors=" + std::to_string(a) + ", channels=" + std::to_string(ch) +
                          ", size=" + std::to_string(sz) + ") does not match model (classes=" +
                          std::to_string(model.config.num_classes) + ", anchors=" +
                          std::to_string(model.config.num_anchors) + ", channels=" +
                          std::to_string(model.config.input_channels) + ", size=" +
                          std::to_string(model.config.input_size) + ")");
    for (ConvBlock& block : model.blocks) {
        const size_t n = static_cast<size_t>(block.conv.out_channels);
        if (block.has_bn) {
            read_f32_le(in, block.bn.beta.data(), n, block.layer_index);
            read_f32_le(in, block.bn.gamma.data(), n, block.layer_index);
            read_f32_le(in, block.bn.running_mean.data(), n, block.layer_index);
            read_f32_le(in, block.bn.running_var.data(), n, block.layer_index);
        } else {
            read_f32_le(in, block.conv.bias.data(), n, block.layer_index);
        }
        read_f32_le(in, block.conv.weights.data(), static_cast<size_t>(block.conv.weights.size()),
                    block.layer_index);
    }
    char extra;
    if (in.read(&extra, 1); in.gcount() != 0)
        throw FormatError(path.string() + ": trailing bytes after last layer");
}

}  // namespace ocular
