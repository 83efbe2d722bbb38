#include "ocular/config.hpp"

#include <charconv>
#include <fstream>

namespace ocular {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

double to_double(const std::string& v, const std::string& where) {
    double out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        throw FormatError(where + ": expected a number, got '" + v + "'");
    return out;
}

long to_long(const std::string& v, const std::string& where) {
    long out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        throw FormatError(where + ": expected an integer, got '" + v + "'");
    return out;
}

// "pw,ph;pw,ph;..."
AnchorPriors parse_anchors(const std::string& v, const std::string& where) {
    AnchorPriors priors;
    size_t start = 0;
    while (start <= v.size()) {
        size_t semi = v.find(';', start);
        std::string pair = v.substr(start, semi == std::string::npos ? semi : semi - start);
        size_t comma = pair.find(',');
        if (comma == std::string::npos)
            throw FormatError(where + ": anchor pair '" + pair + "' must be 'w,h'");
        priors.emplace_back(to_double(trim(pair.substr(0, comma)), where),
                            to_double(trim(pair.substr(comma + 1)), where));
        if (semi == std::string::npos) break;
        start = semi + 1;
    }
    return priors;
}

}  // namespace

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path.string());

    RunConfig config;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string where = path.string() + ":" + std::to_string(line_no);
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos) throw FormatError(where + ": expected key=value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (value.empty()) throw FormatError(where + ": empty value for key '" + key + "'");

        if (key == "profile") {
            if (value == "full")
                config.profile = Profile::full;
            else if (value == "tiny")
                config.profile = Profile::tiny;
            else
                throw FormatError(where + ": profile must be full or tiny");
        } else if (key == "input_size") {
            config.input_size = static_cast<int>(to_long(value, where));
        } else if (key == "input_channels") {
            config.input_channels = static_cast<int>(to_long(value, where));
        } else if (key == "num_anchors") {
            config.num_anchors = static_cast<int>(to_long(value, where));
        } else if (key == "anchors") {
            config.anchors = parse_anchors(value, where);
        } else if (key == "epochs") {
            config.train.epochs = static_cast<int>(to_long(value, where));
        } else if (key == "batch_size") {
            config.train.batch_size = static_cast<int>(to_long(value, where));
        } else if (key == "learning_rate") {
            config.train.learning_rate = to_double(value, where);
        } else if (key == "momentum") {
            config.train.momentum = to_double(value, where);
        } else if (key == "weight_decay") {
            config.train.weight_decay = to_double(value, where);
        } else if (key == "lambda_coord") {
            config.train.lambda_coord = to_double(value, where);
        } else if (key == "lambda_noobj") {
            config.train.lambda_noobj = to_double(value, where);
        } else if (key == "seed") {
            config.train.seed = static_cast<uint64_t>(to_long(value, where));
        } else if (key == "bn_momentum") {
            config.bn_momentum = to_double(value, where);
        } else if (key == "conf_threshold") {
            config.conf_threshold = to_double(value, where);
        } else if (key == "nms_iou") {
            config.nms_iou = to_double(value, where);
        } else if (key == "eval_conf_threshold") {
            config.eval_conf_threshold = to_double(value, where);
        } else if (key == "ap_interpolation") {
            if (value == "all-point")
                config.interpolation = ApInterpolation::all_point;
            else if (value == "11-point")
                config.interpolation = ApInterpolation::eleven_point;
            else
                throw FormatError(where + ": ap_interpolation must be all-point or 11-point");
        } else if (key == "alpha") {
            config.alpha = to_double(value, where);
        } else {
            throw FormatError(where + ": unknown key '" + key + "'");
        }
    }
    config.train.profile = config.profile;
    return config;
}

NetworkConfig to_network_config(const RunConfig& config, int num_classes) {
    NetworkConfig net;
    net.num_classes = num_classes;
    net.num_anchors = config.num_anchors;
    net.input_channels = config.input_channels;
    net.input_size = config.effective_input_size();
    net.profile = config.profile;
    if (!config.anchors.empty()) net.anchor_priors = config.anchors;
    if (static_cast<int>(net.anchor_priors.size()) != net.num_anchors &&
        config.anchors.empty() && net.num_anchors != 5)
        throw Error("config: num_anchors=" + std::to_string(net.num_anchors) +
                    " requires an explicit anchors= list");
    validate(net);
    return net;
}

}  // namespace ocular
