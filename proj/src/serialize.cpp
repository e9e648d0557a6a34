#include "rebafl/serialize.hpp"

#include <fstream>
#include <sstream>

#include "rebafl/errors.hpp"

namespace rebafl {

using nlohmann::json;

namespace {

const char* kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Dense: return "dense";
        case LayerKind::ReLU: return "relu";
        case LayerKind::Conv: return "conv";
        case LayerKind::MaxPool: return "maxpool";
    }
    return "dense";
}

LayerKind kind_from_name(const std::string& s) {
    if (s == "dense") return LayerKind::Dense;
    if (s == "relu") return LayerKind::ReLU;
    if (s == "conv") return LayerKind::Conv;
    if (s == "maxpool") return LayerKind::MaxPool;
    throw DataError("model json: unknown layer kind '" + s + "'");
}

}  // namespace

json model_to_json(const ModelParams& params) {
    json layers = json::array();
    for (const Layer& l : params.extractor) {
        json jl{{"kind", kind_name(l.kind)},
                {"in_dim", l.in_dim},
                {"out_dim", l.out_dim}};
        if (l.kind == LayerKind::Conv || l.kind == LayerKind::MaxPool) {
            jl["in_ch"] = l.in_ch;
            jl["in_h"] = l.in_h;
            jl["in_w"] = l.in_w;
            jl["out_ch"] = l.out_ch;
            jl["out_h"] = l.out_h;
            jl["out_w"] = l.out_w;
            jl["ksize"] = l.ksize;
            jl["pad"] = l.pad;
        }
        if (!l.w.data.empty()) {
            jl["w_rows"] = l.w.rows;
            jl["w_cols"] = l.w.cols;
            jl["w"] = l.w.data;
            jl["b"] = l.b;
        }
        layers.push_back(std::move(jl));
    }
    return json{{"arch", params.arch},
                {"input_dim", params.input_dim},
                {"feature_dim", params.feature_dim},
                {"num_classes", params.num_classes},
                {"extractor", std::move(layers)},
                {"classifier",
                 json{{"w_rows", params.classifier.w.rows},
                      {"w_cols", params.classifier.w.cols},
                      {"w", params.classifier.w.data},
                      {"b", params.classifier.b},
                      {"use_bias", params.classifier.use_bias}}}};
}

ModelParams model_from_json(const json& j) {
    ModelParams m;
    m.arch = j.at("arch").get<std::string>();
    m.input_dim = j.at("input_dim").get<std::size_t>();
    m.feature_dim = j.at("feature_dim").get<std::size_t>();
    m.num_classes = j.at("num_classes").get<std::size_t>();
    for (const json& jl : j.at("extractor")) {
        Layer l;
        l.kind = kind_from_name(jl.at("kind").get<std::string>());
        l.in_dim = jl.at("in_dim").get<std::size_t>();
        l.out_dim = jl.at("out_dim").get<std::size_t>();
        if (l.kind == LayerKind::Conv || l.kind == LayerKind::MaxPool) {
            l.in_ch = jl.at("in_ch").get<std::size_t>();
            l.in_h = jl.at("in_h").get<std::size_t>();
            l.in_w = jl.at("in_w").get<std::size_t>();
            l.out_ch = jl.at("out_ch").get<std::size_t>();
            l.out_h = jl.at("out_h").get<std::size_t>();
            l.out_w = jl.at("out_w").get<std::size_t>();
            l.ksize = jl.at("ksize").get<std::size_t>();
            l.pad = jl.at("pad").get<std::size_t>();
        }
        if (jl.contains("w")) {
            l.w = Matrix(jl.at("w_rows").get<std::size_t>(), jl.at("w_cols").get<std::size_t>());
            l.w.data = jl.at("w").get<std::vector<double>>();
            if (l.w.data.size() != l.w.rows * l.w.cols)
                throw DataError("model json: layer weight size mismatch");
            l.b = jl.at("b").get<std::vector<double>>();
        }
        m.extractor.push_back(std::move(l));
    }
    const json& jc = j.at("classifier");
    m.classifier.w = Matrix(jc.at("w_rows").get<std::size_t>(), jc.at("w_cols").get<std::size_t>());
    m.classifier.w.data = jc.at("w").get<std::vector<double>>();
    if (m.classifier.w.data.size() != m.classifier.w.rows * m.classifier.w.cols)
        throw DataError("model json: classifier weight size mismatch");
    m.classifier.b = jc.at("b").get<std::vector<double>>();
    m.classifier.use_bias = jc.at("use_bias").get<bool>();
    return m;
}

json prototypes_to_json(const PrototypeSet& protos) {
    json j = json::object();
    for (const auto& [c, e] : protos.entries)
        j[std::to_string(c)] = json{{"centroid", e.centroid}, {"count", e.count}, {"round", e.round}};
    return j;
}

PrototypeSet prototypes_from_json(const json& j) {
    PrototypeSet protos;
    for (auto it = j.begin(); it != j.end(); ++it) {
        PrototypeEntry e;
        e.centroid = it.value().at("centroid").get<std::vector<double>>();
        e.count = it.value().at("count").get<std::int64_t>();
        if (it.value().contains("round")) e.round = it.value().at("round").get<int>();
        protos.entries.emplace(std::stoi(it.key()), std::move(e));
        protos.round = std::max(protos.round, protos.entries.rbegin()->second.round);
    }
    return protos;
}

json checkpoint_to_json(const Checkpoint& ckpt) {
    return json{{"round", ckpt.round},
                {"seed", ckpt.seed},
                {"model", model_to_json(ckpt.model)},
                {"prototypes", prototypes_to_json(ckpt.prototypes)}};
}

Checkpoint checkpoint_from_json(const json& j) {
    Checkpoint ckpt;
    ckpt.round = j.at("round").get<int>();
    ckpt.seed = j.at("seed").get<std::uint64_t>();
    ckpt.model = model_from_json(j.at("model"));
    ckpt.prototypes = prototypes_from_json(j.at("prototypes"));
    ckpt.prototypes.round = ckpt.round;
    return ckpt;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path);
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw DataError("short write to " + path);
}

std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot read " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace rebafl
