#pragma once

#include <string>

#include <json.hpp>

#include "rebafl/model.hpp"
#include "rebafl/prototypes.hpp"

namespace rebafl {

// Model parameters round-trip losslessly (nlohmann renders doubles
// shortest-round-trip), so a resumed run continues bit-exactly.
nlohmann::json model_to_json(const ModelParams& params);
ModelParams model_from_json(const nlohmann::json& j);

// Document shape: { "<class_id>": { "centroid": [...], "count": n, "round": r } }
nlohmann::json prototypes_to_json(const PrototypeSet& protos);
PrototypeSet prototypes_from_json(const nlohmann::json& j);

struct Checkpoint {
    int round = 0;
    std::uint64_t seed = 0;
    ModelParams model;
    PrototypeSet prototypes;
};

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace rebafl
