#pragma once

#include <string>

#include <json.hpp>

#include "lab/model.hpp"

namespace lab {

// Checkpoint container: JSON header (model config + training provenance)
// followed by a length-prefixed name/shape table and raw float32 tensors.
// Round trips bit-exactly.
void save_checkpoint(const std::string& path, const Model<float>& m,
                     const nlohmann::json& provenance);

struct Checkpoint {
    Model<float> model;
    nlohmann::json provenance;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace lab
