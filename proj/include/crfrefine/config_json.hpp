#pragma once

// JSON (de)serialization of configuration structs. from_json accepts partial
// documents: absent keys keep the value already in the target.

#include "crfrefine/baselines.hpp"
#include "crfrefine/dataset.hpp"
#include "crfrefine/inference.hpp"
#include "crfrefine/neighborhood.hpp"
#include "json.hpp"

namespace crfrefine {

void to_json(nlohmann::json& j, const EngineConfig& c);
void from_json(const nlohmann::json& j, EngineConfig& c);
void to_json(nlohmann::json& j, const IndexConfig& c);
void from_json(const nlohmann::json& j, IndexConfig& c);
void to_json(nlohmann::json& j, const SyntheticSpec& s);
void from_json(const nlohmann::json& j, SyntheticSpec& s);
void to_json(nlohmann::json& j, const LpConfig& c);
void from_json(const nlohmann::json& j, LpConfig& c);

}  // namespace crfrefine
