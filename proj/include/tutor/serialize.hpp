#pragma once

#include <string>

#include "json.hpp"
#include "tutor/density.hpp"
#include "tutor/forest.hpp"
#include "tutor/network.hpp"
#include "tutor/schemes.hpp"

namespace tutor {

/// Every document carries {"version": 1, "kind": <type tag>}. Readers reject
/// unknown versions and mismatched kinds. Numbers round-trip bit exactly.
inline constexpr int kSerializationVersion = 1;

nlohmann::json density_to_json(const DensityModel& model);
DensityModel density_from_json(const nlohmann::json& j);

nlohmann::json forest_to_json(const Forest& forest);
Forest forest_from_json(const nlohmann::json& j);

/// Dims, hidden activation order, mask as one bitstring per source row,
/// weights and biases as arrays.
nlohmann::json network_to_json(const MaskedNetwork& net);
MaskedNetwork network_from_json(const nlohmann::json& j);

/// Report artifact: scores and bookkeeping only. The winning model is saved
/// separately with network_to_json.
nlohmann::json scheme_result_to_json(const SchemeResult& r);

void save_json(const nlohmann::json& j, const std::string& path);
nlohmann::json load_json(const std::string& path);

}  // namespace tutor
