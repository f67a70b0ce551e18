#pragma once

#include <string>

#include "tutor/schema.hpp"

namespace tutor {

/// Parses an RFC-4180 CSV whose header is the schema's feature names in order
/// followed by the label name. Categorical cells and labels are given by name.
/// Throws MissingColumn, UnknownCategoryLevel, or ParseError.
Dataset load_csv(const std::string& path, const FeatureSchema& schema, SplitRole role);

/// Inverse of load_csv: writes header plus one row per instance, categorical
/// cells and labels spelled out by name. Continuous values round-trip exactly.
void write_csv(const std::string& path, const Dataset& d);

}  // namespace tutor
