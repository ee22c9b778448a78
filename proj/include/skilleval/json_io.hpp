#pragma once

// Shared JSON conversions for the file formats (manifest, model, report).
// Pulled out of kinematics.hpp so only I/O translation units pay for json.hpp.

#include <json.hpp>

#include "skilleval/kinematics.hpp"

namespace skilleval::kin {

nlohmann::ordered_json layout_to_json(const ChannelLayout& layout);

/// Parses and validates; context names the surrounding file for error messages.
ChannelLayout layout_from_json(const nlohmann::json& j, const std::string& context);

nlohmann::ordered_json osats_to_json(const OsatsScores& scores);
OsatsScores osats_from_json(const nlohmann::json& j, const std::string& context);

/// Throws when `j` has keys outside `allowed`.
void reject_unknown_fields(const nlohmann::json& j,
                           const std::vector<std::string>& allowed,
                           const std::string& context, ErrorCode code);

}  // namespace skilleval::kin
