#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "udscreen/core.hpp"

namespace udscreen {

using Json = nlohmann::json;

// Boxes serialize as [x_min, y_min, x_max, y_max].
void to_json(Json& j, const BoundingBox& b);
void from_json(const Json& j, BoundingBox& b);

void to_json(Json& j, const LesionAttributes& a);
void from_json(const Json& j, LesionAttributes& a);

void to_json(Json& j, const GroundTruthLesion& g);
void from_json(const Json& j, GroundTruthLesion& g);

void to_json(Json& j, const LesionBox& l);
void from_json(const Json& j, LesionBox& l);

std::vector<Json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& records);

Json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& j, int indent = 2);

// Writes to a sibling temp file and renames over the target.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace udscreen
