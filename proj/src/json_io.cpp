#include "udscreen/json_io.hpp"

#include <fstream>
#include <sstream>

namespace udscreen {

void to_json(Json& j, const BoundingBox& b) {
  j = Json::array({b.x_min, b.y_min, b.x_max, b.y_max});
}

void from_json(const Json& j, BoundingBox& b) {
  if (!j.is_array() || j.size() != 4) throw Error("box must be a 4-element array");
  b = {j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
}

void to_json(Json& j, const LesionAttributes& a) {
  j = Json{{"diameter", a.diameter}, {"irregularity", a.irregularity}, {"hue", a.hue},
           {"rgb", Json::array({a.red, a.green, a.blue})}};
}

void from_json(const Json& j, LesionAttributes& a) {
  a.diameter = j.at("diameter").get<double>();
  a.irregularity = j.at("irregularity").get<double>();
  a.hue = j.at("hue").get<double>();
  const auto& rgb = j.at("rgb");
  a.red = rgb.at(0).get<double>();
  a.green = rgb.at(1).get<double>();
  a.blue = rgb.at(2).get<double>();
}

void to_json(Json& j, const GroundTruthLesion& g) {
  j = Json{{"box", g.box}, {"kind", to_string(g.kind)}, {"in_shadow", g.in_shadow}};
  if (g.attributes) j["attributes"] = *g.attributes;
}

void from_json(const Json& j, GroundTruthLesion& g) {
  g.box = j.at("box").get<BoundingBox>();
  g.kind = lesion_kind_from_string(j.at("kind").get<std::string>());
  g.in_shadow = j.value("in_shadow", false);
  if (j.contains("attributes")) g.attributes = j.at("attributes").get<LesionAttributes>();
}

void to_json(Json& j, const LesionBox& l) {
  j = Json{{"lesion_id", l.lesion_id},
           {"box", l.box},
           {"confidence", l.confidence},
           {"source_tile", l.source_tile},
           {"illumination_flag", l.illumination_flag},
           {"frame_mean_intensity", l.frame_mean_intensity}};
}

void from_json(const Json& j, LesionBox& l) {
  l.lesion_id = j.at("lesion_id").get<std::string>();
  l.box = j.at("box").get<BoundingBox>();
  l.confidence = j.at("confidence").get<double>();
  l.source_tile = j.value("source_tile", 0);
  l.illumination_flag = j.value("illumination_flag", false);
  l.frame_mean_intensity = j.value("frame_mean_intensity", 0.0);
}

std::vector<Json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<Json> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(Json::parse(line));
    } catch (const Json::parse_error& e) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& records) {
  std::string buf;
  for (const auto& r : records) {
    buf += r.dump();
    buf += '\n';
  }
  write_file_atomic(path, buf);
}

Json read_json_file(const std::filesystem::path& path) {
  try {
    return Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const Json& j, int indent) {
  write_file_atomic(path, j.dump(indent) + "\n");
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace udscreen
