#include "segmil/rawdet.hpp"

#include "json_util.hpp"
#include "segmil/error.hpp"

namespace segmil {

using detail::json;

namespace {

RawImage image_from_json(const json& j, const DatasetManifest& m, std::size_t line) {
  const std::string where = "line " + std::to_string(line);
  if (!j.is_object()) throw SchemaError(where + ": expected an object");
  RawImage img;
  auto& ctx = img.context;
  const auto& id = detail::require(j, "image_id", where);
  if (!id.is_string()) throw SchemaError(where + ": image_id must be a string");
  ctx.image_id = id.get<std::string>();
  ctx.label = static_cast<int>(detail::integer(detail::require(j, "label", where), where + ": label"));
  if (ctx.label < 0 || ctx.label >= m.num_classes) throw SchemaError(where + ": label out of range");
  if (auto it = j.find("group_id"); it != j.end() && !it->is_null())
    ctx.group_id = static_cast<int>(detail::integer(*it, where + ": group_id"));
  ctx.height = static_cast<int>(detail::integer(detail::require(j, "height", where), where + ": height"));
  ctx.width = static_cast<int>(detail::integer(detail::require(j, "width", where), where + ": width"));
  if (ctx.height < 1 || ctx.width < 1) throw SchemaError(where + ": image size must be positive");

  img.similarities = detail::finite_array(detail::require(j, "image_similarities", where), where + ": image_similarities");
  if (img.similarities.size() != static_cast<std::size_t>(m.C))
    throw SchemaError(where + ": image_similarities length mismatch");
  ctx.image_clip = softmax(img.similarities);
  if (auto it = j.find("image_embedding"); it != j.end() && !it->is_null()) {
    ctx.image_embedding = detail::finite_array(*it, where + ": image_embedding");
    if (ctx.image_embedding.size() != static_cast<std::size_t>(m.D))
      throw SchemaError(where + ": image_embedding length mismatch");
  }

  const auto& dets = detail::require(j, "detections", where);
  if (!dets.is_array()) throw SchemaError(where + ": detections must be an array");
  for (std::size_t k = 0; k < dets.size(); ++k) {
    const auto& jd = dets[k];
    const std::string at = where + " detection " + std::to_string(k);
    RawDetection d;
    d.concept_id = static_cast<int>(detail::integer(detail::require(jd, "concept_id", at), at + ": concept_id"));
    if (d.concept_id < 0 || d.concept_id >= m.C) throw SchemaError(at + ": concept_id out of range");
    const auto box = detail::finite_array(detail::require(jd, "bbox", at), at + ": bbox");
    if (box.size() != 4) throw SchemaError(at + ": bbox must have 4 entries");
    d.bbox = BBox{box[0], box[1], box[2], box[3]};
    if (auto it = jd.find("score"); it != jd.end()) d.detection_score = detail::finite_number(*it, at + ": score");
    const auto& mask = detail::require(jd, "mask", at);
    const auto& size = detail::require(mask, "size", at + ": mask");
    if (!size.is_array() || size.size() != 2) throw SchemaError(at + ": mask size must be [H, W]");
    const int h = static_cast<int>(detail::integer(size[0], at + ": mask size"));
    const int w = static_cast<int>(detail::integer(size[1], at + ": mask size"));
    if (h != ctx.height || w != ctx.width) throw SchemaError(at + ": mask size differs from image size");
    std::vector<std::int64_t> counts;
    for (const auto& c : detail::require(mask, "counts", at + ": mask")) counts.push_back(detail::integer(c, at + ": counts"));
    d.mask = BinaryMask::from_rle(h, w, counts);
    if (d.mask.area() < 1) throw SchemaError(at + ": empty mask");
    if (auto it = jd.find("embedding"); it != jd.end() && !it->is_null()) {
      d.embedding = detail::finite_array(*it, at + ": embedding");
      if (d.embedding.size() != static_cast<std::size_t>(m.D)) throw SchemaError(at + ": embedding length mismatch");
    }
    if (auto it = jd.find("clip_scores"); it != jd.end() && !it->is_null()) {
      d.clip_scores = detail::finite_array(*it, at + ": clip_scores");
      if (d.clip_scores.size() != static_cast<std::size_t>(m.C)) throw SchemaError(at + ": clip_scores length mismatch");
    }
    img.detections.push_back(std::move(d));
  }
  return img;
}

}  // namespace

RawdetReader::RawdetReader(const std::filesystem::path& path) : in_(path, std::ios::binary) {
  if (!in_) throw IoError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in_, line)) throw ParseError(1, "missing header");
  line_no_ = 1;
  json h;
  try {
    h = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(1, e.what());
  }
  if (!h.is_object() || h.value("kind", std::string{}) != "rawdet")
    throw FormatError("not a rawdet file (header kind must be \"rawdet\")");
  if (h.value("format_version", 0) != 1) throw FormatError("unsupported rawdet format_version");
  manifest_.num_classes = static_cast<int>(detail::integer(detail::require(h, "num_classes", "header"), "header"));
  manifest_.D = static_cast<int>(detail::integer(detail::require(h, "D", "header"), "header"));
  manifest_.C = static_cast<int>(detail::integer(detail::require(h, "C", "header"), "header"));
  manifest_.concept_names = detail::require(h, "concept_names", "header").get<std::vector<std::string>>();
  manifest_.split = split_from_string(h.value("split", std::string{"train"}));
  validate_manifest(manifest_);
}

std::optional<RawImage> RawdetReader::next() {
  std::string line;
  while (std::getline(in_, line)) {
    ++line_no_;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(line_no_, e.what());
    }
    return image_from_json(j, manifest_, line_no_);
  }
  return std::nullopt;
}

void write_rawdet(const DatasetManifest& m, std::span<const RawImage> images, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << json{{"format_version", 1}, {"kind", "rawdet"}, {"num_classes", m.num_classes}, {"D", m.D},
              {"C", m.C}, {"concept_names", m.concept_names}, {"split", to_string(m.split)}}
             .dump()
      << '\n';
  for (const auto& img : images) {
    json dets = json::array();
    for (const auto& d : img.detections) {
      json jd{{"concept_id", d.concept_id},
              {"bbox", {d.bbox.x_min, d.bbox.y_min, d.bbox.x_max, d.bbox.y_max}},
              {"score", d.detection_score},
              {"mask", {{"size", {d.mask.height(), d.mask.width()}}, {"counts", d.mask.to_rle()}}}};
      if (!d.embedding.empty()) jd["embedding"] = d.embedding;
      if (!d.clip_scores.empty()) jd["clip_scores"] = d.clip_scores;
      dets.push_back(std::move(jd));
    }
    const auto& c = img.context;
    json group = nullptr;
    if (c.group_id) group = *c.group_id;
    json line{{"image_id", c.image_id}, {"label", c.label}, {"group_id", group}, {"height", c.height},
              {"width", c.width}, {"image_similarities", img.similarities}, {"detections", std::move(dets)}};
    if (!c.image_embedding.empty()) line["image_embedding"] = c.image_embedding;
    out << line.dump() << '\n';
  }
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

}  // namespace segmil
