#include "segmil/bagio.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "json_util.hpp"
#include "segmil/error.hpp"

namespace segmil {

using detail::json;

std::string to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw SchemaError("unknown split '" + name + "'");
}

Matrix Bag::embeddings() const {
  const auto n = static_cast<Eigen::Index>(instances.size());
  const auto d = n ? static_cast<Eigen::Index>(instances.front().embedding.size()) : 0;
  Matrix h(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    h.row(i) = Eigen::Map<const Eigen::RowVectorXd>(instances[i].embedding.data(), d);
  return h;
}

Matrix Bag::clip_matrix() const {
  const auto n = static_cast<Eigen::Index>(instances.size());
  const auto c = n ? static_cast<Eigen::Index>(instances.front().clip_scores.size()) : 0;
  Matrix z(n, c);
  for (Eigen::Index i = 0; i < n; ++i)
    z.row(i) = Eigen::Map<const Eigen::RowVectorXd>(instances[i].clip_scores.data(), c);
  return z;
}

void validate_manifest(const DatasetManifest& m) {
  if (m.num_classes < 2) throw SchemaError("manifest: num_classes must be >= 2");
  if (m.D < 1) throw SchemaError("manifest: D must be >= 1");
  if (m.C < 1) throw SchemaError("manifest: C must be >= 1");
  if (m.concept_names.size() != static_cast<std::size_t>(m.C))
    throw SchemaError("manifest: concept_names length " + std::to_string(m.concept_names.size()) +
                      " != C " + std::to_string(m.C));
}

void validate_bag(const DatasetManifest& m, const Bag& bag, std::size_t bag_index) {
  const std::string where = "bag " + std::to_string(bag_index);
  if (bag.label < 0 || bag.label >= m.num_classes)
    throw SchemaError(where + ": label " + std::to_string(bag.label) + " out of range");
  if (bag.instances.empty()) throw SchemaError(where + ": instances must be nonempty");
  for (std::size_t i = 0; i < bag.instances.size(); ++i) {
    const auto& inst = bag.instances[i];
    const std::string at = where + " instance " + std::to_string(i);
    if (inst.embedding.size() != static_cast<std::size_t>(m.D))
      throw SchemaError(at + ": embedding length mismatch");
    if (inst.clip_scores.size() != static_cast<std::size_t>(m.C))
      throw SchemaError(at + ": clip_scores length mismatch");
    detail::check_finite(inst.embedding, at + ": embedding");
    detail::check_finite(inst.clip_scores, at + ": clip_scores");
    for (double s : inst.clip_scores)
      if (s < 0) throw SchemaError(at + ": clip_scores must be >= 0");
    for (int c : inst.concept_ids)
      if (c < 0 || c >= m.C) throw SchemaError(at + ": concept_id " + std::to_string(c) + " out of range");
    if (inst.bbox) {
      const auto& b = *inst.bbox;
      if (!std::isfinite(b.x_min) || !std::isfinite(b.y_min) || !std::isfinite(b.x_max) ||
          !std::isfinite(b.y_max))
        throw SchemaError(at + ": bbox non-finite");
      if (!(b.x_min < b.x_max) || !(b.y_min < b.y_max)) throw SchemaError(at + ": bbox degenerate");
    }
    if (inst.mask_area && *inst.mask_area < 0) throw SchemaError(at + ": mask_area negative");
  }
}

bool has_groups(std::span<const Bag> bags) {
  if (bags.empty()) return false;
  for (const auto& b : bags)
    if (!b.group_id) return false;
  return true;
}

void validate_group_coverage(std::span<const Bag> bags) {
  std::size_t with = 0;
  for (const auto& b : bags) with += b.group_id.has_value();
  if (with != 0 && with != bags.size())
    throw SchemaError("mixed group_id coverage: " + std::to_string(with) + " of " +
                      std::to_string(bags.size()) + " bags carry a group_id");
}

namespace {

json manifest_to_json(const DatasetManifest& m) {
  return json{{"format_version", kBagpackVersion}, {"num_classes", m.num_classes}, {"D", m.D},
              {"C", m.C}, {"concept_names", m.concept_names}, {"split", to_string(m.split)}};
}

json bag_to_json(const Bag& bag) {
  json instances = json::array();
  for (const auto& inst : bag.instances) {
    json bbox = nullptr;
    if (inst.bbox) bbox = {inst.bbox->x_min, inst.bbox->y_min, inst.bbox->x_max, inst.bbox->y_max};
    json area = nullptr;
    if (inst.mask_area) area = *inst.mask_area;
    instances.push_back({{"embedding", inst.embedding}, {"clip_scores", inst.clip_scores},
                         {"concept_ids", inst.concept_ids}, {"bbox", bbox}, {"mask_area", area}});
  }
  json group = nullptr;
  if (bag.group_id) group = *bag.group_id;
  return json{{"image_id", bag.image_id}, {"label", bag.label}, {"group_id", group},
              {"instances", std::move(instances)}};
}

DatasetManifest manifest_from_json(const json& j) {
  const std::string where = "header";
  if (!j.is_object()) throw SchemaError("header: expected an object");
  const auto version = detail::integer(detail::require(j, "format_version", where), where);
  if (version != kBagpackVersion)
    throw FormatError("unsupported bagpack format_version " + std::to_string(version));
  DatasetManifest m;
  m.num_classes = static_cast<int>(detail::integer(detail::require(j, "num_classes", where), where));
  m.D = static_cast<int>(detail::integer(detail::require(j, "D", where), where));
  m.C = static_cast<int>(detail::integer(detail::require(j, "C", where), where));
  const auto& names = detail::require(j, "concept_names", where);
  if (!names.is_array()) throw SchemaError("header: concept_names must be an array");
  for (const auto& n : names) {
    if (!n.is_string()) throw SchemaError("header: concept_names must be strings");
    m.concept_names.push_back(n.get<std::string>());
  }
  const auto& split = detail::require(j, "split", where);
  if (!split.is_string()) throw SchemaError("header: split must be a string");
  m.split = split_from_string(split.get<std::string>());
  validate_manifest(m);
  return m;
}

Bag bag_from_json(const json& j, std::size_t index) {
  const std::string where = "bag " + std::to_string(index);
  if (!j.is_object()) throw SchemaError(where + ": expected an object");
  Bag bag;
  const auto& id = detail::require(j, "image_id", where);
  if (!id.is_string()) throw SchemaError(where + ": image_id must be a string");
  bag.image_id = id.get<std::string>();
  bag.label = static_cast<int>(detail::integer(detail::require(j, "label", where), where));
  if (auto it = j.find("group_id"); it != j.end() && !it->is_null())
    bag.group_id = static_cast<int>(detail::integer(*it, where + ": group_id"));
  const auto& insts = detail::require(j, "instances", where);
  if (!insts.is_array()) throw SchemaError(where + ": instances must be an array");
  for (std::size_t i = 0; i < insts.size(); ++i) {
    const auto& ji = insts[i];
    const std::string at = where + " instance " + std::to_string(i);
    if (!ji.is_object()) throw SchemaError(at + ": expected an object");
    Instance inst;
    inst.embedding = detail::finite_array(detail::require(ji, "embedding", at), at + ": embedding");
    inst.clip_scores = detail::finite_array(detail::require(ji, "clip_scores", at), at + ": clip_scores");
    if (auto it = ji.find("concept_ids"); it != ji.end()) {
      if (!it->is_array()) throw SchemaError(at + ": concept_ids must be an array");
      for (const auto& c : *it) inst.concept_ids.push_back(static_cast<int>(detail::integer(c, at + ": concept_ids")));
    }
    if (auto it = ji.find("bbox"); it != ji.end() && !it->is_null()) {
      const auto b = detail::finite_array(*it, at + ": bbox");
      if (b.size() != 4) throw SchemaError(at + ": bbox must have 4 entries");
      inst.bbox = BBox{b[0], b[1], b[2], b[3]};
    }
    if (auto it = ji.find("mask_area"); it != ji.end() && !it->is_null())
      inst.mask_area = detail::integer(*it, at + ": mask_area");
    bag.instances.push_back(std::move(inst));
  }
  return bag;
}

}  // namespace

void write_bagpack(const DatasetManifest& manifest, std::span<const Bag> bags,
                   const std::filesystem::path& path) {
  validate_manifest(manifest);
  for (std::size_t i = 0; i < bags.size(); ++i) validate_bag(manifest, bags[i], i);
  validate_group_coverage(bags);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << manifest_to_json(manifest).dump() << '\n';
  for (const auto& bag : bags) out << bag_to_json(bag).dump() << '\n';
  out.flush();
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

BagpackReader::BagpackReader(const std::filesystem::path& path) : in_(path, std::ios::binary) {
  if (!in_) throw IoError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in_, line)) throw ParseError(1, "missing header");
  line_no_ = 1;
  json header;
  try {
    header = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(1, e.what());
  }
  manifest_ = manifest_from_json(header);
}

std::optional<Bag> BagpackReader::next() {
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
    Bag bag = bag_from_json(j, bag_index_);
    validate_bag(manifest_, bag, bag_index_);
    const int grouped = bag.group_id.has_value() ? 1 : 0;
    if (grouped_ >= 0 && grouped != grouped_)
      throw SchemaError("bag " + std::to_string(bag_index_) + ": mixed group_id coverage");
    grouped_ = grouped;
    ++bag_index_;
    return bag;
  }
  return std::nullopt;
}

Dataset read_bagpack(const std::filesystem::path& path) {
  BagpackReader reader(path);
  Dataset ds{reader.manifest(), {}};
  while (auto bag = reader.next()) ds.bags.push_back(std::move(*bag));
  return ds;
}

}  // namespace segmil
