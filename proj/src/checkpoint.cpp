#include "segmil/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "segmil/error.hpp"

namespace segmil {

using nlohmann::json;

namespace {

constexpr const char* kMagic = "segmil-checkpoint";

void put_le(std::string& out, double x) {
  auto bits = std::bit_cast<std::uint64_t>(x);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
}

double get_le(const char* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= std::uint64_t(static_cast<unsigned char>(p[b])) << (8 * b);
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  ckpt.params.validate();
  const auto& cfg = ckpt.params.config;
  json tensors = json::array();
  std::string blob;
  for (const auto& ref : ckpt.params.tensors.refs()) {
    tensors.push_back({{"name", ref.name}, {"shape", ref.shape}, {"offset", blob.size()}});
    for (double x : ref.data) put_le(blob, x);
  }
  json header{{"format", kMagic},
              {"format_version", 1},
              {"attention", to_string(cfg.attention)},
              {"attention_hidden", cfg.attention_hidden},
              {"aggregate_normalized", cfg.aggregate_normalized},
              {"temperature", cfg.temperature},
              {"D", ckpt.params.dim()},
              {"C", ckpt.params.num_concepts()},
              {"num_classes", ckpt.params.num_classes()},
              {"concept_names", ckpt.concept_names},
              {"dtype", "float64-le"},
              {"tensors", tensors},
              {"blob_bytes", blob.size()}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << header.dump() << '\n';
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw FormatError("checkpoint: missing header");
  json h;
  try {
    h = json::parse(line);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  if (h.value("format", std::string{}) != kMagic || h.value("format_version", 0) != 1)
    throw FormatError("not a version-1 segmil checkpoint");

  const auto blob_bytes = h.at("blob_bytes").get<std::size_t>();
  std::string blob(blob_bytes, '\0');
  in.read(blob.data(), static_cast<std::streamsize>(blob_bytes));
  if (static_cast<std::size_t>(in.gcount()) != blob_bytes) throw FormatError("checkpoint: truncated tensor blob");

  Checkpoint ckpt;
  auto& cfg = ckpt.params.config;
  try {
    cfg.attention = attention_from_string(h.at("attention").get<std::string>());
    cfg.attention_hidden = h.at("attention_hidden").get<int>();
    cfg.aggregate_normalized = h.at("aggregate_normalized").get<bool>();
    cfg.temperature = h.at("temperature").get<double>();
    ckpt.concept_names = h.at("concept_names").get<std::vector<std::string>>();

    auto& t = ckpt.params.tensors;
    for (const auto& jt : h.at("tensors")) {
      const auto name = jt.at("name").get<std::string>();
      const auto shape = jt.at("shape").get<std::vector<std::int64_t>>();
      const auto offset = jt.at("offset").get<std::size_t>();
      std::int64_t count = 1;
      for (auto s : shape) count *= s;
      if (offset + std::size_t(count) * 8 > blob_bytes) throw FormatError("checkpoint: tensor " + name + " exceeds blob");
      auto fill = [&](double* dst) {
        for (std::int64_t i = 0; i < count; ++i) dst[i] = get_le(blob.data() + offset + std::size_t(i) * 8);
      };
      auto as_matrix = [&](Matrix& m) {
        if (shape.size() != 2) throw FormatError("checkpoint: tensor " + name + " must be 2-d");
        m.resize(shape[0], shape[1]);
        fill(m.data());
      };
      auto as_vector = [&](Vector& v) {
        if (shape.size() != 1) throw FormatError("checkpoint: tensor " + name + " must be 1-d");
        v.resize(shape[0]);
        fill(v.data());
      };
      if (name == "W_c") as_matrix(t.concept_head);
      else if (name == "V") as_matrix(t.attn_hidden);
      else if (name == "v") as_vector(t.attn_out);
      else if (name == "w") as_vector(t.attn_linear);
      else if (name == "W_cls") as_matrix(t.cls_weight);
      else if (name == "b_cls") as_vector(t.cls_bias);
      else throw FormatError("checkpoint: unknown tensor '" + name + "'");
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  ckpt.params.validate();
  return ckpt;
}

}  // namespace segmil
