#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>

#include "helpers.hpp"
#include "segmil/bagio.hpp"
#include "segmil/error.hpp"

using namespace segmil;
using testutil::TempDir;

namespace {

Bag tiny_bag() {
  Bag bag;
  bag.image_id = "a";
  bag.label = 1;
  bag.instances.push_back({{0.1, -2.5, 1e-300, 3.141592653589793}, {0.2, 0.3, 0.5}, {0, 2}, BBox{1, 2, 3, 4}, 12});
  return bag;
}

std::vector<std::string> lines_of(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

void write_lines(const std::filesystem::path& p, const std::vector<std::string>& lines, bool final_newline = true) {
  std::ofstream out(p);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    out << lines[i];
    if (i + 1 < lines.size() || final_newline) out << "\n";
  }
}

}  // namespace

TEST_CASE("bagpack round trip keeps every value") {
  TempDir dir("bagio");
  const auto m = testutil::manifest(4, 3);
  const std::vector<Bag> bags{tiny_bag()};
  write_bagpack(m, bags, dir / "x.bagpack");
  const Dataset ds = read_bagpack(dir / "x.bagpack");
  CHECK(ds.manifest == m);
  REQUIRE(ds.bags.size() == 1);
  CHECK(ds.bags[0] == bags[0]);
}

TEST_CASE("random bags round trip bit for bit") {
  TempDir dir("bagio");
  std::mt19937_64 rng(7);
  auto m = testutil::manifest(6, 5, 3);
  m.split = Split::Test;
  std::vector<Bag> bags;
  for (int i = 0; i < 25; ++i) bags.push_back(testutil::random_bag(rng, 6, 5, 3, 1 + i % 4, i % 4));
  bags[3].instances[0].bbox = BBox{0.5, 0.25, 10, 11};
  write_bagpack(m, bags, dir / "r.bagpack");
  const Dataset ds = read_bagpack(dir / "r.bagpack");
  CHECK(ds.manifest == m);
  CHECK(ds.bags == bags);
}

TEST_CASE("empty bag list gives a header-only file") {
  TempDir dir("bagio");
  const auto m = testutil::manifest(4, 3);
  write_bagpack(m, std::vector<Bag>{}, dir / "e.bagpack");
  CHECK(lines_of(dir / "e.bagpack").size() == 1);
  CHECK(read_bagpack(dir / "e.bagpack").bags.empty());
}

TEST_CASE("write rejects invalid bags with the bag index and field") {
  TempDir dir("bagio");
  const auto m = testutil::manifest(4, 3);
  Bag bad = tiny_bag();
  bad.instances[0].clip_scores = {0.5, 0.5};
  const std::vector<Bag> bags{tiny_bag(), bad};
  try {
    write_bagpack(m, bags, dir / "x.bagpack");
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("clip_scores length mismatch") != std::string::npos);
    CHECK(msg.find("bag 1") != std::string::npos);
  }
}

TEST_CASE("validation covers every instance invariant") {
  const auto m = testutil::manifest(4, 3);
  auto expect_bad = [&](auto mutate) {
    Bag b = tiny_bag();
    mutate(b);
    CHECK_THROWS_AS(validate_bag(m, b, 0), SchemaError);
  };
  expect_bad([](Bag& b) { b.instances.clear(); });
  expect_bad([](Bag& b) { b.label = 2; });
  expect_bad([](Bag& b) { b.label = -1; });
  expect_bad([](Bag& b) { b.instances[0].embedding.pop_back(); });
  expect_bad([](Bag& b) { b.instances[0].embedding[0] = std::nan(""); });
  expect_bad([](Bag& b) { b.instances[0].embedding[1] = std::numeric_limits<double>::infinity(); });
  expect_bad([](Bag& b) { b.instances[0].clip_scores[0] = -0.1; });
  expect_bad([](Bag& b) { b.instances[0].concept_ids = {3}; });
  expect_bad([](Bag& b) { b.instances[0].bbox = BBox{3, 0, 3, 1}; });
  CHECK_NOTHROW(validate_bag(m, tiny_bag(), 0));
}

TEST_CASE("NaN embeddings are rejected on write and on read") {
  TempDir dir("bagio");
  const auto m = testutil::manifest(4, 3);
  Bag bad = tiny_bag();
  bad.instances[0].embedding[2] = std::nan("");
  CHECK_THROWS_AS(write_bagpack(m, std::vector<Bag>{bad}, dir / "n.bagpack"), SchemaError);

  write_bagpack(m, std::vector<Bag>{tiny_bag()}, dir / "ok.bagpack");
  auto lines = lines_of(dir / "ok.bagpack");
  const auto pos = lines[1].find("1e-300");
  REQUIRE(pos != std::string::npos);
  lines[1].replace(pos, 6, "NaN");
  write_lines(dir / "nan.bagpack", lines);
  CHECK_THROWS_AS(read_bagpack(dir / "nan.bagpack"), SchemaError);
}

TEST_CASE("truncated final line is a parse error at that line") {
  TempDir dir("bagio");
  const auto m = testutil::manifest(4, 3);
  write_bagpack(m, std::vector<Bag>{tiny_bag(), tiny_bag()}, dir / "t.bagpack");
  auto lines = lines_of(dir / "t.bagpack");
  lines.back() = lines.back().substr(0, lines.back().size() / 2);
  write_lines(dir / "t.bagpack", lines, false);
  try {
    read_bagpack(dir / "t.bagpack");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
}

TEST_CASE("unknown format_version is a format error") {
  TempDir dir("bagio");
  write_lines(dir / "v.bagpack",
              {R"({"format_version": 2, "num_classes": 2, "D": 1, "C": 1, "concept_names": ["a"], "split": "train"})"});
  CHECK_THROWS_AS(read_bagpack(dir / "v.bagpack"), FormatError);
}

TEST_CASE("mixed group coverage is a schema error") {
  TempDir dir("bagio");
  const auto m = testutil::manifest(4, 3);
  Bag a = tiny_bag(), b = tiny_bag();
  a.group_id = 0;
  const std::vector<Bag> bags{a, b};
  CHECK_THROWS_AS(validate_group_coverage(bags), SchemaError);
  CHECK_THROWS_AS(write_bagpack(m, bags, dir / "g.bagpack"), SchemaError);
  CHECK_FALSE(has_groups(std::vector<Bag>{b}));
  CHECK(has_groups(std::vector<Bag>{a}));
}

TEST_CASE("missing file is an io error") {
  CHECK_THROWS_AS(read_bagpack("/nonexistent/dir/x.bagpack"), IoError);
}

TEST_CASE("manifest validation") {
  auto m = testutil::manifest(4, 3);
  m.concept_names.pop_back();
  CHECK_THROWS_AS(validate_manifest(m), SchemaError);
  m = testutil::manifest(4, 3, 1);
  CHECK_THROWS_AS(validate_manifest(m), SchemaError);
  CHECK(split_from_string(to_string(Split::Val)) == Split::Val);
}
