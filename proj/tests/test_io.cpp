#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "cast/io.hpp"
#include "fixtures.hpp"

using namespace cast;

namespace {

Dataset parse(const std::string& text) {
  std::istringstream in(text);
  return parse_dataset(in);
}

const char* kHeader = R"({"format_version":1,"D":3,"ordered":true,"section_name":"t"})";

}  // namespace

TEST(Dataset, RoundTripWithinTolerance) {
  auto data = fixture::random_walks(1, 4, 15, 7);
  std::vector<bool> mask(14, true);
  mask[3] = false;
  data[2] = data[2].with_mask(mask);
  const DatasetHeader h{kDatasetFormatVersion, 7, true, "walks"};
  const auto back = parse(dataset_text(h, data));
  EXPECT_EQ(back.header.section_name, "walks");
  EXPECT_TRUE(back.header.ordered);
  ASSERT_EQ(back.series.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(back.series[i].id(), data[i].id());
    EXPECT_EQ(back.series[i].loss_mask(), data[i].loss_mask());
    for (std::size_t t = 0; t < 15; ++t) ASSERT_LE(l1(back.series[i][t], data[i][t]), 1e-12);
  }
}

TEST(Dataset, ZeroRowDroppedAndMaskRemapped) {
  const auto ds = parse(std::string(kHeader) + "\n" +
                        R"({"id":"a","steps":[[1,1,0],[0,0,0],[0,2,2],[3,0,1]],"loss_mask":[true,false,false]})" + "\n");
  EXPECT_EQ(ds.dropped_rows, 1u);
  ASSERT_EQ(ds.series[0].length(), 3u);
  EXPECT_EQ(ds.series[0][0].vec(), (std::vector<double>{0.5, 0.5, 0.0}));
  EXPECT_EQ(ds.series[0][2].vec(), (std::vector<double>{0.75, 0.0, 0.25}));
  // Targets kept: step 2 (mask[1] = false) and step 3 (mask[2] = false).
  EXPECT_EQ(ds.series[0].loss_mask(), (std::vector<bool>{false, false}));
}

TEST(Dataset, ParseErrorsCarryLineNumbers) {
  const std::string ok = R"({"id":"a","steps":[[1,0,0],[0,1,0]]})";
  auto line_of = [](const std::string& text) {
    try {
      parse(text);
    } catch (const ParseError& e) {
      return e.line();
    }
    return std::size_t{0};
  };
  EXPECT_EQ(line_of(std::string(kHeader) + "\n" + ok + "\n{not json\n"), 3u);
  EXPECT_EQ(line_of(std::string(kHeader) + "\n" + ok + "\n" + R"({"id":"b","steps":[[1,0]]})" + "\n"), 3u);
  EXPECT_EQ(line_of(std::string(kHeader) + "\n" + R"({"id":"b","steps":[[1,-1,0]]})" + "\n"), 2u);
  EXPECT_EQ(line_of(std::string(kHeader) + "\n" + R"({"id":"b","steps":[[1,0,0],[0,1,0]],"loss_mask":[]})"), 0u);
  EXPECT_EQ(line_of(std::string(kHeader) + "\n" + R"({"id":"b","steps":[[1,0,0],[0,1,0]],"loss_mask":[true,true]})"), 2u);
  EXPECT_EQ(line_of(ok + "\n"), 1u);
}

TEST(Dataset, VersionMismatch) {
  EXPECT_EQ(fixture::code_of([] { parse(R"({"format_version":2,"D":3,"ordered":true})"); }),
            ErrorCode::SchemaVersionMismatch);
}

TEST(Dataset, FileRoundTripIsAtomic) {
  const auto dir = std::filesystem::temp_directory_path() / "cast_io_test";
  std::filesystem::remove_all(dir);
  const auto data = fixture::random_walks(2, 2, 5, 3);
  write_dataset(dir / "sub" / "d.jsonl", {kDatasetFormatVersion, 3, true, "x"}, data);
  EXPECT_FALSE(std::filesystem::exists(dir / "sub" / "d.jsonl.tmp"));
  EXPECT_EQ(ingest(dir / "sub" / "d.jsonl").series.size(), 2u);
  EXPECT_EQ(fixture::code_of([&] { ingest(dir / "missing.jsonl"); }), ErrorCode::IoError);
  std::filesystem::remove_all(dir);
}

TEST(Config, JsonRoundTripAndUnknownKeys) {
  CastConfig c;
  c.rho_max = 0.37;
  c.heads = 3;
  c.variant = AblationVariant::single_head;
  const auto back = cast_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back).dump(), to_json(c).dump());
  Json bad = to_json(c);
  bad["no_such_key"] = 1;
  EXPECT_EQ(fixture::code_of([&] { cast_config_from_json(bad); }), ErrorCode::InvalidArgument);
  TrainConfig t;
  t.steps = 17;
  EXPECT_EQ(train_config_from_json(to_json(t)).steps, 17u);
  EXPECT_THROW(train_config_from_json(Json{{"lr", -1.0}}), Error);
}

TEST(Checkpoint, RoundTripPreservesPredictions) {
  CastConfig cfg;
  cfg.heads = 2;
  const CastModel m(cfg, 6, true, std::uint64_t{11});
  const auto bytes = checkpoint_bytes(m, Json{{"note", "x"}});
  const auto back = parse_checkpoint(bytes);
  EXPECT_EQ(back.header.at("note"), "x");
  const auto pa = back.model.params(), pb = m.params();
  EXPECT_TRUE(std::equal(pa.begin(), pa.end(), pb.begin(), pb.end()));
  const auto data = fixture::random_walks(3, 1, 12, 6);
  EXPECT_LE(l1(back.model.predict_next(data[0].steps()), m.predict_next(data[0].steps())), 1e-12);
  EXPECT_EQ(checkpoint_bytes(back.model, Json{{"note", "x"}}), bytes);
}

TEST(Checkpoint, RejectsCorruption) {
  const CastModel m(CastConfig{}, 4, true, std::uint64_t{1});
  const auto bytes = checkpoint_bytes(m);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_EQ(fixture::code_of([&] { parse_checkpoint(bad_magic); }), ErrorCode::ParseError);
  auto bad_version = bytes;
  bad_version[8] = 9;
  EXPECT_EQ(fixture::code_of([&] { parse_checkpoint(bad_version); }), ErrorCode::SchemaVersionMismatch);
  EXPECT_EQ(fixture::code_of([&] { parse_checkpoint(bytes.substr(0, bytes.size() - 3)); }), ErrorCode::ParseError);
  EXPECT_EQ(fixture::code_of([&] { parse_checkpoint(bytes + "zz"); }), ErrorCode::ParseError);
}
