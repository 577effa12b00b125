#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "levspec/error.hpp"
#include "levspec/io.hpp"

using namespace levspec;
namespace fs = std::filesystem;

namespace {
fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "levspec_test_io";
  fs::create_directories(dir);
  return dir / name;
}
}  // namespace

TEST_CASE("time series round trip", "[io]") {
  TimeSeries ts;
  ts.sample_rate = 2.5e6;
  ts.samples = {0.0, -1.5, 3.25e-300, 1e300, -0.0, 42.0};
  ts.metadata = {{"seed", 9}, {"note", "x"}};
  const auto path = scratch("a.bin").string();
  io::write_time_series(path, ts);
  CHECK(fs::file_size(path) == ts.samples.size() * 8);
  const auto back = io::read_time_series(path);
  CHECK(back.sample_rate == ts.sample_rate);
  CHECK(back.samples == ts.samples);
  CHECK(back.metadata.at("seed") == 9);
  CHECK_FALSE(back.metadata.contains("n_samples"));
}

TEST_CASE("time series errors", "[io]") {
  try {
    io::read_time_series(scratch("missing.bin").string());
    FAIL("expected missing_input");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::missing_input);
  }
  TimeSeries ts;
  ts.sample_rate = 1.0;
  ts.samples = {1.0, 2.0, 3.0};
  const auto path = scratch("short.bin").string();
  io::write_time_series(path, ts);
  fs::resize_file(path, 20);
  CHECK_THROWS_AS(io::read_time_series(path), Error);
}

TEST_CASE("json and tsv writers", "[io]") {
  const auto path = scratch("x.json").string();
  io::write_json(path, {{"a", 1.5}});
  CHECK(io::read_json(path).at("a") == 1.5);
  const auto tsv = scratch("x.tsv").string();
  io::write_tsv(tsv, {"f", "p"}, {{1.0, 2.0}, {3.0, 4.0}});
  std::ifstream in(tsv);
  std::string line;
  std::getline(in, line);
  CHECK(line.front() == '#');
  int rows = 0;
  while (std::getline(in, line)) rows += !line.empty();
  CHECK(rows == 2);
}
