#include "levspec/io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>

#include "levspec/error.hpp"

namespace levspec::io {

namespace {

std::ifstream open_in(const std::string& path, std::ios::openmode mode) {
  require(std::filesystem::exists(path), Errc::missing_input, "no such file: " + path);
  std::ifstream in(path, mode);
  require(in.good(), Errc::io, "cannot open " + path);
  return in;
}

std::ofstream open_out(const std::string& path, std::ios::openmode mode) {
  std::ofstream out(path, mode | std::ios::trunc);
  require(out.good(), Errc::io, "cannot write " + path);
  return out;
}

std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap64(v);
  return v;
}

}  // namespace

std::string sidecar_path(const std::string& path) { return path + ".json"; }

void write_time_series(const std::string& path, const TimeSeries& ts) {
  ts.validate();
  {
    auto out = open_out(path, std::ios::binary);
    constexpr std::size_t chunk = 1 << 16;
    std::vector<std::uint64_t> buf;
    buf.reserve(chunk);
    for (std::size_t i = 0; i < ts.samples.size(); i += chunk) {
      const std::size_t n = std::min(chunk, ts.samples.size() - i);
      buf.resize(n);
      for (std::size_t j = 0; j < n; ++j) buf[j] = to_le(std::bit_cast<std::uint64_t>(ts.samples[i + j]));
      out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(n * 8));
    }
    require(out.good(), Errc::io, "write failed: " + path);
  }
  nlohmann::json side = ts.metadata;
  side["sample_rate"] = ts.sample_rate;
  side["n_samples"] = ts.samples.size();
  side["format"] = "float64-le";
  write_json(sidecar_path(path), side);
}

TimeSeries read_time_series(const std::string& path) {
  require(std::filesystem::exists(path), Errc::missing_input, "no such file: " + path);
  const auto side = read_json(sidecar_path(path));
  TimeSeries ts;
  std::size_t n = 0;
  try {
    ts.sample_rate = side.at("sample_rate").get<double>();
    n = side.at("n_samples").get<std::size_t>();
    require(side.value("format", std::string("float64-le")) == "float64-le", Errc::invalid_config,
            "unsupported sample format in " + sidecar_path(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::invalid_config, "malformed sidecar " + sidecar_path(path) + ": " + e.what());
  }
  const auto bytes = std::filesystem::file_size(path);
  require(bytes == n * 8, Errc::invalid_config,
          path + " holds " + std::to_string(bytes) + " bytes, sidecar says " + std::to_string(n) +
              " samples");
  auto in = open_in(path, std::ios::binary);
  std::vector<std::uint64_t> raw(n);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * 8));
  require(in.good(), Errc::io, "read failed: " + path);
  ts.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) ts.samples[i] = std::bit_cast<double>(to_le(raw[i]));
  ts.metadata = side;
  ts.metadata.erase("sample_rate");
  ts.metadata.erase("n_samples");
  ts.metadata.erase("format");
  ts.validate();
  return ts;
}

nlohmann::json read_json(const std::string& path) {
  auto in = open_in(path, std::ios::in);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::invalid_config, "cannot parse " + path + ": " + e.what());
  }
}

void write_json(const std::string& path, const nlohmann::json& j) {
  auto out = open_out(path, std::ios::out);
  out << j.dump(2) << '\n';
  require(out.good(), Errc::io, "write failed: " + path);
}

void write_tsv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& columns) {
  require(header.size() == columns.size(), Errc::invalid_config, "tsv header/column count mismatch");
  const std::size_t rows = columns.empty() ? 0 : columns.front().size();
  for (const auto& c : columns) require(c.size() == rows, Errc::invalid_config, "ragged tsv columns");
  auto out = open_out(path, std::ios::out);
  out << '#';
  for (std::size_t j = 0; j < header.size(); ++j) out << (j ? "\t" : "") << header[j];
  out << '\n' << std::setprecision(12);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < columns.size(); ++j) out << (j ? "\t" : "") << columns[j][i];
    out << '\n';
  }
  require(out.good(), Errc::io, "write failed: " + path);
}

}  // namespace levspec::io
