#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "levspec/sde_sim.hpp"

namespace levspec::io {

// Time series on disk: raw little-endian float64 samples at `path` and a JSON
// sidecar at `path + ".json"` holding sample_rate, n_samples and metadata.
std::string sidecar_path(const std::string& path);
void write_time_series(const std::string& path, const TimeSeries& ts);
TimeSeries read_time_series(const std::string& path);

nlohmann::json read_json(const std::string& path);
void write_json(const std::string& path, const nlohmann::json& j);

// Tab-separated columns with a '#'-prefixed header line.
void write_tsv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& columns);

}  // namespace levspec::io
