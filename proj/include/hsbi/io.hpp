#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "hsbi/model.hpp"
#include "hsbi/nets.hpp"
#include "hsbi/tokens.hpp"

namespace hsbi {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

inline constexpr int kSchemaVersion = 1;

// Raw little-endian IEEE-754 arrays, row-major, one file per named array.
void write_array(const fs::path& file, const Mat& m);
void write_array(const fs::path& file, const MatX<float>& m);
Mat read_array_f64(const fs::path& file, long rows, long cols);
MatX<float> read_array_f32(const fs::path& file, long rows, long cols);

json array_entry(const std::string& file, const std::string& dtype, long rows, long cols);

void write_manifest(const fs::path& dir, const json& manifest);
json read_manifest(const fs::path& dir);

// Checks schema version and kind; throws FormatError on mismatch.
void check_manifest(const json& manifest, const std::string& expected_kind);

json ledger_to_json(const BudgetLedger& ledger);
BudgetLedger ledger_from_json(const json& j);

json net_config_to_json(const NetConfig& cfg);
NetConfig net_config_from_json(const json& j);
json net_shape_to_json(const NetShape& s);
NetShape net_shape_from_json(const json& j);

json zscore_to_json(const ZScoreStats& stats);
ZScoreStats zscore_from_json(const json& j);

}  // namespace hsbi
