#include "hsbi/io.hpp"

#include <fstream>

namespace hsbi {

namespace {

template <typename S>
void write_array_impl(const fs::path& file, const MatX<S>& m) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + file.string() + " for writing");
    std::vector<S> row(static_cast<std::size_t>(m.cols()));
    for (long r = 0; r < m.rows(); ++r) {
        for (long c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size() * sizeof(S)));
    }
    if (!out) throw FormatError("short write to " + file.string());
}

template <typename S>
MatX<S> read_array_impl(const fs::path& file, long rows, long cols) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw FormatError("cannot open array file " + file.string());
    in.seekg(0, std::ios::end);
    const auto bytes = static_cast<long>(in.tellg());
    const long expected = rows * cols * static_cast<long>(sizeof(S));
    if (bytes != expected)
        throw FormatError("array " + file.filename().string() + ": expected " +
                          std::to_string(expected) + " bytes for shape [" + std::to_string(rows) +
                          ", " + std::to_string(cols) + "], found " + std::to_string(bytes));
    in.seekg(0);
    MatX<S> m(rows, cols);
    std::vector<S> row(static_cast<std::size_t>(cols));
    for (long r = 0; r < rows; ++r) {
        in.read(reinterpret_cast<char*>(row.data()),
                static_cast<std::streamsize>(row.size() * sizeof(S)));
        if (!in) throw FormatError("short read from " + file.string());
        for (long c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)];
    }
    return m;
}

}  // namespace

void write_array(const fs::path& file, const Mat& m) { write_array_impl<double>(file, m); }
void write_array(const fs::path& file, const MatX<float>& m) { write_array_impl<float>(file, m); }
Mat read_array_f64(const fs::path& file, long rows, long cols) {
    return read_array_impl<double>(file, rows, cols);
}
MatX<float> read_array_f32(const fs::path& file, long rows, long cols) {
    return read_array_impl<float>(file, rows, cols);
}

json array_entry(const std::string& file, const std::string& dtype, long rows, long cols) {
    return json{{"file", file}, {"dtype", dtype}, {"shape", {rows, cols}}};
}

void write_manifest(const fs::path& dir, const json& manifest) {
    fs::create_directories(dir);
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    if (!out) throw FormatError("cannot write manifest in " + dir.string());
    out << manifest.dump(2) << "\n";
}

json read_manifest(const fs::path& dir) {
    const fs::path file = dir / "manifest.json";
    std::ifstream in(file);
    if (!in) throw FormatError("missing manifest.json in " + dir.string());
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw FormatError("invalid manifest.json in " + dir.string() + ": " + e.what());
    }
    return j;
}

void check_manifest(const json& manifest, const std::string& expected_kind) {
    if (!manifest.contains("schema_version") || !manifest["schema_version"].is_number_integer())
        throw FormatError("manifest missing schema_version");
    const int v = manifest["schema_version"].get<int>();
    if (v != kSchemaVersion)
        throw FormatError("incompatible schema_version " + std::to_string(v) + " (expected " +
                          std::to_string(kSchemaVersion) + ")");
    if (manifest.value("kind", "") != expected_kind)
        throw FormatError("manifest kind '" + manifest.value("kind", "") + "' is not '" +
                          expected_kind + "'");
}

json ledger_to_json(const BudgetLedger& ledger) {
    return json{{"true_simulator_calls", ledger.true_simulator_calls},
                {"surrogate_draws", ledger.surrogate_draws},
                {"t_sim_seconds", ledger.t_sim_seconds},
                {"t_like_seconds", ledger.t_like_seconds}};
}

BudgetLedger ledger_from_json(const json& j) {
    BudgetLedger l;
    l.true_simulator_calls = j.value("true_simulator_calls", 0L);
    l.surrogate_draws = j.value("surrogate_draws", 0L);
    l.t_sim_seconds = j.value("t_sim_seconds", 0.0);
    l.t_like_seconds = j.value("t_like_seconds", 0.0);
    return l;
}

json net_config_to_json(const NetConfig& cfg) {
    return json{
        {"arch", cfg.arch == NetConfig::Arch::Transformer ? "transformer" : "mlp"},
        {"transformer",
         {{"n_blocks", cfg.transformer.n_blocks},
          {"n_heads", cfg.transformer.n_heads},
          {"n_ff_layers", cfg.transformer.n_ff_layers},
          {"d_lat", cfg.transformer.d_lat},
          {"ff_expansion", cfg.transformer.ff_expansion}}},
        {"mlp",
         {{"hidden_width", cfg.mlp.hidden_width},
          {"hidden_layers", cfg.mlp.hidden_layers},
          {"dropout", cfg.mlp.dropout}}},
        {"embedding",
         {{"d_id", cfg.embedding.d_id},
          {"d_pos", cfg.embedding.d_pos},
          {"d_grp", cfg.embedding.d_grp},
          {"d_fn", cfg.embedding.d_fn},
          {"fourier_scale", cfg.embedding.fourier_scale}}}};
}

NetConfig net_config_from_json(const json& j) {
    NetConfig cfg;
    const std::string arch = j.value("arch", "transformer");
    if (arch == "transformer") {
        cfg.arch = NetConfig::Arch::Transformer;
    } else if (arch == "mlp") {
        cfg.arch = NetConfig::Arch::Mlp;
    } else {
        throw FormatError("unknown arch '" + arch + "'");
    }
    if (j.contains("transformer")) {
        const auto& t = j["transformer"];
        cfg.transformer.n_blocks = t.value("n_blocks", cfg.transformer.n_blocks);
        cfg.transformer.n_heads = t.value("n_heads", cfg.transformer.n_heads);
        cfg.transformer.n_ff_layers = t.value("n_ff_layers", cfg.transformer.n_ff_layers);
        cfg.transformer.d_lat = t.value("d_lat", cfg.transformer.d_lat);
        cfg.transformer.ff_expansion = t.value("ff_expansion", cfg.transformer.ff_expansion);
    }
    if (j.contains("mlp")) {
        const auto& m = j["mlp"];
        cfg.mlp.hidden_width = m.value("hidden_width", cfg.mlp.hidden_width);
        cfg.mlp.hidden_layers = m.value("hidden_layers", cfg.mlp.hidden_layers);
        cfg.mlp.dropout = m.value("dropout", cfg.mlp.dropout);
    }
    if (j.contains("embedding")) {
        const auto& e = j["embedding"];
        cfg.embedding.d_id = e.value("d_id", cfg.embedding.d_id);
        cfg.embedding.d_pos = e.value("d_pos", cfg.embedding.d_pos);
        cfg.embedding.d_grp = e.value("d_grp", cfg.embedding.d_grp);
        cfg.embedding.d_fn = e.value("d_fn", cfg.embedding.d_fn);
        cfg.embedding.fourier_scale = e.value("fourier_scale", cfg.embedding.fourier_scale);
    }
    return cfg;
}

json net_shape_to_json(const NetShape& s) {
    return json{{"d_value", s.d_value},
                {"n_variables", s.n_variables},
                {"max_positions", s.max_positions},
                {"max_groups", s.max_groups},
                {"functional", s.functional},
                {"d_xi", s.d_xi},
                {"fixed_tokens", s.fixed_tokens},
                {"target_dim", s.target_dim}};
}

NetShape net_shape_from_json(const json& j) {
    NetShape s;
    s.d_value = j.at("d_value").get<int>();
    s.n_variables = j.at("n_variables").get<int>();
    s.max_positions = j.at("max_positions").get<int>();
    s.max_groups = j.at("max_groups").get<int>();
    s.functional = j.at("functional").get<bool>();
    s.d_xi = j.at("d_xi").get<int>();
    s.fixed_tokens = j.at("fixed_tokens").get<int>();
    s.target_dim = j.at("target_dim").get<int>();
    return s;
}

json zscore_to_json(const ZScoreStats& stats) {
    json arr = json::array();
    for (const auto& [key, ms] : stats.stats) {
        json entry;
        entry["var_id"] = key.var_id;
        entry["position"] = key.position;
        entry["mean"] = std::vector<double>(ms.first.data(), ms.first.data() + ms.first.size());
        entry["sd"] = std::vector<double>(ms.second.data(), ms.second.data() + ms.second.size());
        arr.push_back(std::move(entry));
    }
    return arr;
}

ZScoreStats zscore_from_json(const json& j) {
    ZScoreStats stats;
    for (const auto& entry : j) {
        const auto mean = entry.at("mean").get<std::vector<double>>();
        const auto sd = entry.at("sd").get<std::vector<double>>();
        Vec m(static_cast<long>(mean.size())), s(static_cast<long>(sd.size()));
        for (std::size_t i = 0; i < mean.size(); ++i) m[static_cast<long>(i)] = mean[i];
        for (std::size_t i = 0; i < sd.size(); ++i) s[static_cast<long>(i)] = sd[i];
        stats.stats[{entry.at("var_id").get<int>(), entry.at("position").get<int>()}] = {m, s};
    }
    return stats;
}

}  // namespace hsbi
