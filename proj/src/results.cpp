#include "mmfuse/results.hpp"

#include <cstdio>
#include <fstream>

namespace mmfuse {

using nlohmann::json;

json config_to_json(const TrainConfig& cfg) {
    json j;
    j["learning_rate"] = cfg.learning_rate;
    j["batch_size"] = cfg.batch_size;
    j["epochs"] = cfg.epochs;
    j["dropout"] = cfg.dropout;
    j["fc_units"] = cfg.fc_units;
    j["rnn_units"] = cfg.rnn_units;
    j["routing_iterations"] = cfg.routing_iterations;
    j["n_caps"] = cfg.n_caps;
    j["caps_dim"] = cfg.caps_dim;
    j["out_caps"] = cfg.out_caps;
    j["out_dim"] = cfg.out_dim;
    j["adam_beta1"] = cfg.adam_beta1;
    j["adam_beta2"] = cfg.adam_beta2;
    j["adam_epsilon"] = cfg.adam_epsilon;
    j["seed"] = cfg.seed;
    j["ablation_mode"] = to_string(cfg.ablation_mode);
    j["loss"] = cfg.loss;
    j["split"] = {{"train", cfg.split.train}, {"val", cfg.split.val}, {"test", cfg.split.test}};
    j["prompt_template"] = cfg.prompt_template;
    return j;
}

void config_update_from_json(TrainConfig& cfg, const json& j) {
    if (!j.is_object()) throw ConfigError("config: expected a JSON object");
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "learning_rate") cfg.learning_rate = value.get<double>();
            else if (key == "batch_size") cfg.batch_size = value.get<std::size_t>();
            else if (key == "epochs") cfg.epochs = value.get<std::size_t>();
            else if (key == "dropout") cfg.dropout = value.get<double>();
            else if (key == "fc_units") cfg.fc_units = value.get<std::size_t>();
            else if (key == "rnn_units") cfg.rnn_units = value.get<std::size_t>();
            else if (key == "routing_iterations") cfg.routing_iterations = value.get<std::size_t>();
            else if (key == "n_caps") cfg.n_caps = value.get<std::size_t>();
            else if (key == "caps_dim") cfg.caps_dim = value.get<std::size_t>();
            else if (key == "out_caps") cfg.out_caps = value.get<std::size_t>();
            else if (key == "out_dim") cfg.out_dim = value.get<std::size_t>();
            else if (key == "adam_beta1") cfg.adam_beta1 = value.get<double>();
            else if (key == "adam_beta2") cfg.adam_beta2 = value.get<double>();
            else if (key == "adam_epsilon") cfg.adam_epsilon = value.get<double>();
            else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
            else if (key == "ablation_mode") cfg.ablation_mode = parse_ablation_mode(value.get<std::string>());
            else if (key == "loss") cfg.loss = value.get<std::string>();
            else if (key == "prompt_template") cfg.prompt_template = value.get<std::string>();
            else if (key == "split") {
                if (!value.is_object()) throw ConfigError("config: split must be an object");
                if (value.contains("train")) cfg.split.train = value.at("train").get<double>();
                if (value.contains("val")) cfg.split.val = value.at("val").get<double>();
                if (value.contains("test")) cfg.split.test = value.at("test").get<double>();
            } else {
                throw ConfigError("config: unknown key '" + key + "'");
            }
        } catch (const json::exception& e) {
            throw ConfigError("config: bad value for '" + key + "': " + e.what());
        }
    }
}

TrainConfig config_from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path.string() + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw IoError("config '" + path.string() + "': " + e.what());
    }
    TrainConfig cfg;
    config_update_from_json(cfg, j);
    return cfg;
}

json metrics_to_json(const Metrics& m) {
    json j;
    j["tp"] = m.tp;
    j["fp"] = m.fp;
    j["fn"] = m.fn;
    j["tn"] = m.tn;
    j["accuracy"] = round2(m.accuracy);
    j["precision"] = round2(m.precision);
    j["recall"] = round2(m.recall);
    j["f1"] = round2(m.f1);
    j["macro_f1"] = round2(m.macro_f1);
    j["degenerate_precision"] = m.degenerate_precision;
    j["degenerate_recall"] = m.degenerate_recall;
    return j;
}

json history_to_json(const History& h) {
    // Wall-clock per epoch is measured but intentionally not serialized:
    // results files must be byte-identical across reruns.
    json arr = json::array();
    for (std::size_t i = 0; i < h.epochs.size(); ++i) {
        json e;
        e["epoch"] = i + 1;
        e["train_loss"] = h.epochs[i].train_loss;
        e["val"] = metrics_to_json(h.epochs[i].val);
        arr.push_back(std::move(e));
    }
    return arr;
}

std::string checksum_hex(std::uint64_t checksum) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "fnv1a:%016llx", static_cast<unsigned long long>(checksum));
    return buf;
}

json train_results_json(const TrainConfig& cfg, const TrainResult& result,
                        const Metrics& final_val, const Metrics& final_test) {
    json j;
    j["artifact_version"] = kArtifactVersion;
    j["seed"] = cfg.seed;
    j["config"] = config_to_json(cfg);
    j["history"] = history_to_json(result.history);
    j["final_metrics"] = {{"val", metrics_to_json(final_val)},
                          {"test", metrics_to_json(final_test)}};
    j["params_checksum_init"] = checksum_hex(result.params_checksum_init);
    j["params_checksum_final"] = checksum_hex(result.params_checksum_final);
    return j;
}

json ablation_results_json(const TrainConfig& cfg, const AblationReport& report) {
    json j;
    j["artifact_version"] = kArtifactVersion;
    j["seed"] = cfg.seed;
    j["config"] = config_to_json(cfg);
    j["split_sizes"] = {{"train", report.n_train}, {"val", report.n_val}, {"test", report.n_test}};

    json rows = json::array();
    const AblationRow* fusion_row = nullptr;
    for (const auto& row : report.rows) {
        json r;
        r["configuration"] = row.configuration;
        r["val"] = metrics_to_json(row.val);
        r["test"] = metrics_to_json(row.test);
        r["history"] = history_to_json(row.history);
        rows.push_back(std::move(r));
        if (row.mode == AblationMode::fusion) fusion_row = &row;
    }
    j["ablation"] = std::move(rows);

    // The fusion configuration is the model of record.
    if (fusion_row) {
        j["history"] = history_to_json(fusion_row->history);
        j["final_metrics"] = {{"val", metrics_to_json(fusion_row->val)},
                              {"test", metrics_to_json(fusion_row->test)}};
    } else {
        j["history"] = json::array();
        j["final_metrics"] = nullptr;
    }
    return j;
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << content;
    if (!out) throw IoError("failed while writing '" + path.string() + "'");
}

}  // namespace mmfuse
