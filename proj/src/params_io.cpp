#include "mmfuse/params_io.hpp"

#include <fstream>

#include <json.hpp>

namespace mmfuse {

using nlohmann::json;

namespace {

json model_config_to_json(const ModelConfig& mc) {
    json j;
    j["mode"] = to_string(mc.mode);
    j["d_text"] = mc.d_text;
    j["d_image"] = mc.d_image;
    j["n_caps"] = mc.n_caps;
    j["caps_dim"] = mc.caps_dim;
    j["out_caps"] = mc.out_caps;
    j["out_dim"] = mc.out_dim;
    j["routing_iterations"] = mc.routing_iterations;
    j["rnn_units"] = mc.rnn_units;
    j["fc_units"] = mc.fc_units;
    j["dropout"] = mc.dropout;
    return j;
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig mc;
    mc.mode = parse_ablation_mode(j.at("mode").get<std::string>());
    mc.d_text = j.at("d_text").get<std::size_t>();
    mc.d_image = j.at("d_image").get<std::size_t>();
    mc.n_caps = j.at("n_caps").get<std::size_t>();
    mc.caps_dim = j.at("caps_dim").get<std::size_t>();
    mc.out_caps = j.at("out_caps").get<std::size_t>();
    mc.out_dim = j.at("out_dim").get<std::size_t>();
    mc.routing_iterations = j.at("routing_iterations").get<std::size_t>();
    mc.rnn_units = j.at("rnn_units").get<std::size_t>();
    mc.fc_units = j.at("fc_units").get<std::size_t>();
    mc.dropout = j.at("dropout").get<double>();
    return mc;
}

}  // namespace

void save_model(const Model<float>& model, const std::filesystem::path& path) {
    json j;
    j["format"] = "mmfuse-checkpoint-v1";
    j["model_config"] = model_config_to_json(model.config());
    json params = json::object();
    model.params().for_each([&](const std::string& name, const Variable<float>& v) {
        json entry;
        entry["shape"] = v.value.shape();
        json data = json::array();
        for (std::size_t i = 0; i < v.value.numel(); ++i) {
            data.push_back(static_cast<double>(v.value[i]));
        }
        entry["data"] = std::move(data);
        params[name] = std::move(entry);
    });
    j["params"] = std::move(params);

    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
    out << j.dump(2) << "\n";
}

std::shared_ptr<Model<float>> load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw IoError("checkpoint '" + path.string() + "': " + e.what());
    }
    if (!j.contains("format") || j.at("format") != "mmfuse-checkpoint-v1") {
        throw IoError("checkpoint '" + path.string() + "': unknown format");
    }

    ModelConfig mc;
    try {
        mc = model_config_from_json(j.at("model_config"));
    } catch (const json::exception& e) {
        throw IoError("checkpoint '" + path.string() + "': bad model_config: " + e.what());
    }
    auto model = std::make_shared<Model<float>>(mc, /*seed=*/0);

    const json& params = j.at("params");
    model->params().for_each([&](const std::string& name, Variable<float>& v) {
        if (!params.contains(name)) {
            throw IoError("checkpoint '" + path.string() + "': missing parameter '" + name + "'");
        }
        const json& entry = params.at(name);
        const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
        if (shape != v.value.shape()) {
            throw IoError("checkpoint '" + path.string() + "': parameter '" + name +
                          "' has mismatched shape");
        }
        const json& data = entry.at("data");
        if (data.size() != v.value.numel()) {
            throw IoError("checkpoint '" + path.string() + "': parameter '" + name +
                          "' has mismatched length");
        }
        for (std::size_t i = 0; i < v.value.numel(); ++i) {
            v.value[i] = static_cast<float>(data[i].get<double>());
        }
    });
    return model;
}

}  // namespace mmfuse
