#include "mmfuse/featurize.hpp"

#include <httplib.h>
#include <json.hpp>

namespace mmfuse {

using nlohmann::json;

HttpEmbeddingProvider::HttpEmbeddingProvider(std::string host, int port, std::string model,
                                             std::size_t dim)
    : host_(std::move(host)), port_(port), model_(std::move(model)), dim_(dim) {
    if (dim_ == 0) throw ConfigError("HttpEmbeddingProvider: output_dim must be positive");
}

std::vector<float> HttpEmbeddingProvider::embed(const std::string& input) const {
    if (input.empty()) {
        throw ValidationError("http embed: input string is empty");
    }
    json body;
    body["model"] = model_;
    body["inputs"] = json::array({input});

    httplib::Client client(host_, port_);
    auto res = client.Post("/embed", body.dump(), "application/json");
    if (!res) {
        throw IoError("embedding endpoint " + host_ + ":" + std::to_string(port_) +
                      " unreachable");
    }
    if (res->status != 200) {
        throw IoError("embedding endpoint returned status " + std::to_string(res->status));
    }

    json reply;
    try {
        reply = json::parse(res->body);
    } catch (const json::exception& e) {
        throw IoError(std::string("embedding endpoint returned invalid JSON: ") + e.what());
    }
    if (!reply.contains("vectors") || !reply.at("vectors").is_array() ||
        reply.at("vectors").size() != 1) {
        throw IoError("embedding endpoint reply must contain one vector per input");
    }
    const json& vec = reply.at("vectors").at(0);
    if (!vec.is_array() || vec.size() != dim_) {
        throw IoError("embedding endpoint returned dimension " + std::to_string(vec.size()) +
                      ", expected " + std::to_string(dim_));
    }
    std::vector<float> out(dim_);
    for (std::size_t i = 0; i < dim_; ++i) {
        if (!vec[i].is_number()) throw IoError("embedding vector must contain only numbers");
        out[i] = vec[i].get<float>();
    }
    return out;
}

}  // namespace mmfuse
