#include <doctest.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "mmfuse/adapter.hpp"
#include "mmfuse/dataset.hpp"
#include "mmfuse/featurize.hpp"
#include "mmfuse/param_store.hpp"

using namespace mmfuse;

namespace {

double cosine(const std::vector<float>& a, const std::vector<float>& b) {
    double num = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += double(a[i]) * double(b[i]);
        na += double(a[i]) * double(a[i]);
        nb += double(b[i]) * double(b[i]);
    }
    return num / std::sqrt(na * nb);
}

double norm(const std::vector<float>& a) {
    double s = 0.0;
    for (float v : a) s += double(v) * double(v);
    return std::sqrt(s);
}

std::size_t token_count(const std::string& s) {
    std::istringstream in(s);
    std::string tok;
    std::size_t n = 0;
    while (in >> tok) ++n;
    return n;
}

}  // namespace

TEST_CASE("prompt template placeholder rules") {
    CHECK_THROWS_AS(PromptTemplate("no placeholder"), ValidationError);
    CHECK_THROWS_AS(PromptTemplate("{text} and {text}"), ValidationError);
    CHECK_NOTHROW(PromptTemplate("classify: {text}"));
}

TEST_CASE("compose_prompt substitutes the post verbatim") {
    PromptTemplate tpl("Classify disaster relevance: {text}");
    CHECK(compose_prompt(tpl, "flood in Houston") ==
          "Classify disaster relevance: flood in Houston");

    const std::string post = "The flood is rising, people are trapped";
    const std::string composed = compose_prompt(PromptTemplate::default_template(), post);
    CHECK(composed.find(post) != std::string::npos);

    CHECK_THROWS_AS(compose_prompt(tpl, ""), ValidationError);
    CHECK_THROWS_AS(compose_prompt(tpl, "   "), ValidationError);
}

TEST_CASE("variant generation rules") {
    const auto variants = generate_variants("Flood IS rising!", 7);
    REQUIRE(!variants.empty());
    CHECK(variants.front() == "Flood IS rising!");  // original always first
    CHECK(std::find(variants.begin(), variants.end(), "flood is rising!") != variants.end());
    CHECK(std::find(variants.begin(), variants.end(), "Flood IS rising") != variants.end());

    SUBCASE("single lowercase token collapses to itself") {
        const auto single = generate_variants("flood", 7);
        CHECK(single == std::vector<std::string>{"flood"});
    }

    SUBCASE("long posts are truncated to the token limit") {
        std::string long_post;
        for (int i = 0; i < 30; ++i) long_post += "w" + std::to_string(i) + " ";
        const auto vs = generate_variants(long_post, 3);
        bool found = false;
        for (const auto& v : vs) {
            if (token_count(v) == kVariantTokenLimit) found = true;
        }
        CHECK(found);
    }

    SUBCASE("deterministic per (text, seed)") {
        CHECK(generate_variants("Water keeps rising fast", 5) ==
              generate_variants("Water keeps rising fast", 5));
    }
}

TEST_CASE("mock embeddings are deterministic unit vectors") {
    MockEmbeddingProvider provider(768);
    const auto a = provider.embed("same string");
    const auto b = provider.embed("same string");
    CHECK(a == b);
    CHECK(norm(a) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK_THROWS_AS(provider.embed(""), ValidationError);

    // Distinct strings should be near-orthogonal at this dimension.
    for (int pair = 0; pair < 100; ++pair) {
        const auto u = provider.embed("left-" + std::to_string(pair));
        const auto v = provider.embed("right-" + std::to_string(pair));
        CHECK(std::abs(cosine(u, v)) < 0.5);
    }
}

TEST_CASE("text feature modes coincide in their degenerate cases") {
    MockEmbeddingProvider provider(32);
    const std::string post = "bridge collapsed near downtown";

    SUBCASE("identity template makes prompt equal simple") {
        const auto simple =
            text_features(TextFeatureMode::simple, PromptTemplate::identity(), post, provider, 1);
        const auto prompt =
            text_features(TextFeatureMode::prompt, PromptTemplate::identity(), post, provider, 1);
        CHECK(simple == prompt);
    }

    SUBCASE("singleton variant set makes prompt-variants equal prompt") {
        PromptTemplate tpl("task: {text}");
        const auto variants =
            text_features(TextFeatureMode::prompt_variants, tpl, "flood", provider, 1);
        const auto prompt = text_features(TextFeatureMode::prompt, tpl, "flood", provider, 1);
        CHECK(variants == prompt);
    }

    SUBCASE("identity refinement makes prompt-finetune equal prompt") {
        PromptTemplate tpl("task: {text}");
        const Tensor<float> eye = Tensor<float>::identity(32);
        const auto finetuned =
            text_features(TextFeatureMode::prompt_finetune, tpl, post, provider, 1, &eye);
        const auto prompt = text_features(TextFeatureMode::prompt, tpl, post, provider, 1);
        CHECK(finetuned == prompt);
    }
}

TEST_CASE("adapter layout contract and zero case") {
    SUBCASE("zero weights and bias give zero capsules") {
        auto W = make_var(Tensor<float>({10, 12}), true);
        auto b = make_var(Tensor<float>({12}), true);
        auto x = make_var(Tensor<float>::from_vector(std::vector<float>(10, 0.5f)), true);
        auto caps = adapt_capsules<float>(nullptr, W, b, x, 4, 3);
        CHECK(caps->value.extent(0) == 4);
        CHECK(caps->value.extent(1) == 3);
        for (std::size_t i = 0; i < caps->value.numel(); ++i) CHECK(caps->value[i] == 0.0f);
    }

    SUBCASE("capsule (i, j) is affine output 16*i + j at production shapes") {
        ParamStore<float> store;
        store.add("w", {768, 128}, InitKind::glorot);
        store.add("b", {128}, InitKind::zero);
        store.init(3);
        Rng rng(derive_seed(3, "adapter-input"));
        Tensor<float> input({768});
        for (std::size_t i = 0; i < 768; ++i) {
            input[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
        }
        auto x = make_var(input, false);
        auto flat = affine<float>(nullptr, store.var("w"), store.var("b"), x);
        auto caps = adapt_capsules<float>(nullptr, store.var("w"), store.var("b"), x, 8, 16);
        for (std::size_t i = 0; i < 8; ++i) {
            for (std::size_t j = 0; j < 16; ++j) {
                CHECK(caps->value.at(i, j) == flat->value[16 * i + j]);
            }
        }
    }

    SUBCASE("matches the double-loop oracle") {
        ParamStore<double> store;
        store.add("w", {10, 15}, InitKind::glorot);
        store.add("b", {15}, InitKind::zero);
        store.init(3);
        Rng rng(33);
        Tensor<double> input({10});
        for (std::size_t i = 0; i < 10; ++i) input[i] = rng.uniform(-1.0, 1.0);
        auto caps =
            adapt_capsules<double>(nullptr, store.var("w"), store.var("b"),
                                   make_var(input, false), 5, 3);
        const auto& W = store.var("w")->value;
        for (std::size_t c = 0; c < 5; ++c) {
            for (std::size_t j = 0; j < 3; ++j) {
                double acc = 0.0;
                const std::size_t col = 3 * c + j;
                for (std::size_t i = 0; i < 10; ++i) acc += input[i] * W.at(i, col);
                CHECK(caps->value.at(c, j) == doctest::Approx(acc).epsilon(1e-6));
            }
        }
    }

    SUBCASE("dimension mismatch is rejected") {
        auto W = make_var(Tensor<float>({10, 12}), true);
        auto b = make_var(Tensor<float>({12}), true);
        auto x = make_var(Tensor<float>({9}), true);
        CHECK_THROWS_AS(adapt_capsules<float>(nullptr, W, b, x, 4, 3), DimensionError);
    }
}

TEST_CASE("embedding a manifest column then adapting equals adapting precomputed embeddings") {
    MockEmbeddingProvider provider(16);
    PromptTemplate tpl = PromptTemplate::default_template();

    std::vector<SampleRecord> records;
    for (int i = 0; i < 6; ++i) {
        SampleRecord rec;
        rec.id = "r" + std::to_string(i);
        rec.label = i % 2;
        rec.raw_text = "post number " + std::to_string(i) + " about the storm";
        rec.image_embedding = provider.embed(rec.id);
        rec.text_embedding =
            text_features(TextFeatureMode::prompt, tpl, *rec.raw_text, provider, 9);
        records.push_back(rec);
    }

    // Round-trip the precomputed embeddings through the manifest format.
    const auto path = std::filesystem::temp_directory_path() / "mmfuse_assoc.jsonl";
    save_records(records, path);
    Dataset loaded = load_manifest(path);

    ParamStore<float> store;
    store.add("w", {16, 12}, InitKind::glorot);
    store.add("b", {12}, InitKind::zero);
    store.init(4);

    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto direct = text_features(TextFeatureMode::prompt, tpl,
                                          *records[i].raw_text, provider, 9);
        auto from_manifest = adapt_capsules<float>(
            nullptr, store.var("w"), store.var("b"),
            make_var(Tensor<float>::from_vector(loaded.records[i].text_embedding), false), 4, 3);
        auto from_direct = adapt_capsules<float>(
            nullptr, store.var("w"), store.var("b"),
            make_var(Tensor<float>::from_vector(direct), false), 4, 3);
        CHECK(from_manifest->value == from_direct->value);  // bit-exact
    }
}

TEST_CASE("http provider speaks the documented wire contract") {
    httplib::Server server;
    std::atomic<int> request_count{0};
    server.Post("/embed", [&](const httplib::Request& req, httplib::Response& res) {
        ++request_count;
        const auto body = nlohmann::json::parse(req.body);
        REQUIRE(body.contains("model"));
        REQUIRE(body.contains("inputs"));
        nlohmann::json vectors = nlohmann::json::array();
        for (const auto& input : body.at("inputs")) {
            const std::string s = input.get<std::string>();
            nlohmann::json vec = nlohmann::json::array();
            for (int i = 0; i < 4; ++i) vec.push_back(double(s.size()) + i);
            vectors.push_back(vec);
        }
        res.set_content(nlohmann::json{{"vectors", vectors}}.dump(), "application/json");
    });

    const int port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread server_thread([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    HttpEmbeddingProvider provider("127.0.0.1", port, "test-model", 4);
    const auto vec = provider.embed("abc");
    CHECK(vec == std::vector<float>{3.0f, 4.0f, 5.0f, 6.0f});
    CHECK(request_count.load() == 1);

    HttpEmbeddingProvider wrong_dim("127.0.0.1", port, "test-model", 9);
    CHECK_THROWS_AS(wrong_dim.embed("abc"), IoError);

    server.stop();
    server_thread.join();

    // Unreachable endpoint surfaces as an I/O error.
    HttpEmbeddingProvider dead("127.0.0.1", port, "test-model", 4);
    CHECK_THROWS_AS(dead.embed("abc"), IoError);
}
