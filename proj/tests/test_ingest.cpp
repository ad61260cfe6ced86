#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "mmfuse/dataset.hpp"
#include "mmfuse/rng.hpp"

using namespace mmfuse;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
    static const fs::path dir = [] {
        auto d = fs::temp_directory_path() / "mmfuse_ingest_tests";
        fs::create_directories(d);
        return d;
    }();
    return dir / name;
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
    std::ofstream out(path, std::ios::trunc);
    for (const auto& line : lines) out << line << "\n";
}

double dot(const std::vector<float>& a, const std::vector<float>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += double(a[i]) * double(b[i]);
    return s;
}

// Recovers the latent modality bit: embeddings sit at +-center, so the sign
// of the projection onto the bit-0 center identifies the cluster.
int bit_of(const std::vector<float>& emb, const std::vector<float>& center0) {
    return dot(emb, center0) >= 0.0 ? 0 : 1;
}

// Nearest-centroid probe: fit class centroids on one subset, classify another.
// Its decision boundary is a hyperplane, i.e. a linear one-layer classifier.
double centroid_probe_accuracy(const std::vector<const SampleRecord*>& fit,
                               const std::vector<const SampleRecord*>& eval_set, bool use_text) {
    const std::size_t d =
        use_text ? fit.front()->text_embedding.size() : fit.front()->image_embedding.size();
    std::vector<double> c0(d, 0.0), c1(d, 0.0);
    std::size_t n0 = 0, n1 = 0;
    for (const auto* rec : fit) {
        const auto& e = use_text ? rec->text_embedding : rec->image_embedding;
        auto& c = rec->label == 0 ? c0 : c1;
        for (std::size_t i = 0; i < d; ++i) c[i] += e[i];
        (rec->label == 0 ? n0 : n1) += 1;
    }
    for (std::size_t i = 0; i < d; ++i) {
        c0[i] /= double(std::max<std::size_t>(n0, 1));
        c1[i] /= double(std::max<std::size_t>(n1, 1));
    }
    std::size_t hits = 0;
    for (const auto* rec : eval_set) {
        const auto& e = use_text ? rec->text_embedding : rec->image_embedding;
        double d0 = 0.0, d1 = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            d0 += (e[i] - c0[i]) * (e[i] - c0[i]);
            d1 += (e[i] - c1[i]) * (e[i] - c1[i]);
        }
        const int pred = d0 <= d1 ? 0 : 1;
        if (pred == rec->label) ++hits;
    }
    return double(hits) / double(eval_set.size());
}

}  // namespace

TEST_CASE("load_manifest builds a dataset and enforces dims") {
    const auto path = temp_file("small.jsonl");
    write_lines(path, {
        R"({"id":"a","label":1,"text_embedding":[1,2,3,4],"image_embedding":[1,2,3,4,5,6]})",
        R"({"id":"b","label":0,"text_embedding":[0.5,0,0,-1],"image_embedding":[0,0,0,0,0,1],"raw_text":"hi"})",
    });
    Dataset ds = load_manifest(path);
    CHECK(ds.size() == 2);
    CHECK(ds.d_text == 4);
    CHECK(ds.d_image == 6);
    CHECK(ds.records[1].raw_text.has_value());

    SUBCASE("dim mismatch names the record") {
        write_lines(path, {
            R"({"id":"a","label":1,"text_embedding":[1,2,3,4],"image_embedding":[1,2,3,4,5,6]})",
            R"({"id":"bad","label":0,"text_embedding":[1,2,3,4,5],"image_embedding":[1,2,3,4,5,6]})",
        });
        CHECK_THROWS_WITH_AS(load_manifest(path), doctest::Contains("bad"), IoError);
    }

    SUBCASE("empty file is rejected") {
        write_lines(path, {});
        CHECK_THROWS_AS(load_manifest(path), IoError);
    }

    SUBCASE("malformed line reports its number") {
        write_lines(path, {
            R"({"id":"a","label":1,"text_embedding":[1],"image_embedding":[1]})",
            R"(this is not json)",
        });
        CHECK_THROWS_WITH_AS(load_manifest(path), doctest::Contains("line 2"), IoError);
    }

    SUBCASE("labels outside {0,1} are rejected") {
        write_lines(path, {
            R"({"id":"a","label":2,"text_embedding":[1],"image_embedding":[1]})",
        });
        CHECK_THROWS_AS(load_manifest(path), IoError);
    }
}

TEST_CASE("manifest round trip is element-identical") {
    Dataset ds = synth_generate(64, 5, 7, SynthStructure::xor_bits, 0.4, 99);
    const auto path = temp_file("roundtrip.jsonl");
    save_manifest(ds, path);
    Dataset back = load_manifest(path);
    REQUIRE(back.size() == ds.size());
    CHECK(back.d_text == ds.d_text);
    CHECK(back.d_image == ds.d_image);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        CHECK(back.records[i].id == ds.records[i].id);
        CHECK(back.records[i].label == ds.records[i].label);
        CHECK(back.records[i].text_embedding == ds.records[i].text_embedding);
        CHECK(back.records[i].image_embedding == ds.records[i].image_embedding);
    }
}

TEST_CASE("split sizes, determinism, and stratification") {
    Dataset ds = synth_generate(100, 4, 4, SynthStructure::xor_bits, 0.2, 5);

    SplitSpec spec;  // 0.70 / 0.15 / 0.15
    SplitResult parts = split(ds, spec, 1);
    CHECK(parts.train.size() == 70);
    CHECK(parts.val.size() == 15);
    CHECK(parts.test.size() == 15);

    SUBCASE("same seed gives identical member sets") {
        SplitResult again = split(ds, spec, 1);
        auto ids = [](const Dataset& d) {
            std::set<std::string> s;
            for (const auto& r : d.records) s.insert(r.id);
            return s;
        };
        CHECK(ids(parts.train) == ids(again.train));
        CHECK(ids(parts.val) == ids(again.val));
        CHECK(ids(parts.test) == ids(again.test));
    }

    SUBCASE("every part stays within one sample of class balance") {
        SplitSpec wide{0.8, 0.1, 0.1};
        SplitResult p = split(ds, wide, 3);
        for (const Dataset* part : {&p.train, &p.val, &p.test}) {
            long ones = 0;
            for (const auto& r : part->records) ones += r.label;
            const long zeros = long(part->size()) - ones;
            CHECK(std::abs(ones - zeros) <= 1);
        }
    }

    SUBCASE("parts are disjoint and cover the dataset") {
        std::set<std::string> all;
        for (const Dataset* part : {&parts.train, &parts.val, &parts.test}) {
            for (const auto& r : part->records) {
                CHECK(all.insert(r.id).second);  // no duplicates across parts
            }
        }
        CHECK(all.size() == ds.size());
    }

    SUBCASE("a fraction that floors to zero is an error") {
        Dataset tiny = synth_generate(4, 4, 4, SynthStructure::xor_bits, 0.0, 5);
        SplitSpec bad{0.5, 0.25, 0.25};
        CHECK_THROWS_AS(split(tiny, SplitSpec{0.98, 0.01, 0.01}, 1), ValidationError);
        CHECK_NOTHROW(split(tiny, bad, 1));
    }

    SUBCASE("invalid fractions are rejected") {
        CHECK_THROWS_AS(split(ds, SplitSpec{0.5, 0.3, 0.3}, 1), ConfigError);
        CHECK_THROWS_AS(split(ds, SplitSpec{1.2, -0.1, -0.1}, 1), ConfigError);
    }
}

TEST_CASE("synth xor labels equal the XOR of the modality bits") {
    const std::uint64_t seed = 7;
    Dataset ds = synth_generate(200, 6, 8, SynthStructure::xor_bits, 0.0, seed);
    const auto [text_c0, text_c1] = synth_modality_centers(6, seed, "text");
    const auto [image_c0, image_c1] = synth_modality_centers(8, seed, "image");

    long ones = 0;
    for (const auto& rec : ds.records) {
        const int a = bit_of(rec.text_embedding, text_c0);
        const int b = bit_of(rec.image_embedding, image_c0);
        CHECK(rec.label == (a ^ b));
        ones += rec.label;
    }
    CHECK(std::abs(2 * ones - long(ds.size())) <= 1);  // balanced within one
}

TEST_CASE("synth determinism and structure validation") {
    Dataset a = synth_generate(50, 4, 4, SynthStructure::unimodal_image, 0.3, 11);
    Dataset b = synth_generate(50, 4, 4, SynthStructure::unimodal_image, 0.3, 11);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a.records[i].id == b.records[i].id);
        CHECK(a.records[i].label == b.records[i].label);
        CHECK(a.records[i].text_embedding == b.records[i].text_embedding);
        CHECK(a.records[i].image_embedding == b.records[i].image_embedding);
    }

    CHECK_THROWS_AS(parse_synth_structure("bogus"), ValidationError);
    CHECK_THROWS_AS(synth_generate(3, 4, 4, SynthStructure::xor_bits, 0.0, 1), ValidationError);
    CHECK_THROWS_AS(synth_generate(8, 1, 4, SynthStructure::xor_bits, 0.0, 1), ValidationError);
}

TEST_CASE("unimodal-text data is linearly separable on text, not on image") {
    Dataset ds = synth_generate(400, 8, 8, SynthStructure::unimodal_text, 0.0, 13);
    std::vector<const SampleRecord*> fit, held;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        (i % 2 == 0 ? fit : held).push_back(&ds.records[i]);
    }
    CHECK(centroid_probe_accuracy(fit, held, /*use_text=*/true) == doctest::Approx(1.0));
    CHECK(centroid_probe_accuracy(fit, held, /*use_text=*/false) < 0.65);
}

TEST_CASE("noise-free xor defeats any single-modality rule but not the joint rule") {
    const std::uint64_t seed = 23;
    Dataset ds = synth_generate(256, 4, 4, SynthStructure::xor_bits, 0.0, seed);
    const auto [text_c0, text_c1] = synth_modality_centers(4, seed, "text");
    const auto [image_c0, image_c1] = synth_modality_centers(4, seed, "image");

    // With zero noise each modality has exactly two distinct points, so every
    // deterministic single-modality classifier is one of four bit-assignments;
    // enumerate them all.
    double best_single = 0.0;
    for (bool use_text : {true, false}) {
        for (int map0 : {0, 1}) {
            for (int map1 : {0, 1}) {
                std::size_t hits = 0;
                for (const auto& rec : ds.records) {
                    const int bit = use_text ? bit_of(rec.text_embedding, text_c0)
                                             : bit_of(rec.image_embedding, image_c0);
                    const int pred = bit == 0 ? map0 : map1;
                    if (pred == rec.label) ++hits;
                }
                best_single = std::max(best_single, double(hits) / double(ds.size()));
            }
        }
    }
    CHECK(best_single <= 0.60);

    std::size_t joint_hits = 0;
    for (const auto& rec : ds.records) {
        const int pred =
            bit_of(rec.text_embedding, text_c0) ^ bit_of(rec.image_embedding, image_c0);
        if (pred == rec.label) ++joint_hits;
    }
    CHECK(joint_hits == ds.size());
}

TEST_CASE("batch_indices partitions every epoch") {
    auto batches = batch_indices(10, 4, 42);
    REQUIRE(batches.size() == 3);
    CHECK(batches[0].size() == 4);
    CHECK(batches[1].size() == 4);
    CHECK(batches[2].size() == 2);

    std::set<std::size_t> seen;
    for (const auto& batch : batches) {
        for (std::size_t idx : batch) CHECK(seen.insert(idx).second);
    }
    CHECK(seen.size() == 10);

    SUBCASE("distinct epoch seeds give different orders over the same multiset") {
        auto epoch1 = batch_indices(64, 8, derive_seed(7, "epoch", 1));
        auto epoch2 = batch_indices(64, 8, derive_seed(7, "epoch", 2));
        std::vector<std::size_t> flat1, flat2;
        for (const auto& b : epoch1) flat1.insert(flat1.end(), b.begin(), b.end());
        for (const auto& b : epoch2) flat2.insert(flat2.end(), b.begin(), b.end());
        CHECK(flat1 != flat2);
        std::sort(flat1.begin(), flat1.end());
        std::sort(flat2.begin(), flat2.end());
        CHECK(flat1 == flat2);
    }

    SUBCASE("repeated calls with one seed are identical") {
        auto again = batch_indices(10, 4, 42);
        CHECK(again == batches);
    }

    CHECK_THROWS_AS(batch_indices(10, 0, 1), ValidationError);
}
