#include "mmfuse/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "mmfuse/rng.hpp"

namespace mmfuse {

using nlohmann::json;

void SplitSpec::validate() const {
    if (train < 0.0 || val < 0.0 || test < 0.0) {
        throw ConfigError("SplitSpec: fractions must be non-negative");
    }
    if (std::abs(train + val + test - 1.0) > 1e-9) {
        throw ConfigError("SplitSpec: fractions must sum to 1, got " +
                          std::to_string(train + val + test));
    }
}

SynthStructure parse_synth_structure(const std::string& tag) {
    if (tag == "unimodal-text") return SynthStructure::unimodal_text;
    if (tag == "unimodal-image") return SynthStructure::unimodal_image;
    if (tag == "xor") return SynthStructure::xor_bits;
    throw ValidationError("unknown synthetic structure '" + tag +
                          "' (expected unimodal-text, unimodal-image or xor)");
}

std::string to_string(SynthStructure s) {
    switch (s) {
        case SynthStructure::unimodal_text: return "unimodal-text";
        case SynthStructure::unimodal_image: return "unimodal-image";
        case SynthStructure::xor_bits: return "xor";
    }
    return "?";
}

namespace {

std::vector<float> parse_embedding(const json& j, const std::string& key, const std::string& id,
                                   std::size_t line_no) {
    if (!j.contains(key)) return {};
    const json& arr = j.at(key);
    if (!arr.is_array()) {
        throw IoError("manifest line " + std::to_string(line_no) + " (id '" + id + "'): " + key +
                      " must be an array of numbers");
    }
    std::vector<float> out;
    out.reserve(arr.size());
    for (const auto& v : arr) {
        if (!v.is_number()) {
            throw IoError("manifest line " + std::to_string(line_no) + " (id '" + id +
                          "'): " + key + " must contain only numbers");
        }
        const double d = v.get<double>();
        if (!std::isfinite(d)) {
            throw IoError("manifest line " + std::to_string(line_no) + " (id '" + id +
                          "'): non-finite value in " + key);
        }
        out.push_back(static_cast<float>(d));
    }
    return out;
}

SampleRecord parse_record(const std::string& line, std::size_t line_no) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        throw IoError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.is_object()) {
        throw IoError("manifest line " + std::to_string(line_no) + ": expected a JSON object");
    }
    SampleRecord rec;
    if (!j.contains("id") || !j.at("id").is_string()) {
        throw IoError("manifest line " + std::to_string(line_no) + ": missing string 'id'");
    }
    rec.id = j.at("id").get<std::string>();
    if (!j.contains("label") || !j.at("label").is_number_integer()) {
        throw IoError("manifest line " + std::to_string(line_no) + " (id '" + rec.id +
                      "'): missing integer 'label'");
    }
    rec.label = j.at("label").get<int>();
    if (rec.label != 0 && rec.label != 1) {
        throw IoError("manifest line " + std::to_string(line_no) + " (id '" + rec.id +
                      "'): label must be 0 or 1, got " + std::to_string(rec.label));
    }
    rec.text_embedding = parse_embedding(j, "text_embedding", rec.id, line_no);
    rec.image_embedding = parse_embedding(j, "image_embedding", rec.id, line_no);
    if (j.contains("raw_text")) {
        if (!j.at("raw_text").is_string()) {
            throw IoError("manifest line " + std::to_string(line_no) + " (id '" + rec.id +
                          "'): raw_text must be a string");
        }
        rec.raw_text = j.at("raw_text").get<std::string>();
    }
    return rec;
}

json record_to_json(const SampleRecord& rec) {
    json j;
    j["id"] = rec.id;
    j["label"] = rec.label;
    json text = json::array();
    for (float v : rec.text_embedding) text.push_back(static_cast<double>(v));
    j["text_embedding"] = std::move(text);
    json image = json::array();
    for (float v : rec.image_embedding) image.push_back(static_cast<double>(v));
    j["image_embedding"] = std::move(image);
    if (rec.raw_text) j["raw_text"] = *rec.raw_text;
    return j;
}

}  // namespace

std::vector<SampleRecord> load_manifest_records(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
    std::vector<SampleRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        records.push_back(parse_record(line, line_no));
    }
    if (records.empty()) {
        throw IoError("manifest '" + path.string() + "' contains no records");
    }
    return records;
}

Dataset load_manifest(const std::filesystem::path& path) {
    Dataset ds;
    ds.records = load_manifest_records(path);
    ds.name = path.stem().string();
    ds.d_text = ds.records.front().text_embedding.size();
    ds.d_image = ds.records.front().image_embedding.size();
    if (ds.d_text == 0 || ds.d_image == 0) {
        throw IoError("manifest '" + path.string() + "': record '" + ds.records.front().id +
                      "' has an empty embedding");
    }
    for (const auto& rec : ds.records) {
        if (rec.text_embedding.size() != ds.d_text || rec.image_embedding.size() != ds.d_image) {
            throw IoError("manifest '" + path.string() + "': record '" + rec.id +
                          "' has embedding dims " + std::to_string(rec.text_embedding.size()) +
                          "/" + std::to_string(rec.image_embedding.size()) +
                          ", expected " + std::to_string(ds.d_text) + "/" +
                          std::to_string(ds.d_image));
        }
    }
    return ds;
}

void save_records(const std::vector<SampleRecord>& records,
                  const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write manifest '" + path.string() + "'");
    for (const auto& rec : records) {
        out << record_to_json(rec).dump() << "\n";
    }
    if (!out) throw IoError("failed while writing manifest '" + path.string() + "'");
}

void save_manifest(const Dataset& ds, const std::filesystem::path& path) {
    save_records(ds.records, path);
}

SplitResult split(const Dataset& ds, const SplitSpec& spec, std::uint64_t seed) {
    spec.validate();
    const std::size_t n = ds.size();
    if (n == 0) throw ValidationError("split: dataset is empty");

    const std::size_t n_val = static_cast<std::size_t>(std::floor(double(n) * spec.val));
    const std::size_t n_test = static_cast<std::size_t>(std::floor(double(n) * spec.test));
    const std::size_t n_train = n - n_val - n_test;
    if (spec.train > 0.0 && n_train == 0) throw ValidationError("split: train part is empty");
    if (spec.val > 0.0 && n_val == 0) throw ValidationError("split: val part is empty");
    if (spec.test > 0.0 && n_test == 0) throw ValidationError("split: test part is empty");

    // Class-wise index lists (labels are validated to {0,1} on load).
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < n; ++i) by_class[ds.records[i].label].push_back(i);

    // Largest-remainder allocation of a part across classes. Quotas come from
    // the original class sizes (n_c * frac) so per-class proportions track the
    // dataset balance; availability caps account for previously taken parts.
    auto allocate = [&](std::size_t part_total, double frac,
                        const std::map<int, std::size_t>& available) {
        std::map<int, std::size_t> alloc;
        std::vector<std::pair<double, int>> order;
        std::size_t assigned = 0;
        for (const auto& [cls, idx] : by_class) {
            const double quota = double(idx.size()) * frac;
            const std::size_t base = std::min(available.at(cls),
                                              static_cast<std::size_t>(std::floor(quota)));
            alloc[cls] = base;
            assigned += base;
            order.push_back({quota - std::floor(quota), cls});
        }
        std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        while (assigned < part_total) {
            bool progressed = false;
            for (const auto& [rem, cls] : order) {
                if (assigned == part_total) break;
                if (alloc[cls] < available.at(cls)) {
                    ++alloc[cls];
                    ++assigned;
                    progressed = true;
                }
            }
            if (!progressed) {
                throw ValidationError("split: cannot satisfy stratified allocation");
            }
        }
        return alloc;
    };

    std::map<int, std::size_t> avail;
    for (const auto& [cls, idx] : by_class) avail[cls] = idx.size();
    auto val_alloc = allocate(n_val, spec.val, avail);
    for (auto& [cls, a] : avail) a -= val_alloc[cls];
    auto test_alloc = allocate(n_test, spec.test, avail);

    std::vector<std::size_t> train_idx, val_idx, test_idx;
    for (auto& [cls, idx] : by_class) {
        Rng rng(derive_seed(seed, "split-class", static_cast<std::uint64_t>(cls)));
        shuffle(idx, rng);
        const std::size_t v = val_alloc[cls];
        const std::size_t t = test_alloc[cls];
        if (v + t > idx.size()) throw ValidationError("split: class smaller than allocation");
        val_idx.insert(val_idx.end(), idx.begin(), idx.begin() + v);
        test_idx.insert(test_idx.end(), idx.begin() + v, idx.begin() + v + t);
        train_idx.insert(train_idx.end(), idx.begin() + v + t, idx.end());
    }

    auto build = [&](std::vector<std::size_t>& idx, const char* part) {
        std::sort(idx.begin(), idx.end());  // keep original manifest order
        Dataset out;
        out.d_text = ds.d_text;
        out.d_image = ds.d_image;
        out.name = ds.name + "/" + part;
        out.records.reserve(idx.size());
        for (std::size_t i : idx) out.records.push_back(ds.records[i]);
        return out;
    };

    SplitResult result;
    result.train = build(train_idx, "train");
    result.val = build(val_idx, "val");
    result.test = build(test_idx, "test");
    return result;
}

std::pair<std::vector<float>, std::vector<float>> synth_modality_centers(std::size_t dim,
                                                                         std::uint64_t seed,
                                                                         const std::string& tag) {
    Rng rng(derive_seed(seed, "synth-center-" + tag));
    std::vector<float> center(dim);
    double norm2 = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
        const double v = rng.normal();
        center[i] = static_cast<float>(v);
        norm2 += v * v;
    }
    const double inv = 1.0 / std::sqrt(norm2);
    std::vector<float> neg(dim);
    for (std::size_t i = 0; i < dim; ++i) {
        center[i] = static_cast<float>(double(center[i]) * inv);
        neg[i] = -center[i];
    }
    // bit 0 -> +u, bit 1 -> -u; the two centers are unit norm, distance 2 apart
    return {center, neg};
}

Dataset synth_generate(std::size_t n, std::size_t d_text, std::size_t d_image,
                       SynthStructure structure, double noise_sigma, std::uint64_t seed) {
    if (n < 4) throw ValidationError("synth_generate: n must be at least 4");
    if (d_text < 2 || d_image < 2) {
        throw ValidationError("synth_generate: embedding dims must be at least 2");
    }
    if (noise_sigma < 0.0) throw ValidationError("synth_generate: noise_sigma must be >= 0");

    const auto [text_c0, text_c1] = synth_modality_centers(d_text, seed, "text");
    const auto [image_c0, image_c1] = synth_modality_centers(d_image, seed, "image");

    // Cycling through bit pairs keeps every structure's labels balanced
    // within one sample for any n.
    static constexpr int kPairs[4][2] = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};

    Rng noise_rng(derive_seed(seed, "synth-noise"));
    Rng bit_rng(derive_seed(seed, "synth-free-bit"));

    Dataset ds;
    ds.d_text = d_text;
    ds.d_image = d_image;
    ds.name = "synth-" + to_string(structure) + "-n" + std::to_string(n) + "-s" +
              std::to_string(seed);
    ds.records.reserve(n);

    for (std::size_t k = 0; k < n; ++k) {
        int a = 0, b = 0;
        switch (structure) {
            case SynthStructure::xor_bits:
                a = kPairs[k % 4][0];
                b = kPairs[k % 4][1];
                break;
            case SynthStructure::unimodal_text:
                a = static_cast<int>(k % 2);
                b = bit_rng.bernoulli(0.5) ? 1 : 0;
                break;
            case SynthStructure::unimodal_image:
                b = static_cast<int>(k % 2);
                a = bit_rng.bernoulli(0.5) ? 1 : 0;
                break;
        }

        SampleRecord rec;
        const auto& tc = (a == 0) ? text_c0 : text_c1;
        const auto& ic = (b == 0) ? image_c0 : image_c1;
        rec.text_embedding.resize(d_text);
        for (std::size_t i = 0; i < d_text; ++i) {
            rec.text_embedding[i] =
                static_cast<float>(double(tc[i]) + noise_sigma * noise_rng.normal());
        }
        rec.image_embedding.resize(d_image);
        for (std::size_t i = 0; i < d_image; ++i) {
            rec.image_embedding[i] =
                static_cast<float>(double(ic[i]) + noise_sigma * noise_rng.normal());
        }
        switch (structure) {
            case SynthStructure::unimodal_text: rec.label = a; break;
            case SynthStructure::unimodal_image: rec.label = b; break;
            case SynthStructure::xor_bits: rec.label = a ^ b; break;
        }
        ds.records.push_back(std::move(rec));
    }

    // Shuffle record order so the quadrant cycle is not visible, then assign
    // ids in final file order.
    Rng order_rng(derive_seed(seed, "synth-order"));
    shuffle(ds.records, order_rng);
    for (std::size_t k = 0; k < n; ++k) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "s%06llu", static_cast<unsigned long long>(k));
        ds.records[k].id = buf;
    }
    return ds;
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t epoch_seed) {
    if (batch_size == 0) throw ValidationError("batch_indices: batch_size must be >= 1");
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(epoch_seed);
    shuffle(perm, rng);

    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t end = std::min(n, start + batch_size);
        batches.emplace_back(perm.begin() + start, perm.begin() + end);
    }
    return batches;
}

}  // namespace mmfuse
