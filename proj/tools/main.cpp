#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "mmfuse/params_io.hpp"
#include "mmfuse/results.hpp"
#include "mmfuse/train.hpp"
#include "mmfuse/verify.hpp"

namespace {

using namespace mmfuse;
using nlohmann::json;

// Exit code contract: 0 success, 2 input/usage error, 3 numerical abort,
// 4 verification failure.
constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitVerification = 4;

void print_metrics_line(const std::string& label, const Metrics& m) {
    std::printf("%-32s acc %6.2f  prec %6.2f  rec %6.2f  f1 %6.2f  macro-f1 %6.2f  "
                "(tp %llu fp %llu fn %llu tn %llu)\n",
                label.c_str(), round2(m.accuracy), round2(m.precision), round2(m.recall),
                round2(m.f1), round2(m.macro_f1), (unsigned long long)m.tp,
                (unsigned long long)m.fp, (unsigned long long)m.fn, (unsigned long long)m.tn);
}

struct SynthArgs {
    std::size_t n = 2000;
    std::size_t d_text = 768;
    std::size_t d_image = 2048;
    std::string structure = "xor";
    double noise = 0.3;
    std::uint64_t seed = 7;
    std::string out;
    bool json_out = false;
};

int cmd_synth(const SynthArgs& args) {
    Dataset ds = synth_generate(args.n, args.d_text, args.d_image,
                                parse_synth_structure(args.structure), args.noise, args.seed);
    save_manifest(ds, args.out);
    if (args.json_out) {
        json j{{"records", ds.size()}, {"structure", args.structure}, {"out", args.out}};
        std::cout << j.dump() << "\n";
    } else {
        std::printf("wrote %zu records (structure %s) to %s\n", ds.size(),
                    args.structure.c_str(), args.out.c_str());
    }
    return kExitOk;
}

struct TrainArgs {
    std::string manifest;
    std::string out = "results.json";
    std::string config_path;
    std::string save_params;
    TrainConfig cfg;
    bool json_out = false;
};

int cmd_train(TrainArgs& args) {
    const Dataset ds = load_manifest(args.manifest);
    const SplitResult parts = split(ds, args.cfg.split, args.cfg.seed);

    TrainResult result = train(args.cfg, parts.train, parts.val);
    const Metrics final_val = evaluate(*result.model, parts.val);
    const Metrics final_test = evaluate(*result.model, parts.test);

    json j = train_results_json(args.cfg, result, final_val, final_test);
    write_text_file(args.out, j.dump(2) + "\n");
    if (!args.save_params.empty()) save_model(*result.model, args.save_params);

    if (args.json_out) {
        std::cout << j.dump() << "\n";
    } else {
        std::printf("trained %s for %zu epochs on %zu/%zu/%zu records\n",
                    to_string(args.cfg.ablation_mode).c_str(), args.cfg.epochs,
                    parts.train.size(), parts.val.size(), parts.test.size());
        print_metrics_line("val", final_val);
        print_metrics_line("test", final_test);
        std::printf("results written to %s\n", args.out.c_str());
    }
    return kExitOk;
}

struct EvalArgs {
    std::string manifest;
    std::string checkpoint;
    bool json_out = false;
};

int cmd_eval(const EvalArgs& args) {
    auto model = load_model(args.checkpoint);
    const Dataset ds = load_manifest(args.manifest);
    const Metrics m = evaluate(*model, ds);
    if (args.json_out) {
        std::cout << metrics_to_json(m).dump() << "\n";
    } else {
        print_metrics_line(ds.name, m);
    }
    return kExitOk;
}

struct AblateArgs {
    std::string manifest;
    std::string out = "ablation.json";
    TrainConfig cfg;
    bool json_out = false;
};

int cmd_ablate(const AblateArgs& args) {
    const Dataset ds = load_manifest(args.manifest);
    const AblationReport report = run_ablation(args.cfg, ds);

    json j = ablation_results_json(args.cfg, report);
    write_text_file(args.out, j.dump(2) + "\n");

    if (args.json_out) {
        std::cout << j.dump() << "\n";
    } else {
        std::printf("ablation over %zu/%zu/%zu records (%zu epochs each)\n", report.n_train,
                    report.n_val, report.n_test, args.cfg.epochs);
        for (const auto& row : report.rows) print_metrics_line(row.configuration, row.test);
        std::printf("report written to %s\n", args.out.c_str());
    }
    return kExitOk;
}

struct GradcheckArgs {
    std::uint64_t seed = 7;
    double tolerance = 1e-4;
    std::string mutate;
    bool json_out = false;
};

int cmd_gradcheck(const GradcheckArgs& args) {
    VerifyOptions opts;
    opts.seed = args.seed;
    opts.tolerance = args.tolerance;
    if (!args.mutate.empty()) {
        if (args.mutate != "sign-flip") {
            throw ValidationError("gradcheck: unknown mutation '" + args.mutate + "'");
        }
        opts.mutate_sign_flip = true;
    }

    const auto sections = run_verification(opts);
    std::vector<std::string> offenders;
    json jsections = json::array();
    for (const auto& section : sections) {
        json jtensors = json::array();
        for (const auto& t : section.report.tensors) {
            const bool ok = !t.non_finite && t.max_rel_error < opts.tolerance;
            if (!ok) offenders.push_back(section.name + "/" + t.name);
            if (args.json_out) {
                jtensors.push_back({{"tensor", t.name},
                                    {"max_rel_error", t.max_rel_error},
                                    {"checked_elements", t.checked},
                                    {"non_finite", t.non_finite},
                                    {"pass", ok}});
            } else {
                std::printf("[%s] %-28s max_rel_err %.3e  (%zu elements)%s%s\n",
                            section.name.c_str(), t.name.c_str(), t.max_rel_error, t.checked,
                            t.non_finite ? "  NON-FINITE" : "", ok ? "" : "  FAIL");
            }
        }
        if (args.json_out) {
            jsections.push_back({{"section", section.name},
                                 {"max_rel_error", section.report.max_rel_error},
                                 {"tensors", jtensors}});
        }
    }

    const bool pass = offenders.empty();
    if (args.json_out) {
        json j{{"tolerance", opts.tolerance},
               {"pass", pass},
               {"sections", jsections},
               {"failing_tensors", offenders}};
        std::cout << j.dump() << "\n";
    } else if (pass) {
        std::printf("gradcheck passed: all tensors below %.1e\n", opts.tolerance);
    } else {
        std::printf("gradcheck FAILED for %zu tensors:\n", offenders.size());
        for (const auto& name : offenders) std::printf("  %s\n", name.c_str());
    }
    return pass ? kExitOk : kExitVerification;
}

struct EmbedArgs {
    std::string in;
    std::string out;
    std::string provider = "mock";
    std::string endpoint;
    std::string model = "default";
    std::string mode = "prompt";
    std::string template_text = PromptTemplate::default_template().text();
    std::size_t d_text = 768;
    std::size_t d_image = 2048;
    std::uint64_t seed = 7;
    bool json_out = false;
};

int cmd_embed(const EmbedArgs& args) {
    auto records = load_manifest_records(args.in);

    std::unique_ptr<EmbeddingProvider> provider;
    if (args.provider == "mock") {
        provider = std::make_unique<MockEmbeddingProvider>(args.d_text);
    } else if (args.provider == "http") {
        if (args.endpoint.empty()) {
            throw ValidationError("embed: --provider http requires --endpoint host:port");
        }
        const auto colon = args.endpoint.rfind(':');
        if (colon == std::string::npos) {
            throw ValidationError("embed: endpoint must look like host:port");
        }
        provider = std::make_unique<HttpEmbeddingProvider>(
            args.endpoint.substr(0, colon), std::stoi(args.endpoint.substr(colon + 1)),
            args.model, args.d_text);
    } else {
        throw ValidationError("embed: unknown provider '" + args.provider + "'");
    }

    const TextFeatureMode mode = parse_text_feature_mode(args.mode);
    const PromptTemplate tpl(args.template_text);
    const MockEmbeddingProvider image_provider(args.d_image);
    const std::uint64_t variant_seed = derive_seed(args.seed, "variants");

    for (auto& rec : records) {
        if (!rec.raw_text) {
            throw ValidationError("embed: record '" + rec.id + "' has no raw_text");
        }
        rec.text_embedding = text_features(mode, tpl, *rec.raw_text, *provider, variant_seed);
        if (rec.image_embedding.empty()) {
            rec.image_embedding = image_provider.embed(rec.id);
        }
    }
    save_records(records, args.out);

    if (args.json_out) {
        json j{{"records", records.size()}, {"mode", args.mode}, {"out", args.out}};
        std::cout << j.dump() << "\n";
    } else {
        std::printf("embedded %zu records (mode %s) to %s\n", records.size(), args.mode.c_str(),
                    args.out.c_str());
    }
    return kExitOk;
}

// The mode flag exists only on `train`; `ablate` always runs all six
// configurations.
void add_config_flags(CLI::App* cmd, TrainArgs& args, bool include_mode) {
    cmd->add_option("--config", args.config_path, "JSON config file (flags override it)");
    cmd->add_option("--lr", args.cfg.learning_rate, "learning rate");
    cmd->add_option("--batch", args.cfg.batch_size, "batch size");
    cmd->add_option("--epochs", args.cfg.epochs, "training epochs");
    cmd->add_option("--dropout", args.cfg.dropout, "dropout rate");
    cmd->add_option("--seed", args.cfg.seed, "run seed");
    if (include_mode) {
        cmd->add_option("--mode", args.cfg.ablation_mode, "model configuration")
            ->transform(CLI::CheckedTransformer(
                [] {
                    std::map<std::string, AblationMode> m;
                    for (AblationMode mode : kAblationModes) m[to_string(mode)] = mode;
                    return m;
                }(),
                CLI::ignore_case));
    }
    cmd->add_option("--val-frac", args.cfg.split.val, "validation fraction");
    cmd->add_option("--test-frac", args.cfg.split.test, "test fraction");
}

// Precedence: built-in defaults, then the config file, then explicit flags.
void finalize_config(CLI::App* cmd, TrainArgs& args) {
    if (!args.config_path.empty()) {
        TrainConfig merged = config_from_file(args.config_path);
        if (cmd->count("--lr")) merged.learning_rate = args.cfg.learning_rate;
        if (cmd->count("--batch")) merged.batch_size = args.cfg.batch_size;
        if (cmd->count("--epochs")) merged.epochs = args.cfg.epochs;
        if (cmd->count("--dropout")) merged.dropout = args.cfg.dropout;
        if (cmd->count("--seed")) merged.seed = args.cfg.seed;
        if (cmd->get_option_no_throw("--mode") && cmd->count("--mode")) {
            merged.ablation_mode = args.cfg.ablation_mode;
        }
        if (cmd->count("--val-frac")) merged.split.val = args.cfg.split.val;
        if (cmd->count("--test-frac")) merged.split.test = args.cfg.split.test;
        args.cfg = merged;
    }
    if (cmd->count("--val-frac") || cmd->count("--test-frac")) {
        args.cfg.split.train = 1.0 - args.cfg.split.val - args.cfg.split.test;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"training and evaluation engine for capsule-attention multimodal fusion"};
    app.require_subcommand(1);

    SynthArgs synth_args;
    auto* synth = app.add_subcommand("synth", "generate a synthetic paired-embedding manifest");
    synth->add_option("--n", synth_args.n, "number of records");
    synth->add_option("--d-text", synth_args.d_text, "text embedding dim");
    synth->add_option("--d-image", synth_args.d_image, "image embedding dim");
    synth->add_option("--structure", synth_args.structure,
                      "label structure: unimodal-text | unimodal-image | xor");
    synth->add_option("--noise", synth_args.noise, "cluster noise sigma");
    synth->add_option("--seed", synth_args.seed, "generator seed");
    synth->add_option("--out", synth_args.out, "output manifest path")->required();
    synth->add_flag("--json", synth_args.json_out, "machine-readable stdout");

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "train one configuration on a manifest");
    train_cmd->add_option("--manifest", train_args.manifest, "input manifest")->required();
    train_cmd->add_option("--out", train_args.out, "results file path");
    train_cmd->add_option("--save-params", train_args.save_params, "write a checkpoint here");
    train_cmd->add_flag("--json", train_args.json_out, "machine-readable stdout");
    add_config_flags(train_cmd, train_args, /*include_mode=*/true);

    EvalArgs eval_args;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
    eval_cmd->add_option("--manifest", eval_args.manifest, "input manifest")->required();
    eval_cmd->add_option("--params", eval_args.checkpoint, "checkpoint file")->required();
    eval_cmd->add_flag("--json", eval_args.json_out, "machine-readable stdout");

    AblateArgs ablate_args;
    TrainArgs ablate_cfg_holder;  // reuse the flag wiring
    auto* ablate = app.add_subcommand("ablate", "train and evaluate all six configurations");
    ablate->add_option("--manifest", ablate_args.manifest, "input manifest")->required();
    ablate->add_option("--out", ablate_args.out, "report file path");
    ablate->add_flag("--json", ablate_args.json_out, "machine-readable stdout");
    add_config_flags(ablate, ablate_cfg_holder, /*include_mode=*/false);

    GradcheckArgs grad_args;
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    gradcheck->add_option("--seed", grad_args.seed, "model seed");
    gradcheck->add_option("--tolerance", grad_args.tolerance, "max relative error allowed");
    gradcheck->add_option("--mutate", grad_args.mutate,
                          "diagnostic mutation (sign-flip) that must be detected");
    gradcheck->add_flag("--json", grad_args.json_out, "machine-readable stdout");

    EmbedArgs embed_args;
    auto* embed = app.add_subcommand("embed", "fill text embeddings from raw_text");
    embed->add_option("--in", embed_args.in, "input manifest with raw_text")->required();
    embed->add_option("--out", embed_args.out, "output manifest")->required();
    embed->add_option("--provider", embed_args.provider, "mock | http");
    embed->add_option("--endpoint", embed_args.endpoint, "host:port for the http provider");
    embed->add_option("--model", embed_args.model, "model name for the http provider");
    embed->add_option("--mode", embed_args.mode,
                      "text feature mode: simple | prompt | prompt-variants | prompt-finetune");
    embed->add_option("--template", embed_args.template_text, "prompt template with {text}");
    embed->add_option("--d-text", embed_args.d_text, "text embedding dim");
    embed->add_option("--d-image", embed_args.d_image, "image embedding dim for backfill");
    embed->add_option("--seed", embed_args.seed, "variant seed");
    embed->add_flag("--json", embed_args.json_out, "machine-readable stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*synth) return cmd_synth(synth_args);
        if (*train_cmd) {
            finalize_config(train_cmd, train_args);
            return cmd_train(train_args);
        }
        if (*eval_cmd) return cmd_eval(eval_args);
        if (*ablate) {
            finalize_config(ablate, ablate_cfg_holder);
            ablate_args.cfg = ablate_cfg_holder.cfg;
            return cmd_ablate(ablate_args);
        }
        if (*gradcheck) return cmd_gradcheck(grad_args);
        if (*embed) return cmd_embed(embed_args);
    } catch (const NumericalError& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
