#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mmfuse/dataset.hpp"
#include "mmfuse/featurize.hpp"
#include "mmfuse/metrics.hpp"
#include "mmfuse/model.hpp"

namespace mmfuse {

inline constexpr const char* kArtifactVersion = "1.0.0";

// Everything a run needs, echoed verbatim into every results file.
struct TrainConfig {
    double learning_rate = 0.001;
    std::size_t batch_size = 32;
    std::size_t epochs = 100;
    double dropout = 0.5;
    std::size_t fc_units = 100;
    std::size_t rnn_units = 30;
    std::size_t routing_iterations = 3;
    std::size_t n_caps = 8;
    std::size_t caps_dim = 16;
    std::size_t out_caps = 4;
    std::size_t out_dim = 16;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    std::uint64_t seed = 7;
    AblationMode ablation_mode = AblationMode::fusion;
    std::string loss = "cross-entropy";
    SplitSpec split;
    std::string prompt_template = PromptTemplate::default_template().text();

    void validate() const;
    ModelConfig model_config(std::size_t d_text, std::size_t d_image) const;
};

struct EpochStats {
    double train_loss = 0.0;           // mean cross-entropy over the epoch's samples
    Metrics val;                       // eval-mode metrics after the epoch
    double wall_seconds = 0.0;         // measured, never serialized
};

struct History {
    std::vector<EpochStats> epochs;
};

struct TrainResult {
    std::shared_ptr<Model<float>> model;
    History history;
    std::uint64_t params_checksum_init = 0;
    std::uint64_t params_checksum_final = 0;
};

// Table-driven training loop: per epoch a seeded shuffle into batches, train
// mode forward, mean batch cross-entropy, backward, one Adam step, gradient
// reset; then validation metrics in eval mode. Fully deterministic given
// (config, data, seed). Throws NumericalError when the loss leaves the reals.
TrainResult train(const TrainConfig& cfg, const Dataset& train_ds, const Dataset& val_ds);

// Eval-mode metrics over a dataset; positive class is informative (1).
Metrics evaluate(const Model<float>& model, const Dataset& ds);

struct AblationRow {
    AblationMode mode = AblationMode::fusion;
    std::string configuration;
    Metrics val;
    Metrics test;
    History history;
};

struct AblationReport {
    std::vector<AblationRow> rows;
    std::size_t n_train = 0, n_val = 0, n_test = 0;
};

// Trains and evaluates all six configurations on the same splits and seed.
// When every record carries raw_text, the text-only variants re-embed the
// text per mode through the mock provider, so the prompt variants genuinely
// differ; on precomputed-embedding data the three prompt modes share the
// model structure and only prompt-finetune adds the refinement matrix.
AblationReport run_ablation(const TrainConfig& base, const Dataset& ds);

}  // namespace mmfuse
