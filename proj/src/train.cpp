#include "mmfuse/train.hpp"

#include <chrono>
#include <cmath>

#include "mmfuse/adam.hpp"

namespace mmfuse {

void TrainConfig::validate() const {
    if (learning_rate < 0.0) throw ConfigError("TrainConfig: learning_rate must be >= 0");
    if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("TrainConfig: epochs must be >= 1");
    if (loss != "cross-entropy") {
        throw ConfigError("TrainConfig: unsupported loss '" + loss + "'");
    }
    split.validate();
    model_config(2, 2).validate();  // width/dropout sanity, dims come from the data
}

ModelConfig TrainConfig::model_config(std::size_t d_text, std::size_t d_image) const {
    ModelConfig mc;
    mc.mode = ablation_mode;
    mc.d_text = d_text;
    mc.d_image = d_image;
    mc.n_caps = n_caps;
    mc.caps_dim = caps_dim;
    mc.out_caps = out_caps;
    mc.out_dim = out_dim;
    mc.routing_iterations = routing_iterations;
    mc.rnn_units = rnn_units;
    mc.fc_units = fc_units;
    mc.dropout = dropout;
    return mc;
}

namespace {

double batch_loss_and_backward(const Model<float>& model, const Dataset& ds,
                               const std::vector<std::size_t>& batch, const TrainConfig& cfg) {
    Tape<float> tape;
    std::vector<VarPtr<float>> losses;
    losses.reserve(batch.size());
    for (std::size_t idx : batch) {
        const SampleRecord& rec = ds.records[idx];
        // Stream derived from (run seed, sample id) alone: the mask a sample
        // sees is independent of epoch and batch composition, so parallel and
        // serial execution agree and a frozen model has a constant loss.
        Rng dropout_rng(derive_seed(cfg.seed, "dropout", fnv1a64(rec.id)));
        auto probs = model.forward(&tape, Model<float>::to_tensor(rec.text_embedding),
                                   Model<float>::to_tensor(rec.image_embedding), RunMode::train,
                                   &dropout_rng);
        losses.push_back(cross_entropy(&tape, probs, onehot_label<float>(rec.label)));
    }
    auto loss = mean_of(&tape, losses);
    const double value = loss->value[0];
    tape.backward(loss);
    return value;
}

}  // namespace

Metrics evaluate(const Model<float>& model, const Dataset& ds) {
    if (ds.empty()) throw ValidationError("evaluate: dataset is empty");
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (const auto& rec : ds.records) {
        const Prediction p = model.predict_sentiment(rec);
        if (p.label == 1 && rec.label == 1) ++tp;
        else if (p.label == 1 && rec.label == 0) ++fp;
        else if (p.label == 0 && rec.label == 1) ++fn;
        else ++tn;
    }
    return Metrics::from_counts(tp, fp, fn, tn);
}

TrainResult train(const TrainConfig& cfg, const Dataset& train_ds, const Dataset& val_ds) {
    cfg.validate();
    if (train_ds.empty()) throw ValidationError("train: training dataset is empty");
    if (val_ds.empty()) throw ValidationError("train: validation dataset is empty");

    const ModelConfig mc = cfg.model_config(train_ds.d_text, train_ds.d_image);
    TrainResult result;
    result.model = std::make_shared<Model<float>>(mc, cfg.seed);
    result.params_checksum_init = result.model->params().checksum();

    AdamState<float> opt(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon);
    const float lr = static_cast<float>(cfg.learning_rate);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        const auto batches = batch_indices(train_ds.size(), cfg.batch_size,
                                           derive_seed(cfg.seed, "epoch", epoch));
        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t b = 0; b < batches.size(); ++b) {
            const double loss =
                batch_loss_and_backward(*result.model, train_ds, batches[b], cfg);
            if (!std::isfinite(loss)) {
                throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                         ", batch " + std::to_string(b),
                                     epoch, b);
            }
            opt.step(result.model->params(), lr);
            result.model->params().zero_grads();
            loss_sum += loss * double(batches[b].size());
            seen += batches[b].size();
        }

        EpochStats stats;
        stats.train_loss = loss_sum / double(seen);
        stats.val = evaluate(*result.model, val_ds);
        stats.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        result.history.epochs.push_back(stats);
    }

    result.params_checksum_final = result.model->params().checksum();
    return result;
}

namespace {

// Re-embeds the text side of a dataset through the mock provider for one
// text-feature mode. Image embeddings pass through untouched.
Dataset reembed_text(const Dataset& ds, TextFeatureMode mode, const TrainConfig& cfg) {
    MockEmbeddingProvider provider(ds.d_text);
    PromptTemplate tpl(cfg.prompt_template);
    Dataset out = ds;
    for (auto& rec : out.records) {
        rec.text_embedding = text_features(mode, tpl, *rec.raw_text, provider,
                                           derive_seed(cfg.seed, "variants"));
    }
    return out;
}

TextFeatureMode text_mode_of(AblationMode mode) {
    switch (mode) {
        case AblationMode::text_simple: return TextFeatureMode::simple;
        case AblationMode::text_prompt: return TextFeatureMode::prompt;
        case AblationMode::text_prompt_variants: return TextFeatureMode::prompt_variants;
        case AblationMode::text_prompt_finetune: return TextFeatureMode::prompt_finetune;
        default: return TextFeatureMode::prompt;
    }
}

}  // namespace

AblationReport run_ablation(const TrainConfig& base, const Dataset& ds) {
    base.validate();
    const SplitResult parts = split(ds, base.split, base.seed);

    bool all_raw_text = true;
    for (const auto& rec : ds.records) {
        if (!rec.raw_text) {
            all_raw_text = false;
            break;
        }
    }

    AblationReport report;
    report.n_train = parts.train.size();
    report.n_val = parts.val.size();
    report.n_test = parts.test.size();

    for (AblationMode mode : kAblationModes) {
        TrainConfig cfg = base;
        cfg.ablation_mode = mode;

        const Dataset* train_ds = &parts.train;
        const Dataset* val_ds = &parts.val;
        const Dataset* test_ds = &parts.test;
        Dataset train_embedded, val_embedded, test_embedded;
        const bool text_mode = mode != AblationMode::image_only && mode != AblationMode::fusion;
        if (all_raw_text && text_mode) {
            const TextFeatureMode tf = text_mode_of(mode);
            train_embedded = reembed_text(parts.train, tf, cfg);
            val_embedded = reembed_text(parts.val, tf, cfg);
            test_embedded = reembed_text(parts.test, tf, cfg);
            train_ds = &train_embedded;
            val_ds = &val_embedded;
            test_ds = &test_embedded;
        }

        TrainResult run = train(cfg, *train_ds, *val_ds);

        AblationRow row;
        row.mode = mode;
        row.configuration = to_string(mode);
        row.val = evaluate(*run.model, *val_ds);
        row.test = evaluate(*run.model, *test_ds);
        row.history = std::move(run.history);
        report.rows.push_back(std::move(row));
    }
    return report;
}

}  // namespace mmfuse
