#include "mmfuse/verify.hpp"

#include "mmfuse/adapter.hpp"
#include "mmfuse/fusion.hpp"
#include "mmfuse/head.hpp"
#include "mmfuse/model.hpp"

namespace mmfuse {

namespace {

// The verification functional is scaled down so the central-difference
// roundoff noise (proportional to |loss|) stays far below the relative-error
// floor even for parameter elements whose true gradient is incidentally near
// zero; routing gradients are products u_i[p] * delta, so a few always are.
constexpr double kVerifyLossScale = 0.002;

// Rectifier kinks make finite differences disagree with the (correct)
// one-sided analytic gradient when a preactivation happens to sit within h of
// zero. A genuine backward bug fails at every probe input, a kink artifact
// only at isolated ones, so failing sections are retried at freshly derived
// inputs before being reported.
constexpr std::uint64_t kProbeAttempts = 3;

Tensor<double> random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0,
                             double hi = 1.0) {
    Tensor<double> t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

template <class MakeForward>
VerifySection run_section(const std::string& name, ParamStore<double>& store,
                          const VerifyOptions& opts, MakeForward&& make_forward) {
    GradCheckReport report;
    for (std::uint64_t attempt = 0; attempt < kProbeAttempts; ++attempt) {
        report = grad_check(make_forward(attempt), store, opts.gradcheck);
        if (report.passes(opts.tolerance)) break;
    }
    return {name, report};
}

VerifySection check_toy_affine(const VerifyOptions& opts) {
    ParamStore<double> store;
    store.add("toy.weight", {3, 2}, InitKind::glorot);
    store.add("toy.bias", {2}, InitKind::zero);
    store.init(derive_seed(opts.seed, "verify-toy"));

    auto target = onehot_label<double>(1);
    auto make_forward = [&store, target, seed = opts.seed](std::uint64_t attempt) {
        Rng rng(derive_seed(seed, "verify-toy-input", attempt));
        auto input = std::make_shared<Tensor<double>>(random_tensor({3}, rng));
        return [&store, target, input](Tape<double>* tape) {
            auto x = make_var(*input, tape != nullptr);
            auto logits = affine(tape, store.var("toy.weight"), store.var("toy.bias"), x);
            return cross_entropy(tape, softmax(tape, logits), target);
        };
    };
    return run_section("toy-affine", store, opts, make_forward);
}

VerifySection check_adapters(const VerifyOptions& opts) {
    const std::size_t d = 6, n_caps = 4, caps_dim = 3;
    ParamStore<double> store;
    store.add("adapter.text.weight", {d, n_caps * caps_dim}, InitKind::glorot);
    store.add("adapter.text.bias", {n_caps * caps_dim}, InitKind::zero);
    store.add("adapter.text.refine", {d, d}, InitKind::identity);
    store.init(derive_seed(opts.seed, "verify-adapter"));

    auto make_forward = [&store, seed = opts.seed](std::uint64_t attempt) {
        Rng rng(derive_seed(seed, "verify-adapter-input", attempt));
        auto input = std::make_shared<Tensor<double>>(random_tensor({6}, rng));
        return [&store, input](Tape<double>* tape) {
            auto x = make_var(*input, tape != nullptr);
            auto refined = matvec(tape, store.var("adapter.text.refine"), x);
            auto caps = adapt_capsules(tape, store.var("adapter.text.weight"),
                                       store.var("adapter.text.bias"), refined, 4, 3);
            return scale(tape, sum_squares(tape, caps), kVerifyLossScale);
        };
    };
    return run_section("adapters", store, opts, make_forward);
}

VerifySection check_fusion(const VerifyOptions& opts) {
    // Distinct extents expose index transpositions.
    const std::size_t n_caps = 4, caps_dim = 4, out_caps = 3, out_dim = 5;
    ParamStore<double> store;
    for (const char* dir : {"t2i", "i2t"}) {
        for (const char* proj : {"wq", "wk", "wv"}) {
            store.add(std::string("attention.") + dir + "." + proj, {caps_dim, caps_dim},
                      InitKind::glorot);
        }
    }
    store.add("routing.transform", {2 * n_caps, out_caps, caps_dim, out_dim}, InitKind::glorot);
    store.init(derive_seed(opts.seed, "verify-fusion"));

    auto make_forward = [&store, seed = opts.seed](std::uint64_t attempt) {
        Rng rng(derive_seed(seed, "verify-fusion-input", attempt));
        auto text = std::make_shared<Tensor<double>>(random_tensor({4, 4}, rng));
        auto image = std::make_shared<Tensor<double>>(random_tensor({4, 4}, rng));
        return [&store, text, image](Tape<double>* tape) {
            AttentionParamRefs<double> attn;
            attn.t2i_query = store.var("attention.t2i.wq");
            attn.t2i_key = store.var("attention.t2i.wk");
            attn.t2i_value = store.var("attention.t2i.wv");
            attn.i2t_query = store.var("attention.i2t.wq");
            attn.i2t_key = store.var("attention.i2t.wk");
            attn.i2t_value = store.var("attention.i2t.wv");
            auto t = make_var(*text, tape != nullptr);
            auto i = make_var(*image, tape != nullptr);
            auto fused = fuse(tape, t, i, attn, store.var("routing.transform"), 3);
            auto loss =
                add(tape, sum_squares(tape, fused.joint), sum_squares(tape, fused.pooled));
            return scale(tape, loss, kVerifyLossScale);
        };
    };
    return run_section("fusion", store, opts, make_forward);
}

VerifySection check_head(const VerifyOptions& opts) {
    const std::size_t out_caps = 3, out_dim = 5, hidden = 7, pooled_dim = 8, fc = 9;
    ParamStore<double> store;
    store.add("head.rnn.wx", {out_dim, hidden}, InitKind::glorot);
    store.add("head.rnn.wh", {hidden, hidden}, InitKind::glorot);
    store.add("head.rnn.bias", {hidden}, InitKind::zero);
    store.add("head.fc.weight", {hidden + pooled_dim, fc}, InitKind::glorot);
    store.add("head.fc.bias", {fc}, InitKind::zero);
    store.add("head.out.weight", {fc, 2}, InitKind::glorot);
    store.add("head.out.bias", {2}, InitKind::zero);
    store.init(derive_seed(opts.seed, "verify-head"));

    auto target = onehot_label<double>(0);
    auto make_forward = [&store, target, out_caps, out_dim, pooled_dim,
                         seed = opts.seed](std::uint64_t attempt) {
        Rng rng(derive_seed(seed, "verify-head-input", attempt));
        auto caps = std::make_shared<Tensor<double>>(random_tensor({out_caps, out_dim}, rng));
        auto pooled = std::make_shared<Tensor<double>>(random_tensor({pooled_dim}, rng));
        return [&store, target, caps, pooled](Tape<double>* tape) {
            HeadParamRefs<double> refs;
            refs.rnn_wx = store.var("head.rnn.wx");
            refs.rnn_wh = store.var("head.rnn.wh");
            refs.rnn_bias = store.var("head.rnn.bias");
            refs.fc_weight = store.var("head.fc.weight");
            refs.fc_bias = store.var("head.fc.bias");
            refs.out_weight = store.var("head.out.weight");
            refs.out_bias = store.var("head.out.bias");
            auto c = make_var(*caps, tape != nullptr);
            auto p = make_var(*pooled, tape != nullptr);
            auto probs = head_predict(tape, c, p, refs, 0.5, RunMode::eval, nullptr);
            return cross_entropy(tape, probs, target);
        };
    };
    return run_section("head", store, opts, make_forward);
}

VerifySection check_full_model(const VerifyOptions& opts, AblationMode mode,
                               const std::string& section_name, bool corrupt) {
    ModelConfig mc;
    mc.mode = mode;
    mc.d_text = 12;
    mc.d_image = 14;
    auto model = std::make_shared<Model<double>>(mc, opts.seed);
    auto target = onehot_label<double>(1);

    // Composite verification functional: the classification loss plus direct
    // quadratic probes on Z and f, so every fusion tensor carries a dense
    // gradient; the same Jacobians are exercised either way.
    auto make_forward = [model, target, mc, corrupt, seed = opts.seed](std::uint64_t attempt) {
        Rng rng(derive_seed(seed, "verify-full-input", attempt));
        auto text = std::make_shared<Tensor<double>>(random_tensor({mc.d_text}, rng));
        auto image = std::make_shared<Tensor<double>>(random_tensor({mc.d_image}, rng));
        return [model, target, text, image, corrupt](Tape<double>* tape) {
            typename Model<double>::FusionVars fusion_vars;
            auto probs = model->forward(tape, *text, *image, RunMode::eval, nullptr, nullptr,
                                        &fusion_vars);
            auto loss = cross_entropy(tape, probs, target);
            loss = add(tape, loss, scale(tape, sum_squares(tape, fusion_vars.joint), 0.5));
            loss = add(tape, loss, scale(tape, sum_squares(tape, fusion_vars.pooled), 0.5));
            loss = scale(tape, loss, kVerifyLossScale);
            if (corrupt) loss = corrupt_grad_sign(tape, loss);
            return loss;
        };
    };
    return run_section(section_name, model->params(), opts, make_forward);
}

}  // namespace

std::vector<VerifySection> run_verification(const VerifyOptions& opts) {
    std::vector<VerifySection> sections;
    sections.push_back(check_toy_affine(opts));
    sections.push_back(check_adapters(opts));
    sections.push_back(check_fusion(opts));
    sections.push_back(check_head(opts));
    sections.push_back(check_full_model(opts, AblationMode::text_prompt_finetune,
                                        "full-text-finetune", false));
    sections.push_back(
        check_full_model(opts, AblationMode::fusion, "full", opts.mutate_sign_flip));
    return sections;
}

bool verification_passes(const std::vector<VerifySection>& sections, double tolerance) {
    for (const auto& s : sections) {
        if (!s.report.passes(tolerance)) return false;
    }
    return true;
}

}  // namespace mmfuse
