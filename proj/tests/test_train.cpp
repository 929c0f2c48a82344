#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>

#include "mmfuse/rng.hpp"
#include "mmfuse/train.hpp"

using namespace mmfuse;

namespace {

// Small corpus and dimensions sized for fast unit runs.
SyntheticSpec tiny_corpus_spec(std::uint64_t seed = 3) {
    SyntheticSpec spec;
    spec.documents = 24;
    spec.classes = 2;
    spec.segments = 2;
    spec.dim_audio = 6;
    spec.dim_text = 5;
    spec.latent_dim = 2;
    spec.separation = 4.0;
    spec.seed = seed;
    return spec;
}

TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.dims.common_dim = 8;
    cfg.dims.heads = 2;
    cfg.dims.latent_dim = 4;
    cfg.dims.experts = 2;
    cfg.dims.expert_hidden = 6;
    cfg.dims.expert_output = 6;
    cfg.dims.head_hidden = 6;
    cfg.dims.head_bottleneck = 4;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    cfg.folds = 2;
    cfg.seed = 7;
    return cfg;
}

bool params_bit_identical(ModelParams& a, ModelParams& b) {
    bool same = true;
    zip_model(a, b, [&](Matrix& x, Matrix& y) {
        if (!x.same_shape(y) ||
            std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) != 0) {
            same = false;
        }
    });
    return same;
}

LossTerms batch_terms(Tape& tape, const Corpus& corpus, ModelParams& params,
                      const LossConfig& lc, std::size_t batch_size) {
    ModelVars vars = lift(tape, params);
    std::vector<const Document*> docs;
    std::vector<int> labels;
    for (std::size_t i = 0; i < batch_size; ++i) {
        docs.push_back(&corpus.docs[i]);
        labels.push_back(corpus.docs[i].label);
    }
    BatchOutputs outputs = forward_batch(tape, vars, docs, lc.rung);
    return total_loss(outputs, labels, lc);
}

} // namespace

TEST_CASE("total_loss: weighted-sum identity and lambda sensitivity") {
    Corpus corpus = generate_synthetic(tiny_corpus_spec());
    TrainConfig cfg = tiny_config();
    cfg.dims.dim_audio = corpus.manifest.dim_audio;
    cfg.dims.dim_text = corpus.manifest.dim_text;
    cfg.dims.classes = corpus.manifest.classes;
    ModelParams params = init_model(cfg.dims, Rung::DualContrastiveMoe, 1);

    LossConfig lc;
    lc.lambda_con = 1.0;
    lc.lambda_cka = 0.5;
    lc.lambda_mi = 0.5;
    Tape tape;
    LossTerms terms = batch_terms(tape, corpus, params, lc, 6);
    LossValues v = terms.values();
    CHECK(std::fabs(v.total - (v.sup + 1.0 * v.con + 0.5 * v.cka + 0.5 * v.mi)) <= 1e-12);

    // Nudging one weight moves the total by exactly delta * component.
    LossConfig bumped = lc;
    bumped.lambda_cka = 0.7;
    Tape tape2;
    LossValues v2 = batch_terms(tape2, corpus, params, bumped, 6).values();
    CHECK(std::fabs((v2.total - v.total) - 0.2 * v.cka) <= 1e-12);

    // All weights zero: the total is exactly the supervised loss.
    LossConfig sup_only;
    sup_only.rung = Rung::DualContrastiveMoe;
    sup_only.lambda_con = 0.0;
    sup_only.lambda_cka = 0.0;
    sup_only.lambda_mi = 0.0;
    Tape tape3;
    LossValues v3 = batch_terms(tape3, corpus, params, sup_only, 6).values();
    CHECK(v3.total == v3.sup);
}

TEST_CASE("total_loss arithmetic: 2.0 + 1*1.0 + 0.5*0.4 + 0.5*(-0.6) = 2.9") {
    // The weighting rule itself, on hand values.
    const double total = 2.0 + 1.0 * 1.0 + 0.5 * 0.4 + 0.5 * (-0.6);
    CHECK(total == doctest::Approx(2.9).epsilon(1e-15));
}

TEST_CASE("gradient of the total equals the weighted sum of component gradients") {
    Corpus corpus = generate_synthetic(tiny_corpus_spec());
    TrainConfig cfg = tiny_config();
    cfg.dims.dim_audio = corpus.manifest.dim_audio;
    cfg.dims.dim_text = corpus.manifest.dim_text;
    cfg.dims.classes = corpus.manifest.classes;
    ModelParams params = init_model(cfg.dims, Rung::DualContrastiveMoe, 2);

    auto gradient_of = [&](double lcon, double lcka, double lmi) {
        LossConfig lc;
        lc.lambda_con = lcon;
        lc.lambda_cka = lcka;
        lc.lambda_mi = lmi;
        Tape tape;
        std::vector<Var> leaves;
        ModelVars vars = lift(tape, params, &leaves);
        std::vector<const Document*> docs;
        std::vector<int> labels;
        for (std::size_t i = 0; i < 6; ++i) {
            docs.push_back(&corpus.docs[i]);
            labels.push_back(corpus.docs[i].label);
        }
        BatchOutputs outputs = forward_batch(tape, vars, docs, lc.rung);
        LossTerms terms = total_loss(outputs, labels, lc);
        tape.backward(terms.total);
        std::vector<Matrix> grads;
        for (Var v : leaves) grads.push_back(v.grad());
        return grads;
    };

    const auto g_total = gradient_of(1.0, 0.5, 0.5);
    const auto g_sup = gradient_of(0.0, 0.0, 0.0);
    const auto g_con = gradient_of(1.0, 0.0, 0.0);
    const auto g_cka = gradient_of(0.0, 0.5, 0.0);
    const auto g_mi = gradient_of(0.0, 0.0, 0.5);

    double worst = 0.0;
    for (std::size_t k = 0; k < g_total.size(); ++k) {
        for (std::size_t e = 0; e < g_total[k].size(); ++e) {
            // Each single-term run carries one g_sup; the combined run has one.
            const double expected = g_con[k].data()[e] + g_cka[k].data()[e] +
                                    g_mi[k].data()[e] - 2.0 * g_sup[k].data()[e];
            worst = std::max(worst, std::fabs(g_total[k].data()[e] - expected));
        }
    }
    CHECK(worst <= 1e-10);
}

TEST_CASE("rung/lambda inconsistency is a configuration error") {
    LossConfig lc;
    lc.rung = Rung::TransferMoe;
    lc.lambda_con = 0.0;
    lc.lambda_cka = 0.5;
    lc.lambda_mi = 0.0;
    CHECK_THROWS_AS(lc.validate(), ConfigError);

    lc.rung = Rung::ContrastiveMoe;
    lc.lambda_con = 1.0;
    lc.lambda_cka = 0.0;
    lc.lambda_mi = 0.5;
    CHECK_THROWS_AS(lc.validate(), ConfigError);

    lc.lambda_mi = 0.0;
    CHECK_NOTHROW(lc.validate());
}

TEST_CASE("train: zero learning rate leaves parameters at initialization") {
    Corpus corpus = generate_synthetic(tiny_corpus_spec());
    TrainConfig cfg = tiny_config();
    cfg.learning_rate = 0.0;
    cfg.epochs = 1;
    TrainOutcome outcome = train(corpus, cfg);

    TrainConfig resolved = cfg;
    resolved.dims.dim_audio = corpus.manifest.dim_audio;
    resolved.dims.dim_text = corpus.manifest.dim_text;
    resolved.dims.classes = corpus.manifest.classes;
    ModelParams reference = init_model(resolved.dims, cfg.loss.rung, cfg.seed);
    CHECK(params_bit_identical(outcome.params, reference));
}

TEST_CASE("train: same seed, bit-identical parameters; loss decreases") {
    Corpus corpus = generate_synthetic(tiny_corpus_spec());
    TrainConfig cfg = tiny_config();
    cfg.epochs = 6;
    TrainOutcome a = train(corpus, cfg);
    TrainOutcome b = train(corpus, cfg);
    CHECK(params_bit_identical(a.params, b.params));
    CHECK(a.report.trace_total.size() == cfg.epochs);
    CHECK(a.report.trace_total.back() < a.report.trace_total.front());
}

TEST_CASE("train never mutates the corpus segment matrices") {
    Corpus corpus = generate_synthetic(tiny_corpus_spec());
    std::vector<Matrix> audio_before, text_before;
    for (const Document& d : corpus.docs) {
        audio_before.push_back(d.audio);
        text_before.push_back(d.text);
    }
    TrainConfig cfg = tiny_config();
    train(corpus, cfg);
    for (std::size_t i = 0; i < corpus.docs.size(); ++i) {
        CHECK(std::memcmp(corpus.docs[i].audio.data(), audio_before[i].data(),
                          audio_before[i].size() * sizeof(double)) == 0);
        CHECK(std::memcmp(corpus.docs[i].text.data(), text_before[i].data(),
                          text_before[i].size() * sizeof(double)) == 0);
    }
}

TEST_CASE("train aborts with context when the optimizer blows up") {
    Corpus corpus = generate_synthetic(tiny_corpus_spec());
    TrainConfig cfg = tiny_config();
    cfg.learning_rate = 1e160;
    cfg.epochs = 3;
    CHECK_THROWS_AS(train(corpus, cfg), NumericError);
}

TEST_CASE("train rejects a batch size larger than the training set") {
    Corpus corpus = generate_synthetic(tiny_corpus_spec());
    TrainConfig cfg = tiny_config();
    cfg.batch_size = corpus.docs.size() + 1;
    CHECK_THROWS_AS(train(corpus, cfg), ContractError);
}

TEST_CASE("auc_macro_ovr: perfect ranking, chance level, ties") {
    // Perfect ranking.
    Matrix probs(4, 2);
    probs(0, 1) = 0.9; probs(0, 0) = 0.1;
    probs(1, 1) = 0.8; probs(1, 0) = 0.2;
    probs(2, 1) = 0.2; probs(2, 0) = 0.8;
    probs(3, 1) = 0.1; probs(3, 0) = 0.9;
    AucReport perfect = auc_macro_ovr(probs, {1, 1, 0, 0});
    CHECK(perfect.macro == doctest::Approx(1.0).epsilon(1e-12));

    // Scores independent of labels: close to chance on a large sample.
    Rng rng(71);
    const std::size_t n = 4000;
    Matrix random_probs(n, 2);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double p = rng.uniform();
        random_probs(i, 0) = 1.0 - p;
        random_probs(i, 1) = p;
        labels[i] = static_cast<int>(rng.below(2));
    }
    AucReport chance = auc_macro_ovr(random_probs, labels);
    CHECK(chance.macro == doctest::Approx(0.5).epsilon(0.05));

    // Six samples with one tie: midranks against exhaustive pair counting.
    const std::vector<double> scores{0.1, 0.4, 0.4, 0.35, 0.8, 0.05};
    const std::vector<int> tie_labels{0, 1, 0, 1, 1, 0};
    Matrix tie_probs(6, 2);
    for (std::size_t i = 0; i < 6; ++i) {
        tie_probs(i, 1) = scores[i];
        tie_probs(i, 0) = 1.0 - scores[i];
    }
    double pairs = 0.0;
    std::size_t n_pos = 0, n_neg = 0;
    for (std::size_t i = 0; i < 6; ++i) {
        if (tie_labels[i] != 1) continue;
        ++n_pos;
        for (std::size_t j = 0; j < 6; ++j) {
            if (tie_labels[j] == 1) continue;
            if (scores[i] > scores[j]) pairs += 1.0;
            if (scores[i] == scores[j]) pairs += 0.5;
        }
    }
    n_neg = 6 - n_pos;
    const double expected = pairs / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
    AucReport tied = auc_macro_ovr(tie_probs, tie_labels);
    CHECK(tied.per_class[1] == expected);

    CHECK_THROWS_WITH_AS(auc_macro_ovr(tie_probs, {1, 1, 1, 1, 1, 1}),
                         doctest::Contains("AUC undefined"), ContractError);
}

TEST_CASE("auc is invariant under strictly monotone score transforms") {
    Rng rng(72);
    const std::size_t n = 50;
    Matrix probs(n, 2);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        probs(i, 1) = rng.uniform();
        probs(i, 0) = 1.0 - probs(i, 1);
        labels[i] = static_cast<int>(rng.below(2));
    }
    Matrix warped(n, 2);
    for (std::size_t i = 0; i < n; ++i) {
        warped(i, 1) = std::exp(3.0 * probs(i, 1));
        warped(i, 0) = std::exp(3.0 * probs(i, 0));
    }
    CHECK(auc_macro_ovr(probs, labels).macro ==
          doctest::Approx(auc_macro_ovr(warped, labels).macro).epsilon(1e-12));
}

TEST_CASE("auc excludes absent classes from the macro mean") {
    Matrix probs(4, 3);
    for (std::size_t i = 0; i < 4; ++i) {
        probs(i, 0) = 0.2;
        probs(i, 1) = 0.5;
        probs(i, 2) = 0.3;
    }
    probs(0, 1) = 0.9;
    AucReport report = auc_macro_ovr(probs, {1, 0, 1, 0}); // class 2 absent
    CHECK(std::isnan(report.per_class[2]));
    CHECK_FALSE(std::isnan(report.per_class[0]));
    CHECK_FALSE(std::isnan(report.per_class[1]));
}

TEST_CASE("stratified folds partition the corpus with per-class balance") {
    std::vector<int> labels;
    for (int i = 0; i < 100; ++i) labels.push_back(i < 50 ? 0 : (i < 80 ? 1 : 2));

    const auto folds = stratified_folds(labels, 5, 9);
    std::vector<char> seen(labels.size(), 0);
    for (const auto& fold : folds) {
        for (std::size_t i : fold) {
            CHECK(seen[i] == 0);
            seen[i] = 1;
        }
    }
    for (char s : seen) CHECK(s == 1);

    // Per-fold class counts within one of the proportional share.
    for (int c = 0; c < 3; ++c) {
        std::size_t total = 0;
        for (int l : labels) total += l == c ? 1 : 0;
        for (const auto& fold : folds) {
            std::size_t count = 0;
            for (std::size_t i : fold) count += labels[i] == c ? 1 : 0;
            const double share = static_cast<double>(total) / 5.0;
            CHECK(static_cast<double>(count) >= std::floor(share) - 1e-12);
            CHECK(static_cast<double>(count) <= std::ceil(share) + 1e-12);
        }
    }

    // A class smaller than k produces a warning, not an error.
    std::vector<int> sparse_labels{0, 0, 0, 0, 0, 0, 1};
    std::vector<std::string> warnings;
    const auto sparse = stratified_folds(sparse_labels, 3, 9, &warnings);
    CHECK(warnings.size() == 1);
    std::size_t covered = 0;
    for (const auto& fold : sparse) covered += fold.size();
    CHECK(covered == sparse_labels.size());

    CHECK_THROWS_AS(stratified_folds(sparse_labels, 8, 9), ContractError);
}

TEST_CASE("kfold_cv is deterministic and serializes bit-identically") {
    Corpus corpus = generate_synthetic(tiny_corpus_spec(5));
    TrainConfig cfg = tiny_config();
    CvSummary a = kfold_cv(corpus, cfg);
    CvSummary b = kfold_cv(corpus, cfg);
    CHECK(reports_to_jsonl(a) == reports_to_jsonl(b));
    CHECK(a.folds.size() == cfg.folds);
    for (const FoldReport& fold : a.folds) {
        CHECK(fold.trace_total.size() == cfg.epochs);
        CHECK(!fold.config_echo.empty());
    }
}

TEST_CASE("leave-one-out folds fall back to the pooled AUC") {
    SyntheticSpec spec = tiny_corpus_spec(6);
    spec.documents = 8;
    Corpus corpus = generate_synthetic(spec);
    TrainConfig cfg = tiny_config();
    cfg.folds = corpus.docs.size();
    cfg.batch_size = 4;
    cfg.epochs = 1;
    CvSummary summary = kfold_cv(corpus, cfg);
    CHECK_FALSE(summary.fold_auc_defined);
    CHECK(summary.mean_auc == summary.pooled_auc);
    CHECK(std::isfinite(summary.pooled_auc));
}

TEST_CASE("model save/load round trip preserves parameters and predictions") {
    Corpus corpus = generate_synthetic(tiny_corpus_spec(8));
    TrainConfig cfg = tiny_config();
    cfg.epochs = 1;
    TrainOutcome outcome = train(corpus, cfg);

    TrainConfig resolved = cfg;
    resolved.dims.dim_audio = corpus.manifest.dim_audio;
    resolved.dims.dim_text = corpus.manifest.dim_text;
    resolved.dims.classes = corpus.manifest.classes;

    const std::string path = "/tmp/mmfuse_test_model.json";
    save_model(outcome.params, resolved.dims, cfg.loss.rung, path);
    LoadedModel loaded = load_model(path);
    CHECK(loaded.rung == cfg.loss.rung);
    CHECK(params_bit_identical(outcome.params, loaded.params));

    Matrix before = predict_probs(outcome.params, cfg.loss.rung, corpus);
    Matrix after = predict_probs(loaded.params, loaded.rung, corpus);
    CHECK(std::memcmp(before.data(), after.data(), before.size() * sizeof(double)) == 0);
    std::remove(path.c_str());
}

TEST_CASE("run_ablation emits 4 rungs and exactly the 7 loss combinations") {
    SyntheticSpec spec = tiny_corpus_spec(9);
    spec.documents = 16;
    Corpus corpus = generate_synthetic(spec);
    TrainConfig cfg = tiny_config();
    cfg.epochs = 1;
    cfg.batch_size = 4;
    cfg.folds = 2;

    AblationResult result = run_ablation(corpus, cfg);
    REQUIRE(result.rungs.size() == 4);
    CHECK(result.rungs[0].name == "transfer");
    CHECK(result.rungs[1].name == "transfer_moe");
    CHECK(result.rungs[2].name == "contrastive_moe");
    CHECK(result.rungs[3].name == "dual_contrastive_moe");

    REQUIRE(result.combos.size() == 7);
    const char* expected[] = {"con", "cka", "mi", "con+cka", "con+mi", "cka+mi", "con+cka+mi"};
    for (std::size_t i = 0; i < 7; ++i) CHECK(result.combos[i].name == expected[i]);

    REQUIRE(result.summary.size() == 3);
    for (const auto& row : result.summary) {
        CHECK(row.best_with > 0.0);
        CHECK(row.best_without > 0.0);
    }

    CHECK(result.rungs_csv().find("transfer_moe") != std::string::npos);
    CHECK(result.combos_csv().find("con+cka+mi") != std::string::npos);
    CHECK(result.summary_csv().find("contrastive") != std::string::npos);
}
