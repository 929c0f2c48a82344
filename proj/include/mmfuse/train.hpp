#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmfuse/metrics.hpp"
#include "mmfuse/model.hpp"

namespace mmfuse {

struct LossValues {
    double sup = 0.0, con = 0.0, cka = 0.0, mi = 0.0, total = 0.0;
};

// Weighted objective: sup + lambda_con*con + lambda_cka*cka + lambda_mi*mi,
// with terms gated by the configuration rung. Vars are invalid where a term
// is absent (rung lacks it or its weight is zero).
struct LossTerms {
    Var total, sup, con, cka, mi;
    LossValues values() const;
};

LossTerms total_loss(const BatchOutputs& outputs, const std::vector<int>& labels,
                     const LossConfig& cfg, const std::vector<double>& weights = {});

struct FoldReport {
    std::size_t fold = 0;
    std::vector<double> trace_sup, trace_con, trace_cka, trace_mi, trace_total;
    bool auc_defined = false;
    double val_auc = 0.0;
    std::vector<double> per_class_auc;
    std::size_t val_documents = 0;
    std::string config_echo;
};

struct TrainOutcome {
    ModelParams params;
    FoldReport report;
};

// Mini-batch Adam on the given document subset (the whole corpus when the
// subset is empty). Deterministic for a fixed (seed, config, corpus).
TrainOutcome train(const Corpus& corpus, const TrainConfig& cfg,
                   const std::vector<std::size_t>& subset = {});

Matrix predict_probs(ModelParams& params, Rung rung, const Corpus& corpus,
                     const std::vector<std::size_t>& subset = {});

// Disjoint covering folds; per fold, class counts are within one of the
// proportional share. Classes smaller than k produce a warning.
std::vector<std::vector<std::size_t>> stratified_folds(
    const std::vector<int>& labels, std::size_t k, std::uint64_t seed,
    std::vector<std::string>* warnings = nullptr);

struct CvSummary {
    std::vector<FoldReport> folds;
    bool fold_auc_defined = false; // false: only the pooled AUC is meaningful
    double mean_auc = 0.0;
    double std_auc = 0.0;
    double pooled_auc = 0.0;
    std::vector<std::string> warnings;
};

CvSummary kfold_cv(const Corpus& corpus, const TrainConfig& cfg);

// Fold reports and the aggregate as line-delimited JSON; byte-identical for
// identical (seed, config, corpus).
std::string reports_to_jsonl(const CvSummary& summary);

struct AblationRow {
    std::string name;
    double mean_auc = 0.0;
    double std_auc = 0.0;
};

struct AblationSummaryRow {
    std::string loss;
    double best_with = 0.0;
    double best_without = 0.0;
};

struct AblationResult {
    std::vector<AblationRow> rungs;          // the four architecture configurations
    std::vector<AblationRow> combos;         // the 7 non-empty auxiliary-loss subsets
    std::vector<AblationSummaryRow> summary; // best-with vs best-without per loss

    std::string rungs_csv() const;
    std::string combos_csv() const;
    std::string summary_csv() const;
    std::string to_text() const;
};

AblationResult run_ablation(const Corpus& corpus, const TrainConfig& base);

} // namespace mmfuse
