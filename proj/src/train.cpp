#include "mmfuse/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "mmfuse/losses.hpp"
#include "mmfuse/moe.hpp"
#include "mmfuse/rng.hpp"

namespace mmfuse {

using nlohmann::json;

LossValues LossTerms::values() const {
    LossValues v;
    v.total = total.value()(0, 0);
    v.sup = sup.value()(0, 0);
    if (con.valid()) v.con = con.value()(0, 0);
    if (cka.valid()) v.cka = cka.value()(0, 0);
    if (mi.valid()) v.mi = mi.value()(0, 0);
    return v;
}

LossTerms total_loss(const BatchOutputs& outputs, const std::vector<int>& labels,
                     const LossConfig& cfg, const std::vector<double>& weights) {
    cfg.validate();
    const bool joint = rung_uses_joint(cfg.rung);
    if (joint && !outputs.z_joint.valid()) {
        throw ContractError("total_loss: rung requires the joint path but it was not computed");
    }

    LossTerms terms;
    terms.sup = moe::cross_entropy(outputs.probs, labels, weights);
    terms.total = terms.sup;

    if (cfg.lambda_con > 0.0) {
        terms.con = joint ? losses::contrastive_loss(outputs.z_audio, outputs.z_text,
                                                     outputs.z_joint, cfg.tau,
                                                     cfg.include_positives)
                          : losses::standard_contrastive_loss(outputs.z_audio, outputs.z_text,
                                                              cfg.tau);
        terms.total = add(terms.total, mul_scalar(terms.con, cfg.lambda_con));
    }
    if (cfg.lambda_cka > 0.0) {
        terms.cka = losses::cka_loss(outputs.z_audio, outputs.z_text, outputs.z_joint);
        terms.total = add(terms.total, mul_scalar(terms.cka, cfg.lambda_cka));
    }
    if (cfg.lambda_mi > 0.0) {
        terms.mi = losses::mi_loss(outputs.z_audio, outputs.z_text, outputs.z_joint, cfg.gamma);
        terms.total = add(terms.total, mul_scalar(terms.mi, cfg.lambda_mi));
    }
    return terms;
}

namespace {

struct AdamState {
    std::vector<Matrix> m, v;
    std::size_t step = 0;
};

void adam_step(std::vector<Matrix*>& params, const std::vector<Var>& leaves, AdamState& state,
               const TrainConfig& cfg) {
    state.step += 1;
    const double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Matrix& p = *params[i];
        const Matrix& g = leaves[i].grad();
        Matrix& m = state.m[i];
        Matrix& v = state.v[i];
        for (std::size_t e = 0; e < p.size(); ++e) {
            const double ge = g.data()[e];
            m.data()[e] = cfg.beta1 * m.data()[e] + (1.0 - cfg.beta1) * ge;
            v.data()[e] = cfg.beta2 * v.data()[e] + (1.0 - cfg.beta2) * ge * ge;
            const double mhat = m.data()[e] / bias1;
            const double vhat = v.data()[e] / bias2;
            p.data()[e] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
    }
}

std::vector<double> class_weights_for(const Corpus& corpus,
                                      const std::vector<std::size_t>& subset, int classes,
                                      bool enabled) {
    std::vector<double> per_class(classes, 1.0);
    if (!enabled) return per_class;
    std::vector<std::size_t> counts(classes, 0);
    for (std::size_t i : subset) counts[corpus.docs[i].label] += 1;
    const double n = static_cast<double>(subset.size());
    for (int c = 0; c < classes; ++c) {
        per_class[c] = counts[c] == 0
                           ? 1.0
                           : n / (static_cast<double>(classes) * static_cast<double>(counts[c]));
    }
    return per_class;
}

TrainConfig config_for_corpus(const Corpus& corpus, const TrainConfig& cfg) {
    TrainConfig local = cfg;
    local.dims.dim_audio = corpus.manifest.dim_audio;
    local.dims.dim_text = corpus.manifest.dim_text;
    local.dims.classes = corpus.manifest.classes;
    local.validate();
    return local;
}

} // namespace

TrainOutcome train(const Corpus& corpus, const TrainConfig& cfg,
                   const std::vector<std::size_t>& subset) {
    const TrainConfig local = config_for_corpus(corpus, cfg);

    std::vector<std::size_t> order;
    if (subset.empty()) {
        order.resize(corpus.docs.size());
        std::iota(order.begin(), order.end(), 0);
    } else {
        order = subset;
    }
    if (local.batch_size > order.size()) {
        throw ContractError("train: batch_size " + std::to_string(local.batch_size) +
                            " exceeds training set size " + std::to_string(order.size()));
    }

    TrainOutcome outcome;
    outcome.params = init_model(local.dims, local.loss.rung, local.seed);
    outcome.report.config_echo = resolved_config_text(local);

    std::vector<Matrix*> flat_params;
    visit_model(outcome.params, [&](Matrix& m) {
        if (!m.empty()) flat_params.push_back(&m);
    });
    AdamState adam;
    for (Matrix* p : flat_params) {
        adam.m.emplace_back(p->rows(), p->cols());
        adam.v.emplace_back(p->rows(), p->cols());
    }

    const std::vector<double> per_class =
        class_weights_for(corpus, order, local.dims.classes, local.loss.class_weighting);

    Rng shuffle_rng(local.seed ^ 0x747261696eULL);
    for (std::size_t epoch = 0; epoch < local.epochs; ++epoch) {
        shuffle_rng.shuffle(order);

        // Consecutive chunks of batch_size; a trailing single document joins
        // the previous chunk so every batch satisfies |B| >= 2.
        std::vector<std::pair<std::size_t, std::size_t>> chunks;
        std::size_t begin = 0;
        while (begin < order.size()) {
            std::size_t end = std::min(begin + local.batch_size, order.size());
            if (order.size() - end == 1) end = order.size();
            chunks.emplace_back(begin, end);
            begin = end;
        }

        LossValues epoch_acc;
        for (auto [lo, hi] : chunks) {
            Tape tape;
            std::vector<Var> leaves;
            leaves.reserve(flat_params.size());
            ModelVars vars = lift(tape, outcome.params, &leaves);

            std::vector<const Document*> batch;
            std::vector<int> labels;
            std::vector<double> weights;
            batch.reserve(hi - lo);
            for (std::size_t i = lo; i < hi; ++i) {
                const Document& doc = corpus.docs[order[i]];
                batch.push_back(&doc);
                labels.push_back(doc.label);
                weights.push_back(per_class[doc.label]);
            }

            LossTerms terms;
            try {
                BatchOutputs outputs = forward_batch(tape, vars, batch, local.loss.rung);
                terms = total_loss(outputs, labels, local.loss, weights);
            } catch (const NumericError& e) {
                throw NumericError("train: diverged at epoch " + std::to_string(epoch) +
                                   ", batch [" + std::to_string(lo) + ", " + std::to_string(hi) +
                                   "): " + e.what());
            }
            const LossValues values = terms.values();
            if (!std::isfinite(values.total)) {
                throw NumericError("train: loss diverged at epoch " + std::to_string(epoch) +
                                   ", batch [" + std::to_string(lo) + ", " + std::to_string(hi) +
                                   ")");
            }
            tape.backward(terms.total);
            adam_step(flat_params, leaves, adam, local);

            const double scale = static_cast<double>(hi - lo);
            epoch_acc.sup += values.sup * scale;
            epoch_acc.con += values.con * scale;
            epoch_acc.cka += values.cka * scale;
            epoch_acc.mi += values.mi * scale;
            epoch_acc.total += values.total * scale;
        }
        const double inv_n = 1.0 / static_cast<double>(order.size());
        outcome.report.trace_sup.push_back(epoch_acc.sup * inv_n);
        outcome.report.trace_con.push_back(epoch_acc.con * inv_n);
        outcome.report.trace_cka.push_back(epoch_acc.cka * inv_n);
        outcome.report.trace_mi.push_back(epoch_acc.mi * inv_n);
        outcome.report.trace_total.push_back(epoch_acc.total * inv_n);
    }
    return outcome;
}

Matrix predict_probs(ModelParams& params, Rung rung, const Corpus& corpus,
                     const std::vector<std::size_t>& subset) {
    std::vector<std::size_t> idx;
    if (subset.empty()) {
        idx.resize(corpus.docs.size());
        std::iota(idx.begin(), idx.end(), 0);
    } else {
        idx = subset;
    }
    Tape tape;
    ModelVars vars = lift(tape, params);
    std::vector<const Document*> docs;
    docs.reserve(idx.size());
    for (std::size_t i : idx) docs.push_back(&corpus.docs[i]);
    BatchOutputs outputs = forward_batch(tape, vars, docs, rung);
    return outputs.probs.value();
}

std::vector<std::vector<std::size_t>> stratified_folds(const std::vector<int>& labels,
                                                       std::size_t k, std::uint64_t seed,
                                                       std::vector<std::string>* warnings) {
    if (k < 2) throw ContractError("stratified_folds: need k >= 2");
    if (k > labels.size()) {
        throw ContractError("stratified_folds: k = " + std::to_string(k) + " exceeds corpus size " +
                            std::to_string(labels.size()));
    }
    const int classes = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
    std::vector<std::vector<std::size_t>> folds(k);
    Rng rng(seed ^ 0x666f6c6473ULL);
    std::size_t rotation = 0;
    for (int c = 0; c < classes; ++c) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] == c) members.push_back(i);
        }
        if (members.empty()) continue;
        if (members.size() < k && warnings) {
            warnings->push_back("class " + std::to_string(c) + " has " +
                                std::to_string(members.size()) + " documents for " +
                                std::to_string(k) +
                                " folds; it cannot be stratified across every fold");
        }
        rng.shuffle(members);
        for (std::size_t i = 0; i < members.size(); ++i) {
            folds[(rotation + i) % k].push_back(members[i]);
        }
        rotation = (rotation + members.size()) % k;
    }
    for (auto& fold : folds) std::sort(fold.begin(), fold.end());
    return folds;
}

CvSummary kfold_cv(const Corpus& corpus, const TrainConfig& cfg) {
    const TrainConfig local = config_for_corpus(corpus, cfg);
    std::vector<int> labels;
    labels.reserve(corpus.docs.size());
    for (const Document& d : corpus.docs) labels.push_back(d.label);

    CvSummary summary;
    const auto folds = stratified_folds(labels, local.folds, local.seed, &summary.warnings);

    std::vector<double> defined_aucs;
    std::vector<int> pooled_labels;
    Matrix pooled_probs(corpus.docs.size(), static_cast<std::size_t>(corpus.manifest.classes));
    std::size_t pooled_row = 0;

    Rng seed_stream(local.seed);
    for (std::size_t f = 0; f < folds.size(); ++f) {
        std::vector<std::size_t> train_idx;
        std::vector<char> held(corpus.docs.size(), 0);
        for (std::size_t i : folds[f]) held[i] = 1;
        for (std::size_t i = 0; i < corpus.docs.size(); ++i) {
            if (!held[i]) train_idx.push_back(i);
        }

        TrainConfig fold_cfg = local;
        fold_cfg.seed = seed_stream.fork(f).next_u64();
        TrainOutcome outcome = train(corpus, fold_cfg, train_idx);
        outcome.report.fold = f;
        outcome.report.val_documents = folds[f].size();

        Matrix probs = predict_probs(outcome.params, local.loss.rung, corpus, folds[f]);
        std::vector<int> val_labels;
        for (std::size_t i : folds[f]) val_labels.push_back(corpus.docs[i].label);
        for (std::size_t r = 0; r < probs.rows(); ++r, ++pooled_row) {
            for (std::size_t c = 0; c < probs.cols(); ++c) pooled_probs(pooled_row, c) = probs(r, c);
            pooled_labels.push_back(val_labels[r]);
        }
        try {
            AucReport auc = auc_macro_ovr(probs, val_labels);
            outcome.report.auc_defined = true;
            outcome.report.val_auc = auc.macro;
            outcome.report.per_class_auc = auc.per_class;
            defined_aucs.push_back(auc.macro);
        } catch (const ContractError&) {
            outcome.report.auc_defined = false;
        }
        summary.folds.push_back(std::move(outcome.report));
    }

    AucReport pooled = auc_macro_ovr(pooled_probs, pooled_labels);
    summary.pooled_auc = pooled.macro;
    if (!defined_aucs.empty()) {
        summary.fold_auc_defined = true;
        const double n = static_cast<double>(defined_aucs.size());
        summary.mean_auc =
            std::accumulate(defined_aucs.begin(), defined_aucs.end(), 0.0) / n;
        double ss = 0.0;
        for (double a : defined_aucs) ss += (a - summary.mean_auc) * (a - summary.mean_auc);
        summary.std_auc = defined_aucs.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    } else {
        // Leave-one-out style degenerate folds: report the pooled AUC instead.
        summary.mean_auc = summary.pooled_auc;
        summary.std_auc = 0.0;
    }
    return summary;
}

namespace {

json report_to_json(const FoldReport& r) {
    json j{{"record", "fold"},
           {"fold", r.fold},
           {"val_documents", r.val_documents},
           {"auc_defined", r.auc_defined},
           {"trace_sup", r.trace_sup},
           {"trace_con", r.trace_con},
           {"trace_cka", r.trace_cka},
           {"trace_mi", r.trace_mi},
           {"trace_total", r.trace_total},
           {"config", r.config_echo}};
    if (r.auc_defined) {
        j["val_auc"] = r.val_auc;
        json per = json::array();
        for (double a : r.per_class_auc) {
            if (std::isnan(a)) {
                per.push_back(nullptr);
            } else {
                per.push_back(a);
            }
        }
        j["per_class_auc"] = std::move(per);
    }
    return j;
}

} // namespace

std::string reports_to_jsonl(const CvSummary& summary) {
    std::ostringstream out;
    for (const FoldReport& r : summary.folds) out << report_to_json(r).dump() << "\n";
    json agg{{"record", "aggregate"},
             {"folds", summary.folds.size()},
             {"fold_auc_defined", summary.fold_auc_defined},
             {"mean_auc", summary.mean_auc},
             {"std_auc", summary.std_auc},
             {"pooled_auc", summary.pooled_auc},
             {"warnings", summary.warnings}};
    out << agg.dump() << "\n";
    return out.str();
}

namespace {

LossConfig masked_loss(const LossConfig& base, Rung rung, bool with_con, bool with_cka,
                       bool with_mi) {
    LossConfig lc = base;
    lc.rung = rung;
    const bool rung_con = rung == Rung::ContrastiveMoe || rung == Rung::DualContrastiveMoe;
    const bool rung_aux = rung == Rung::DualContrastiveMoe;
    lc.lambda_con = (rung_con && with_con) ? base.lambda_con : 0.0;
    lc.lambda_cka = (rung_aux && with_cka) ? base.lambda_cka : 0.0;
    lc.lambda_mi = (rung_aux && with_mi) ? base.lambda_mi : 0.0;
    return lc;
}

std::string fmt_auc(double v) {
    std::ostringstream out;
    out.precision(4);
    out << std::fixed << v;
    return out.str();
}

} // namespace

AblationResult run_ablation(const Corpus& corpus, const TrainConfig& base) {
    AblationResult result;

    const Rung rungs[] = {Rung::Transfer, Rung::TransferMoe, Rung::ContrastiveMoe,
                          Rung::DualContrastiveMoe};
    for (Rung rung : rungs) {
        TrainConfig cfg = base;
        cfg.loss = masked_loss(base.loss, rung, true, true, true);
        CvSummary cv = kfold_cv(corpus, cfg);
        result.rungs.push_back({to_string(rung), cv.mean_auc, cv.std_auc});
    }

    struct Combo {
        const char* name;
        bool con, cka, mi;
    };
    const Combo combos[] = {
        {"con", true, false, false},        {"cka", false, true, false},
        {"mi", false, false, true},         {"con+cka", true, true, false},
        {"con+mi", true, false, true},      {"cka+mi", false, true, true},
        {"con+cka+mi", true, true, true},
    };
    for (const Combo& combo : combos) {
        TrainConfig cfg = base;
        cfg.loss = masked_loss(base.loss, Rung::DualContrastiveMoe, combo.con, combo.cka,
                               combo.mi);
        CvSummary cv = kfold_cv(corpus, cfg);
        result.combos.push_back({combo.name, cv.mean_auc, cv.std_auc});
    }

    const char* losses[] = {"contrastive", "cka", "mi"};
    for (int l = 0; l < 3; ++l) {
        AblationSummaryRow row;
        row.loss = losses[l];
        double best_with = -1.0, best_without = -1.0;
        for (std::size_t i = 0; i < result.combos.size(); ++i) {
            const bool included = (l == 0 && combos[i].con) || (l == 1 && combos[i].cka) ||
                                  (l == 2 && combos[i].mi);
            double& slot = included ? best_with : best_without;
            slot = std::max(slot, result.combos[i].mean_auc);
        }
        row.best_with = best_with;
        row.best_without = best_without;
        result.summary.push_back(row);
    }
    return result;
}

std::string AblationResult::rungs_csv() const {
    std::ostringstream out;
    out << "configuration,auc_mean,auc_std\n";
    for (const auto& row : rungs) {
        out << row.name << "," << fmt_auc(row.mean_auc) << "," << fmt_auc(row.std_auc) << "\n";
    }
    return out.str();
}

std::string AblationResult::combos_csv() const {
    std::ostringstream out;
    out << "losses,auc_mean,auc_std\n";
    for (const auto& row : combos) {
        out << row.name << "," << fmt_auc(row.mean_auc) << "," << fmt_auc(row.std_auc) << "\n";
    }
    return out.str();
}

std::string AblationResult::summary_csv() const {
    std::ostringstream out;
    out << "auxiliary_loss,best_without,best_with\n";
    for (const auto& row : summary) {
        out << row.loss << "," << fmt_auc(row.best_without) << "," << fmt_auc(row.best_with)
            << "\n";
    }
    return out.str();
}

std::string AblationResult::to_text() const {
    std::ostringstream out;
    out << "Architecture configurations (macro AUC, mean +/- std over folds)\n";
    for (const auto& row : rungs) {
        out << "  " << row.name;
        for (std::size_t pad = row.name.size(); pad < 24; ++pad) out << ' ';
        out << fmt_auc(row.mean_auc) << " +/- " << fmt_auc(row.std_auc) << "\n";
    }
    out << "\nAuxiliary-loss combinations on the full architecture\n";
    for (const auto& row : combos) {
        out << "  " << row.name;
        for (std::size_t pad = row.name.size(); pad < 24; ++pad) out << ' ';
        out << fmt_auc(row.mean_auc) << " +/- " << fmt_auc(row.std_auc) << "\n";
    }
    out << "\nBest AUC with vs without each auxiliary loss\n";
    for (const auto& row : summary) {
        out << "  " << row.loss;
        for (std::size_t pad = row.loss.size(); pad < 24; ++pad) out << ' ';
        out << "without " << fmt_auc(row.best_without) << "  with " << fmt_auc(row.best_with)
            << "\n";
    }
    return out.str();
}

} // namespace mmfuse
