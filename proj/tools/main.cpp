#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mmfuse/corpus.hpp"
#include "mmfuse/train.hpp"
#include "mmfuse/verification.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string corpus_path;
    std::string out_dir;
    std::int64_t seed = -1;
    std::int64_t folds = -1;
    std::string rung;
    bool verbose = false;
};

mmfuse::Config load_config(const CommonArgs& args) {
    mmfuse::Config cfg;
    if (!args.config_path.empty()) cfg = mmfuse::Config::from_file(args.config_path);
    if (args.seed >= 0) {
        cfg.set("train.seed", std::to_string(args.seed));
        cfg.set("synth.seed", std::to_string(args.seed));
    }
    if (args.folds >= 0) cfg.set("train.folds", std::to_string(args.folds));
    if (!args.rung.empty()) cfg.set("train.rung", args.rung);
    cfg.validate_keys();
    return cfg;
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw mmfuse::IoError("cannot open for writing: " + path.string());
    out << content;
    if (!out) throw mmfuse::IoError("write failed: " + path.string());
}

fs::path ensure_out_dir(const std::string& dir) {
    if (dir.empty()) throw mmfuse::ConfigError("--out is required for this command");
    fs::path p(dir);
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw mmfuse::IoError("cannot create output directory: " + dir);
    return p;
}

mmfuse::Corpus load_corpus_checked(const std::string& path) {
    if (path.empty()) throw mmfuse::ConfigError("--corpus is required for this command");
    if (!fs::exists(path)) throw mmfuse::ConfigError("corpus file does not exist: " + path);
    return mmfuse::load_corpus(path);
}

int cmd_gen_data(const CommonArgs& args) {
    const mmfuse::Config cfg = load_config(args);
    const mmfuse::SyntheticSpec spec = mmfuse::synthetic_spec_from(cfg);
    const fs::path out = ensure_out_dir(args.out_dir);

    mmfuse::Corpus corpus = mmfuse::generate_synthetic(spec);
    const fs::path corpus_path = out / "corpus.jsonl";
    mmfuse::save_corpus(corpus, corpus_path.string());
    write_file(out / "resolved_config.txt", mmfuse::resolved_spec_text(spec));

    std::cout << corpus.manifest.summary() << "\n";
    std::cout << "wrote " << corpus_path.string() << "\n";
    const double audio_auc = mmfuse::logistic_probe_auc(corpus, mmfuse::Modality::Audio);
    const double text_auc = mmfuse::logistic_probe_auc(corpus, mmfuse::Modality::Text);
    std::printf("linear probe AUC  audio=%.4f  text=%.4f\n", audio_auc, text_auc);
    return 0;
}

int cmd_train(const CommonArgs& args) {
    const mmfuse::Config cfg = load_config(args);
    mmfuse::TrainConfig tc = mmfuse::train_config_from(cfg);
    const fs::path out = ensure_out_dir(args.out_dir);
    mmfuse::Corpus corpus = load_corpus_checked(args.corpus_path);

    mmfuse::CvSummary summary = mmfuse::kfold_cv(corpus, tc);
    write_file(out / "fold_reports.jsonl", mmfuse::reports_to_jsonl(summary));
    if (!summary.folds.empty()) {
        write_file(out / "resolved_config.txt", summary.folds.front().config_echo);
    }
    for (const std::string& warning : summary.warnings) {
        std::cerr << "warning: " << warning << "\n";
    }
    if (summary.fold_auc_defined) {
        std::printf("cv macro AUC over %zu folds: %.4f +/- %.4f (pooled %.4f)\n",
                    summary.folds.size(), summary.mean_auc, summary.std_auc,
                    summary.pooled_auc);
    } else {
        std::printf("cv macro AUC (pooled over %zu degenerate folds): %.4f\n",
                    summary.folds.size(), summary.pooled_auc);
    }
    if (args.verbose) {
        for (const auto& fold : summary.folds) {
            if (fold.auc_defined) {
                std::printf("  fold %zu: AUC %.4f (%zu documents)\n", fold.fold, fold.val_auc,
                            fold.val_documents);
            } else {
                std::printf("  fold %zu: AUC undefined (%zu documents)\n", fold.fold,
                            fold.val_documents);
            }
        }
    }

    // The deployable parameters come from a final pass over the full corpus.
    mmfuse::TrainOutcome final_outcome = mmfuse::train(corpus, tc);
    mmfuse::TrainConfig resolved = tc;
    resolved.dims.dim_audio = corpus.manifest.dim_audio;
    resolved.dims.dim_text = corpus.manifest.dim_text;
    resolved.dims.classes = corpus.manifest.classes;
    mmfuse::save_model(final_outcome.params, resolved.dims, resolved.loss.rung,
                       (out / "model.json").string());
    std::cout << "wrote " << (out / "model.json").string() << "\n";
    return 0;
}

int cmd_eval(const CommonArgs& args) {
    mmfuse::Corpus corpus = load_corpus_checked(args.corpus_path);
    if (args.out_dir.empty()) {
        throw mmfuse::ConfigError("--out must point at a directory holding model.json");
    }
    const fs::path model_path = fs::path(args.out_dir) / "model.json";
    if (!fs::exists(model_path)) {
        throw mmfuse::ConfigError("model file does not exist: " + model_path.string());
    }
    mmfuse::LoadedModel model = mmfuse::load_model(model_path.string());
    if (model.dims.dim_audio != corpus.manifest.dim_audio ||
        model.dims.dim_text != corpus.manifest.dim_text ||
        model.dims.classes != corpus.manifest.classes) {
        throw mmfuse::ConfigError("model dimensions do not match the corpus manifest");
    }

    mmfuse::Matrix probs = mmfuse::predict_probs(model.params, model.rung, corpus);
    std::vector<int> labels;
    labels.reserve(corpus.docs.size());
    for (const auto& doc : corpus.docs) labels.push_back(doc.label);
    mmfuse::AucReport report = mmfuse::auc_macro_ovr(probs, labels);

    std::printf("macro one-vs-rest AUC: %.4f\n", report.macro);
    for (std::size_t c = 0; c < report.per_class.size(); ++c) {
        if (std::isnan(report.per_class[c])) {
            std::printf("  class %zu: undefined\n", c);
        } else {
            std::printf("  class %zu: %.4f\n", c, report.per_class[c]);
        }
    }
    return 0;
}

int cmd_ablate(const CommonArgs& args) {
    const mmfuse::Config cfg = load_config(args);
    mmfuse::TrainConfig tc = mmfuse::train_config_from(cfg);
    const fs::path out = ensure_out_dir(args.out_dir);
    mmfuse::Corpus corpus = load_corpus_checked(args.corpus_path);

    mmfuse::AblationResult result = mmfuse::run_ablation(corpus, tc);
    write_file(out / "rungs.csv", result.rungs_csv());
    write_file(out / "loss_combos.csv", result.combos_csv());
    write_file(out / "loss_summary.csv", result.summary_csv());
    write_file(out / "ablation.txt", result.to_text());
    write_file(out / "resolved_config.txt", mmfuse::resolved_config_text(tc));
    std::cout << result.to_text();
    return 0;
}

int cmd_gradcheck(const CommonArgs& args) {
    const mmfuse::Config cfg = load_config(args);
    const std::uint64_t seed = cfg.get_uint("train.seed", 1);
    const auto entries = mmfuse::run_gradcheck_suite(seed);
    bool all_passed = true;
    std::printf("%-24s %12s %10s   %s\n", "check", "max_rel_err", "threshold", "status");
    for (const auto& entry : entries) {
        const bool ok = entry.passed();
        all_passed = all_passed && ok;
        std::printf("%-24s %12.3e %10.1e   %s\n", entry.name.c_str(), entry.max_rel_err,
                    entry.threshold, ok ? "ok" : "FAIL");
    }
    return all_passed ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cross-modal fusion trainer over precomputed segment embeddings"};
    app.require_subcommand(1);

    CommonArgs args;
    auto add_common = [&](CLI::App* sub, bool with_corpus) {
        sub->add_option("--config", args.config_path, "key=value configuration file");
        if (with_corpus) sub->add_option("--corpus", args.corpus_path, "corpus file path");
        sub->add_option("--out", args.out_dir, "output directory");
        sub->add_option("--seed", args.seed, "seed override");
        sub->add_option("--folds", args.folds, "fold-count override");
        sub->add_option("--rung", args.rung,
                        "transfer|transfer_moe|contrastive_moe|dual_contrastive_moe");
        sub->add_flag("--verbose", args.verbose, "per-fold detail");
    };

    CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
    add_common(gen, false);
    CLI::App* train = app.add_subcommand("train", "k-fold cross-validated training");
    add_common(train, true);
    CLI::App* eval = app.add_subcommand("eval", "evaluate saved parameters on a corpus");
    add_common(eval, true);
    CLI::App* ablate = app.add_subcommand("ablate", "architecture and loss ablation tables");
    add_common(ablate, true);
    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference verification suite");
    add_common(gradcheck, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(args);
        if (train->parsed()) return cmd_train(args);
        if (eval->parsed()) return cmd_eval(args);
        if (ablate->parsed()) return cmd_ablate(args);
        if (gradcheck->parsed()) return cmd_gradcheck(args);
    } catch (const mmfuse::ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const mmfuse::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
