#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmfuse/config.hpp"
#include "mmfuse/matrix.hpp"

namespace mmfuse {

enum class Modality { Audio, Text };

// One paired document: L x d_a audio segments aligned with L x d_t text
// segments and an integer class label.
struct Document {
    std::string id;
    std::string task;
    int label = 0;
    Matrix audio;
    Matrix text;
};

struct CorpusManifest {
    std::string task;
    int classes = 0;
    std::size_t dim_audio = 0;
    std::size_t dim_text = 0;
    std::size_t documents = 0;
    std::vector<std::size_t> histogram; // per-class counts, sums to documents
    bool has_seed = false;
    std::uint64_t seed = 0;

    std::string summary() const;
};

struct Corpus {
    CorpusManifest manifest;
    std::vector<Document> docs;
};

// Synthetic corpus with planted cross-modal structure: each document draws a
// class-conditional shared latent u, and every segment of both modalities is a
// noisy linear image of that same u. `noise` sets both the within-class latent
// spread and the segment noise; `separation` is the absolute class-mean gap,
// so separation/noise is the signal-to-noise ratio.
struct SyntheticSpec {
    std::size_t documents = 200;
    int classes = 2;
    std::vector<double> ratios; // empty = uniform; otherwise sums to 1
    std::size_t segments = 8;
    std::size_t dim_audio = 32;
    std::size_t dim_text = 16;
    std::size_t latent_dim = 4; // shared-signal dimension k
    double noise = 1.0;         // sigma
    double separation = 4.0;    // class-mean distance, in units of sigma
    double gain_audio = 1.0;
    double gain_text = 1.0;
    std::uint64_t seed = 1;
    std::string task = "synthetic";

    void validate() const;
};

SyntheticSpec synthetic_spec_from(const Config& cfg);
std::string resolved_spec_text(const SyntheticSpec& spec);

Corpus generate_synthetic(const SyntheticSpec& spec);

// Format picked by extension: ".bin" is a little-endian float64 binary
// records file, anything else is line-delimited JSON with a manifest header
// record on line 1. Both round-trip doubles bit-exactly.
void save_corpus(const Corpus& corpus, const std::string& path);
Corpus load_corpus(const std::string& path);

// Learnability oracle: one-vs-rest logistic regression on mean-pooled
// segment embeddings of one modality, fit on even-index documents and scored
// (macro AUC) on odd-index documents.
double logistic_probe_auc(const Corpus& corpus, Modality modality);

} // namespace mmfuse
