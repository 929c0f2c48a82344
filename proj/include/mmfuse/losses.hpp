#pragma once

#include <vector>

#include "mmfuse/params.hpp"

namespace mmfuse::losses {

// x W + b with the bias row replicated when x has several rows.
Var affine(Var x, Var w, Var b);

// Two-layer shared projector: linear output, tanh between the layers. The
// same weight set maps audio, text and joint document embeddings.
Var shared_project(Var x, const MlpT<Var>& projector);

// exp(cosine(x, y) / tau). Norms are floored at 1e-12; an exactly-zero vector
// is rejected.
double scaled_sim(const std::vector<double>& x, const std::vector<double>& y, double tau);

// Joint-anchored contrastive objective over a batch of latent rows: positives
// are (audio_i, joint_i) and (text_i, joint_i); the normalizer for row i sums
// same-modality, modality-to-joint and joint-to-joint similarities over j != i.
// The positive pair is excluded from the normalizer unless include_positives.
Var contrastive_loss(Var z_audio, Var z_text, Var z_joint, double tau,
                     bool include_positives = false);

// Conventional symmetric audio<->text InfoNCE on cosine logits; the referent
// for the single-contrastive configuration.
Var standard_contrastive_loss(Var z_audio, Var z_text, double tau);

// Covariance-form CKA in [0, 1] (columns centered; the 1/(n-1) factors cancel).
Var cka(Var x, Var y);

// (1 - cka(joint, audio)) + (1 - cka(joint, text)), in [0, 2].
Var cka_loss(Var z_audio, Var z_text, Var z_joint);

// InfoNCE lower bound on I(joint; modality) with scoring exp(x.y / gamma);
// log-domain computation throughout.
Var infonce_mi(Var z_joint, Var z_modality, double gamma);

// -(mi_audio + mi_text) + (mi_audio - mi_text)^2
Var mi_loss(Var z_audio, Var z_text, Var z_joint, double gamma);

// Plain-value entry points (each runs a throwaway tape).
double contrastive_loss_value(const Matrix& z_audio, const Matrix& z_text,
                              const Matrix& z_joint, double tau,
                              bool include_positives = false);
double standard_contrastive_loss_value(const Matrix& z_audio, const Matrix& z_text, double tau);
double cka_value(const Matrix& x, const Matrix& y); // clamped to [0, 1]
double cka_loss_value(const Matrix& z_audio, const Matrix& z_text, const Matrix& z_joint);
double infonce_mi_value(const Matrix& z_joint, const Matrix& z_modality, double gamma);
double mi_loss_value(const Matrix& z_audio, const Matrix& z_text, const Matrix& z_joint,
                     double gamma);

} // namespace mmfuse::losses
