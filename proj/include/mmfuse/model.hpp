#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmfuse/config.hpp"
#include "mmfuse/corpus.hpp"
#include "mmfuse/params.hpp"

namespace mmfuse {

// All trainable weights. Joint-path blocks (cross attention, joint attention)
// are left empty on rungs that do not fuse; the transfer rung uses a single
// expert, so transfer_moe differs from it only by the expert count.
template <class M>
struct ModelT {
    M in_audio, in_text; // d_m x d projections into the common dimension
    AttnBlockT<M> audio_attn, text_attn, joint_attn;
    CrossBlockT<M> audio_to_text, text_to_audio;
    MlpT<M> projector;
    MoET<M> moe;
    HeadT<M> head;
};

using ModelParams = ModelT<Matrix>;
using ModelVars = ModelT<Var>;

template <class A, class B, class F>
void zip_model(ModelT<A>& x, ModelT<B>& y, F&& f) {
    f(x.in_audio, y.in_audio);
    f(x.in_text, y.in_text);
    zip_params(x.audio_attn, y.audio_attn, f);
    zip_params(x.text_attn, y.text_attn, f);
    zip_params(x.joint_attn, y.joint_attn, f);
    zip_params(x.audio_to_text, y.audio_to_text, f);
    zip_params(x.text_to_audio, y.text_to_audio, f);
    zip_params(x.projector, y.projector, f);
    zip_params(x.moe, y.moe, f);
    zip_params(x.head, y.head, f);
}

template <class M, class F>
void visit_model(ModelT<M>& model, F&& f) {
    zip_model(model, model, [&](M& m, M&) { f(m); });
}

ModelParams init_model(const ModelDims& dims, Rung rung, std::uint64_t seed);

// One leaf per non-empty parameter matrix. `flat` receives the leaves in
// visit order when non-null (the same order visit_model(params) yields).
ModelVars lift(Tape& tape, ModelParams& params, std::vector<Var>* flat = nullptr);

std::size_t parameter_count(ModelParams& params);

struct BatchOutputs {
    Var z_audio, z_text; // n x d_latent
    Var z_joint;         // invalid on rungs without the joint path
    Var probs;           // n x C
};

BatchOutputs forward_batch(Tape& tape, const ModelVars& model,
                           const std::vector<const Document*>& docs, Rung rung);

void save_model(ModelParams& params, const ModelDims& dims, Rung rung, const std::string& path);

struct LoadedModel {
    ModelParams params;
    ModelDims dims;
    Rung rung = Rung::DualContrastiveMoe;
};
LoadedModel load_model(const std::string& path);

} // namespace mmfuse
