#include "mmfuse/model.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "mmfuse/fusion.hpp"
#include "mmfuse/losses.hpp"
#include "mmfuse/moe.hpp"
#include "mmfuse/rng.hpp"

namespace mmfuse {

using nlohmann::json;

namespace {

Matrix glorot(Rng& rng, std::size_t rows, std::size_t cols) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-limit, limit);
    return m;
}

AttnBlockT<Matrix> init_attn(Rng& rng, std::size_t dim, std::size_t heads) {
    AttnBlockT<Matrix> block;
    const std::size_t head_dim = dim / heads;
    block.wq.reserve(heads);
    block.wk.reserve(heads);
    block.wv.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        block.wq.push_back(glorot(rng, dim, head_dim));
        block.wk.push_back(glorot(rng, dim, head_dim));
        block.wv.push_back(glorot(rng, dim, head_dim));
    }
    block.wo = glorot(rng, dim, dim);
    block.pool_q = glorot(rng, dim, 1);
    return block;
}

MlpT<Matrix> init_mlp(Rng& rng, std::size_t in, std::size_t hidden, std::size_t out) {
    MlpT<Matrix> mlp;
    mlp.w1 = glorot(rng, in, hidden);
    mlp.b1 = Matrix(1, hidden);
    mlp.w2 = glorot(rng, hidden, out);
    mlp.b2 = Matrix(1, out);
    return mlp;
}

} // namespace

ModelParams init_model(const ModelDims& dims, Rung rung, std::uint64_t seed) {
    dims.validate();
    Rng rng(seed ^ 0x6d6d6675736500ULL);
    const std::size_t d = dims.common_dim;
    const bool joint = rung_uses_joint(rung);
    const std::size_t n_experts = rung_uses_moe(rung) ? dims.experts : 1;
    const std::size_t feature_dim = (joint ? 3 : 2) * dims.latent_dim;

    ModelParams m;
    m.in_audio = glorot(rng, dims.dim_audio, d);
    m.in_text = glorot(rng, dims.dim_text, d);
    m.audio_attn = init_attn(rng, d, dims.heads);
    m.text_attn = init_attn(rng, d, dims.heads);
    if (joint) {
        m.joint_attn = init_attn(rng, d, dims.heads);
        m.audio_to_text.wq = glorot(rng, d, d);
        m.audio_to_text.wk = glorot(rng, d, d);
        m.audio_to_text.wv = glorot(rng, d, d);
        m.text_to_audio.wq = glorot(rng, d, d);
        m.text_to_audio.wk = glorot(rng, d, d);
        m.text_to_audio.wv = glorot(rng, d, d);
    }
    m.projector = init_mlp(rng, d, dims.latent_dim, dims.latent_dim);
    m.moe.experts.reserve(n_experts);
    for (std::size_t e = 0; e < n_experts; ++e) {
        m.moe.experts.push_back(init_mlp(rng, feature_dim, dims.expert_hidden,
                                         dims.expert_output));
    }
    m.moe.gate_w = glorot(rng, feature_dim, n_experts);
    m.moe.gate_b = Matrix(1, n_experts);
    m.head.w1 = glorot(rng, dims.expert_output, dims.head_hidden);
    m.head.b1 = Matrix(1, dims.head_hidden);
    m.head.w2 = glorot(rng, dims.head_hidden, dims.head_bottleneck);
    m.head.b2 = Matrix(1, dims.head_bottleneck);
    m.head.w3 = glorot(rng, dims.head_bottleneck, static_cast<std::size_t>(dims.classes));
    m.head.b3 = Matrix(1, static_cast<std::size_t>(dims.classes));
    return m;
}

ModelVars lift(Tape& tape, ModelParams& params, std::vector<Var>* flat) {
    ModelVars vars;
    zip_model(params, vars, [&](Matrix& m, Var& v) {
        if (m.empty()) return;
        v = tape.leaf(m);
        if (flat) flat->push_back(v);
    });
    return vars;
}

std::size_t parameter_count(ModelParams& params) {
    std::size_t count = 0;
    visit_model(params, [&](Matrix& m) { count += m.size(); });
    return count;
}

namespace {

struct DocumentLatents {
    Var z_audio, z_text, z_joint;
};

DocumentLatents document_forward(Tape& tape, const ModelVars& model, const Document& doc,
                                 bool joint) {
    Var seg_audio = fusion::project_to_common(tape.constant(doc.audio), model.in_audio);
    Var seg_text = fusion::project_to_common(tape.constant(doc.text), model.in_text);

    Var doc_audio = fusion::modality_document_embedding(seg_audio, model.audio_attn);
    Var doc_text = fusion::modality_document_embedding(seg_text, model.text_attn);

    DocumentLatents out;
    out.z_audio = losses::shared_project(doc_audio, model.projector);
    out.z_text = losses::shared_project(doc_text, model.projector);
    if (joint) {
        Var a2t = fusion::cross_modal_attention(seg_audio, seg_text, model.audio_to_text);
        Var t2a = fusion::cross_modal_attention(seg_text, seg_audio, model.text_to_audio);
        Var doc_joint = fusion::joint_document_embedding(a2t, t2a, model.joint_attn);
        out.z_joint = losses::shared_project(doc_joint, model.projector);
    }
    return out;
}

} // namespace

BatchOutputs forward_batch(Tape& tape, const ModelVars& model,
                           const std::vector<const Document*>& docs, Rung rung) {
    if (docs.empty()) throw ContractError("forward_batch: empty batch");
    const bool joint = rung_uses_joint(rung);

    BatchOutputs out;
    for (const Document* doc : docs) {
        DocumentLatents latents = document_forward(tape, model, *doc, joint);
        out.z_audio = out.z_audio.valid() ? concat_rows(out.z_audio, latents.z_audio)
                                          : latents.z_audio;
        out.z_text = out.z_text.valid() ? concat_rows(out.z_text, latents.z_text)
                                        : latents.z_text;
        if (joint) {
            out.z_joint = out.z_joint.valid() ? concat_rows(out.z_joint, latents.z_joint)
                                              : latents.z_joint;
        }
    }
    // Head features follow the [audio ; joint ; text] concatenation; rungs
    // without the joint path use [audio ; text].
    Var features = joint ? concat_cols(concat_cols(out.z_audio, out.z_joint), out.z_text)
                         : concat_cols(out.z_audio, out.z_text);
    out.probs = moe::classify(moe::moe_forward(features, model.moe), model.head);
    return out;
}

namespace {

json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (std::size_t i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (std::size_t j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix matrix_from_json(const json& rows) {
    if (!rows.is_array() || rows.empty()) throw IoError("model tensor: expected rows");
    const std::size_t r = rows.size();
    const std::size_t c = rows[0].size();
    Matrix m(r, c);
    for (std::size_t i = 0; i < r; ++i) {
        if (rows[i].size() != c) throw IoError("model tensor: ragged rows");
        for (std::size_t j = 0; j < c; ++j) m(i, j) = rows[i][j].get<double>();
    }
    return m;
}

} // namespace

void save_model(ModelParams& params, const ModelDims& dims, Rung rung, const std::string& path) {
    json tensors = json::array();
    visit_model(params, [&](Matrix& m) {
        if (!m.empty()) tensors.push_back(matrix_to_json(m));
    });
    json j{{"format", "mmfuse-model-v1"},
           {"rung", to_string(rung)},
           {"dims",
            {{"dim_audio", dims.dim_audio},
             {"dim_text", dims.dim_text},
             {"common_dim", dims.common_dim},
             {"heads", dims.heads},
             {"latent_dim", dims.latent_dim},
             {"experts", dims.experts},
             {"expert_hidden", dims.expert_hidden},
             {"expert_output", dims.expert_output},
             {"head_hidden", dims.head_hidden},
             {"head_bottleneck", dims.head_bottleneck},
             {"classes", dims.classes}}},
           {"tensors", std::move(tensors)}};
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << j.dump() << "\n";
    if (!out) throw IoError("write failed: " + path);
}

LoadedModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw IoError(path + ": parse failure: " + std::string(e.what()));
    }
    try {
        if (j.at("format").get<std::string>() != "mmfuse-model-v1") {
            throw IoError(path + ": unknown model format");
        }
        LoadedModel loaded;
        loaded.rung = rung_from_string(j.at("rung").get<std::string>());
        const json& d = j.at("dims");
        loaded.dims.dim_audio = d.at("dim_audio").get<std::size_t>();
        loaded.dims.dim_text = d.at("dim_text").get<std::size_t>();
        loaded.dims.common_dim = d.at("common_dim").get<std::size_t>();
        loaded.dims.heads = d.at("heads").get<std::size_t>();
        loaded.dims.latent_dim = d.at("latent_dim").get<std::size_t>();
        loaded.dims.experts = d.at("experts").get<std::size_t>();
        loaded.dims.expert_hidden = d.at("expert_hidden").get<std::size_t>();
        loaded.dims.expert_output = d.at("expert_output").get<std::size_t>();
        loaded.dims.head_hidden = d.at("head_hidden").get<std::size_t>();
        loaded.dims.head_bottleneck = d.at("head_bottleneck").get<std::size_t>();
        loaded.dims.classes = d.at("classes").get<int>();

        loaded.params = init_model(loaded.dims, loaded.rung, 0);
        const json& tensors = j.at("tensors");
        std::size_t index = 0;
        visit_model(loaded.params, [&](Matrix& m) {
            if (m.empty()) return;
            if (index >= tensors.size()) throw IoError(path + ": too few tensors");
            Matrix parsed = matrix_from_json(tensors[index]);
            if (!parsed.same_shape(m)) {
                throw IoError(path + ": tensor " + std::to_string(index) + " has shape " +
                              parsed.shape_str() + ", expected " + m.shape_str());
            }
            m = std::move(parsed);
            ++index;
        });
        if (index != tensors.size()) throw IoError(path + ": too many tensors");
        return loaded;
    } catch (const json::exception& e) {
        throw IoError(path + ": " + std::string(e.what()));
    }
}

} // namespace mmfuse
