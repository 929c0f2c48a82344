#include "mmfuse/verification.hpp"

#include <cmath>

#include "mmfuse/losses.hpp"
#include "mmfuse/moe.hpp"
#include "mmfuse/rng.hpp"
#include "mmfuse/train.hpp"

namespace mmfuse {

namespace {

constexpr double kPrimitiveTol = 1e-6;
constexpr double kCompositeTol = 1e-4;
// Central-difference step. Primitives use the classic two-point stencil at
// 1e-6. Composite losses are O(1)-O(10) in value with some near-zero gradient
// entries, where two-point roundoff at small eps swamps the 1e-8 denominator
// floor; they use the five-point stencil at a larger step instead.
constexpr double kPrimitiveEps = 1e-6;
constexpr double kCompositeEps = 1e-3;

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.gaussian();
    return m;
}

// Entries with |x| in [lo, lo + span]; keeps probes away from kinks and poles.
Matrix random_offset_matrix(Rng& rng, std::size_t rows, std::size_t cols, double lo,
                            double span, bool signed_entries) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) {
        const double mag = lo + span * rng.uniform();
        m.data()[i] = signed_entries && rng.uniform() < 0.5 ? -mag : mag;
    }
    return m;
}

SuiteEntry run_case(const std::string& name, double threshold, double eps, int order,
                    std::uint64_t seed, std::size_t instances,
                    const std::function<std::vector<Matrix>(Rng&)>& make, const ScalarFn& fn) {
    SuiteEntry entry;
    entry.name = name;
    entry.threshold = threshold;
    entry.instances = instances;
    Rng base(seed);
    for (std::size_t i = 0; i < instances; ++i) {
        Rng rng = base.fork(i);
        GradCheckResult result = grad_check(fn, make(rng), eps, order);
        entry.max_rel_err = std::max(entry.max_rel_err, result.max_rel_err);
    }
    return entry;
}

// Weighted readout turns shape-preserving ops into scalars without collapsing
// their Jacobian structure (a bare sum of softmax rows is constant).
Var weighted_sum(Var v, const Matrix& weights) {
    return sum(hadamard(v, v.tape->constant(weights)));
}

Matrix fixed_weights(std::size_t rows, std::size_t cols) {
    Rng rng(0xdeadbeef);
    return random_matrix(rng, rows, cols);
}

std::vector<SuiteEntry> primitive_entries(std::uint64_t seed, std::size_t instances) {
    std::vector<SuiteEntry> entries;
    auto emit = [&](const std::string& name, const std::function<std::vector<Matrix>(Rng&)>& make,
                   const ScalarFn& fn) {
        entries.push_back(run_case(name, kPrimitiveTol, kPrimitiveEps, 2, seed, instances, make, fn));
    };

    emit("matmul",
        [](Rng& rng) {
            return std::vector<Matrix>{random_matrix(rng, 3, 4), random_matrix(rng, 4, 2)};
        },
        [](Tape&, const std::vector<Var>& in) {
            return weighted_sum(matmul(in[0], in[1]), fixed_weights(3, 2));
        });
    emit("softmax_rows",
        [](Rng& rng) { return std::vector<Matrix>{random_matrix(rng, 2, 3)}; },
        [](Tape&, const std::vector<Var>& in) {
            return weighted_sum(softmax_rows(in[0]), fixed_weights(2, 3));
        });
    emit("exp", [](Rng& rng) { return std::vector<Matrix>{random_matrix(rng, 3, 3)}; },
        [](Tape&, const std::vector<Var>& in) { return sum(exp(in[0])); });
    emit("log",
        [](Rng& rng) {
            return std::vector<Matrix>{random_offset_matrix(rng, 3, 3, 0.5, 2.0, false)};
        },
        [](Tape&, const std::vector<Var>& in) { return sum(log(in[0])); });
    emit("add",
        [](Rng& rng) {
            return std::vector<Matrix>{random_matrix(rng, 3, 3), random_matrix(rng, 3, 3)};
        },
        [](Tape&, const std::vector<Var>& in) { return sum(square(add(in[0], in[1]))); });
    emit("sub",
        [](Rng& rng) {
            return std::vector<Matrix>{random_matrix(rng, 3, 3), random_matrix(rng, 3, 3)};
        },
        [](Tape&, const std::vector<Var>& in) { return sum(square(sub(in[0], in[1]))); });
    emit("mul_scalar", [](Rng& rng) { return std::vector<Matrix>{random_matrix(rng, 3, 3)}; },
        [](Tape&, const std::vector<Var>& in) { return sum(square(mul_scalar(in[0], 1.7))); });
    emit("hadamard",
        [](Rng& rng) {
            return std::vector<Matrix>{random_matrix(rng, 3, 3), random_matrix(rng, 3, 3)};
        },
        [](Tape&, const std::vector<Var>& in) { return sum(hadamard(in[0], in[1])); });
    emit("divide",
        [](Rng& rng) {
            return std::vector<Matrix>{random_matrix(rng, 3, 3),
                                       random_offset_matrix(rng, 3, 3, 0.5, 1.5, false)};
        },
        [](Tape&, const std::vector<Var>& in) { return sum(divide(in[0], in[1])); });
    emit("square", [](Rng& rng) { return std::vector<Matrix>{random_matrix(rng, 3, 3)}; },
        [](Tape&, const std::vector<Var>& in) { return sum(square(in[0])); });
    emit("relu",
        [](Rng& rng) {
            return std::vector<Matrix>{random_offset_matrix(rng, 3, 3, 0.1, 1.0, true)};
        },
        [](Tape&, const std::vector<Var>& in) { return sum(square(relu(in[0]))); });
    emit("tanh", [](Rng& rng) { return std::vector<Matrix>{random_matrix(rng, 3, 3)}; },
        [](Tape&, const std::vector<Var>& in) { return sum(square(tanh(in[0]))); });
    emit("sqrt",
        [](Rng& rng) {
            return std::vector<Matrix>{random_offset_matrix(rng, 3, 3, 0.5, 2.0, false)};
        },
        [](Tape&, const std::vector<Var>& in) { return sum(sqrt(in[0])); });
    emit("clamp_min",
        [](Rng& rng) {
            return std::vector<Matrix>{random_offset_matrix(rng, 3, 3, 0.1, 1.0, true)};
        },
        [](Tape&, const std::vector<Var>& in) { return sum(square(clamp_min(in[0], 0.0))); });
    emit("sum", [](Rng& rng) { return std::vector<Matrix>{random_matrix(rng, 3, 4)}; },
        [](Tape&, const std::vector<Var>& in) { return square(sum(in[0])); });
    emit("mean", [](Rng& rng) { return std::vector<Matrix>{random_matrix(rng, 3, 4)}; },
        [](Tape&, const std::vector<Var>& in) { return square(mean(in[0])); });
    emit("transpose", [](Rng& rng) { return std::vector<Matrix>{random_matrix(rng, 3, 4)}; },
        [](Tape&, const std::vector<Var>& in) {
            return weighted_sum(transpose(in[0]), fixed_weights(4, 3));
        });
    emit("concat_rows",
        [](Rng& rng) {
            return std::vector<Matrix>{random_matrix(rng, 2, 3), random_matrix(rng, 3, 3)};
        },
        [](Tape&, const std::vector<Var>& in) {
            return sum(square(concat_rows(in[0], in[1])));
        });
    emit("concat_cols",
        [](Rng& rng) {
            return std::vector<Matrix>{random_matrix(rng, 2, 3), random_matrix(rng, 2, 5)};
        },
        [](Tape&, const std::vector<Var>& in) {
            return sum(square(concat_cols(in[0], in[1])));
        });
    emit("slice_rows", [](Rng& rng) { return std::vector<Matrix>{random_matrix(rng, 4, 3)}; },
        [](Tape&, const std::vector<Var>& in) { return sum(square(slice_rows(in[0], 1, 3))); });
    emit("logsumexp_rows", [](Rng& rng) { return std::vector<Matrix>{random_matrix(rng, 3, 4)}; },
        [](Tape&, const std::vector<Var>& in) {
            return weighted_sum(logsumexp_rows(in[0]), fixed_weights(3, 1));
        });
    emit("normalize_rows",
        [](Rng& rng) {
            return std::vector<Matrix>{random_offset_matrix(rng, 3, 4, 0.2, 1.0, true)};
        },
        [](Tape&, const std::vector<Var>& in) {
            return weighted_sum(normalize_rows(in[0]), fixed_weights(3, 4));
        });
    return entries;
}

// One latent batch: three n x d matrices (audio, text, joint rows).
std::vector<Matrix> make_latent_batch(Rng& rng, std::size_t n, std::size_t d) {
    return {random_matrix(rng, n, d), random_matrix(rng, n, d), random_matrix(rng, n, d)};
}

std::vector<int> labels_for(Rng& rng, std::size_t n, int classes) {
    std::vector<int> labels(n);
    for (auto& l : labels) l = static_cast<int>(rng.below(classes));
    return labels;
}

std::vector<SuiteEntry> composite_entries(std::uint64_t seed, std::size_t instances) {
    std::vector<SuiteEntry> entries;
    auto emit = [&](const std::string& name, const std::function<std::vector<Matrix>(Rng&)>& make,
                   const ScalarFn& fn) {
        entries.push_back(run_case(name, kCompositeTol, kCompositeEps, 4, seed + 101, instances, make, fn));
    };

    auto batch_dims = [](Rng& rng) {
        const std::size_t n = 2 + rng.below(7);        // 2..8
        const std::size_t d = rng.uniform() < 0.5 ? 4 : 16;
        return std::pair<std::size_t, std::size_t>{n, d};
    };

    emit("contrastive_loss",
        [batch_dims](Rng& rng) {
            auto [n, d] = batch_dims(rng);
            return make_latent_batch(rng, n, d);
        },
        [](Tape&, const std::vector<Var>& in) {
            return losses::contrastive_loss(in[0], in[1], in[2], 0.1);
        });
    emit("contrastive_standard",
        [batch_dims](Rng& rng) {
            auto [n, d] = batch_dims(rng);
            return std::vector<Matrix>{random_matrix(rng, n, d), random_matrix(rng, n, d)};
        },
        [](Tape&, const std::vector<Var>& in) {
            return losses::standard_contrastive_loss(in[0], in[1], 0.1);
        });
    emit("cka_loss",
        [batch_dims](Rng& rng) {
            auto [n, d] = batch_dims(rng);
            return make_latent_batch(rng, n, d);
        },
        [](Tape&, const std::vector<Var>& in) {
            return losses::cka_loss(in[0], in[1], in[2]);
        });
    emit("mi_loss",
        [batch_dims](Rng& rng) {
            auto [n, d] = batch_dims(rng);
            return make_latent_batch(rng, n, d);
        },
        [](Tape&, const std::vector<Var>& in) {
            return losses::mi_loss(in[0], in[1], in[2], 1.0);
        });
    emit("cross_entropy",
        [](Rng& rng) {
            // Rows strictly inside the simplex, away from the 1e-12 floor.
            Matrix probs(5, 3);
            for (std::size_t i = 0; i < probs.rows(); ++i) {
                double total = 0.0;
                for (std::size_t j = 0; j < probs.cols(); ++j) {
                    probs(i, j) = 0.05 + rng.uniform();
                    total += probs(i, j);
                }
                for (std::size_t j = 0; j < probs.cols(); ++j) probs(i, j) /= total;
            }
            return std::vector<Matrix>{probs};
        },
        [](Tape&, const std::vector<Var>& in) {
            return moe::cross_entropy(in[0], {0, 2, 1, 0, 1}, {1.0, 0.5, 2.0, 1.0, 0.7});
        });
    return entries;
}

// The composite losses assembled exactly as a training step sees them:
// latents through the MoE head plus the auxiliary terms, every parameter a
// checked input.
SuiteEntry total_loss_entry(std::uint64_t seed, std::size_t instances) {
    const std::size_t n = 4, d_latent = 6;
    ModelDims dims;
    dims.latent_dim = d_latent;
    dims.experts = 2;
    dims.expert_hidden = 5;
    dims.expert_output = 5;
    dims.head_hidden = 5;
    dims.head_bottleneck = 4;
    dims.classes = 3;

    auto make = [=](Rng& rng) {
        std::vector<Matrix> inputs = make_latent_batch(rng, n, d_latent);
        const std::size_t feature_dim = 3 * d_latent;
        for (std::size_t e = 0; e < dims.experts; ++e) {
            inputs.push_back(random_matrix(rng, feature_dim, dims.expert_hidden));
            inputs.push_back(random_matrix(rng, 1, dims.expert_hidden));
            inputs.push_back(random_matrix(rng, dims.expert_hidden, dims.expert_output));
            inputs.push_back(random_matrix(rng, 1, dims.expert_output));
        }
        inputs.push_back(random_matrix(rng, feature_dim, dims.experts));
        inputs.push_back(random_matrix(rng, 1, dims.experts));
        inputs.push_back(random_matrix(rng, dims.expert_output, dims.head_hidden));
        inputs.push_back(random_matrix(rng, 1, dims.head_hidden));
        inputs.push_back(random_matrix(rng, dims.head_hidden, dims.head_bottleneck));
        inputs.push_back(random_matrix(rng, 1, dims.head_bottleneck));
        inputs.push_back(random_matrix(rng, dims.head_bottleneck,
                                       static_cast<std::size_t>(dims.classes)));
        inputs.push_back(random_matrix(rng, 1, static_cast<std::size_t>(dims.classes)));
        return inputs;
    };

    ScalarFn fn = [=](Tape&, const std::vector<Var>& in) {
        std::size_t i = 3;
        MoET<Var> moe_vars;
        moe_vars.experts.resize(dims.experts);
        for (std::size_t e = 0; e < dims.experts; ++e) {
            moe_vars.experts[e] = {in[i], in[i + 1], in[i + 2], in[i + 3]};
            i += 4;
        }
        moe_vars.gate_w = in[i++];
        moe_vars.gate_b = in[i++];
        HeadT<Var> head{in[i], in[i + 1], in[i + 2], in[i + 3], in[i + 4], in[i + 5]};

        BatchOutputs outputs;
        outputs.z_audio = in[0];
        outputs.z_text = in[1];
        outputs.z_joint = in[2];
        Var features = concat_cols(concat_cols(in[0], in[2]), in[1]);
        outputs.probs = moe::classify(moe::moe_forward(features, moe_vars), head);

        LossConfig cfg;
        LossTerms terms = total_loss(outputs, {0, 2, 1, 1}, cfg);
        return terms.total;
    };
    return run_case("total_loss", kCompositeTol, kCompositeEps, 4, seed + 202, instances, make, fn);
}

// End-to-end: every model parameter including the fusion stack, on a fixed
// 4-document batch.
SuiteEntry full_model_entry(std::uint64_t seed) {
    ModelDims dims;
    dims.dim_audio = 5;
    dims.dim_text = 4;
    dims.common_dim = 8;
    dims.heads = 2;
    dims.latent_dim = 6;
    dims.experts = 2;
    dims.expert_hidden = 6;
    dims.expert_output = 6;
    dims.head_hidden = 6;
    dims.head_bottleneck = 4;
    dims.classes = 2;
    const Rung rung = Rung::DualContrastiveMoe;

    ModelParams shapes = init_model(dims, rung, seed);
    Rng doc_rng(seed + 7);
    std::vector<Document> docs(4);
    std::vector<int> labels;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        docs[i].id = "gc-" + std::to_string(i);
        docs[i].label = static_cast<int>(i % 2);
        docs[i].audio = random_matrix(doc_rng, 3, dims.dim_audio);
        docs[i].text = random_matrix(doc_rng, 3, dims.dim_text);
        labels.push_back(docs[i].label);
    }

    auto make = [&shapes](Rng& rng) {
        std::vector<Matrix> inputs;
        visit_model(shapes, [&](Matrix& m) {
            if (!m.empty()) inputs.push_back(random_matrix(rng, m.rows(), m.cols()));
        });
        // Glorot-scale the probe point so attention logits stay in a sane range.
        for (auto& m : inputs) {
            const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
            for (std::size_t e = 0; e < m.size(); ++e) m.data()[e] *= 0.5 * limit;
        }
        return inputs;
    };

    ScalarFn fn = [&shapes, &docs, labels](Tape&, const std::vector<Var>& in) {
        ModelVars vars;
        std::size_t i = 0;
        zip_model(shapes, vars, [&](Matrix& m, Var& v) {
            if (m.empty()) return;
            v = in[i++];
        });
        std::vector<const Document*> batch;
        for (const Document& d : docs) batch.push_back(&d);
        BatchOutputs outputs = forward_batch(*in[0].tape, vars, batch, Rung::DualContrastiveMoe);
        LossConfig cfg;
        LossTerms terms = total_loss(outputs, labels, cfg);
        return terms.total;
    };
    return run_case("total_full_model", kCompositeTol, kCompositeEps, 4, seed + 303, 1, make, fn);
}

} // namespace

std::vector<SuiteEntry> run_gradcheck_suite(std::uint64_t seed, std::size_t instances) {
    std::vector<SuiteEntry> entries = primitive_entries(seed, instances);
    std::vector<SuiteEntry> composites = composite_entries(seed, instances);
    entries.insert(entries.end(), composites.begin(), composites.end());
    entries.push_back(total_loss_entry(seed, instances));
    entries.push_back(full_model_entry(seed));
    return entries;
}

} // namespace mmfuse
