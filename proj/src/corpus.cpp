#include "mmfuse/corpus.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mmfuse/metrics.hpp"
#include "mmfuse/rng.hpp"

namespace mmfuse {

using nlohmann::json;

std::string CorpusManifest::summary() const {
    std::ostringstream out;
    out << "task=" << task << " classes=" << classes << " documents=" << documents
        << " dim_audio=" << dim_audio << " dim_text=" << dim_text << " histogram=[";
    for (std::size_t c = 0; c < histogram.size(); ++c) {
        if (c) out << ",";
        out << histogram[c];
    }
    out << "]";
    if (has_seed) out << " seed=" << seed;
    return out.str();
}

void SyntheticSpec::validate() const {
    if (documents == 0) throw ConfigError("synth.documents must be >= 1");
    if (classes < 2) throw ConfigError("synth.classes must be >= 2");
    if (segments == 0) throw ConfigError("synth.segments must be >= 1");
    if (latent_dim == 0 || latent_dim > std::min(dim_audio, dim_text)) {
        throw ConfigError("synth.latent_dim must satisfy 1 <= k <= min(dim_audio, dim_text)");
    }
    if (noise < 0.0) throw ConfigError("synth.noise must be nonnegative");
    if (separation < 0.0) throw ConfigError("synth.separation must be nonnegative");
    if (gain_audio <= 0.0 || gain_text <= 0.0) throw ConfigError("synth gains must be positive");
    if (!ratios.empty()) {
        if (ratios.size() != static_cast<std::size_t>(classes)) {
            throw ConfigError("synth.ratios must list one ratio per class");
        }
        double total = 0.0;
        for (double r : ratios) {
            if (r < 0.0) throw ConfigError("synth.ratios entries must be nonnegative");
            total += r;
        }
        if (std::fabs(total - 1.0) > 1e-9) throw ConfigError("synth.ratios must sum to 1");
    }
}

SyntheticSpec synthetic_spec_from(const Config& cfg) {
    SyntheticSpec s;
    s.documents = cfg.get_uint("synth.documents", s.documents);
    s.classes = static_cast<int>(cfg.get_int("synth.classes", s.classes));
    s.ratios = cfg.get_doubles("synth.ratios", s.ratios);
    s.segments = cfg.get_uint("synth.segments", s.segments);
    s.dim_audio = cfg.get_uint("synth.dim_audio", s.dim_audio);
    s.dim_text = cfg.get_uint("synth.dim_text", s.dim_text);
    s.latent_dim = cfg.get_uint("synth.latent_dim", s.latent_dim);
    s.noise = cfg.get_double("synth.noise", s.noise);
    s.separation = cfg.get_double("synth.separation", s.separation);
    s.gain_audio = cfg.get_double("synth.gain_audio", s.gain_audio);
    s.gain_text = cfg.get_double("synth.gain_text", s.gain_text);
    s.seed = cfg.get_uint("synth.seed", s.seed);
    s.validate();
    return s;
}

std::string resolved_spec_text(const SyntheticSpec& spec) {
    std::ostringstream out;
    out.precision(17);
    out << "synth.documents = " << spec.documents << "\n"
        << "synth.classes = " << spec.classes << "\n";
    out << "synth.ratios = ";
    if (spec.ratios.empty()) {
        out << "uniform";
    } else {
        for (std::size_t i = 0; i < spec.ratios.size(); ++i) {
            if (i) out << ",";
            out << spec.ratios[i];
        }
    }
    out << "\n"
        << "synth.segments = " << spec.segments << "\n"
        << "synth.dim_audio = " << spec.dim_audio << "\n"
        << "synth.dim_text = " << spec.dim_text << "\n"
        << "synth.latent_dim = " << spec.latent_dim << "\n"
        << "synth.noise = " << spec.noise << "\n"
        << "synth.separation = " << spec.separation << "\n"
        << "synth.gain_audio = " << spec.gain_audio << "\n"
        << "synth.gain_text = " << spec.gain_text << "\n"
        << "synth.seed = " << spec.seed << "\n";
    return out.str();
}

namespace {

// Random matrix with orthonormal columns (Gram-Schmidt on gaussian draws),
// so the planted latent keeps its scale through the projection.
Matrix orthonormal_columns(std::size_t rows, std::size_t cols, Rng& rng) {
    Matrix m(rows, cols);
    for (std::size_t j = 0; j < cols; ++j) {
        std::vector<double> v(rows);
        for (auto& x : v) x = rng.gaussian();
        for (std::size_t p = 0; p < j; ++p) {
            double dot = 0.0;
            for (std::size_t i = 0; i < rows; ++i) dot += v[i] * m(i, p);
            for (std::size_t i = 0; i < rows; ++i) v[i] -= dot * m(i, p);
        }
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        for (std::size_t i = 0; i < rows; ++i) m(i, j) = v[i] / norm;
    }
    return m;
}

int draw_class(const SyntheticSpec& spec, Rng& rng) {
    const double u = rng.uniform();
    if (spec.ratios.empty()) {
        int c = static_cast<int>(u * spec.classes);
        return std::min(c, spec.classes - 1);
    }
    double acc = 0.0;
    for (int c = 0; c < spec.classes; ++c) {
        acc += spec.ratios[c];
        if (u < acc) return c;
    }
    return spec.classes - 1;
}

} // namespace

Corpus generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    Rng master(spec.seed);
    const Matrix proj_audio = orthonormal_columns(spec.dim_audio, spec.latent_dim, master);
    const Matrix proj_text = orthonormal_columns(spec.dim_text, spec.latent_dim, master);

    // Class means sit on scaled latent axes; distinct classes are exactly
    // `separation` apart (axes reused when classes exceed k). The noise scale
    // gives both the within-class latent spread and the segment noise, so
    // separation = 4 with noise = 1 is a four-sigma class gap.
    const double mean_scale = spec.separation / std::sqrt(2.0);

    Corpus corpus;
    corpus.manifest.task = spec.task;
    corpus.manifest.classes = spec.classes;
    corpus.manifest.dim_audio = spec.dim_audio;
    corpus.manifest.dim_text = spec.dim_text;
    corpus.manifest.documents = spec.documents;
    corpus.manifest.histogram.assign(spec.classes, 0);
    corpus.manifest.has_seed = true;
    corpus.manifest.seed = spec.seed;

    corpus.docs.reserve(spec.documents);
    for (std::size_t i = 0; i < spec.documents; ++i) {
        Rng rng = master.fork(i);
        const int label = draw_class(spec, rng);
        std::vector<double> latent(spec.latent_dim);
        for (std::size_t j = 0; j < spec.latent_dim; ++j) latent[j] = spec.noise * rng.gaussian();
        latent[static_cast<std::size_t>(label) % spec.latent_dim] += mean_scale;

        Document doc;
        doc.id = "doc-" + std::to_string(i);
        doc.task = spec.task;
        doc.label = label;
        doc.audio = Matrix(spec.segments, spec.dim_audio);
        doc.text = Matrix(spec.segments, spec.dim_text);
        for (std::size_t l = 0; l < spec.segments; ++l) {
            for (std::size_t d = 0; d < spec.dim_audio; ++d) {
                double signal = 0.0;
                for (std::size_t j = 0; j < spec.latent_dim; ++j)
                    signal += proj_audio(d, j) * latent[j];
                doc.audio(l, d) = spec.gain_audio * signal + spec.noise * rng.gaussian();
            }
            for (std::size_t d = 0; d < spec.dim_text; ++d) {
                double signal = 0.0;
                for (std::size_t j = 0; j < spec.latent_dim; ++j)
                    signal += proj_text(d, j) * latent[j];
                doc.text(l, d) = spec.gain_text * signal + spec.noise * rng.gaussian();
            }
        }
        corpus.manifest.histogram[label] += 1;
        corpus.docs.push_back(std::move(doc));
    }
    return corpus;
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

Matrix matrix_from_json(const json& rows, const std::string& where) {
    if (!rows.is_array() || rows.empty()) {
        throw IoError(where + ": expected a non-empty array of rows");
    }
    const std::size_t r = rows.size();
    const std::size_t c = rows[0].is_array() ? rows[0].size() : 0;
    if (c == 0) throw IoError(where + ": rows must be non-empty arrays");
    Matrix m(r, c);
    for (std::size_t i = 0; i < r; ++i) {
        if (!rows[i].is_array() || rows[i].size() != c) {
            throw IoError(where + ": ragged row " + std::to_string(i));
        }
        for (std::size_t j = 0; j < c; ++j) m(i, j) = rows[i][j].get<double>();
    }
    return m;
}

json manifest_to_json(const CorpusManifest& m) {
    json j{{"record", "manifest"},
           {"task", m.task},
           {"classes", m.classes},
           {"dim_audio", m.dim_audio},
           {"dim_text", m.dim_text},
           {"documents", m.documents},
           {"histogram", m.histogram}};
    if (m.has_seed) j["seed"] = m.seed;
    return j;
}

CorpusManifest manifest_from_json(const json& j) {
    CorpusManifest m;
    m.task = j.at("task").get<std::string>();
    m.classes = j.at("classes").get<int>();
    m.dim_audio = j.at("dim_audio").get<std::size_t>();
    m.dim_text = j.at("dim_text").get<std::size_t>();
    m.documents = j.at("documents").get<std::size_t>();
    m.histogram = j.at("histogram").get<std::vector<std::size_t>>();
    if (j.contains("seed")) {
        m.has_seed = true;
        m.seed = j.at("seed").get<std::uint64_t>();
    }
    return m;
}

void validate_corpus(const Corpus& corpus, const std::string& path) {
    const CorpusManifest& m = corpus.manifest;
    if (corpus.docs.empty()) throw IoError(path + ": no documents");
    if (m.classes < 2) throw IoError(path + ": manifest declares fewer than 2 classes");
    if (m.documents != corpus.docs.size()) {
        throw IoError(path + ": manifest documents=" + std::to_string(m.documents) +
                      " but file holds " + std::to_string(corpus.docs.size()));
    }
    if (m.histogram.size() != static_cast<std::size_t>(m.classes)) {
        throw IoError(path + ": manifest histogram length disagrees with class count");
    }
    std::vector<std::size_t> counts(m.classes, 0);
    for (const Document& d : corpus.docs) {
        if (d.label < 0 || d.label >= m.classes) {
            throw IoError(path + ": document '" + d.id + "' label " + std::to_string(d.label) +
                          " out of range [0, " + std::to_string(m.classes) + ")");
        }
        if (d.audio.rows() == 0 || d.audio.rows() != d.text.rows()) {
            throw IoError(path + ": document '" + d.id +
                          "' has unpaired segment counts (audio " + d.audio.shape_str() +
                          ", text " + d.text.shape_str() + ")");
        }
        if (d.audio.cols() != m.dim_audio || d.text.cols() != m.dim_text) {
            throw IoError(path + ": document '" + d.id + "' dims " + d.audio.shape_str() + "/" +
                          d.text.shape_str() + " disagree with manifest");
        }
        if (!d.audio.all_finite() || !d.text.all_finite()) {
            throw IoError(path + ": document '" + d.id + "' contains non-finite entries");
        }
        if (d.task != m.task) {
            throw IoError(path + ": document '" + d.id + "' task '" + d.task +
                          "' disagrees with manifest task '" + m.task + "'");
        }
        counts[d.label] += 1;
    }
    if (counts != m.histogram) {
        throw IoError(path + ": manifest histogram disagrees with document labels");
    }
}

bool has_suffix(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

constexpr char kBinaryMagic[8] = {'M', 'M', 'F', 'C', 'O', 'R', 'P', '1'};

template <typename T>
void write_raw(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::ifstream& in, const std::string& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw IoError(path + ": truncated file");
    return v;
}

void write_string(std::ofstream& out, const std::string& s) {
    write_raw<std::uint64_t>(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::ifstream& in, const std::string& path) {
    const auto len = read_raw<std::uint64_t>(in, path);
    if (len > (1ull << 32)) throw IoError(path + ": implausible string length");
    std::string s(len, '\0');
    in.read(s.data(), static_cast<std::streamsize>(len));
    if (!in) throw IoError(path + ": truncated file");
    return s;
}

void save_binary(const Corpus& corpus, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(kBinaryMagic, sizeof(kBinaryMagic));
    write_string(out, manifest_to_json(corpus.manifest).dump());
    for (const Document& d : corpus.docs) {
        write_string(out, d.id);
        write_string(out, d.task);
        write_raw<std::int32_t>(out, d.label);
        write_raw<std::uint64_t>(out, d.audio.rows());
        out.write(reinterpret_cast<const char*>(d.audio.data()),
                  static_cast<std::streamsize>(d.audio.size() * sizeof(double)));
        out.write(reinterpret_cast<const char*>(d.text.data()),
                  static_cast<std::streamsize>(d.text.size() * sizeof(double)));
    }
    if (!out) throw IoError("write failed: " + path);
}

Corpus load_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kBinaryMagic, sizeof(magic)) != 0) {
        throw IoError(path + ": not a corpus binary (bad magic)");
    }
    Corpus corpus;
    try {
        corpus.manifest = manifest_from_json(json::parse(read_string(in, path)));
    } catch (const json::exception& e) {
        throw IoError(path + ": manifest parse failure: " + e.what());
    }
    for (std::size_t i = 0; i < corpus.manifest.documents; ++i) {
        Document d;
        d.id = read_string(in, path);
        d.task = read_string(in, path);
        d.label = read_raw<std::int32_t>(in, path);
        const auto segments = read_raw<std::uint64_t>(in, path);
        if (segments == 0 || segments > (1ull << 24)) {
            throw IoError(path + ": implausible segment count for document '" + d.id + "'");
        }
        d.audio = Matrix(segments, corpus.manifest.dim_audio);
        in.read(reinterpret_cast<char*>(d.audio.data()),
                static_cast<std::streamsize>(d.audio.size() * sizeof(double)));
        d.text = Matrix(segments, corpus.manifest.dim_text);
        in.read(reinterpret_cast<char*>(d.text.data()),
                static_cast<std::streamsize>(d.text.size() * sizeof(double)));
        if (!in) throw IoError(path + ": truncated document '" + d.id + "'");
        corpus.docs.push_back(std::move(d));
    }
    validate_corpus(corpus, path);
    return corpus;
}

} // namespace

void save_corpus(const Corpus& corpus, const std::string& path) {
    if (has_suffix(path, ".bin")) {
        save_binary(corpus, path);
        return;
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << manifest_to_json(corpus.manifest).dump() << "\n";
    for (const Document& d : corpus.docs) {
        json j{{"record", "document"}, {"id", d.id},   {"task", d.task},
               {"label", d.label},    {"audio", matrix_to_json(d.audio)},
               {"text", matrix_to_json(d.text)}};
        out << j.dump() << "\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

Corpus load_corpus(const std::string& path) {
    if (has_suffix(path, ".bin")) return load_binary(path);

    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    Corpus corpus;
    std::string line;
    std::size_t lineno = 0;
    bool have_manifest = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw IoError(path + ": line " + std::to_string(lineno) +
                          ": parse failure: " + e.what());
        }
        try {
            const std::string record = j.at("record").get<std::string>();
            if (record == "manifest") {
                if (have_manifest) {
                    throw IoError(path + ": duplicate manifest on line " + std::to_string(lineno));
                }
                corpus.manifest = manifest_from_json(j);
                have_manifest = true;
            } else if (record == "document") {
                if (!have_manifest) {
                    throw IoError(path + ": document record before manifest (line " +
                                  std::to_string(lineno) + ")");
                }
                Document d;
                d.id = j.at("id").get<std::string>();
                d.task = j.at("task").get<std::string>();
                d.label = j.at("label").get<int>();
                d.audio = matrix_from_json(j.at("audio"), "document '" + d.id + "' audio");
                d.text = matrix_from_json(j.at("text"), "document '" + d.id + "' text");
                corpus.docs.push_back(std::move(d));
            } else {
                throw IoError(path + ": unknown record type '" + record + "' on line " +
                              std::to_string(lineno));
            }
        } catch (const json::exception& e) {
            throw IoError(path + ": line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (!have_manifest) throw IoError(path + ": no documents");
    validate_corpus(corpus, path);
    return corpus;
}

namespace {

std::vector<double> mean_pooled(const Document& doc, Modality modality) {
    const Matrix& m = modality == Modality::Audio ? doc.audio : doc.text;
    std::vector<double> pooled(m.cols(), 0.0);
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) pooled[j] += m(i, j);
    for (auto& v : pooled) v /= static_cast<double>(m.rows());
    return pooled;
}

} // namespace

double logistic_probe_auc(const Corpus& corpus, Modality modality) {
    std::vector<std::size_t> train_idx, test_idx;
    for (std::size_t i = 0; i < corpus.docs.size(); ++i) {
        (i % 2 == 0 ? train_idx : test_idx).push_back(i);
    }
    if (train_idx.empty() || test_idx.empty()) {
        throw ContractError("logistic_probe_auc: need at least 2 documents");
    }
    const std::size_t dim = modality == Modality::Audio ? corpus.manifest.dim_audio
                                                        : corpus.manifest.dim_text;

    std::vector<std::vector<double>> features(corpus.docs.size());
    for (std::size_t i = 0; i < corpus.docs.size(); ++i) {
        features[i] = mean_pooled(corpus.docs[i], modality);
    }
    // Standardize with train-half statistics.
    std::vector<double> mu(dim, 0.0), sd(dim, 0.0);
    for (std::size_t i : train_idx)
        for (std::size_t j = 0; j < dim; ++j) mu[j] += features[i][j];
    for (auto& v : mu) v /= static_cast<double>(train_idx.size());
    for (std::size_t i : train_idx)
        for (std::size_t j = 0; j < dim; ++j) {
            const double c = features[i][j] - mu[j];
            sd[j] += c * c;
        }
    for (auto& v : sd) v = std::max(std::sqrt(v / static_cast<double>(train_idx.size())), 1e-12);
    for (auto& f : features)
        for (std::size_t j = 0; j < dim; ++j) f[j] = (f[j] - mu[j]) / sd[j];

    const int classes = corpus.manifest.classes;
    Matrix scores(test_idx.size(), classes);
    for (int c = 0; c < classes; ++c) {
        std::vector<double> w(dim + 1, 0.0); // last entry is the bias
        const double n = static_cast<double>(train_idx.size());
        for (int iter = 0; iter < 500; ++iter) {
            std::vector<double> grad(dim + 1, 0.0);
            for (std::size_t i : train_idx) {
                double z = w[dim];
                for (std::size_t j = 0; j < dim; ++j) z += w[j] * features[i][j];
                const double p = 1.0 / (1.0 + std::exp(-z));
                const double err = p - (corpus.docs[i].label == c ? 1.0 : 0.0);
                for (std::size_t j = 0; j < dim; ++j) grad[j] += err * features[i][j];
                grad[dim] += err;
            }
            for (std::size_t j = 0; j <= dim; ++j) {
                w[j] -= 1.0 * (grad[j] / n + 1e-4 * w[j]);
            }
        }
        for (std::size_t t = 0; t < test_idx.size(); ++t) {
            double z = w[dim];
            for (std::size_t j = 0; j < dim; ++j) z += w[j] * features[test_idx[t]][j];
            scores(t, c) = z;
        }
    }
    std::vector<int> labels;
    labels.reserve(test_idx.size());
    for (std::size_t i : test_idx) labels.push_back(corpus.docs[i].label);
    return auc_macro_ovr(scores, labels).macro;
}

} // namespace mmfuse
