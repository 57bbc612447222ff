#include "kdcode/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>

namespace kdc {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

double parse_double(const std::string& key, const std::string& v) {
    double out = 0;
    auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw Error("config: '" + key + "' expects a number, got '" + v + "'");
    return out;
}

std::uint64_t parse_count(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
        throw Error("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw Error("config: '" + key + "' expects true or false, got '" + v + "'");
}

struct Entry {
    std::string key;
    std::string doc;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <class T>
Entry count(std::string key, std::string doc, T ExperimentConfig::*field) {
    return {key, std::move(doc), [field](const ExperimentConfig& c) { return std::to_string(c.*field); },
            [field, key](ExperimentConfig& c, const std::string& v) { c.*field = static_cast<T>(parse_count(key, v)); }};
}

Entry real(std::string key, std::string doc, double ExperimentConfig::*field) {
    return {key, std::move(doc), [field](const ExperimentConfig& c) { return format_double(c.*field); },
            [field, key](ExperimentConfig& c, const std::string& v) { c.*field = parse_double(key, v); }};
}

Entry boolean(std::string key, std::string doc, bool ExperimentConfig::*field) {
    return {key, std::move(doc), [field](const ExperimentConfig& c) { return std::string(c.*field ? "true" : "false"); },
            [field, key](ExperimentConfig& c, const std::string& v) { c.*field = parse_bool(key, v); }};
}

Entry text(std::string key, std::string doc, std::string ExperimentConfig::*field) {
    return {key, std::move(doc), [field](const ExperimentConfig& c) { return c.*field; },
            [field](ExperimentConfig& c, const std::string& v) { c.*field = v; }};
}

const std::vector<Entry>& entries() {
    static const std::vector<Entry> table = [] {
        using C = ExperimentConfig;
        std::vector<Entry> t;
        t.push_back({"task", "reconstruction | classification",
                     [](const C& c) { return c.task; },
                     [](C& c, const std::string& v) {
                         if (v != "reconstruction" && v != "classification") throw Error("config: unknown task '" + v + "'");
                         c.task = v;
                     }});
        t.push_back(text("embeddings", "embedding file (token v1 .. vd per line); empty for synthetic data", &C::embeddings));
        t.push_back(count("synthetic.vocab", "synthetic clustered embeddings: N", &C::synthetic_vocab));
        t.push_back(count("synthetic.dim", "synthetic clustered embeddings: d", &C::synthetic_dim));
        t.push_back(count("synthetic.clusters", "synthetic clustered embeddings: cluster count", &C::synthetic_clusters));
        t.push_back(real("synthetic.spread", "within-cluster noise relative to the center scale", &C::synthetic_spread));
        t.push_back(count("synthetic.seed", "seed of the synthetic embeddings", &C::synthetic_seed));
        t.push_back(count("corpus.vocab", "marker corpus: vocabulary size", &C::corpus_vocab));
        t.push_back(count("corpus.classes", "marker corpus: classes", &C::corpus_classes));
        t.push_back(count("corpus.markers", "marker corpus: marker tokens per class", &C::corpus_markers));
        t.push_back(count("corpus.documents", "marker corpus: documents", &C::corpus_documents));
        t.push_back(count("corpus.length", "marker corpus: tokens per document", &C::corpus_length));
        t.push_back(count("corpus.markers_per_doc", "marker corpus: marker tokens per document", &C::corpus_markers_per_doc));
        t.push_back(count("corpus.seed", "seed of the corpus and its split", &C::corpus_seed));
        t.push_back(count("corpus.dim", "embedding width for classification", &C::corpus_dim));
        t.push_back(real("corpus.validation", "validation fraction", &C::corpus_validation));
        t.push_back(real("corpus.test", "test fraction", &C::corpus_test));
        t.push_back(count("K", "code alphabet size", &C::way));
        t.push_back(count("D", "code length", &C::dims));
        t.push_back(count("code_dim", "code embedding width d'", &C::code_dim));
        t.push_back(boolean("lossy", "allow K^D < N", &C::lossy));
        t.push_back({"composer", "linear-sum | linear-hidden | lstm",
                     [](const C& c) { return std::string(composer_name(c.composer)); },
                     [](C& c, const std::string& v) { c.composer = parse_composer(v); }});
        t.push_back(count("hidden", "hidden width of the linear-hidden composer", &C::hidden));
        t.push_back(boolean("lstm_tied_gate", "LSTM output gate reuses the forget gate weights", &C::lstm_tied_gate));
        t.push_back(count("epochs", "training epochs", &C::epochs));
        t.push_back(count("batch_size", "symbols (or documents) per batch", &C::batch_size));
        t.push_back(real("lr", "learning rate", &C::lr));
        t.push_back({"optimizer", "adam | sgd",
                     [](const C& c) { return std::string(c.optimizer == OptimizerKind::Adam ? "adam" : "sgd"); },
                     [](C& c, const std::string& v) {
                         if (v == "adam")
                             c.optimizer = OptimizerKind::Adam;
                         else if (v == "sgd")
                             c.optimizer = OptimizerKind::Sgd;
                         else
                             throw Error("config: unknown optimizer '" + v + "'");
                     }});
        t.push_back({"schedule", "exponential | constant temperature",
                     [](const C& c) {
                         return std::string(c.schedule == ScheduleKind::Exponential ? "exponential" : "constant");
                     },
                     [](C& c, const std::string& v) {
                         if (v == "exponential")
                             c.schedule = ScheduleKind::Exponential;
                         else if (v == "constant")
                             c.schedule = ScheduleKind::Constant;
                         else
                             throw Error("config: unknown schedule '" + v + "'");
                     }});
        t.push_back(real("tau_init", "initial temperature", &C::tau_init));
        t.push_back(real("tau_min", "final temperature", &C::tau_min));
        t.push_back(count("tau_horizon", "step reaching tau_min; 0 for half of all steps", &C::tau_horizon));
        t.push_back(real("entropy_weight", "entropy regularizer weight", &C::entropy_weight));
        t.push_back(real("entropy_ramp", "fraction of steps ramping the entropy weight", &C::entropy_ramp));
        t.push_back(real("lambda_ramp", "fraction of steps ramping the online tether weight", &C::lambda_ramp));
        t.push_back({"relaxation", "ste (hard forward) | cr (relaxed forward)",
                     [](const C& c) { return std::string(c.relaxation == Relaxation::StraightThrough ? "ste" : "cr"); },
                     [](C& c, const std::string& v) {
                         if (v == "ste")
                             c.relaxation = Relaxation::StraightThrough;
                         else if (v == "cr")
                             c.relaxation = Relaxation::Continuous;
                         else
                             throw Error("config: unknown relaxation '" + v + "'");
                     }});
        t.push_back(real("clip_norm", "global gradient norm clip", &C::clip_norm));
        t.push_back(count("seed", "training seed", &C::seed));
        t.push_back({"guidance", "none | odg | pdg",
                     [](const C& c) { return std::string(guidance_name(c.guidance)); },
                     [](C& c, const std::string& v) { c.guidance = parse_guidance(v); }});
        t.push_back(real("keep_prob", "online guidance: probability of keeping the continuous value", &C::keep_prob));
        t.push_back(real("lambda", "online guidance tether weight", &C::lambda));
        t.push_back(real("alpha", "pre-trained guidance weight on composed vectors", &C::alpha));
        t.push_back(real("beta", "pre-trained guidance weight on code logits", &C::beta));
        t.push_back({"mask", "coordinate | symbol online guidance mask",
                     [](const C& c) { return std::string(c.per_symbol_mask ? "symbol" : "coordinate"); },
                     [](C& c, const std::string& v) {
                         if (v == "symbol")
                             c.per_symbol_mask = true;
                         else if (v == "coordinate")
                             c.per_symbol_mask = false;
                         else
                             throw Error("config: unknown mask '" + v + "'");
                     }});
        t.push_back(boolean("autoencoder", "pre-trained guidance trains the autoencoder", &C::autoencoder));
        t.push_back(count("encoder_hidden", "autoencoder hidden width", &C::encoder_hidden));
        t.push_back(count("pq.subspaces", "product quantization subspaces", &C::pq_subspaces));
        t.push_back(count("pq.centroids", "product quantization centroids per subspace", &C::pq_centroids));
        t.push_back(count("scalar.bits", "scalar quantization bits", &C::scalar_bits));
        t.push_back(count("lowrank.rank", "low-rank factorization rank", &C::lowrank_rank));
        t.push_back(count("nn_k", "neighbours for the overlap metric", &C::nn_k));
        t.push_back({"full_bits", "table (32 N d) | text (32 N (1 + d))",
                     [](const C& c) { return std::string(c.full_bits == FullBitsConvention::Table ? "table" : "text"); },
                     [](C& c, const std::string& v) {
                         if (v == "table")
                             c.full_bits = FullBitsConvention::Table;
                         else if (v == "text")
                             c.full_bits = FullBitsConvention::Text;
                         else
                             throw Error("config: unknown full_bits convention '" + v + "'");
                     }});
        return t;
    }();
    return table;
}

const Entry& entry(const std::string& key) {
    for (const auto& e : entries()) {
        if (e.key == key) return e;
    }
    throw Error("config: unknown key '" + key + "'");
}

}  // namespace

void ExperimentConfig::set(const std::string& key, const std::string& value) { entry(key).set(*this, trim(value)); }

std::string ExperimentConfig::get(const std::string& key) const { return entry(key).get(*this); }

ConfigEcho ExperimentConfig::echo() const {
    ConfigEcho out;
    for (const auto& e : entries()) out.emplace_back(e.key, e.get(*this));
    return out;
}

void ExperimentConfig::validate() const {
    std::size_t vocab = task == "classification" ? corpus_vocab : synthetic_vocab;
    if (task == "reconstruction" && !embeddings.empty()) vocab = 1;  // known once the file is read
    code_config(std::max<std::size_t>(1, vocab));
    train_config().validate();
    if (scalar_bits < 1 || scalar_bits > 32) throw Error("config: scalar.bits must be in [1, 32]");
    if (nn_k == 0) throw Error("config: nn_k must be positive");
    if (corpus_validation < 0 || corpus_test < 0 || corpus_validation + corpus_test >= 1) {
        throw Error("config: corpus.validation + corpus.test must be below 1");
    }
}

TrainConfig ExperimentConfig::train_config() const {
    TrainConfig t;
    t.epochs = epochs;
    t.batch_size = batch_size;
    t.learning_rate = lr;
    t.optimizer = optimizer;
    t.schedule = {schedule, tau_init, tau_min, tau_horizon};
    t.entropy_weight = entropy_weight;
    t.entropy_ramp = entropy_ramp;
    t.lambda_ramp = lambda_ramp;
    t.clip_norm = clip_norm;
    t.relaxation = relaxation;
    t.guidance = {guidance, keep_prob, lambda, alpha, beta, per_symbol_mask, autoencoder, encoder_hidden};
    t.seed = seed;
    return t;
}

ComposerSpec ExperimentConfig::composer_spec() const { return {composer, hidden, lstm_tied_gate}; }

CodeConfig ExperimentConfig::code_config(std::size_t vocab) const {
    CodeConfig c{vocab, way, dims, code_dim, lossy};
    c.validate();
    return c;
}

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& e : entries()) k.push_back(e.key);
        return k;
    }();
    return keys;
}

const std::string& config_key_doc(const std::string& key) { return entry(key).doc; }

ExperimentConfig read_config(std::istream& is) {
    ExperimentConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw Error("config: line " + std::to_string(lineno) + ": expected key = value");
        try {
            cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
        } catch (const Error& e) {
            std::string what = e.what();
            if (what.rfind("config: ", 0) == 0) what.erase(0, 8);
            throw Error("config: line " + std::to_string(lineno) + ": " + what);
        }
    }
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot read " + path);
    return read_config(is);
}

void write_config(std::ostream& os, const ExperimentConfig& cfg) {
    for (const auto& e : entries()) os << "# " << e.doc << '\n' << e.key << " = " << e.get(cfg) << '\n';
}

}  // namespace kdc
