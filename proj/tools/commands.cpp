#include "commands.hpp"

#include "zsdg/checkpoint.hpp"
#include "zsdg/error.hpp"
#include "zsdg/report.hpp"
#include "zsdg/store.hpp"
#include "zsdg/tsne.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <exception>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <thread>

namespace zsdg::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

int exit_code_for_current_exception(std::ostream& err) {
    try {
        throw;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
        return kIo;
    } catch (const FormatError& e) {
        err << "error: " << e.what() << "\n";
        return kIo;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return kIo;
    } catch (const StatsError& e) {
        err << "error: " << e.what() << "\n";
        return kDegenerate;
    } catch (const Error& e) {
        // DataError, ShapeError, NonFiniteError
        err << "error: " << e.what() << "\n";
        return kDegenerate;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    }
}

// --- config files -------------------------------------------------------------

namespace {

template <typename T>
T get_as(const json& v, const std::string& key) {
    try {
        return v.get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config key '" + key + "' has the wrong type (" + v.dump() + ")");
    }
}

OptimizerSpec optimizer_from_json(const json& doc, OptimizerSpec spec) {
    if (!doc.is_object()) throw ConfigError("config key 'optimizer' must be an object");
    for (const auto& [key, v] : doc.items()) {
        const std::string k = "optimizer." + key;
        if (key == "kind") spec.kind = parse_optimizer_kind(get_as<std::string>(v, k));
        else if (key == "learning_rate") spec.learning_rate = get_as<double>(v, k);
        else if (key == "momentum") spec.momentum = get_as<double>(v, k);
        else if (key == "beta1") spec.beta1 = get_as<double>(v, k);
        else if (key == "beta2") spec.beta2 = get_as<double>(v, k);
        else if (key == "epsilon") spec.epsilon = get_as<double>(v, k);
        else throw ConfigError("unknown config key '" + k + "'");
    }
    return spec;
}

}  // namespace

RunConfig config_from_json(const json& doc, RunConfig c) {
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [key, v] : doc.items()) {
        if (key == "method") c.method = parse_method(get_as<std::string>(v, key));
        else if (key == "dataset") c.dataset = get_as<std::string>(v, key);
        else if (key == "data") c.data_dir = get_as<std::string>(v, key);
        else if (key == "setting") c.setting = get_as<std::string>(v, key);
        else if (key == "target_domain") c.target_domain = get_as<std::size_t>(v, key);
        else if (key == "lambda") c.lambda = get_as<double>(v, key);
        else if (key == "eta") c.eta = get_as<double>(v, key);
        else if (key == "seed") c.seed = get_as<std::uint64_t>(v, key);
        else if (key == "epochs") c.epochs = get_as<std::size_t>(v, key);
        else if (key == "batch_size") c.batch_size = get_as<std::size_t>(v, key);
        else if (key == "extractor_hidden") c.extractor_hidden = get_as<std::vector<std::size_t>>(v, key);
        else if (key == "decoder_hidden") c.decoder_hidden = get_as<std::vector<std::size_t>>(v, key);
        else if (key == "critic_hidden") c.critic_hidden = get_as<std::vector<std::size_t>>(v, key);
        else if (key == "embeddings") c.embedding_path = get_as<std::string>(v, key);
        else if (key == "normalize_embeddings") c.normalize_embeddings = get_as<bool>(v, key);
        else if (key == "optimizer") c.optimizer = optimizer_from_json(v, c.optimizer);
        else if (key == "inner_lr") c.inner_lr = get_as<double>(v, key);
        else if (key == "head_epochs") c.head_epochs = get_as<std::size_t>(v, key);
        else if (key == "generalized_zsl") c.generalized_zsl = get_as<bool>(v, key);
        else if (key == "checkpoint") c.checkpoint_path = get_as<std::string>(v, key);
        else if (key == "synthetic_classes") c.synthetic_classes = get_as<std::size_t>(v, key);
        else if (key == "synthetic_per_class") c.synthetic_per_class = get_as<std::size_t>(v, key);
        else if (key == "synthetic_seed") c.synthetic_seed = get_as<std::uint64_t>(v, key);
        else throw ConfigError("unknown config key '" + key + "'");
    }
    return c;
}

namespace {

// Keys a config file may carry besides the run configuration itself.
struct OutputKeys {
    fs::path runs;
    fs::path record;
};

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

RunConfig load_config_with_outputs(const fs::path& path, RunConfig base, OutputKeys& outputs) {
    json doc = read_json_file(path);
    if (!doc.is_object()) throw ConfigError(path.string() + ": config must be a JSON object");
    if (doc.contains("runs")) {
        outputs.runs = get_as<std::string>(doc["runs"], "runs");
        doc.erase("runs");
    }
    if (doc.contains("record")) {
        outputs.record = get_as<std::string>(doc["record"], "record");
        doc.erase("record");
    }
    try {
        return config_from_json(doc, std::move(base));
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

}  // namespace

RunConfig load_config_file(const fs::path& path, RunConfig base) {
    OutputKeys ignored;
    return load_config_with_outputs(path, std::move(base), ignored);
}

// --- shared flags -------------------------------------------------------------

namespace {

// Data-source flags shared by train, sweep and tsne.
struct DataFlags {
    std::string dataset;
    std::string data;
    std::string setting;
    std::size_t target = 0;
    std::string embeddings;
    bool normalize = false;
    std::size_t synthetic_classes = 0;
    std::size_t synthetic_per_class = 0;
    std::uint64_t synthetic_seed = 0;
    std::map<std::string, CLI::Option*> opts;

    void add(CLI::App& app) {
        opts["dataset"] = app.add_option("--dataset", dataset, "Dataset id (checked against the data)");
        opts["data"] = app.add_option("--data", data, "Prepared data directory (default: in-memory synthetic)");
        opts["setting"] = app.add_option("--setting", setting, "Zero-shot setting name");
        opts["target"] = app.add_option("--target", target, "Held-out target domain index");
        opts["embeddings"] = app.add_option("--embeddings", embeddings, "Embedding text file");
        opts["normalize"] = app.add_flag("--normalize-embeddings", normalize, "Unit-normalise embeddings");
        opts["synthetic-classes"] = app.add_option("--synthetic-classes", synthetic_classes, "Synthetic class count");
        opts["synthetic-per-class"] = app.add_option("--synthetic-per-class", synthetic_per_class, "Synthetic images per class and domain");
        opts["synthetic-seed"] = app.add_option("--synthetic-seed", synthetic_seed, "Synthetic data seed");
    }

    bool given(const std::string& name) const { return opts.at(name)->count() > 0; }

    void apply(RunConfig& c) const {
        if (given("dataset")) c.dataset = dataset;
        if (given("data")) c.data_dir = data;
        if (given("setting")) c.setting = setting;
        if (given("target")) c.target_domain = target;
        if (given("embeddings")) c.embedding_path = embeddings;
        if (given("normalize")) c.normalize_embeddings = normalize;
        if (given("synthetic-classes")) c.synthetic_classes = synthetic_classes;
        if (given("synthetic-per-class")) c.synthetic_per_class = synthetic_per_class;
        if (given("synthetic-seed")) c.synthetic_seed = synthetic_seed;
    }
};

// Training flags mirroring RunConfig; anything given overrides the config file.
struct RunFlags {
    std::string config;
    DataFlags data;
    std::string method;
    double lambda = 0.0, eta = 0.0, lr = 0.0, momentum = 0.0, inner_lr = 0.0;
    std::uint64_t seed = 0;
    std::size_t epochs = 0, batch_size = 0, head_epochs = 0;
    std::string optimizer;
    std::vector<std::size_t> extractor_hidden, decoder_hidden, critic_hidden;
    bool generalized = false;
    std::map<std::string, CLI::Option*> opts;

    void add(CLI::App& app, bool single_run) {
        app.add_option("--config", config, "JSON run configuration")->check(CLI::ExistingFile);
        data.add(app);
        if (single_run) {
            opts["method"] = app.add_option("--method", method, "agg, s-agg, mtae, s-mtae, fc, s-fc");
            opts["lambda"] = app.add_option("--lambda", lambda, "Semantic loss weight");
            opts["seed"] = app.add_option("--seed", seed, "Global seed (default 0)");
        }
        opts["eta"] = app.add_option("--eta", eta, "Weight-decay regulariser weight");
        opts["epochs"] = app.add_option("--epochs", epochs, "Training epochs");
        opts["batch-size"] = app.add_option("--batch-size", batch_size, "Batch size");
        opts["optimizer"] = app.add_option("--optimizer", optimizer, "adam or sgd");
        opts["lr"] = app.add_option("--lr", lr, "Learning rate");
        opts["momentum"] = app.add_option("--momentum", momentum, "SGD momentum");
        opts["inner-lr"] = app.add_option("--inner-lr", inner_lr, "Feature-critic virtual step size");
        opts["head-epochs"] = app.add_option("--head-epochs", head_epochs, "Frozen-head epochs (mtae)");
        opts["extractor-hidden"] = app.add_option("--extractor-hidden", extractor_hidden, "Extractor hidden widths")->delimiter(',');
        opts["decoder-hidden"] = app.add_option("--decoder-hidden", decoder_hidden, "Decoder hidden widths")->delimiter(',');
        opts["critic-hidden"] = app.add_option("--critic-hidden", critic_hidden, "Critic hidden widths")->delimiter(',');
        opts["generalized"] = app.add_flag("--generalized", generalized, "Score ZSDG over seen and unseen prototypes");
    }

    bool given(const std::string& name) const {
        auto it = opts.find(name);
        return it != opts.end() && it->second->count() > 0;
    }

    RunConfig resolve(OutputKeys& outputs) const {
        RunConfig c;
        if (!config.empty()) c = load_config_with_outputs(config, c, outputs);
        data.apply(c);
        if (given("method")) c.method = parse_method(method);
        if (given("lambda")) c.lambda = lambda;
        if (given("seed")) c.seed = seed;
        if (given("eta")) c.eta = eta;
        if (given("epochs")) c.epochs = epochs;
        if (given("batch-size")) c.batch_size = batch_size;
        if (given("optimizer")) c.optimizer.kind = parse_optimizer_kind(optimizer);
        if (given("lr")) c.optimizer.learning_rate = lr;
        if (given("momentum")) c.optimizer.momentum = momentum;
        if (given("inner-lr")) c.inner_lr = inner_lr;
        if (given("head-epochs")) c.head_epochs = head_epochs;
        if (given("extractor-hidden")) c.extractor_hidden = extractor_hidden;
        if (given("decoder-hidden")) c.decoder_hidden = decoder_hidden;
        if (given("critic-hidden")) c.critic_hidden = critic_hidden;
        if (given("generalized")) c.generalized_zsl = generalized;
        return c;
    }
};

ordered_json terms_json(const TermValues& t) {
    return {{"total", t.total}, {"ce", t.ce}, {"semantic", t.semantic},
            {"reconstruction", t.reconstruction}, {"aux", t.aux}};
}

ordered_json accuracy_json(const ClassAccuracy& a) {
    return {{"accuracy", a.accuracy}, {"correct", a.correct}, {"total", a.total},
            {"classes", a.classes}, {"confusion", a.confusion}};
}

ordered_json record_json(const RunRecord& r, bool wall_time) {
    const RunConfig& c = r.config;
    ordered_json config = {
        {"method", to_string(c.method)},
        {"dataset", c.dataset},
        {"data", c.data_dir.string()},
        {"setting", c.setting},
        {"target_domain", c.target_domain},
        {"lambda", c.lambda},
        {"eta", c.eta},
        {"seed", c.seed},
        {"epochs", c.epochs},
        {"batch_size", c.batch_size},
        {"extractor_hidden", c.extractor_hidden},
        {"decoder_hidden", c.decoder_hidden},
        {"critic_hidden", c.critic_hidden},
        {"embeddings", c.embedding_path.string()},
        {"normalize_embeddings", c.normalize_embeddings},
        {"optimizer",
         {{"kind", to_string(c.optimizer.kind)},
          {"learning_rate", c.optimizer.learning_rate},
          {"momentum", c.optimizer.momentum},
          {"beta1", c.optimizer.beta1},
          {"beta2", c.optimizer.beta2},
          {"epsilon", c.optimizer.epsilon}}},
        {"inner_lr", c.inner_lr},
        {"head_epochs", c.head_epochs},
        {"generalized_zsl", c.generalized_zsl},
        {"checkpoint", c.checkpoint_path.string()},
        {"synthetic_classes", c.synthetic_classes},
        {"synthetic_per_class", c.synthetic_per_class},
        {"synthetic_seed", c.synthetic_seed},
    };
    ordered_json epochs = ordered_json::array();
    for (const auto& t : r.epochs) epochs.push_back(terms_json(t));
    return {{"config", config},
            {"target_tag", r.target_tag},
            {"initial_loss", terms_json(r.initial)},
            {"epoch_loss", epochs},
            {"critic_loss", r.critic_loss},
            {"dg", accuracy_json(r.accuracy.dg)},
            {"zsdg", accuracy_json(r.accuracy.zsdg)},
            {"wall_s", wall_time ? r.wall_seconds : 0.0},
            {"checkpoint", r.checkpoint.string()}};
}

std::string summary_line(const RunRecord& r) {
    std::string s = to_string(r.config.method) + " " + r.config.dataset + "/" + r.config.setting +
                    " target=" + r.target_tag + " seed=" + std::to_string(r.config.seed) +
                    " lambda=" + format_double(r.config.lambda) +
                    " dg=" + format_double(r.accuracy.dg.accuracy) +
                    " zsdg=" + format_double(r.accuracy.zsdg.accuracy);
    if (!r.epochs.empty()) {
        s += " loss=" + format_double(r.initial.total) + "->" + format_double(r.epochs.back().total);
    }
    return s;
}

// --- prepare ------------------------------------------------------------------

struct PrepareFlags {
    std::string dataset;
    std::string input;
    std::string output;
    std::vector<double> angles = default_angles();
    std::size_t cap = 0;
    bool enlarge = false;
    bool force = false;
    std::uint64_t seed = 0;
    std::string embeddings;
    std::size_t synthetic_classes = 6;
    std::size_t synthetic_per_class = 50;
};

fs::path first_existing(const fs::path& dir, std::initializer_list<const char*> names) {
    for (const char* n : names) {
        if (fs::exists(dir / n)) return dir / n;
    }
    throw IoError("none of the expected files found in " + dir.string() + " (looked for " +
                  *names.begin() + " and variants)");
}

LabeledImageSet load_base(const PrepareFlags& f) {
    const fs::path in = f.input;
    if (f.input.empty()) throw ConfigError("--input is required for dataset " + f.dataset);
    if (!fs::is_directory(in)) throw IoError("input directory " + in.string() + " does not exist");
    if (f.dataset == "fmnist") {
        return load_idx(first_existing(in, {"train-images-idx3-ubyte", "train-images.idx3-ubyte"}),
                        first_existing(in, {"train-labels-idx1-ubyte", "train-labels.idx1-ubyte"}),
                        fmnist_classes());
    }
    if (f.dataset == "cifar10") {
        fs::path dir = fs::exists(in / "cifar-10-batches-bin") ? in / "cifar-10-batches-bin" : in;
        std::vector<fs::path> files;
        for (int b = 1; b <= 5; ++b) {
            const fs::path p = dir / ("data_batch_" + std::to_string(b) + ".bin");
            if (fs::exists(p)) files.push_back(p);
        }
        if (files.empty()) throw IoError("no data_batch_*.bin files in " + dir.string());
        return load_cifar_binary(files, cifar10_classes(), 1);
    }
    if (f.dataset == "cifar100") {
        fs::path dir = fs::exists(in / "cifar-100-binary") ? in / "cifar-100-binary" : in;
        const std::vector<fs::path> files{first_existing(dir, {"train.bin"})};
        return load_cifar_binary(files, cifar100_classes(), 2);
    }
    throw ConfigError("unknown dataset '" + f.dataset + "' (fmnist, cifar10, cifar100, synthetic)");
}

// The part of a large embedding file that the class names need.
EmbeddingTable embedding_subset(const EmbeddingTable& full, const std::vector<std::string>& classes) {
    EmbeddingTable out(full.dim());
    std::set<std::string> wanted;
    for (const auto& c : classes) {
        (void)full.lookup(c);  // reject unresolvable names up front
        if (full.contains(c)) {
            wanted.insert(c);
            continue;
        }
        std::string token;
        for (char ch : c + "-") {
            if (ch == '-' || ch == '_') {
                if (!token.empty()) wanted.insert(token);
                token.clear();
            } else {
                token += ch;
            }
        }
    }
    for (const auto& w : full.words()) {
        if (wanted.count(w)) out.insert(w, *full.find(w));
    }
    return out;
}

int cmd_prepare(const PrepareFlags& f, std::ostream& out) {
    if (f.output.empty()) throw ConfigError("--output is required");
    if (fs::exists(manifest_path(f.output)) && !f.force) {
        throw IoError(manifest_path(f.output).string() + " already exists (use --force to overwrite)");
    }
    PreparedData data;
    data.dataset = f.dataset;
    data.seed = f.seed;
    data.per_class_cap = f.cap;
    data.enlarge_canvas = f.enlarge;
    if (f.dataset == "synthetic") {
        SyntheticSpec spec;
        spec.classes = f.synthetic_classes;
        spec.per_class = f.synthetic_per_class;
        spec.angles = f.angles;
        spec.seed = f.seed;
        SyntheticUniverse u = make_synthetic_zsdg(spec);
        if (f.cap > 0 || f.enlarge) {
            LabeledImageSet base = u.domains.front().images;
            if (u.domains.front().angle != 0.0) throw ConfigError("synthetic capping needs a 0 degree first angle");
            if (f.cap > 0) base = cap_per_class(base, f.cap, f.seed);
            u.domains = build_rotated_domains(base, f.angles, f.enlarge);
        }
        data.domains = std::move(u.domains);
        data.settings = std::move(u.settings);
        data.embeddings = std::move(u.embeddings);
        if (!f.embeddings.empty()) throw ConfigError("the synthetic dataset brings its own embeddings");
    } else {
        LabeledImageSet base = load_base(f);
        if (f.cap > 0) base = cap_per_class(base, f.cap, f.seed);
        data.domains = build_rotated_domains(base, f.angles, f.enlarge);
        data.settings = builtin_settings(f.dataset);
        if (!f.embeddings.empty()) {
            data.embeddings = embedding_subset(load_embedding_text(f.embeddings),
                                               data.domains.front().images.classes());
        }
    }
    write_prepared(f.output, data, f.force);
    out << "prepared " << data.domains.size() << " domains of " << data.domains.front().images.size()
        << " images (" << f.dataset << ") in " << f.output << "\n";
    return kOk;
}

// --- train / sweep ----------------------------------------------------------

int cmd_train(const RunFlags& flags, const std::string& checkpoint, const std::string& runs_flag,
              const std::string& record_flag, bool no_wall, std::ostream& out) {
    OutputKeys outputs;
    RunConfig config = flags.resolve(outputs);
    if (!checkpoint.empty()) config.checkpoint_path = checkpoint;
    if (!runs_flag.empty()) outputs.runs = runs_flag;
    if (!record_flag.empty()) outputs.record = record_flag;
    const RunRecord record = train(config);
    if (!outputs.runs.empty()) {
        const RunRow row = to_row(record, !no_wall);
        append_runs_csv(outputs.runs, std::span(&row, 1));
    }
    if (!outputs.record.empty()) {
        write_file_atomic(outputs.record, record_json(record, !no_wall).dump(2) + "\n");
    }
    out << summary_line(record) << "\n";
    return kOk;
}

struct SweepFlags {
    std::vector<double> lambdas;
    std::vector<std::uint64_t> seeds;
    std::size_t num_seeds = 0;
    std::vector<std::string> methods;
    std::vector<std::size_t> targets;
    std::size_t jobs = 1;
    std::string runs;
    std::string records;
    bool no_wall = false;
};

std::string record_file_name(const RunConfig& c) {
    return to_string(c.method) + "_t" + std::to_string(c.target_domain) + "_l" +
           format_double(c.lambda) + "_s" + std::to_string(c.seed) + ".json";
}

int cmd_sweep(const RunFlags& flags, const SweepFlags& s, std::ostream& out) {
    OutputKeys outputs;
    const RunConfig base = flags.resolve(outputs);
    const fs::path runs_path = s.runs.empty() ? outputs.runs : fs::path(s.runs);
    if (runs_path.empty()) throw ConfigError("sweep needs --runs (or a 'runs' key in the config)");
    if (!s.seeds.empty() && s.num_seeds > 0) throw ConfigError("give --seeds or --num-seeds, not both");
    if (s.jobs == 0) throw ConfigError("--jobs must be positive");

    std::vector<std::uint64_t> seeds = s.seeds;
    if (s.num_seeds > 0) {
        for (std::uint64_t k = 0; k < s.num_seeds; ++k) seeds.push_back(k);
    }
    if (seeds.empty()) seeds.push_back(base.seed);
    std::vector<Method> methods;
    for (const auto& m : s.methods) methods.push_back(parse_method(m));
    if (methods.empty()) methods.push_back(base.method);
    const std::vector<double> lambdas = s.lambdas.empty() ? std::vector<double>{base.lambda} : s.lambdas;
    const std::vector<std::size_t> targets =
        s.targets.empty() ? std::vector<std::size_t>{base.target_domain} : s.targets;

    std::vector<RunConfig> grid;
    for (Method m : methods) {
        for (std::size_t t : targets) {
            for (double l : lambdas) {
                for (std::uint64_t seed : seeds) {
                    RunConfig c = base;
                    c.method = m;
                    c.target_domain = t;
                    c.lambda = l;
                    c.seed = seed;
                    c.validate();
                    grid.push_back(std::move(c));
                }
            }
        }
    }
    const Experiment experiment = load_experiment(base);
    if (!s.records.empty()) fs::create_directories(s.records);

    // Workers finish in any order; rows are committed in grid order so the
    // CSV does not depend on --jobs.
    std::vector<std::optional<RunRow>> done(grid.size());
    std::vector<std::exception_ptr> errors(grid.size());
    std::size_t next_commit = 0;
    std::atomic<std::size_t> next_run{0};
    std::atomic<bool> failed{false};
    std::mutex mu;
    auto commit_ready = [&] {
        std::vector<RunRow> rows;
        while (next_commit < grid.size() && done[next_commit]) rows.push_back(*done[next_commit++]);
        if (!rows.empty()) append_runs_csv(runs_path, rows);
    };
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next_run++;
            if (i >= grid.size() || failed) return;
            try {
                const RunRecord r = train(grid[i], experiment);
                if (!s.records.empty()) {
                    write_file_atomic(fs::path(s.records) / record_file_name(grid[i]),
                                      record_json(r, !s.no_wall).dump(2) + "\n");
                }
                std::lock_guard lock(mu);
                done[i] = to_row(r, !s.no_wall);
                out << "[" << (i + 1) << "/" << grid.size() << "] " << summary_line(r) << "\n";
                commit_ready();
            } catch (...) {
                std::lock_guard lock(mu);
                errors[i] = std::current_exception();
                failed = true;
            }
        }
    };
    const std::size_t nthreads = std::min(s.jobs, grid.size());
    if (nthreads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < nthreads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    out << "appended " << grid.size() << " runs to " << runs_path.string() << "\n";
    return kOk;
}

// --- tsne -------------------------------------------------------------------

struct TsneFlags {
    std::string checkpoint;
    std::string split = "target";
    std::size_t max_points = 1000;
    TsneOptions options;
    std::string out_csv;
    std::string out_svg;
};

int cmd_tsne(const RunFlags& flags, const TsneFlags& t, std::ostream& out) {
    if (t.out_csv.empty() && t.out_svg.empty()) throw ConfigError("tsne needs --out-csv and/or --out-svg");
    if (!fs::exists(t.checkpoint)) throw IoError("checkpoint " + t.checkpoint + " does not exist");
    OutputKeys outputs;
    const RunConfig config = flags.resolve(outputs);
    const Experiment ex = load_experiment(config);
    const ModelBundle model = load_checkpoint(t.checkpoint);
    if (config.target_domain >= ex.domains.size()) {
        throw ConfigError("target domain " + std::to_string(config.target_domain) + " outside " +
                          std::to_string(ex.domains.size()) + " domains");
    }
    const SettingSplit split = apply_setting(ex.domains, ex.setting(config.setting), config.target_domain);
    const LabeledImageSet* set = nullptr;
    if (t.split == "target") set = &ex.domains[config.target_domain].images;
    else if (t.split == "zsdg") set = &split.eval_zsdg;
    else if (t.split == "dg") set = &split.eval_dg;
    else throw ConfigError("--split must be target, zsdg or dg");
    if (set->empty()) throw DataError("no images to project");

    std::vector<std::size_t> keep;
    const std::size_t stride = t.max_points > 0 && set->size() > t.max_points
                                   ? (set->size() + t.max_points - 1) / t.max_points
                                   : 1;
    for (std::size_t i = 0; i < set->size(); i += stride) keep.push_back(i);
    const LabeledImageSet chosen = set->select(keep);
    const Tensor features = extract_features(model.extractor, chosen);
    const TsneResult r = tsne_project(features, t.options);
    const auto& labels = chosen.labels();
    if (!t.out_csv.empty()) write_file_atomic(t.out_csv, format_points_csv(r.points, labels, chosen.classes()));
    if (!t.out_svg.empty()) emit_scatter_svg(r.points, labels, chosen.classes(), t.out_svg);
    out << "projected " << chosen.size() << " points; KL " << format_double(r.kl_initial) << " -> "
        << format_double(r.kl_final) << "\n";
    return kOk;
}

// --- report -----------------------------------------------------------------

struct ReportFlags {
    std::string runs;
    std::string out_csv;
    std::string out_json;
    std::vector<std::string> wilcoxon;
    std::string pairing = "setting";
    std::string metric = "zsdg";
    std::string alternative = "two-sided";
    std::optional<double> lambda;
};

int cmd_report(const ReportFlags& f, std::ostream& out) {
    std::vector<RunRow> rows = read_runs_csv(f.runs);
    if (f.lambda) {
        std::erase_if(rows, [&](const RunRow& r) {
            return is_semantic(parse_method(r.method)) && r.lambda != *f.lambda;
        });
    }
    if (rows.empty()) throw DataError("no runs in " + f.runs);
    const auto cells = aggregate_runs(rows);
    out << format_cells_csv(cells);

    std::optional<WilcoxonReport> test;
    if (!f.wilcoxon.empty()) {
        if (f.wilcoxon.size() != 2) throw ConfigError("--wilcoxon takes two methods: a,b");
        WilcoxonReport w;
        w.method_a = f.wilcoxon[0];
        w.method_b = f.wilcoxon[1];
        w.pairing = parse_pairing(f.pairing);
        w.metric = f.metric;
        w.pairs = pair_methods(rows, w.method_a, w.method_b, w.pairing, w.metric);
        w.result = wilcoxon_signed_rank(w.pairs.a, w.pairs.b, parse_alternative(f.alternative));
        out << "wilcoxon " << w.method_a << " vs " << w.method_b << " (" << to_string(w.pairing)
            << ", " << w.metric << ", " << f.alternative << "): n=" << w.result.n
            << " W=" << format_double(w.result.statistic)
            << " p=" << format_double(w.result.p_value) << (w.result.exact ? " exact" : " normal")
            << "\n";
        test = std::move(w);
    }
    if (!f.out_csv.empty()) write_file_atomic(f.out_csv, format_cells_csv(cells));
    if (!f.out_json.empty()) write_file_atomic(f.out_json, format_report_json(rows, cells, test));
    return kOk;
}

}  // namespace

// --- entry point ------------------------------------------------------------

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Zero-shot domain generalisation experiments"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    PrepareFlags prep;
    auto* prepare = app.add_subcommand("prepare", "Build rotated domains and a manifest");
    prepare->add_option("--dataset", prep.dataset, "fmnist, cifar10, cifar100 or synthetic")->required();
    prepare->add_option("--input", prep.input, "Directory with the raw dataset files");
    prepare->add_option("--output", prep.output, "Output directory")->required();
    prepare->add_option("--angles", prep.angles, "Rotation angles in degrees")->delimiter(',');
    prepare->add_option("--per-class-cap", prep.cap, "Keep at most N images per class");
    prepare->add_flag("--enlarge-canvas", prep.enlarge, "Pad to ceil(side*sqrt(2)) before rotating");
    prepare->add_flag("--force", prep.force, "Overwrite an existing manifest");
    prepare->add_option("--seed", prep.seed, "Subsampling / synthetic seed (default 0)");
    prepare->add_option("--embeddings", prep.embeddings, "Embedding text file to subset into the output");
    prepare->add_option("--synthetic-classes", prep.synthetic_classes, "Synthetic class count");
    prepare->add_option("--synthetic-per-class", prep.synthetic_per_class, "Synthetic images per class");

    RunFlags train_flags;
    std::string train_runs, train_record;
    bool train_no_wall = false;
    auto* train_cmd = app.add_subcommand("train", "Train and evaluate one run");
    train_flags.add(*train_cmd, true);
    train_cmd->add_option("--runs", train_runs, "Append the run to this CSV");
    train_cmd->add_option("--record", train_record, "Write the full run record as JSON");
    std::string train_checkpoint;
    train_cmd->add_option("--checkpoint", train_checkpoint, "Save the trained model here");
    train_cmd->add_flag("--no-wall-time", train_no_wall, "Write 0 for wall time (reproducible output)");

    RunFlags sweep_flags;
    SweepFlags sweep;
    auto* sweep_cmd = app.add_subcommand("sweep", "Run a grid of methods x lambdas x seeds");
    sweep_flags.add(*sweep_cmd, false);
    sweep_cmd->add_option("--lambdas", sweep.lambdas, "Lambda values")->delimiter(',');
    auto* seeds_opt = sweep_cmd->add_option("--seeds", sweep.seeds, "Seeds")->delimiter(',');
    sweep_cmd->add_option("--num-seeds", sweep.num_seeds, "Use seeds 0..N-1")->excludes(seeds_opt);
    sweep_cmd->add_option("--methods", sweep.methods, "Methods")->delimiter(',');
    sweep_cmd->add_option("--targets", sweep.targets, "Target domain indices")->delimiter(',');
    sweep_cmd->add_option("--jobs", sweep.jobs, "Parallel workers");
    sweep_cmd->add_option("--runs", sweep.runs, "Runs CSV to append to");
    sweep_cmd->add_option("--records", sweep.records, "Directory for per-run JSON records");
    sweep_cmd->add_flag("--no-wall-time", sweep.no_wall, "Write 0 for wall time (reproducible output)");

    RunFlags tsne_flags;
    TsneFlags tsne;
    auto* tsne_cmd = app.add_subcommand("tsne", "Project latent features to 2-D");
    tsne_flags.add(*tsne_cmd, false);
    tsne_cmd->add_option("--checkpoint", tsne.checkpoint, "Trained model")->required();
    tsne_cmd->add_option("--split", tsne.split, "target (all classes), zsdg or dg");
    tsne_cmd->add_option("--max-points", tsne.max_points, "Subsample to at most N points (0 = all)");
    tsne_cmd->add_option("--perplexity", tsne.options.perplexity, "Perplexity");
    tsne_cmd->add_option("--iterations", tsne.options.iterations, "Gradient iterations");
    tsne_cmd->add_option("--tsne-seed", tsne.options.seed, "Layout seed (default 0)");
    tsne_cmd->add_option("--out-csv", tsne.out_csv, "Points CSV");
    tsne_cmd->add_option("--out-svg", tsne.out_svg, "Scatter SVG");

    ReportFlags rep;
    auto* report_cmd = app.add_subcommand("report", "Aggregate runs and test significance");
    report_cmd->add_option("--runs", rep.runs, "Runs CSV")->required();
    report_cmd->add_option("--out-csv", rep.out_csv, "Aggregate table CSV");
    report_cmd->add_option("--out-json", rep.out_json, "JSON report");
    report_cmd->add_option("--wilcoxon", rep.wilcoxon, "Two methods to compare: a,b")->delimiter(',');
    report_cmd->add_option("--pairing", rep.pairing, "setting or domain");
    report_cmd->add_option("--metric", rep.metric, "zsdg or dg");
    report_cmd->add_option("--alternative", rep.alternative, "two-sided, greater or less");
    double lambda_filter = 0.0;
    auto* lambda_opt = report_cmd->add_option("--lambda", lambda_filter,
                                              "Keep only semantic runs with this lambda");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        std::string help;
        for (auto* sub : app.get_subcommands()) help = sub->help();
        err << "error: " << e.what() << "\n" << (help.empty() ? app.help() : help);
        return kUsage;
    }

    try {
        if (prepare->parsed()) return cmd_prepare(prep, out);
        if (train_cmd->parsed()) {
            return cmd_train(train_flags, train_checkpoint, train_runs, train_record, train_no_wall, out);
        }
        if (sweep_cmd->parsed()) return cmd_sweep(sweep_flags, sweep, out);
        if (tsne_cmd->parsed()) return cmd_tsne(tsne_flags, tsne, out);
        if (report_cmd->parsed()) {
            if (lambda_opt->count() > 0) rep.lambda = lambda_filter;
            return cmd_report(rep, out);
        }
    } catch (...) {
        return exit_code_for_current_exception(err);
    }
    return kUsage;
}

}  // namespace zsdg::cli
