#pragma once

#include "zsdg/data.hpp"
#include "zsdg/embeddings.hpp"
#include "zsdg/eval.hpp"
#include "zsdg/models.hpp"
#include "zsdg/objectives.hpp"
#include "zsdg/optim.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace zsdg {

enum class Method { Agg, SAgg, Mtae, SMtae, Fc, SFc };

std::string to_string(Method method);
Method parse_method(const std::string& name);
const std::vector<std::string>& method_names();
bool is_semantic(Method method);
DgMode dg_mode(Method method);

struct RunConfig {
    Method method = Method::SAgg;
    /// Expected dataset id; empty accepts whatever the data directory holds.
    std::string dataset;
    /// Prepared-data directory; empty means an in-memory synthetic benchmark.
    std::filesystem::path data_dir;
    std::string setting = "setting1";
    std::size_t target_domain = 3;
    double lambda = 1.0;
    double eta = 0.0;
    std::uint64_t seed = 0;
    std::size_t epochs = 30;
    std::size_t batch_size = 64;

    std::vector<std::size_t> extractor_hidden = {256, 128};
    std::vector<std::size_t> decoder_hidden = {128, 256};
    std::vector<std::size_t> critic_hidden = {32};

    /// Overrides the dataset's own embeddings when set.
    std::filesystem::path embedding_path;
    bool normalize_embeddings = false;

    OptimizerSpec optimizer;
    /// Feature-critic virtual step size; 0 means the optimiser learning rate.
    double inner_lr = 0.0;
    /// Epochs for the frozen-encoder head of vanilla MTAE.
    std::size_t head_epochs = 10;
    bool generalized_zsl = false;

    /// Written after training when set.
    std::filesystem::path checkpoint_path;

    // In-memory synthetic benchmark (used when data_dir is empty).
    std::size_t synthetic_classes = 6;
    std::size_t synthetic_per_class = 50;
    std::uint64_t synthetic_seed = 0;

    /// Lambda actually used: 0 for vanilla methods.
    double effective_lambda() const;
    void validate() const;
};

/// Domains, settings and class embeddings a run draws from.
struct Experiment {
    std::string dataset;
    std::vector<Domain> domains;
    EmbeddingTable table{1};
    std::vector<Setting> settings;

    const Setting& setting(const std::string& name) const;
};

Experiment load_experiment(const RunConfig& config);

struct RunRecord {
    RunConfig config;
    std::string target_tag;
    TermValues initial;                 // loss at the initial parameters
    std::vector<TermValues> epochs;     // mean over each epoch's batches
    std::vector<double> critic_loss;    // feature-critic methods only
    AccuracyReport accuracy;
    double wall_seconds = 0.0;
    std::filesystem::path checkpoint;
};

struct TrainOutput {
    RunRecord record;
    ModelBundle model;
};

TrainOutput train_model(const RunConfig& config, const Experiment& experiment);
RunRecord train(const RunConfig& config, const Experiment& experiment);
RunRecord train(const RunConfig& config);

/// Model spec a config implies for a given split.
ModelSpec model_spec(const RunConfig& config, std::size_t input_dim, std::size_t embedding_dim,
                     std::size_t seen_classes, std::size_t training_domains);

/// Independent sub-seed for stream `stream` of `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace zsdg
