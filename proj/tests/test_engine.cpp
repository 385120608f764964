#include "zsdg/checkpoint.hpp"
#include "zsdg/engine.hpp"
#include "zsdg/error.hpp"
#include "zsdg/store.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

using namespace zsdg;
namespace fs = std::filesystem;

namespace {

RunConfig small_config(Method method) {
    RunConfig c;
    c.method = method;
    c.epochs = 2;
    c.batch_size = 32;
    c.extractor_hidden = {24};
    c.decoder_hidden = {24};
    c.critic_hidden = {8};
    c.synthetic_per_class = 12;
    c.head_epochs = 2;
    return c;
}

const Experiment& synthetic() {
    static const Experiment ex = load_experiment(small_config(Method::SAgg));
    return ex;
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("zsdg_engine_" + name);
    fs::remove_all(p);
    return p;
}

void check_decomposition(const TermValues& t, double lambda, const std::string& what) {
    INFO(what);
    const double sum = t.ce + lambda * t.semantic + t.reconstruction + t.aux;
    CHECK(std::abs(t.total - sum) < 1e-9);
}

}  // namespace

TEST_CASE("tensor container byte layout") {
    const std::vector<NamedTensor> one{{"w", Tensor::matrix(2, 2, {1, 2, 3, 4})}};
    const auto bytes = encode_tensors(one);
    CHECK(bytes.size() == 5 + 4 + 2 + 1 + 1 + 8 + 32);
    CHECK(std::string(bytes.begin(), bytes.begin() + 5) == "ZSDG1");
    // little-endian count
    CHECK(bytes[5] == 1);
    CHECK(bytes[6] == 0);
    CHECK(bytes[9] == 1);
    CHECK(bytes[11] == 'w');
    CHECK(bytes[12] == 2);

    const auto back = decode_tensors(bytes);
    REQUIRE(back.size() == 1);
    CHECK(back[0].first == "w");
    CHECK(back[0].second == one[0].second);
    CHECK(encode_tensors(back) == bytes);

    auto wrong = bytes;
    wrong[4] = '2';
    CHECK_THROWS_AS(decode_tensors(wrong), FormatError);
    auto truncated = bytes;
    truncated.resize(bytes.size() - 3);
    CHECK_THROWS_AS(decode_tensors(truncated), FormatError);
    auto trailing = bytes;
    trailing.push_back(0);
    CHECK_THROWS_AS(decode_tensors(trailing), FormatError);
}

TEST_CASE("checkpoint files round-trip byte for byte") {
    ModelSpec s;
    s.input_dim = 10;
    s.extractor_hidden = {6};
    s.embedding_dim = 4;
    s.num_classes = 3;
    s.num_decoders = 2;
    s.decoder_hidden = {5};
    s.critic = true;
    s.critic_hidden = {3};
    const ModelBundle m = init_model(s, 21);
    const fs::path dir = scratch("ckpt");
    fs::create_directories(dir);
    save_checkpoint(m, dir / "a.bin");
    const ModelBundle back = load_checkpoint(dir / "a.bin");
    CHECK(back == m);
    save_checkpoint(back, dir / "b.bin");
    CHECK(read_bytes(dir / "a.bin") == read_bytes(dir / "b.bin"));
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.bin"), IoError);
    fs::remove_all(dir);
}

TEST_CASE("prepared-data store round trip and overwrite guard") {
    const fs::path dir = scratch("store");
    PreparedData data;
    data.dataset = "synthetic";
    data.domains = {synthetic().domains[0], synthetic().domains[1]};
    data.settings = synthetic().settings;
    data.embeddings = synthetic().table;
    data.seed = 4;
    write_prepared(dir, data, false);
    const PreparedData back = read_prepared(dir);
    CHECK(back.dataset == "synthetic");
    REQUIRE(back.domains.size() == 2);
    CHECK(back.domains[1].images == data.domains[1].images);
    CHECK(back.domains[1].angle == data.domains[1].angle);
    CHECK(back.domains[1].tag == data.domains[1].tag);
    CHECK(back.seed == 4);
    REQUIRE(back.embeddings.has_value());
    CHECK(back.embeddings->words() == data.embeddings->words());
    CHECK(back.settings.size() == data.settings.size());

    CHECK_THROWS_AS(write_prepared(dir, data, false), IoError);
    CHECK_NOTHROW(write_prepared(dir, data, true));
    CHECK_THROWS_AS(read_prepared(dir / "nowhere"), IoError);
    fs::remove_all(dir);
}

TEST_CASE("method names") {
    for (const auto& name : method_names()) CHECK(to_string(parse_method(name)) == name);
    CHECK_THROWS_AS(parse_method("s-gan"), ConfigError);
    CHECK(is_semantic(Method::SFc));
    CHECK_FALSE(is_semantic(Method::Mtae));
}

TEST_CASE("config validation") {
    RunConfig c = small_config(Method::SAgg);
    c.lambda = -1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_config(Method::SAgg);
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_config(Method::SAgg);
    c.dataset = "fmnist";
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_config(Method::SAgg);
    c.target_domain = 9;
    CHECK_THROWS_AS(train(c, synthetic()), ConfigError);
    c = small_config(Method::SAgg);
    c.setting = "setting9";
    CHECK_THROWS_AS(train(c, synthetic()), ConfigError);
    c = small_config(Method::SAgg);
    c.data_dir = "/nonexistent/prepared";
    CHECK_THROWS_AS(c.validate(), IoError);
}

TEST_CASE("derived seeds are distinct") {
    std::set<std::uint64_t> seen;
    for (std::uint64_t s = 0; s < 20; ++s) {
        for (std::uint64_t k = 0; k < 20; ++k) seen.insert(derive_seed(s, k));
    }
    CHECK(seen.size() == 400);
    CHECK(derive_seed(3, 4) == derive_seed(3, 4));
}

TEST_CASE("training is deterministic for every method") {
    for (const auto& name : method_names()) {
        INFO(name);
        const RunConfig c = small_config(parse_method(name));
        const TrainOutput a = train_model(c, synthetic());
        const TrainOutput b = train_model(c, synthetic());
        CHECK(a.model == b.model);
        REQUIRE(a.record.epochs.size() == c.epochs);
        for (std::size_t e = 0; e < c.epochs; ++e) CHECK(a.record.epochs[e].total == b.record.epochs[e].total);
        CHECK(a.record.critic_loss == b.record.critic_loss);
        CHECK(a.record.accuracy.zsdg.confusion == b.record.accuracy.zsdg.confusion);
        CHECK(a.record.accuracy.dg.confusion == b.record.accuracy.dg.confusion);

        RunConfig other = c;
        other.seed = 1;
        CHECK_FALSE(train_model(other, synthetic()).model == a.model);
    }
}

TEST_CASE("zero epochs evaluates the initial model") {
    RunConfig c = small_config(Method::SAgg);
    c.epochs = 0;
    const TrainOutput out = train_model(c, synthetic());
    CHECK(out.record.epochs.empty());
    CHECK(out.record.accuracy.zsdg.total > 0);
    CHECK(out.record.accuracy.dg.total > 0);
    CHECK(std::isfinite(out.record.initial.total));
}

TEST_CASE("reported terms add up to the total") {
    for (const auto& name : method_names()) {
        INFO(name);
        RunConfig c = small_config(parse_method(name));
        c.lambda = 0.7;
        const RunRecord r = train(c, synthetic());
        const double lambda = c.effective_lambda();
        CHECK(r.config.lambda == lambda);
        check_decomposition(r.initial, lambda, "initial");
        for (const auto& t : r.epochs) check_decomposition(t, lambda, "epoch");
        if (!is_semantic(c.method)) {
            for (const auto& t : r.epochs) CHECK(t.total == doctest::Approx(t.ce + t.reconstruction + t.aux));
        }
    }
}

TEST_CASE("semantic aggregation at lambda zero is vanilla aggregation") {
    RunConfig s = small_config(Method::SAgg);
    s.lambda = 0.0;
    RunConfig v = small_config(Method::Agg);
    v.lambda = 3.0;  // ignored by the vanilla method
    const TrainOutput a = train_model(s, synthetic());
    const TrainOutput b = train_model(v, synthetic());
    CHECK(a.model == b.model);
    CHECK(a.record.accuracy.dg.confusion == b.record.accuracy.dg.confusion);
    for (std::size_t e = 0; e < s.epochs; ++e) {
        CHECK(a.record.epochs[e].ce == b.record.epochs[e].ce);
        CHECK(a.record.epochs[e].total == b.record.epochs[e].total);
    }
}

TEST_CASE("aggregation training halves the cross-entropy") {
    // default architecture and schedule on the default benchmark
    RunConfig c;
    c.method = Method::SAgg;
    const RunRecord r = train(c);
    CHECK(r.epochs.back().ce < 0.5 * r.initial.ce);
}

TEST_CASE("feature-critic records a critic loss per epoch") {
    const RunRecord r = train(small_config(Method::SFc), synthetic());
    CHECK(r.critic_loss.size() == 2);
    for (double v : r.critic_loss) {
        CHECK(std::abs(v) <= 1.0);
    }
    CHECK(train(small_config(Method::SAgg), synthetic()).critic_loss.empty());
}

TEST_CASE("checkpoint path is honoured") {
    const fs::path dir = scratch("run_ckpt");
    fs::create_directories(dir);
    RunConfig c = small_config(Method::SMtae);
    c.epochs = 1;
    c.checkpoint_path = dir / "model.bin";
    const TrainOutput out = train_model(c, synthetic());
    CHECK(out.record.checkpoint == c.checkpoint_path);
    CHECK(load_checkpoint(c.checkpoint_path) == out.model);
    fs::remove_all(dir);
}
