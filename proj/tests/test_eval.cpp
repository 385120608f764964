#include "support.hpp"

#include "zsdg/error.hpp"
#include "zsdg/eval.hpp"
#include "zsdg/report.hpp"
#include "zsdg/stats.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace zsdg;
using testing::random_tensor;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> class_names(std::size_t k) {
    std::vector<std::string> out;
    for (std::size_t c = 0; c < k; ++c) out.push_back("k" + std::to_string(c));
    return out;
}

// Table whose class c embedding is the c-th unit vector.
EmbeddingTable basis_table(std::size_t k) {
    EmbeddingTable t(k);
    for (std::size_t c = 0; c < k; ++c) {
        std::vector<double> v(k, 0.0);
        v[c] = 1.0;
        t.insert("k" + std::to_string(c), v);
    }
    return t;
}

// One-hot images: pixel c lit for class c.
LabeledImageSet one_hot_set(std::size_t k, std::size_t per_class) {
    LabeledImageSet set(1, k, 1, class_names(k));
    for (std::size_t i = 0; i < per_class; ++i) {
        for (std::size_t c = 0; c < k; ++c) {
            std::vector<double> px(k, 0.0);
            px[c] = 1.0;
            set.add(px, c);
        }
    }
    return set;
}

ModelBundle identity_model(std::size_t k) {
    ModelBundle m;
    m.extractor = Mlp({DenseLayer{Tensor::identity(k), Tensor({1, k})}}, OutputActivation::Linear);
    m.head = Mlp({DenseLayer{Tensor::identity(k), Tensor({1, k})}}, OutputActivation::Linear);
    return m;
}

std::size_t brute_correct(const Tensor& features, const LabeledImageSet& set, const PrototypeSet& protos) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < features.rows(); ++i) {
        const std::size_t p = testing::brute_force_nearest(features.row(i), protos.matrix);
        if (protos.classes[p] == set.label_name(i)) ++correct;
    }
    return correct;
}

RunRow row(const std::string& method, std::uint64_t seed, double zsdg, double dg = 0.9) {
    RunRow r;
    r.method = method;
    r.dataset = "synthetic";
    r.setting = "setting1";
    r.target_domain = 3;
    r.seed = seed;
    r.lambda = 1.0;
    r.dg_acc = dg;
    r.zsdg_acc = zsdg;
    r.wall_s = 0.0;
    return r;
}

}  // namespace

TEST_CASE("ideal extractor scores perfectly in every mode") {
    const std::size_t k = 4;
    const EmbeddingTable table = basis_table(k);
    const LabeledImageSet set = one_hot_set(k, 5);
    const ModelBundle m = identity_model(k);
    const auto names = class_names(k);
    const std::vector<std::string> unseen{"k1", "k3"};

    const auto restricted = set.restrict_to(unseen);
    CHECK(zsdg_accuracy(m, restricted, table, unseen).accuracy == 1.0);
    CHECK(dg_accuracy(m, set, table, names, DgMode::Head).accuracy == 1.0);
    CHECK(dg_accuracy(m, set, table, names, DgMode::SemanticNn).accuracy == 1.0);

    ModelBundle headless = m;
    headless.head.reset();
    CHECK_THROWS_AS(dg_accuracy(headless, set, table, names, DgMode::Head), ConfigError);
    CHECK_THROWS_AS(zsdg_accuracy(m, LabeledImageSet(1, k, 1, names), table, unseen), DataError);
    // images of a class outside the prototype list
    CHECK_THROWS_AS(zsdg_accuracy(m, set, table, unseen), DataError);
}

TEST_CASE("confusion counts") {
    const std::vector<std::size_t> truth{0, 0, 1, 2, 2, 2};
    const std::vector<std::size_t> pred{0, 1, 1, 2, 0, 2};
    const ClassAccuracy a = score_predictions(class_names(3), truth, pred);
    CHECK(a.correct == 4);
    CHECK(a.total == 6);
    CHECK(a.accuracy == doctest::Approx(4.0 / 6.0));
    CHECK(a.confusion[0][1] == 1);
    CHECK(a.confusion[2][0] == 1);
    CHECK(a.confusion[2][2] == 2);
    CHECK_THROWS_AS(score_predictions(class_names(3), truth, std::vector<std::size_t>{0}), ShapeError);
    CHECK_THROWS_AS(score_predictions(class_names(3), {}, {}), DataError);
}

TEST_CASE("nearest labels equal an exhaustive scan") {
    std::mt19937_64 rng(12);
    PrototypeSet protos{class_names(7), random_tensor({7, 5}, rng)};
    const Tensor f = random_tensor({1000, 5}, rng, -2.0, 2.0);
    const auto got = nearest_labels(f, protos);
    for (std::size_t i = 0; i < f.rows(); ++i) CHECK(got[i] == testing::brute_force_nearest(f.row(i), protos.matrix));
}

TEST_CASE("accuracies agree with brute force on trained-free synthetic features") {
    const auto u = make_synthetic_zsdg(SyntheticSpec{});
    const auto& setting = u.settings.front();
    const DomainSet ds = make_domain_set(u.domains, setting, 3);
    ModelSpec spec;
    spec.input_dim = u.domains[0].images.image_size();
    spec.extractor_hidden = {32};
    spec.embedding_dim = 8;
    spec.num_classes = ds.seen.size();
    const ModelBundle m = init_model(spec, 4);
    const auto split = apply_setting(u.domains, setting, 3);

    const Tensor fz = extract_features(m.extractor, split.eval_zsdg);
    const PrototypeSet pz = build_prototypes(u.embeddings, split.unseen);
    CHECK(zsdg_accuracy(m, split.eval_zsdg, u.embeddings, split.unseen).correct ==
          brute_correct(fz, split.eval_zsdg, pz));

    const Tensor fd = extract_features(m.extractor, split.eval_dg, 7);
    CHECK(fd == extract_features(m.extractor, split.eval_dg));
    const PrototypeSet pd = build_prototypes(u.embeddings, split.seen);
    CHECK(dg_accuracy(m, split.eval_dg, u.embeddings, split.seen, DgMode::SemanticNn).correct ==
          brute_correct(fd, split.eval_dg, pd));

    // generalized mode scores against seen and unseen prototypes together
    std::vector<std::string> all = split.unseen;
    all.insert(all.end(), split.seen.begin(), split.seen.end());
    const PrototypeSet pg = build_prototypes(u.embeddings, all);
    CHECK(zsdg_accuracy(m, split.eval_zsdg, u.embeddings, split.unseen, true, split.seen).correct ==
          brute_correct(fz, split.eval_zsdg, pg));
}

TEST_CASE("random frozen extractor sits in the two-class chance band") {
    // Noise images with labels drawn independently of the pixels: every
    // prediction is a fair coin against the truth, so the count is
    // Binomial(2000, 1/2) with sd 0.011; the band is about five sd wide.
    std::mt19937_64 rng(33);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::bernoulli_distribution coin(0.5);
    const std::vector<std::string> unseen{"k0", "k1"};
    LabeledImageSet set(4, 4, 1, unseen);
    for (int i = 0; i < 2000; ++i) {
        std::vector<double> px(16);
        for (double& v : px) v = u(rng);
        set.add(px, coin(rng) ? 1 : 0);
    }
    EmbeddingTable table(3);
    table.insert("k0", {1.0, 0.0, 0.5});
    table.insert("k1", {-0.5, 1.0, 0.0});
    ModelSpec spec;
    spec.input_dim = 16;
    spec.extractor_hidden = {12};
    spec.embedding_dim = 3;
    const double acc = zsdg_accuracy(init_model(spec, 9), set, table, unseen).accuracy;
    CHECK(acc >= 0.44);
    CHECK(acc <= 0.56);
}

TEST_CASE("aggregate cells") {
    const std::vector<double> same{0.5, 0.5, 0.5};
    CHECK(aggregate(same).mean == 0.5);
    CHECK(aggregate(same).std == 0.0);
    const std::vector<double> two{0.4, 0.6};
    CHECK(aggregate(two).mean == doctest::Approx(0.5).epsilon(1e-15));
    // |a - b| / sqrt(2)
    CHECK(aggregate(two).std == doctest::Approx(0.2 / std::sqrt(2.0)).epsilon(1e-12));
    const std::vector<double> one{0.7};
    CHECK(aggregate(one).n == 1);
    CHECK(aggregate(one).std == 0.0);
    CHECK_THROWS_AS(aggregate(std::vector<double>{}), StatsError);

    std::mt19937_64 rng(5);
    std::vector<double> v(9);
    for (double& x : v) x = std::uniform_real_distribution<double>(0, 1)(rng);
    const AggregateCell ref = aggregate(v);
    for (int trial = 0; trial < 20; ++trial) {
        std::shuffle(v.begin(), v.end(), rng);
        const AggregateCell c = aggregate(v);
        CHECK(c.mean == doctest::Approx(ref.mean).epsilon(1e-14));
        CHECK(c.std == doctest::Approx(ref.std).epsilon(1e-12));
    }
}

TEST_CASE("report groups and rejects mixed cells") {
    std::vector<RunRow> rows{row("s-agg", 0, 0.4), row("s-agg", 1, 0.6), row("agg", 0, 0.5)};
    const auto cells = aggregate_runs(rows);
    REQUIRE(cells.size() == 2);
    CHECK(cells[0].method == "s-agg");
    CHECK(cells[0].zsdg.n == 2);
    CHECK(cells[0].zsdg.std == doctest::Approx(0.1414213562));
    CHECK_THROWS_AS(aggregate_group(rows), StatsError);
}

TEST_CASE("runs csv round-trips every number exactly") {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<RunRow> rows;
    for (std::uint64_t s = 0; s < 2; ++s) {
        RunRow r = row("s-mtae", s, u(rng), u(rng));
        r.lambda = u(rng);
        r.eta = 1e-5 * u(rng);
        r.wall_s = 100 * u(rng);
        rows.push_back(r);
    }
    const std::string text = format_runs_csv(rows);
    CHECK(std::count(text.begin(), text.end(), '\n') == 3);
    CHECK(text.substr(0, text.find('\n')) == "method,dataset,setting,target_domain,seed,lambda,eta,dg_acc,zsdg_acc,wall_s");

    // generic reader: split on commas, strtod
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    for (const auto& r : rows) {
        std::getline(in, line);
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
        REQUIRE(f.size() == 10);
        CHECK(std::strtod(f[5].c_str(), nullptr) == r.lambda);
        CHECK(std::strtod(f[6].c_str(), nullptr) == r.eta);
        CHECK(std::strtod(f[7].c_str(), nullptr) == r.dg_acc);
        CHECK(std::strtod(f[8].c_str(), nullptr) == r.zsdg_acc);
        CHECK(std::strtod(f[9].c_str(), nullptr) == r.wall_s);
        CHECK(parse_row(line) == r);
    }

    const fs::path dir = fs::temp_directory_path() / "zsdg_eval_csv";
    fs::remove_all(dir);
    fs::create_directories(dir);
    append_runs_csv(dir / "runs.csv", std::span(rows).first(1));
    append_runs_csv(dir / "runs.csv", std::span(rows).subspan(1));
    CHECK(read_runs_csv(dir / "runs.csv") == rows);
    emit_report(rows, dir / "again.csv", dir / "report.json");
    CHECK(read_runs_csv(dir / "again.csv") == rows);
    CHECK(fs::exists(dir / "report.json"));
    CHECK_THROWS_AS(emit_report({}, dir / "x.csv", dir / "x.json"), DataError);
    CHECK_THROWS_AS(parse_row("s-agg,synthetic"), FormatError);
    fs::remove_all(dir);
}

TEST_CASE("scatter svg counts") {
    const Tensor pts = Tensor::matrix(3, 2, {0, 0, 1, 2, -1, 0.5});
    const std::vector<std::size_t> labels{0, 1, 2};
    const std::vector<std::string> names{"a", "b", "c"};
    const std::string svg = scatter_svg(pts, labels, names);
    auto count = [&](const std::string& needle) {
        std::size_t n = 0;
        for (auto p = svg.find(needle); p != std::string::npos; p = svg.find(needle, p + 1)) ++n;
        return n;
    };
    // legend swatches are rects, so circles are the data points alone
    CHECK(count("<circle") == 3);
    CHECK(count("class=\"legend-entry\"") == 3);
    CHECK(svg.find("viewBox") != std::string::npos);
    CHECK(scatter_palette().size() == 12);
    CHECK(svg.find(scatter_palette()[2]) != std::string::npos);
    CHECK_THROWS_AS(scatter_svg(pts, std::vector<std::size_t>{0, 1}, names), ShapeError);
}
