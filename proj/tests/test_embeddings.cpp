#include "support.hpp"

#include "zsdg/embeddings.hpp"
#include "zsdg/error.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>

using namespace zsdg;
namespace fs = std::filesystem;

namespace {

const fs::path kFixture = fs::path(ZSDG_FIXTURES) / "glove12_50d.txt";

EmbeddingTable parse(const std::string& text) {
    std::istringstream in(text);
    return parse_embedding_text(in);
}

// Independent reader: whitespace split plus strtod.
std::map<std::string, std::vector<double>> read_plain(const fs::path& path) {
    std::map<std::string, std::vector<double>> out;
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream fields(line);
        std::string word, tok;
        fields >> word;
        while (fields >> tok) out[word].push_back(std::strtod(tok.c_str(), nullptr));
    }
    return out;
}

std::string error_of(const std::string& text) {
    try {
        parse(text);
    } catch (const FormatError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("two-word table") {
    const EmbeddingTable t = parse("cat 1.0 0.0\ndog 0.0 1.0\n");
    CHECK(t.dim() == 2);
    CHECK(t.size() == 2);
    CHECK(t.lookup("dog") == std::vector<double>{0.0, 1.0});
    CHECK_FALSE(t.normalized());
}

TEST_CASE("malformed lines name their line number") {
    CHECK(error_of("cat 1.0 0.0\ndog 0.0 1.0 2.0\n").find("line 2") != std::string::npos);
    CHECK(error_of("cat 1.0 0.0\ncat 0.0 1.0\n").find("duplicate") != std::string::npos);
    CHECK(error_of("cat 1.0 0.0\ndog 0.x 1.0\n").find("line 2") != std::string::npos);
    CHECK_THROWS_AS(parse(""), FormatError);
    std::istringstream in("cat 1 2 3\n");
    CHECK_THROWS_AS(parse_embedding_text(in, 2), FormatError);
}

TEST_CASE("fixture loads and round-trips exactly") {
    const EmbeddingTable t = load_embedding_text(kFixture);
    CHECK(t.dim() == 50);
    CHECK(t.size() == 12);
    const auto plain = read_plain(kFixture);
    for (const auto& [word, vec] : plain) CHECK(t.lookup(word) == vec);

    const fs::path tmp = fs::temp_directory_path() / "zsdg_embed_roundtrip.txt";
    save_embedding_text(t, tmp);
    const EmbeddingTable again = load_embedding_text(tmp, 50);
    CHECK(again.words() == t.words());
    for (const auto& w : t.words()) CHECK(again.lookup(w) == t.lookup(w));
    fs::remove(tmp);
}

TEST_CASE("compound names resolve to the mean of their tokens") {
    const EmbeddingTable t = load_embedding_text(kFixture);
    const auto pine = t.lookup("pine");
    const auto tree = t.lookup("tree");
    for (const char* name : {"pine-tree", "pine_tree"}) {
        const auto v = t.lookup(name);
        REQUIRE(v.size() == 50);
        for (std::size_t i = 0; i < 50; ++i) CHECK(v[i] == doctest::Approx((pine[i] + tree[i]) / 2).epsilon(1e-15));
    }
}

TEST_CASE("missing names list suggestions") {
    const EmbeddingTable t = load_embedding_text(kFixture);
    try {
        t.lookup("unknownword");
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("nearest available") != std::string::npos);
    }
    try {
        t.lookup("cta");
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("cat") != std::string::npos);
    }
    CHECK_THROWS_AS(t.lookup("pine-xylophone"), DataError);
    CHECK_THROWS_AS(load_embedding_text("/nonexistent/embeddings.txt"), IoError);
}

TEST_CASE("normalisation gives unit vectors and rejects zeros") {
    EmbeddingTable t = load_embedding_text(kFixture, std::nullopt, true);
    CHECK(t.normalized());
    for (const auto& w : t.words()) {
        double n2 = 0.0;
        for (double v : t.lookup(w)) n2 += v * v;
        CHECK(n2 == doctest::Approx(1.0).epsilon(1e-12));
    }
    EmbeddingTable z = parse("zero 0 0\none 1 0\n");
    CHECK_THROWS_AS(z.normalize(), DataError);
}

TEST_CASE("semantic loss values") {
    const EmbeddingTable t = parse("cat 1 2\ndog -1 0.5\n");
    const std::vector<std::string> names{"cat", "dog"};
    const PrototypeSet protos = build_prototypes(t, names);
    std::vector<std::size_t> labels{0, 1};

    ad::Graph g;
    auto exact = g.constant(Tensor::matrix(2, 2, {1, 2, -1, 0.5}));
    CHECK(semantic_loss(exact, labels, protos).item() == 0.0);
    auto shifted = g.constant(Tensor::matrix(2, 2, {2, 2, 0, 0.5}));
    CHECK(semantic_loss(shifted, labels, protos).item() == 1.0);

    std::mt19937_64 rng(4);
    Tensor f = testing::random_tensor({2, 2}, rng);
    const double d0 = (f.at(0, 0) - 1) * (f.at(0, 0) - 1) + (f.at(0, 1) - 2) * (f.at(0, 1) - 2);
    const double d1 = (f.at(1, 0) + 1) * (f.at(1, 0) + 1) + (f.at(1, 1) - 0.5) * (f.at(1, 1) - 0.5);
    CHECK(semantic_loss(g.constant(f), labels, protos).item() == doctest::Approx((d0 + d1) / 2).epsilon(1e-14));
    CHECK(semantic_loss(g.constant(f), names, t).item() == doctest::Approx((d0 + d1) / 2).epsilon(1e-14));

    CHECK_THROWS_AS(semantic_loss(g.constant(Tensor({2, 3})), labels, protos), ShapeError);
}

TEST_CASE("semantic loss gradient is 2 (f - w) / batch") {
    const EmbeddingTable t = load_embedding_text(kFixture);
    const std::vector<std::string> names{"cat", "dog", "truck"};
    const PrototypeSet protos = build_prototypes(t, names);
    std::vector<std::size_t> labels{2, 0, 1, 0};
    std::mt19937_64 rng(8);
    Tensor fv = testing::random_tensor({4, 50}, rng);
    ad::Graph g;
    auto f = g.parameter(fv);
    g.backward(semantic_loss(f, labels, protos));
    for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t c = 0; c < 50; ++c) {
            const double expected = 2.0 * (fv.at(r, c) - protos.matrix.at(labels[r], c)) / 4.0;
            CHECK(f.grad().at(r, c) == doctest::Approx(expected).epsilon(1e-14));
        }
    }
    auto r = testing::check_graph({fv}, [&](ad::Graph&, auto v) { return semantic_loss(v[0], labels, protos); });
    CHECK(r.max_rel < 1e-4);
}

TEST_CASE("nearest class rules") {
    const EmbeddingTable t = parse("a 0 0\nb 2 0\nc 0 3\n");
    const std::vector<std::string> names{"a", "b", "c"};
    const PrototypeSet protos = build_prototypes(t, names);
    const std::vector<double> on_c{0, 3};
    CHECK(nearest_class(on_c, protos) == "c");
    const std::vector<double> midway{1, 0};
    CHECK(nearest_class(midway, protos) == "a");
    CHECK(nearest_index(midway, protos) == 0);

    PrototypeSet empty{{}, Tensor({0, 2})};
    CHECK_THROWS_AS(nearest_index(midway, empty), DataError);
    const std::vector<double> wrong{1, 2, 3};
    CHECK_THROWS_AS(nearest_index(wrong, protos), ShapeError);
}

TEST_CASE("nearest class agrees with an exhaustive scan and is scale invariant") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(-1, 1);
    PrototypeSet protos;
    for (int i = 0; i < 10; ++i) protos.classes.push_back("c" + std::to_string(i));
    protos.matrix = testing::random_tensor({10, 6}, rng);
    PrototypeSet scaled = protos;
    for (double& v : scaled.matrix.storage()) v *= 3.5;
    for (int q = 0; q < 100; ++q) {
        std::vector<double> query(6);
        for (double& v : query) v = u(rng);
        const std::size_t got = nearest_index(query, protos);
        CHECK(got == testing::brute_force_nearest(query, protos.matrix));
        for (double& v : query) v *= 3.5;
        CHECK(nearest_index(query, scaled) == got);
    }
}

TEST_CASE("prototype set rejects duplicates") {
    const EmbeddingTable t = parse("a 0 0\nb 2 0\n");
    const std::vector<std::string> names{"a", "a"};
    CHECK_THROWS_AS(build_prototypes(t, names), DataError);
}
