#include "zsdg/error.hpp"
#include "zsdg/tensor.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace zsdg;

TEST_CASE("tensor construction checks the element count") {
    Tensor t({2, 3}, 1.5);
    CHECK(t.size() == 6);
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 3);
    CHECK(t.at(1, 2) == 1.5);
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST_CASE("rows of a higher-rank tensor flatten the trailing dimensions") {
    Tensor t({2, 3, 4});
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 12);
    t.row(1)[11] = 7.0;
    CHECK(t[23] == 7.0);
}

TEST_CASE("item needs exactly one element") {
    CHECK(Tensor::scalar(4.25).item() == 4.25);
    CHECK_THROWS_AS(Tensor({1, 2}).item(), ShapeError);
}

TEST_CASE("identity and finiteness") {
    const Tensor i = Tensor::identity(3);
    CHECK(i.at(0, 0) == 1.0);
    CHECK(i.at(0, 1) == 0.0);
    CHECK(i.all_finite());
    Tensor t({1, 2});
    t[1] = std::numeric_limits<double>::quiet_NaN();
    CHECK_FALSE(t.all_finite());
}

TEST_CASE("shape helpers") {
    CHECK(shape_string({2, 3}) == "[2x3]");
    CHECK(shape_size({2, 3, 4}) == 24);
    const std::size_t big = std::numeric_limits<std::size_t>::max() / 2;
    CHECK_THROWS_AS(shape_size({big, 4}), ShapeError);
}
