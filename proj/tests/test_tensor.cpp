#include <doctest.h>

#include "invdes/tensor.hpp"
#include "support/gradcheck.hpp"

using namespace invdes;

TEST_CASE("tensor construction and invariants") {
    Tensorf t = Tensorf::from({2, 2}, {1.f, 2.f, 3.f, 4.f});
    CHECK(t.size() == 4);
    CHECK(t.dim(0) == 2);
    CHECK_THROWS_AS(Tensorf({2, 3}, ArrayX<float>::Zero(4)), ShapeError);
    CHECK_THROWS_AS(Tensorf({0, 2}, ArrayX<float>::Zero(0)), ShapeError);
    CHECK_THROWS_AS(Tensorf::zeros({2, 2}).value(), ShapeError);
}

TEST_CASE("relu, tanh, elu match their definitions") {
    Tensorf x = Tensorf::from({3}, {-1.f, 0.f, 2.f});
    Tensorf y = relu(x);
    CHECK(y.at(0) == 0.f);
    CHECK(y.at(1) == 0.f);
    CHECK(y.at(2) == 2.f);

    CHECK(tanh(Tensorf::from({1}, {0.f})).at(0) == 0.f);

    // alpha*(e^x - 1) at x = -50 sits just above -1; the offset e^-50 is far
    // below float (and double) epsilon, so the representable result is -1
    Tensorf e = elu(Tensorf::from({1}, {-50.f}), 1.0f);
    CHECK(e.at(0) >= -1.0f);
    CHECK(e.at(0) < 0.0f);
    CHECK(e.at(0) == doctest::Approx(-1.0).epsilon(1e-6));
    // at x = -5 the open-interval bound is representable: e^-5 - 1
    Tensorf e5 = elu(Tensorf::from({1}, {-5.f}), 1.0f);
    CHECK(e5.at(0) > -1.0f);
    CHECK(e5.at(0) < 0.0f);
    CHECK(e5.at(0) == doctest::Approx(std::exp(-5.0) - 1.0).epsilon(1e-6));

    Tensorf lk = leaky_relu(Tensorf::from({2}, {-1.f, 3.f}), 0.2f);
    CHECK(lk.at(0) == doctest::Approx(-0.2f));
    CHECK(lk.at(1) == 3.f);
}

TEST_CASE("matmul agrees with hand results and rejects bad shapes") {
    Tensorf eye = Tensorf::from({2, 2}, {1.f, 0.f, 0.f, 1.f});
    Tensorf a = Tensorf::from({2, 2}, {1.f, 2.f, 3.f, 4.f});
    Tensorf p = matmul(eye, a);
    for (Index i = 0; i < 4; ++i) CHECK(p.at(i) == a.at(i));

    Tensorf r = matmul(Tensorf::from({1, 2}, {1.f, 2.f}), Tensorf::from({2, 1}, {3.f, 4.f}));
    CHECK(r.at(0) == 11.f);

    CHECK_THROWS_AS(matmul(Tensorf::zeros({2, 3}), Tensorf::zeros({2, 3})), ShapeError);
    CHECK_THROWS_AS(matmul(Tensorf::zeros({2}), Tensorf::zeros({2, 3})), ShapeError);
}

TEST_CASE("backward: power rule and relu subgradient") {
    // loss = x^2 at x = 3 -> grad 6
    Tensorf x = Tensorf::scalar(3.f, true);
    Tapef tape;
    Tensorf loss = mul(x, x, &tape);
    backward(tape, loss);
    CHECK(x.grad()[0] == doctest::Approx(6.f));

    // loss = sum(relu(x)) at [-1, 2] -> grad [0, 1]
    Tensorf v = Tensorf::from({2}, {-1.f, 2.f}, true);
    tape.reset();
    Tensorf l2 = sum(relu(v, &tape), &tape);
    backward(tape, l2);
    CHECK(v.grad()[0] == 0.f);
    CHECK(v.grad()[1] == 1.f);
}

TEST_CASE("tape contract: one backward per forward, scalar loss only") {
    Tensorf x = Tensorf::scalar(2.f, true);
    Tapef tape;
    Tensorf loss = mul(x, x, &tape);
    backward(tape, loss);
    CHECK_THROWS_AS(backward(tape, loss), Error);
    tape.reset();
    Tensorf vec = relu(Tensorf::from({2}, {1.f, 2.f}, true), &tape);
    CHECK_THROWS_AS(backward(tape, vec), ShapeError);
}

TEST_CASE("gradients accumulate across backward passes until cleared") {
    Tensorf x = Tensorf::scalar(3.f, true);
    for (int i = 0; i < 2; ++i) {
        Tapef tape;
        Tensorf loss = mul(x, x, &tape);
        backward(tape, loss);
    }
    CHECK(x.grad()[0] == doctest::Approx(12.f));
    x.zero_grad();
    CHECK(x.grad()[0] == 0.f);
}

TEST_CASE("binary ops broadcast a scalar operand") {
    Tensorf a = Tensorf::from({3}, {1.f, 2.f, 3.f});
    Tensorf s = Tensorf::scalar(2.f);
    Tensorf y = mul(a, s);
    CHECK(y.at(2) == 6.f);
    Tensorf z = add(a, s);
    CHECK(z.at(0) == 3.f);
    CHECK_THROWS_AS(add(a, Tensorf::zeros({2})), ShapeError);
}

TEST_CASE("non-finite op outputs are surfaced as errors") {
    Tensorf big = Tensorf::from({1}, {200.f});
    CHECK_THROWS_AS(exp(big), NumericError);  // e^200 overflows float
}

TEST_CASE("softmax rows are positive and sum to one") {
    Rng rng(7);
    for (int rep = 0; rep < 20; ++rep) {
        Tensorf x = testing::random_tensor_in<float>({5, 11}, rng, -30.0, 30.0, false);
        Tensorf y = softmax_rows(x);
        for (Index r = 0; r < 5; ++r) {
            double s = 0.0;
            for (Index c = 0; c < 11; ++c) {
                CHECK(y.at(r * 11 + c) > 0.f);
                s += y.at(r * 11 + c);
            }
            CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("concat/slice are mutually inverse on columns") {
    Rng rng(3);
    Tensorf a = testing::random_tensor<float>({4, 3}, rng, false);
    Tensorf b = testing::random_tensor<float>({4, 5}, rng, false);
    Tensorf cat = concat_cols<float>({a, b});
    CHECK(cat.shape() == std::vector<Index>{4, 8});
    Tensorf a2 = slice_cols(cat, 0, 3);
    Tensorf b2 = slice_cols(cat, 3, 5);
    for (Index i = 0; i < a.size(); ++i) CHECK(a2.at(i) == a.at(i));
    for (Index i = 0; i < b.size(); ++i) CHECK(b2.at(i) == b.at(i));
}

TEST_CASE("forward results are bit-identical across repeated evaluation") {
    Rng rng(11);
    Tensorf a = testing::random_tensor<float>({7, 9}, rng, false);
    Tensorf b = testing::random_tensor<float>({9, 4}, rng, false);
    Tensorf c1 = matmul(a, b);
    Tensorf c2 = matmul(a, b);
    for (Index i = 0; i < c1.size(); ++i) CHECK(c1.at(i) == c2.at(i));
    Tensorf t1 = tanh(a);
    Tensorf t2 = tanh(a);
    for (Index i = 0; i < t1.size(); ++i) CHECK(t1.at(i) == t2.at(i));
}

TEST_CASE("elementwise dispatches by op kind") {
    Tensorf a = Tensorf::from({2}, {0.5f, -0.5f});
    Tensorf b = Tensorf::from({2}, {2.f, 2.f});
    CHECK(elementwise(EltKind::Add, a, &b).at(0) == 2.5f);
    CHECK(elementwise(EltKind::Sub, a, &b).at(1) == -2.5f);
    CHECK(elementwise(EltKind::Sigmoid, a).at(0) ==
          doctest::Approx(1.0 / (1.0 + std::exp(-0.5))));
    CHECK_THROWS_AS(elementwise(EltKind::Add, a), ShapeError);
}
