#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "redct/autodiff.hpp"
#include "redct/errors.hpp"
#include "redct/ops.hpp"
#include "redct/perceptual.hpp"

using namespace redct;

TEST_CASE("feature extraction") {
    const FeatureExtractor phi = FeatureExtractor::seeded();
    CHECK(phi.stage_count() == 3);
    CHECK(phi.tap_index() == 2);

    SUBCASE("zero image gives zero features") {
        const Tensor f = phi.extract(Tensor::zeros({1, 32, 32}));
        CHECK(f.identical(Tensor::zeros(f.shape())));
    }
    SUBCASE("extent arithmetic") {
        CHECK(phi.extract(Tensor::zeros({1, 64, 64})).shape() == Shape{64, 8, 8});
        CHECK(phi.extract(Tensor::zeros({1, 16, 16})).shape() == Shape{64, 2, 2});
        // odd extents truncate: 15 -> 8 -> 4 -> 2
        CHECK(phi.extract(Tensor::zeros({1, 15, 15})).shape() == Shape{64, 2, 2});
        CHECK(FeatureExtractor::seeded(1, {4, 4}, 3, 0).extract(Tensor::zeros({1, 10, 6})).shape() == Shape{4, 5, 3});
    }
    SUBCASE("too small") {
        // stage inputs 4, 2, 1: the last cannot be downsampled
        CHECK_THROWS_AS(phi.extract(Tensor::zeros({1, 4, 4})), ImageTooSmall);
        CHECK_THROWS_AS(phi.extract(Tensor::zeros({1, 64, 4})), ImageTooSmall);
        CHECK_NOTHROW(phi.extract(Tensor::zeros({1, 7, 7})));
        CHECK_THROWS_AS(phi.extract(Tensor::zeros({2, 8, 8})), ShapeMismatch);
    }
    SUBCASE("seeded determinism") {
        const Tensor img = oracle::random_tensor({1, 32, 32}, 4, 0.0, 1.0);
        CHECK(FeatureExtractor::seeded().extract(img).identical(phi.extract(img)));
        CHECK_FALSE(FeatureExtractor::seeded(99).extract(img).identical(phi.extract(img)));
    }
    SUBCASE("matches the naive stack") {
        const Tensor img = oracle::random_tensor({1, 20, 18}, 5, 0.0, 1.0);
        const Tensor got = phi.extract(img);
        const Tensor want = oracle::features(phi.stages(), 2, img);
        REQUIRE(got.shape() == want.shape());
        for (std::size_t i = 0; i < got.numel(); ++i) CHECK(std::abs(got[i] - want[i]) < 1e-12);
    }
    SUBCASE("invalid construction") {
        CHECK_THROWS_AS(FeatureExtractor::seeded(1, {4, 4}, 3, 2), InvalidConfig);
        CHECK_THROWS_AS(FeatureExtractor::seeded(1, {}, 3, 0), InvalidConfig);
        CHECK_THROWS_AS(FeatureExtractor::from_weights({Tensor::zeros({4, 2, 3, 3})}, 0), ShapeMismatch);
    }
}

TEST_CASE("perceptual loss") {
    const FeatureExtractor phi = FeatureExtractor::seeded();
    const Tensor a = oracle::random_tensor({1, 16, 16}, 1, 0.0, 1.0);
    const Tensor b = oracle::random_tensor({1, 16, 16}, 2, 0.0, 1.0);

    CHECK(perceptual_loss(phi, a, a).item() == 0.0);
    const double ab = perceptual_loss(phi, a, b).item();
    CHECK(ab > 0.0);
    CHECK(std::abs(ab - oracle::perceptual(phi.stages(), 2, a, b)) < 1e-12);
    CHECK(ab == perceptual_loss(phi, b, a).item());
    CHECK_THROWS_AS(perceptual_loss(phi, a, Tensor::zeros({1, 16, 8})), ShapeMismatch);

    const ScalarFn f = [&](const Tensor& x, Tape* t) { return perceptual_loss(phi, x, b, t); };
    CHECK(grad_check(f, a) < 1e-4);
}

TEST_CASE("joint loss") {
    const FeatureExtractor phi = FeatureExtractor::seeded();
    const Tensor a = oracle::random_tensor({1, 16, 16}, 3, 0.0, 1.0);
    const Tensor b = oracle::random_tensor({1, 16, 16}, 4, 0.0, 1.0);

    const JointLoss zero_weight = joint_loss(phi, a, b, 0.0);
    CHECK(zero_weight.total.item() == zero_weight.mse);

    CHECK(joint_loss(phi, a, a, 0.1).total.item() == 0.0);

    const JointLoss j = joint_loss(phi, a, b, 0.1);
    const double mse = oracle::mse(a, b);
    const double per = oracle::perceptual(phi.stages(), 2, a, b);
    CHECK(std::abs(j.mse - mse) < 1e-12);
    CHECK(std::abs(j.perceptual - per) < 1e-12);
    CHECK(std::abs(j.total.item() - (mse + 0.1 * per)) < 1e-12);
    CHECK_THROWS_AS(joint_loss(phi, a, b, -1.0), InvalidConfig);

    SUBCASE("gradient reaches the image, never the extractor") {
        Tape tape;
        const Tensor x = a.as_leaf();
        backward(tape, joint_loss(phi, x, b, 0.1, &tape).total);
        bool nonzero = false;
        const Tensor g_x = tape.grad(x);
        for (double g : g_x.values()) nonzero = nonzero || g != 0.0;
        CHECK(nonzero);
        for (const auto& s : phi.stages()) {
            CHECK_FALSE(s.requires_grad());
            CHECK_FALSE(tape.has_grad(s));
        }
    }
    SUBCASE("grad check of the joint loss") {
        const ScalarFn f = [&](const Tensor& x, Tape* t) { return joint_loss(phi, x, b, 0.1, t).total; };
        CHECK(grad_check(f, a) < 1e-4);
    }
}

TEST_CASE("extractor weight file") {
    const auto dir = std::filesystem::temp_directory_path() / "redct_fx_test";
    std::filesystem::create_directories(dir);
    const FeatureExtractor phi = FeatureExtractor::seeded(7, {4, 8}, 3, 1);
    save_extractor(phi, dir / "fx.bin");
    const FeatureExtractor back = load_extractor(dir / "fx.bin");
    CHECK(back.tap_index() == 1);
    REQUIRE(back.stage_count() == 2);
    for (std::size_t i = 0; i < 2; ++i) CHECK(back.stages()[i].identical(phi.stages()[i]));

    std::ofstream(dir / "bad.bin") << "NOTFX\n";
    CHECK_THROWS_AS(load_extractor(dir / "bad.bin"), VersionMismatch);
    std::filesystem::remove_all(dir);
}
