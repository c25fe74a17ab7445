#include <doctest.h>

#include <cstring>

#include "../support/test_util.hpp"
#include "lesiontrack/error.hpp"
#include "lesiontrack/phantom.hpp"

using namespace lesiontrack;

TEST_SUITE("phantom") {

TEST_CASE("deterministic and well formed") {
    PhantomSpec spec;
    spec.seed = 7;
    const Phantom a = make_phantom(spec), b = make_phantom(spec);
    CHECK(std::memcmp(a.image.data.data(), b.image.data.data(), a.image.data.size() * 4) == 0);
    CHECK(a.mask.labels == b.mask.labels);
    CHECK(a.mask.num_instances() == 2);

    // lesions are brighter than the body and lie inside it
    for (std::size_t i = 0; i < a.mask.labels.size(); ++i)
        if (a.mask.labels[i]) CHECK(a.image.data[i] > 0.7f);
    CHECK(a.image.at(0, 0, 0) < -0.5f);

    spec.seed = 8;
    CHECK_FALSE(make_phantom(spec).mask.labels == a.mask.labels);
}

TEST_CASE("lesion count and sizes") {
    PhantomSpec spec;
    spec.lesions = 0;
    const Phantom none = make_phantom(spec);
    CHECK(none.mask.num_instances() == 0);
    CHECK(none.image.data.size() == 64u * 64u * 64u);

    spec.lesions = 4;
    spec.radius_mm = {3, 4};
    spec.seed = 2;
    const Phantom four = make_phantom(spec);
    CHECK(four.mask.num_instances() == 4);
    for (auto l : four.mask.present_labels()) {
        const double r = std::cbrt(3.0 * four.mask.count(l) / (4.0 * 3.14159265358979));
        CHECK(r > 3 * 0.8 - 1.0);
        CHECK(r < 4 * 1.2 + 1.0);
    }
}

TEST_CASE("invalid specs") {
    PhantomSpec spec;
    spec.radius_mm = {40, 50};
    CHECK_THROWS_AS(make_phantom(spec), InvalidArgument);
    spec = {};
    spec.lesions = -1;
    CHECK_THROWS_AS(make_phantom(spec), InvalidArgument);
    spec = {};
    spec.shape = {0, 4, 4};
    CHECK_THROWS_AS(make_phantom(spec), InvalidArgument);
}

}
