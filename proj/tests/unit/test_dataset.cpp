#include "helpers.hpp"

#include "illuminorm/dataset.hpp"
#include "illuminorm/errors.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <doctest.h>
#include <nlohmann/json.hpp>

#include <fstream>
#include <map>
#include <set>

using namespace illuminorm;
namespace fs = std::filesystem;

namespace {

double chi_square_p(const std::vector<int>& counts) {
    double total = 0.0;
    for (int c : counts) total += c;
    const double expected = total / counts.size();
    double stat = 0.0;
    for (int c : counts) stat += (c - expected) * (c - expected) / expected;
    const boost::math::chi_squared dist(static_cast<double>(counts.size() - 1));
    return boost::math::cdf(boost::math::complement(dist, stat));
}

/// One scene per seat label, 2 variants each.
DatasetManifest all_labels_manifest() {
    std::vector<SceneRecord> scenes;
    int id = 0;
    for (const Label& l : enumerate_seat_labels(3)) scenes.push_back(testing::constant_scene(id++, l, 2, 4, 4));
    // Second copy so every label has a positive.
    for (const Label& l : enumerate_seat_labels(3)) scenes.push_back(testing::constant_scene(id++, l, 3, 4, 4));
    return testing::manifest_of(std::move(scenes), 4, 4);
}

}  // namespace

TEST_CASE("labels: class ids, strings and Hamming distance") {
    const Label l = Label::from_seats({3, 0, 3});
    CHECK(l.to_string() == "3-0-3");
    CHECK(Label::parse("3-0-3") == l);
    CHECK(l.class_id() == 3 * 16 + 3);
    CHECK(Label::parse("c7") == Label::from_category(7));
    CHECK(Label::from_category(7).class_id() == 7);
    CHECK(Label::from_seats({0, 0, 0}).all_empty());
    CHECK_FALSE(l.all_empty());
    CHECK(hamming_distance(l, Label::from_seats({3, 1, 3})) == 1);
    CHECK(hamming_distance(l, Label::from_seats({0, 0, 0})) == 2);
    CHECK_THROWS_AS(Label::from_seats({4, 0, 0}), ContractError);
    CHECK_THROWS_AS(Label::parse("3-x-1"), DataError);
    CHECK_THROWS_AS(Label::parse(""), DataError);

    const auto all = enumerate_seat_labels(3);
    CHECK(all.size() == 64);
    std::set<int> ids;
    for (const auto& a : all) {
        ids.insert(a.class_id());
        CHECK(Label::parse(a.to_string()) == a);
    }
    CHECK(ids.size() == 64);
    CHECK(*ids.begin() == 0);
    CHECK(*ids.rbegin() == 63);
}

TEST_CASE("pair sampler: n = 2 yields both orders equally often") {
    const SceneRecord scene = testing::constant_scene(0, Label::from_seats({0, 0, 1}), 2, 4, 4);
    Rng rng(1);
    int first = 0;
    for (int i = 0; i < 10000; ++i) {
        const PairSample p = sample_pair(scene, rng);
        REQUIRE(((p.input_variant == 0 && p.target_variant == 1) || (p.input_variant == 1 && p.target_variant == 0)));
        first += p.input_variant == 0;
    }
    CHECK(first / 10000.0 == doctest::Approx(0.5).epsilon(0.1));
}

TEST_CASE("pair sampler: a != b, uniform marginals and ordered pairs, deterministic") {
    const SceneRecord scene = testing::constant_scene(4, Label::from_seats({0, 0, 1}), 8, 4, 4);
    Rng rng(2), replay(2);
    std::vector<int> a_counts(8), b_counts(8), pair_counts(56);
    for (int i = 0; i < 10000; ++i) {
        const PairSample p = sample_pair(scene, rng);
        REQUIRE(p.input_variant != p.target_variant);
        REQUIRE(p.scene_id == 4);
        REQUIRE(p == sample_pair(scene, replay));
        ++a_counts[p.input_variant];
        ++b_counts[p.target_variant];
        ++pair_counts[p.input_variant * 7 + (p.target_variant - (p.target_variant > p.input_variant))];
    }
    CHECK(chi_square_p(a_counts) > 0.01);
    CHECK(chi_square_p(b_counts) > 0.01);
    CHECK(chi_square_p(pair_counts) > 0.01);

    const SceneRecord single = testing::constant_scene(0, Label::from_seats({0, 0, 1}), 1, 4, 4);
    CHECK_THROWS_AS(sample_pair(single, rng), ContractError);
}

TEST_CASE("seat policy: negatives are exactly the Hamming-1 neighbours minus all-empty") {
    const DatasetManifest m = all_labels_manifest();
    const TripletPolicy policy = TripletPolicy::seat();
    auto negatives_of = [&](const Label& anchor) {
        std::set<std::string> out;
        for (const auto& s : m.scenes)
            if (policy.is_negative(anchor, s.label)) out.insert(s.label.to_string());
        return out;
    };
    std::set<std::string> expected;
    for (int c = 0; c < 4; ++c) {
        expected.insert(Label::from_seats({c, 0, 3}).to_string());
        expected.insert(Label::from_seats({3, c, 3}).to_string());
        expected.insert(Label::from_seats({3, 0, c}).to_string());
    }
    expected.erase("3-0-3");
    CHECK(negatives_of(Label::from_seats({3, 0, 3})) == expected);

    const auto n300 = negatives_of(Label::from_seats({3, 0, 0}));
    CHECK(n300.count("0-0-0") == 0);
    CHECK(n300.size() == 8);
    CHECK_FALSE(policy.is_valid_anchor(Label::from_seats({0, 0, 0})));
}

TEST_CASE("seat-policy triplets satisfy the predicates over 1000 draws") {
    const DatasetManifest m = all_labels_manifest();
    const TripletPolicy policy = TripletPolicy::seat();
    Rng rng(8);
    std::vector<int> anchors;
    for (const auto& s : m.scenes)
        if (can_anchor(m, s.scene_id, policy)) anchors.push_back(s.scene_id);
    CHECK(anchors.size() == 126);  // every scene except the two all-empty ones
    std::uniform_int_distribution<std::size_t> pick(0, anchors.size() - 1);
    for (int i = 0; i < 1000; ++i) {
        const TripletSample t = sample_triplet(m, anchors[pick(rng)], policy, rng);
        const Label& a = m.scene(t.anchor.scene_id).label;
        const Label& p = m.scene(t.positive.scene_id).label;
        const Label& n = m.scene(t.negative.scene_id).label;
        REQUIRE(p == a);
        REQUIRE(t.positive.scene_id != t.anchor.scene_id);
        REQUIRE(t.negative.scene_id != t.anchor.scene_id);
        REQUIRE(hamming_distance(a, n) == 1);
        REQUIRE_FALSE(n.all_empty());
        for (const PairSample& ps : {t.anchor, t.positive, t.negative}) REQUIRE(ps.input_variant != ps.target_variant);
    }
}

TEST_CASE("triplet members draw independent variant pairs") {
    const DatasetManifest m = all_labels_manifest();
    Rng rng(4);
    int differing = 0;
    for (int i = 0; i < 200; ++i) {
        const TripletSample t = sample_triplet(m, 64 + 5, TripletPolicy::seat(), rng);
        differing += t.anchor.input_variant != t.positive.input_variant ||
                     t.anchor.target_variant != t.positive.target_variant;
    }
    CHECK(differing > 50);
}

TEST_CASE("triplet sampling errors name the failing predicate") {
    const Label a = Label::from_seats({1, 2, 3});
    DatasetManifest m = testing::manifest_of({testing::constant_scene(0, a, 2, 4, 4),
                                              testing::constant_scene(1, Label::from_seats({1, 2, 0}), 2, 4, 4)},
                                             4, 4);
    Rng rng(1);
    try {
        sample_triplet(m, 0, TripletPolicy::seat(), rng);
        FAIL("expected a sampling error");
    } catch (const SamplingError& e) {
        CHECK(std::string(e.what()).find("positive") != std::string::npos);
    }
    m.scenes[1].label = a;
    try {
        sample_triplet(m, 0, TripletPolicy::seat(), rng);
        FAIL("expected a sampling error");
    } catch (const SamplingError& e) {
        CHECK(std::string(e.what()).find("negative") != std::string::npos);
    }
    m.scenes[0].label = Label::from_seats({0, 0, 0});
    CHECK_THROWS_AS(sample_triplet(m, 0, TripletPolicy::seat(), rng), SamplingError);
    CHECK_FALSE(can_anchor(m, 0, TripletPolicy::seat()));
}

TEST_CASE("pose and location policies compare categories") {
    for (const auto& policy : {TripletPolicy::pose(), TripletPolicy::location(), TripletPolicy::by_name("pose")}) {
        std::vector<SceneRecord> scenes;
        for (int i = 0; i < 12; ++i) scenes.push_back(testing::constant_scene(i, Label::from_category(i % 3), 2, 4, 4));
        const DatasetManifest m = testing::manifest_of(std::move(scenes), 4, 4);
        Rng rng(3);
        for (int i = 0; i < 300; ++i) {
            const int anchor = i % 12;
            const TripletSample t = sample_triplet(m, anchor, policy, rng);
            CHECK(m.scene(t.positive.scene_id).label == m.scene(anchor).label);
            CHECK(m.scene(t.negative.scene_id).label != m.scene(anchor).label);
            CHECK(t.positive.scene_id != anchor);
        }
    }
    CHECK_THROWS_AS(TripletPolicy::by_name("nope"), ConfigError);
}

TEST_CASE("manifest round trip and load errors") {
    testing::TempDir dir("manifest");
    Rng rng(6);
    DatasetManifest m;
    m.split = Split::train;
    m.meta.height = 8;
    m.meta.width = 8;
    m.meta.seed = 42;
    for (int id : {0, 1, 2, 10}) {
        SceneRecord s;
        s.scene_id = id;
        s.label = Label::from_seats({id % 4, 1, 2});
        for (int j = 0; j < 3; ++j) s.variants.push_back(quantize_8bit(testing::random_image(8, 8, 1, rng)));
        m.scenes.push_back(s);
    }
    write_manifest(m, dir.path);
    const DatasetManifest loaded = load_manifest(dir.path, Split::train);
    CHECK(loaded.same_content(m));
    CHECK(loaded.meta == m.meta);
    CHECK(loaded.scenes.size() == 4);
    CHECK(loaded.scenes.back().scene_id == 10);  // numeric, not lexicographic, order
    CHECK(loaded.image_count() == 12);

    SUBCASE("scene with a single image") {
        fs::remove(variant_path(dir.path, Split::train, 1, 2));
        fs::remove(variant_path(dir.path, Split::train, 1, 1));
        try {
            load_manifest(dir.path, Split::train);
            FAIL("expected a load error");
        } catch (const DataError& e) {
            CHECK(std::string(e.what()).find("scene 1") != std::string::npos);
        }
    }
    SUBCASE("missing label") {
        fs::remove(scene_directory(dir.path, Split::train, 2) / "label.json");
        CHECK_THROWS_WITH_AS(load_manifest(dir.path, Split::train), doctest::Contains("scene 2"), DataError);
    }
    SUBCASE("unreadable image") {
        std::ofstream(variant_path(dir.path, Split::train, 0, 1)) << "not a png";
        CHECK_THROWS_WITH_AS(load_manifest(dir.path, Split::train), doctest::Contains("scene 0"), DataError);
    }
    SUBCASE("wrong image size") {
        write_png(Image(9, 8, 1), variant_path(dir.path, Split::train, 10, 0));
        CHECK_THROWS_AS(load_manifest(dir.path, Split::train), DataError);
    }
    SUBCASE("missing split") { CHECK_THROWS_AS(load_manifest(dir.path, Split::test), DataError); }
    SUBCASE("meta.json contents") {
        std::ifstream in(dir.path / "meta.json");
        const auto doc = nlohmann::json::parse(in);
        CHECK(doc.at("seat_count") == 3);
        CHECK(doc.at("seed") == 42);
        CHECK(doc.at("image_size").at("height") == 8);
        CHECK(doc.at("class_names").size() == 4);
    }
}

TEST_CASE("augmentation pairs") {
    Rng rng(2);
    const Image x = testing::random_image(8, 8, 1, rng, 0.2, 0.8);
    SUBCASE("identity spec") {
        const auto [a, b] = augment_pair(x, AugmentSpec::parse("gain:1:1"), AugmentMode::both, rng);
        CHECK(a == x);
        CHECK(b == x);
        const auto [c, d] = augment_pair(x, AugmentSpec{}, AugmentMode::both, rng);
        CHECK(c == x);
        CHECK(d == x);
    }
    SUBCASE("reverse denoising keeps the clean image first") {
        const auto [clean, noisy] = augment_pair(x, AugmentSpec::parse("gain:0.5:1.5"), AugmentMode::reverse_denoise, rng);
        CHECK(clean == x);
        CHECK(noisy != x);
    }
    SUBCASE("deterministic for a fixed seed, independent within a pair") {
        const AugmentSpec spec = AugmentSpec::parse("gain:0.7:1.3,bias:-0.1:0.1,gradient:0:0.2,noise:0:0.02");
        Rng r1(9), r2(9);
        const auto p1 = augment_pair(x, spec, AugmentMode::both, r1);
        const auto p2 = augment_pair(x, spec, AugmentMode::both, r2);
        CHECK(p1 == p2);
        CHECK(p1.first != p1.second);
        CHECK(p1.first.in_unit_range());
    }
    SUBCASE("geometric transforms are rejected") {
        const AugmentSpec spec = AugmentSpec::parse("gain:0.9:1.1,flip");
        CHECK_FALSE(spec.is_photometric());
        CHECK_THROWS_AS(augment_pair(x, spec, AugmentMode::both, rng), ConfigError);
        CHECK_THROWS_AS(augment_pair(x, AugmentSpec::parse("rotate:-10:10"), AugmentMode::reverse_denoise, rng),
                        ConfigError);
    }
    CHECK_THROWS_AS(AugmentSpec::parse("blur:1:2"), ConfigError);
    CHECK_THROWS_AS(AugmentSpec::parse("gain:2:1"), ConfigError);
    CHECK_THROWS_AS(parse_augment_mode("sideways"), ConfigError);
    CHECK(AugmentSpec::parse(AugmentSpec::parse("gain:0.5:1.5,bias:-0.1:0.1").to_string()).to_string() ==
          "gain:0.5:1.5,bias:-0.1:0.1");
}
