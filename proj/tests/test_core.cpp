#include <doctest.h>

#include <cmath>
#include <fstream>

#include "helpers.hpp"
#include "mmedpo/errors.hpp"
#include "mmedpo/hash.hpp"
#include "mmedpo/io.hpp"
#include "mmedpo/noising.hpp"
#include "mmedpo/rng.hpp"
#include "mmedpo/types.hpp"

using namespace mmedpo;

TEST_CASE("tokenize lowercases and strips punctuation") {
    CHECK(tokenize("Yes, there is an Effusion.") == Tokens{"yes", "there", "is", "an", "effusion"});
    CHECK(tokenize("  ").empty());
    CHECK(join_tokens(tokenize("a  b\tc")) == "a b c");
}

TEST_CASE("image tensor validates its payload") {
    CHECK_THROWS_AS(ImageTensor(2, 2, 1, std::vector<float>(3)), ValidationError);
    CHECK_THROWS_AS(ImageTensor(1, 1, 1, {std::nanf("")}), ValidationError);
    ImageTensor img(1, 2, 2, {1, 2, 3, 4});
    CHECK(img.at(0, 1, 0) == 3.0f);
    const auto means = img.channel_means();
    CHECK(means[0] == doctest::Approx(2.0));
    CHECK(means[1] == doctest::Approx(3.0));
}

TEST_CASE("pair invariants depend on the source") {
    PreferencePair p;
    p.sample_id = "a";
    p.input_image = ImageTensor(2, 2, 1);
    p.query = {"q"};
    p.preferred = {"yes"};
    p.dispreferred = {"yes"};
    CHECK_THROWS_AS(p.validate(), ValidationError);  // text pair with equal responses
    p.dispreferred = {"no"};
    CHECK_NOTHROW(p.validate());
    p.dispreferred_image = ImageTensor(2, 2, 1);
    CHECK_THROWS_AS(p.validate(), ValidationError);

    p.source = PairSource::LesionNoise;
    p.dispreferred = p.preferred;
    CHECK_NOTHROW(p.validate());
    p.dispreferred_image.reset();
    CHECK_THROWS_AS(p.validate(), ValidationError);
}

TEST_CASE("rng streams are reproducible and distinct") {
    Rng a(42), b(42), c(1), d(2);
    CHECK(a.gaussian() == b.gaussian());
    CHECK(a.gaussian() == b.gaussian());
    CHECK(c.gaussian() != d.gaussian());
    CHECK(Rng(5).derive("x").next_u64() == Rng(5).derive("x").next_u64());
    CHECK(Rng(5).derive("x").next_u64() != Rng(5).derive("y").next_u64());
}

TEST_CASE("gaussian moments") {
    Rng r(7);
    const int n = 100000;
    double sum = 0, sq = 0;
    for (int i = 0; i < n; ++i) {
        const double x = r.gaussian();
        sum += x;
        sq += x * x;
    }
    const double mean = sum / n;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(sq / n - mean * mean - 1.0) < 0.05);
}

TEST_CASE("uniform and below stay in range") {
    Rng r(3);
    for (int i = 0; i < 10000; ++i) {
        const double u = r.uniform();
        CHECK((u >= 0.0 && u < 1.0));
        CHECK(r.below(7) < 7u);
    }
}

TEST_CASE("sha256 known vectors") {
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("tensor and heatmap encoding round trip") {
    Rng r(1);
    const ImageTensor img = testing::random_image(3, 4, 2, r);
    const std::string bytes = encode_tensor(img);
    CHECK(bytes.size() == 12 + 4 * img.size());
    CHECK(decode_tensor(bytes) == img);
    CHECK_THROWS_AS(decode_tensor(bytes.substr(0, bytes.size() - 1)), FormatError);

    const LesionHeatmap h = synth_heatmap(img, 1.0, 1.0, 1.0, 0.83);
    CHECK(decode_heatmap(encode_heatmap(h)) == h);
}

TEST_CASE("dataset round trip") {
    testing::TempDir dir("core-ds");
    Rng r(2);
    Dataset ds;
    for (int i = 0; i < 3; ++i) {
        MedicalSample s{"s" + std::to_string(i), testing::random_image(4, 4, 2, r), "is there fluid", "yes",
                        Task::ClosedQa, std::nullopt};
        if (i == 1) s.heatmap = synth_heatmap(s.image, 2, 2, 1.5, 0.5);
        ds.push_back(s);
    }
    save_dataset(ds, dir / "ds.jsonl");
    const Dataset back = load_dataset(dir / "ds.jsonl");
    REQUIRE(back.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(back[i].id == ds[i].id);
        CHECK(back[i].image == ds[i].image);
        CHECK(back[i].heatmap == ds[i].heatmap);
    }
    save_dataset(back, dir / "again" / "ds.jsonl");
    CHECK(read_file(dir / "again" / "images" / (safe_file_stem("s0") + ".bin")) ==
          read_file(dir / "images" / (safe_file_stem("s0") + ".bin")));
}

TEST_CASE("empty dataset file loads as empty") {
    testing::TempDir dir("core-empty");
    write_file(dir / "e.jsonl", "");
    CHECK(load_dataset(dir / "e.jsonl").empty());
}

TEST_CASE("truncated tensor payload names the sample") {
    testing::TempDir dir("core-bad");
    Rng r(3);
    Dataset ds{{"bad-one", testing::random_image(2, 2, 1, r), "q", "a", Task::OpenQa, std::nullopt}};
    save_dataset(ds, dir / "ds.jsonl");
    const auto img = dir / "images" / (safe_file_stem("bad-one") + ".bin");
    REQUIRE(std::filesystem::exists(img));
    const std::string bytes = read_file(img);
    write_file(img, bytes.substr(0, bytes.size() - 4));
    try {
        load_dataset(dir / "ds.jsonl");
        FAIL("expected a format error");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("bad-one") != std::string::npos);
    }
}

TEST_CASE("duplicate ids are rejected") {
    Dataset ds(2, MedicalSample{"x", ImageTensor(1, 1, 1), "q", "a", Task::OpenQa, std::nullopt});
    CHECK_THROWS_AS(validate_dataset(ds), ValidationError);
}

TEST_CASE("pairs round trip") {
    testing::TempDir dir("core-pairs");
    Rng r(4);
    PreferencePair t{"a", testing::random_image(2, 2, 1, r), std::nullopt, {"q"}, {"yes"}, {"no"}, 4.0, 1.1,
                     PairSource::TextHallucination};
    PreferencePair v{"a", t.input_image, testing::random_image(2, 2, 1, r), {"q"}, {"yes"}, {"yes"}, 0.8,
                     std::nullopt, PairSource::LesionNoise};
    save_pairs({t, v}, dir / "p.jsonl");
    const auto back = load_pairs(dir / "p.jsonl");
    REQUIRE(back.size() == 2);
    CHECK(back[0].raw_score == 4.0);
    CHECK(back[0].weight == 1.1);
    CHECK(!back[0].dispreferred_image);
    CHECK(back[1].dispreferred_image == v.dispreferred_image);
    CHECK(!back[1].weight);
}

TEST_CASE("safe file stems stay unique") {
    CHECK(safe_file_stem("a/b") != safe_file_stem("a_b"));
    CHECK(safe_file_stem("a/b").find('/') == std::string::npos);
}
