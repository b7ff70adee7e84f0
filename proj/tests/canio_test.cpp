#include <catch2/catch_amalgamated.hpp>

#include "lsfidm/canio.hpp"
#include "support/oracles.hpp"

using namespace lsfidm;
using canio::CanFrame;
using canio::Label;

TEST_CASE("parse decodes an HCRL record") {
    auto res = canio::parse_hcrl_csv("1478198376.389427,0316,8,05,21,68,09,21,21,00,6F,R\n");
    REQUIRE(res.errors.empty());
    REQUIRE(res.frames.size() == 1);
    const CanFrame& f = res.frames[0];
    CHECK(f.can_id == 790);
    CHECK(f.dlc == 8);
    CHECK(f.data == std::array<std::uint8_t, 8>{5, 33, 104, 9, 33, 33, 0, 111});
    CHECK(f.label == Label::Normal);
    CHECK(f.timestamp == Catch::Approx(1478198376.389427));
}

TEST_CASE("parse pads short data fields") {
    auto res = canio::parse_hcrl_csv("1.0,0100,2,AA,BB,T\n");
    REQUIRE(res.frames.size() == 1);
    CHECK(res.frames[0].data == std::array<std::uint8_t, 8>{170, 187, 0, 0, 0, 0, 0, 0});
    CHECK(res.frames[0].label == Label::Attack);
}

TEST_CASE("parse reports malformed records with line numbers") {
    const char* text =
        "1.0,0100,8,00,00,00,00,00,00,00,00,R\n"
        "2.0,0100,8,00,00,00,00,00,00,00,00,X\n"   // bad flag
        "3.0,ZZZZ,8,00,00,00,00,00,00,00,00,R\n"   // bad hex id
        "4.0,0100,9,00,00,00,00,00,00,00,00,00,R\n"  // dlc > 8
        "5.0,0100,8,00,00,R\n"                     // wrong column count
        "6.0,0100,8,00,00,00,00,00,00,00,00,R\n";
    auto res = canio::parse_hcrl_csv(text);
    CHECK(res.frames.size() == 2);
    REQUIRE(res.errors.size() == 4);
    CHECK(res.errors[0].line == 2);
    CHECK(res.errors[1].line == 3);
    CHECK(res.errors[2].line == 4);
    CHECK(res.errors[3].line == 5);

    CHECK_THROWS_AS(canio::parse_hcrl_csv(text, canio::MalformedPolicy::Abort),
                    std::runtime_error);
}

TEST_CASE("parse skips a header row and tolerates CRLF") {
    auto res = canio::parse_hcrl_csv(
        "Timestamp,ID,DLC,D0,D1,Flag\r\n"
        "1.5,02C0,2,01,02,R\r\n");
    CHECK(res.errors.empty());
    REQUIRE(res.frames.size() == 1);
    CHECK(res.frames[0].can_id == 0x2C0);
}

TEST_CASE("parse rejects nonzero bytes past dlc in canonical records") {
    auto res = canio::parse_hcrl_csv("1.0,0100,2,AA,BB,00,00,00,00,00,01,R\n");
    CHECK(res.frames.empty());
    REQUIRE(res.errors.size() == 1);
}

TEST_CASE("pad_data_field") {
    CHECK(canio::pad_data_field({}, 0) == std::array<std::uint8_t, 8>{});
    std::vector<std::uint8_t> one = {255};
    CHECK(canio::pad_data_field(one, 1) == std::array<std::uint8_t, 8>{255, 0, 0, 0, 0, 0, 0, 0});
    std::vector<std::uint8_t> full = {1, 2, 3, 4, 5, 6, 7, 8};
    CHECK(canio::pad_data_field(full, 8) == std::array<std::uint8_t, 8>{1, 2, 3, 4, 5, 6, 7, 8});
    CHECK_THROWS_AS(canio::pad_data_field(one, 2), std::invalid_argument);
    CHECK_THROWS_AS(canio::pad_data_field(full, 9), std::invalid_argument);
}

TEST_CASE("feature normalization endpoints and hand values") {
    CanFrame zero;
    auto v0 = canio::to_feature_vector(zero);
    for (double x : v0.values) CHECK(x == 0.0);

    CanFrame ones;
    ones.can_id = 2047;
    ones.dlc = 8;
    ones.data.fill(255);
    auto v1 = canio::to_feature_vector(ones);
    for (double x : v1.values) CHECK(x == 1.0);

    CanFrame f;
    f.can_id = 790;
    f.dlc = 8;
    f.data = {5, 33, 104, 9, 33, 33, 0, 111};
    auto v = canio::to_feature_vector(f);
    CHECK(v.values[0] == Catch::Approx(790.0 / 2047.0).epsilon(1e-12));
    CHECK(v.values[1] == 1.0);
    CHECK(v.values[2] == Catch::Approx(5.0 / 255.0).epsilon(1e-12));
}

TEST_CASE("normalization is exact and injective on (id, dlc, data)") {
    lsfidm::Rng rng(11);
    for (int i = 0; i < 200; ++i) {
        CanFrame f;
        f.can_id = static_cast<std::uint16_t>(rng.below(2048));
        f.dlc = 8;
        for (auto& b : f.data) b = static_cast<std::uint8_t>(rng.below(256));
        auto v = canio::to_feature_vector(f);
        // Quantization-free: multiplying back recovers the integers exactly.
        CHECK(v.values[0] * 2047.0 == static_cast<double>(f.can_id));
        for (std::size_t k = 0; k < 8; ++k)
            CHECK(v.values[2 + k] * 255.0 == static_cast<double>(f.data[k]));
    }
}

TEST_CASE("tokenize layout, mask, and locality") {
    CanFrame zero;
    auto seq = canio::tokenize(zero, 16);
    REQUIRE(seq.tokens.size() == 16);
    CHECK(seq.tokens[0] == canio::kClsToken);
    CHECK(seq.tokens[1] == canio::kIdTokenBase);  // id bucket 0
    for (std::size_t i = 2; i <= 10; ++i) CHECK(seq.tokens[i] == canio::kByteTokenBase);
    CHECK(seq.tokens[11] == canio::kSepToken);
    for (std::size_t i = 12; i < 16; ++i) CHECK(seq.tokens[i] == canio::kPadToken);
    for (std::size_t i = 0; i < 16; ++i) CHECK(seq.mask[i] == (i < 12 ? 1 : 0));

    CanFrame a = zero, b = zero;
    b.data[7] = 9;
    auto sa = canio::tokenize(a, 16), sb = canio::tokenize(b, 16);
    std::size_t diffs = 0;
    for (std::size_t i = 0; i < 16; ++i) diffs += sa.tokens[i] != sb.tokens[i];
    CHECK(diffs == 1);

    CHECK_THROWS_AS(canio::tokenize(zero, 11), std::invalid_argument);
}

TEST_CASE("tokenize round-trips through detokenize") {
    lsfidm::Rng rng(5);
    for (int i = 0; i < 100; ++i) {
        CanFrame f;
        f.can_id = static_cast<std::uint16_t>(rng.below(2048));
        f.dlc = static_cast<std::uint8_t>(rng.below(9));
        for (std::size_t k = 0; k < f.dlc; ++k)
            f.data[k] = static_cast<std::uint8_t>(rng.below(256));
        auto fields = canio::detokenize(canio::tokenize(f, 16));
        CHECK(fields.can_id == f.can_id);
        CHECK(fields.dlc == f.dlc);
        CHECK(fields.data == f.data);
    }
}

TEST_CASE("canonical CSV round-trip normalizes raw captures") {
    const std::string raw =
        "1.000000,0316,2,AA,BB,R\n"
        "2.000000,0001,0,T\n";
    auto parsed = canio::parse_hcrl_csv(raw);
    REQUIRE(parsed.frames.size() == 2);
    const std::string canonical = canio::serialize_csv(parsed.frames);
    CHECK(canonical ==
          "1.000000,0316,2,AA,BB,00,00,00,00,00,00,R\n"
          "2.000000,0001,0,00,00,00,00,00,00,00,00,T\n");
    // Canonical form is a fixed point.
    auto reparsed = canio::parse_hcrl_csv(canonical);
    REQUIRE(reparsed.errors.empty());
    CHECK(canio::serialize_csv(reparsed.frames) == canonical);
    CHECK(reparsed.frames[0] == parsed.frames[0]);
    CHECK(reparsed.frames[1] == parsed.frames[1]);
}

namespace {

std::vector<CanFrame> synthetic_frames(std::size_t n, std::size_t attack_every) {
    std::vector<CanFrame> frames(n);
    for (std::size_t i = 0; i < n; ++i) {
        frames[i].timestamp = static_cast<double>(i) * 0.001;
        frames[i].can_id = static_cast<std::uint16_t>(i % 1024);
        frames[i].dlc = 8;
        frames[i].label = (attack_every && i % attack_every == 0) ? Label::Attack : Label::Normal;
    }
    return frames;
}

}  // namespace

TEST_CASE("split of 10 frames at 0.7 gives 7 train / 3 test") {
    auto frames = synthetic_frames(10, 5);  // 2 attack, 8 normal
    for (std::uint64_t seed : {1ULL, 2ULL, 99ULL}) {
        auto split = canio::split_dataset(frames, 0.7, seed);
        CHECK(split.train.size() == 7);
        CHECK(split.test.size() == 3);
    }
}

TEST_CASE("split is deterministic under seed and disjoint") {
    auto frames = synthetic_frames(100, 4);
    auto a = canio::split_dataset(frames, 0.7, 42);
    auto b = canio::split_dataset(frames, 0.7, 42);
    REQUIRE(a.train_frames.size() == b.train_frames.size());
    for (std::size_t i = 0; i < a.train_frames.size(); ++i)
        CHECK(a.train_frames[i] == b.train_frames[i]);
    CHECK(a.train.size() + a.test.size() == frames.size());

    auto c = canio::split_dataset(frames, 0.7, 43);
    bool all_same = c.train_frames.size() == a.train_frames.size();
    if (all_same)
        for (std::size_t i = 0; i < a.train_frames.size(); ++i)
            all_same = all_same && a.train_frames[i] == c.train_frames[i];
    CHECK_FALSE(all_same);
}

TEST_CASE("split is stratified: per-class fraction matches the ratio") {
    auto frames = synthetic_frames(1000, 5);  // exactly 200 attack
    auto split = canio::split_dataset(frames, 0.7, 7);
    std::size_t train_attack = 0, train_normal = 0;
    for (const auto& ex : split.train)
        (ex.label == Label::Attack ? train_attack : train_normal)++;
    CHECK(std::abs(static_cast<double>(train_attack) / 200.0 - 0.7) <= 0.001);
    CHECK(std::abs(static_cast<double>(train_normal) / 800.0 - 0.7) <= 0.001);
}

TEST_CASE("split contract errors") {
    std::vector<CanFrame> empty;
    CHECK_THROWS_AS(canio::split_dataset(empty, 0.7, 1), std::invalid_argument);
    auto frames = synthetic_frames(10, 2);
    CHECK_THROWS_AS(canio::split_dataset(frames, 0.0, 1), std::invalid_argument);
    CHECK_THROWS_AS(canio::split_dataset(frames, 1.0, 1), std::invalid_argument);
}
