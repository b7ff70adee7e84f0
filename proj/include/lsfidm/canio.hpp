#pragma once

// CAN log ingestion: HCRL-style CSV parsing, field normalization for the
// recurrent/DNN detectors and tokenization for the transformer detector.

#include <array>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lsfidm/rng.hpp"

namespace lsfidm::canio {

enum class Label : std::uint8_t { Normal = 0, Attack = 1 };

inline constexpr std::uint16_t kMaxCanId = 0x7FF;
inline constexpr std::uint8_t kMaxDlc = 8;

// One parsed CAN message. Payload is always 8 bytes; positions >= dlc are
// zero (the padding rule).
struct CanFrame {
    double timestamp = 0.0;
    std::uint16_t can_id = 0;
    std::uint8_t dlc = 0;
    std::array<std::uint8_t, 8> data{};
    Label label = Label::Normal;

    friend bool operator==(const CanFrame&, const CanFrame&) = default;
};

// Normalized (id, dlc, data[0..7]) in [0,1]; input to the lightweight models.
struct FeatureVector {
    std::array<double, 10> values{};
};

// Token ids for the transformer detector, padded/truncated to max_length.
// mask[i] is 1 exactly at non-pad positions.
struct TokenSequence {
    std::vector<std::uint16_t> tokens;
    std::vector<std::uint8_t> mask;
};

// Vocabulary: PAD/CLS/SEP, one token per byte value, one token per 11-bit id.
inline constexpr std::uint16_t kPadToken = 0;
inline constexpr std::uint16_t kClsToken = 1;
inline constexpr std::uint16_t kSepToken = 2;
inline constexpr std::uint16_t kByteTokenBase = 3;                      // 256 tokens
inline constexpr std::uint16_t kIdTokenBase = kByteTokenBase + 256;     // 2048 tokens
inline constexpr std::uint16_t kVocabSize = kIdTokenBase + kMaxCanId + 1;  // 2307
inline constexpr std::size_t kContentTokens = 12;  // CLS, id, dlc, 8 data bytes, SEP

struct Example {
    FeatureVector features;
    TokenSequence tokens;
    Label label = Label::Normal;
};

struct DatasetSplit {
    std::vector<Example> train;
    std::vector<Example> test;
    // The frames behind each side, in the same order; kept so splits can be
    // re-serialized as canonical CSV.
    std::vector<CanFrame> train_frames;
    std::vector<CanFrame> test_frames;
    std::uint64_t seed = 0;
};

struct RecordError {
    std::size_t line = 0;  // 1-based
    std::string message;
};

struct ParseResult {
    std::vector<CanFrame> frames;
    std::vector<RecordError> errors;  // skipped records (skip policy only)
};

enum class MalformedPolicy { Skip, Abort };

namespace detail {

inline bool parse_u64(std::string_view s, int base, std::uint64_t& out) {
    if (s.empty()) return false;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, out, base);
    return ec == std::errc{} && ptr == last;
}

inline bool parse_double(std::string_view s, double& out) {
    if (s.empty()) return false;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size();
}

inline void split_fields(std::string_view line, std::vector<std::string_view>& out) {
    out.clear();
    std::size_t start = 0;
    while (true) {
        std::size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            out.push_back(line.substr(start));
            return;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

}  // namespace detail

// Zero-fill payload bytes past dlc.
inline std::array<std::uint8_t, 8> pad_data_field(std::span<const std::uint8_t> bytes,
                                                  std::uint8_t dlc) {
    if (dlc > kMaxDlc) throw std::invalid_argument("pad_data_field: dlc > 8");
    if (bytes.size() != dlc)
        throw std::invalid_argument("pad_data_field: byte count does not match dlc");
    std::array<std::uint8_t, 8> out{};
    for (std::size_t i = 0; i < dlc; ++i) out[i] = bytes[i];
    return out;
}

// Parse HCRL-style CSV: timestamp,id_hex,dlc,byte0,...,byte{dlc-1},flag with
// flag R (normal) or T (injected). The canonical shape with all 8 data bytes
// present is accepted for any dlc. An optional header row (non-numeric first
// field) is skipped. Malformed records are skipped and reported, or abort
// parsing, per policy.
inline ParseResult parse_hcrl_csv(std::string_view text,
                                  MalformedPolicy policy = MalformedPolicy::Skip) {
    ParseResult result;
    std::vector<std::string_view> fields;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    bool first_record = true;

    auto fail = [&](const std::string& msg) {
        if (policy == MalformedPolicy::Abort)
            throw std::runtime_error("parse error at line " + std::to_string(line_no) + ": " + msg);
        result.errors.push_back({line_no, msg});
    };

    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        std::string_view line = text.substr(pos, eol == std::string_view::npos ? std::string_view::npos
                                                                               : eol - pos);
        pos = eol == std::string_view::npos ? text.size() : eol + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;

        detail::split_fields(line, fields);

        if (first_record) {
            first_record = false;
            double probe;
            if (!detail::parse_double(fields[0], probe)) continue;  // header row
        }

        if (fields.size() < 4) {
            fail("expected at least 4 columns, got " + std::to_string(fields.size()));
            continue;
        }

        CanFrame frame;
        if (!detail::parse_double(fields[0], frame.timestamp)) {
            fail("bad timestamp '" + std::string(fields[0]) + "'");
            continue;
        }
        std::uint64_t id;
        if (!detail::parse_u64(fields[1], 16, id) || id > kMaxCanId) {
            fail("bad CAN id '" + std::string(fields[1]) + "'");
            continue;
        }
        frame.can_id = static_cast<std::uint16_t>(id);
        std::uint64_t dlc;
        if (!detail::parse_u64(fields[2], 10, dlc) || dlc > kMaxDlc) {
            fail("bad dlc '" + std::string(fields[2]) + "'");
            continue;
        }
        frame.dlc = static_cast<std::uint8_t>(dlc);

        // 4 + dlc columns (raw capture) or 12 columns (canonical, 8 bytes).
        std::size_t n_bytes = fields.size() - 4;
        if (n_bytes != frame.dlc && n_bytes != 8) {
            fail("expected " + std::to_string(4 + frame.dlc) + " or 12 columns, got " +
                 std::to_string(fields.size()));
            continue;
        }

        bool bad_byte = false;
        for (std::size_t i = 0; i < n_bytes; ++i) {
            std::uint64_t b;
            if (!detail::parse_u64(fields[3 + i], 16, b) || b > 0xFF) {
                fail("bad data byte '" + std::string(fields[3 + i]) + "'");
                bad_byte = true;
                break;
            }
            if (i >= frame.dlc && b != 0) {
                fail("nonzero data byte past dlc");
                bad_byte = true;
                break;
            }
            frame.data[i] = static_cast<std::uint8_t>(b);
        }
        if (bad_byte) continue;

        std::string_view flag = fields.back();
        if (flag == "R") {
            frame.label = Label::Normal;
        } else if (flag == "T") {
            frame.label = Label::Attack;
        } else {
            fail("bad flag '" + std::string(flag) + "'");
            continue;
        }
        result.frames.push_back(frame);
    }
    return result;
}

// Canonical CSV record: fixed 12 columns, all 8 data bytes explicit.
inline void append_csv(std::string& out, const CanFrame& f) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f,%04X,%u", f.timestamp, f.can_id,
                  static_cast<unsigned>(f.dlc));
    out += buf;
    for (std::uint8_t b : f.data) {
        std::snprintf(buf, sizeof(buf), ",%02X", static_cast<unsigned>(b));
        out += buf;
    }
    out += f.label == Label::Normal ? ",R\n" : ",T\n";
}

inline std::string serialize_csv(std::span<const CanFrame> frames) {
    std::string out;
    out.reserve(frames.size() * 48);
    for (const CanFrame& f : frames) append_csv(out, f);
    return out;
}

// Fixed min-max scaling by field domain: id/2047, dlc/8, byte/255.
inline FeatureVector to_feature_vector(const CanFrame& frame) {
    FeatureVector v;
    v.values[0] = static_cast<double>(frame.can_id) / static_cast<double>(kMaxCanId);
    v.values[1] = static_cast<double>(frame.dlc) / static_cast<double>(kMaxDlc);
    for (std::size_t i = 0; i < 8; ++i)
        v.values[2 + i] = static_cast<double>(frame.data[i]) / 255.0;
    return v;
}

// [CLS, id, dlc, data0..data7, SEP] then PAD up to max_length.
inline TokenSequence tokenize(const CanFrame& frame, std::size_t max_length) {
    if (max_length < kContentTokens)
        throw std::invalid_argument("tokenize: max_length must be >= 12");
    TokenSequence seq;
    seq.tokens.assign(max_length, kPadToken);
    seq.mask.assign(max_length, 0);
    seq.tokens[0] = kClsToken;
    seq.tokens[1] = static_cast<std::uint16_t>(kIdTokenBase + frame.can_id);
    seq.tokens[2] = static_cast<std::uint16_t>(kByteTokenBase + frame.dlc);
    for (std::size_t i = 0; i < 8; ++i)
        seq.tokens[3 + i] = static_cast<std::uint16_t>(kByteTokenBase + frame.data[i]);
    seq.tokens[11] = kSepToken;
    for (std::size_t i = 0; i < kContentTokens; ++i) seq.mask[i] = 1;
    return seq;
}

struct DetokenizedFields {
    std::uint16_t can_id = 0;
    std::uint8_t dlc = 0;
    std::array<std::uint8_t, 8> data{};
};

inline DetokenizedFields detokenize(const TokenSequence& seq) {
    if (seq.tokens.size() < kContentTokens)
        throw std::invalid_argument("detokenize: sequence too short");
    auto byte_of = [](std::uint16_t tok) -> std::uint8_t {
        if (tok < kByteTokenBase || tok >= kIdTokenBase)
            throw std::invalid_argument("detokenize: not a byte token");
        return static_cast<std::uint8_t>(tok - kByteTokenBase);
    };
    DetokenizedFields f;
    if (seq.tokens[1] < kIdTokenBase)
        throw std::invalid_argument("detokenize: not an id token");
    f.can_id = static_cast<std::uint16_t>(seq.tokens[1] - kIdTokenBase);
    f.dlc = byte_of(seq.tokens[2]);
    for (std::size_t i = 0; i < 8; ++i) f.data[i] = byte_of(seq.tokens[3 + i]);
    return f;
}

inline Example make_example(const CanFrame& frame, std::size_t max_length) {
    return Example{to_feature_vector(frame), tokenize(frame, max_length), frame.label};
}

// Stratified split: per-class deterministic shuffle under seed, per-class
// train count rounded to ratio (within +-1), membership order preserved.
inline DatasetSplit split_dataset(std::span<const CanFrame> frames, double train_ratio,
                                  std::uint64_t seed, std::size_t max_length = 16) {
    if (frames.empty()) throw std::invalid_argument("split_dataset: empty input");
    if (!(train_ratio > 0.0 && train_ratio < 1.0))
        throw std::invalid_argument("split_dataset: train_ratio must be in (0,1)");

    std::vector<std::size_t> by_class[2];
    for (std::size_t i = 0; i < frames.size(); ++i)
        by_class[static_cast<std::size_t>(frames[i].label)].push_back(i);

    std::vector<std::uint8_t> in_train(frames.size(), 0);
    for (int c = 0; c < 2; ++c) {
        auto& idx = by_class[c];
        if (idx.empty()) continue;
        Rng rng = Rng::fork(seed, static_cast<std::uint64_t>(c));
        shuffle(idx, rng);
        std::size_t n_train = static_cast<std::size_t>(
            train_ratio * static_cast<double>(idx.size()) + 0.5);
        for (std::size_t k = 0; k < n_train; ++k) in_train[idx[k]] = 1;
    }

    DatasetSplit split;
    split.seed = seed;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        if (in_train[i]) {
            split.train.push_back(make_example(frames[i], max_length));
            split.train_frames.push_back(frames[i]);
        } else {
            split.test.push_back(make_example(frames[i], max_length));
            split.test_frames.push_back(frames[i]);
        }
    }
    return split;
}

}  // namespace lsfidm::canio
