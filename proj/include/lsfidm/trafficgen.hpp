#pragma once

// Synthetic CAN traffic: periodic benign schedules plus DoS / fuzzy / spoof
// injection, producing labeled logs independent of any captured dataset.

#include <algorithm>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "lsfidm/canio.hpp"
#include "lsfidm/rng.hpp"

namespace lsfidm::trafficgen {

using canio::CanFrame;
using canio::Label;

enum class PayloadRule { Constant, CounterAt, RandomWalkAt };

struct EcuSpec {
    std::uint16_t can_id = 0;
    double period_s = 0.0;
    PayloadRule rule = PayloadRule::Constant;
    std::array<std::uint8_t, 8> base{};  // payload template
    int pos = 0;                         // byte position for counter / walk rules
    int step = 1;                        // max walk step
    std::uint8_t dlc = 8;
};

struct BenignProfile {
    std::vector<EcuSpec> ecus;

    void validate() const {
        if (ecus.empty()) throw std::invalid_argument("benign profile has no ECUs");
        for (const auto& e : ecus) {
            if (e.period_s <= 0.0) throw std::invalid_argument("ECU period must be > 0");
            if (e.can_id > canio::kMaxCanId) throw std::invalid_argument("ECU id exceeds 11 bits");
            if (e.dlc > canio::kMaxDlc) throw std::invalid_argument("ECU dlc exceeds 8");
        }
    }

    std::uint16_t min_id() const {
        std::uint16_t m = canio::kMaxCanId;
        for (const auto& e : ecus) m = std::min(m, e.can_id);
        return m;
    }

    // Built-in mixed profile, aggregate rate 400 frames/s. Constant bytes stay
    // below 0xF0 so the default forged payload is outside every benign range.
    static BenignProfile standard() {
        BenignProfile p;
        p.ecus = {
            {0x110, 0.010, PayloadRule::CounterAt, {0x00, 0x20, 0x11, 0x00, 0x42, 0x06, 0x00, 0x3A}, 0, 1},
            {0x1A0, 0.020, PayloadRule::Constant, {0x10, 0x22, 0x33, 0x44, 0x55, 0x66, 0x77, 0x08}, 0, 1},
            {0x220, 0.010, PayloadRule::RandomWalkAt, {0x7F, 0x00, 0xC8, 0x80, 0x00, 0x12, 0x00, 0x00}, 3, 5},
            {0x2C0, 0.025, PayloadRule::Constant, {0x05, 0x21, 0x68, 0x09, 0x21, 0x21, 0x00, 0x6F}, 0, 1},
            {0x316, 0.020, PayloadRule::CounterAt, {0x29, 0x40, 0x00, 0x88, 0x01, 0x15, 0x00, 0x00}, 7, 1},
            {0x3D0, 0.025, PayloadRule::RandomWalkAt, {0x00, 0x60, 0x00, 0x00, 0xE0, 0x00, 0x07, 0x00}, 1, 3},
            {0x430, 0.050, PayloadRule::Constant, {0xD0, 0x00, 0x00, 0x8E, 0x00, 0x00, 0x00, 0x00}, 0, 1},
        };
        return p;
    }
};

enum class AttackKind { Dos, Fuzzy, Spoof };

inline const char* attack_kind_name(AttackKind k) {
    switch (k) {
        case AttackKind::Dos: return "dos";
        case AttackKind::Fuzzy: return "fuzzy";
        case AttackKind::Spoof: return "spoof";
    }
    return "?";
}

struct AttackSpec {
    AttackKind kind = AttackKind::Dos;
    double rate = 0.0;  // injected frames per second
    double window_start = 0.0;
    double window_end = 0.0;
    std::uint16_t inject_id = 0x000;                       // DoS
    std::uint64_t rng_seed = 0;                            // Fuzzy
    std::uint16_t target_id = 0;                           // Spoof
    std::array<std::uint8_t, 8> forged_payload = {0xFF, 0xFF, 0xFF, 0xFF,
                                                  0xFF, 0xFF, 0xFF, 0xFF};  // Spoof
};

struct Manifest {
    std::size_t total = 0;
    std::size_t normal = 0;
    std::size_t attack = 0;
    std::map<std::string, std::size_t> per_kind;
};

struct GeneratedLog {
    std::vector<CanFrame> frames;  // time-ordered
    double duration = 0.0;
    Manifest manifest;
};

namespace detail {

inline void check_window(const GeneratedLog& log, const AttackSpec& spec) {
    if (spec.rate <= 0.0) throw std::invalid_argument("injection rate must be > 0");
    if (spec.window_start < 0.0 || spec.window_end > log.duration ||
        spec.window_start >= spec.window_end)
        throw std::invalid_argument("attack window outside log duration");
}

// Injection instants on a fixed grid: start + k/rate while inside the window.
inline std::vector<double> injection_times(const AttackSpec& spec) {
    std::vector<double> times;
    for (std::size_t k = 0;; ++k) {
        double t = spec.window_start + static_cast<double>(k) / spec.rate;
        if (t >= spec.window_end) break;
        times.push_back(t);
    }
    return times;
}

inline GeneratedLog merge_injected(const GeneratedLog& log, std::vector<CanFrame> injected,
                                   AttackKind kind) {
    GeneratedLog out;
    out.duration = log.duration;
    out.frames.resize(log.frames.size() + injected.size());
    // Benign frames win ties so existing traffic is never displaced.
    std::merge(log.frames.begin(), log.frames.end(), injected.begin(), injected.end(),
               out.frames.begin(),
               [](const CanFrame& a, const CanFrame& b) { return a.timestamp < b.timestamp; });
    out.manifest = log.manifest;
    out.manifest.total += injected.size();
    out.manifest.attack += injected.size();
    out.manifest.per_kind[attack_kind_name(kind)] += injected.size();
    return out;
}

}  // namespace detail

// Each ECU emits on its own jittered period (+-1% uniform); streams are
// merged by timestamp. Everything is labeled Normal.
inline GeneratedLog generate_benign(const BenignProfile& profile, double duration,
                                    std::uint64_t seed) {
    profile.validate();
    if (duration <= 0.0) throw std::invalid_argument("duration must be > 0");

    GeneratedLog log;
    log.duration = duration;
    for (std::size_t i = 0; i < profile.ecus.size(); ++i) {
        const EcuSpec& ecu = profile.ecus[i];
        Rng rng = Rng::fork(seed, i);
        std::array<std::uint8_t, 8> payload = ecu.base;
        for (std::size_t b = ecu.dlc; b < 8; ++b) payload[b] = 0;
        std::uint8_t counter = payload[static_cast<std::size_t>(ecu.pos)];
        double t = rng.uniform(0.0, ecu.period_s);  // phase offset
        while (t < duration) {
            CanFrame f;
            f.timestamp = t;
            f.can_id = ecu.can_id;
            f.dlc = ecu.dlc;
            switch (ecu.rule) {
                case PayloadRule::Constant:
                    break;
                case PayloadRule::CounterAt:
                    payload[static_cast<std::size_t>(ecu.pos)] = counter++;
                    break;
                case PayloadRule::RandomWalkAt: {
                    int v = payload[static_cast<std::size_t>(ecu.pos)];
                    v += static_cast<int>(rng.uniform_int(-ecu.step, ecu.step));
                    payload[static_cast<std::size_t>(ecu.pos)] =
                        static_cast<std::uint8_t>(std::clamp(v, 0, 255));
                    break;
                }
            }
            f.data = payload;
            f.label = Label::Normal;
            log.frames.push_back(f);
            t += ecu.period_s * (1.0 + rng.uniform(-0.01, 0.01));
        }
    }
    std::stable_sort(log.frames.begin(), log.frames.end(),
                     [](const CanFrame& a, const CanFrame& b) { return a.timestamp < b.timestamp; });
    log.manifest.total = log.frames.size();
    log.manifest.normal = log.frames.size();
    return log;
}

// Highest-priority flooding: constant id (default 0x000) and all-zero payload.
inline GeneratedLog inject_dos(const GeneratedLog& log, const AttackSpec& spec) {
    if (spec.kind != AttackKind::Dos) throw std::invalid_argument("spec kind is not DoS");
    detail::check_window(log, spec);
    for (const CanFrame& f : log.frames)
        if (f.label == Label::Normal && spec.inject_id > f.can_id)
            throw std::invalid_argument("DoS inject id has lower priority than benign traffic");

    std::vector<CanFrame> injected;
    for (double t : detail::injection_times(spec)) {
        CanFrame f;
        f.timestamp = t;
        f.can_id = spec.inject_id;
        f.dlc = 8;
        f.label = Label::Attack;
        injected.push_back(f);
    }
    return detail::merge_injected(log, std::move(injected), AttackKind::Dos);
}

// Random id and payload per injected frame.
inline GeneratedLog inject_fuzzy(const GeneratedLog& log, const AttackSpec& spec) {
    if (spec.kind != AttackKind::Fuzzy) throw std::invalid_argument("spec kind is not Fuzzy");
    detail::check_window(log, spec);

    Rng rng(spec.rng_seed);
    std::vector<CanFrame> injected;
    for (double t : detail::injection_times(spec)) {
        CanFrame f;
        f.timestamp = t;
        f.can_id = static_cast<std::uint16_t>(rng.below(canio::kMaxCanId + 1));
        f.dlc = 8;
        for (auto& b : f.data) b = static_cast<std::uint8_t>(rng.below(256));
        f.label = Label::Attack;
        injected.push_back(f);
    }
    return detail::merge_injected(log, std::move(injected), AttackKind::Fuzzy);
}

// Reuse a legitimate id with a forged payload; contextual rather than
// priority-based, so detection must look at the data field.
inline GeneratedLog inject_spoof(const GeneratedLog& log, const AttackSpec& spec) {
    if (spec.kind != AttackKind::Spoof) throw std::invalid_argument("spec kind is not Spoof");
    detail::check_window(log, spec);
    bool known = false;
    for (const CanFrame& f : log.frames)
        if (f.label == Label::Normal && f.can_id == spec.target_id) {
            known = true;
            break;
        }
    if (!known) throw std::invalid_argument("spoof target id not present in benign traffic");

    std::vector<CanFrame> injected;
    for (double t : detail::injection_times(spec)) {
        CanFrame f;
        f.timestamp = t;
        f.can_id = spec.target_id;
        f.dlc = 8;
        f.data = spec.forged_payload;
        f.label = Label::Attack;
        injected.push_back(f);
    }
    return detail::merge_injected(log, std::move(injected), AttackKind::Spoof);
}

inline GeneratedLog inject(const GeneratedLog& log, const AttackSpec& spec) {
    switch (spec.kind) {
        case AttackKind::Dos: return inject_dos(log, spec);
        case AttackKind::Fuzzy: return inject_fuzzy(log, spec);
        case AttackKind::Spoof: return inject_spoof(log, spec);
    }
    throw std::invalid_argument("unknown attack kind");
}

}  // namespace lsfidm::trafficgen
