#pragma once

// Command-level orchestration: dataset simulation and preprocessing, the
// three training phases, evaluation, and comparison reports. Owns the run
// directory layout: runs/<name>/{config.json, *.ckpt, train.log.jsonl,
// metrics.json, train.csv, test.csv}.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "lsfidm/canio.hpp"
#include "lsfidm/distill.hpp"
#include "lsfidm/eval.hpp"
#include "lsfidm/serialize.hpp"
#include "lsfidm/student.hpp"
#include "lsfidm/teacher.hpp"
#include "lsfidm/trafficgen.hpp"

namespace lsfidm::cli {

// Training precision: 32-bit is the configured training dtype; the property
// and gradient tests instantiate the same code at 64-bit.
using Real = float;

using nlohmann::json;

// Usage / configuration problems exit with code 2; operational failures
// with 1.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, std::string_view content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open file for writing: " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("failed writing file: " + path);
}

struct SimulateConfig {
    std::string attack = "dos";
    double duration = 60.0;
    double rate = 100.0;
    std::optional<double> window_start;
    std::optional<double> window_end;
    std::optional<std::uint16_t> target_id;   // spoof
    std::optional<std::uint16_t> inject_id;   // dos

    json to_json() const {
        json j = {{"attack", attack}, {"duration", duration}, {"rate", rate}};
        if (window_start && window_end) j["window"] = {*window_start, *window_end};
        if (target_id) j["target_id"] = *target_id;
        if (inject_id) j["inject_id"] = *inject_id;
        return j;
    }

    static SimulateConfig from_json(const json& j) {
        SimulateConfig c;
        c.attack = j.value("attack", c.attack);
        c.duration = j.value("duration", c.duration);
        c.rate = j.value("rate", c.rate);
        if (j.contains("window")) {
            c.window_start = j["window"].at(0).get<double>();
            c.window_end = j["window"].at(1).get<double>();
        }
        if (j.contains("target_id")) c.target_id = j["target_id"].get<std::uint16_t>();
        if (j.contains("inject_id")) c.inject_id = j["inject_id"].get<std::uint16_t>();
        return c;
    }
};

struct RunConfig {
    std::uint64_t seed = 42;
    std::string out = "runs/run";
    std::size_t threads = 1;
    std::string dataset;
    double train_ratio = 0.7;
    bool strict_parse = false;
    std::string checkpoint;     // evaluate
    std::string teacher_ckpt;   // distill
    teacher::TeacherConfig teacher_cfg;
    student::StudentConfig student_cfg;
    double temperature = 2.0;
    double alpha = 0.5;
    bool strict_eq9 = false;
    bool t2_rescale = false;
    SimulateConfig sim;

    distill::DistillConfig distill_cfg() const {
        distill::DistillConfig d;
        d.temperature = temperature;
        d.alpha = alpha;
        d.strict_eq9 = strict_eq9;
        d.t2_rescale = t2_rescale;
        d.student = student_cfg;
        return d;
    }

    json to_json() const {
        json j;
        j["seed"] = seed;
        j["out"] = out;
        j["threads"] = threads;
        j["dataset"] = dataset;
        j["train_ratio"] = train_ratio;
        j["strict_parse"] = strict_parse;
        if (!checkpoint.empty()) j["checkpoint"] = checkpoint;
        j["teacher"] = teacher_cfg.to_json();
        j["student"] = student_cfg.to_json();
        json d = {{"temperature", temperature},
                  {"alpha", alpha},
                  {"strict_eq9", strict_eq9},
                  {"t2_rescale", t2_rescale}};
        if (!teacher_ckpt.empty()) d["teacher_ckpt"] = teacher_ckpt;
        j["distill"] = std::move(d);
        j["simulate"] = sim.to_json();
        return j;
    }

    static RunConfig from_json(const json& j) {
        RunConfig c;
        c.seed = j.value("seed", c.seed);
        c.out = j.value("out", c.out);
        c.threads = j.value("threads", c.threads);
        c.dataset = j.value("dataset", c.dataset);
        c.train_ratio = j.value("train_ratio", c.train_ratio);
        c.strict_parse = j.value("strict_parse", c.strict_parse);
        c.checkpoint = j.value("checkpoint", c.checkpoint);
        if (j.contains("teacher")) c.teacher_cfg = teacher::TeacherConfig::from_json(j["teacher"]);
        if (j.contains("student")) c.student_cfg = student::StudentConfig::from_json(j["student"]);
        if (j.contains("distill")) {
            const json& d = j["distill"];
            c.temperature = d.value("temperature", c.temperature);
            c.alpha = d.value("alpha", c.alpha);
            c.strict_eq9 = d.value("strict_eq9", c.strict_eq9);
            c.t2_rescale = d.value("t2_rescale", c.t2_rescale);
            c.teacher_ckpt = d.value("teacher_ckpt", c.teacher_ckpt);
        }
        if (j.contains("simulate")) c.sim = SimulateConfig::from_json(j["simulate"]);
        return c;
    }

    static RunConfig load(const std::string& path) {
        json j = json::parse(read_file(path), nullptr, false);
        if (j.is_discarded()) throw ConfigError("config file is not valid JSON: " + path);
        return from_json(j);
    }
};

namespace detail {

inline void prepare_out_dir(const RunConfig& cfg) {
    if (cfg.out.empty()) throw ConfigError("no output directory configured (--out)");
    std::filesystem::create_directories(cfg.out);
    // Resolved config is echoed before any long work for crash debuggability.
    write_file(cfg.out + "/config.json", cfg.to_json().dump(2) + "\n");
}

inline std::vector<canio::CanFrame> load_frames(const RunConfig& cfg) {
    if (cfg.dataset.empty()) throw ConfigError("no dataset configured (--dataset)");
    const std::string text = read_file(cfg.dataset);
    auto policy = cfg.strict_parse ? canio::MalformedPolicy::Abort : canio::MalformedPolicy::Skip;
    canio::ParseResult parsed = canio::parse_hcrl_csv(text, policy);
    if (parsed.frames.empty()) throw std::runtime_error("dataset has no frames: " + cfg.dataset);
    return std::move(parsed.frames);
}

inline std::vector<canio::Label> labels_of(std::span<const canio::Example> examples) {
    std::vector<canio::Label> ys(examples.size());
    for (std::size_t i = 0; i < examples.size(); ++i) ys[i] = examples[i].label;
    return ys;
}

inline eval::MetricsReport report_for(const numerics::Tensor<Real>& logits,
                                      std::span<const canio::Example> examples,
                                      const std::string& model_id, const std::string& dataset_id,
                                      std::uint64_t dataset_hash, std::uint64_t seed) {
    std::vector<canio::Label> preds = eval::detect(logits);
    std::vector<canio::Label> truth = labels_of(examples);
    eval::MetricsReport r = eval::metrics(eval::confusion(preds, truth));
    r.model_id = model_id;
    r.dataset_id = dataset_id;
    r.dataset_hash = dataset_hash;
    r.seed = seed;
    return r;
}

inline std::string train_log_jsonl(const teacher::TrainLog& log,
                                   const eval::MetricsReport& final_train_metrics) {
    std::string out;
    for (const auto& s : log.steps) {
        json j = {{"step", s.step}, {"ce", s.ce}, {"kd", s.kd ? json(*s.kd) : json(nullptr)},
                  {"loss", s.loss}};
        out += j.dump();
        out += '\n';
    }
    for (std::size_t e = 0; e < log.epoch_loss.size(); ++e) {
        json j = {{"epoch", e + 1}, {"mean_loss", log.epoch_loss[e]}};
        out += j.dump();
        out += '\n';
    }
    json fin = {{"final_train_metrics", eval::to_json(final_train_metrics)},
                {"early_stopped", log.early_stopped}};
    out += fin.dump();
    out += '\n';
    return out;
}

// Writes the split as canonical CSV and returns (path, hash) pairs keyed for
// later evaluation runs.
struct SplitFiles {
    std::string train_path, test_path;
    std::uint64_t train_hash = 0, test_hash = 0;
};

inline SplitFiles write_split(const RunConfig& cfg, const canio::DatasetSplit& split) {
    SplitFiles f;
    f.train_path = cfg.out + "/train.csv";
    f.test_path = cfg.out + "/test.csv";
    const std::string train_csv = canio::serialize_csv(split.train_frames);
    const std::string test_csv = canio::serialize_csv(split.test_frames);
    f.train_hash = fnv1a64(train_csv);
    f.test_hash = fnv1a64(test_csv);
    write_file(f.train_path, train_csv);
    write_file(f.test_path, test_csv);
    return f;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// simulate

inline trafficgen::AttackKind parse_attack_kind(const std::string& name) {
    if (name == "dos") return trafficgen::AttackKind::Dos;
    if (name == "fuzzy") return trafficgen::AttackKind::Fuzzy;
    if (name == "spoof") return trafficgen::AttackKind::Spoof;
    throw ConfigError("unsupported attack kind '" + name +
                      "' (supported: dos, fuzzy, spoof, none)");
}

inline json manifest_json(const trafficgen::Manifest& m, const std::string& kind) {
    return {{"total", m.total}, {"normal", m.normal}, {"attack", m.attack}, {"kind", kind}};
}

inline int cmd_simulate(const RunConfig& cfg) {
    if (cfg.sim.attack != "none") parse_attack_kind(cfg.sim.attack);  // validate early
    detail::prepare_out_dir(cfg);

    trafficgen::BenignProfile profile = trafficgen::BenignProfile::standard();
    trafficgen::GeneratedLog log = trafficgen::generate_benign(profile, cfg.sim.duration, cfg.seed);
    std::string kind = "none";
    if (cfg.sim.attack != "none") {
        trafficgen::AttackSpec spec;
        spec.kind = parse_attack_kind(cfg.sim.attack);
        spec.rate = cfg.sim.rate;
        spec.window_start = cfg.sim.window_start.value_or(0.0);
        spec.window_end = cfg.sim.window_end.value_or(cfg.sim.duration);
        spec.rng_seed = Rng::splitmix64(cfg.seed ^ 0xA77AC4ULL);
        if (cfg.sim.inject_id) spec.inject_id = *cfg.sim.inject_id;
        spec.target_id = cfg.sim.target_id.value_or(0x316);
        log = trafficgen::inject(log, spec);
        kind = cfg.sim.attack;
    }

    write_file(cfg.out + "/dataset.csv", canio::serialize_csv(log.frames));
    write_file(cfg.out + "/manifest.json", manifest_json(log.manifest, kind).dump(2) + "\n");
    return 0;
}

// ---------------------------------------------------------------------------
// preprocess

inline int cmd_preprocess(const RunConfig& cfg) {
    detail::prepare_out_dir(cfg);
    if (cfg.dataset.empty()) throw ConfigError("no dataset configured (--dataset)");
    const std::string text = read_file(cfg.dataset);
    auto policy = cfg.strict_parse ? canio::MalformedPolicy::Abort : canio::MalformedPolicy::Skip;
    canio::ParseResult parsed = canio::parse_hcrl_csv(text, policy);

    std::size_t normal = 0;
    for (const auto& f : parsed.frames)
        if (f.label == canio::Label::Normal) ++normal;

    write_file(cfg.out + "/canonical.csv", canio::serialize_csv(parsed.frames));
    json errors = json::array();
    for (std::size_t i = 0; i < parsed.errors.size() && i < 100; ++i)
        errors.push_back({{"line", parsed.errors[i].line}, {"message", parsed.errors[i].message}});
    json j = {{"frames", parsed.frames.size()},
              {"normal", normal},
              {"attack", parsed.frames.size() - normal},
              {"skipped", parsed.errors.size()},
              {"errors", std::move(errors)}};
    write_file(cfg.out + "/preprocess.json", j.dump(2) + "\n");
    return 0;
}

// ---------------------------------------------------------------------------
// training commands

inline int cmd_train_teacher(const RunConfig& cfg) {
    detail::prepare_out_dir(cfg);
    std::vector<canio::CanFrame> frames = detail::load_frames(cfg);
    canio::DatasetSplit split = canio::split_dataset(frames, cfg.train_ratio, cfg.seed,
                                                     cfg.teacher_cfg.max_length);
    detail::SplitFiles files = detail::write_split(cfg, split);

    teacher::TrainLog log;
    teacher::TeacherModel<Real> model =
        teacher::train_teacher<Real>(split, cfg.teacher_cfg, cfg.seed, &log);

    json meta = {{"kind", "teacher"}, {"config", cfg.teacher_cfg.to_json()}, {"seed", cfg.seed}};
    numerics::save_params<Real>(cfg.out + "/teacher.ckpt", meta, model.parameters());

    std::vector<canio::TokenSequence> train_tokens, test_tokens;
    for (const auto& ex : split.train) train_tokens.push_back(ex.tokens);
    for (const auto& ex : split.test) test_tokens.push_back(ex.tokens);

    eval::MetricsReport train_report = detail::report_for(
        model.logits_for(train_tokens, 256, cfg.threads), split.train, "teacher",
        files.train_path, files.train_hash, cfg.seed);
    write_file(cfg.out + "/train.log.jsonl", detail::train_log_jsonl(log, train_report));

    eval::MetricsReport test_report = detail::report_for(
        model.logits_for(test_tokens, 256, cfg.threads), split.test, "teacher", files.test_path,
        files.test_hash, cfg.seed);
    write_file(cfg.out + "/metrics.json", eval::to_json(test_report).dump(2) + "\n");
    return 0;
}

inline int cmd_train_student(const RunConfig& cfg) {
    detail::prepare_out_dir(cfg);
    std::vector<canio::CanFrame> frames = detail::load_frames(cfg);
    canio::DatasetSplit split =
        canio::split_dataset(frames, cfg.train_ratio, cfg.seed, cfg.teacher_cfg.max_length);
    detail::SplitFiles files = detail::write_split(cfg, split);

    teacher::TrainLog log;
    student::StudentModel<Real> model =
        student::train_student_plain<Real>(split, cfg.student_cfg, cfg.seed, &log);

    const std::string kind = student::student_kind_name(cfg.student_cfg.kind);
    json meta = {{"kind", kind}, {"config", cfg.student_cfg.to_json()}, {"seed", cfg.seed}};
    auto params = student::parameters(model);
    numerics::save_params<Real>(cfg.out + "/student.ckpt", meta, params);

    eval::MetricsReport train_report = detail::report_for(
        student::logits_for(model, split.train, 1024, cfg.threads), split.train, kind,
        files.train_path, files.train_hash, cfg.seed);
    write_file(cfg.out + "/train.log.jsonl", detail::train_log_jsonl(log, train_report));

    eval::MetricsReport test_report = detail::report_for(
        student::logits_for(model, split.test, 1024, cfg.threads), split.test, kind,
        files.test_path, files.test_hash, cfg.seed);
    write_file(cfg.out + "/metrics.json", eval::to_json(test_report).dump(2) + "\n");
    return 0;
}

inline teacher::TeacherModel<Real> load_teacher(const std::string& path) {
    numerics::LoadedParams<Real> loaded = numerics::load_params<Real>(path);
    if (loaded.model_meta.value("kind", "") != "teacher")
        throw std::runtime_error("checkpoint " + path + " is not a teacher model");
    teacher::TeacherConfig cfg = teacher::TeacherConfig::from_json(loaded.model_meta["config"]);
    teacher::TeacherModel<Real> model(cfg, 0);
    for (numerics::Param<Real>* p : model.parameters()) numerics::restore(*p, loaded, path);
    return model;
}

inline student::StudentModel<Real> load_student(const std::string& path) {
    numerics::LoadedParams<Real> loaded = numerics::load_params<Real>(path);
    const std::string kind = loaded.model_meta.value("kind", "");
    if (kind != "bilstm" && kind != "dnn")
        throw std::runtime_error("checkpoint " + path + " is not a student model");
    student::StudentConfig cfg = student::StudentConfig::from_json(loaded.model_meta["config"]);
    student::StudentModel<Real> model = student::make_student<Real>(cfg, 0);
    for (numerics::Param<Real>* p : student::parameters(model))
        numerics::restore(*p, loaded, path);
    return model;
}

inline int cmd_distill(const RunConfig& cfg) {
    if (cfg.teacher_ckpt.empty())
        throw ConfigError("distill requires a teacher checkpoint (--teacher-ckpt)");
    detail::prepare_out_dir(cfg);
    teacher::TeacherModel<Real> teacher_model = load_teacher(cfg.teacher_ckpt);

    std::vector<canio::CanFrame> frames = detail::load_frames(cfg);
    canio::DatasetSplit split = canio::split_dataset(frames, cfg.train_ratio, cfg.seed,
                                                     teacher_model.config().max_length);
    detail::SplitFiles files = detail::write_split(cfg, split);

    distill::DistillConfig dcfg = cfg.distill_cfg();
    teacher::TrainLog log;
    student::StudentModel<Real> model = distill::train_student_with_kd<Real>(
        split, teacher_model, dcfg, cfg.seed, &log, cfg.threads);

    const std::string kind = student::student_kind_name(dcfg.student.kind);
    const std::string model_id = kind + "+kd";
    json meta = {{"kind", kind},
                 {"config", dcfg.student.to_json()},
                 {"distill", dcfg.to_json()},
                 {"seed", cfg.seed}};
    auto params = student::parameters(model);
    numerics::save_params<Real>(cfg.out + "/student.ckpt", meta, params);

    eval::MetricsReport train_report = detail::report_for(
        student::logits_for(model, split.train, 1024, cfg.threads), split.train, model_id,
        files.train_path, files.train_hash, cfg.seed);
    write_file(cfg.out + "/train.log.jsonl", detail::train_log_jsonl(log, train_report));

    eval::MetricsReport test_report = detail::report_for(
        student::logits_for(model, split.test, 1024, cfg.threads), split.test, model_id,
        files.test_path, files.test_hash, cfg.seed);
    write_file(cfg.out + "/metrics.json", eval::to_json(test_report).dump(2) + "\n");
    return 0;
}

// ---------------------------------------------------------------------------
// evaluate

inline int cmd_evaluate(const RunConfig& cfg) {
    if (cfg.checkpoint.empty()) throw ConfigError("evaluate requires a checkpoint (--ckpt)");
    detail::prepare_out_dir(cfg);
    if (cfg.dataset.empty()) throw ConfigError("no dataset configured (--dataset)");

    const std::string text = read_file(cfg.dataset);
    auto policy = cfg.strict_parse ? canio::MalformedPolicy::Abort : canio::MalformedPolicy::Skip;
    canio::ParseResult parsed = canio::parse_hcrl_csv(text, policy);
    if (parsed.frames.empty()) throw std::runtime_error("dataset has no frames: " + cfg.dataset);
    const std::uint64_t hash = fnv1a64(text);

    nlohmann::json meta = numerics::load_checkpoint_meta(cfg.checkpoint);
    const std::string kind = meta.value("kind", "");

    numerics::Tensor<Real> logits;
    std::size_t max_length = 16;
    if (kind == "teacher") {
        teacher::TeacherModel<Real> model = load_teacher(cfg.checkpoint);
        max_length = model.config().max_length;
        std::vector<canio::TokenSequence> tokens;
        tokens.reserve(parsed.frames.size());
        for (const auto& f : parsed.frames) tokens.push_back(canio::tokenize(f, max_length));
        logits = model.logits_for(tokens, 256, cfg.threads);
    } else if (kind == "bilstm" || kind == "dnn") {
        student::StudentModel<Real> model = load_student(cfg.checkpoint);
        std::vector<canio::Example> examples;
        examples.reserve(parsed.frames.size());
        for (const auto& f : parsed.frames) examples.push_back(canio::make_example(f, max_length));
        logits = student::logits_for(model, examples, 1024, cfg.threads);
    } else {
        throw std::runtime_error("checkpoint " + cfg.checkpoint + " has unknown model kind");
    }

    std::vector<canio::Label> truth(parsed.frames.size());
    for (std::size_t i = 0; i < parsed.frames.size(); ++i) truth[i] = parsed.frames[i].label;
    std::vector<canio::Label> preds = eval::detect(logits);
    eval::MetricsReport r = eval::metrics(eval::confusion(preds, truth));
    r.model_id = kind;
    r.dataset_id = cfg.dataset;
    r.dataset_hash = hash;
    r.seed = cfg.seed;
    write_file(cfg.out + "/metrics.json", eval::to_json(r).dump(2) + "\n");
    return 0;
}

// ---------------------------------------------------------------------------
// compare

struct CompareResult {
    json report;
    std::string table;
};

inline CompareResult compare_records(const std::vector<std::string>& record_dirs,
                                     const std::string& baseline_dir) {
    if (record_dirs.size() < 2) throw ConfigError("compare needs at least two records");
    std::vector<std::pair<std::string, eval::MetricsReport>> records;
    for (const std::string& dir : record_dirs) {
        json j = json::parse(read_file(dir + "/metrics.json"));
        records.emplace_back(dir, eval::from_json(j));
    }
    const eval::MetricsReport* baseline = nullptr;
    for (const auto& [dir, r] : records)
        if (dir == baseline_dir) baseline = &r;
    if (!baseline) throw ConfigError("baseline record not among compared records");
    for (const auto& [dir, r] : records)
        if (r.dataset_hash != baseline->dataset_hash)
            throw std::runtime_error("test-set hash mismatch between " + dir + " and baseline");

    static constexpr const char* kNames[6] = {"acc", "f1", "pre", "rec", "fnr", "fpr"};
    auto metric = [](const eval::MetricsReport& r, int k) -> const std::optional<double>& {
        switch (k) {
            case 0: return r.acc;
            case 1: return r.f1;
            case 2: return r.pre;
            case 3: return r.rec;
            case 4: return r.fnr;
            default: return r.fpr;
        }
    };

    json out;
    out["baseline"] = baseline_dir;
    out["records"] = json::array();
    std::ostringstream table;
    table << "record                           model       ";
    for (const char* n : kNames) {
        table << "  " << n << "/%      d" << n;
    }
    table << '\n';
    char buf[64];
    for (const auto& [dir, r] : records) {
        json rec = {{"dir", dir}, {"model_id", r.model_id}};
        json vals = json::object();
        json deltas = json::object();
        std::snprintf(buf, sizeof(buf), "%-32s %-10s", dir.c_str(), r.model_id.c_str());
        table << buf;
        for (int k = 0; k < 6; ++k) {
            const auto& v = metric(r, k);
            const auto& b = metric(*baseline, k);
            vals[kNames[k]] = v ? json(*v) : json(nullptr);
            if (v && b) {
                deltas[kNames[k]] = *v - *b;
                std::snprintf(buf, sizeof(buf), "  %6.2f  %+6.2f", *v * 100.0,
                              (*v - *b) * 100.0);
            } else {
                deltas[kNames[k]] = nullptr;
                std::snprintf(buf, sizeof(buf), "  %6s  %6s", "n/a", "n/a");
            }
            table << buf;
        }
        table << '\n';
        rec["metrics"] = std::move(vals);
        rec["delta"] = std::move(deltas);
        out["records"].push_back(std::move(rec));
    }
    return {std::move(out), table.str()};
}

inline int cmd_compare(const RunConfig& cfg, const std::vector<std::string>& record_dirs,
                       std::string baseline_dir, std::string* table_out = nullptr) {
    if (baseline_dir.empty() && !record_dirs.empty()) baseline_dir = record_dirs.front();
    CompareResult res = compare_records(record_dirs, baseline_dir);
    if (!cfg.out.empty()) {
        std::filesystem::create_directories(cfg.out);
        write_file(cfg.out + "/compare.json", res.report.dump(2) + "\n");
    }
    if (table_out) *table_out = res.table;
    return 0;
}

}  // namespace lsfidm::cli
