// lsfidm command-line tool: simulate CAN traffic, preprocess captures, train
// the teacher and student detectors, distill, evaluate, and compare runs.

#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lsfidm/cli.hpp"

namespace {

using lsfidm::cli::RunConfig;

struct GlobalOpts {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::optional<std::size_t> threads;
};

RunConfig resolve(const GlobalOpts& g) {
    RunConfig cfg;
    if (!g.config_path.empty()) cfg = RunConfig::load(g.config_path);
    if (g.seed) cfg.seed = *g.seed;
    if (!g.out.empty()) cfg.out = g.out;
    if (g.threads) cfg.threads = *g.threads;
    return cfg;
}

void add_global_flags(CLI::App* app, GlobalOpts& g) {
    app->add_option("--config", g.config_path, "JSON config file");
    app->add_option("--seed", g.seed, "random seed");
    app->add_option("--out", g.out, "output directory");
    app->add_option("--threads", g.threads, "worker threads for inference");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"LSF-IDM: CAN-bus intrusion detection via distilled context features"};
    app.require_subcommand(1);

    GlobalOpts g;

    auto* sim = app.add_subcommand("simulate", "generate a labeled synthetic CAN log");
    GlobalOpts g_sim;
    add_global_flags(sim, g_sim);
    std::string attack = "dos";
    double duration = 60.0, rate = 100.0;
    std::vector<double> window;
    std::optional<std::uint16_t> target_id, inject_id;
    sim->add_option("--attack", attack, "dos | fuzzy | spoof | none");
    sim->add_option("--duration", duration, "log duration in seconds");
    sim->add_option("--rate", rate, "injected frames per second");
    sim->add_option("--window", window, "attack window start end")->expected(2);
    sim->add_option("--target-id", target_id, "spoof target CAN id");
    sim->add_option("--inject-id", inject_id, "DoS inject CAN id");

    auto* pre = app.add_subcommand("preprocess", "canonicalize a CAN CSV capture");
    GlobalOpts g_pre;
    add_global_flags(pre, g_pre);
    std::string pre_dataset;
    bool strict = false;
    pre->add_option("--dataset", pre_dataset, "input CSV file");
    pre->add_flag("--strict", strict, "abort on the first malformed record");

    auto* tt = app.add_subcommand("train-teacher", "train the transformer teacher");
    GlobalOpts g_tt;
    add_global_flags(tt, g_tt);
    std::string tt_dataset;
    std::optional<double> tt_ratio;
    std::optional<std::size_t> tt_epochs;
    tt->add_option("--dataset", tt_dataset, "labeled CSV dataset");
    tt->add_option("--train-ratio", tt_ratio, "train split fraction");
    tt->add_option("--epochs", tt_epochs, "override teacher epochs");

    auto* ts = app.add_subcommand("train-student", "train a plain student (no distillation)");
    GlobalOpts g_ts;
    add_global_flags(ts, g_ts);
    std::string ts_dataset, ts_kind;
    std::optional<double> ts_ratio, ts_lr;
    std::optional<std::size_t> ts_epochs, ts_batch;
    ts->add_option("--dataset", ts_dataset, "labeled CSV dataset");
    ts->add_option("--train-ratio", ts_ratio, "train split fraction");
    ts->add_option("--student", ts_kind, "bilstm | dnn");
    ts->add_option("--epochs", ts_epochs, "override student epochs");
    ts->add_option("--lr", ts_lr, "override student learning rate");
    ts->add_option("--batch", ts_batch, "override student batch size");

    auto* di = app.add_subcommand("distill", "train a student against a frozen teacher");
    GlobalOpts g_di;
    add_global_flags(di, g_di);
    std::string di_dataset, di_kind, di_teacher;
    std::optional<double> di_ratio, di_lr, di_alpha, di_temp;
    std::optional<std::size_t> di_epochs, di_batch;
    di->add_option("--dataset", di_dataset, "labeled CSV dataset");
    di->add_option("--train-ratio", di_ratio, "train split fraction");
    di->add_option("--student", di_kind, "bilstm | dnn");
    di->add_option("--teacher-ckpt", di_teacher, "teacher checkpoint path");
    di->add_option("--alpha", di_alpha, "CE/KD blend weight");
    di->add_option("--temperature", di_temp, "distillation temperature");
    di->add_option("--epochs", di_epochs, "override student epochs");
    di->add_option("--lr", di_lr, "override student learning rate");
    di->add_option("--batch", di_batch, "override student batch size");

    auto* ev = app.add_subcommand("evaluate", "evaluate a checkpoint on a labeled dataset");
    GlobalOpts g_ev;
    add_global_flags(ev, g_ev);
    std::string ev_dataset, ev_ckpt;
    ev->add_option("--dataset", ev_dataset, "labeled CSV dataset");
    ev->add_option("--ckpt", ev_ckpt, "model checkpoint");

    auto* cp = app.add_subcommand("compare", "compare metrics across run records");
    GlobalOpts g_cp;
    add_global_flags(cp, g_cp);
    std::vector<std::string> cp_records;
    std::string cp_baseline;
    cp->add_option("records", cp_records, "run directories containing metrics.json");
    cp->add_option("--baseline", cp_baseline, "baseline record (default: first)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (sim->parsed()) {
            RunConfig cfg = resolve(g_sim);
            cfg.sim.attack = attack;
            cfg.sim.duration = duration;
            cfg.sim.rate = rate;
            if (window.size() == 2) {
                cfg.sim.window_start = window[0];
                cfg.sim.window_end = window[1];
            }
            if (target_id) cfg.sim.target_id = target_id;
            if (inject_id) cfg.sim.inject_id = inject_id;
            return lsfidm::cli::cmd_simulate(cfg);
        }
        if (pre->parsed()) {
            RunConfig cfg = resolve(g_pre);
            if (!pre_dataset.empty()) cfg.dataset = pre_dataset;
            if (strict) cfg.strict_parse = true;
            return lsfidm::cli::cmd_preprocess(cfg);
        }
        if (tt->parsed()) {
            RunConfig cfg = resolve(g_tt);
            if (!tt_dataset.empty()) cfg.dataset = tt_dataset;
            if (tt_ratio) cfg.train_ratio = *tt_ratio;
            if (tt_epochs) cfg.teacher_cfg.epochs = *tt_epochs;
            return lsfidm::cli::cmd_train_teacher(cfg);
        }
        if (ts->parsed()) {
            RunConfig cfg = resolve(g_ts);
            if (!ts_dataset.empty()) cfg.dataset = ts_dataset;
            if (ts_ratio) cfg.train_ratio = *ts_ratio;
            if (!ts_kind.empty()) cfg.student_cfg.kind = lsfidm::student::student_kind_from(ts_kind);
            if (ts_epochs) cfg.student_cfg.epochs = *ts_epochs;
            if (ts_lr) cfg.student_cfg.learning_rate = *ts_lr;
            if (ts_batch) cfg.student_cfg.batch_size = *ts_batch;
            return lsfidm::cli::cmd_train_student(cfg);
        }
        if (di->parsed()) {
            RunConfig cfg = resolve(g_di);
            if (!di_dataset.empty()) cfg.dataset = di_dataset;
            if (di_ratio) cfg.train_ratio = *di_ratio;
            if (!di_kind.empty()) cfg.student_cfg.kind = lsfidm::student::student_kind_from(di_kind);
            if (!di_teacher.empty()) cfg.teacher_ckpt = di_teacher;
            if (di_alpha) cfg.alpha = *di_alpha;
            if (di_temp) cfg.temperature = *di_temp;
            if (di_epochs) cfg.student_cfg.epochs = *di_epochs;
            if (di_lr) cfg.student_cfg.learning_rate = *di_lr;
            if (di_batch) cfg.student_cfg.batch_size = *di_batch;
            return lsfidm::cli::cmd_distill(cfg);
        }
        if (ev->parsed()) {
            RunConfig cfg = resolve(g_ev);
            if (!ev_dataset.empty()) cfg.dataset = ev_dataset;
            if (!ev_ckpt.empty()) cfg.checkpoint = ev_ckpt;
            return lsfidm::cli::cmd_evaluate(cfg);
        }
        if (cp->parsed()) {
            RunConfig cfg = resolve(g_cp);
            std::string table;
            int rc = lsfidm::cli::cmd_compare(cfg, cp_records, cp_baseline, &table);
            std::cout << table;
            return rc;
        }
    } catch (const lsfidm::cli::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
