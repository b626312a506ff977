#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "ppgstress/dataset.hpp"
#include "ppgstress/network.hpp"
#include "ppgstress/signal.hpp"
#include "ppgstress/sweep.hpp"
#include "ppgstress/trainer.hpp"
#include "ppgstress/util.hpp"

using namespace ppgstress;

namespace {

constexpr uint64_t kCliSplitSalt = 1;
constexpr uint64_t kCliInitSalt = 2;
constexpr uint64_t kCliTrainSalt = 3;

struct DataSource {
    std::string data_dir;
    std::string cache_file;
    bool skip_incomplete = false;

    void add_options(CLI::App* cmd) {
        cmd->add_option("--data", data_dir, "UBFC-Phys-layout directory (s<i>/bvp_s<i>_T<j>.csv)");
        cmd->add_option("--cache", cache_file, "prepared dataset cache file");
        cmd->add_flag("--skip-incomplete", skip_incomplete,
                      "skip subjects with missing task files instead of failing");
    }

    std::pair<ClassMatrix, ClassMatrix> load() const {
        if (data_dir.empty() == cache_file.empty()) {
            throw std::invalid_argument("provide exactly one of --data or --cache");
        }
        if (!cache_file.empty()) {
            auto [c0, c1, meta] = load_cache(cache_file);
            return {std::move(c0), std::move(c1)};
        }
        PrepareOptions options;
        if (skip_incomplete) options.policy = LengthPolicy::skip_incomplete;
        std::vector<std::string> warnings;
        auto matrices = build_class_vectors(data_dir, options, &warnings);
        for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
        return matrices;
    }
};

SplitMode parse_split_mode(const std::string& s) {
    if (s == "frame") return SplitMode::frame_level;
    if (s == "subject") return SplitMode::subject_level;
    throw std::invalid_argument("--split must be 'frame' or 'subject'");
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(path + ": cannot open for writing");
    out << text;
    if (!out) throw DataError(path + ": write failed");
}

std::string eval_report_json(const EvalResult& res, size_t frames) {
    nlohmann::json j = {
        {"version", 1},
        {"accuracy", res.accuracy},
        {"confusion",
         {{res.confusion[0][0], res.confusion[0][1]},
          {res.confusion[1][0], res.confusion[1][1]}}},
        {"frames", frames},
    };
    return j.dump(2) + "\n";
}

void run_synth(const std::string& out_dir, int subjects, uint64_t seed) {
    write_synthetic_tree(out_dir, subjects, seed);
    std::cout << "wrote " << subjects
              << " synthetic subjects (T1 rest + T2 speech, 180 s at 64 Hz) under " << out_dir
              << "\n";
}

void run_prepare(const DataSource& source, const std::string& cache_out,
                 const std::string& filter, const std::string& norm) {
    PrepareOptions options;
    options.norm = norm_scope_from_string(norm);
    if (source.skip_incomplete) options.policy = LengthPolicy::skip_incomplete;
    if (!filter.empty()) {
        if (filter != "cheby2") {
            throw std::invalid_argument("unknown --filter '" + filter + "' (supported: cheby2)");
        }
        options.bandpass = Cheby2Design{};
    }

    std::vector<std::string> warnings;
    const auto [c0, c1] = build_class_vectors(source.data_dir, options, &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";

    CacheMeta meta;
    meta.norm = options.norm;
    meta.bandpassed = options.bandpass.has_value();
    save_cache(cache_out, c0, c1, meta);
    std::cout << "cached " << c0.rows.size() << "+" << c1.rows.size() << " class vectors ("
              << to_string(meta.norm) << " normalization"
              << (meta.bandpassed ? ", cheby2 bandpass" : "") << ") to " << cache_out << "\n";
}

struct TrainFlags {
    NetworkConfig net;
    TrainConfig cfg;
    std::string split_mode = "frame";
    double train_fraction = 0.4;
    uint64_t seed = 1;
    std::string model_out;
    std::string report_out;
    std::string report_tsv_out;
};

void add_network_options(CLI::App* cmd, NetworkConfig& net) {
    cmd->add_option("--n", net.cnn_layers, "number of CNN layers")->capture_default_str();
    cmd->add_option("--m", net.mlp_layers, "number of MLP layers (output layer included)")
        ->capture_default_str();
    cmd->add_option("--Fsize", net.frame_len, "frame size in samples")->capture_default_str();
    cmd->add_option("--fsize", net.kernel_len, "convolution kernel length")->capture_default_str();
    cmd->add_option("--ss", net.subsample, "subsampling rate")->capture_default_str();
    cmd->add_option("--stride", net.stride, "frame stride in samples")->capture_default_str();
}

void run_train(const DataSource& source, const TrainFlags& flags) {
    const auto [c0, c1] = source.load();
    const auto frames = make_labeled_frames(c0, c1, flags.net.frame_len, flags.net.stride);
    const auto split = split_train_test(frames, flags.train_fraction,
                                        mix_seed(flags.seed, kCliSplitSalt),
                                        parse_split_mode(flags.split_mode));

    ModelState model = build_network(flags.net, mix_seed(flags.seed, kCliInitSalt));
    TrainConfig cfg = flags.cfg;
    cfg.seed = mix_seed(flags.seed, kCliTrainSalt);
    auto [trained, report] = train(std::move(model), split, cfg);

    std::cout << "epochs " << report.epochs_run << " (" << to_string(report.stop_reason)
              << "), train accuracy " << report.train_accuracy << ", test accuracy "
              << report.test_accuracy << "\n";
    if (!flags.model_out.empty()) {
        save_model(trained, flags.model_out);
        std::cout << "checkpoint written to " << flags.model_out << "\n";
    }
    if (!flags.report_out.empty()) {
        write_text_file(flags.report_out, report_to_json(report, flags.net));
        std::cout << "report written to " << flags.report_out << "\n";
    }
    if (!flags.report_tsv_out.empty()) {
        SweepReport single;
        single.rows.push_back(sweep_row_of(flags.net, report));
        emit_report_tsv(single, flags.report_tsv_out);
        std::cout << "TSV row written to " << flags.report_tsv_out << "\n";
    }
}

void run_eval(const std::string& model_path, const DataSource& source,
              const std::string& report_out) {
    const ModelState model = load_model(model_path);
    const auto [c0, c1] = source.load();
    const auto frames = make_labeled_frames(c0, c1, model.config.frame_len, model.config.stride);
    const auto res = evaluate(model, frames);
    std::cout << "accuracy " << res.accuracy << " over " << frames.size() << " frames\n";
    if (!report_out.empty()) {
        write_text_file(report_out, eval_report_json(res, frames.size()));
    }
}

struct SweepFlags {
    std::string grid = "table2";
    uint64_t base_seed = 1;
    std::string tsv_out;
    std::string md_out;
    int jobs = 1;
    double train_fraction = 0.4;
    std::string split_mode = "frame";
    std::optional<double> lr;
    std::optional<int> epochs;
    std::optional<int> patience;
    std::optional<double> val_fraction;
};

void run_sweep_cmd(const DataSource& source, const SweepFlags& flags) {
    SweepGrid grid = flags.grid == "table2" ? table2_grid() : load_grid_file(flags.grid);
    for (auto& e : grid.entries) {
        if (flags.lr) e.train.learning_rate = *flags.lr;
        if (flags.epochs) e.train.max_epochs = *flags.epochs;
        if (flags.patience) e.train.patience = *flags.patience;
        if (flags.val_fraction) e.train.val_fraction = *flags.val_fraction;
    }

    const auto [c0, c1] = source.load();
    SweepDataOptions data;
    data.train_fraction = flags.train_fraction;
    data.mode = parse_split_mode(flags.split_mode);

    const auto report = run_sweep(grid, c0, c1, flags.base_seed, data, flags.jobs);
    emit_report_tsv(report, flags.tsv_out);
    if (!flags.md_out.empty()) emit_report_markdown(report, flags.md_out);

    for (size_t i = 0; i < report.rows.size(); ++i) {
        const auto& r = report.rows[i];
        std::cerr << "row " << i + 1 << ": ";
        if (r.ok) {
            std::cerr << "train " << r.train_accuracy << ", test " << r.test_accuracy << ", "
                      << r.epochs_run << " epochs (" << to_string(r.stop_reason) << "), "
                      << r.wall_time_s << " s\n";
        } else {
            std::cerr << "failed: " << r.error << "\n";
        }
    }
    std::cout << "sweep report written to " << flags.tsv_out << "\n";
}

void run_gradcheck(const NetworkConfig& net, uint64_t seed, double tolerance) {
    const auto report = gradient_check(net, seed, tolerance);
    for (const auto& layer : report.layers) {
        std::printf("%-8s max relative error %.3e\n", layer.name.c_str(), layer.max_rel_error);
    }
    std::printf("overall %.3e (tolerance %.1e): %s\n", report.max_rel_error, report.tolerance,
                report.passed ? "OK" : "FAILED");
    if (!report.passed) {
        throw NumericError("gradient check failed");
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"PPG stress classification: 1D CNN-MLP training engine"};
    app.require_subcommand(1);

    auto* synth = app.add_subcommand("synth", "generate a synthetic two-class dataset tree");
    std::string synth_out;
    int synth_subjects = 56;
    uint64_t synth_seed = 1;
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--subjects", synth_subjects, "number of subjects")->capture_default_str();
    synth->add_option("--seed", synth_seed, "generator seed")->capture_default_str();
    synth->callback([&] { run_synth(synth_out, synth_subjects, synth_seed); });

    auto* prepare = app.add_subcommand("prepare", "build and cache the class matrices");
    DataSource prepare_source;
    std::string prepare_cache;
    std::string prepare_filter;
    std::string prepare_norm = "per-vector";
    prepare->add_option("--data", prepare_source.data_dir, "dataset directory")->required();
    prepare->add_option("--cache", prepare_cache, "output cache file")->required();
    prepare->add_option("--filter", prepare_filter, "optional preprocessing filter (cheby2)");
    prepare->add_option("--norm", prepare_norm, "normalization scope: per-vector|global")
        ->capture_default_str();
    prepare->add_flag("--skip-incomplete", prepare_source.skip_incomplete,
                      "skip subjects with missing task files instead of failing");
    prepare->callback(
        [&] { run_prepare(prepare_source, prepare_cache, prepare_filter, prepare_norm); });

    auto* train_cmd = app.add_subcommand("train", "train one model and save checkpoint/report");
    DataSource train_source;
    train_source.add_options(train_cmd);
    TrainFlags train_flags;
    add_network_options(train_cmd, train_flags.net);
    train_cmd->add_option("--lr", train_flags.cfg.learning_rate, "SGD learning rate")
        ->capture_default_str();
    train_cmd->add_option("--epochs", train_flags.cfg.max_epochs, "epoch cap")
        ->capture_default_str();
    train_cmd->add_option("--delta-lms", train_flags.cfg.delta_lms_threshold,
                          "delta-LMS stopping threshold")
        ->capture_default_str();
    train_cmd->add_option("--patience", train_flags.cfg.patience, "best-fit patience in epochs")
        ->capture_default_str();
    train_cmd->add_option("--val-frac", train_flags.cfg.val_fraction,
                          "fraction of train frames used for best-fit monitoring")
        ->capture_default_str();
    train_cmd->add_option("--split", train_flags.split_mode, "split mode: frame|subject")
        ->capture_default_str();
    train_cmd->add_option("--train-frac", train_flags.train_fraction, "train fraction")
        ->capture_default_str();
    train_cmd->add_option("--seed", train_flags.seed, "master seed")->capture_default_str();
    train_cmd->add_option("--out", train_flags.model_out, "checkpoint output path");
    train_cmd->add_option("--report", train_flags.report_out, "JSON report output path");
    train_cmd->add_option("--report-tsv", train_flags.report_tsv_out,
                          "sweep-schema TSV row output path");
    train_cmd->callback([&] { run_train(train_source, train_flags); });

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint over a dataset");
    DataSource eval_source;
    eval_source.add_options(eval_cmd);
    std::string eval_model;
    std::string eval_report;
    eval_cmd->add_option("--model", eval_model, "checkpoint path")->required();
    eval_cmd->add_option("--report", eval_report, "JSON report output path");
    eval_cmd->callback([&] { run_eval(eval_model, eval_source, eval_report); });

    auto* sweep_cmd = app.add_subcommand("sweep", "run a structure-parameter grid");
    DataSource sweep_source;
    sweep_source.add_options(sweep_cmd);
    SweepFlags sweep_flags;
    sweep_cmd->add_option("--grid", sweep_flags.grid, "'table2' or a JSON grid file")
        ->capture_default_str();
    sweep_cmd
        ->add_option("--base-seed", sweep_flags.base_seed,
                     "base seed (per-row seed = base XOR row index)")
        ->capture_default_str();
    sweep_cmd->add_option("--out", sweep_flags.tsv_out, "TSV report path")->required();
    sweep_cmd->add_option("--md", sweep_flags.md_out, "optional markdown report path");
    sweep_cmd->add_option("--jobs", sweep_flags.jobs, "concurrent rows")->capture_default_str();
    sweep_cmd->add_option("--train-frac", sweep_flags.train_fraction, "train fraction")
        ->capture_default_str();
    sweep_cmd->add_option("--split", sweep_flags.split_mode, "split mode: frame|subject")
        ->capture_default_str();
    double sweep_lr = 0.0;
    int sweep_epochs = 0, sweep_patience = 0;
    double sweep_val = 0.0;
    auto* lr_opt = sweep_cmd->add_option("--lr", sweep_lr, "override learning rate for all rows");
    auto* ep_opt =
        sweep_cmd->add_option("--epochs", sweep_epochs, "override epoch cap for all rows");
    auto* pa_opt =
        sweep_cmd->add_option("--patience", sweep_patience, "override patience for all rows");
    auto* va_opt = sweep_cmd->add_option("--val-frac", sweep_val, "override validation fraction");
    sweep_cmd->callback([&] {
        if (lr_opt->count()) sweep_flags.lr = sweep_lr;
        if (ep_opt->count()) sweep_flags.epochs = sweep_epochs;
        if (pa_opt->count()) sweep_flags.patience = sweep_patience;
        if (va_opt->count()) sweep_flags.val_fraction = sweep_val;
        run_sweep_cmd(sweep_source, sweep_flags);
    });

    auto* gradcheck_cmd =
        app.add_subcommand("gradcheck", "check analytic gradients against finite differences");
    NetworkConfig gc_net;
    gc_net.frame_len = 64;
    gc_net.kernel_len = 8;
    gc_net.subsample = 2;
    gc_net.stride = 24;
    add_network_options(gradcheck_cmd, gc_net);
    uint64_t gc_seed = 1;
    double gc_tolerance = 1e-4;
    gradcheck_cmd->add_option("--seed", gc_seed, "seed")->capture_default_str();
    gradcheck_cmd->add_option("--tolerance", gc_tolerance, "max relative error allowed")
        ->capture_default_str();
    gradcheck_cmd->callback([&] { run_gradcheck(gc_net, gc_seed, gc_tolerance); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
