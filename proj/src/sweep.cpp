#include "ppgstress/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "ppgstress/util.hpp"

namespace ppgstress {

using nlohmann::json;

SweepGrid table2_grid() {
    struct Row {
        int n, m, frame, kernel, ss, stride;
    };
    static constexpr Row rows[] = {
        {3, 2, 64, 16, 2, 24},    {3, 2, 128, 32, 2, 24},  {2, 2, 512, 64, 2, 24},
        {2, 2, 1024, 128, 2, 24}, {2, 2, 1024, 512, 4, 24}, {2, 2, 1024, 512, 4, 12},
        {2, 2, 1024, 512, 4, 5},  {2, 2, 1024, 512, 6, 5},  {2, 2, 1024, 512, 8, 2},
    };
    SweepGrid grid;
    for (const Row& r : rows) {
        SweepEntry e;
        e.net.cnn_layers = r.n;
        e.net.mlp_layers = r.m;
        e.net.frame_len = r.frame;
        e.net.kernel_len = r.kernel;
        e.net.subsample = r.ss;
        e.net.stride = r.stride;
        grid.entries.push_back(e);
    }
    return grid;
}

namespace {

constexpr uint64_t kRowSplitSalt = 1;
constexpr uint64_t kRowInitSalt = 2;
constexpr uint64_t kRowTrainSalt = 3;

SweepRow run_one(const SweepEntry& entry, int repeat, uint64_t row_seed,
                 const ClassMatrix& class0, const ClassMatrix& class1,
                 const SweepDataOptions& data) {
    SweepRow row;
    row.net = entry.net;
    row.repeat = repeat;
    const auto started = std::chrono::steady_clock::now();
    try {
        const FrameSet frames =
            make_labeled_frames(class0, class1, entry.net.frame_len, entry.net.stride);
        const DatasetSplit split = split_train_test(frames, data.train_fraction,
                                                    mix_seed(row_seed, kRowSplitSalt), data.mode);
        ModelState model = build_network(entry.net, mix_seed(row_seed, kRowInitSalt));
        TrainConfig cfg = entry.train;
        cfg.seed = mix_seed(row_seed, kRowTrainSalt);
        auto [trained, report] = train(std::move(model), split, cfg);
        row.ok = true;
        row.train_accuracy = report.train_accuracy;
        row.test_accuracy = report.test_accuracy;
        row.epochs_run = report.epochs_run;
        row.stop_reason = report.stop_reason;
    } catch (const std::exception& e) {
        row.ok = false;
        row.error = e.what();
    }
    row.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return row;
}

std::string percent_1dp(double fraction) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", fraction * 100.0);
    return buf;
}

}  // namespace

SweepReport run_sweep(const SweepGrid& grid, const ClassMatrix& class0, const ClassMatrix& class1,
                      uint64_t base_seed, const SweepDataOptions& data, int jobs) {
    if (grid.entries.empty()) throw std::invalid_argument("empty sweep grid");
    if (grid.repeats < 1) throw std::invalid_argument("repeats must be positive");
    if (jobs < 1) throw std::invalid_argument("jobs must be positive");

    const size_t total = grid.entries.size() * static_cast<size_t>(grid.repeats);
    SweepReport report;
    report.rows.resize(total);

    std::atomic<size_t> next{0};
    auto worker = [&] {
        while (true) {
            const size_t idx = next.fetch_add(1);
            if (idx >= total) return;
            const size_t entry_idx = idx / static_cast<size_t>(grid.repeats);
            const int repeat = static_cast<int>(idx % static_cast<size_t>(grid.repeats));
            report.rows[idx] = run_one(grid.entries[entry_idx], repeat, base_seed ^ idx, class0,
                                       class1, data);
        }
    };

    const int n_threads = std::min<int>(jobs, static_cast<int>(total));
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<size_t>(n_threads));
        for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    const bool any_ok =
        std::any_of(report.rows.begin(), report.rows.end(), [](const SweepRow& r) { return r.ok; });
    if (!any_ok) {
        throw NumericError("all sweep rows failed; first error: " + report.rows.front().error);
    }
    return report;
}

SweepRow sweep_row_of(const NetworkConfig& net, const TrainReport& report) {
    SweepRow row;
    row.net = net;
    row.ok = true;
    row.train_accuracy = report.train_accuracy;
    row.test_accuracy = report.test_accuracy;
    row.epochs_run = report.epochs_run;
    row.stop_reason = report.stop_reason;
    return row;
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

namespace {
constexpr const char* kTsvHeader =
    "classes\tcnn_layers\tmlp_layers\tframe_size\tkernel_size\tsubsample\tstride\t"
    "train_accuracy_pct\ttest_accuracy_pct\tepochs\tstop_reason\tstatus";
}

std::string report_tsv(const SweepReport& report) {
    std::string out = kTsvHeader;
    out += '\n';
    for (const SweepRow& r : report.rows) {
        out += std::to_string(r.net.classes) + '\t' + std::to_string(r.net.cnn_layers) + '\t' +
               std::to_string(r.net.mlp_layers) + '\t' + std::to_string(r.net.frame_len) + '\t' +
               std::to_string(r.net.kernel_len) + '\t' + std::to_string(r.net.subsample) + '\t' +
               std::to_string(r.net.stride) + '\t';
        if (r.ok) {
            out += percent_1dp(r.train_accuracy) + '\t' + percent_1dp(r.test_accuracy) + '\t' +
                   std::to_string(r.epochs_run) + '\t' + to_string(r.stop_reason) + "\tok";
        } else {
            std::string sanitized = r.error;
            for (char& ch : sanitized) {
                if (ch == '\t' || ch == '\n') ch = ' ';
            }
            out += "-\t-\t0\t-\terror: " + sanitized;
        }
        out += '\n';
    }
    return out;
}

void emit_report_tsv(const SweepReport& report, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(path.string() + ": cannot open for writing");
    out << report_tsv(report);
    if (!out) throw DataError(path.string() + ": write failed");
}

SweepReport parse_report_tsv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kTsvHeader) {
        throw DataError("unrecognized sweep report header");
    }
    SweepReport report;
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        size_t start = 0;
        while (true) {
            const size_t tab = line.find('\t', start);
            fields.push_back(line.substr(start, tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        if (fields.size() != 12) {
            throw DataError("sweep report line " + std::to_string(line_no) +
                            ": expected 12 fields, got " + std::to_string(fields.size()));
        }
        SweepRow r;
        r.net.classes = std::stoi(fields[0]);
        r.net.cnn_layers = std::stoi(fields[1]);
        r.net.mlp_layers = std::stoi(fields[2]);
        r.net.frame_len = std::stoi(fields[3]);
        r.net.kernel_len = std::stoi(fields[4]);
        r.net.subsample = std::stoi(fields[5]);
        r.net.stride = std::stoi(fields[6]);
        r.ok = fields[11] == "ok";
        if (r.ok) {
            r.train_accuracy = std::stod(fields[7]) / 100.0;
            r.test_accuracy = std::stod(fields[8]) / 100.0;
            r.epochs_run = std::stoi(fields[9]);
            r.stop_reason = stop_reason_from_string(fields[10]);
        } else {
            r.error = fields[11];
        }
        report.rows.push_back(std::move(r));
    }
    return report;
}

std::string report_markdown(const SweepReport& report) {
    std::string out =
        "| No. of classes | No. of CNN layers (n) | No. of MLP layers (m) | Frame size (F size) "
        "| Filter size (f size) | Subsampling rate (SS) | stride | Training accuracy | Testing "
        "accuracy |\n";
    out += "|---|---|---|---|---|---|---|---|---|\n";
    for (const SweepRow& r : report.rows) {
        out += "| " + std::to_string(r.net.classes) + " | " + std::to_string(r.net.cnn_layers) +
               " | " + std::to_string(r.net.mlp_layers) + " | " + std::to_string(r.net.frame_len) +
               " | " + std::to_string(r.net.kernel_len) + " | " + std::to_string(r.net.subsample) +
               " | " + std::to_string(r.net.stride) + " | ";
        if (r.ok) {
            out += percent_1dp(r.train_accuracy) + "% | " + percent_1dp(r.test_accuracy) + "% |\n";
        } else {
            out += "error | error |\n";
        }
    }
    return out;
}

void emit_report_markdown(const SweepReport& report, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(path.string() + ": cannot open for writing");
    out << report_markdown(report);
    if (!out) throw DataError(path.string() + ": write failed");
}

SweepGrid load_grid_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError(path.string() + ": cannot open file");
    json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded() || !doc.is_array()) {
        throw DataError(path.string() + ": grid file must be a JSON array");
    }
    SweepGrid grid;
    for (const json& j : doc) {
        SweepEntry e;
        e.net.cnn_layers = j.at("n").get<int>();
        e.net.mlp_layers = j.at("m").get<int>();
        e.net.frame_len = j.at("Fsize").get<int>();
        e.net.kernel_len = j.at("fsize").get<int>();
        e.net.subsample = j.at("SS").get<int>();
        e.net.stride = j.at("st").get<int>();
        if (j.contains("lr")) e.train.learning_rate = j.at("lr").get<double>();
        if (j.contains("epochs")) e.train.max_epochs = j.at("epochs").get<int>();
        if (j.contains("patience")) e.train.patience = j.at("patience").get<int>();
        if (j.contains("val_fraction")) e.train.val_fraction = j.at("val_fraction").get<double>();
        if (j.contains("delta_lms")) e.train.delta_lms_threshold = j.at("delta_lms").get<double>();
        grid.entries.push_back(std::move(e));
    }
    if (grid.entries.empty()) throw DataError(path.string() + ": grid file is empty");
    return grid;
}

}  // namespace ppgstress
