#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ppgstress/trainer.hpp"

namespace ppgstress {

struct SweepEntry {
    NetworkConfig net;
    TrainConfig train;
};

struct SweepGrid {
    std::vector<SweepEntry> entries;
    int repeats = 1;
};

/// The nine benchmark structure rows shipped with the tool, in canonical
/// order. Two of the kernel sizes (16 and 512) fall outside the canonical
/// kernel-size domain {32, 64, 128}; the rows are reproduced literally.
SweepGrid table2_grid();

struct SweepRow {
    NetworkConfig net;
    int repeat = 0;
    bool ok = false;
    std::string error;  // set when !ok
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
    int epochs_run = 0;
    StopReason stop_reason = StopReason::max_epochs;
    // Measured, not reproducible; kept out of emitted report files so that
    // reruns with identical seeds produce byte-identical output.
    double wall_time_s = 0.0;
};

struct SweepReport {
    std::vector<SweepRow> rows;  // always in grid order
};

struct SweepDataOptions {
    double train_fraction = 0.4;
    SplitMode mode = SplitMode::frame_level;
};

/// Trains every (entry, repeat) pair independently with per-row seed =
/// base_seed XOR row index. Rows that fail (infeasible geometry, divergence)
/// become error entries instead of aborting the sweep; if every row fails
/// the sweep itself throws. `jobs` worker threads may run rows concurrently;
/// the report is identical regardless of job count.
SweepReport run_sweep(const SweepGrid& grid, const ClassMatrix& class0, const ClassMatrix& class1,
                      uint64_t base_seed, const SweepDataOptions& data = {}, int jobs = 1);

/// One sweep-schema row for a single training run.
SweepRow sweep_row_of(const NetworkConfig& net, const TrainReport& report);

/// Tab-separated report: header row, then one row per entry with accuracies
/// as percentages at one decimal.
std::string report_tsv(const SweepReport& report);
void emit_report_tsv(const SweepReport& report, const std::filesystem::path& path);

/// Parses a TSV produced by report_tsv (numeric fields round-trip at the
/// emitted precision).
SweepReport parse_report_tsv(const std::string& text);

/// Pipe table with the benchmark table's column headers.
std::string report_markdown(const SweepReport& report);
void emit_report_markdown(const SweepReport& report, const std::filesystem::path& path);

/// Grid file: JSON array of {n, m, Fsize, fsize, SS, st} objects with
/// optional training overrides (lr, epochs, patience, val_fraction,
/// delta_lms).
SweepGrid load_grid_file(const std::filesystem::path& path);

}  // namespace ppgstress
