#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ppgstress/signal.hpp"

namespace ppgstress {

/// Samples per subject-task vector: 3 minutes at 64 Hz.
inline constexpr int kTaskVectorLen = 11520;
inline constexpr int kMaxSubjects = 56;

/// Per-class stack of fixed-length subject vectors, rows ordered by
/// ascending subject id.
struct ClassMatrix {
    int class_label = 0;  // 0 = non-stress (T1), 1 = stress (T2)
    std::vector<int> subject_ids;
    std::vector<std::vector<double>> rows;  // each exactly kTaskVectorLen long
};

/// How build_class_vectors treats imperfect subject data. Over-long vectors
/// are truncated to the first kTaskVectorLen samples under both policies;
/// skip_incomplete additionally drops (with a warning) subjects missing one
/// of their task files instead of failing the whole build. Short vectors are
/// always rejected.
enum class LengthPolicy { truncate, skip_incomplete };

enum class NormScope { per_vector, global_all };

const char* to_string(NormScope s);
NormScope norm_scope_from_string(const std::string& s);

struct PrepareOptions {
    LengthPolicy policy = LengthPolicy::truncate;
    NormScope norm = NormScope::per_vector;
    std::optional<Cheby2Design> bandpass;  // applied to raw samples before normalization
};

/// Reads one BVP recording (one float per line) and attaches its identity.
PpgSignal load_bvp_csv(const std::filesystem::path& path, int subject_id, Task task);

/// Scans root for subject folders s1..s56, each expected to hold
/// bvp_s<i>_T1.csv and bvp_s<i>_T2.csv, and assembles the two class
/// matrices (class 0 from T1/rest, class 1 from T2/speech). Rows are
/// normalized according to options.norm. Warnings (skipped subjects) are
/// appended to `warnings` when given.
std::pair<ClassMatrix, ClassMatrix> build_class_vectors(
    const std::filesystem::path& root, const PrepareOptions& options = {},
    std::vector<std::string>* warnings = nullptr);

/// In-memory equivalent of synth + build_class_vectors: subject i gets a
/// non-stress T1 recording and a stress T2 recording with seeds derived from
/// `seed`, identical to what write_synthetic_tree lays on disk.
std::pair<ClassMatrix, ClassMatrix> build_synthetic_class_vectors(
    int subjects, uint64_t seed, const PrepareOptions& options = {});

/// Writes a synthetic UBFC-Phys-layout tree: out/s<i>/bvp_s<i>_T<j>.csv,
/// 180 s per recording.
void write_synthetic_tree(const std::filesystem::path& out_dir, int subjects, uint64_t seed);

/// Frames every row of both matrices independently (windows never straddle
/// subject boundaries) and labels frames with the row's class.
FrameSet make_labeled_frames(const ClassMatrix& class0, const ClassMatrix& class1, int frame_len,
                             int stride);

enum class SplitMode { frame_level, subject_level };

const char* to_string(SplitMode m);

struct DatasetSplit {
    FrameSet train;
    FrameSet test;
    SplitMode mode = SplitMode::frame_level;
    double train_fraction = 0.4;
    uint64_t seed = 0;
};

/// frame_level: uniform random partition over frames with
/// |train| == round(fraction * total). subject_level: whole subjects land on
/// one side (at least one subject each side). Deterministic per seed.
DatasetSplit split_train_test(const FrameSet& frames, double train_fraction, uint64_t seed,
                              SplitMode mode);

/// Deterministic reordering of the frames; the frame multiset is unchanged.
FrameSet shuffle_epoch(const FrameSet& frames, uint64_t epoch_seed);

// --- cached dataset archive ------------------------------------------------

struct CacheMeta {
    int version = 1;
    NormScope norm = NormScope::per_vector;
    bool bandpassed = false;
};

/// Single-file archive: JSON header (version, subject count, normalization
/// scope, per-class subject ids) followed by both matrices as little-endian
/// 64-bit floats, CRC-protected.
void save_cache(const std::filesystem::path& path, const ClassMatrix& class0,
                const ClassMatrix& class1, const CacheMeta& meta);

std::tuple<ClassMatrix, ClassMatrix, CacheMeta> load_cache(const std::filesystem::path& path);

}  // namespace ppgstress
