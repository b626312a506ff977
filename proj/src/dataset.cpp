#include "ppgstress/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>
#include <zlib.h>

#include "ppgstress/util.hpp"

namespace ppgstress {

using nlohmann::json;

const char* to_string(NormScope s) {
    return s == NormScope::per_vector ? "per-vector" : "global";
}

NormScope norm_scope_from_string(const std::string& s) {
    if (s == "per-vector") return NormScope::per_vector;
    if (s == "global") return NormScope::global_all;
    throw std::invalid_argument("unknown normalization scope '" + s + "'");
}

const char* to_string(SplitMode m) {
    return m == SplitMode::frame_level ? "frame" : "subject";
}

PpgSignal load_bvp_csv(const std::filesystem::path& path, int subject_id, Task task) {
    PpgSignal sig;
    sig.samples = read_signal_csv(path);
    sig.sample_rate_hz = kSampleRateHz;
    sig.subject_id = subject_id;
    sig.task = task;
    return sig;
}

namespace {

struct SubjectVectors {
    int subject_id = 0;
    std::vector<double> t1;
    std::vector<double> t2;
};

std::vector<double> enforce_row_length(std::vector<double> samples, int subject_id,
                                       Task task) {
    if (samples.size() < static_cast<size_t>(kTaskVectorLen)) {
        throw DataError("subject s" + std::to_string(subject_id) + ": " + to_string(task) +
                        " vector shorter than " + std::to_string(kTaskVectorLen) +
                        " samples (got " + std::to_string(samples.size()) + ")");
    }
    samples.resize(kTaskVectorLen);
    return samples;
}

std::vector<double> normalize_with_range(const std::vector<double>& x, double mn, double mx) {
    std::vector<double> out(x.size(), 0.0);
    if (mx == mn) return out;
    const double scale = 2.0 / (mx - mn);
    for (size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mn) * scale - 1.0;
    return out;
}

// Shared tail of the disk and synthetic paths: optional bandpass, then
// normalization at the configured scope, then matrix assembly.
std::pair<ClassMatrix, ClassMatrix> assemble_matrices(std::vector<SubjectVectors> subjects,
                                                      const PrepareOptions& options) {
    if (subjects.empty()) throw DataError("no usable subjects");

    if (options.bandpass) {
        const auto sections = design_cheby2_bandpass(
            options.bandpass->order, options.bandpass->stop_lo_hz, options.bandpass->stop_hi_hz,
            options.bandpass->stop_atten_db, static_cast<double>(kSampleRateHz));
        for (SubjectVectors& s : subjects) {
            s.t1 = sosfilt(sections, s.t1);
            s.t2 = sosfilt(sections, s.t2);
        }
    }

    ClassMatrix c0, c1;
    c0.class_label = 0;
    c1.class_label = 1;

    if (options.norm == NormScope::per_vector) {
        for (SubjectVectors& s : subjects) {
            c0.subject_ids.push_back(s.subject_id);
            c0.rows.push_back(normalize_minmax(s.t1));
            c1.subject_ids.push_back(s.subject_id);
            c1.rows.push_back(normalize_minmax(s.t2));
        }
    } else {
        double mn = subjects.front().t1.front(), mx = mn;
        for (const SubjectVectors& s : subjects) {
            for (double v : s.t1) {
                mn = std::min(mn, v);
                mx = std::max(mx, v);
            }
            for (double v : s.t2) {
                mn = std::min(mn, v);
                mx = std::max(mx, v);
            }
        }
        for (SubjectVectors& s : subjects) {
            c0.subject_ids.push_back(s.subject_id);
            c0.rows.push_back(normalize_with_range(s.t1, mn, mx));
            c1.subject_ids.push_back(s.subject_id);
            c1.rows.push_back(normalize_with_range(s.t2, mn, mx));
        }
    }
    return {std::move(c0), std::move(c1)};
}

}  // namespace

std::pair<ClassMatrix, ClassMatrix> build_class_vectors(const std::filesystem::path& root,
                                                        const PrepareOptions& options,
                                                        std::vector<std::string>* warnings) {
    if (!std::filesystem::is_directory(root)) {
        throw DataError(root.string() + ": not a directory");
    }
    std::vector<SubjectVectors> subjects;
    for (int i = 1; i <= kMaxSubjects; ++i) {
        const std::string name = "s" + std::to_string(i);
        const auto dir = root / name;
        if (!std::filesystem::is_directory(dir)) continue;

        const auto t1_path = dir / ("bvp_" + name + "_T1.csv");
        const auto t2_path = dir / ("bvp_" + name + "_T2.csv");
        std::string missing;
        if (!std::filesystem::is_regular_file(t1_path)) missing = t1_path.filename().string();
        else if (!std::filesystem::is_regular_file(t2_path)) missing = t2_path.filename().string();
        if (!missing.empty()) {
            if (options.policy == LengthPolicy::skip_incomplete) {
                if (warnings) {
                    warnings->push_back("subject " + name + " skipped: missing " + missing);
                }
                continue;
            }
            throw DataError("subject " + name + ": missing " + missing);
        }

        SubjectVectors s;
        s.subject_id = i;
        s.t1 = enforce_row_length(load_bvp_csv(t1_path, i, Task::T1_rest).samples, i,
                                  Task::T1_rest);
        s.t2 = enforce_row_length(load_bvp_csv(t2_path, i, Task::T2_speech).samples, i,
                                  Task::T2_speech);
        subjects.push_back(std::move(s));
    }
    if (subjects.empty()) throw DataError("no usable subjects under " + root.string());
    return assemble_matrices(std::move(subjects), options);
}

std::pair<ClassMatrix, ClassMatrix> build_synthetic_class_vectors(int subjects, uint64_t seed,
                                                                  const PrepareOptions& options) {
    if (subjects < 1) throw std::invalid_argument("subject count must be positive");
    std::vector<SubjectVectors> rows;
    for (int i = 1; i <= subjects; ++i) {
        SubjectVectors s;
        s.subject_id = i;
        s.t1 = synth_ppg(non_stress_preset(mix_seed(seed, static_cast<uint64_t>(i) * 2))).samples;
        s.t2 = synth_ppg(stress_preset(mix_seed(seed, static_cast<uint64_t>(i) * 2 + 1))).samples;
        rows.push_back(std::move(s));
    }
    return assemble_matrices(std::move(rows), options);
}

void write_synthetic_tree(const std::filesystem::path& out_dir, int subjects, uint64_t seed) {
    if (subjects < 1) throw std::invalid_argument("subject count must be positive");
    for (int i = 1; i <= subjects; ++i) {
        const std::string name = "s" + std::to_string(i);
        const auto dir = out_dir / name;
        std::filesystem::create_directories(dir);
        const auto t1 = synth_ppg(non_stress_preset(mix_seed(seed, static_cast<uint64_t>(i) * 2)));
        const auto t2 = synth_ppg(stress_preset(mix_seed(seed, static_cast<uint64_t>(i) * 2 + 1)));
        write_signal_csv(dir / ("bvp_" + name + "_T1.csv"), t1.samples);
        write_signal_csv(dir / ("bvp_" + name + "_T2.csv"), t2.samples);
    }
}

FrameSet make_labeled_frames(const ClassMatrix& class0, const ClassMatrix& class1, int frame_len,
                             int stride) {
    FrameSet fs(frame_len, stride);
    for (size_t r = 0; r < class0.rows.size(); ++r) {
        fs.add_signal(std::make_shared<const std::vector<double>>(class0.rows[r]),
                      class0.class_label, class0.subject_ids[r], Task::T1_rest);
    }
    for (size_t r = 0; r < class1.rows.size(); ++r) {
        fs.add_signal(std::make_shared<const std::vector<double>>(class1.rows[r]),
                      class1.class_label, class1.subject_ids[r], Task::T2_speech);
    }
    return fs;
}

DatasetSplit split_train_test(const FrameSet& frames, double train_fraction, uint64_t seed,
                              SplitMode mode) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw std::invalid_argument("train fraction must lie in (0, 1)");
    }
    if (frames.empty()) throw std::invalid_argument("cannot split an empty frame set");

    constexpr uint64_t kSplitSalt = 0x53504C4954ull;
    Rng rng(mix_seed(seed, kSplitSalt));

    std::vector<size_t> train_idx, test_idx;
    if (mode == SplitMode::frame_level) {
        std::vector<size_t> perm(frames.size());
        for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        shuffle_in_place(perm, rng);
        const auto n_train = static_cast<size_t>(
            std::llround(train_fraction * static_cast<double>(frames.size())));
        train_idx.assign(perm.begin(), perm.begin() + std::min(n_train, perm.size()));
        test_idx.assign(perm.begin() + std::min(n_train, perm.size()), perm.end());
        std::sort(train_idx.begin(), train_idx.end());
        std::sort(test_idx.begin(), test_idx.end());
    } else {
        std::vector<int> subjects = frames.subject_ids();
        if (subjects.size() < 2) {
            throw std::invalid_argument("subject-level split needs at least 2 subjects");
        }
        shuffle_in_place(subjects, rng);
        auto n_train_subjects = static_cast<size_t>(
            std::llround(train_fraction * static_cast<double>(subjects.size())));
        n_train_subjects = std::clamp<size_t>(n_train_subjects, 1, subjects.size() - 1);
        const std::set<int> train_set(subjects.begin(), subjects.begin() + n_train_subjects);
        for (size_t i = 0; i < frames.size(); ++i) {
            if (train_set.count(frames.origin(i).subject_id)) {
                train_idx.push_back(i);
            } else {
                test_idx.push_back(i);
            }
        }
    }

    DatasetSplit split;
    split.train = frames.select(train_idx);
    split.test = frames.select(test_idx);
    split.mode = mode;
    split.train_fraction = train_fraction;
    split.seed = seed;
    return split;
}

FrameSet shuffle_epoch(const FrameSet& frames, uint64_t epoch_seed) {
    std::vector<size_t> perm(frames.size());
    for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    Rng rng(epoch_seed);
    shuffle_in_place(perm, rng);
    return frames.select(perm);
}

// ---------------------------------------------------------------------------
// Cache archive
// ---------------------------------------------------------------------------

namespace {

constexpr char kCacheMagic[9] = "PPGCACH1";

uint32_t crc_of(const std::string& bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()),
                static_cast<uInt>(bytes.size()));
    return static_cast<uint32_t>(crc);
}

void append_matrix(std::string& out, const ClassMatrix& m) {
    for (const auto& row : m.rows) {
        for (double v : row) append_f64_le(out, v);
    }
}

}  // namespace

void save_cache(const std::filesystem::path& path, const ClassMatrix& class0,
                const ClassMatrix& class1, const CacheMeta& meta) {
    std::set<int> distinct(class0.subject_ids.begin(), class0.subject_ids.end());
    distinct.insert(class1.subject_ids.begin(), class1.subject_ids.end());

    json header = {
        {"version", meta.version},
        {"subject_count", distinct.size()},
        {"normalization", to_string(meta.norm)},
        {"bandpassed", meta.bandpassed},
        {"row_len", kTaskVectorLen},
        {"class0_subjects", class0.subject_ids},
        {"class1_subjects", class1.subject_ids},
    };
    const std::string header_str = header.dump();

    std::string bytes(kCacheMagic, 8);
    append_u32_le(bytes, static_cast<uint32_t>(header_str.size()));
    bytes += header_str;
    append_matrix(bytes, class0);
    append_matrix(bytes, class1);
    append_u32_le(bytes, crc_of(bytes));

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(path.string() + ": cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError(path.string() + ": write failed");
}

std::tuple<ClassMatrix, ClassMatrix, CacheMeta> load_cache(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(path.string() + ": cannot open file");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (bytes.size() < 16 || bytes.compare(0, 8, kCacheMagic, 8) != 0) {
        throw DataError(path.string() + ": not a dataset cache file");
    }
    const std::string body = bytes.substr(0, bytes.size() - 4);
    const uint32_t stored_crc =
        read_u32_le(reinterpret_cast<const unsigned char*>(bytes.data()) + bytes.size() - 4);
    if (crc_of(body) != stored_crc) {
        throw DataError(path.string() + ": checksum mismatch (corrupted cache)");
    }

    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    size_t pos = 8;
    const uint32_t header_len = read_u32_le(p + pos);
    pos += 4;
    if (pos + header_len > body.size()) throw DataError(path.string() + ": truncated cache");
    json header = json::parse(bytes.substr(pos, header_len), nullptr, false);
    if (header.is_discarded()) throw DataError(path.string() + ": malformed cache header");
    pos += header_len;

    CacheMeta meta;
    meta.version = header.value("version", -1);
    if (meta.version != 1) {
        throw DataError(path.string() + ": unsupported cache version " +
                        std::to_string(meta.version));
    }
    meta.norm = norm_scope_from_string(header.value("normalization", "per-vector"));
    meta.bandpassed = header.value("bandpassed", false);
    const int row_len = header.value("row_len", 0);
    if (row_len != kTaskVectorLen) {
        throw DataError(path.string() + ": unexpected row length " + std::to_string(row_len));
    }

    ClassMatrix c0, c1;
    c0.class_label = 0;
    c1.class_label = 1;
    c0.subject_ids = header.value("class0_subjects", std::vector<int>{});
    c1.subject_ids = header.value("class1_subjects", std::vector<int>{});

    const size_t doubles_needed =
        (c0.subject_ids.size() + c1.subject_ids.size()) * static_cast<size_t>(kTaskVectorLen);
    if (pos + doubles_needed * 8 > body.size()) {
        throw DataError(path.string() + ": truncated cache");
    }
    auto read_rows = [&](ClassMatrix& m) {
        m.rows.reserve(m.subject_ids.size());
        for (size_t r = 0; r < m.subject_ids.size(); ++r) {
            std::vector<double> row(kTaskVectorLen);
            for (int i = 0; i < kTaskVectorLen; ++i) {
                row[static_cast<size_t>(i)] = read_f64_le(p + pos);
                pos += 8;
            }
            m.rows.push_back(std::move(row));
        }
    };
    read_rows(c0);
    read_rows(c1);
    return {std::move(c0), std::move(c1), meta};
}

}  // namespace ppgstress
