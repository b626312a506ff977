#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <tuple>

#include <zlib.h>

#include "oracles.hpp"
#include "ppgstress/dataset.hpp"
#include "ppgstress/util.hpp"

using namespace ppgstress;

namespace {

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& name) {
        path = std::filesystem::temp_directory_path() / name;
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

ClassMatrix random_matrix(int class_label, int rows, uint64_t seed) {
    ClassMatrix m;
    m.class_label = class_label;
    Rng rng(seed);
    for (int r = 1; r <= rows; ++r) {
        m.subject_ids.push_back(r);
        std::vector<double> row(kTaskVectorLen);
        for (double& v : row) v = rng.uniform(-1.0, 1.0);
        m.rows.push_back(std::move(row));
    }
    return m;
}

bool contains(const std::string& haystack, const std::string& needle) {
    return haystack.find(needle) != std::string::npos;
}

}  // namespace

TEST_SUITE("dataset_ubfc") {

TEST_CASE("csv loader is faithful to the file contents") {
    TempDir dir("ppgstress_loader_test");

    SUBCASE("11520 lines give 11520 samples") {
        std::vector<double> v(11520, 0.25);
        write_signal_csv(dir.path / "a.csv", v);
        const auto sig = load_bvp_csv(dir.path / "a.csv", 3, Task::T1_rest);
        CHECK(sig.samples.size() == 11520);
        CHECK(sig.subject_id == 3);
        CHECK(sig.sample_rate_hz == 64);
    }

    SUBCASE("a longer file is loaded in full; trimming is not the loader's job") {
        std::vector<double> v(11521, 1.0);
        write_signal_csv(dir.path / "b.csv", v);
        CHECK(load_bvp_csv(dir.path / "b.csv", 1, Task::T2_speech).samples.size() == 11521);
    }

    SUBCASE("a malformed line is reported with its line number") {
        std::ofstream out(dir.path / "c.csv");
        out << "1.0\n2.0\nabc\n4.0\n";
        out.close();
        try {
            load_bvp_csv(dir.path / "c.csv", 1, Task::T1_rest);
            FAIL("expected a parse error");
        } catch (const DataError& e) {
            CHECK(contains(e.what(), "line 3"));
            CHECK(contains(e.what(), "abc"));
        }
    }

    SUBCASE("an empty file is rejected") {
        std::ofstream(dir.path / "d.csv").close();
        CHECK_THROWS_AS(load_bvp_csv(dir.path / "d.csv", 1, Task::T1_rest), DataError);
    }
}

TEST_CASE("synthetic tree round-trips through the directory loader") {
    TempDir dir("ppgstress_tree_test");
    write_synthetic_tree(dir.path, 3, 99);

    const auto [c0, c1] = build_class_vectors(dir.path);
    REQUIRE(c0.rows.size() == 3);
    REQUIRE(c1.rows.size() == 3);
    CHECK(c0.subject_ids == std::vector<int>{1, 2, 3});
    CHECK(c0.class_label == 0);
    CHECK(c1.class_label == 1);

    // Row k is exactly the normalized generated signal for subject k.
    for (int i = 1; i <= 3; ++i) {
        const auto t1 = synth_ppg(non_stress_preset(mix_seed(99, static_cast<uint64_t>(i) * 2)));
        const auto expect = normalize_minmax(t1.samples);
        CHECK(c0.rows[static_cast<size_t>(i - 1)] == expect);
    }

    // And matches the in-memory synthetic builder bit for bit.
    const auto [m0, m1] = build_synthetic_class_vectors(3, 99);
    CHECK(c0.rows == m0.rows);
    CHECK(c1.rows == m1.rows);
}

TEST_CASE("a full 56-subject dataset gives two 56x11520 matrices") {
    const auto [c0, c1] = build_synthetic_class_vectors(56, 1);
    CHECK(c0.rows.size() == 56);
    CHECK(c1.rows.size() == 56);
    for (const auto& row : c0.rows) CHECK(row.size() == 11520);
    CHECK(c0.subject_ids.front() == 1);
    CHECK(c0.subject_ids.back() == 56);
    CHECK(std::is_sorted(c0.subject_ids.begin(), c0.subject_ids.end()));
}

TEST_CASE("missing task files follow the configured policy") {
    TempDir dir("ppgstress_policy_test");
    write_synthetic_tree(dir.path, 3, 5);
    std::filesystem::remove(dir.path / "s2" / "bvp_s2_T2.csv");

    SUBCASE("skip_incomplete drops the subject with a warning") {
        PrepareOptions options;
        options.policy = LengthPolicy::skip_incomplete;
        std::vector<std::string> warnings;
        const auto [c0, c1] = build_class_vectors(dir.path, options, &warnings);
        CHECK(c0.rows.size() == 2);
        CHECK(c1.rows.size() == 2);
        CHECK(c0.subject_ids == std::vector<int>{1, 3});
        REQUIRE(warnings.size() == 1);
        CHECK(contains(warnings[0], "s2"));
    }

    SUBCASE("the default policy treats a missing file as an error") {
        try {
            build_class_vectors(dir.path);
            FAIL("expected an error");
        } catch (const DataError& e) {
            CHECK(contains(e.what(), "s2"));
        }
    }
}

TEST_CASE("over-long vectors are truncated to the first 11520 samples") {
    TempDir dir("ppgstress_truncate_test");
    write_synthetic_tree(dir.path, 1, 31);

    auto long_signal = synth_ppg(non_stress_preset(mix_seed(31, 2)));
    long_signal.samples.resize(11650, 0.125);
    write_signal_csv(dir.path / "s1" / "bvp_s1_T1.csv", long_signal.samples);

    const auto [c0, c1] = build_class_vectors(dir.path);
    std::vector<double> first(long_signal.samples.begin(), long_signal.samples.begin() + 11520);
    CHECK(c0.rows[0] == normalize_minmax(first));
}

TEST_CASE("short vectors reject the subject by id") {
    TempDir dir("ppgstress_short_test");
    write_synthetic_tree(dir.path, 2, 17);
    write_signal_csv(dir.path / "s2" / "bvp_s2_T1.csv", std::vector<double>(11519, 0.5));
    try {
        build_class_vectors(dir.path);
        FAIL("expected an error");
    } catch (const DataError& e) {
        CHECK(contains(e.what(), "s2"));
        CHECK(contains(e.what(), "shorter"));
    }
}

TEST_CASE("an empty tree has no usable subjects") {
    TempDir dir("ppgstress_empty_test");
    CHECK_THROWS_AS(build_class_vectors(dir.path), DataError);
}

TEST_CASE("global normalization uses one range for every row") {
    PrepareOptions options;
    options.norm = NormScope::global_all;
    const auto [c0, c1] = build_synthetic_class_vectors(2, 3, options);
    double mn = 1e300, mx = -1e300;
    for (const auto* m : {&c0, &c1}) {
        for (const auto& row : m->rows) {
            for (double v : row) {
                mn = std::min(mn, v);
                mx = std::max(mx, v);
            }
        }
    }
    // The global extremes hit -1/+1 but individual rows generally do not.
    CHECK(mn == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(mx == doctest::Approx(1.0).epsilon(1e-12));
    size_t rows_spanning_full_range = 0;
    for (const auto* m : {&c0, &c1}) {
        for (const auto& row : m->rows) {
            const double row_max = *std::max_element(row.begin(), row.end());
            const double row_min = *std::min_element(row.begin(), row.end());
            if (row_max > 1.0 - 1e-12 && row_min < -1.0 + 1e-12) ++rows_spanning_full_range;
        }
    }
    CHECK(rows_spanning_full_range < 4);
}

TEST_CASE("labeled framing covers every row and keeps class labels") {
    const auto c0 = random_matrix(0, 2, 1);
    const auto c1 = random_matrix(1, 2, 2);
    const auto fs = make_labeled_frames(c0, c1, 1024, 24);
    const size_t per_row = oracle::frame_count(11520, 1024, 24);
    CHECK(fs.size() == 4 * per_row);

    size_t class0 = 0, class1 = 0;
    for (size_t i = 0; i < fs.size(); ++i) {
        const auto origin = fs.origin(i);
        CHECK(origin.start_offset + 1024 <= kTaskVectorLen);
        if (fs.label(i) == 0) {
            ++class0;
            CHECK(origin.task == Task::T1_rest);
        } else {
            ++class1;
            CHECK(origin.task == Task::T2_speech);
        }
    }
    CHECK(class0 == class1);
}

TEST_CASE("a 56-subject dataset yields the full frame population") {
    const auto c0 = random_matrix(0, 56, 3);
    const auto c1 = random_matrix(1, 56, 4);
    CHECK(make_labeled_frames(c0, c1, 1024, 24).size() ==
          112 * oracle::frame_count(11520, 1024, 24));
    CHECK(make_labeled_frames(c0, c1, 1024, 24).size() == 49056);
}

TEST_CASE("whole-vector frames give one frame per class row") {
    const auto c0 = random_matrix(0, 1, 5);
    const auto c1 = random_matrix(1, 1, 6);
    const auto fs = make_labeled_frames(c0, c1, kTaskVectorLen, 1);
    REQUIRE(fs.size() == 2);
    CHECK(fs.label(0) == 0);
    CHECK(fs.label(1) == 1);
}

TEST_CASE("frame-level split sizes follow the rounding rule") {
    const auto c0 = random_matrix(0, 1, 7);
    const auto c1 = random_matrix(1, 1, 8);
    const auto fs = make_labeled_frames(c0, c1, 1024, 21);  // 2 * 500 = 1000 frames
    REQUIRE(fs.size() == 1000);
    const auto split = split_train_test(fs, 0.4, 77, SplitMode::frame_level);
    CHECK(split.train.size() == 400);
    CHECK(split.test.size() == 600);
}

TEST_CASE("splits are deterministic and disjoint") {
    const auto c0 = random_matrix(0, 3, 9);
    const auto c1 = random_matrix(1, 3, 10);
    const auto fs = make_labeled_frames(c0, c1, 2048, 64);

    const auto a = split_train_test(fs, 0.4, 5, SplitMode::frame_level);
    const auto b = split_train_test(fs, 0.4, 5, SplitMode::frame_level);
    REQUIRE(a.train.size() == b.train.size());
    for (size_t i = 0; i < a.train.size(); ++i) {
        CHECK(a.train.origin(i).subject_id == b.train.origin(i).subject_id);
        CHECK(a.train.origin(i).start_offset == b.train.origin(i).start_offset);
        CHECK(a.train.label(i) == b.train.label(i));
    }

    auto key = [](const FrameOrigin& o) {
        return std::tuple<int, int, int>(o.subject_id, static_cast<int>(o.task), o.start_offset);
    };
    std::set<std::tuple<int, int, int>> train_keys;
    for (size_t i = 0; i < a.train.size(); ++i) train_keys.insert(key(a.train.origin(i)));
    CHECK(train_keys.size() == a.train.size());
    for (size_t i = 0; i < a.test.size(); ++i) {
        CHECK(train_keys.count(key(a.test.origin(i))) == 0);
    }

    // Labels survive the split untouched.
    for (const FrameSet* part : {&a.train, &a.test}) {
        for (size_t i = 0; i < part->size(); ++i) {
            CHECK(part->label(i) == (part->origin(i).task == Task::T1_rest ? 0 : 1));
        }
    }
}

TEST_CASE("subject-level split keeps whole subjects on one side") {
    const auto c0 = random_matrix(0, 10, 11);
    const auto c1 = random_matrix(1, 10, 12);
    const auto fs = make_labeled_frames(c0, c1, 2048, 120);
    const auto split = split_train_test(fs, 0.4, 9, SplitMode::subject_level);

    std::set<int> train_subjects, test_subjects;
    for (size_t i = 0; i < split.train.size(); ++i) {
        train_subjects.insert(split.train.origin(i).subject_id);
    }
    for (size_t i = 0; i < split.test.size(); ++i) {
        test_subjects.insert(split.test.origin(i).subject_id);
    }
    CHECK(train_subjects.size() == 4);
    CHECK(test_subjects.size() == 6);
    for (int s : train_subjects) CHECK(test_subjects.count(s) == 0);
}

TEST_CASE("subject-level split requires at least two subjects") {
    const auto c0 = random_matrix(0, 1, 13);
    const auto c1 = random_matrix(1, 1, 14);
    const auto fs = make_labeled_frames(c0, c1, 2048, 120);
    CHECK_THROWS_AS(split_train_test(fs, 0.4, 1, SplitMode::subject_level),
                    std::invalid_argument);
}

TEST_CASE("epoch shuffling permutes without changing the frame multiset") {
    const auto c0 = random_matrix(0, 1, 15);
    const auto c1 = random_matrix(1, 1, 16);
    const auto fs = make_labeled_frames(c0, c1, 1024, 512);
    const auto shuffled = shuffle_epoch(fs, 4242);
    REQUIRE(shuffled.size() == fs.size());

    auto key_multiset = [](const FrameSet& f) {
        std::multiset<std::tuple<int, int, int, int>> keys;
        for (size_t i = 0; i < f.size(); ++i) {
            const auto o = f.origin(i);
            keys.insert({f.label(i), o.subject_id, static_cast<int>(o.task), o.start_offset});
        }
        return keys;
    };
    CHECK(key_multiset(fs) == key_multiset(shuffled));

    // Labels ride along with their values through the permutation.
    for (size_t i = 0; i < shuffled.size(); ++i) {
        const int expected_label = shuffled.origin(i).task == Task::T1_rest ? 0 : 1;
        CHECK(shuffled.label(i) == expected_label);
    }

    const auto other = shuffle_epoch(fs, 4243);
    bool same_order = true;
    for (size_t i = 0; i < fs.size() && same_order; ++i) {
        same_order = other.origin(i).start_offset == shuffled.origin(i).start_offset &&
                     other.origin(i).subject_id == shuffled.origin(i).subject_id &&
                     other.label(i) == shuffled.label(i);
    }
    CHECK(!same_order);
}

TEST_CASE("shuffling an empty frame set is the identity") {
    FrameSet empty(16, 4);
    CHECK(shuffle_epoch(empty, 1).empty());
}

TEST_CASE("cache archive round-trips bit-exactly") {
    TempDir dir("ppgstress_cache_test");
    const auto path = dir.path / "data.cache";
    const auto c0 = random_matrix(0, 2, 17);
    const auto c1 = random_matrix(1, 2, 18);
    CacheMeta meta;
    meta.norm = NormScope::per_vector;
    meta.bandpassed = true;
    save_cache(path, c0, c1, meta);

    const auto [l0, l1, lmeta] = load_cache(path);
    CHECK(l0.rows == c0.rows);
    CHECK(l1.rows == c1.rows);
    CHECK(l0.subject_ids == c0.subject_ids);
    CHECK(lmeta.bandpassed == true);
    CHECK(lmeta.norm == NormScope::per_vector);
}

TEST_CASE("cache corruption and version drift are rejected distinctly") {
    TempDir dir("ppgstress_cachefail_test");
    const auto path = dir.path / "data.cache";
    const auto c0 = random_matrix(0, 1, 19);
    const auto c1 = random_matrix(1, 1, 20);
    save_cache(path, c0, c1, CacheMeta{});

    SUBCASE("flipped payload byte fails the checksum") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(5000);
        char b;
        f.seekg(5000);
        f.read(&b, 1);
        b = static_cast<char>(b ^ 0x40);
        f.seekp(5000);
        f.write(&b, 1);
        f.close();
        try {
            load_cache(path);
            FAIL("expected checksum failure");
        } catch (const DataError& e) {
            CHECK(contains(e.what(), "checksum"));
        }
    }

    SUBCASE("unknown version is reported as such") {
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        in.close();
        const auto at = bytes.find("\"version\":1");
        REQUIRE(at != std::string::npos);
        bytes[at + 10] = '2';
        const std::string body = bytes.substr(0, bytes.size() - 4);
        uLong crc = crc32(0L, Z_NULL, 0);
        crc = crc32(crc, reinterpret_cast<const Bytef*>(body.data()),
                    static_cast<uInt>(body.size()));
        std::string patched = body;
        append_u32_le(patched, static_cast<uint32_t>(crc));
        std::ofstream out(path, std::ios::binary);
        out << patched;
        out.close();
        try {
            load_cache(path);
            FAIL("expected version error");
        } catch (const DataError& e) {
            CHECK(contains(e.what(), "version"));
        }
    }

    SUBCASE("truncated archive is rejected") {
        const auto size = std::filesystem::file_size(path);
        std::filesystem::resize_file(path, size / 2);
        CHECK_THROWS_AS(load_cache(path), DataError);
    }
}

}  // TEST_SUITE
