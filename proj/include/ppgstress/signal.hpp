#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ppgstress {

inline constexpr int kSampleRateHz = 64;

enum class Task { T1_rest, T2_speech };

const char* to_string(Task t);

/// One subject-task recording: raw amplitude samples plus identity metadata.
struct PpgSignal {
    std::vector<double> samples;
    int sample_rate_hz = kSampleRateHz;
    int subject_id = 0;
    Task task = Task::T1_rest;
};

struct FrameOrigin {
    int subject_id = 0;
    Task task = Task::T1_rest;
    int start_offset = 0;
};

/// Non-owning view of one frame: `values` aliases the backing signal row held
/// by the FrameSet the view came from.
struct FrameView {
    std::span<const double> values;
    int label = -1;
    FrameOrigin origin;
};

/// Fixed-length windows cut from one or more signals. Frames reference shared
/// immutable signal rows instead of copying sample data, so splitting and
/// shuffling large frame populations stays cheap.
class FrameSet {
public:
    static constexpr int kUnlabeled = -1;

    FrameSet() = default;
    FrameSet(int frame_len, int stride);

    /// Cuts every full window of `frame_len` samples (step `stride`) out of
    /// `samples` and appends the resulting frames. Trailing samples that do
    /// not fill a frame are dropped. Throws std::invalid_argument
    /// "signal shorter than frame" when the signal cannot hold one frame.
    void add_signal(std::shared_ptr<const std::vector<double>> samples, int label,
                    int subject_id, Task task);

    size_t size() const { return slots_.size(); }
    bool empty() const { return slots_.empty(); }
    int frame_len() const { return frame_len_; }
    int stride() const { return stride_; }

    std::span<const double> values(size_t i) const;
    int label(size_t i) const { return slots_[i].label; }
    FrameOrigin origin(size_t i) const;
    FrameView frame(size_t i) const;

    /// Distinct subject ids present, ascending.
    std::vector<int> subject_ids() const;

    /// New FrameSet holding the frames at `indices`, in that order. Backing
    /// rows are shared with this set.
    FrameSet select(std::span<const size_t> indices) const;

private:
    struct Slot {
        uint32_t row = 0;
        uint32_t offset = 0;
        int32_t label = kUnlabeled;
        int32_t subject_id = 0;
        Task task = Task::T1_rest;
    };

    int frame_len_ = 0;
    int stride_ = 1;
    std::vector<std::shared_ptr<const std::vector<double>>> rows_;
    std::vector<Slot> slots_;
};

/// Affine rescale of `x` onto [-1, +1]: x -> 2(x - min)/(max - min) - 1.
/// Constant input (max == min) maps to all zeros.
std::vector<double> normalize_minmax(std::span<const double> x);

/// Cuts the signal into floor((L - frame_len)/stride) + 1 unlabeled frames.
FrameSet frame_signal(const PpgSignal& signal, int frame_len, int stride);

/// One second-order section, direct form II transposed:
///   y = b0*x + b1*x[-1] + b2*x[-2] - a1*y[-1] - a2*y[-2]
struct Biquad {
    double b0 = 1, b1 = 0, b2 = 0, a1 = 0, a2 = 0;
};

/// Bandpass design parameters. `stop_lo_hz`/`stop_hi_hz` are the stopband
/// edge frequencies at which attenuation first reaches `stop_atten_db`
/// (the natural Chebyshev type II parameterization); the resulting passband
/// for the defaults below is roughly 0.5-8 Hz at 64 Hz sampling.
struct Cheby2Design {
    int order = 4;  // analog lowpass prototype order; bandpass order is 2x
    double stop_lo_hz = 0.2;
    double stop_hi_hz = 12.0;
    double stop_atten_db = 40.0;
};

/// Digital Chebyshev type II bandpass as cascaded second-order sections:
/// analog prototype -> lowpass-to-bandpass transform -> bilinear transform
/// with edge prewarping. `order` must be even and >= 2; the band edges must
/// satisfy 0 < lo < hi < sample_rate/2 (else: "invalid band").
std::vector<Biquad> design_cheby2_bandpass(int order, double stop_lo_hz, double stop_hi_hz,
                                           double stop_atten_db, double sample_rate_hz);

/// Runs the section cascade over the signal with zero initial conditions.
std::vector<double> sosfilt(std::span<const Biquad> sections, std::span<const double> x);

/// Filters a recording in place of its samples; metadata is preserved.
PpgSignal chebyshev2_bandpass(const PpgSignal& signal, int order, double stop_lo_hz,
                              double stop_hi_hz, double stop_atten_db);

enum class StressClass { non_stress, stress };

/// Parameters of the synthetic PPG generator. Beat periods are drawn around
/// 60/mean_hr_bpm with standard deviation hr_jitter_frac (as a fraction of
/// the mean period); per-beat amplitudes jitter by amp_jitter_frac; white
/// noise of std noise_std is added on top. Everything is a pure function of
/// `seed`.
struct SynthParams {
    StressClass condition = StressClass::non_stress;
    double duration_s = 180.0;
    double mean_hr_bpm = 70.0;
    double hr_jitter_frac = 0.02;
    double amp_jitter_frac = 0.05;
    double noise_std = 0.01;
    uint64_t seed = 0;
};

/// Calm baseline: slow, regular pulse train.
SynthParams non_stress_preset(uint64_t seed);

/// Stressed recording: faster heart rate, visibly larger beat-interval and
/// amplitude variability, more sensor noise.
SynthParams stress_preset(uint64_t seed);

/// Generates round(duration_s * 64) samples of a systolic+diastolic Gaussian
/// pulse-pair train.
PpgSignal synth_ppg(const SynthParams& params);

/// Reads a single-column CSV of decimal floats, one sample per line
/// (Empatica-E4-style BVP export). Parse failures report the line number.
std::vector<double> read_signal_csv(const std::filesystem::path& path);

/// Writes one sample per line with full round-trip precision.
void write_signal_csv(const std::filesystem::path& path, std::span<const double> samples);

}  // namespace ppgstress
