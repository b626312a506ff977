#include "ppgstress/signal.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdlib>
#include <fstream>
#include <stdexcept>

#include "ppgstress/util.hpp"

namespace ppgstress {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

const char* to_string(Task t) {
    return t == Task::T1_rest ? "T1" : "T2";
}

// ---------------------------------------------------------------------------
// FrameSet
// ---------------------------------------------------------------------------

FrameSet::FrameSet(int frame_len, int stride) : frame_len_(frame_len), stride_(stride) {
    if (frame_len < 1) throw std::invalid_argument("frame_len must be positive");
    if (stride < 1) throw std::invalid_argument("stride must be positive");
}

void FrameSet::add_signal(std::shared_ptr<const std::vector<double>> samples, int label,
                          int subject_id, Task task) {
    if (!samples) throw std::invalid_argument("null signal");
    const size_t len = samples->size();
    if (len < static_cast<size_t>(frame_len_)) {
        throw std::invalid_argument("signal shorter than frame");
    }
    const uint32_t row = static_cast<uint32_t>(rows_.size());
    rows_.push_back(std::move(samples));
    const size_t count = (len - static_cast<size_t>(frame_len_)) / static_cast<size_t>(stride_) + 1;
    slots_.reserve(slots_.size() + count);
    for (size_t k = 0; k < count; ++k) {
        Slot s;
        s.row = row;
        s.offset = static_cast<uint32_t>(k * static_cast<size_t>(stride_));
        s.label = label;
        s.subject_id = subject_id;
        s.task = task;
        slots_.push_back(s);
    }
}

std::span<const double> FrameSet::values(size_t i) const {
    const Slot& s = slots_[i];
    return std::span<const double>(rows_[s.row]->data() + s.offset,
                                   static_cast<size_t>(frame_len_));
}

FrameOrigin FrameSet::origin(size_t i) const {
    const Slot& s = slots_[i];
    return FrameOrigin{s.subject_id, s.task, static_cast<int>(s.offset)};
}

FrameView FrameSet::frame(size_t i) const {
    return FrameView{values(i), slots_[i].label, origin(i)};
}

std::vector<int> FrameSet::subject_ids() const {
    std::vector<int> ids;
    for (const Slot& s : slots_) ids.push_back(s.subject_id);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
}

FrameSet FrameSet::select(std::span<const size_t> indices) const {
    FrameSet out;
    out.frame_len_ = frame_len_;
    out.stride_ = stride_;
    out.rows_ = rows_;
    out.slots_.reserve(indices.size());
    for (size_t i : indices) out.slots_.push_back(slots_.at(i));
    return out;
}

// ---------------------------------------------------------------------------
// Normalization and framing
// ---------------------------------------------------------------------------

std::vector<double> normalize_minmax(std::span<const double> x) {
    if (x.empty()) throw std::invalid_argument("normalize_minmax: empty input");
    const auto [mn_it, mx_it] = std::minmax_element(x.begin(), x.end());
    const double mn = *mn_it, mx = *mx_it;
    std::vector<double> out(x.size());
    if (mx == mn) {
        std::fill(out.begin(), out.end(), 0.0);
        return out;
    }
    const double scale = 2.0 / (mx - mn);
    for (size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mn) * scale - 1.0;
    return out;
}

FrameSet frame_signal(const PpgSignal& signal, int frame_len, int stride) {
    FrameSet fs(frame_len, stride);
    fs.add_signal(std::make_shared<const std::vector<double>>(signal.samples),
                  FrameSet::kUnlabeled, signal.subject_id, signal.task);
    return fs;
}

// ---------------------------------------------------------------------------
// Chebyshev type II bandpass
// ---------------------------------------------------------------------------

namespace {

using cplx = std::complex<double>;

struct Zpk {
    std::vector<cplx> zeros;
    std::vector<cplx> poles;
    double gain = 1.0;
};

// Analog lowpass prototype: equiripple stopband starting at Omega = 1 with
// attenuation >= atten_db. Even order only, so every zero and pole is part
// of a conjugate pair and the section builder below stays simple.
Zpk cheb2_prototype(int order, double atten_db) {
    const double de = 1.0 / std::sqrt(std::pow(10.0, 0.1 * atten_db) - 1.0);
    const double mu = std::asinh(1.0 / de) / order;
    Zpk out;
    for (int m = -order + 1; m < order; m += 2) {
        const double angle = m * kPi / (2.0 * order);
        out.zeros.emplace_back(0.0, 1.0 / std::sin(angle));
        const cplx butter = -std::exp(cplx(0.0, angle));
        const cplx warped(std::sinh(mu) * butter.real(), std::cosh(mu) * butter.imag());
        out.poles.push_back(1.0 / warped);
    }
    cplx num(1.0, 0.0), den(1.0, 0.0);
    for (const cplx& p : out.poles) num *= -p;
    for (const cplx& z : out.zeros) den *= -z;
    out.gain = (num / den).real();
    return out;
}

// s -> (s^2 + wo^2) / (bw * s); even-order prototypes keep len(z) == len(p).
Zpk lowpass_to_bandpass(const Zpk& lp, double wo, double bw) {
    auto transform = [wo, bw](const std::vector<cplx>& roots) {
        std::vector<cplx> out;
        out.reserve(roots.size() * 2);
        for (const cplx& r : roots) {
            const cplx scaled = r * (bw / 2.0);
            const cplx disc = std::sqrt(scaled * scaled - wo * wo);
            out.push_back(scaled + disc);
            out.push_back(scaled - disc);
        }
        return out;
    };
    Zpk out;
    out.zeros = transform(lp.zeros);
    out.poles = transform(lp.poles);
    out.gain = lp.gain;
    return out;
}

Zpk bilinear(const Zpk& analog, double sample_rate) {
    const double fs2 = 2.0 * sample_rate;
    Zpk out;
    cplx num(1.0, 0.0), den(1.0, 0.0);
    for (const cplx& z : analog.zeros) {
        out.zeros.push_back((fs2 + z) / (fs2 - z));
        num *= fs2 - z;
    }
    for (const cplx& p : analog.poles) {
        out.poles.push_back((fs2 + p) / (fs2 - p));
        den *= fs2 - p;
    }
    out.gain = analog.gain * (num / den).real();
    return out;
}

// A quadratic factor (1 - sum*q + product*q^2) built from two roots that are
// either complex conjugates or both real.
struct RootPair {
    double sum = 0.0;      // r1 + r2
    double product = 0.0;  // r1 * r2
    cplx rep;              // representative root, used for nearest-neighbor pairing
};

// Groups roots into conjugate pairs; stray real roots are paired among
// themselves in sorted order.
std::vector<RootPair> quadratic_pairs(const std::vector<cplx>& roots) {
    std::vector<RootPair> pairs;
    std::vector<double> reals;
    for (const cplx& r : roots) {
        if (std::abs(r.imag()) < 1e-10) {
            reals.push_back(r.real());
        } else if (r.imag() > 0.0) {
            pairs.push_back(RootPair{2.0 * r.real(), std::norm(r), r});
        }
    }
    std::sort(reals.begin(), reals.end());
    for (size_t i = 0; i + 1 < reals.size(); i += 2) {
        pairs.push_back(RootPair{reals[i] + reals[i + 1], reals[i] * reals[i + 1],
                                 cplx(0.5 * (reals[i] + reals[i + 1]), 0.0)});
    }
    return pairs;
}

}  // namespace

std::vector<Biquad> design_cheby2_bandpass(int order, double stop_lo_hz, double stop_hi_hz,
                                           double stop_atten_db, double sample_rate_hz) {
    if (order < 2 || order % 2 != 0) {
        throw std::invalid_argument("filter order must be even and >= 2");
    }
    if (!(stop_lo_hz > 0.0 && stop_lo_hz < stop_hi_hz && stop_hi_hz < sample_rate_hz / 2.0)) {
        throw std::invalid_argument("invalid band");
    }
    if (stop_atten_db <= 0.0) throw std::invalid_argument("stopband attenuation must be positive");

    // Prewarp the band edges so the digital response hits them exactly.
    const double w_lo = 2.0 * sample_rate_hz * std::tan(kPi * stop_lo_hz / sample_rate_hz);
    const double w_hi = 2.0 * sample_rate_hz * std::tan(kPi * stop_hi_hz / sample_rate_hz);

    Zpk digital = bilinear(
        lowpass_to_bandpass(cheb2_prototype(order, stop_atten_db), std::sqrt(w_lo * w_hi),
                            w_hi - w_lo),
        sample_rate_hz);

    // Group into conjugate pairs; with even prototype order every root is
    // strictly complex, so pair counts always match.
    std::vector<RootPair> pole_pairs = quadratic_pairs(digital.poles);
    std::vector<RootPair> zero_pairs = quadratic_pairs(digital.zeros);
    if (pole_pairs.size() != zero_pairs.size() || pole_pairs.size() * 2 != digital.poles.size()) {
        throw NumericError("filter design produced unpaired roots");
    }

    // Most-damped poles first, each matched with its nearest zero pair.
    std::sort(pole_pairs.begin(), pole_pairs.end(), [](const RootPair& a, const RootPair& b) {
        return std::abs(a.rep) < std::abs(b.rep);
    });

    std::vector<Biquad> sections;
    std::vector<bool> used(zero_pairs.size(), false);
    for (const RootPair& p : pole_pairs) {
        size_t best = 0;
        double best_dist = 1e300;
        for (size_t i = 0; i < zero_pairs.size(); ++i) {
            if (used[i]) continue;
            const double d = std::abs(zero_pairs[i].rep - p.rep);
            if (d < best_dist) {
                best_dist = d;
                best = i;
            }
        }
        used[best] = true;
        const RootPair& z = zero_pairs[best];
        Biquad s;
        s.b0 = 1.0;
        s.b1 = -z.sum;
        s.b2 = z.product;
        s.a1 = -p.sum;
        s.a2 = p.product;
        sections.push_back(s);
    }
    sections.front().b0 *= digital.gain;
    sections.front().b1 *= digital.gain;
    sections.front().b2 *= digital.gain;
    return sections;
}

std::vector<double> sosfilt(std::span<const Biquad> sections, std::span<const double> x) {
    std::vector<double> y(x.begin(), x.end());
    for (const Biquad& s : sections) {
        double w1 = 0.0, w2 = 0.0;
        for (double& v : y) {
            const double in = v;
            const double out = s.b0 * in + w1;
            w1 = s.b1 * in - s.a1 * out + w2;
            w2 = s.b2 * in - s.a2 * out;
            v = out;
        }
    }
    return y;
}

PpgSignal chebyshev2_bandpass(const PpgSignal& signal, int order, double stop_lo_hz,
                              double stop_hi_hz, double stop_atten_db) {
    const auto sections = design_cheby2_bandpass(order, stop_lo_hz, stop_hi_hz, stop_atten_db,
                                                 static_cast<double>(signal.sample_rate_hz));
    PpgSignal out = signal;
    out.samples = sosfilt(sections, signal.samples);
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic PPG
// ---------------------------------------------------------------------------

SynthParams non_stress_preset(uint64_t seed) {
    SynthParams p;
    p.condition = StressClass::non_stress;
    p.mean_hr_bpm = 65.0;
    p.hr_jitter_frac = 0.02;
    p.amp_jitter_frac = 0.04;
    p.noise_std = 0.01;
    p.seed = seed;
    return p;
}

SynthParams stress_preset(uint64_t seed) {
    SynthParams p;
    p.condition = StressClass::stress;
    p.mean_hr_bpm = 100.0;
    p.hr_jitter_frac = 0.10;
    p.amp_jitter_frac = 0.18;
    p.noise_std = 0.03;
    p.seed = seed;
    return p;
}

PpgSignal synth_ppg(const SynthParams& params) {
    if (params.duration_s <= 0.0) throw std::invalid_argument("duration must be positive");
    if (params.mean_hr_bpm < 40.0 || params.mean_hr_bpm > 180.0) {
        throw std::invalid_argument("mean heart rate out of range [40, 180] bpm");
    }
    const double fs = static_cast<double>(kSampleRateHz);
    const auto n = static_cast<size_t>(std::llround(params.duration_s * fs));

    PpgSignal sig;
    sig.sample_rate_hz = kSampleRateHz;
    sig.task = params.condition == StressClass::stress ? Task::T2_speech : Task::T1_rest;
    sig.samples.assign(n, 0.0);

    Rng rng(params.seed);
    const double base_period = 60.0 / params.mean_hr_bpm;

    auto deposit = [&](double center, double amplitude, double sigma) {
        const long lo = std::max(0L, static_cast<long>(std::ceil((center - 5.0 * sigma) * fs)));
        const long hi = std::min(static_cast<long>(n) - 1,
                                 static_cast<long>(std::floor((center + 5.0 * sigma) * fs)));
        for (long i = lo; i <= hi; ++i) {
            const double dt = (static_cast<double>(i) / fs - center) / sigma;
            sig.samples[static_cast<size_t>(i)] += amplitude * std::exp(-0.5 * dt * dt);
        }
    };

    // Start the pulse train before t=0 so the first frame already sits in
    // steady state.
    double t = -2.0 * base_period;
    while (t < params.duration_s + 2.0 * base_period) {
        const double gp = rng.gaussian();
        const double ga = rng.gaussian();
        double period = base_period * (1.0 + params.hr_jitter_frac * gp);
        period = std::max(period, 0.25 * base_period);
        double amp = 1.0 + params.amp_jitter_frac * ga;
        amp = std::max(amp, 0.05);

        deposit(t, amp, 0.06 * period);                        // systolic peak
        deposit(t + 0.36 * period, 0.35 * amp, 0.12 * period);  // diastolic bump
        t += period;
    }

    if (params.noise_std > 0.0) {
        for (double& v : sig.samples) v += params.noise_std * rng.gaussian();
    }
    return sig;
}

// ---------------------------------------------------------------------------
// CSV I/O
// ---------------------------------------------------------------------------

std::vector<double> read_signal_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError(path.string() + ": cannot open file");
    std::vector<double> samples;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        // Tolerate CRLF endings and stray whitespace.
        size_t begin = line.find_first_not_of(" \t\r");
        if (begin == std::string::npos) continue;
        size_t end = line.find_last_not_of(" \t\r");
        const std::string token = line.substr(begin, end - begin + 1);
        char* parse_end = nullptr;
        const double v = std::strtod(token.c_str(), &parse_end);
        if (parse_end != token.c_str() + token.size()) {
            throw DataError(path.string() + ": line " + std::to_string(line_no) +
                            ": cannot parse '" + token + "' as a number");
        }
        samples.push_back(v);
    }
    if (samples.empty()) throw DataError(path.string() + ": empty file");
    return samples;
}

void write_signal_csv(const std::filesystem::path& path, std::span<const double> samples) {
    std::ofstream out(path);
    if (!out) throw DataError(path.string() + ": cannot open file for writing");
    std::string buf;
    for (double v : samples) {
        buf += format_double(v);
        buf += '\n';
    }
    out << buf;
    if (!out) throw DataError(path.string() + ": write failed");
}

}  // namespace ppgstress
