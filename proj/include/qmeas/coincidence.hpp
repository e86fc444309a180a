#pragma once

// Event-based simulation of a two-wing photon experiment with time-tagged
// clicks and time-window coincidence counting.
//
// A source emits pairs sharing a hidden polarization angle. Each wing's
// detector turns (polarization, own setting, own randomness) into an outcome
// and a delay; nothing on one wing reads the other wing's setting. Clicks are
// paired afterwards by the window condition |t_a - t_b| <= window, and only
// paired clicks enter the correlations.

#include "qmeas/chsh.hpp"
#include "qmeas/error.hpp"
#include "qmeas/random.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <future>
#include <istream>
#include <iterator>
#include <limits>
#include <map>
#include <memory>
#include <numbers>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace qmeas {

struct EmissionEvent {
    std::uint64_t pair_id = 0;
    double hidden_angle = 0.0;
    double emission_time = 0.0;
    double jitter_a = 0.0;
    double jitter_b = 0.0;
};

inline constexpr double kDefaultT0 = 1e-6;
inline constexpr double kDefaultSpacing = 10.0 * kDefaultT0;

/// Pairs are emitted on a regular pulse train t_k = k * spacing. Each photon
/// gets an independent exponential emission jitter with mean jitter_scale
/// (zero scale means both photons leave at t_k exactly).
inline std::vector<EmissionEvent> simulate_source(std::size_t n_pairs, std::uint64_t seed, double jitter_scale,
                                                  double spacing = kDefaultSpacing) {
    if (n_pairs < 1) throw Error(ErrorKind::ValidationError, "n_pairs must be >= 1");
    if (!(jitter_scale >= 0.0) || !std::isfinite(jitter_scale)) {
        throw Error(ErrorKind::InvalidModelParams, "jitter_scale must be finite and >= 0");
    }
    if (!(spacing > 0.0) || !std::isfinite(spacing)) {
        throw Error(ErrorKind::InvalidModelParams, "emission spacing must be finite and > 0");
    }
    Rng rng(seed);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    std::exponential_distribution<double> jitter(jitter_scale > 0.0 ? 1.0 / jitter_scale : 1.0);
    std::vector<EmissionEvent> events(n_pairs);
    for (std::size_t k = 0; k < n_pairs; ++k) {
        auto& e = events[k];
        e.pair_id = k;
        e.hidden_angle = angle(rng);
        if (e.hidden_angle >= 2.0 * std::numbers::pi) e.hidden_angle = 0.0;
        e.emission_time = static_cast<double>(k) * spacing;
        if (jitter_scale > 0.0) {
            e.jitter_a = jitter(rng);
            e.jitter_b = jitter(rng);
        }
    }
    return events;
}

enum class DetectorSide : std::uint8_t { A, B };

inline char side_char(DetectorSide s) { return s == DetectorSide::A ? 'A' : 'B'; }

struct ClickRecord {
    DetectorSide side = DetectorSide::A;
    std::uint64_t pair_id = 0;
    double setting_angle = 0.0;
    int outcome = 1;
    double time_tag = 0.0;

    bool operator==(const ClickRecord&) const = default;
};

/// How a detector turns the angle between photon polarization and analyzer
/// into a +-1 outcome.
enum class OutcomeRule {
    Sign,   // sign(cos 2(pol - setting)), deterministic
    Malus,  // +1 with probability cos^2(pol - setting)
};

struct DetectorResponse {
    int outcome = 1;
    double delay = 0.0;
};

class DelayModel {
public:
    virtual ~DelayModel() = default;
    virtual std::string name() const = 0;
    virtual DetectorResponse respond(double polarization, double setting, Rng& rng) const = 0;
};

namespace detail {

inline int local_outcome(OutcomeRule rule, double polarization, double setting, Rng& rng) {
    const double diff = polarization - setting;
    if (rule == OutcomeRule::Sign) return std::cos(2.0 * diff) >= 0.0 ? 1 : -1;
    const double c = std::cos(diff);
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < c * c ? 1 : -1;
}

}  // namespace detail

class ZeroDelayModel final : public DelayModel {
public:
    explicit ZeroDelayModel(OutcomeRule rule = OutcomeRule::Sign) : rule_(rule) {}
    std::string name() const override { return "zero"; }
    DetectorResponse respond(double polarization, double setting, Rng& rng) const override {
        return {detail::local_outcome(rule_, polarization, setting, rng), 0.0};
    }

private:
    OutcomeRule rule_;
};

/// delay = t0 * u * |sin 2(pol - setting)|^exponent, u ~ U[0, 1).
class ReferenceDelayModel final : public DelayModel {
public:
    ReferenceDelayModel(double t0, double exponent, OutcomeRule rule = OutcomeRule::Sign)
        : t0_(t0), exponent_(exponent), rule_(rule) {
        if (!(t0 >= 0.0) || !std::isfinite(t0)) throw Error(ErrorKind::InvalidModelParams, "t0 must be finite and >= 0");
        if (!(exponent >= 0.0) || !std::isfinite(exponent)) {
            throw Error(ErrorKind::InvalidModelParams, "delay exponent must be finite and >= 0");
        }
    }

    std::string name() const override { return "reference"; }

    DetectorResponse respond(double polarization, double setting, Rng& rng) const override {
        const int outcome = detail::local_outcome(rule_, polarization, setting, rng);
        const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        const double s = std::abs(std::sin(2.0 * (polarization - setting)));
        return {outcome, t0_ * u * std::pow(s, exponent_)};
    }

private:
    double t0_;
    double exponent_;
    OutcomeRule rule_;
};

struct ModelSpec {
    std::string name = "reference";
    double t0 = kDefaultT0;
    double exponent = 4.0;
    OutcomeRule rule = OutcomeRule::Sign;
};

/// Name -> factory table for delay models. Holds no process-wide state; build
/// one with with_builtins() and register extra models on it.
class DelayModelRegistry {
public:
    using Factory = std::function<std::unique_ptr<DelayModel>(const ModelSpec&)>;

    static DelayModelRegistry with_builtins() {
        DelayModelRegistry r;
        r.register_model("zero", [](const ModelSpec& s) { return std::make_unique<ZeroDelayModel>(s.rule); });
        r.register_model("reference", [](const ModelSpec& s) {
            return std::make_unique<ReferenceDelayModel>(s.t0, s.exponent, s.rule);
        });
        return r;
    }

    void register_model(std::string name, Factory factory) { factories_[std::move(name)] = std::move(factory); }

    bool contains(const std::string& name) const { return factories_.count(name) > 0; }

    std::unique_ptr<DelayModel> create(const ModelSpec& spec) const {
        const auto it = factories_.find(spec.name);
        if (it == factories_.end()) throw Error(ErrorKind::InvalidModelParams, "unknown delay model '" + spec.name + "'");
        return it->second(spec);
    }

private:
    std::map<std::string, Factory> factories_;
};

/// Polarization of the photon reaching a wing; the B photon is orthogonal to the A photon.
inline double photon_polarization(const EmissionEvent& e, DetectorSide side) {
    return side == DetectorSide::A ? e.hidden_angle : e.hidden_angle + std::numbers::pi / 2.0;
}

/// Clicks of one wing, sorted by time tag (ties keep emission order). The
/// result depends only on the events, this wing's setting, the model and the seed.
inline std::vector<ClickRecord> detect(std::span<const EmissionEvent> events, DetectorSide side, double setting_angle,
                                       const DelayModel& model, std::uint64_t seed) {
    if (!std::isfinite(setting_angle)) throw Error(ErrorKind::InvalidModelParams, "setting angle must be finite");
    Rng rng(seed);
    std::vector<ClickRecord> clicks;
    clicks.reserve(events.size());
    for (const auto& e : events) {
        const DetectorResponse r = model.respond(photon_polarization(e, side), setting_angle, rng);
        const double jitter = side == DetectorSide::A ? e.jitter_a : e.jitter_b;
        clicks.push_back({side, e.pair_id, setting_angle, r.outcome, e.emission_time + jitter + r.delay});
    }
    std::stable_sort(clicks.begin(), clicks.end(),
                     [](const ClickRecord& x, const ClickRecord& y) { return x.time_tag < y.time_tag; });
    return clicks;
}

/// Coincidence window in seconds, or the unbounded mode that pairs the k-th
/// A click with the k-th B click in time order.
class Window {
public:
    static Window unbounded() { return Window(true, std::numeric_limits<double>::infinity()); }

    static Window of(double seconds) {
        if (!(seconds >= 0.0) || std::isnan(seconds)) {
            throw Error(ErrorKind::ValidationError, "window must be >= 0 seconds");
        }
        if (std::isinf(seconds)) return unbounded();
        return Window(false, seconds);
    }

    bool is_unbounded() const noexcept { return unbounded_; }
    double seconds() const noexcept { return seconds_; }
    bool admits(double dt) const noexcept { return unbounded_ || std::abs(dt) <= seconds_; }

    bool operator==(const Window&) const = default;

private:
    Window(bool unbounded, double seconds) : unbounded_(unbounded), seconds_(seconds) {}
    bool unbounded_;
    double seconds_;
};

struct CoincidencePairing {
    std::vector<std::pair<std::size_t, std::size_t>> matched;
    std::vector<std::size_t> discarded_a;
    std::vector<std::size_t> discarded_b;
    Window window = Window::unbounded();
};

namespace detail {

inline std::vector<std::size_t> time_order(std::span<const ClickRecord> clicks) {
    std::vector<std::size_t> idx(clicks.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t x, std::size_t y) { return clicks[x].time_tag < clicks[y].time_tag; });
    return idx;
}

}  // namespace detail

/// Pairs clicks under |t_a - t_b| <= window. Both streams are walked in time
/// order with two pointers. With heads a[i], b[j] admissible, b[j] is dropped
/// if a[i] is strictly closer to b[j+1], a[i] is dropped if b[j] is strictly
/// closer to a[i+1], otherwise (a[i], b[j]) is matched; so ties go to the
/// earlier click. Indices in the result refer to the input spans.
inline CoincidencePairing match_window(std::span<const ClickRecord> clicks_a, std::span<const ClickRecord> clicks_b,
                                       Window window) {
    CoincidencePairing out;
    out.window = window;
    const auto ia = detail::time_order(clicks_a);
    const auto ib = detail::time_order(clicks_b);
    const auto ta = [&](std::size_t i) { return clicks_a[ia[i]].time_tag; };
    const auto tb = [&](std::size_t j) { return clicks_b[ib[j]].time_tag; };

    if (window.is_unbounded()) {
        const std::size_t n = std::min(ia.size(), ib.size());
        out.matched.reserve(n);
        for (std::size_t k = 0; k < n; ++k) out.matched.emplace_back(ia[k], ib[k]);
        for (std::size_t k = n; k < ia.size(); ++k) out.discarded_a.push_back(ia[k]);
        for (std::size_t k = n; k < ib.size(); ++k) out.discarded_b.push_back(ib[k]);
        return out;
    }

    const double w = window.seconds();
    std::size_t i = 0;
    std::size_t j = 0;
    while (i < ia.size() && j < ib.size()) {
        const double a = ta(i);
        const double b = tb(j);
        if (b < a - w) {
            out.discarded_b.push_back(ib[j++]);
            continue;
        }
        if (a < b - w) {
            out.discarded_a.push_back(ia[i++]);
            continue;
        }
        const double d = std::abs(a - b);
        if (j + 1 < ib.size() && std::abs(a - tb(j + 1)) < d) {
            out.discarded_b.push_back(ib[j++]);
            continue;
        }
        if (i + 1 < ia.size() && std::abs(ta(i + 1) - b) < d) {
            out.discarded_a.push_back(ia[i++]);
            continue;
        }
        out.matched.emplace_back(ia[i++], ib[j++]);
    }
    for (; i < ia.size(); ++i) out.discarded_a.push_back(ia[i]);
    for (; j < ib.size(); ++j) out.discarded_b.push_back(ib[j]);
    return out;
}

inline std::vector<OutcomePair> paired_outcomes(const CoincidencePairing& pairing, std::span<const ClickRecord> clicks_a,
                                                std::span<const ClickRecord> clicks_b) {
    std::vector<OutcomePair> out;
    out.reserve(pairing.matched.size());
    for (const auto& [x, y] : pairing.matched) out.emplace_back(clicks_a[x].outcome, clicks_b[y].outcome);
    return out;
}

/// Sorted pair ids of the A-side clicks that were matched.
inline std::vector<std::uint64_t> matched_pair_ids(const CoincidencePairing& pairing,
                                                   std::span<const ClickRecord> clicks_a) {
    std::vector<std::uint64_t> ids;
    ids.reserve(pairing.matched.size());
    for (const auto& m : pairing.matched) ids.push_back(clicks_a[m.first].pair_id);
    std::sort(ids.begin(), ids.end());
    return ids;
}

/// |x intersect y| / |x union y| of sorted id lists; 1 for two empty lists.
inline double jaccard(std::span<const std::uint64_t> x, std::span<const std::uint64_t> y) {
    if (x.empty() && y.empty()) return 1.0;
    std::vector<std::uint64_t> common;
    std::set_intersection(x.begin(), x.end(), y.begin(), y.end(), std::back_inserter(common));
    const double uni = static_cast<double>(x.size() + y.size() - common.size());
    return static_cast<double>(common.size()) / uni;
}

// ---------------------------------------------------------------------------
// Click CSV: side,pair_id,setting_deg,outcome,time_tag_s

inline constexpr std::string_view kClickCsvHeader = "side,pair_id,setting_deg,outcome,time_tag_s";

inline void write_clicks_csv(std::ostream& os, std::span<const ClickRecord> clicks) {
    os << kClickCsvHeader << '\n';
    std::ostringstream line;
    line.precision(17);
    for (const auto& c : clicks) {
        line.str({});
        line << side_char(c.side) << ',' << c.pair_id << ',' << c.setting_angle * 180.0 / std::numbers::pi << ','
             << c.outcome << ',' << c.time_tag << '\n';
        os << line.str();
    }
}

namespace detail {

template <class T>
T parse_field(std::string_view field, std::size_t line_no) {
    T value{};
    const auto* end = field.data() + field.size();
    const auto res = std::from_chars(field.data(), end, value);
    if (res.ec != std::errc() || res.ptr != end) {
        throw Error(ErrorKind::IoError, "bad click CSV field '" + std::string(field) + "' on line " +
                                            std::to_string(line_no));
    }
    return value;
}

}  // namespace detail

inline std::vector<ClickRecord> read_clicks_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != kClickCsvHeader) {
        throw Error(ErrorKind::IoError, "click CSV must start with header '" + std::string(kClickCsvHeader) + "'");
    }
    std::vector<ClickRecord> clicks;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::array<std::string_view, 5> fields;
        std::string_view rest(line);
        for (std::size_t f = 0; f < 5; ++f) {
            const auto comma = rest.find(',');
            if ((comma == std::string_view::npos) != (f == 4)) {
                throw Error(ErrorKind::IoError, "click CSV line " + std::to_string(line_no) + " needs 5 fields");
            }
            fields[f] = rest.substr(0, comma);
            if (comma != std::string_view::npos) rest.remove_prefix(comma + 1);
        }
        ClickRecord c;
        if (fields[0] == "A") c.side = DetectorSide::A;
        else if (fields[0] == "B") c.side = DetectorSide::B;
        else throw Error(ErrorKind::IoError, "click CSV side must be A or B on line " + std::to_string(line_no));
        c.pair_id = detail::parse_field<std::uint64_t>(fields[1], line_no);
        c.setting_angle = detail::parse_field<double>(fields[2], line_no) * std::numbers::pi / 180.0;
        c.outcome = detail::parse_field<int>(fields[3], line_no);
        if (c.outcome != 1 && c.outcome != -1) {
            throw Error(ErrorKind::IoError, "click outcome must be +-1 on line " + std::to_string(line_no));
        }
        c.time_tag = detail::parse_field<double>(fields[4], line_no);
        clicks.push_back(c);
    }
    return clicks;
}

// ---------------------------------------------------------------------------
// Window sweep

enum class SourceMode {
    PerSetting,  // independent emission stream for each of the four setting pairs
    Shared,      // one emission stream; each wing's randomness keyed by its own setting
};

struct SweepConfig {
    /// Polarization analyzer angles; the defaults maximize the quantum violation.
    ChshSetting settings{0.0, std::numbers::pi / 4, std::numbers::pi / 8, 3 * std::numbers::pi / 8};
    std::size_t n_pairs = 1'000'000;
    std::uint64_t seed = 20070101;
    double jitter_scale = 0.0;
    double spacing = kDefaultSpacing;
    ModelSpec model;
    std::vector<Window> windows{Window::unbounded(), Window::of(1e-6), Window::of(3e-7), Window::of(1e-7),
                                Window::of(3e-8), Window::of(1e-8)};
    SourceMode source_mode = SourceMode::PerSetting;
    bool parallel = false;
    bool record_pair_ids = false;

    void validate() const {
        settings.validate();
        if (n_pairs < 1) throw Error(ErrorKind::ValidationError, "n_pairs must be >= 1");
        if (!(jitter_scale >= 0.0) || !std::isfinite(jitter_scale)) {
            throw Error(ErrorKind::ValidationError, "jitter_scale must be finite and >= 0");
        }
        if (!(spacing > 0.0) || !std::isfinite(spacing)) throw Error(ErrorKind::ValidationError, "spacing must be > 0");
        if (!(model.t0 >= 0.0) || !std::isfinite(model.t0)) throw Error(ErrorKind::ValidationError, "t0 must be >= 0");
        if (!(model.exponent >= 0.0) || !std::isfinite(model.exponent)) {
            throw Error(ErrorKind::ValidationError, "exponent must be >= 0");
        }
        if (windows.empty()) throw Error(ErrorKind::ValidationError, "window list is empty");
    }
};

/// Seed-splitting rule for the sweep. k is the setting-pair index in S order.
///   PerSetting: source = derive(master, 1, k); wing w = derive(master, 2 + w, k)
///   Shared:     source = derive(master, 1, 99); wing w = derive(master, 2 + w, 100 + local)
/// where local is 0 for the unprimed and 1 for the primed setting of that wing.
struct StreamSeeds {
    std::uint64_t source = 0;
    std::uint64_t side_a = 0;
    std::uint64_t side_b = 0;
};

inline StreamSeeds stream_seeds(std::uint64_t master, SourceMode mode, std::size_t k) {
    if (mode == SourceMode::PerSetting) {
        return {derive_seed(master, 1, k), derive_seed(master, 2, k), derive_seed(master, 3, k)};
    }
    const std::uint64_t local_a = k / 2;  // (a,b),(a,b') -> 0; (a',b),(a',b') -> 1
    const std::uint64_t local_b = k % 2;  // (a,b),(a',b) -> 0; (a,b'),(a',b') -> 1
    return {derive_seed(master, 1, 99), derive_seed(master, 2, 100 + local_a), derive_seed(master, 3, 100 + local_b)};
}

struct SettingStreams {
    std::vector<ClickRecord> clicks_a;
    std::vector<ClickRecord> clicks_b;
};

inline SettingStreams simulate_setting(const SweepConfig& cfg, const DelayModel& model, std::size_t k) {
    const auto seeds = stream_seeds(cfg.seed, cfg.source_mode, k);
    const auto [angle_a, angle_b] = cfg.settings.pairs()[k];
    const auto events = simulate_source(cfg.n_pairs, seeds.source, cfg.jitter_scale, cfg.spacing);
    return {detect(events, DetectorSide::A, angle_a, model, seeds.side_a),
            detect(events, DetectorSide::B, angle_b, model, seeds.side_b)};
}

/// Per-window outcome of matching one setting pair.
struct SettingWindowResult {
    std::vector<OutcomePair> outcomes;
    std::size_t n_clicks_a = 0;
    std::vector<std::uint64_t> pair_ids;
};

inline std::vector<SettingWindowResult> analyze_setting(std::span<const ClickRecord> clicks_a,
                                                        std::span<const ClickRecord> clicks_b,
                                                        std::span<const Window> windows) {
    std::vector<SettingWindowResult> out;
    out.reserve(windows.size());
    for (const auto& w : windows) {
        const auto pairing = match_window(clicks_a, clicks_b, w);
        out.push_back({paired_outcomes(pairing, clicks_a, clicks_b), clicks_a.size(),
                       matched_pair_ids(pairing, clicks_a)});
    }
    return out;
}

struct SweepRow {
    Window window = Window::unbounded();
    std::array<double, 4> correlations{};
    double S = 0.0;
    std::optional<double> std_error;
    double matched_fraction = 0.0;
    std::array<std::size_t, 4> matched{};
    /// Jaccard similarity of matched pair ids for (a,b) vs (a,b').
    double jaccard_b_vs_bprime = 1.0;
    /// Filled only when record_pair_ids is set.
    std::array<std::vector<std::uint64_t>, 4> pair_ids;
};

/// Combines per-setting results (index k in S order) into one row per window.
inline std::vector<SweepRow> combine_sweep(std::span<const Window> windows,
                                           const std::array<std::vector<SettingWindowResult>, 4>& per_setting,
                                           bool keep_ids) {
    std::vector<SweepRow> rows;
    for (std::size_t w = 0; w < windows.size(); ++w) {
        SweepRow row;
        row.window = windows[w];
        std::array<std::span<const OutcomePair>, 4> lists;
        double fraction = 0.0;
        for (std::size_t k = 0; k < 4; ++k) {
            const auto& r = per_setting[k][w];
            lists[k] = r.outcomes;
            row.matched[k] = r.outcomes.size();
            fraction += static_cast<double>(r.outcomes.size()) / static_cast<double>(std::max<std::size_t>(r.n_clicks_a, 1));
        }
        const auto est = chsh_from_samples(lists);
        for (std::size_t k = 0; k < 4; ++k) row.correlations[k] = est.correlations[k].value;
        row.S = est.S;
        row.std_error = est.std_error;
        row.matched_fraction = fraction / 4.0;
        row.jaccard_b_vs_bprime = jaccard(per_setting[0][w].pair_ids, per_setting[1][w].pair_ids);
        if (keep_ids) {
            for (std::size_t k = 0; k < 4; ++k) row.pair_ids[k] = per_setting[k][w].pair_ids;
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

/// Optional hook receiving each setting's click streams as they are generated.
using StreamSink = std::function<void(std::size_t k, const SettingStreams&)>;

/// For each of the four setting pairs: simulate once, then match at every
/// window and estimate the correlations from matched clicks only.
inline std::vector<SweepRow> run_window_sweep(const SweepConfig& cfg,
                                              const DelayModelRegistry& registry = DelayModelRegistry::with_builtins(),
                                              const StreamSink& sink = {}) {
    cfg.validate();
    const auto model = registry.create(cfg.model);
    std::array<std::vector<SettingWindowResult>, 4> per_setting;
    const auto work = [&](std::size_t k) {
        const SettingStreams s = simulate_setting(cfg, *model, k);
        if (sink) sink(k, s);
        return analyze_setting(s.clicks_a, s.clicks_b, cfg.windows);
    };
    if (cfg.parallel && !sink) {
        std::array<std::future<std::vector<SettingWindowResult>>, 4> futures;
        for (std::size_t k = 0; k < 4; ++k) futures[k] = std::async(std::launch::async, work, k);
        for (std::size_t k = 0; k < 4; ++k) per_setting[k] = futures[k].get();
    } else {
        for (std::size_t k = 0; k < 4; ++k) per_setting[k] = work(k);
    }
    return combine_sweep(cfg.windows, per_setting, cfg.record_pair_ids);
}

}  // namespace qmeas
