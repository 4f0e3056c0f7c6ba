// viewprop/editing.hpp
//
// Editor abstraction: a handle dispatches edit requests either to built-in
// deterministic mock editors or to an external process speaking a small
// file protocol.
//
// Invocation accounting: every edit() and edit_averaged() call counts as
// exactly one logical invocation; edit_averaged records n_r sub-runs.
// blend_refine is two logical invocations by construction.
//
// External protocol, one fresh work directory per invocation:
//   <dir>/request.json   {instruction, timestep_t, diffusion_steps, S_I,
//                         S_T, n_r, seed, input: "input.png",
//                         condition: "condition.png"}
//   <dir>/input.png      8-bit RGB
//   <dir>/condition.png  8-bit RGB
// The configured command is invoked with <dir> as its single argument and
// must leave <dir>/output.png (same size as the input) and exit 0.
#pragma once

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "viewprop/core.hpp"
#include "viewprop/image.hpp"
#include "viewprop/png_io.hpp"
#include "viewprop/subprocess.hpp"

namespace viewprop {

struct EditorConfig {
    std::string instruction;
    double timestep_t = 0.6;
    int diffusion_steps = 3;
    double image_guidance = 1.5;  // S_I
    double text_guidance = 7.5;   // S_T
    int n_r = 5;                  // averaged runs per logical invocation
    std::uint64_t seed = 0;

    void validate() const {
        if (!(timestep_t >= 0.0 && timestep_t <= 1.0))
            throw std::invalid_argument("editor: timestep_t must be in [0,1]");
        if (diffusion_steps < 1)
            throw std::invalid_argument("editor: diffusion_steps must be >= 1");
        if (n_r < 1) throw std::invalid_argument("editor: n_r must be >= 1");
        if (!(image_guidance > 0.0) || !(text_guidance > 0.0))
            throw std::invalid_argument("editor: guidance scales must be positive");
    }
};

struct EditRequest {
    ImageBuffer input;
    ImageBuffer condition;
    EditorConfig config;

    void validate() const {
        config.validate();
        if (input.empty() || condition.empty())
            throw std::invalid_argument("edit: input and condition must be non-empty");
        if (!input.same_size(condition))
            throw std::invalid_argument("edit: input and condition sizes differ");
    }
};

enum class MockKind {
    Identity,
    HueRotate,
    Grayscale,
    CheckerStamp,
    NoisyStylize,
    MedianDenoise,
};

// One editor instance. Counters are atomic so parallel blend batches can
// share the handle; totals stay deterministic because every code path adds
// a fixed amount per call.
class EditorHandle {
public:
    std::string spec;  // "mock:<name>" or "exec:<command>"
    bool is_mock = true;
    MockKind mock = MockKind::Identity;
    std::string command;
    std::filesystem::path work_root;
    double timeout_sec = 300.0;

    EditorHandle() = default;
    EditorHandle(EditorHandle&& other) noexcept
        : spec(std::move(other.spec)),
          is_mock(other.is_mock),
          mock(other.mock),
          command(std::move(other.command)),
          work_root(std::move(other.work_root)),
          timeout_sec(other.timeout_sec),
          logical_(other.logical_.load()),
          subruns_(other.subruns_.load()),
          work_counter_(other.work_counter_.load()) {}
    EditorHandle& operator=(EditorHandle&& other) noexcept {
        spec = std::move(other.spec);
        is_mock = other.is_mock;
        mock = other.mock;
        command = std::move(other.command);
        work_root = std::move(other.work_root);
        timeout_sec = other.timeout_sec;
        logical_.store(other.logical_.load());
        subruns_.store(other.subruns_.load());
        work_counter_.store(other.work_counter_.load());
        return *this;
    }

    std::uint64_t logical_invocations() const { return logical_.load(); }
    std::uint64_t recorded_subruns() const { return subruns_.load(); }
    void restore_counters(std::uint64_t logical, std::uint64_t subruns) {
        logical_.store(logical);
        subruns_.store(subruns);
        // Every logical invocation consumes at most one work directory, so
        // this keeps external work dirs collision-free across a resume.
        work_counter_.store(logical);
    }
    void count(std::uint64_t subruns) {
        logical_.fetch_add(1);
        subruns_.fetch_add(subruns);
    }
    std::uint64_t next_work_id() { return work_counter_.fetch_add(1); }

private:
    std::atomic<std::uint64_t> logical_{0};
    std::atomic<std::uint64_t> subruns_{0};
    std::atomic<std::uint64_t> work_counter_{0};
};

inline EditorHandle make_editor(const std::string& spec,
                                const std::filesystem::path& work_root = {},
                                double timeout_sec = 300.0) {
    EditorHandle h;
    h.spec = spec;
    h.timeout_sec = timeout_sec;
    if (spec.rfind("mock:", 0) == 0) {
        std::string name = spec.substr(5);
        if (name == "identity")
            h.mock = MockKind::Identity;
        else if (name == "hue-rotate")
            h.mock = MockKind::HueRotate;
        else if (name == "grayscale")
            h.mock = MockKind::Grayscale;
        else if (name == "checker-stamp")
            h.mock = MockKind::CheckerStamp;
        else if (name == "noisy-stylize")
            h.mock = MockKind::NoisyStylize;
        else if (name == "median-denoise")
            h.mock = MockKind::MedianDenoise;
        else
            throw std::invalid_argument("unknown mock editor: " + name);
        h.is_mock = true;
    } else if (spec.rfind("exec:", 0) == 0) {
        h.is_mock = false;
        h.command = spec.substr(5);
        if (h.command.empty()) throw std::invalid_argument("exec editor: empty command");
        h.work_root = work_root.empty()
                          ? std::filesystem::temp_directory_path() / "viewprop_editor"
                          : work_root;
    } else {
        throw std::invalid_argument("editor spec must start with 'mock:' or 'exec:': " + spec);
    }
    return h;
}

// ── mock editors ────────────────────────────────────────────────────────

namespace detail {

inline void rgb_to_hsv(double r, double g, double b, double* h, double* s, double* v) {
    double mx = std::max(r, std::max(g, b));
    double mn = std::min(r, std::min(g, b));
    double delta = mx - mn;
    *v = mx;
    *s = mx > 0.0 ? delta / mx : 0.0;
    if (delta <= 0.0) {
        *h = 0.0;
        return;
    }
    if (mx == r)
        *h = 60.0 * std::fmod((g - b) / delta, 6.0);
    else if (mx == g)
        *h = 60.0 * ((b - r) / delta + 2.0);
    else
        *h = 60.0 * ((r - g) / delta + 4.0);
    if (*h < 0.0) *h += 360.0;
}

inline void hsv_to_rgb(double h, double s, double v, double* r, double* g, double* b) {
    double c = v * s;
    double hp = h / 60.0;
    double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r1 = 0, g1 = 0, b1 = 0;
    if (hp < 1)      { r1 = c; g1 = x; }
    else if (hp < 2) { r1 = x; g1 = c; }
    else if (hp < 3) { g1 = c; b1 = x; }
    else if (hp < 4) { g1 = x; b1 = c; }
    else if (hp < 5) { r1 = x; b1 = c; }
    else             { r1 = c; b1 = x; }
    double m = v - c;
    *r = r1 + m;
    *g = g1 + m;
    *b = b1 + m;
}

// First parseable number in the text, else fallback.
inline double first_number(const std::string& text, double fallback) {
    for (std::size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        if ((c >= '0' && c <= '9') || c == '-' || c == '+' || c == '.') {
            char* end = nullptr;
            double v = std::strtod(text.c_str() + i, &end);
            if (end != text.c_str() + i) return v;
        }
    }
    return fallback;
}

// Classic sepia mix normalized to unit dominant eigenvalue: the remaining
// eigenvalues are near zero, so the map is idempotent in effect and any
// number of stylize passes leaves the tonal structure at full contrast.
// Keeping it a pure per-pixel map is what lets stylizing commute with
// warping, so content stylized before or after projection matches.
inline Eigen::Vector3d sepia(const Eigen::Vector3d& c) {
    constexpr double kScale = 1.0 / 1.20880;  // dominant eigenvalue of the kernel
    return {kScale * (0.393 * c.x() + 0.769 * c.y() + 0.189 * c.z()),
            kScale * (0.349 * c.x() + 0.686 * c.y() + 0.168 * c.z()),
            kScale * (0.272 * c.x() + 0.534 * c.y() + 0.131 * c.z())};
}

}  // namespace detail

// Pure function of the request; the sub-seed is taken from config.seed.
inline ImageBuffer apply_mock(MockKind kind, const EditRequest& req) {
    const ImageBuffer& in = req.input;
    ImageBuffer out = in;
    switch (kind) {
        case MockKind::Identity:
            return out;
        case MockKind::HueRotate: {
            double degrees = detail::first_number(req.config.instruction, 0.0);
            for (int y = 0; y < in.height; ++y)
                for (int x = 0; x < in.width; ++x) {
                    double h, s, v;
                    Eigen::Vector3d c = in.rgb(x, y);
                    detail::rgb_to_hsv(c.x(), c.y(), c.z(), &h, &s, &v);
                    h = std::fmod(h + degrees, 360.0);
                    if (h < 0) h += 360.0;
                    double r, g, b;
                    detail::hsv_to_rgb(h, s, v, &r, &g, &b);
                    out.set_rgb(x, y, {clamp01(r), clamp01(g), clamp01(b)});
                }
            return out;
        }
        case MockKind::Grayscale: {
            for (int y = 0; y < in.height; ++y)
                for (int x = 0; x < in.width; ++x) {
                    Eigen::Vector3d c = in.rgb(x, y);
                    double luma = 0.299 * c.x() + 0.587 * c.y() + 0.114 * c.z();
                    out.set_rgb(x, y, {luma, luma, luma});
                }
            return out;
        }
        case MockKind::CheckerStamp: {
            // Structure-adding overlay: 8-px checker blended at half weight.
            constexpr int kPeriod = 8;
            for (int y = 0; y < in.height; ++y)
                for (int x = 0; x < in.width; ++x) {
                    double tile = ((x / kPeriod + y / kPeriod) % 2 == 0) ? 1.0 : 0.0;
                    Eigen::Vector3d c = in.rgb(x, y);
                    out.set_rgb(x, y, 0.5 * c + 0.5 * Eigen::Vector3d(tile, tile, tile));
                }
            return out;
        }
        case MockKind::NoisyStylize: {
            // Stylize plus zero-mean noise seeded by config.seed; the
            // expected value over seeds is the pure stylize. Each run lands
            // on a differently graded result, so the noise is spatially
            // coherent: a global color shift plus a coarse grade field that
            // varies smoothly across the canvas. Every sampling step injects
            // fresh noise and the perturbations compound, so amplitude grows
            // quadratically with both the timestep and the step count;
            // low-timestep few-step refinement passes perturb far less than
            // full edits.
            double steps_frac = static_cast<double>(req.config.diffusion_steps) / 10.0;
            double amp = 0.12 * req.config.timestep_t * req.config.timestep_t * steps_frac *
                         steps_frac;
            std::uint64_t seed = req.config.seed;
            // The global shift is drawn in the plane the tone map
            // annihilates, so a later stylize pass strips any shift inherited
            // through its input instead of compounding it; only noise added
            // by that pass itself survives into its output.
            const Eigen::Vector3d kGradeU{0.890456, -0.455071, 0.0};
            const Eigen::Vector3d kGradeV{0.097290, 0.190371, -0.976879};
            double ga = amp * (2.0 * uniform01(derive_seed(seed, "noisy-global", 0)) - 1.0);
            double gb = amp * (2.0 * uniform01(derive_seed(seed, "noisy-global", 1)) - 1.0);
            Eigen::Vector3d shift = ga * kGradeU + gb * kGradeV;
            // Grade field: a kGrid-square lattice of node offsets upsampled
            // bilinearly. Smooth by construction, so content carried between
            // views by warping keeps its field aligned, while fields of
            // independently edited views decorrelate.
            constexpr int kGrid = 4;
            double nodes[kGrid * kGrid][3];
            double amp_field = 0.2 * amp;
            for (int j = 0; j < kGrid * kGrid; ++j)
                for (int c = 0; c < 3; ++c)
                    nodes[j][c] =
                        amp_field *
                        (2.0 * uniform01(derive_seed(
                                   seed, "noisy-field",
                                   static_cast<std::uint64_t>(j) * 3 + static_cast<std::uint64_t>(c))) -
                         1.0);
            auto field_at = [&](int x, int y, int c) {
                double fx = in.width > 1
                                ? static_cast<double>(x) / (in.width - 1) * (kGrid - 1)
                                : 0.0;
                double fy = in.height > 1
                                ? static_cast<double>(y) / (in.height - 1) * (kGrid - 1)
                                : 0.0;
                int x0 = std::min(static_cast<int>(fx), kGrid - 2);
                int y0 = std::min(static_cast<int>(fy), kGrid - 2);
                double ax = fx - x0;
                double ay = fy - y0;
                double n00 = nodes[y0 * kGrid + x0][c];
                double n10 = nodes[y0 * kGrid + x0 + 1][c];
                double n01 = nodes[(y0 + 1) * kGrid + x0][c];
                double n11 = nodes[(y0 + 1) * kGrid + x0 + 1][c];
                return n00 * (1 - ax) * (1 - ay) + n10 * ax * (1 - ay) + n01 * (1 - ax) * ay +
                       n11 * ax * ay;
            };
            for (int y = 0; y < in.height; ++y)
                for (int x = 0; x < in.width; ++x) {
                    Eigen::Vector3d base = detail::sepia(in.rgb(x, y));
                    Eigen::Vector3d noisy;
                    for (int c = 0; c < 3; ++c)
                        noisy[c] = clamp01(base[c] + field_at(x, y, c) + shift[c]);
                    out.set_rgb(x, y, noisy);
                }
            return out;
        }
        case MockKind::MedianDenoise: {
            for (int y = 0; y < in.height; ++y)
                for (int x = 0; x < in.width; ++x)
                    for (int c = 0; c < 3; ++c) {
                        double window[9];
                        int n = 0;
                        for (int dy = -1; dy <= 1; ++dy)
                            for (int dx = -1; dx <= 1; ++dx) {
                                int sx = std::clamp(x + dx, 0, in.width - 1);
                                int sy = std::clamp(y + dy, 0, in.height - 1);
                                window[n++] = in.at(sx, sy, c);
                            }
                        std::nth_element(window, window + 4, window + 9);
                        out.at(x, y, c) = window[4];
                    }
            return out;
        }
    }
    throw std::invalid_argument("apply_mock: unhandled kind");
}

// ── external protocol ───────────────────────────────────────────────────

namespace detail {

inline std::string file_tail(const std::filesystem::path& path, std::size_t max_bytes = 2000) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return "(no diagnostics captured)";
    std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (all.size() > max_bytes) all = all.substr(all.size() - max_bytes);
    return all;
}

inline ImageBuffer run_external_edit(EditorHandle& handle, const EditRequest& req,
                                     int protocol_n_r) {
    char dirname[32];
    std::snprintf(dirname, sizeof(dirname), "invoke_%06llu",
                  static_cast<unsigned long long>(handle.next_work_id()));
    std::filesystem::path dir = handle.work_root / dirname;
    std::filesystem::create_directories(dir);

    write_png_rgb8(dir / "input.png", req.input);
    write_png_rgb8(dir / "condition.png", req.condition);

    nlohmann::ordered_json request;
    request["instruction"] = req.config.instruction;
    request["timestep_t"] = req.config.timestep_t;
    request["diffusion_steps"] = req.config.diffusion_steps;
    request["S_I"] = req.config.image_guidance;
    request["S_T"] = req.config.text_guidance;
    request["n_r"] = protocol_n_r;
    request["seed"] = req.config.seed;
    request["input"] = "input.png";
    request["condition"] = "condition.png";
    {
        std::ofstream out(dir / "request.json", std::ios::binary);
        if (!out) throw EditorError("cannot write editor request: " + dir.string());
        out << request.dump(2) << "\n";
    }

    std::filesystem::path log = dir / "editor_log.txt";
    std::string cmd = handle.command + " " + shell_quote(dir.string()) + " > " +
                      shell_quote(log.string()) + " 2>&1";
    CommandResult run = run_command(cmd, handle.timeout_sec);
    if (run.timed_out)
        throw EditorError("external editor timed out after " +
                          std::to_string(handle.timeout_sec) + "s in " + dir.string());
    if (run.exit_code != 0)
        throw EditorError("external editor exited with code " + std::to_string(run.exit_code) +
                          " in " + dir.string() + "\n--- log tail ---\n" + file_tail(log));

    std::filesystem::path output = dir / "output.png";
    if (!std::filesystem::exists(output))
        throw EditorError("external editor produced no output.png in " + dir.string() +
                          "\n--- log tail ---\n" + file_tail(log));
    ImageBuffer result = read_png_rgb8(output);
    if (!result.same_size(req.input))
        throw EditorError("external editor output size mismatch in " + dir.string());
    return result;
}

}  // namespace detail

// ── operations ──────────────────────────────────────────────────────────

// One edit, one logical invocation. External editors receive n_r = 1: a
// plain edit means a single sample.
inline ImageBuffer edit(EditorHandle& handle, const EditRequest& req) {
    req.validate();
    handle.count(1);
    if (handle.is_mock) return apply_mock(handle.mock, req);
    return detail::run_external_edit(handle, req, 1);
}

// n_r-way averaged edit, still one logical invocation with n_r recorded
// sub-runs. Mock sub-runs use seeds seed+0 .. seed+n_r-1; an external
// editor receives n_r in the request and averages internally.
inline ImageBuffer edit_averaged(EditorHandle& handle, const EditRequest& req) {
    req.validate();
    handle.count(static_cast<std::uint64_t>(req.config.n_r));
    if (!handle.is_mock) return detail::run_external_edit(handle, req, req.config.n_r);

    ImageBuffer acc(req.input.width, req.input.height, 0.0);
    EditRequest sub = req;
    for (int i = 0; i < req.config.n_r; ++i) {
        sub.config.seed = req.config.seed + static_cast<std::uint64_t>(i);
        ImageBuffer one = apply_mock(handle.mock, sub);
        for (std::size_t k = 0; k < acc.data.size(); ++k) acc.data[k] += one.data[k];
    }
    double inv = 1.0 / static_cast<double>(req.config.n_r);
    for (double& v : acc.data) v *= inv;
    return acc;
}

// Two-pass blending refinement. Pass 1 re-edits the projection mixup
// conditioned on the original view; pass 2 re-edits that result
// conditioned on the mixup. Exactly two logical invocations; each pass
// draws fresh sub-seeds (pass 2 offsets by n_r).
inline ImageBuffer blend_refine(EditorHandle& handle, const ImageBuffer& original,
                                const ImageBuffer& mixup, const EditorConfig& config) {
    EditRequest pass1;
    pass1.input = mixup;
    pass1.condition = original;
    pass1.config = config;
    ImageBuffer mid = edit_averaged(handle, pass1);

    EditRequest pass2;
    pass2.input = std::move(mid);
    pass2.condition = mixup;
    pass2.config = config;
    pass2.config.seed = config.seed + static_cast<std::uint64_t>(config.n_r);
    return edit_averaged(handle, pass2);
}

// Final per-view polish: one averaged edit of the blended stand-in image,
// conditioned on the view's projection mixup. Exactly one logical
// invocation.
inline ImageBuffer post_refine(EditorHandle& handle, const ImageBuffer& render_standin,
                               const ImageBuffer& mixup, const EditorConfig& config) {
    EditRequest req;
    req.input = render_standin;
    req.condition = mixup;
    req.config = config;
    return edit_averaged(handle, req);
}

}  // namespace viewprop
