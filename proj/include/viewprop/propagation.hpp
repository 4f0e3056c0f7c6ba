// viewprop/propagation.hpp
//
// Key-view selection and edit propagation. A run keeps a per-view modified
// mask; pixels are written at most once by projection mixup ("write once"),
// so earlier key views always win overlaps. The modified ratio rho drives
// key-view selection through a tent-shaped weight peaking at phi: views
// that are partially modified (near phi) carry the most propagation signal,
// fully fresh or nearly saturated views the least.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "viewprop/core.hpp"
#include "viewprop/editing.hpp"
#include "viewprop/geometry.hpp"
#include "viewprop/scene.hpp"

namespace viewprop {

struct PropagationConfig {
    double phi = 0.3;          // weight peak over the modified ratio
    double stop_ratio = 0.95;  // minimum rho for every view at termination
    double lambda = 0.5;       // warm-up blend weight toward the current image
    int warmup_iterations = 10;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(phi > 0.0 && phi <= 1.0))
            throw std::invalid_argument("propagation: phi must be in (0,1]");
        if (!(stop_ratio > 0.0 && stop_ratio <= 1.0))
            throw std::invalid_argument("propagation: stop_ratio must be in (0,1]");
        if (!(lambda >= 0.0 && lambda <= 1.0))
            throw std::invalid_argument("propagation: lambda must be in [0,1]");
        if (warmup_iterations < 0)
            throw std::invalid_argument("propagation: warmup_iterations must be >= 0");
    }
};

// Mutable run state. Masks live on the ViewRecords; this tracks the derived
// ratios, the key-view order, and the termination flag.
struct PropagationState {
    std::vector<double> rho;    // aligned with the view array
    std::vector<int> key_views; // indices into the view array, selection order
    bool finished = false;
};

inline double modified_ratio(const ViewRecord& view) {
    std::size_t total = view.modified.bits.size();
    if (total == 0) return 0.0;
    return static_cast<double>(view.modified.count()) / static_cast<double>(total);
}

inline PropagationState init_propagation(std::vector<ViewRecord>& views) {
    PropagationState state;
    state.rho.assign(views.size(), 0.0);
    for (auto& v : views) v.modified.set_all(false);
    return state;
}

// Tent weight: rho below phi is worth rho, above phi it decays as
// 2*phi - rho. Maximum at rho == phi.
inline double key_view_weight(double rho, double phi) {
    if (!(rho >= 0.0 && rho <= 1.0))
        throw std::invalid_argument("key_view_weight: rho must be in [0,1]");
    if (!(phi > 0.0 && phi <= 1.0))
        throw std::invalid_argument("key_view_weight: phi must be in (0,1]");
    return rho < phi ? rho : 2.0 * phi - rho;
}

// Next key view, or nullopt when the run is finished. Termination is
// either every rho reaching stop_ratio or key-view exhaustion (the progress
// guard: each view is selected at most once, so the loop is bounded).
// The first key view of a fresh run is drawn uniformly from all views with
// config.seed; later picks take the non-key view with maximal weight, ties
// to the lowest view id.
inline std::optional<int> select_next_key_view(const std::vector<ViewRecord>& views,
                                               PropagationState& state,
                                               const PropagationConfig& config) {
    config.validate();
    if (views.empty() || state.rho.size() != views.size())
        throw std::invalid_argument("select_next_key_view: state does not match views");

    double min_rho = *std::min_element(state.rho.begin(), state.rho.end());
    if (min_rho >= config.stop_ratio) {
        state.finished = true;
        return std::nullopt;
    }

    if (state.key_views.empty()) {
        int first = static_cast<int>(derive_seed(config.seed, "first_key", 0) % views.size());
        return first;
    }

    int best = -1;
    double best_weight = 0.0;
    for (int i = 0; i < static_cast<int>(views.size()); ++i) {
        if (std::find(state.key_views.begin(), state.key_views.end(), i) != state.key_views.end())
            continue;
        double w = key_view_weight(state.rho[static_cast<std::size_t>(i)], config.phi);
        if (best < 0 || w > best_weight ||
            (w == best_weight && views[static_cast<std::size_t>(i)].id < views[static_cast<std::size_t>(best)].id)) {
            best = i;
            best_weight = w;
        }
    }
    if (best < 0) {
        // All views became key views without reaching stop_ratio.
        state.finished = true;
        log_info("key-view selection exhausted before stop_ratio; stopping with partial coverage");
        return std::nullopt;
    }
    return best;
}

// Projects the (fully modified) edited source into the target and writes
// only pixels the target has never received: write-once mixup. Returns the
// number of pixels written. rho is updated exactly; masks only ever grow.
inline std::size_t apply_projection_mixup(std::vector<ViewRecord>& views, int target_index,
                                          int source_index, PropagationState& state,
                                          const FilterPolicy& policy = {}) {
    if (target_index < 0 || target_index >= static_cast<int>(views.size()) ||
        source_index < 0 || source_index >= static_cast<int>(views.size()))
        throw std::invalid_argument("apply_projection_mixup: view index out of range");
    ViewRecord& target = views[static_cast<std::size_t>(target_index)];
    const ViewRecord& source = views[static_cast<std::size_t>(source_index)];
    if (source.modified.count() != source.modified.bits.size())
        throw std::invalid_argument(
            "apply_projection_mixup: source must be a fully modified key view");

    CorrespondenceMap corr = build_correspondences(target, source, policy);
    TransferResult transfer = transfer_colors(corr, source.image);

    std::size_t written = 0;
    for (int y = 0; y < target.intrinsics.height; ++y)
        for (int x = 0; x < target.intrinsics.width; ++x) {
            if (!transfer.mask.at(x, y) || target.modified.at(x, y)) continue;
            target.image.set_rgb(x, y, transfer.image.rgb(x, y));
            target.modified.set(x, y, true);
            ++written;
        }
    state.rho[static_cast<std::size_t>(target_index)] = modified_ratio(target);
    return written;
}

// Warm-up blend of an edited source view into a target (the edited view
// itself is left alone by run_warmup). Inside the warp-validity mask m_w:
//   I' = lambda * I + (1 - lambda) * I_transferred
// Outside m_w the image is untouched. Modified masks are never touched:
// warm-up precedes the write-once bookkeeping.
inline void warmup_blend(ViewRecord& target, const ViewRecord& edited_source,
                         const ImageBuffer& edited_image, double lambda,
                         const FilterPolicy& policy = {}) {
    if (!(lambda >= 0.0 && lambda <= 1.0))
        throw std::invalid_argument("warmup_blend: lambda must be in [0,1]");
    CorrespondenceMap corr = build_correspondences(target, edited_source, policy);
    TransferResult transfer = transfer_colors(corr, edited_image);
    for (int y = 0; y < target.intrinsics.height; ++y)
        for (int x = 0; x < target.intrinsics.width; ++x) {
            if (!transfer.mask.at(x, y)) continue;
            Eigen::Vector3d blended =
                lambda * target.image.rgb(x, y) + (1.0 - lambda) * transfer.image.rgb(x, y);
            target.image.set_rgb(x, y, blended);
        }
}

// Editing parameters for key-view and warm-up edits: the timestep is drawn
// per edit from [t_min, t_max].
struct KeyEditParams {
    double t_min = 0.5;
    double t_max = 0.9;
    int diffusion_steps = 10;

    void validate() const {
        if (!(t_min >= 0.0 && t_min <= t_max && t_max <= 1.0))
            throw std::invalid_argument("key edit: need 0 <= t_min <= t_max <= 1");
        if (diffusion_steps < 1)
            throw std::invalid_argument("key edit: diffusion_steps must be >= 1");
    }
};

// Distribution warm-up: repeatedly edit a seeded-random view and blend the
// result into every other view. Runs before any mixup; touches images only,
// never modified masks. Counts warmup_iterations logical invocations.
inline void run_warmup(std::vector<ViewRecord>& views,
                       const std::vector<ImageBuffer>& originals, EditorHandle& editor,
                       const EditorConfig& editor_config, const KeyEditParams& key_params,
                       const PropagationConfig& config, const FilterPolicy& policy = {},
                       int start_iteration = 0) {
    config.validate();
    key_params.validate();
    if (originals.size() != views.size())
        throw std::invalid_argument("run_warmup: originals do not match views");

    int n = static_cast<int>(views.size());
    for (int it = start_iteration; it < config.warmup_iterations; ++it) {
        int j = static_cast<int>(derive_seed(config.seed, "warmup_view", static_cast<std::uint64_t>(it)) % n);
        double u = uniform01(derive_seed(config.seed, "warmup_t", static_cast<std::uint64_t>(it)));
        EditRequest req;
        req.input = views[static_cast<std::size_t>(j)].image;
        req.condition = originals[static_cast<std::size_t>(j)];
        req.config = editor_config;
        req.config.timestep_t = key_params.t_min + (key_params.t_max - key_params.t_min) * u;
        req.config.diffusion_steps = key_params.diffusion_steps;
        req.config.seed = derive_seed(config.seed, "warmup_seed", static_cast<std::uint64_t>(it));
        ImageBuffer edited = edit(editor, req);

        for (int i = 0; i < n; ++i) {
            if (i == j) continue;
            warmup_blend(views[static_cast<std::size_t>(i)], views[static_cast<std::size_t>(j)],
                         edited, config.lambda, policy);
        }
    }
}

}  // namespace viewprop
